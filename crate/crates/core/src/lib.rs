pub mod bcd;
pub mod channel;
pub mod harness;
pub mod maxdet;
pub mod numerics;
pub mod rng;
pub mod system;
pub mod waterfill;
