//! Interference-plus-noise covariances and secrecy rates.
//!
//! Covariances are built as affine expressions in the transmit covariance
//! blocks ([`AffineCov`]); evaluating an expression at a design gives the
//! numeric matrix, and the optimizer lowers the same expression into a
//! log-det problem. One model serves both systems: the one-way system is the
//! two-way system with Alice's jamming and Bob's information blocks at zero.

use thiserror::Error;

use crate::channel::{ChannelRealization, LinkMode, ParamError, SystemParams};
use crate::maxdet::{AffineMap, MapOp};
use crate::numerics::{CMatrix, HermitianMatrix, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} is not positive definite")]
    NonPositiveDefinite(String),
    #[error(transparent)]
    Params(#[from] ParamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Alice,
    Bob,
}

impl Node {
    pub fn other(self) -> Node {
        match self {
            Node::Alice => Node::Bob,
            Node::Bob => Node::Alice,
        }
    }
}

/// One family of per-subcarrier transmit covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Block {
    AliceInfo,
    AliceJam,
    BobInfo,
    BobJam,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::AliceInfo, Block::AliceJam, Block::BobInfo, Block::BobJam];

    pub fn node(self) -> Node {
        match self {
            Block::AliceInfo | Block::AliceJam => Node::Alice,
            Block::BobInfo | Block::BobJam => Node::Bob,
        }
    }

    pub fn info(node: Node) -> Block {
        match node {
            Node::Alice => Block::AliceInfo,
            Node::Bob => Block::BobInfo,
        }
    }

    pub fn jam(node: Node) -> Block {
        match node {
            Node::Alice => Block::AliceJam,
            Node::Bob => Block::BobJam,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::AliceInfo => "X_a",
            Block::AliceJam => "W_a",
            Block::BobInfo => "X_b",
            Block::BobJam => "W_b",
        }
    }
}

/// Transmit covariances of both nodes on every subcarrier. In the one-way
/// system `X` is [`Block::AliceInfo`] and `W` is [`Block::BobJam`]; the other
/// two blocks stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitDesign {
    pub alice_info: Vec<HermitianMatrix>,
    pub alice_jam: Vec<HermitianMatrix>,
    pub bob_info: Vec<HermitianMatrix>,
    pub bob_jam: Vec<HermitianMatrix>,
}

impl TransmitDesign {
    pub fn zeros(params: &SystemParams) -> Self {
        let n = params.n_sub;
        let ma = params.alice_tx();
        Self {
            alice_info: vec![HermitianMatrix::zeros(ma); n],
            alice_jam: vec![HermitianMatrix::zeros(ma); n],
            bob_info: vec![HermitianMatrix::zeros(params.m_bt); n],
            bob_jam: vec![HermitianMatrix::zeros(params.m_bt); n],
        }
    }

    /// One-way design from information covariances `x` and jamming
    /// covariances `w`.
    pub fn one_way(x: Vec<HermitianMatrix>, w: Vec<HermitianMatrix>) -> Self {
        let alice_jam = x.iter().map(|m| HermitianMatrix::zeros(m.dim())).collect();
        let bob_info = w.iter().map(|m| HermitianMatrix::zeros(m.dim())).collect();
        Self { alice_info: x, alice_jam, bob_info, bob_jam: w }
    }

    pub fn x(&self) -> &[HermitianMatrix] {
        &self.alice_info
    }

    pub fn w(&self) -> &[HermitianMatrix] {
        &self.bob_jam
    }

    pub fn block(&self, b: Block) -> &[HermitianMatrix] {
        match b {
            Block::AliceInfo => &self.alice_info,
            Block::AliceJam => &self.alice_jam,
            Block::BobInfo => &self.bob_info,
            Block::BobJam => &self.bob_jam,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Vec<HermitianMatrix> {
        match b {
            Block::AliceInfo => &mut self.alice_info,
            Block::AliceJam => &mut self.alice_jam,
            Block::BobInfo => &mut self.bob_info,
            Block::BobJam => &mut self.bob_jam,
        }
    }

    /// Total power of a block over all subcarriers.
    pub fn power(&self, b: Block) -> f64 {
        self.block(b).iter().map(HermitianMatrix::trace).sum()
    }

    pub fn n_sub(&self) -> usize {
        self.alice_info.len()
    }

    /// Every covariance scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let f = |v: &Vec<HermitianMatrix>| v.iter().map(|m| m.scale(s)).collect();
        Self {
            alice_info: f(&self.alice_info),
            alice_jam: f(&self.alice_jam),
            bob_info: f(&self.bob_info),
            bob_jam: f(&self.bob_jam),
        }
    }

    /// Checks sizes, the PSD property (`min eig >= -1e-9`) and the power
    /// budgets of the active mode within `tol`.
    pub fn validate(&self, params: &SystemParams, tol: f64) -> Result<(), SystemError> {
        let n = params.n_sub;
        let ma = params.alice_tx();
        for b in Block::ALL {
            let dim = if b.node() == Node::Alice { ma } else { params.m_bt };
            let covs = self.block(b);
            if covs.len() != n {
                return Err(SystemError::DimensionMismatch(format!(
                    "{} has {} subcarriers, expected {n}",
                    b.name(),
                    covs.len()
                )));
            }
            for (k, m) in covs.iter().enumerate() {
                if m.dim() != dim {
                    return Err(SystemError::DimensionMismatch(format!(
                        "{}[{k}] is {}x{0}, expected {dim}",
                        b.name(),
                        m.dim()
                    )));
                }
                if !m.is_psd(1e-9) {
                    return Err(SystemError::NonPositiveDefinite(format!("{}[{k}]", b.name())));
                }
            }
        }
        for (blocks, budget, name) in budget_groups(params) {
            let used: f64 = blocks.iter().map(|&b| self.power(b)).sum();
            if used > budget + tol {
                return Err(SystemError::DimensionMismatch(format!("{name} budget exceeded: {used} > {budget}")));
            }
        }
        Ok(())
    }

    /// Rank-`d` precoders `V^(n)` with `V V^H` approximating the
    /// information covariance of `node` on each subcarrier.
    pub fn precoders(&self, node: Node, d: usize) -> Vec<CMatrix> {
        self.block(Block::info(node)).iter().map(|x| x.precoder(d)).collect()
    }
}

/// Power constraints of the active mode: groups of blocks sharing a budget.
pub fn budget_groups(params: &SystemParams) -> Vec<(Vec<Block>, f64, &'static str)> {
    match params.mode {
        LinkMode::OneWay => vec![
            (vec![Block::AliceInfo], params.x_max, "X_max"),
            (vec![Block::BobJam], params.w_max, "W_max"),
            (vec![Block::AliceJam, Block::BobInfo], 0.0, "inactive"),
        ],
        LinkMode::TwoWay => vec![
            (vec![Block::AliceInfo, Block::AliceJam], params.p_a_max, "P_A_max"),
            (vec![Block::BobInfo, Block::BobJam], params.p_b_max, "P_B_max"),
        ],
    }
}

/// An affine matrix expression in the design blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCov {
    pub constant: HermitianMatrix,
    pub parts: Vec<((Block, usize), MapOp)>,
}

impl AffineCov {
    fn new(constant: HermitianMatrix) -> Self {
        Self { constant, parts: Vec::new() }
    }

    fn push(&mut self, block: Block, m: usize, op: MapOp) {
        if !op.is_zero() {
            self.parts.push(((block, m), op));
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    pub fn evaluate(&self, design: &TransmitDesign) -> HermitianMatrix {
        let mut acc = self.constant.clone();
        for ((block, m), op) in &self.parts {
            acc.add_assign(&op.apply(&design.block(*block)[*m]));
        }
        HermitianMatrix::symmetrize(acc.into_matrix())
    }

    /// Lowers to a log-det map. `var_of` names the solver variable of a
    /// free block entry; entries without a variable are read from `design`
    /// and folded into the constant.
    pub fn lower(&self, design: &TransmitDesign, var_of: impl Fn(Block, usize) -> Option<usize>) -> AffineMap {
        let mut constant = self.constant.clone();
        let mut parts = Vec::new();
        for ((block, m), op) in &self.parts {
            match var_of(*block, *m) {
                Some(var) => parts.push((var, op.clone())),
                None => constant.add_assign(&op.apply(&design.block(*block)[*m])),
            }
        }
        AffineMap { constant, parts }
    }

    /// `self + other`; the constants must have the same size.
    pub fn plus(mut self, other: &AffineCov) -> Self {
        self.constant.add_assign(&other.constant);
        self.parts.extend(other.parts.iter().cloned());
        self
    }
}

struct NodeView<'a> {
    noise: &'a [f64],
    kappa: &'a [f64],
    beta: &'a [f64],
    csi_corr: &'a [HermitianMatrix],
    rx: usize,
}

fn node_view(params: &SystemParams, node: Node) -> NodeView<'_> {
    match node {
        Node::Alice => NodeView {
            noise: &params.noise_a,
            kappa: &params.alice.kappa,
            beta: &params.alice.beta,
            csi_corr: &params.alice.csi_corr,
            rx: params.m_ar,
        },
        Node::Bob => NodeView {
            noise: &params.noise_b,
            kappa: &params.bob.kappa,
            beta: &params.bob.beta,
            csi_corr: &params.bob.csi_corr,
            rx: params.m_br,
        },
    }
}

fn missing(link: &str) -> SystemError {
    SystemError::DimensionMismatch(format!("channel realization has no {link} link"))
}

fn self_channel(ch: &ChannelRealization, node: Node, m: usize) -> Result<&CMatrix, SystemError> {
    match node {
        Node::Bob => Ok(&ch.sub(m).h_bb),
        Node::Alice => ch.sub(m).h_aa.as_ref().ok_or_else(|| missing("Alice-Alice")),
    }
}

/// Channel from the other node into `node`'s receiver.
fn incoming_channel(ch: &ChannelRealization, node: Node, n: usize) -> Result<&CMatrix, SystemError> {
    match node {
        Node::Bob => Ok(&ch.sub(n).h_ab),
        Node::Alice => ch.sub(n).h_ba.as_ref().ok_or_else(|| missing("Bob-Alice")),
    }
}

fn eve_channel(ch: &ChannelRealization, node: Node, n: usize) -> &CMatrix {
    match node {
        Node::Alice => &ch.sub(n).h_ae,
        Node::Bob => &ch.sub(n).h_be,
    }
}

fn check_channels(params: &SystemParams, ch: &ChannelRealization) -> Result<(), SystemError> {
    if ch.n_sub() != params.n_sub {
        return Err(SystemError::DimensionMismatch(format!(
            "realization has {} subcarriers, parameters {}",
            ch.n_sub(),
            params.n_sub
        )));
    }
    let ma = params.alice_tx();
    for s in &ch.subcarriers {
        let expect = [
            ("H_ab", s.h_ab.shape(), (params.m_br, ma)),
            ("H_ae", s.h_ae.shape(), (params.m_e, ma)),
            ("H_bb", s.h_bb.shape(), (params.m_br, params.m_bt)),
            ("H_be", s.h_be.shape(), (params.m_e, params.m_bt)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(SystemError::DimensionMismatch(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if params.mode == LinkMode::TwoWay {
            let ba = s.h_ba.as_ref().ok_or_else(|| missing("Bob-Alice"))?;
            let aa = s.h_aa.as_ref().ok_or_else(|| missing("Alice-Alice"))?;
            if ba.shape() != (params.m_ar, params.m_bt) || aa.shape() != (params.m_ar, params.m_at) {
                return Err(SystemError::DimensionMismatch("two-way channel sizes do not match the parameters".into()));
            }
        }
    }
    Ok(())
}

/// Noise-plus-residual-interference covariance at `node`'s receiver on
/// subcarrier `n`:
///
/// ```text
/// N I + H_in W_other H_in^H + tr(U^(n)) D D^H
///     + H_self^(n) (kappa^(n) sum_m diag(U^(m))) H_self^(n)^H
///     + beta^(n) diag(sum_m H_self^(m) U^(m) H_self^(m)^H)
/// ```
///
/// with `U = X + W` the node's own total transmit covariance. The distortion
/// sums run over every subcarrier `m`, scaled by the coefficients of the
/// target subcarrier `n`.
pub fn sigma_node_expr(
    params: &SystemParams,
    ch: &ChannelRealization,
    node: Node,
    n: usize,
) -> Result<AffineCov, SystemError> {
    let v = node_view(params, node);
    let mut cov = AffineCov::new(HermitianMatrix::scaled_identity(v.rx, v.noise[n]));
    if params.mode == LinkMode::TwoWay {
        let h_in = incoming_channel(ch, node, n)?;
        cov.push(Block::jam(node.other()), n, MapOp::congruence(h_in.clone()));
    }
    let own = [Block::info(node), Block::jam(node)];
    for &b in &own {
        cov.push(b, n, MapOp::TraceTimes { d: v.csi_corr[n].clone() });
    }
    let h_self_n = self_channel(ch, node, n)?;
    for m in 0..params.n_sub {
        let h_self_m = self_channel(ch, node, m)?;
        for &b in &own {
            cov.push(b, m, MapOp::DiagCongruence { b: h_self_n.clone(), scale: v.kappa[n] });
            cov.push(b, m, MapOp::CongruenceDiag { a: h_self_m.clone(), scale: v.beta[n] });
        }
    }
    Ok(cov)
}

/// Eve's noise-plus-jamming covariance on subcarrier `n`.
pub fn sigma_eve_expr(params: &SystemParams, ch: &ChannelRealization, n: usize) -> AffineCov {
    let mut cov = AffineCov::new(HermitianMatrix::scaled_identity(params.m_e, params.noise_e[n]));
    cov.push(Block::AliceJam, n, MapOp::congruence(ch.sub(n).h_ae.clone()));
    cov.push(Block::BobJam, n, MapOp::congruence(ch.sub(n).h_be.clone()));
    cov
}

/// Information leakage term `H X H^H` of `tx`'s signal at its legitimate
/// receiver (`to_eve == false`) or at Eve.
pub fn signal_expr(
    params: &SystemParams,
    ch: &ChannelRealization,
    tx: Node,
    to_eve: bool,
    n: usize,
) -> Result<AffineCov, SystemError> {
    let (h, dim) = if to_eve {
        (eve_channel(ch, tx, n), params.m_e)
    } else {
        let rx = tx.other();
        (incoming_channel(ch, rx, n)?, node_view(params, rx).rx)
    };
    let mut cov = AffineCov::new(HermitianMatrix::zeros(dim));
    cov.push(Block::info(tx), n, MapOp::congruence(h.clone()));
    Ok(cov)
}

/// One information flow: `tx` sends to the other node while Eve listens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Direction {
    pub tx: Node,
}

impl Direction {
    pub fn rx(self) -> Node {
        self.tx.other()
    }
}

pub fn directions(params: &SystemParams) -> Vec<Direction> {
    match params.mode {
        LinkMode::OneWay => vec![Direction { tx: Node::Alice }],
        LinkMode::TwoWay => vec![Direction { tx: Node::Alice }, Direction { tx: Node::Bob }],
    }
}

/// Covariance at Bob for the design (Alice's jamming included in two-way
/// mode).
pub fn sigma_bob(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
    n: usize,
) -> Result<HermitianMatrix, SystemError> {
    check_shapes(params, ch, design)?;
    Ok(sigma_node_expr(params, ch, Node::Bob, n)?.evaluate(design))
}

pub fn sigma_eve(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
    n: usize,
) -> Result<HermitianMatrix, SystemError> {
    check_shapes(params, ch, design)?;
    Ok(sigma_eve_expr(params, ch, n).evaluate(design))
}

pub fn sigma_node_bidirectional(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
    node: Node,
    n: usize,
) -> Result<HermitianMatrix, SystemError> {
    check_shapes(params, ch, design)?;
    Ok(sigma_node_expr(params, ch, node, n)?.evaluate(design))
}

fn check_shapes(params: &SystemParams, ch: &ChannelRealization, design: &TransmitDesign) -> Result<(), SystemError> {
    check_channels(params, ch)?;
    let ma = params.alice_tx();
    for b in Block::ALL {
        let dim = if b.node() == Node::Alice { ma } else { params.m_bt };
        let covs = design.block(b);
        if covs.len() != params.n_sub || covs.iter().any(|m| m.dim() != dim) {
            return Err(SystemError::DimensionMismatch(format!("design block {} has the wrong shape", b.name())));
        }
    }
    Ok(())
}

/// Rates of one subcarrier in bits/s/Hz. The reverse-direction fields are
/// zero in the one-way system.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubcarrierRates {
    pub i_ab: f64,
    pub i_ae: f64,
    pub i_ba: f64,
    pub i_be: f64,
    /// Sum over directions of the clamped differences.
    pub i_sec: f64,
}

impl SubcarrierRates {
    /// Unclamped secrecy of the forward and reverse directions.
    pub fn raw_differences(&self) -> (f64, f64) {
        (self.i_ab - self.i_ae, self.i_ba - self.i_be)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecrecyReport {
    pub per_subcarrier: Vec<SubcarrierRates>,
    pub i_sum: f64,
}

fn logdet_of(m: &HermitianMatrix, what: &str) -> Result<f64, SystemError> {
    m.logdet().map_err(|e: NumericsError| match e {
        NumericsError::NonPositiveDefinite => SystemError::NonPositiveDefinite(what.to_string()),
        other => SystemError::DimensionMismatch(other.to_string()),
    })
}

/// Per-direction mutual informations in nats: `(legitimate, eve)`.
fn direction_rates(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
    dir: Direction,
    n: usize,
) -> Result<(f64, f64), SystemError> {
    let sigma_rx = sigma_node_expr(params, ch, dir.rx(), n)?.evaluate(design);
    let theta_rx = signal_expr(params, ch, dir.tx, false, n)?.evaluate(design);
    let sigma_e = sigma_eve_expr(params, ch, n).evaluate(design);
    let theta_e = signal_expr(params, ch, dir.tx, true, n)?.evaluate(design);
    let legit =
        logdet_of(&sigma_rx.add(&theta_rx), "receiver covariance")? - logdet_of(&sigma_rx, "receiver covariance")?;
    let eve = logdet_of(&sigma_e.add(&theta_e), "Eve covariance")? - logdet_of(&sigma_e, "Eve covariance")?;
    Ok((legit, eve))
}

/// Clamped per-subcarrier and summed secrecy rates in bits/s/Hz.
pub fn secrecy_rates(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
) -> Result<SecrecyReport, SystemError> {
    check_shapes(params, ch, design)?;
    let to_bits = std::f64::consts::LOG2_E;
    let mut per_subcarrier = Vec::with_capacity(params.n_sub);
    for n in 0..params.n_sub {
        let mut r = SubcarrierRates::default();
        for dir in directions(params) {
            let (legit, eve) = direction_rates(params, ch, design, dir, n)?;
            let (legit, eve) = (legit * to_bits, eve * to_bits);
            match dir.tx {
                Node::Alice => {
                    r.i_ab = legit;
                    r.i_ae = eve;
                }
                Node::Bob => {
                    r.i_ba = legit;
                    r.i_be = eve;
                }
            }
            r.i_sec += (legit - eve).max(0.0);
        }
        per_subcarrier.push(r);
    }
    let i_sum = per_subcarrier.iter().map(|r| r.i_sec).sum();
    Ok(SecrecyReport { per_subcarrier, i_sum })
}

/// Sum over subcarriers and directions of the unclamped secrecy, in nats.
pub fn unclamped_objective(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
) -> Result<f64, SystemError> {
    check_shapes(params, ch, design)?;
    let mut total = 0.0;
    for n in 0..params.n_sub {
        for dir in directions(params) {
            let (legit, eve) = direction_rates(params, ch, design, dir, n)?;
            total += legit - eve;
        }
    }
    Ok(total)
}
