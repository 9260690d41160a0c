//! Power allocation across subcarriers for a single-antenna transmitter
//! with a fixed jamming design.
//!
//! Subcarrier `n` yields `f_n(x) = ln((1 + alpha_n x) / (1 + beta_n x))`,
//! which is increasing and concave when `alpha_n > beta_n`. The optimum
//! equalizes the slopes `f_n'(x_n) = lambda` over active subcarriers and
//! spends the whole budget; `lambda` is found by bisection.

use thiserror::Error;

use crate::channel::{ChannelRealization, LinkMode, SystemParams};
use crate::numerics::HermitianMatrix;
use crate::system::{sigma_bob, sigma_eve, SystemError, TransmitDesign};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaterfillError {
    #[error("wrong dimension: {0}")]
    WrongDimension(String),
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierGains {
    /// Legitimate gains `h_ab^H Sigma_b^{-1} h_ab`.
    pub alpha: Vec<f64>,
    /// Eavesdropper gains `h_ae^H Sigma_e^{-1} h_ae`.
    pub beta: Vec<f64>,
    pub x_max: f64,
}

impl SubcarrierGains {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, x_max: f64) -> Result<Self, WaterfillError> {
        if alpha.len() != beta.len() {
            return Err(WaterfillError::InvalidGains(format!(
                "{} alpha values, {} beta values",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().chain(&beta).any(|g| !g.is_finite() || *g < 0.0) {
            return Err(WaterfillError::InvalidGains("gains must be finite and nonnegative".into()));
        }
        if !(x_max.is_finite() && x_max > 0.0) {
            return Err(WaterfillError::InvalidGains(format!("budget must be positive, got {x_max}")));
        }
        Ok(Self { alpha, beta, x_max })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub power: Vec<f64>,
    /// Water level at the returned allocation.
    pub lambda: f64,
    /// `max_n f_n'(X_max)`, the largest slope any subcarrier has at full
    /// budget; the optimal water level is never below it.
    pub lambda_max: f64,
    /// Sum of `f_n` in nats.
    pub objective: f64,
    pub iterations: usize,
    /// Set when no subcarrier has `alpha > beta`; the allocation is zero.
    pub no_positive_subcarrier: bool,
}

/// `ln((1 + alpha x) / (1 + beta x))`.
pub fn secrecy_per_subcarrier(x: f64, alpha: f64, beta: f64) -> f64 {
    (alpha * x).ln_1p() - (beta * x).ln_1p()
}

/// `f_n'(x) = (alpha - beta) / ((1 + alpha x)(1 + beta x))`.
pub fn secrecy_slope(x: f64, alpha: f64, beta: f64) -> f64 {
    (alpha - beta) / ((1.0 + alpha * x) * (1.0 + beta * x))
}

/// Power with slope `lambda`, or zero when even the slope at zero is below
/// `lambda`. Solves `lambda (1 + a x)(1 + b x) = a - b` through the root
/// form that stays accurate as `beta` goes to zero.
pub fn closed_form_power(lambda: f64, alpha: f64, beta: f64) -> f64 {
    if alpha <= beta || lambda <= 0.0 {
        return 0.0;
    }
    let qa = lambda * alpha * beta;
    let qb = lambda * (alpha + beta);
    let qc = lambda - (alpha - beta);
    if qc >= 0.0 {
        return 0.0;
    }
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
    -2.0 * qc / (qb + disc.sqrt())
}

/// `max_n f_n'(X_max)` with ties resolved to the first index.
pub fn lambda_max(gains: &SubcarrierGains) -> f64 {
    gains
        .alpha
        .iter()
        .zip(&gains.beta)
        .map(|(&a, &b)| secrecy_slope(gains.x_max, a, b))
        .fold(f64::NEG_INFINITY, f64::max)
}

const MAX_BISECTION: usize = 500;

/// Optimal allocation, exiting once `0 <= X_max - sum x < eps0`.
pub fn waterfill(gains: &SubcarrierGains, eps0: f64) -> Allocation {
    let x_max = gains.x_max;
    let lam_max = lambda_max(gains);
    let n = gains.len();
    let powers =
        |lam: f64| -> Vec<f64> { (0..n).map(|k| closed_form_power(lam, gains.alpha[k], gains.beta[k])).collect() };
    let finish = |power: Vec<f64>, lambda: f64, iterations: usize, none: bool| {
        let objective =
            power.iter().enumerate().map(|(k, &x)| secrecy_per_subcarrier(x, gains.alpha[k], gains.beta[k])).sum();
        Allocation { power, lambda, lambda_max: lam_max, objective, iterations, no_positive_subcarrier: none }
    };

    let top_slope = gains.alpha.iter().zip(&gains.beta).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
    if n == 0 || top_slope <= 0.0 {
        return finish(vec![0.0; n], lam_max.max(0.0), 0, true);
    }

    // Sum of powers decreases in lambda: at `lam_max` it is at least the
    // budget, at the largest slope at zero it is zero.
    let (mut lo, mut hi) = (lam_max, top_slope);
    let mut best = powers(hi);
    let mut best_lambda = hi;
    for it in 1..=MAX_BISECTION {
        let mid = 0.5 * (lo + hi);
        let p = powers(mid);
        let slack = x_max - p.iter().sum::<f64>();
        if slack < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = p;
            best_lambda = mid;
            if slack < eps0 {
                return finish(best, best_lambda, it, false);
            }
        }
        if hi - lo <= f64::EPSILON * hi {
            return finish(best, best_lambda, it, false);
        }
    }
    finish(best, best_lambda, MAX_BISECTION, false)
}

/// Default exit tolerance `1e-8 X_max`.
pub fn default_eps0(x_max: f64) -> f64 {
    1e-8 * x_max
}

/// Gains under a fixed jamming design for the one-way system with a
/// single transmit antenna at Alice.
pub fn gains_from_system(
    params: &SystemParams,
    ch: &ChannelRealization,
    jamming: &[HermitianMatrix],
) -> Result<SubcarrierGains, WaterfillError> {
    if params.mode != LinkMode::OneWay || params.m_a != 1 {
        return Err(WaterfillError::WrongDimension(format!(
            "needs one transmit antenna at Alice, has {}",
            params.alice_tx()
        )));
    }
    let x = vec![HermitianMatrix::zeros(1); params.n_sub];
    let design = TransmitDesign::one_way(x, jamming.to_vec());
    let mut alpha = Vec::with_capacity(params.n_sub);
    let mut beta = Vec::with_capacity(params.n_sub);
    for n in 0..params.n_sub {
        let sb = sigma_bob(params, ch, &design, n)?;
        let se = sigma_eve(params, ch, &design, n)?;
        let inv = |s: &HermitianMatrix| {
            s.psd_inverse(0.0).map_err(|_| SystemError::NonPositiveDefinite("noise covariance".into()))
        };
        let h_ab = ch.sub(n).h_ab.column(0).into_owned();
        let h_ae = ch.sub(n).h_ae.column(0).into_owned();
        alpha.push(inv(&sb)?.quadratic_form(&h_ab));
        beta.push(inv(&se)?.quadratic_form(&h_ae));
    }
    SubcarrierGains::new(alpha, beta, params.x_max)
}
