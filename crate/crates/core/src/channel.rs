//! System parameters and random channel realizations.
//!
//! Non self-interference links are i.i.d. Rayleigh with a per-link element
//! variance. Self-interference links are Rician around an all-ones matrix.
//! Every quantity here is in linear scale.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::numerics::{c, CMatrix, HermitianMatrix};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ParamError {
    ParamError::Invalid { field, reason: reason.into() }
}

/// Whether only Alice sends information (Bob jams) or both nodes exchange
/// information and may both jam.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkMode {
    #[default]
    OneWay,
    TwoWay,
}

/// Element variances of the Rayleigh links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    pub ab: f64,
    pub ba: f64,
    pub ae: f64,
    pub be: f64,
}

/// Residual self-interference coefficients of one full-duplex node, one
/// entry per subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct Impairments {
    /// Transmit distortion coefficient.
    pub kappa: Vec<f64>,
    /// Receive distortion coefficient.
    pub beta: Vec<f64>,
    /// `D D^H` of the SI channel-estimation error, receive-antenna sized.
    pub csi_corr: Vec<HermitianMatrix>,
}

impl Impairments {
    pub fn uniform(n_sub: usize, kappa: f64, beta: f64, rx: usize) -> Self {
        Self { kappa: vec![kappa; n_sub], beta: vec![beta; n_sub], csi_corr: vec![HermitianMatrix::zeros(rx); n_sub] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub mode: LinkMode,
    /// Alice transmit antennas in the one-way system.
    pub m_a: usize,
    /// Alice transmit/receive antennas in the two-way system.
    pub m_at: usize,
    pub m_ar: usize,
    pub m_bt: usize,
    pub m_br: usize,
    pub m_e: usize,
    pub n_sub: usize,
    pub rician_k: f64,
    pub eta: PathLoss,
    pub noise_a: Vec<f64>,
    pub noise_b: Vec<f64>,
    pub noise_e: Vec<f64>,
    pub alice: Impairments,
    pub bob: Impairments,
    pub x_max: f64,
    pub w_max: f64,
    pub p_a_max: f64,
    pub p_b_max: f64,
    /// Number of data streams; only used when recovering precoders.
    pub streams: usize,
}

impl SystemParams {
    /// Uniform setup with `m` antennas everywhere, `n_sub` subcarriers and
    /// the remaining values set to the usual reference point: K = 10,
    /// unit power budgets, -30 dB noise and distortion, -20 dB path loss.
    pub fn uniform(m: usize, n_sub: usize) -> Self {
        let noise = 1e-3;
        Self {
            mode: LinkMode::OneWay,
            m_a: m,
            m_at: m,
            m_ar: m,
            m_bt: m,
            m_br: m,
            m_e: m,
            n_sub,
            rician_k: 10.0,
            eta: PathLoss { ab: 1e-2, ba: 1e-2, ae: 1e-2, be: 1e-2 },
            noise_a: vec![noise; n_sub],
            noise_b: vec![noise; n_sub],
            noise_e: vec![noise; n_sub],
            alice: Impairments::uniform(n_sub, 1e-3, 1e-3, m),
            bob: Impairments::uniform(n_sub, 1e-3, 1e-3, m),
            x_max: 1.0,
            w_max: 1.0,
            p_a_max: 1.0,
            p_b_max: 1.0,
            streams: m,
        }
    }

    /// Four antennas per node and four subcarriers.
    pub fn reference() -> Self {
        Self::uniform(4, 4)
    }

    /// Two antennas per node and two subcarriers.
    pub fn desk() -> Self {
        Self::uniform(2, 2)
    }

    pub fn with_mode(mut self, mode: LinkMode) -> Self {
        self.mode = mode;
        self
    }

    /// Alice's transmit antenna count for the active mode.
    pub fn alice_tx(&self) -> usize {
        match self.mode {
            LinkMode::OneWay => self.m_a,
            LinkMode::TwoWay => self.m_at,
        }
    }

    /// Sets the same distortion coefficients on both nodes and all
    /// subcarriers.
    pub fn set_distortion(&mut self, kappa: f64, beta: f64) {
        for imp in [&mut self.alice, &mut self.bob] {
            imp.kappa = vec![kappa; self.n_sub];
            imp.beta = vec![beta; self.n_sub];
        }
    }

    /// Resizes every per-subcarrier and per-antenna field after a change of
    /// antenna or subcarrier counts, keeping the value of the first entry.
    pub fn reshape(&mut self) {
        let n = self.n_sub;
        for v in [&mut self.noise_a, &mut self.noise_b, &mut self.noise_e] {
            let x = v.first().copied().unwrap_or(1e-3);
            *v = vec![x; n];
        }
        for (imp, rx) in [(&mut self.alice, self.m_ar), (&mut self.bob, self.m_br)] {
            let k = imp.kappa.first().copied().unwrap_or(0.0);
            let b = imp.beta.first().copied().unwrap_or(0.0);
            let keep = imp.csi_corr.first().filter(|d| d.dim() == rx).cloned();
            imp.kappa = vec![k; n];
            imp.beta = vec![b; n];
            imp.csi_corr = vec![keep.unwrap_or_else(|| HermitianMatrix::zeros(rx)); n];
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let counts = [
            ("m_a", self.m_a),
            ("m_at", self.m_at),
            ("m_ar", self.m_ar),
            ("m_bt", self.m_bt),
            ("m_br", self.m_br),
            ("m_e", self.m_e),
            ("n_sub", self.n_sub),
            ("streams", self.streams),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(invalid(field, "must be a positive integer"));
            }
        }
        if self.rician_k.is_nan() || self.rician_k < 0.0 {
            return Err(invalid("rician_k", "must be nonnegative"));
        }
        let eta = [("eta_ab", self.eta.ab), ("eta_ba", self.eta.ba), ("eta_ae", self.eta.ae), ("eta_be", self.eta.be)];
        for (field, v) in eta {
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("noise_a", &self.noise_a), ("noise_b", &self.noise_b), ("noise_e", &self.noise_e)] {
            if v.len() != self.n_sub {
                return Err(invalid(field, format!("expected {} entries, got {}", self.n_sub, v.len())));
            }
            if v.iter().any(|&x| !x.is_finite() || x <= 0.0) {
                return Err(invalid(field, "noise powers must be positive"));
            }
        }
        for (field, imp, rx) in [("alice", &self.alice, self.m_ar), ("bob", &self.bob, self.m_br)] {
            if imp.kappa.len() != self.n_sub || imp.beta.len() != self.n_sub || imp.csi_corr.len() != self.n_sub {
                return Err(invalid(field, "impairments need one entry per subcarrier"));
            }
            if imp.kappa.iter().chain(&imp.beta).any(|&x| !x.is_finite() || x < 0.0) {
                return Err(invalid(field, "distortion coefficients must be nonnegative"));
            }
            if imp.csi_corr.iter().any(|d| d.dim() != rx || !d.is_psd(1e-12)) {
                return Err(invalid(field, "SI estimation-error correlation must be PSD with receive-antenna size"));
            }
        }
        let budgets =
            [("x_max", self.x_max), ("w_max", self.w_max), ("p_a_max", self.p_a_max), ("p_b_max", self.p_b_max)];
        for (field, v) in budgets {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(field, format!("must be a nonnegative power, got {v}")));
            }
        }
        match self.mode {
            LinkMode::OneWay => {
                if self.x_max <= 0.0 {
                    return Err(invalid("x_max", "information power budget must be positive"));
                }
                if self.streams > self.m_a.min(self.m_br) {
                    return Err(invalid("streams", "cannot exceed min(m_a, m_br)"));
                }
            }
            LinkMode::TwoWay => {
                if self.p_a_max <= 0.0 || self.p_b_max <= 0.0 {
                    return Err(invalid("p_a_max", "node power budgets must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Identifies one link of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    AliceBob,
    AliceEve,
    BobBob,
    BobEve,
    BobAlice,
    AliceAlice,
}

/// Channel matrices for one subcarrier. `h_ba` and `h_aa` are present only
/// for two-way realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierChannels {
    pub h_ab: CMatrix,
    pub h_ae: CMatrix,
    pub h_bb: CMatrix,
    pub h_be: CMatrix,
    pub h_ba: Option<CMatrix>,
    pub h_aa: Option<CMatrix>,
}

impl SubcarrierChannels {
    pub fn link(&self, link: Link) -> Option<&CMatrix> {
        match link {
            Link::AliceBob => Some(&self.h_ab),
            Link::AliceEve => Some(&self.h_ae),
            Link::BobBob => Some(&self.h_bb),
            Link::BobEve => Some(&self.h_be),
            Link::BobAlice => self.h_ba.as_ref(),
            Link::AliceAlice => self.h_aa.as_ref(),
        }
    }

    fn link_mut(&mut self, link: Link) -> Option<&mut CMatrix> {
        match link {
            Link::AliceBob => Some(&mut self.h_ab),
            Link::AliceEve => Some(&mut self.h_ae),
            Link::BobBob => Some(&mut self.h_bb),
            Link::BobEve => Some(&mut self.h_be),
            Link::BobAlice => self.h_ba.as_mut(),
            Link::AliceAlice => self.h_aa.as_mut(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub seed: u64,
    pub subcarriers: Vec<SubcarrierChannels>,
}

impl ChannelRealization {
    pub fn n_sub(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn sub(&self, n: usize) -> &SubcarrierChannels {
        &self.subcarriers[n]
    }
}

/// Circularly-symmetric complex Gaussian with the given total variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, variance: f64) -> CMatrix {
    let sd = (variance / 2.0).sqrt();
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        c(sd * re, sd * im)
    })
}

fn rician<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, k: f64) -> CMatrix {
    if k.is_infinite() {
        return CMatrix::from_element(rows, cols, c(1.0, 0.0));
    }
    let mean = (k / (1.0 + k)).sqrt();
    let mut h = complex_gaussian(rng, rows, cols, 1.0 / (1.0 + k));
    h.iter_mut().for_each(|z| z.re += mean);
    h
}

/// Draws every link of every subcarrier from `seed`.
pub fn draw_channels(params: &SystemParams, seed: u64) -> ChannelRealization {
    let mut rng = rng::stream(seed, rng::CHANNEL_STREAM);
    let ma = params.alice_tx();
    let two_way = params.mode == LinkMode::TwoWay;
    let subcarriers = (0..params.n_sub)
        .map(|_| {
            let h_ab = complex_gaussian(&mut rng, params.m_br, ma, params.eta.ab);
            let h_ae = complex_gaussian(&mut rng, params.m_e, ma, params.eta.ae);
            let h_bb = rician(&mut rng, params.m_br, params.m_bt, params.rician_k);
            let h_be = complex_gaussian(&mut rng, params.m_e, params.m_bt, params.eta.be);
            let (h_ba, h_aa) = if two_way {
                (
                    Some(complex_gaussian(&mut rng, params.m_ar, params.m_bt, params.eta.ba)),
                    Some(rician(&mut rng, params.m_ar, params.m_at, params.rician_k)),
                )
            } else {
                (None, None)
            };
            SubcarrierChannels { h_ab, h_ae, h_bb, h_be, h_ba, h_aa }
        })
        .collect();
    ChannelRealization { seed, subcarriers }
}

/// Links perturbed by default when modelling imperfect channel knowledge.
pub const DEFAULT_CSI_LINKS: [Link; 3] = [Link::AliceBob, Link::AliceEve, Link::BobEve];

/// Adds i.i.d. complex Gaussian estimation error of variance `sigma_err_sq`
/// to the Alice-Bob, Alice-Eve and Bob-Eve channels.
pub fn perturb_csi(ch: &ChannelRealization, sigma_err_sq: f64, seed: u64) -> ChannelRealization {
    perturb_links(ch, sigma_err_sq, seed, &DEFAULT_CSI_LINKS)
}

/// As [`perturb_csi`] for an explicit set of links. Links absent from the
/// realization are skipped.
pub fn perturb_links(ch: &ChannelRealization, sigma_err_sq: f64, seed: u64, links: &[Link]) -> ChannelRealization {
    let mut out = ch.clone();
    if sigma_err_sq <= 0.0 {
        return out;
    }
    let mut rng = rng::stream(seed, rng::CSI_STREAM);
    for sub in &mut out.subcarriers {
        for &link in links {
            if let Some(h) = sub.link_mut(link) {
                let e = complex_gaussian(&mut rng, h.nrows(), h.ncols(), sigma_err_sq);
                *h += e;
            }
        }
    }
    out
}
