//! Monte Carlo experiments: configuration, strategy dispatch, parallel
//! trials, aggregation and CSV output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bcd::{
    self, full_jamming_eps, init_optimal_beam, init_uniform, init_uniform_bidirectional, init_uniform_jamming,
    BcdError, BcdOptions, BcdStatus, FreeBlocks,
};
use crate::channel::{draw_channels, perturb_csi, ChannelRealization, Impairments, LinkMode, PathLoss, SystemParams};
use crate::maxdet::SolverOptions;
use crate::numerics::{db_to_linear, HermitianMatrix};
use crate::rng::derive_seed;
use crate::system::{secrecy_rates, Block, SecrecyReport, SystemError, TransmitDesign};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Optimizer(#[from] BcdError),
    #[error(transparent)]
    System(#[from] SystemError),
}

impl HarnessError {
    fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { field: field.into(), message: message.into() }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::UnknownStrategy(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// System parameters with power, noise and distortion values in dB.
/// Defaults are the reference setup: four antennas everywhere, four
/// subcarriers, 0 dB budgets, -30 dB noise and distortion, -20 dB path loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub m_a: usize,
    pub m_at: usize,
    pub m_ar: usize,
    pub m_bt: usize,
    pub m_br: usize,
    pub m_e: usize,
    pub n_sub: usize,
    pub rician_k: f64,
    pub eta_ab_db: f64,
    pub eta_ba_db: f64,
    pub eta_ae_db: f64,
    pub eta_be_db: f64,
    pub noise_a_db: f64,
    pub noise_b_db: f64,
    pub noise_e_db: f64,
    pub kappa_db: f64,
    pub beta_db: f64,
    /// `D D^H = 10^(d/10) I` at both receivers; `-inf` disables it.
    pub csi_corr_db: f64,
    pub x_max_db: f64,
    pub w_max_db: f64,
    pub p_a_max_db: f64,
    pub p_b_max_db: f64,
    /// Data streams for precoder recovery; 0 picks `min(m_a, m_br)`.
    pub streams: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            m_a: 4,
            m_at: 4,
            m_ar: 4,
            m_bt: 4,
            m_br: 4,
            m_e: 4,
            n_sub: 4,
            rician_k: 10.0,
            eta_ab_db: -20.0,
            eta_ba_db: -20.0,
            eta_ae_db: -20.0,
            eta_be_db: -20.0,
            noise_a_db: -30.0,
            noise_b_db: -30.0,
            noise_e_db: -30.0,
            kappa_db: -30.0,
            beta_db: -30.0,
            csi_corr_db: f64::NEG_INFINITY,
            x_max_db: 0.0,
            w_max_db: 0.0,
            p_a_max_db: 0.0,
            p_b_max_db: 0.0,
            streams: 0,
        }
    }
}

impl SystemConfig {
    /// Two antennas per node and two subcarriers, otherwise the defaults.
    pub fn desk() -> Self {
        Self { m_a: 2, m_at: 2, m_ar: 2, m_bt: 2, m_br: 2, m_e: 2, n_sub: 2, ..Self::default() }
    }

    pub fn to_params(&self, mode: LinkMode) -> Result<SystemParams, HarnessError> {
        let n = self.n_sub;
        let corr = db_to_linear(self.csi_corr_db);
        let imp = |rx: usize| Impairments {
            kappa: vec![db_to_linear(self.kappa_db); n],
            beta: vec![db_to_linear(self.beta_db); n],
            csi_corr: vec![HermitianMatrix::scaled_identity(rx, corr); n],
        };
        let p = SystemParams {
            mode,
            m_a: self.m_a,
            m_at: self.m_at,
            m_ar: self.m_ar,
            m_bt: self.m_bt,
            m_br: self.m_br,
            m_e: self.m_e,
            n_sub: n,
            rician_k: self.rician_k,
            eta: PathLoss {
                ab: db_to_linear(self.eta_ab_db),
                ba: db_to_linear(self.eta_ba_db),
                ae: db_to_linear(self.eta_ae_db),
                be: db_to_linear(self.eta_be_db),
            },
            noise_a: vec![db_to_linear(self.noise_a_db); n],
            noise_b: vec![db_to_linear(self.noise_b_db); n],
            noise_e: vec![db_to_linear(self.noise_e_db); n],
            alice: imp(self.m_ar),
            bob: imp(self.m_br),
            x_max: db_to_linear(self.x_max_db),
            w_max: db_to_linear(self.w_max_db),
            p_a_max: db_to_linear(self.p_a_max_db),
            p_b_max: db_to_linear(self.p_b_max_db),
            streams: if self.streams == 0 { self.m_a.min(self.m_br) } else { self.streams },
        };
        p.validate().map_err(|e| HarnessError::config("system", e.to_string()))?;
        Ok(p)
    }
}

/// Parameters a sweep may vary.
pub const SWEEP_PARAMS: &[&str] = &[
    "x_max_db",
    "w_max_db",
    "power_db",
    "p_a_max_db",
    "p_b_max_db",
    "p_max_db",
    "kappa_db",
    "beta_db",
    "kappa_beta_db",
    "noise_db",
    "csi_error_db",
    "m_a",
    "m_b",
    "m_e",
    "m_all",
    "n_sub",
];

fn as_count(param: &str, v: f64) -> Result<usize, HarnessError> {
    if v >= 1.0 && v.fract() == 0.0 && v < 1e6 {
        Ok(v as usize)
    } else {
        Err(HarnessError::config(format!("sweep.{param}"), format!("{v} is not a positive integer")))
    }
}

/// Applies one sweep value. `power_db` sets `X_max = W_max`, `p_max_db`
/// sets both node budgets, `m_b` both of Bob's arrays and `m_all` every
/// array. `csi_error_db` is handled by the experiment, not the system.
pub fn apply_sweep(sys: &mut SystemConfig, param: &str, v: f64) -> Result<(), HarnessError> {
    match param {
        "x_max_db" => sys.x_max_db = v,
        "w_max_db" => sys.w_max_db = v,
        "power_db" => {
            sys.x_max_db = v;
            sys.w_max_db = v;
        }
        "p_a_max_db" => sys.p_a_max_db = v,
        "p_b_max_db" => sys.p_b_max_db = v,
        "p_max_db" => {
            sys.p_a_max_db = v;
            sys.p_b_max_db = v;
        }
        "kappa_db" => sys.kappa_db = v,
        "beta_db" => sys.beta_db = v,
        "kappa_beta_db" => {
            sys.kappa_db = v;
            sys.beta_db = v;
        }
        "noise_db" => {
            sys.noise_a_db = v;
            sys.noise_b_db = v;
            sys.noise_e_db = v;
        }
        "csi_error_db" => {}
        "m_a" => {
            sys.m_a = as_count(param, v)?;
            sys.m_at = sys.m_a;
        }
        "m_b" => {
            sys.m_bt = as_count(param, v)?;
            sys.m_br = sys.m_bt;
        }
        "m_e" => sys.m_e = as_count(param, v)?,
        "m_all" => {
            let m = as_count(param, v)?;
            (sys.m_a, sys.m_at, sys.m_ar, sys.m_bt, sys.m_br, sys.m_e) = (m, m, m, m, m, m);
        }
        "n_sub" => sys.n_sub = as_count(param, v)?,
        other => {
            return Err(HarnessError::config(
                "sweep.param",
                format!("`{other}` is not one of {}", SWEEP_PARAMS.join(", ")),
            ));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    OptimalFd,
    OptimalHd,
    EqualFd,
    EqualHd,
    EqualXOptimalW,
    EqualWOptimalX,
    BothFdNoJam,
    BothFdBobJam,
    BothFdBothJam,
    BothHdNoJam,
    BobFdBobJam,
}

impl Strategy {
    pub const ALL: [Strategy; 11] = [
        Strategy::OptimalFd,
        Strategy::OptimalHd,
        Strategy::EqualFd,
        Strategy::EqualHd,
        Strategy::EqualXOptimalW,
        Strategy::EqualWOptimalX,
        Strategy::BothFdNoJam,
        Strategy::BothFdBobJam,
        Strategy::BothFdBothJam,
        Strategy::BothHdNoJam,
        Strategy::BobFdBobJam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::OptimalFd => "Optimal-FD",
            Strategy::OptimalHd => "Optimal-HD",
            Strategy::EqualFd => "Equal-FD",
            Strategy::EqualHd => "Equal-HD",
            Strategy::EqualXOptimalW => "Equal-X/Optimal-W",
            Strategy::EqualWOptimalX => "Equal-W/Optimal-X",
            Strategy::BothFdNoJam => "Both-FD/No-Jam",
            Strategy::BothFdBobJam => "Both-FD/Bob-Jam",
            Strategy::BothFdBothJam => "Both-FD/Both-Jam",
            Strategy::BothHdNoJam => "Both-HD/No-Jam",
            Strategy::BobFdBobJam => "Bob-FD/Bob-Jam",
        }
    }

    /// Whether the strategy runs on the two-way system.
    pub fn is_bidirectional(self) -> bool {
        matches!(self, Strategy::BothFdNoJam | Strategy::BothFdBobJam | Strategy::BothFdBothJam)
    }

    /// Whether the strategy belongs to the two-way comparison, including
    /// the one-way baselines that spend the node budgets.
    pub fn uses_node_budgets(self) -> bool {
        self.is_bidirectional() || matches!(self, Strategy::BothHdNoJam | Strategy::BobFdBobJam)
    }

    /// System parameters the strategy optimizes over.
    pub fn params(self, sys: &SystemConfig) -> Result<SystemParams, HarnessError> {
        if self.is_bidirectional() {
            return sys.to_params(LinkMode::TwoWay);
        }
        let mut p = sys.to_params(LinkMode::OneWay)?;
        if self.uses_node_budgets() {
            p.m_a = p.m_at;
            p.x_max = p.p_a_max;
            p.w_max = p.p_b_max;
        }
        Ok(p)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::UnknownStrategy(s.to_string()))
    }
}

/// Result of one strategy on one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRun {
    pub design: TransmitDesign,
    pub report: SecrecyReport,
    pub iterations: usize,
    pub status: BcdStatus,
}

/// Designs with `strategy` on `ch` and reports the clamped rates on the same
/// channel. Fixed blocks stay at their uniform construction throughout.
pub fn strategy_dispatch(
    strategy: Strategy,
    params: &SystemParams,
    ch: &ChannelRealization,
    opts: &BcdOptions,
) -> Result<StrategyRun, HarnessError> {
    let fixed = |design: TransmitDesign| -> Result<StrategyRun, HarnessError> {
        let report = secrecy_rates(params, ch, &design)?;
        Ok(StrategyRun { design, report, iterations: 0, status: BcdStatus::Converged })
    };
    let optimized = |init: TransmitDesign, free: FreeBlocks| -> Result<StrategyRun, HarnessError> {
        let o = bcd::optimize_any(params, ch, init, &BcdOptions { free, ..*opts })?;
        Ok(StrategyRun { design: o.design, report: o.report, iterations: o.state.iterations, status: o.status })
    };
    let full_w = full_jamming_eps(params);
    let all = FreeBlocks::ALL;
    match strategy {
        Strategy::EqualHd => fixed(init_uniform(params)),
        Strategy::EqualFd => fixed(init_uniform_jamming(params, full_w)),
        Strategy::OptimalFd | Strategy::BobFdBobJam => optimized(init_uniform(params), all),
        Strategy::OptimalHd | Strategy::BothHdNoJam => optimized(init_uniform(params), all.without(Block::BobJam)),
        Strategy::EqualXOptimalW => optimized(init_uniform(params), all.without(Block::AliceInfo)),
        Strategy::EqualWOptimalX => optimized(init_uniform_jamming(params, full_w), all.without(Block::BobJam)),
        Strategy::BothFdNoJam => {
            optimized(init_uniform_bidirectional(params), all.without(Block::AliceJam).without(Block::BobJam))
        }
        Strategy::BothFdBobJam => optimized(init_uniform_bidirectional(params), all.without(Block::AliceJam)),
        Strategy::BothFdBothJam => optimized(init_uniform_bidirectional(params), all),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

fn default_trials() -> usize {
    20
}
fn default_restarts() -> usize {
    20
}
fn default_outer_tol() -> f64 {
    1e-4
}
fn default_max_outer() -> usize {
    50
}
fn default_inner_tol() -> f64 {
    1e-6
}
fn default_inner_max_iter() -> usize {
    200
}
fn default_csi_error_db() -> f64 {
    f64::NEG_INFINITY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub strategies: Vec<String>,
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_inner_max_iter")]
    pub inner_max_iter: usize,
    /// Random restarts of the benchmark in the initialization study.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Channel estimation error variance in dB; `-inf` means perfect
    /// channel knowledge.
    #[serde(default = "default_csi_error_db")]
    pub csi_error_db: f64,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

impl ExperimentConfig {
    /// Desk-scale configuration for the given strategies.
    pub fn desk(seed: u64, trials: usize, strategies: &[Strategy]) -> Self {
        Self {
            seed,
            trials,
            strategies: strategies.iter().map(|s| s.name().to_string()).collect(),
            outer_tol: default_outer_tol(),
            max_outer: default_max_outer(),
            inner_tol: default_inner_tol(),
            inner_max_iter: default_inner_max_iter(),
            restarts: default_restarts(),
            csi_error_db: default_csi_error_db(),
            system: SystemConfig::desk(),
            sweep: None,
        }
    }

    pub fn with_sweep(mut self, param: &str, values: &[f64]) -> Self {
        self.sweep = Some(Sweep { param: param.to_string(), values: values.to_vec() });
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn bcd_options(&self) -> BcdOptions {
        BcdOptions {
            outer_tol: self.outer_tol,
            max_outer: self.max_outer,
            solver: SolverOptions { max_iter: self.inner_max_iter, tol: self.inner_tol },
            free: FreeBlocks::ALL,
        }
    }

    pub fn parsed_strategies(&self) -> Result<Vec<Strategy>, HarnessError> {
        self.strategies.iter().map(|s| s.parse()).collect()
    }

    pub fn sweep_param(&self) -> &str {
        self.sweep.as_ref().map_or("none", |s| s.param.as_str())
    }

    /// Sweep values, or a single placeholder point when no sweep is set.
    pub fn sweep_values(&self) -> Vec<f64> {
        self.sweep.as_ref().map_or(vec![0.0], |s| s.values.clone())
    }

    /// System and CSI error for one sweep value.
    pub fn point(&self, value: f64) -> Result<(SystemConfig, f64), HarnessError> {
        let mut sys = self.system.clone();
        let mut csi = self.csi_error_db;
        if let Some(sw) = &self.sweep {
            apply_sweep(&mut sys, &sw.param, value)?;
            if sw.param == "csi_error_db" {
                csi = value;
            }
        }
        Ok((sys, csi))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::config("trials", "must be at least 1"));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::config("strategies", "list is empty"));
        }
        self.parsed_strategies()?;
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0) {
            return Err(HarnessError::config("outer_tol/inner_tol", "tolerances must be positive"));
        }
        if self.max_outer == 0 || self.inner_max_iter == 0 {
            return Err(HarnessError::config("max_outer/inner_max_iter", "iteration limits must be positive"));
        }
        if self.restarts == 0 {
            return Err(HarnessError::config("restarts", "must be at least 1"));
        }
        if self.csi_error_db.is_nan() {
            return Err(HarnessError::config("csi_error_db", "is NaN"));
        }
        if let Some(sw) = &self.sweep {
            if !SWEEP_PARAMS.contains(&sw.param.as_str()) {
                return Err(HarnessError::config(
                    "sweep.param",
                    format!("`{}` is not one of {}", sw.param, SWEEP_PARAMS.join(", ")),
                ));
            }
            if sw.values.iter().any(|v| v.is_nan()) {
                return Err(HarnessError::config("sweep.values", "contains NaN"));
            }
        }
        for v in self.sweep_values() {
            let (sys, _) = self.point(v)?;
            for st in self.parsed_strategies()? {
                st.params(&sys)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub strategy: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub mean_bits: f64,
    pub stderr_bits: f64,
    pub mean_iters: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub strategy: String,
    pub sweep_value: f64,
    pub trial: u64,
    pub seed: u64,
    /// Clamped sum secrecy rate on the true channel; NaN on failure.
    pub bits: f64,
    pub iters: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub version: String,
    pub seed: u64,
    pub trials: usize,
    pub sweep_param: String,
    pub failed_trials: usize,
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub metadata: Metadata,
    pub aggregates: Vec<AggregateRow>,
    pub trials: Vec<TrialRow>,
}

impl ExperimentResult {
    pub fn aggregate(&self, strategy: Strategy, value: f64) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|r| r.strategy == strategy.name() && r.sweep_value == value)
    }

    /// Trial values of one strategy at one sweep point, in trial order.
    pub fn trial_bits(&self, strategy: Strategy, value: f64) -> Vec<f64> {
        self.trials.iter().filter(|r| r.strategy == strategy.name() && r.sweep_value == value).map(|r| r.bits).collect()
    }
}

/// Sample mean and standard error of the finite values.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let ok: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = ok.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = ok.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Channel draw for one trial; two-way links are drawn whenever any
/// strategy needs them so every strategy sees the same realization.
fn trial_channels(sys: &SystemConfig, strategies: &[Strategy], seed: u64) -> Result<ChannelRealization, HarnessError> {
    let two_way = strategies.iter().any(|s| s.uses_node_budgets());
    let mode = if two_way { LinkMode::TwoWay } else { LinkMode::OneWay };
    let mut p = sys.to_params(mode)?;
    if two_way {
        p.m_a = p.m_at;
    }
    Ok(draw_channels(&p, seed))
}

fn status_label(status: BcdStatus) -> &'static str {
    match status {
        BcdStatus::Converged => "converged",
        BcdStatus::StalledBelowTolerance => "stalled",
    }
}

/// Runs every (sweep value, strategy, trial) cell. Trial `t` uses seed
/// `derive_seed(seed, t)` for every strategy and sweep value. Designs are
/// computed on the estimated channel and scored on the true one.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let strategies = cfg.parsed_strategies()?;
    let opts = cfg.bcd_options();
    let values = cfg.sweep.as_ref().map_or(vec![0.0], |s| s.values.clone());

    let mut cells = Vec::new();
    for (vi, &value) in values.iter().enumerate() {
        for t in 0..cfg.trials as u64 {
            cells.push((vi, value, t));
        }
    }

    let rows: Vec<Vec<TrialRow>> = cells
        .par_iter()
        .map(|&(_, value, t)| -> Result<Vec<TrialRow>, HarnessError> {
            let (sys, csi_db) = cfg.point(value)?;
            let seed = derive_seed(cfg.seed, t);
            let truth = trial_channels(&sys, &strategies, seed)?;
            let estimate = perturb_csi(&truth, db_to_linear(csi_db), seed);
            let mut out = Vec::with_capacity(strategies.len());
            for &st in &strategies {
                let params = st.params(&sys)?;
                let row = match strategy_dispatch(st, &params, &estimate, &opts) {
                    Ok(run) => {
                        let scored = secrecy_rates(&params, &truth, &run.design).map(|r| r.i_sum);
                        match scored {
                            Ok(bits) => (bits, run.iterations, status_label(run.status).to_string()),
                            Err(e) => (f64::NAN, run.iterations, format!("failed: {e}")),
                        }
                    }
                    Err(e @ (HarnessError::Config { .. } | HarnessError::UnknownStrategy(_))) => return Err(e),
                    Err(e) => (f64::NAN, 0, format!("failed: {e}")),
                };
                out.push(TrialRow {
                    strategy: st.name().to_string(),
                    sweep_value: value,
                    trial: t,
                    seed,
                    bits: row.0,
                    iters: row.1,
                    status: row.2,
                });
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    // cells are in (value, trial) order; regroup as (value, strategy, trial)
    let mut trials = Vec::with_capacity(rows.len() * strategies.len());
    let mut aggregates = Vec::with_capacity(values.len() * strategies.len());
    for (vi, &value) in values.iter().enumerate() {
        let block = &rows[vi * cfg.trials..(vi + 1) * cfg.trials];
        for (si, st) in strategies.iter().enumerate() {
            let cell: Vec<TrialRow> = block.iter().map(|r| r[si].clone()).collect();
            let bits: Vec<f64> = cell.iter().map(|r| r.bits).collect();
            let (mean, se) = mean_stderr(&bits);
            let mean_iters = cell.iter().map(|r| r.iters as f64).sum::<f64>() / cell.len() as f64;
            aggregates.push(AggregateRow {
                strategy: st.name().to_string(),
                sweep_param: cfg.sweep_param().to_string(),
                sweep_value: value,
                mean_bits: mean,
                stderr_bits: se,
                mean_iters,
            });
            trials.extend(cell);
        }
    }
    let failed_trials = trials.iter().filter(|r| r.status.starts_with("failed")).count();
    let metadata = Metadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        trials: cfg.trials,
        sweep_param: cfg.sweep_param().to_string(),
        failed_trials,
        config: cfg.to_toml_string(),
    };
    Ok(ExperimentResult { metadata, aggregates, trials })
}

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TRIALS_FILE: &str = "trials.csv";
pub const METADATA_FILE: &str = "metadata.toml";

const AGGREGATE_HEADER: [&str; 6] =
    ["strategy", "sweep_param", "sweep_value", "mean_bits", "stderr_bits", "mean_iters"];
const TRIAL_HEADER: [&str; 7] = ["strategy", "sweep_value", "trial", "seed", "bits", "iters", "status"];

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let fmt_err = |e: csv::Error| HarnessError::Format { path: path.to_path_buf(), message: e.to_string() };
    w.write_record(header).map_err(fmt_err)?;
    for r in rows {
        w.serialize(r).map_err(fmt_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| HarnessError::Format { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes the aggregate and trial CSVs and the metadata sidecar into `dir`,
/// replacing earlier output.
pub fn emit_results(res: &ExperimentResult, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join(AGGREGATE_FILE), &AGGREGATE_HEADER, &res.aggregates)?;
    write_csv(&dir.join(TRIALS_FILE), &TRIAL_HEADER, &res.trials)?;
    let meta_path = dir.join(METADATA_FILE);
    let text = toml::to_string(&res.metadata).expect("metadata serializes");
    fs::write(&meta_path, text).map_err(io_err(&meta_path))
}

pub fn parse_results(dir: &Path) -> Result<ExperimentResult, HarnessError> {
    let meta_path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let metadata = toml::from_str(&text)
        .map_err(|e| HarnessError::Format { path: meta_path.clone(), message: e.message().to_string() })?;
    Ok(ExperimentResult {
        metadata,
        aggregates: read_csv(&dir.join(AGGREGATE_FILE))?,
        trials: read_csv(&dir.join(TRIALS_FILE))?,
    })
}

/// Initializations compared in the initialization study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Uniform information covariance with uniform full-budget jamming.
    Uniform,
    OptimalBeam,
    /// Best of the random restarts.
    RandomMax,
    /// Mean over the random restarts.
    RandomAvg,
}

impl InitMode {
    pub const ALL: [InitMode; 4] = [InitMode::Uniform, InitMode::OptimalBeam, InitMode::RandomMax, InitMode::RandomAvg];

    pub fn name(self) -> &'static str {
        match self {
            InitMode::Uniform => "uniform",
            InitMode::OptimalBeam => "optimal-beam",
            InitMode::RandomMax => "random-max",
            InitMode::RandomAvg => "random-avg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRow {
    pub mode: String,
    pub sweep_value: f64,
    pub mean_bits: f64,
    pub stderr_bits: f64,
    /// `(benchmark - mean) / benchmark` with the random-max mean as the
    /// benchmark.
    pub relative_gap: f64,
}

/// Optimal-FD from each initialization on every trial of every sweep value.
/// Only the system, sweep, trials, seed, tolerances and restarts of `cfg`
/// are used.
pub fn run_init_study(cfg: &ExperimentConfig) -> Result<Vec<InitRow>, HarnessError> {
    let mut probe = cfg.clone();
    probe.strategies = vec![Strategy::OptimalFd.name().to_string()];
    probe.validate()?;
    let opts = cfg.bcd_options();
    let values = cfg.sweep_values();
    let mut rows = Vec::new();
    for &value in &values {
        let (sys, _) = cfg.point(value)?;
        let params = sys.to_params(LinkMode::OneWay)?;
        let per_trial: Vec<[f64; 4]> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| -> Result<[f64; 4], HarnessError> {
                let seed = derive_seed(cfg.seed, t);
                let ch = draw_channels(&params, seed);
                let uniform =
                    bcd::optimize(&params, &ch, init_uniform_jamming(&params, full_jamming_eps(&params)), &opts)?;
                let beam = bcd::optimize(&params, &ch, init_optimal_beam(&params, &ch)?, &opts)?;
                let mut random = Vec::with_capacity(cfg.restarts);
                for r in 0..cfg.restarts {
                    let out = benchmark_single(&params, &ch, &opts, r, seed)?;
                    random.push(out);
                }
                let best = random.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let avg = random.iter().sum::<f64>() / random.len() as f64;
                Ok([uniform.report.i_sum, beam.report.i_sum, best, avg])
            })
            .collect::<Result<_, _>>()?;
        let stats: Vec<(f64, f64)> =
            (0..4).map(|k| mean_stderr(&per_trial.iter().map(|r| r[k]).collect::<Vec<_>>())).collect();
        let bench = stats[2].0;
        for (k, mode) in InitMode::ALL.iter().enumerate() {
            rows.push(InitRow {
                mode: mode.name().to_string(),
                sweep_value: value,
                mean_bits: stats[k].0,
                stderr_bits: stats[k].1,
                relative_gap: (bench - stats[k].0) / bench,
            });
        }
    }
    Ok(rows)
}

/// Restart `r` of the benchmark alone, so averages over restarts are
/// available alongside the best one.
fn benchmark_single(
    params: &SystemParams,
    ch: &ChannelRealization,
    opts: &BcdOptions,
    r: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    let mut rng = crate::rng::stream(seed, crate::rng::INIT_STREAM_BASE + r as u64);
    let init = bcd::init_random(params, &TransmitDesign::zeros(params), &opts.free, &mut rng);
    Ok(bcd::optimize(params, ch, init, opts)?.report.i_sum)
}

pub fn write_init_rows(rows: &[InitRow], path: &Path) -> Result<(), HarnessError> {
    write_csv(path, &["mode", "sweep_value", "mean_bits", "stderr_bits", "relative_gap"], rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("Optimal-XD".parse::<Strategy>(), Err(HarnessError::UnknownStrategy(_))));
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 7
            strategies = ["Optimal-FD", "Equal-HD"]
            csi_error_db = -inf
            [system]
            m_a = 2
            kappa_db = -20
            [sweep]
            param = "w_max_db"
            values = [-10, 0, 10]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.trials, 20);
        assert_eq!(cfg.system.m_a, 2);
        assert_eq!(cfg.system.m_bt, 4);
        let p = Strategy::OptimalFd.params(&cfg.point(10.0).unwrap().0).unwrap();
        assert!((p.w_max - 10.0).abs() < 1e-12);
        assert!((p.bob.kappa[0] - 1e-2).abs() < 1e-15);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = [
            ("seed = 1\nstrategies = []", "strategies"),
            ("seed = 1\ntrials = 0\nstrategies = [\"Equal-HD\"]", "trials"),
            ("seed = 1\nstrategies = [\"Equal-HD\"]\n[sweep]\nparam = \"colour\"\nvalues = [1]", "sweep.param"),
            ("seed = 1\nstrategies = [\"Equal-HD\"]\n[sweep]\nparam = \"m_b\"\nvalues = [1.5]", "sweep.m_b"),
        ];
        for (text, field) in bad {
            match ExperimentConfig::from_toml_str(text) {
                Err(HarnessError::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            ExperimentConfig::from_toml_str("seed = 1\nstrategies = [\"Fancy\"]"),
            Err(HarnessError::UnknownStrategy(_))
        ));
        assert_eq!(HarnessError::config("x", "y").exit_code(), 2);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_hd_is_deterministic_and_unoptimized() {
        let cfg = ExperimentConfig::desk(11, 1, &[Strategy::EqualHd]);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 1);
        assert_eq!(a.trials[0].iters, 0);
        assert!(a.trials[0].bits.is_finite());
    }

    #[test]
    fn counting_rows() {
        let cfg = ExperimentConfig::desk(3, 5, &[Strategy::EqualHd, Strategy::EqualFd])
            .with_sweep("w_max_db", &[-10.0, 0.0, 10.0]);
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.aggregates.len(), 6);
        assert_eq!(res.trials.len(), 30);
        let agg = res.aggregate(Strategy::EqualFd, 0.0).unwrap();
        let (m, _) = mean_stderr(&res.trial_bits(Strategy::EqualFd, 0.0));
        assert_eq!(agg.mean_bits, m);
    }
}
