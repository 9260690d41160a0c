//! Block coordinate ascent for sum-secrecy maximization.
//!
//! Each outer iteration solves a concave log-det subproblem over the free
//! transmit covariances with the auxiliary matrices fixed, then refreshes
//! the auxiliaries in closed form. The auxiliaries linearize the two convex
//! terms `-log|S|` through `-log|S| = max_T log|T| - tr(T S) + dim`, so the
//! surrogate is tight right after every refresh and the true objective can
//! only grow from one iteration to the next.

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::channel::{complex_gaussian, ChannelRealization, LinkMode, SystemParams};
use crate::maxdet::{self, Budget, LinearTerm, LogDetTerm, MaxDetError, MaxDetProblem, SolverOptions};
use crate::numerics::{dominant_eigenvector, CMatrix, CVector, HermitianMatrix, NumericsError};
use crate::rng::{stream, INIT_STREAM_BASE};
use crate::system::{
    budget_groups, directions, secrecy_rates, sigma_eve_expr, sigma_node_expr, signal_expr, unclamped_objective, Block,
    Direction, SecrecyReport, SystemError, TransmitDesign,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BcdError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Solver(#[from] MaxDetError),
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("wrong link mode: {0}")]
    WrongMode(String),
}

fn pd_error(what: &str) -> impl Fn(NumericsError) -> BcdError + '_ {
    move |_| BcdError::System(SystemError::NonPositiveDefinite(what.to_string()))
}

/// Which blocks the optimizer may change. Blocks that are inactive in the
/// current mode, or whose budget is zero, stay fixed regardless.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeBlocks {
    pub alice_info: bool,
    pub alice_jam: bool,
    pub bob_info: bool,
    pub bob_jam: bool,
}

impl FreeBlocks {
    pub const ALL: Self = Self { alice_info: true, alice_jam: true, bob_info: true, bob_jam: true };

    pub fn without(mut self, b: Block) -> Self {
        *self.slot(b) = false;
        self
    }

    pub fn get(&self, b: Block) -> bool {
        match b {
            Block::AliceInfo => self.alice_info,
            Block::AliceJam => self.alice_jam,
            Block::BobInfo => self.bob_info,
            Block::BobJam => self.bob_jam,
        }
    }

    fn slot(&mut self, b: Block) -> &mut bool {
        match b {
            Block::AliceInfo => &mut self.alice_info,
            Block::AliceJam => &mut self.alice_jam,
            Block::BobInfo => &mut self.bob_info,
            Block::BobJam => &mut self.bob_jam,
        }
    }
}

impl Default for FreeBlocks {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcdOptions {
    /// Stop when the objective changes by less than `outer_tol` relative.
    pub outer_tol: f64,
    pub max_outer: usize,
    pub solver: SolverOptions,
    pub free: FreeBlocks,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self { outer_tol: 1e-4, max_outer: 50, solver: SolverOptions::default(), free: FreeBlocks::ALL }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcdStatus {
    Converged,
    /// `max_outer` reached before the relative change fell below tolerance.
    StalledBelowTolerance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdState {
    pub design: TransmitDesign,
    /// `Q` per direction and subcarrier: inverse receiver covariance.
    pub aux_q: Vec<Vec<HermitianMatrix>>,
    /// `T` per direction and subcarrier: inverse Eve covariance with the
    /// leaked signal.
    pub aux_t: Vec<Vec<HermitianMatrix>>,
    /// Unclamped objective in nats after every auxiliary refresh.
    pub trace: Vec<f64>,
    /// Completed outer iterations.
    pub iterations: usize,
    /// Newton steps summed over all subproblems.
    pub inner_iterations: usize,
}

impl BcdState {
    pub fn new(design: TransmitDesign) -> Self {
        Self { design, aux_q: Vec::new(), aux_t: Vec::new(), trace: Vec::new(), iterations: 0, inner_iterations: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcdOutcome {
    pub design: TransmitDesign,
    pub report: SecrecyReport,
    pub state: BcdState,
    pub status: BcdStatus,
}

/// Sets `Q = Sigma_rx^{-1}` and `T = (Sigma_e + Theta_e)^{-1}` for every
/// direction and subcarrier, and returns the unclamped objective (nats) at
/// the current design, which the surrogate now equals.
pub fn update_auxiliaries(
    state: &mut BcdState,
    params: &SystemParams,
    ch: &ChannelRealization,
) -> Result<f64, BcdError> {
    let dirs = directions(params);
    let mut aux_q = Vec::with_capacity(dirs.len());
    let mut aux_t = Vec::with_capacity(dirs.len());
    for dir in &dirs {
        let mut qs = Vec::with_capacity(params.n_sub);
        let mut ts = Vec::with_capacity(params.n_sub);
        for n in 0..params.n_sub {
            let sigma_rx = sigma_node_expr(params, ch, dir.rx(), n)?.evaluate(&state.design);
            let eve = sigma_eve_expr(params, ch, n).plus(&signal_expr(params, ch, dir.tx, true, n)?);
            qs.push(sigma_rx.psd_inverse(0.0).map_err(pd_error("receiver covariance"))?);
            ts.push(eve.evaluate(&state.design).psd_inverse(0.0).map_err(pd_error("Eve covariance"))?);
        }
        aux_q.push(qs);
        aux_t.push(ts);
    }
    state.aux_q = aux_q;
    state.aux_t = aux_t;
    Ok(unclamped_objective(params, ch, &state.design)?)
}

/// The surrogate objective at `design` for the auxiliaries held in `state`,
/// evaluated directly.
pub fn surrogate_objective(
    params: &SystemParams,
    ch: &ChannelRealization,
    design: &TransmitDesign,
    state: &BcdState,
) -> Result<f64, BcdError> {
    let logdet = |m: &HermitianMatrix| m.logdet().map_err(pd_error("surrogate term"));
    let mut total = 0.0;
    for (k, dir) in directions(params).iter().enumerate() {
        for n in 0..params.n_sub {
            let sigma_rx = sigma_node_expr(params, ch, dir.rx(), n)?.evaluate(design);
            let theta_rx = signal_expr(params, ch, dir.tx, false, n)?.evaluate(design);
            let sigma_e = sigma_eve_expr(params, ch, n).evaluate(design);
            let theta_e = signal_expr(params, ch, dir.tx, true, n)?.evaluate(design);
            let (q, t) = (&state.aux_q[k][n], &state.aux_t[k][n]);
            total += logdet(&sigma_rx.add(&theta_rx))? + logdet(&sigma_e)?;
            total += logdet(t)? - t.trace_product(&sigma_e.add(&theta_e)) + params.m_e as f64;
            total += logdet(q)? - q.trace_product(&sigma_rx) + q.dim() as f64;
        }
    }
    Ok(total)
}

fn block_dim(params: &SystemParams, b: Block) -> usize {
    match b.node() {
        crate::system::Node::Alice => params.alice_tx(),
        crate::system::Node::Bob => params.m_bt,
    }
}

/// Blocks the subproblem treats as variables.
pub fn variable_blocks(params: &SystemParams, free: &FreeBlocks) -> Vec<Block> {
    let groups = budget_groups(params);
    Block::ALL
        .into_iter()
        .filter(|&b| free.get(b))
        .filter(|&b| groups.iter().any(|(blocks, budget, _)| blocks.contains(&b) && *budget > 0.0))
        .collect()
}

/// A subproblem together with the design entry behind each variable.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub problem: MaxDetProblem,
    pub slots: Vec<(Block, usize)>,
}

impl Subproblem {
    pub fn start(&self, design: &TransmitDesign) -> Vec<HermitianMatrix> {
        self.slots.iter().map(|&(b, n)| design.block(b)[n].clone()).collect()
    }

    pub fn write_back(&self, design: &mut TransmitDesign, vars: Vec<HermitianMatrix>) {
        for (&(b, n), v) in self.slots.iter().zip(vars) {
            design.block_mut(b)[n] = v;
        }
    }
}

/// Builds the surrogate log-det problem for the auxiliaries in `state`.
pub fn build_subproblem(
    params: &SystemParams,
    ch: &ChannelRealization,
    state: &BcdState,
    free: &FreeBlocks,
) -> Result<Subproblem, BcdError> {
    let design = &state.design;
    let mut problem = MaxDetProblem::default();
    let mut slots = Vec::new();
    let mut index = HashMap::new();
    let var_blocks = variable_blocks(params, free);
    for &b in &var_blocks {
        for n in 0..params.n_sub {
            let v = problem.add_variable(format!("{}[{n}]", b.name()), block_dim(params, b));
            index.insert((b, n), v);
            slots.push((b, n));
        }
    }
    let var_of = |b: Block, n: usize| index.get(&(b, n)).copied();

    let dirs: Vec<Direction> = directions(params);
    for n in 0..params.n_sub {
        let sigma_e = sigma_eve_expr(params, ch, n);
        problem.logdet_terms.push(LogDetTerm { weight: dirs.len() as f64, map: sigma_e.lower(design, var_of) });
        for (k, dir) in dirs.iter().enumerate() {
            let sigma_rx = sigma_node_expr(params, ch, dir.rx(), n)?;
            let with_signal = sigma_rx.clone().plus(&signal_expr(params, ch, dir.tx, false, n)?);
            problem.logdet_terms.push(LogDetTerm { weight: 1.0, map: with_signal.lower(design, var_of) });

            let eve_total = sigma_e.clone().plus(&signal_expr(params, ch, dir.tx, true, n)?);
            for (aux, expr) in [(&state.aux_t[k][n], eve_total), (&state.aux_q[k][n], sigma_rx)] {
                let map = expr.lower(design, var_of);
                problem.offset += aux.logdet().map_err(pd_error("auxiliary"))? + aux.dim() as f64;
                problem.offset -= aux.trace_product(&map.constant);
                for (var, op) in &map.parts {
                    let coeff = op.adjoint(aux, problem.variables[*var].dim);
                    problem.linear_terms.push(LinearTerm { var: *var, coeff });
                }
            }
        }
    }

    for (blocks, budget, _) in budget_groups(params) {
        let vars: Vec<usize> =
            slots.iter().enumerate().filter(|(_, (b, _))| blocks.contains(b)).map(|(i, _)| i).collect();
        if vars.is_empty() {
            continue;
        }
        let fixed: f64 = blocks.iter().filter(|b| !var_blocks.contains(b)).map(|&b| design.power(b)).sum();
        problem.budgets.push(Budget { vars, budget: (budget - fixed).max(0.0) });
    }
    Ok(Subproblem { problem, slots })
}

fn check_mode(params: &SystemParams, want: LinkMode) -> Result<(), BcdError> {
    if params.mode != want {
        return Err(BcdError::WrongMode(format!("expected {want:?}, parameters are {:?}", params.mode)));
    }
    Ok(())
}

fn run(
    params: &SystemParams,
    ch: &ChannelRealization,
    init: TransmitDesign,
    opts: &BcdOptions,
) -> Result<BcdOutcome, BcdError> {
    init.validate(params, 1e-6)?;
    let mut state = BcdState::new(init);
    let mut f = update_auxiliaries(&mut state, params, ch)?;
    state.trace.push(f);
    let mut status = BcdStatus::StalledBelowTolerance;

    for _ in 0..opts.max_outer {
        let sub = build_subproblem(params, ch, &state, &opts.free)?;
        if sub.slots.is_empty() {
            status = BcdStatus::Converged;
            break;
        }
        let start = sub.start(&state.design);
        let (vars, rep) = maxdet::solve(&sub.problem, &start, &opts.solver)?;
        state.inner_iterations += rep.iterations;
        let mut next = state.design.clone();
        sub.write_back(&mut next, vars);
        let previous = std::mem::replace(&mut state.design, next);
        let f_new = match update_auxiliaries(&mut state, params, ch) {
            Ok(v) => v,
            Err(e) => {
                state.design = previous;
                return Err(e);
            }
        };
        state.iterations += 1;
        state.trace.push(f_new);
        let change = (f_new - f).abs();
        f = f_new;
        if change < opts.outer_tol * f.abs().max(1e-6) {
            status = BcdStatus::Converged;
            break;
        }
    }

    let report = secrecy_rates(params, ch, &state.design)?;
    Ok(BcdOutcome { design: state.design.clone(), report, state, status })
}

/// Optimizes the one-way system from `init`.
pub fn optimize(
    params: &SystemParams,
    ch: &ChannelRealization,
    init: TransmitDesign,
    opts: &BcdOptions,
) -> Result<BcdOutcome, BcdError> {
    check_mode(params, LinkMode::OneWay)?;
    run(params, ch, init, opts)
}

/// Optimizes the two-way system from `init`.
pub fn optimize_bidirectional(
    params: &SystemParams,
    ch: &ChannelRealization,
    init: TransmitDesign,
    opts: &BcdOptions,
) -> Result<BcdOutcome, BcdError> {
    check_mode(params, LinkMode::TwoWay)?;
    run(params, ch, init, opts)
}

/// Optimizes whichever system `params` describes.
pub fn optimize_any(
    params: &SystemParams,
    ch: &ChannelRealization,
    init: TransmitDesign,
    opts: &BcdOptions,
) -> Result<BcdOutcome, BcdError> {
    run(params, ch, init, opts)
}

fn uniform_blocks(n_sub: usize, dim: usize, power: f64) -> Vec<HermitianMatrix> {
    vec![HermitianMatrix::scaled_identity(dim, power / (n_sub * dim) as f64); n_sub]
}

/// `X = X_max / (N M_a) I` on every subcarrier and no jamming.
pub fn init_uniform(params: &SystemParams) -> TransmitDesign {
    init_uniform_jamming(params, 0.0)
}

/// As [`init_uniform`] with `W = eps I`.
pub fn init_uniform_jamming(params: &SystemParams, eps: f64) -> TransmitDesign {
    let mut d = TransmitDesign::zeros(params);
    d.alice_info = uniform_blocks(params.n_sub, params.alice_tx(), params.x_max);
    d.bob_jam = vec![HermitianMatrix::scaled_identity(params.m_bt, eps); params.n_sub];
    d
}

/// The `eps` that spends the whole jamming budget uniformly.
pub fn full_jamming_eps(params: &SystemParams) -> f64 {
    params.w_max / (params.n_sub * params.m_bt) as f64
}

/// Two-way uniform start: each node's information covariance spends its
/// whole budget uniformly, jamming starts at zero.
pub fn init_uniform_bidirectional(params: &SystemParams) -> TransmitDesign {
    let mut d = TransmitDesign::zeros(params);
    d.alice_info = uniform_blocks(params.n_sub, params.alice_tx(), params.p_a_max);
    d.bob_info = uniform_blocks(params.n_sub, params.m_bt, params.p_b_max);
    d
}

/// Unit vector maximizing `(|F u|^2 + nu_f) / (|G u|^2 + nu_g)`.
pub fn optimal_beam(f: &CMatrix, g: &CMatrix, nu_f: f64, nu_g: f64) -> Result<CVector, BcdError> {
    if f.ncols() != g.ncols() {
        return Err(BcdError::System(SystemError::DimensionMismatch("beam channels differ in width".into())));
    }
    if f.iter().all(|z| z.norm() == 0.0) && g.iter().all(|z| z.norm() == 0.0) {
        return Err(BcdError::DegenerateChannel("desired and undesired channels are both zero".into()));
    }
    let dim = f.ncols();
    let a = HermitianMatrix::identity(f.nrows()).adjoint_congruence(f).add_scaled_identity(nu_f);
    let b = HermitianMatrix::identity(g.nrows()).adjoint_congruence(g).add_scaled_identity(nu_g);
    let chol = b.cholesky().map_err(|_| BcdError::DegenerateChannel("undesired quadratic form is singular".into()))?;
    let l_inv = chol.l_inverse();
    let whitened = a.congruence(&l_inv);
    let y = dominant_eigenvector(&whitened).vector;
    let u = l_inv.adjoint() * y;
    let norm = u.norm();
    if norm == 0.0 || dim == 0 {
        return Err(BcdError::DegenerateChannel("beam has zero norm".into()));
    }
    Ok(crate::numerics::fix_phase(u.unscale(norm)))
}

/// Effective self-interference matrix: `tr(H~ W)` is the distortion power
/// the jamming covariance `W` causes at Bob on its own subcarrier.
pub fn self_interference_gram(params: &SystemParams, ch: &ChannelRealization, n: usize) -> HermitianMatrix {
    let h = &ch.sub(n).h_bb;
    let hh = HermitianMatrix::identity(h.nrows()).adjoint_congruence(h);
    hh.diag_part()
        .scale(params.bob.kappa[n])
        .add(&hh.scale(params.bob.beta[n]))
        .add_scaled_identity(params.bob.csi_corr[n].trace())
}

/// Rank-one beams on every subcarrier: the information beam points to Bob
/// away from Eve, the jamming beam points to Eve away from Bob's
/// self-interference. Each budget is split equally across subcarriers.
pub fn init_optimal_beam(params: &SystemParams, ch: &ChannelRealization) -> Result<TransmitDesign, BcdError> {
    check_mode(params, LinkMode::OneWay)?;
    let n_sub = params.n_sub;
    let mut d = TransmitDesign::zeros(params);
    for n in 0..n_sub {
        let s = ch.sub(n);
        let ux = optimal_beam(&s.h_ab, &s.h_ae, params.noise_b[n], params.noise_e[n])?;
        d.alice_info[n] = HermitianMatrix::outer(&ux).scale(params.x_max / n_sub as f64);
        if params.w_max > 0.0 {
            let g = self_interference_gram(params, ch, n).sqrt_psd();
            let uw = optimal_beam(&s.h_be, g.as_matrix(), params.noise_e[n], params.noise_b[n])?;
            d.bob_jam[n] = HermitianMatrix::outer(&uw).scale(params.w_max / n_sub as f64);
        }
    }
    Ok(d)
}

fn wishart<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> HermitianMatrix {
    HermitianMatrix::gram(&complex_gaussian(rng, dim, dim, 1.0))
}

/// Random start: Wishart draws on every free active block. Blocks sharing
/// a budget are scaled together so the budget is spent exactly; other
/// blocks keep their value from `base`.
pub fn init_random<R: Rng + ?Sized>(
    params: &SystemParams,
    base: &TransmitDesign,
    free: &FreeBlocks,
    rng: &mut R,
) -> TransmitDesign {
    let mut d = base.clone();
    let var_blocks = variable_blocks(params, free);
    for (blocks, budget, _) in budget_groups(params) {
        let drawn: Vec<Block> = blocks.iter().copied().filter(|b| var_blocks.contains(b)).collect();
        if drawn.is_empty() {
            continue;
        }
        let fixed: f64 = blocks.iter().filter(|b| !drawn.contains(b)).map(|&b| d.power(b)).sum();
        let mut total = 0.0;
        for &b in &drawn {
            let dim = block_dim(params, b);
            let covs: Vec<HermitianMatrix> = (0..params.n_sub).map(|_| wishart(rng, dim)).collect();
            // equal split across subcarriers
            let covs: Vec<HermitianMatrix> = covs.iter().map(|m| m.scale(1.0 / m.trace().max(1e-300))).collect();
            total += params.n_sub as f64;
            *d.block_mut(b) = covs;
        }
        let scale = (budget - fixed).max(0.0) / total;
        for &b in &drawn {
            let scaled = d.block(b).iter().map(|m| m.scale(scale)).collect();
            *d.block_mut(b) = scaled;
        }
    }
    d
}

/// Best of `restarts` runs from random starts; restart `r` draws from
/// stream `INIT_STREAM_BASE + r` of `seed`. Runs that fail numerically are
/// skipped; the error of the last failure is returned when all fail.
pub fn benchmark(
    params: &SystemParams,
    ch: &ChannelRealization,
    base: &TransmitDesign,
    opts: &BcdOptions,
    restarts: usize,
    seed: u64,
) -> Result<BcdOutcome, BcdError> {
    let mut best: Option<BcdOutcome> = None;
    let mut last_err = None;
    for r in 0..restarts {
        let mut rng = stream(seed, INIT_STREAM_BASE + r as u64);
        let init = init_random(params, base, &opts.free, &mut rng);
        match run(params, ch, init, opts) {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.report.i_sum > b.report.i_sum) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| BcdError::Solver(MaxDetError::InvalidProblem("no restarts requested".into())))
    })
}
