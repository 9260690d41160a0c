//! Determinant maximization over Hermitian PSD matrix variables.
//!
//! Problems have the form
//!
//! ```text
//! maximize   offset + sum_k w_k log|Y_k(V)| - sum_j tr(C_j V_j)
//! subject to V_i PSD,   sum_{i in S_c} tr(V_i) <= b_c
//! ```
//!
//! where each `Y_k` is affine in the variables. The solver is a primal
//! log-barrier method: Newton centering on `f + mu * barrier` for a
//! decreasing sequence of `mu`, on the real coordinates of the Hermitian
//! variables. A step is accepted only if it increases the barrier objective
//! and does not decrease `f`, so the objective along accepted iterates is
//! monotone. The reported residual is the duality gap bound `nu * mu` of the
//! last centered point plus the remaining Newton decrement.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numerics::{c, trace_product, CMatrix, CholeskyFactor, HermitianMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaxDetError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("infeasible start: {0}")]
    InfeasibleStart(String),
    #[error("numerical trouble: {0}")]
    NumericalTrouble(String),
}

/// Linear maps from a `d x d` Hermitian variable to an `m x m` Hermitian
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum MapOp {
    /// `scale * A V A^H`, with `A` of size `m x d`.
    Congruence { a: CMatrix, scale: f64 },
    /// `scale * B diag(V) B^H`, with `B` of size `m x d`.
    DiagCongruence { b: CMatrix, scale: f64 },
    /// `scale * diag(A V A^H)`, with `A` of size `m x d`.
    CongruenceDiag { a: CMatrix, scale: f64 },
    /// `tr(V) * D`, with `D` of size `m x m`. Accepts any input size.
    TraceTimes { d: HermitianMatrix },
}

impl MapOp {
    pub fn congruence(a: CMatrix) -> Self {
        MapOp::Congruence { a, scale: 1.0 }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            MapOp::Congruence { a, .. } | MapOp::CongruenceDiag { a, .. } => a.nrows(),
            MapOp::DiagCongruence { b, .. } => b.nrows(),
            MapOp::TraceTimes { d } => d.dim(),
        }
    }

    pub fn in_dim(&self) -> Option<usize> {
        match self {
            MapOp::Congruence { a, .. } | MapOp::CongruenceDiag { a, .. } => Some(a.ncols()),
            MapOp::DiagCongruence { b, .. } => Some(b.ncols()),
            MapOp::TraceTimes { .. } => None,
        }
    }

    /// Skips the zero-coefficient case so fixed-zero terms cost nothing.
    pub fn is_zero(&self) -> bool {
        match self {
            MapOp::Congruence { scale, .. }
            | MapOp::DiagCongruence { scale, .. }
            | MapOp::CongruenceDiag { scale, .. } => *scale == 0.0,
            MapOp::TraceTimes { d } => d.as_matrix().iter().all(|z| z.norm() == 0.0),
        }
    }

    fn apply_raw(&self, v: &CMatrix) -> CMatrix {
        match self {
            MapOp::Congruence { a, scale } => (a * v * a.adjoint()).scale(*scale),
            MapOp::DiagCongruence { b, scale } => {
                let dv = CMatrix::from_diagonal(&v.diagonal());
                (b * dv * b.adjoint()).scale(*scale)
            }
            MapOp::CongruenceDiag { a, scale } => {
                let full = a * v * a.adjoint();
                CMatrix::from_diagonal(&full.diagonal()).scale(*scale)
            }
            MapOp::TraceTimes { d } => {
                let tr = v.diagonal().iter().map(|z| z.re).sum::<f64>();
                d.as_matrix().scale(tr)
            }
        }
    }

    pub fn apply(&self, v: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrize(self.apply_raw(v.as_matrix()))
    }

    /// The adjoint map: `tr(G op(V)) = tr(op*(G) V)` for all `V`.
    pub fn adjoint(&self, g: &HermitianMatrix, in_dim: usize) -> HermitianMatrix {
        let gm = g.as_matrix();
        let out = match self {
            MapOp::Congruence { a, scale } => (a.adjoint() * gm * a).scale(*scale),
            MapOp::DiagCongruence { b, scale } => {
                let full = b.adjoint() * gm * b;
                CMatrix::from_diagonal(&full.diagonal()).scale(*scale)
            }
            MapOp::CongruenceDiag { a, scale } => {
                let dg = CMatrix::from_diagonal(&gm.diagonal());
                (a.adjoint() * dg * a).scale(*scale)
            }
            MapOp::TraceTimes { d } => CMatrix::identity(in_dim, in_dim).scale(g.trace_product(d)),
        };
        HermitianMatrix::symmetrize(out)
    }
}

/// `constant + sum over parts of op(V_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub constant: HermitianMatrix,
    pub parts: Vec<(usize, MapOp)>,
}

impl AffineMap {
    pub fn constant(constant: HermitianMatrix) -> Self {
        Self { constant, parts: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.constant.dim()
    }

    pub fn push(&mut self, var: usize, op: MapOp) {
        if !op.is_zero() {
            self.parts.push((var, op));
        }
    }

    pub fn evaluate(&self, vars: &[HermitianMatrix]) -> HermitianMatrix {
        let mut acc = self.constant.as_matrix().clone();
        for (var, op) in &self.parts {
            acc += op.apply_raw(vars[*var].as_matrix());
        }
        HermitianMatrix::symmetrize(acc)
    }
}

/// Contributes `weight * log|map(V)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogDetTerm {
    pub weight: f64,
    pub map: AffineMap,
}

/// Contributes `-tr(coeff * V_var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearTerm {
    pub var: usize,
    pub coeff: HermitianMatrix,
}

/// `sum_{i in vars} tr(V_i) <= budget`.
#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    pub vars: Vec<usize>,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaxDetProblem {
    pub variables: Vec<Variable>,
    pub logdet_terms: Vec<LogDetTerm>,
    pub linear_terms: Vec<LinearTerm>,
    pub budgets: Vec<Budget>,
    /// Constant added to the objective.
    pub offset: f64,
}

impl MaxDetProblem {
    pub fn add_variable(&mut self, name: impl Into<String>, dim: usize) -> usize {
        self.variables.push(Variable { name: name.into(), dim });
        self.variables.len() - 1
    }

    pub fn validate(&self) -> Result<(), MaxDetError> {
        let bad = |s: String| Err(MaxDetError::InvalidProblem(s));
        for (i, v) in self.variables.iter().enumerate() {
            if v.dim == 0 {
                return bad(format!("variable {i} ({}) has dimension zero", v.name));
            }
        }
        for (k, term) in self.logdet_terms.iter().enumerate() {
            if term.weight.is_nan() || term.weight <= 0.0 {
                return bad(format!("log-det term {k} needs a positive weight"));
            }
            for (var, op) in &term.map.parts {
                let Some(v) = self.variables.get(*var) else {
                    return bad(format!("log-det term {k} references unknown variable {var}"));
                };
                if op.out_dim() != term.map.dim() || op.in_dim().is_some_and(|d| d != v.dim) {
                    return bad(format!("log-det term {k}: map shape does not match variable {}", v.name));
                }
            }
        }
        for (j, lin) in self.linear_terms.iter().enumerate() {
            match self.variables.get(lin.var) {
                Some(v) if v.dim == lin.coeff.dim() => {}
                _ => return bad(format!("linear term {j} has a mismatched coefficient")),
            }
        }
        for (c, b) in self.budgets.iter().enumerate() {
            if !b.budget.is_finite() || b.budget <= 0.0 {
                return bad(format!("budget {c} must be strictly positive"));
            }
            if b.vars.iter().any(|&v| v >= self.variables.len()) {
                return bad(format!("budget {c} references an unknown variable"));
            }
        }
        Ok(())
    }

    /// Objective value; fails if a log-det argument is not positive definite.
    pub fn objective(&self, vars: &[HermitianMatrix]) -> Result<f64, MaxDetError> {
        let mut f = self.offset;
        for (k, term) in self.logdet_terms.iter().enumerate() {
            let y = term.map.evaluate(vars);
            let ld = y
                .logdet()
                .map_err(|_| MaxDetError::NumericalTrouble(format!("log-det term {k} is not positive definite")))?;
            f += term.weight * ld;
        }
        for lin in &self.linear_terms {
            f -= lin.coeff.trace_product(&vars[lin.var]);
        }
        Ok(f)
    }

    /// Gradient with respect to each variable, as Hermitian matrices `G_i`
    /// with `df = sum_i Re tr(G_i dV_i)`.
    pub fn gradient(&self, vars: &[HermitianMatrix]) -> Result<Vec<HermitianMatrix>, MaxDetError> {
        let mut grads: Vec<HermitianMatrix> = self.variables.iter().map(|v| HermitianMatrix::zeros(v.dim)).collect();
        for (k, term) in self.logdet_terms.iter().enumerate() {
            let y = term.map.evaluate(vars);
            let yinv = y
                .psd_inverse(0.0)
                .map_err(|_| MaxDetError::NumericalTrouble(format!("log-det term {k} is not positive definite")))?;
            for (var, op) in &term.map.parts {
                let g = op.adjoint(&yinv, self.variables[*var].dim).scale(term.weight);
                grads[*var].add_assign(&g);
            }
        }
        for lin in &self.linear_terms {
            grads[lin.var] = grads[lin.var].sub(&lin.coeff);
        }
        Ok(grads)
    }

    pub fn budget_slacks(&self, vars: &[HermitianMatrix]) -> Vec<f64> {
        self.budgets.iter().map(|b| b.budget - b.vars.iter().map(|&v| vars[v].trace()).sum::<f64>()).collect()
    }

    /// Real dimension of the variable space.
    pub fn real_dim(&self) -> usize {
        self.variables.iter().map(|v| v.dim * v.dim).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Maximum number of Newton steps.
    pub max_iter: usize,
    /// Target for the duality gap bound.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIter,
    NumericalTrouble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    /// Objective at the returned point.
    pub objective: f64,
    /// Objective at the caller's starting point.
    pub initial_objective: f64,
    /// Newton steps taken.
    pub iterations: usize,
    /// Duality gap bound compared against the tolerance.
    pub residual: f64,
    pub status: SolverStatus,
    /// Objective of the best iterate so far after every accepted step,
    /// starting at the interior start.
    pub trace: Vec<f64>,
    /// True when the solver's own iterate was worse than the starting point
    /// and the starting point was returned instead.
    pub kept_initial: bool,
}

/// `sqrt(n) (n^2 + n_y^2) n_f^2`, the per-iteration cost order of a
/// MAX-DET interior-point step.
pub fn complexity_bound(n: usize, n_y: usize, n_f: usize) -> f64 {
    let (n, n_y, n_f) = (n as f64, n_y as f64, n_f as f64);
    n.sqrt() * (n * n + n_y * n_y) * n_f * n_f
}

/// [`complexity_bound`] with `n` the real variable count, `n_y` the total
/// size of the log-det blocks and `n_f` the total size of the PSD and budget
/// constraints.
pub fn complexity_estimate(prob: &MaxDetProblem) -> f64 {
    let n = prob.real_dim();
    let n_y = prob.logdet_terms.iter().map(|t| t.map.dim()).sum();
    let n_f = prob.variables.iter().map(|v| v.dim).sum::<usize>() + prob.budgets.len();
    complexity_bound(n, n_y, n_f)
}

// ---------------------------------------------------------------------------
// Real coordinates of Hermitian matrices.
//
// For dimension d the coordinates are the d diagonal entries followed by the
// real and imaginary parts of each strictly upper entry (row-major).

fn dof_count(d: usize) -> usize {
    d * d
}

fn basis_matrix(d: usize, idx: usize) -> CMatrix {
    let mut e = CMatrix::zeros(d, d);
    if idx < d {
        e[(idx, idx)] = c(1.0, 0.0);
        return e;
    }
    let (k, l, imag) = off_diagonal(d, idx);
    if imag {
        e[(k, l)] = c(0.0, 1.0);
        e[(l, k)] = c(0.0, -1.0);
    } else {
        e[(k, l)] = c(1.0, 0.0);
        e[(l, k)] = c(1.0, 0.0);
    }
    e
}

fn off_diagonal(d: usize, idx: usize) -> (usize, usize, bool) {
    let mut r = idx - d;
    let imag = r % 2 == 1;
    r /= 2;
    for k in 0..d {
        let row = d - k - 1;
        if r < row {
            return (k, k + 1 + r, imag);
        }
        r -= row;
    }
    unreachable!("coordinate index out of range")
}

fn to_coords(v: &HermitianMatrix, out: &mut Vec<f64>) {
    let m = v.as_matrix();
    let d = v.dim();
    for k in 0..d {
        out.push(m[(k, k)].re);
    }
    for k in 0..d {
        for l in (k + 1)..d {
            out.push(m[(k, l)].re);
            out.push(m[(k, l)].im);
        }
    }
}

fn from_coords(d: usize, z: &[f64]) -> HermitianMatrix {
    let mut m = CMatrix::zeros(d, d);
    for k in 0..d {
        m[(k, k)] = c(z[k], 0.0);
    }
    let mut idx = d;
    for k in 0..d {
        for l in (k + 1)..d {
            m[(k, l)] = c(z[idx], z[idx + 1]);
            m[(l, k)] = c(z[idx], -z[idx + 1]);
            idx += 2;
        }
    }
    HermitianMatrix::symmetrize(m)
}

/// A log-det term in coordinates: `Y(z) = constant + sum_a z_a M_a`.
struct CoordTerm {
    weight: f64,
    constant: CMatrix,
    coeffs: Vec<(usize, CMatrix)>,
}

impl CoordTerm {
    fn evaluate(&self, z: &[f64]) -> CMatrix {
        let mut y = self.constant.clone();
        for (a, m) in &self.coeffs {
            if z[*a] != 0.0 {
                y += m.scale(z[*a]);
            }
        }
        y
    }
}

struct Compiled {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
    objective_terms: Vec<CoordTerm>,
    barrier_terms: Vec<CoordTerm>,
    linear: Vec<f64>,
    offset: f64,
    nu: f64,
}

impl Compiled {
    fn new(prob: &MaxDetProblem) -> Self {
        let dims: Vec<usize> = prob.variables.iter().map(|v| v.dim).collect();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut n = 0;
        for &d in &dims {
            offsets.push(n);
            n += dof_count(d);
        }
        let bases: Vec<Vec<CMatrix>> =
            dims.iter().map(|&d| (0..dof_count(d)).map(|i| basis_matrix(d, i)).collect()).collect();

        let offsets_ref = &offsets;
        let objective_terms = prob
            .logdet_terms
            .iter()
            .map(|term| {
                let m = term.map.dim();
                let mut per_var: Vec<Option<Vec<CMatrix>>> = vec![None; dims.len()];
                for (var, op) in &term.map.parts {
                    let slot = per_var[*var].get_or_insert_with(|| vec![CMatrix::zeros(m, m); bases[*var].len()]);
                    for (acc, e) in slot.iter_mut().zip(&bases[*var]) {
                        *acc += op.apply_raw(e);
                    }
                }
                let coeffs = per_var
                    .into_iter()
                    .enumerate()
                    .filter_map(|(var, mats)| mats.map(|ms| (var, ms)))
                    .flat_map(|(var, ms)| {
                        let base = offsets_ref[var];
                        ms.into_iter().enumerate().map(move |(i, m)| (base + i, m))
                    })
                    .filter(|(_, m)| m.iter().any(|z| z.norm() > 0.0))
                    .collect();
                CoordTerm { weight: term.weight, constant: term.map.constant.as_matrix().clone(), coeffs }
            })
            .collect();

        let mut barrier_terms: Vec<CoordTerm> = dims
            .iter()
            .enumerate()
            .map(|(var, &d)| CoordTerm {
                weight: 1.0,
                constant: CMatrix::zeros(d, d),
                coeffs: bases[var].iter().enumerate().map(|(i, e)| (offsets[var] + i, e.clone())).collect(),
            })
            .collect();
        for b in &prob.budgets {
            let mut coeffs = Vec::new();
            for &var in &b.vars {
                for k in 0..dims[var] {
                    coeffs.push((offsets[var] + k, CMatrix::from_element(1, 1, c(-1.0, 0.0))));
                }
            }
            barrier_terms.push(CoordTerm {
                weight: 1.0,
                constant: CMatrix::from_element(1, 1, c(b.budget, 0.0)),
                coeffs,
            });
        }

        let mut linear = vec![0.0; n];
        for lin in &prob.linear_terms {
            for (i, e) in bases[lin.var].iter().enumerate() {
                linear[offsets[lin.var] + i] += trace_product(lin.coeff.as_matrix(), e);
            }
        }
        let nu = dims.iter().sum::<usize>() as f64 + prob.budgets.len() as f64;
        Compiled { dims, offsets, n, objective_terms, barrier_terms, linear, offset: prob.offset, nu }
    }

    fn coords(&self, vars: &[HermitianMatrix]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.n);
        for v in vars {
            to_coords(v, &mut z);
        }
        z
    }

    fn matrices(&self, z: &[f64]) -> Vec<HermitianMatrix> {
        self.dims.iter().zip(&self.offsets).map(|(&d, &o)| from_coords(d, &z[o..o + dof_count(d)])).collect()
    }

    fn objective(&self, z: &[f64]) -> Option<f64> {
        let mut f = self.offset - self.linear.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        for t in &self.objective_terms {
            f += t.weight * CholeskyFactor::new(&t.evaluate(z)).ok()?.logdet();
        }
        Some(f)
    }

    fn barrier(&self, z: &[f64]) -> Option<f64> {
        let mut b = 0.0;
        for t in &self.barrier_terms {
            b += CholeskyFactor::new(&t.evaluate(z)).ok()?.logdet();
        }
        Some(b)
    }

    /// Adds `scale * (gradient, Hessian)` of the weighted log-det terms.
    fn accumulate(
        terms: &[CoordTerm],
        scale: f64,
        z: &[f64],
        grad: &mut DVector<f64>,
        hess: &mut DMatrix<f64>,
    ) -> Option<()> {
        for t in terms {
            let w = scale * t.weight;
            let yinv = CholeskyFactor::new(&t.evaluate(z)).ok()?.inverse().into_matrix();
            let s: Vec<(usize, CMatrix)> = t.coeffs.iter().map(|(a, m)| (*a, &yinv * m)).collect();
            for (i, (a, sa)) in s.iter().enumerate() {
                grad[*a] += w * sa.diagonal().iter().map(|z| z.re).sum::<f64>();
                for (b, sb) in &s[i..] {
                    let h = w * trace_product(sa, sb);
                    hess[(*a, *b)] -= h;
                    if a != b {
                        hess[(*b, *a)] -= h;
                    }
                }
            }
        }
        Some(())
    }

    fn objective_derivatives(&self, z: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut g = DVector::from_iterator(self.n, self.linear.iter().map(|x| -x));
        let mut h = DMatrix::zeros(self.n, self.n);
        Self::accumulate(&self.objective_terms, 1.0, z, &mut g, &mut h)?;
        Some((g, h))
    }

    fn barrier_derivatives(&self, z: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let mut g = DVector::zeros(self.n);
        let mut h = DMatrix::zeros(self.n, self.n);
        Self::accumulate(&self.barrier_terms, 1.0, z, &mut g, &mut h)?;
        Some((g, h))
    }
}

/// Strictly feasible start derived from a feasible point: every variable is
/// shrunk by 0.999 and lifted by a small multiple of the identity.
fn interior_start(prob: &MaxDetProblem, vars: &[HermitianMatrix]) -> Vec<HermitianMatrix> {
    let mut lift: Vec<Option<f64>> = vec![None; vars.len()];
    for b in &prob.budgets {
        let total_dim: usize = b.vars.iter().map(|&v| prob.variables[v].dim).sum();
        let delta = 5e-4 * b.budget / total_dim.max(1) as f64;
        for &v in &b.vars {
            lift[v] = Some(lift[v].map_or(delta, |d: f64| d.min(delta)));
        }
    }
    vars.iter()
        .zip(lift)
        .map(|(v, l)| {
            let delta = l.unwrap_or_else(|| 1e-3 * (v.trace() / v.dim() as f64).max(1.0));
            v.clip_psd().scale(0.999).add_scaled_identity(delta)
        })
        .collect()
}

fn check_start(prob: &MaxDetProblem, initial: &[HermitianMatrix]) -> Result<(), MaxDetError> {
    if initial.len() != prob.variables.len() {
        return Err(MaxDetError::InvalidProblem(format!(
            "expected {} starting matrices, got {}",
            prob.variables.len(),
            initial.len()
        )));
    }
    for (v, spec) in initial.iter().zip(&prob.variables) {
        if v.dim() != spec.dim {
            return Err(MaxDetError::InvalidProblem(format!("starting matrix for {} has the wrong size", spec.name)));
        }
        let scale = v.max_eigenvalue().abs().max(1.0);
        if v.min_eigenvalue() < -1e-9 * scale {
            return Err(MaxDetError::InfeasibleStart(format!("{} is not PSD", spec.name)));
        }
    }
    for (slack, b) in prob.budget_slacks(initial).iter().zip(&prob.budgets) {
        if *slack < -1e-8 * b.budget.max(1.0) {
            return Err(MaxDetError::InfeasibleStart(format!("budget {} exceeded by {:e}", b.budget, -slack)));
        }
    }
    Ok(())
}

const MU_SHRINK: f64 = 0.1;
const ARMIJO: f64 = 0.01;
const CENTERING_TOL: f64 = 1e-7;
const MIN_STEP: f64 = 1e-10;

/// Maximizes `prob` from the feasible point `initial`.
///
/// The returned point is PSD, satisfies every budget, and has an objective
/// no lower than the objective at `initial`.
pub fn solve(
    prob: &MaxDetProblem,
    initial: &[HermitianMatrix],
    opts: &SolverOptions,
) -> Result<(Vec<HermitianMatrix>, SolverReport), MaxDetError> {
    prob.validate()?;
    check_start(prob, initial)?;
    let exact_start: Vec<HermitianMatrix> = initial.iter().map(|v| v.clip_psd()).collect();
    let initial_objective = prob.objective(&exact_start).map_err(|e| MaxDetError::InfeasibleStart(e.to_string()))?;

    if prob.variables.is_empty() {
        let report = SolverReport {
            objective: initial_objective,
            initial_objective,
            iterations: 0,
            residual: 0.0,
            status: SolverStatus::Converged,
            trace: vec![initial_objective],
            kept_initial: true,
        };
        return Ok((exact_start, report));
    }

    let compiled = Compiled::new(prob);
    let start = interior_start(prob, &exact_start);
    let mut z = compiled.coords(&start);
    let mut f = compiled
        .objective(&z)
        .ok_or_else(|| MaxDetError::InfeasibleStart("log-det argument singular at the interior start".into()))?;
    if compiled.barrier(&z).is_none() {
        return Err(MaxDetError::InfeasibleStart("no strictly feasible start".into()));
    }
    let mut trace = vec![f];
    let (mut best_z, mut best_f) = (z.clone(), f);

    let mut mu = initial_mu(&compiled, &z, opts.tol).max(0.1 * (1.0 + f.abs()) / compiled.nu);
    let mu_floor = opts.tol / compiled.nu * 1e-3;
    let mut iterations = 0;
    let status;
    let mut residual = f64::INFINITY;

    'outer: loop {
        let mut centered = false;
        let mut decrement = f64::INFINITY;
        while iterations < opts.max_iter {
            let (Some((gf, hf)), Some((gb, hb))) =
                (compiled.objective_derivatives(&z), compiled.barrier_derivatives(&z))
            else {
                status = SolverStatus::NumericalTrouble;
                break 'outer;
            };
            let g = &gf + gb.scale(mu);
            let neg_h = -(&hf + hb.scale(mu));
            let Some(step) = newton_step(neg_h, &g) else {
                status = SolverStatus::NumericalTrouble;
                break 'outer;
            };
            decrement = g.dot(&step);
            if !decrement.is_finite() {
                return Err(MaxDetError::NumericalTrouble("non-finite Newton decrement".into()));
            }
            if decrement / (2.0 * mu) <= CENTERING_TOL || decrement <= 1e-3 * opts.tol {
                centered = true;
                break;
            }
            let phi = f + mu * compiled.barrier(&z).unwrap_or(f64::NEG_INFINITY);
            let mut t = 1.0;
            let accepted = loop {
                let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
                if let (Some(fc), Some(bc)) = (compiled.objective(&cand), compiled.barrier(&cand)) {
                    if fc + mu * bc >= phi + ARMIJO * t * decrement {
                        break Some((cand, fc));
                    }
                }
                t *= 0.5;
                if t < MIN_STEP {
                    break None;
                }
            };
            match accepted {
                Some((cand, fc)) => {
                    z = cand;
                    f = fc;
                    if f > best_f {
                        best_f = f;
                        best_z.clone_from(&z);
                    }
                    trace.push(best_f);
                    iterations += 1;
                }
                None => break,
            }
        }
        residual = compiled.nu * mu + decrement.max(0.0);
        if centered && residual <= opts.tol {
            status = SolverStatus::Converged;
            break;
        }
        if iterations >= opts.max_iter {
            status = SolverStatus::MaxIter;
            break;
        }
        if mu <= mu_floor {
            status = if residual <= opts.tol { SolverStatus::Converged } else { SolverStatus::NumericalTrouble };
            break;
        }
        mu = (mu * MU_SHRINK).max(mu_floor);
    }

    let candidate: Vec<HermitianMatrix> = compiled.matrices(&best_z).into_iter().map(|v| v.clip_psd()).collect();
    let (candidate, candidate_objective) = polish(prob, candidate);
    let feasible =
        prob.budget_slacks(&candidate).iter().zip(&prob.budgets).all(|(s, b)| *s >= -1e-12 * b.budget.max(1.0));

    let (vars, objective, kept_initial) = if feasible && candidate_objective >= initial_objective {
        (candidate, candidate_objective, false)
    } else {
        (exact_start, initial_objective, true)
    };
    let report = SolverReport { objective, initial_objective, iterations, residual, status, trace, kept_initial };
    Ok((vars, report))
}

/// Barrier iterates stay strictly inside the cone, so optima on its boundary
/// are approached but never reached. Eigenvalues that are tiny relative to
/// the variable's scale are dropped whenever that raises the objective.
fn polish(prob: &MaxDetProblem, vars: Vec<HermitianMatrix>) -> (Vec<HermitianMatrix>, f64) {
    let scales: Vec<f64> = (0..vars.len())
        .map(|v| {
            prob.budgets
                .iter()
                .filter(|b| b.vars.contains(&v))
                .map(|b| b.budget)
                .fold(vars[v].trace().max(1e-300), f64::max)
        })
        .collect();
    let mut best_objective = prob.objective(&vars).unwrap_or(f64::NEG_INFINITY);
    let mut best = vars;
    for rel in [1e-7, 1e-5, 1e-3] {
        let trial: Vec<HermitianMatrix> =
            best.iter().zip(&scales).map(|(v, &s)| v.map_eigenvalues(|e| if e < rel * s { 0.0 } else { e })).collect();
        if let Ok(f) = prob.objective(&trial) {
            if f > best_objective {
                best_objective = f;
                best = trial;
            }
        }
    }
    (best, best_objective)
}

/// Barrier weight that best balances the objective gradient at `z`, clamped
/// to a sensible range.
fn initial_mu(compiled: &Compiled, z: &[f64], tol: f64) -> f64 {
    let lo = tol / compiled.nu;
    let (Some((gf, _)), Some((gb, _))) = (compiled.objective_derivatives(z), compiled.barrier_derivatives(z)) else {
        return 1.0;
    };
    let denom = gb.dot(&gb);
    let mu = if denom > 0.0 { -gf.dot(&gb) / denom } else { 0.0 };
    if mu > 0.0 {
        mu.clamp(lo, 1e3)
    } else {
        (1e-2 * gf.norm() / denom.sqrt().max(1e-300)).clamp(lo, 1e3)
    }
}

/// Solves `neg_h * step = g`, adding a small ridge if `neg_h` is not
/// numerically positive definite.
fn newton_step(neg_h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = neg_h.clone().cholesky() {
        let s = ch.solve(g);
        if s.iter().all(|x| x.is_finite()) {
            return Some(s);
        }
    }
    let scale = neg_h.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(1e-300);
    let mut ridge = 1e-12 * scale;
    for _ in 0..8 {
        let mut m = neg_h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let s = ch.solve(g);
            if s.iter().all(|x| x.is_finite()) {
                return Some(s);
            }
        }
        ridge *= 100.0;
    }
    None
}
