//! Neuts–Rao truncated QBD solver.
//!
//! Above orbit level `M` the retrial rate is frozen at `M * theta`, which makes
//! the chain level-independent there: its stationary vector is geometric,
//! `Phi(M + n) = Phi(M) R^n`, with `R` the minimal nonnegative solution of
//! `R^2 H_M0 + R H_M1 + H0 = 0`. Levels `0..M` come from a downward
//! recursion of matrices `K_j` and a boundary solve at level 0.
//!
//! Naming: `H_j0` is the retrial block at level `j` (`h_lower(j)`), `H_j1` the
//! within-level block (`h_diag(j)`), `H0` the orbit-entry block.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::generator::{GeneratorBlocks, GeneratorError, Perturbation};
use crate::model::ModelParams;
use crate::statespace::{MacroLevel, ServerState, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Max-norm tolerance on both the R update and the R residual.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("reducible generator: state {level} {state} (index {index}) is not mutually reachable with state 0")]
    Reducible { index: usize, level: MacroLevel, state: ServerState },
    #[error("R iteration did not converge after {iterations} iterations (residual {residual:e}, sp(R) {spectral_radius:.6})")]
    Divergence { iterations: usize, residual: f64, spectral_radius: f64 },
    #[error("singular matrix while {context} (orbit level {level})")]
    Singular { context: &'static str, level: u32 },
    #[error("unstable at M = {m}: z1*p*lambda = {up:e} >= z2*M*theta = {down:e}")]
    Unstable { m: u32, up: f64, down: f64 },
    #[error("divergent geometric tail: sp(R) = {0:.9}")]
    DivergentTail(f64),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Outcome of the stability test, in both the class-sum and the drift form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stability {
    pub stable: bool,
    /// Probability of a full hall under `phi`.
    pub z1: f64,
    /// Probability of room in the hall under `phi`.
    pub z2: f64,
    /// `z1 * p * lambda`.
    pub up: f64,
    /// `z2 * M * theta`.
    pub down: f64,
    /// `phi H0 e`.
    pub drift_up: f64,
    /// `phi H_M0 e`.
    pub drift_down: f64,
}

impl Stability {
    /// Disagreement between the two forms of the drift.
    pub fn form_discrepancy(&self) -> f64 {
        ((self.up - self.down) - (self.drift_up - self.drift_down)).abs()
    }
}

#[derive(Debug, Clone)]
pub struct RateMatrix {
    pub r: DMatrix<f64>,
    pub iterations: usize,
    /// Max norm of `R^2 H_M0 + R H_M1 + H0` at the returned `R`.
    pub residual: f64,
    /// Residual of each iterate, starting from `R = 0`.
    pub history: Vec<f64>,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    /// Truncation level.
    pub m: u32,
    /// `Phi(0) ..= Phi(M)`.
    pub levels: Vec<DVector<f64>>,
    pub rate: RateMatrix,
    /// `sum over i > M of Phi(i)`, per state.
    pub tail0: DVector<f64>,
    /// `sum over i > M of i * Phi(i)`, per state.
    pub tail1: DVector<f64>,
    /// Conditioning warnings collected along the way.
    pub warnings: Vec<String>,
}

impl StationaryDistribution {
    /// Total probability of orbit levels above `M`.
    pub fn tail_mass(&self) -> f64 {
        self.tail0.sum()
    }

    /// Per-state probability aggregated over all orbit levels.
    pub fn marginal(&self) -> DVector<f64> {
        let mut tot = self.tail0.clone();
        for v in &self.levels {
            tot += v;
        }
        tot
    }

    /// Per-state expected orbit size contribution, `sum_i i * Phi(i)`.
    pub fn orbit_weighted(&self) -> DVector<f64> {
        let mut tot = self.tail1.clone();
        for (i, v) in self.levels.iter().enumerate() {
            tot += v * i as f64;
        }
        tot
    }

    /// `|sum_{i<M} Phi(i) e + Phi(M) (I-R)^-1 e - 1|`.
    pub fn normalization_error(&self) -> f64 {
        let m = self.levels.len() - 1;
        let below: f64 = self.levels[..m].iter().map(|v| v.sum()).sum();
        let top = self.levels[m].sum() + self.tail_mass();
        (below + top - 1.0).abs()
    }

    /// Writes `level,state,probability` lines for `Phi(0..=M)`.
    pub fn dump<W: fmt::Write>(&self, out: &mut W) -> fmt::Result {
        writeln!(out, "level,state,probability")?;
        for (l, v) in self.levels.iter().enumerate() {
            for (i, p) in v.iter().enumerate() {
                writeln!(out, "{l},{i},{p:e}")?;
            }
        }
        Ok(())
    }
}

/// Max-norm residuals of the level balance equations.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResiduals {
    /// `Phi(0) H_01 + Phi(1) H_10`.
    pub boundary: f64,
    /// `Phi(j-1) H0 + Phi(j) H_j1 + Phi(j+1) H_{j+1,0}` for `j = 1..M-1`.
    pub interior: Vec<f64>,
    /// `Phi(M-1) H0 + Phi(M) (H_M1 + R H_M0)`.
    pub top: f64,
    pub normalization: f64,
}

impl BalanceResiduals {
    pub fn max_balance(&self) -> f64 {
        self.interior.iter().copied().fold(self.boundary.max(self.top), f64::max)
    }
}

/// Everything the pipeline produces for one parameter point.
#[derive(Debug, Clone)]
pub struct Solution {
    pub params: ModelParams,
    pub space: StateSpace,
    pub blocks: GeneratorBlocks,
    /// Stationary vector of the aggregated generator `H_M`.
    pub phi: DVector<f64>,
    pub stability: Stability,
    pub dist: StationaryDistribution,
}

impl Solution {
    pub fn balance_residuals(&self) -> BalanceResiduals {
        balance_residuals(&self.dist, &self.blocks)
    }
}

/// `H_M = H_M0 + H_M1 + H0`.
pub fn aggregate_hm(blocks: &GeneratorBlocks, m: u32) -> DMatrix<f64> {
    blocks.h_lower(m) + blocks.modified_diag(m) + blocks.h0()
}

/// Returns the first state that is not mutually reachable with state 0.
pub fn unreachable_state(hm: &DMatrix<f64>) -> Option<usize> {
    let n = hm.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if forward { hm[(i, j)] } else { hm[(j, i)] };
                if j != i && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    if n == 0 {
        return None;
    }
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n).find(|&i| !(fwd[i] && bwd[i]))
}

/// Stationary vector of a conservative irreducible generator.
pub fn solve_phi(hm: &DMatrix<f64>, space: &StateSpace) -> Result<DVector<f64>, SolveError> {
    if let Some(index) = unreachable_state(hm) {
        let (level, state) = space.state_of(index).expect("index from the same space");
        return Err(SolveError::Reducible { index, level, state });
    }
    let n = hm.nrows();
    // phi H = 0 transposed; the first balance equation becomes phi e = 1
    let mut a = hm.transpose();
    a.row_mut(0).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    a.lu().solve(&rhs).ok_or(SolveError::Singular { context: "solving phi H_M = 0", level: 0 })
}

pub fn check_stability(
    phi: &DVector<f64>,
    blocks: &GeneratorBlocks,
    space: &StateSpace,
    params: &ModelParams,
) -> Stability {
    let mut z1 = 0.0;
    let mut z2 = 0.0;
    for (i, &(_, st)) in space.states().iter().enumerate() {
        if st.hall == params.N {
            z1 += phi[i];
        } else {
            z2 += phi[i];
        }
    }
    let up = z1 * params.p * params.lambda;
    let down = z2 * f64::from(params.M) * params.theta;
    let drift_up = blocks.h0().tr_mul(phi).sum();
    let drift_down = blocks.h_lower(params.M).tr_mul(phi).sum();
    Stability { stable: up < down, z1, z2, up, down, drift_up, drift_down }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, &v| a.max(v.abs()))
}

/// Nonzeros of `m` as `(row, col, value)`, for right-multiplying by a
/// sparse generator block.
fn nonzeros(m: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for (j, col) in m.column_iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// `a * b` where `b` is given by its nonzeros and has `ncols` columns.
fn mul_sparse(a: &DMatrix<f64>, b: &[(usize, usize, f64)], ncols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), ncols);
    for &(k, j, v) in b {
        out.column_mut(j).axpy(v, &a.column(k), 1.0);
    }
    out
}

/// Minimal nonnegative solution of `R^2 H_M0 + R H_M1 + H0 = 0` by successive
/// substitution `R <- -(H0 + R^2 H_M0) H_M1^-1` from `R = 0`.
///
/// Stops once the update and the residual are both below `tol`.
pub fn solve_r(
    h0: &DMatrix<f64>,
    hm1: &DMatrix<f64>,
    hm0: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<RateMatrix, SolveError> {
    let n = h0.nrows();
    let inv = hm1
        .clone()
        .lu()
        .try_inverse()
        .ok_or(SolveError::Singular { context: "inverting H_M1", level: 0 })?;
    // the generator blocks are sparse; only R^2 and the product with the
    // inverse are dense
    let hm0_nz = nonzeros(hm0);
    let hm1_nz = nonzeros(hm1);
    let residual_of = |r: &DMatrix<f64>, r2m0: &DMatrix<f64>| max_abs(&(r2m0 + mul_sparse(r, &hm1_nz, n) + h0));
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut history = Vec::new();
    for it in 1..=opts.max_iter {
        let r2m0 = mul_sparse(&(&r * &r), &hm0_nz, n);
        history.push(residual_of(&r, &r2m0));
        let next = -(h0 + r2m0) * &inv;
        let change = max_abs(&(&next - &r));
        r = next;
        if change < opts.tol {
            let residual = residual_of(&r, &mul_sparse(&(&r * &r), &hm0_nz, n));
            if residual <= opts.tol {
                let spectral_radius = spectral_radius(&r);
                return Ok(RateMatrix { r, iterations: it, residual, history, spectral_radius });
            }
        }
    }
    Err(SolveError::Divergence {
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        spectral_radius: spectral_radius(&r),
    })
}

/// Spectral radius of a nonnegative matrix.
///
/// A few renormalized squarings give `B = A^(2^s)`, which separates the
/// dominant eigenvalue; power iteration on `B` from a positive vector then
/// converges quickly, and `sp(A) = sp(B)^(2^-s)`.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    const SQUARINGS: u32 = 6;
    let n = a.nrows();
    let norm = |m: &DMatrix<f64>| m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let mut b = a.clone();
    let mut log_scale = 0.0;
    for _ in 0..SQUARINGS {
        let s = norm(&b);
        if s == 0.0 {
            return 0.0;
        }
        b /= s;
        log_scale = 2.0 * (log_scale + libm::log(s));
        b = &b * &b;
    }
    let power = f64::from(1u32 << SQUARINGS);
    let mut v = DVector::<f64>::from_element(n, 1.0);
    let mut estimate = f64::NAN;
    for _ in 0..500 {
        let w = &b * &v;
        let s = w.amax();
        if s == 0.0 {
            return 0.0;
        }
        let next = libm::exp((log_scale + libm::log(s)) / power);
        v = w / s;
        let done = (next - estimate).abs() <= 1e-14 * next;
        estimate = next;
        if done {
            break;
        }
    }
    estimate
}

fn inverse(m: DMatrix<f64>, context: &'static str, level: u32, warnings: &mut Vec<String>) -> Result<DMatrix<f64>, SolveError> {
    let norm1 = |x: &DMatrix<f64>| x.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let a_norm = norm1(&m);
    let inv = m.lu().try_inverse().ok_or(SolveError::Singular { context, level })?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(SolveError::Singular { context, level });
    }
    let cond = a_norm * norm1(&inv);
    if cond > 1e12 {
        warnings.push(alloc::format!("condition number {cond:.3e} while {context} (orbit level {level})"));
    }
    Ok(inv)
}

/// `diag(d) * m`.
fn scale_rows(d: &DVector<f64>, mut m: DMatrix<f64>) -> DMatrix<f64> {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= d[i];
    }
    m
}

const UNIT_RADIUS_SLACK: f64 = 1e-9;

/// Geometric tails `(sum_{i>M} Phi(i), sum_{i>M} i Phi(i))`.
pub fn tail_moments(
    phi_m: &DVector<f64>,
    rate: &RateMatrix,
    m: u32,
) -> Result<(DVector<f64>, DVector<f64>), SolveError> {
    // the iteration lands on sp(R) = 1 only up to rounding
    if rate.spectral_radius >= 1.0 - UNIT_RADIUS_SLACK {
        return Err(SolveError::DivergentTail(rate.spectral_radius));
    }
    let n = phi_m.len();
    // row-vector solves y (I - R) = x become (I - R)^T y = x
    let lu = (DMatrix::<f64>::identity(n, n) - &rate.r).transpose().lu();
    let x = rate.r.tr_mul(phi_m);
    let y = lu.solve(&x).ok_or(SolveError::Singular { context: "inverting I - R", level: m })?;
    let z = lu.solve(&y).ok_or(SolveError::Singular { context: "inverting I - R", level: m })?;
    let mass1 = &y * f64::from(m) + z;
    Ok((y, mass1))
}

/// Full stationary vector of the truncated chain.
pub fn stationary_distribution(
    blocks: &GeneratorBlocks,
    rate: RateMatrix,
    params: &ModelParams,
) -> Result<StationaryDistribution, SolveError> {
    let m = params.M;
    let n = blocks.dim();
    let mut warnings = Vec::new();
    let h0d = blocks.h0().diagonal();
    let ones = DVector::<f64>::from_element(n, 1.0);

    // k[j] = K_j for j = 1..=M; k[0] unused
    let mut k: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); m as usize + 1];
    let top = -(blocks.modified_diag(m) + mul_sparse(&rate.r, &nonzeros(&blocks.h_lower(m)), n));
    k[m as usize] = inverse(top, "forming K_M", m, &mut warnings)?;
    for j in (1..m).rev() {
        let below = mul_sparse(&k[j as usize + 1], &nonzeros(&blocks.h_lower(j + 1)), n);
        let a = -(blocks.h_diag(j) + scale_rows(&h0d, below));
        k[j as usize] = inverse(a, "forming K_j", j, &mut warnings)?;
    }
    // rows of H0 K_j, reused for the recursion and the normalization
    let steps: Vec<DMatrix<f64>> = (1..=m as usize).map(|j| scale_rows(&h0d, k[j].clone())).collect();

    let i_minus_r = DMatrix::<f64>::identity(n, n) - &rate.r;
    let mut v = i_minus_r
        .lu()
        .solve(&ones)
        .ok_or(SolveError::Singular { context: "inverting I - R", level: m })?;
    for step in steps.iter().rev() {
        v = &ones + step * v;
    }

    let boundary = blocks.h_diag(0) + mul_sparse(&steps[0], &nonzeros(&blocks.h_lower(1)), n);
    let mut a = boundary;
    a.set_column(0, &v);
    let mut rhs = DVector::zeros(n);
    rhs[0] = 1.0;
    let phi0 = a
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or(SolveError::Singular { context: "solving the boundary equations", level: 0 })?;

    let mut levels = Vec::with_capacity(m as usize + 1);
    levels.push(phi0);
    for step in &steps {
        let next = step.tr_mul(levels.last().expect("non-empty"));
        levels.push(next);
    }
    let (tail0, tail1) = tail_moments(&levels[m as usize], &rate, m)?;
    Ok(StationaryDistribution { m, levels, rate, tail0, tail1, warnings })
}

pub fn balance_residuals(dist: &StationaryDistribution, blocks: &GeneratorBlocks) -> BalanceResiduals {
    let m = dist.m as usize;
    let phi = &dist.levels;
    let h0 = blocks.h0();
    let norm = |v: DVector<f64>| v.amax();
    let boundary = norm(blocks.h_diag(0).tr_mul(&phi[0]) + blocks.h_lower(1).tr_mul(&phi[1]));
    let interior = (1..m)
        .map(|j| {
            let j32 = j as u32;
            norm(h0.tr_mul(&phi[j - 1])
                + blocks.h_diag(j32).tr_mul(&phi[j])
                + blocks.h_lower(j32 + 1).tr_mul(&phi[j + 1]))
        })
        .collect();
    let top_block = blocks.modified_diag(dist.m) + &dist.rate.r * blocks.h_lower(dist.m);
    let top = norm(h0.tr_mul(&phi[m - 1]) + top_block.tr_mul(&phi[m]));
    BalanceResiduals { boundary, interior, top, normalization: dist.normalization_error() }
}

/// Max-norm of the R-equation residual restricted to the columns of each
/// macro-level.
pub fn r_block_residuals(
    rate: &RateMatrix,
    blocks: &GeneratorBlocks,
    space: &StateSpace,
    m: u32,
) -> Vec<(MacroLevel, f64)> {
    let r = &rate.r;
    let f = r * r * blocks.h_lower(m) + r * blocks.modified_diag(m) + blocks.h0();
    space
        .levels()
        .map(|level| {
            let cols = space.level_range(level);
            let worst = f.columns(cols.start, cols.len()).iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            (level, worst)
        })
        .collect()
}

/// Runs the whole analytic pipeline on validated parameters.
pub fn solve(params: &ModelParams, opts: &SolverOptions) -> Result<Solution, SolveError> {
    solve_perturbed(params, opts, None)
}

pub fn solve_perturbed(
    params: &ModelParams,
    opts: &SolverOptions,
    perturbation: Option<Perturbation>,
) -> Result<Solution, SolveError> {
    let space = StateSpace::enumerate(params);
    let blocks = GeneratorBlocks::build_perturbed(&space, params, perturbation)?;
    solve_with(params, space, blocks, opts)
}

fn solve_with(
    params: &ModelParams,
    space: StateSpace,
    blocks: GeneratorBlocks,
    opts: &SolverOptions,
) -> Result<Solution, SolveError> {
    let hm = aggregate_hm(&blocks, params.M);
    let phi = solve_phi(&hm, &space)?;
    let stability = check_stability(&phi, &blocks, &space, params);
    if !stability.stable {
        return Err(SolveError::Unstable { m: params.M, up: stability.up, down: stability.down });
    }
    let rate = solve_r(blocks.h0(), &blocks.modified_diag(params.M), &blocks.h_lower(params.M), opts)?;
    let dist = stationary_distribution(&blocks, rate, params)?;
    Ok(Solution { params: *params, space, blocks, phi, stability, dist })
}

/// Solves with `M` doubled from `params.M` until the tail mass above `M`
/// drops below `threshold` (or `max_m` is passed, in which case the last
/// solution is returned anyway).
pub fn solve_auto_m(
    params: &ModelParams,
    opts: &SolverOptions,
    perturbation: Option<Perturbation>,
    threshold: f64,
    max_m: u32,
) -> Result<Solution, SolveError> {
    let space = StateSpace::enumerate(params);
    let blocks = GeneratorBlocks::build_perturbed(&space, params, perturbation)?;
    let mut p = *params;
    loop {
        let sol = solve_with(&p, space.clone(), blocks.clone(), opts)?;
        if sol.dist.tail_mass() < threshold || p.M >= max_m {
            return Ok(sol);
        }
        p.M = (p.M * 2).min(max_m);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn desk() -> ModelParams {
        ModelParams { S: 6, s: 2, c: 2, N: 3, M: 4, ..Default::default() }
    }

    fn pieces(p: &ModelParams) -> (StateSpace, GeneratorBlocks) {
        let space = StateSpace::enumerate(p);
        let blocks = GeneratorBlocks::build(&space, p).unwrap();
        (space, blocks)
    }

    #[test]
    fn aggregate_is_conservative_and_irreducible() {
        let p = ModelParams::default();
        let (_, blocks) = pieces(&p);
        let hm = aggregate_hm(&blocks, p.M);
        assert!(hm.row_iter().all(|r| r.sum().abs() < 1e-12));
        assert_eq!(unreachable_state(&hm), None);
    }

    #[test]
    fn phi_is_a_positive_probability_vector() {
        let p = ModelParams::default();
        let (space, blocks) = pieces(&p);
        let hm = aggregate_hm(&blocks, p.M);
        let phi = solve_phi(&hm, &space).unwrap();
        assert_relative_eq!(phi.sum(), 1.0, epsilon = 1e-10);
        assert!(phi.iter().all(|&x| x > 0.0));
        assert!(hm.tr_mul(&phi).amax() < 1e-8);
    }

    #[test]
    fn reducible_generator_names_a_state() {
        let p = desk();
        let (space, blocks) = pieces(&p);
        let mut hm = aggregate_hm(&blocks, p.M);
        // cut every transition into the last state
        let last = hm.nrows() - 1;
        for i in 0..last {
            let w = hm[(i, last)];
            hm[(i, last)] = 0.0;
            hm[(i, i)] += w;
        }
        let err = solve_phi(&hm, &space).unwrap_err();
        assert!(matches!(err, SolveError::Reducible { index, .. } if index == last), "{err}");
        assert!(alloc::format!("{err}").contains("6 (1,1,0,3)"), "{err}");
    }

    #[test]
    fn stability_forms_agree() {
        for p in [ModelParams::default(), desk(), ModelParams { lambda: 12.0, theta: 0.05, p: 1.0, ..Default::default() }] {
            let (space, blocks) = pieces(&p);
            let phi = solve_phi(&aggregate_hm(&blocks, p.M), &space).unwrap();
            let st = check_stability(&phi, &blocks, &space, &p);
            assert!(st.form_discrepancy() < 1e-10);
        }
    }

    #[test]
    fn stability_edge_cases() {
        let p = ModelParams { p: 0.0, ..desk() };
        let (space, blocks) = pieces(&p);
        let st = check_stability(&solve_phi(&aggregate_hm(&blocks, p.M), &space).unwrap(), &blocks, &space, &p);
        assert_eq!(st.up, 0.0);
        assert!(st.stable);

        let p = ModelParams { theta: 0.0, ..desk() };
        let (space, blocks) = pieces(&p);
        let st = check_stability(&solve_phi(&aggregate_hm(&blocks, p.M), &space).unwrap(), &blocks, &space, &p);
        assert_eq!(st.down, 0.0);
        assert!(!st.stable);
        assert!(matches!(solve(&p, &SolverOptions::default()), Err(SolveError::Unstable { .. })));
    }

    #[test]
    fn r_is_zero_without_orbit_entry() {
        let p = ModelParams { p: 0.0, ..desk() };
        let (_, blocks) = pieces(&p);
        let rate = solve_r(blocks.h0(), &blocks.modified_diag(p.M), &blocks.h_lower(p.M), &SolverOptions::default()).unwrap();
        assert_eq!(rate.iterations, 1);
        assert!(rate.r.iter().all(|&v| v == 0.0));
        assert_eq!(rate.spectral_radius, 0.0);
        let (t0, t1) = tail_moments(&DVector::from_element(blocks.dim(), 0.1), &rate, p.M).unwrap();
        assert_eq!(t0.sum(), 0.0);
        assert_eq!(t1.sum(), 0.0);
    }

    #[test]
    fn r_residual_history_is_monotone() {
        let p = desk();
        let (_, blocks) = pieces(&p);
        let rate = solve_r(blocks.h0(), &blocks.modified_diag(p.M), &blocks.h_lower(p.M), &SolverOptions::default()).unwrap();
        assert!(rate.residual <= 1e-10);
        assert!(rate.r.iter().all(|&v| v >= 0.0));
        assert!(rate.spectral_radius < 1.0);
        for w in rate.history[1..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", rate.history);
        }
    }

    #[test]
    fn r_iteration_limit_reports_divergence() {
        let p = desk();
        let (_, blocks) = pieces(&p);
        let opts = SolverOptions { tol: 1e-10, max_iter: 3 };
        let err = solve_r(blocks.h0(), &blocks.modified_diag(p.M), &blocks.h_lower(p.M), &opts).unwrap_err();
        assert!(matches!(err, SolveError::Divergence { iterations: 3, .. }));
    }

    #[test]
    fn spectral_radius_of_known_matrices() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.0, 0.2]);
        assert_relative_eq!(spectral_radius(&a), 0.5, epsilon = 1e-9);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(spectral_radius(&nil), 0.0);
        let b = DMatrix::from_row_slice(2, 2, &[0.1, 0.6, 0.6, 0.1]);
        assert_relative_eq!(spectral_radius(&b), 0.7, epsilon = 1e-9);
    }

    #[test]
    fn desk_scale_distribution() {
        let p = desk();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.space.block_dim(), 59);
        let res = sol.balance_residuals();
        assert!(res.normalization < 1e-10, "{res:?}");
        assert!(res.max_balance() < 1e-8, "{res:?}");
        assert!(sol.dist.levels.iter().all(|v| v.iter().all(|&x| x >= 0.0)));
        assert!(r_block_residuals(&sol.dist.rate, &sol.blocks, &sol.space, p.M).iter().all(|&(_, r)| r <= 1e-10));
    }

    #[test]
    fn tail_matches_explicit_summation() {
        let p = desk();
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let r = &sol.dist.rate.r;
        let mut term = sol.dist.levels[p.M as usize].clone();
        let mut s0 = DVector::zeros(term.len());
        let mut s1 = DVector::zeros(term.len());
        let mut level = p.M as f64;
        let mut masses = Vec::new();
        loop {
            term = r.tr_mul(&term);
            level += 1.0;
            s0 += &term;
            s1 += &term * level;
            masses.push(term.sum());
            if term.sum() * level < 1e-16 {
                break;
            }
        }
        assert!((s0 - &sol.dist.tail0).amax() < 1e-12);
        assert!((s1 - &sol.dist.tail1).amax() < 1e-11);
        assert!(masses.windows(2).take(10).all(|w| w[1] <= w[0]));
        assert!(sol.dist.tail1.sum() >= (p.M + 1) as f64 * sol.dist.tail_mass());
    }

    #[test]
    fn single_truncation_level() {
        let p = ModelParams { M: 1, ..desk() };
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        let res = sol.balance_residuals();
        assert!(res.interior.is_empty());
        assert!(res.max_balance() < 1e-8 && res.normalization < 1e-10, "{res:?}");
    }

    #[test]
    fn unstable_point_has_unit_spectral_radius() {
        let p = ModelParams { lambda: 12.0, theta: 0.05, p: 1.0, ..desk() };
        let (_, blocks) = pieces(&p);
        let rate = solve_r(blocks.h0(), &blocks.modified_diag(p.M), &blocks.h_lower(p.M), &SolverOptions::default()).unwrap();
        assert!(rate.spectral_radius >= 1.0 - 1e-6, "{}", rate.spectral_radius);
        assert!(matches!(tail_moments(&DVector::zeros(blocks.dim()), &rate, p.M), Err(SolveError::DivergentTail(_))), "{}", rate.spectral_radius);
    }

    #[test]
    fn auto_m_reaches_threshold() {
        let sol = solve_auto_m(&desk(), &SolverOptions::default(), None, 1e-6, 256).unwrap();
        assert!(sol.dist.tail_mass() < 1e-6);
        assert_eq!(sol.params.M, 32);
    }
}
