//! Iterative convexified design of redundant sensor output matrices.
//!
//! Each outer iteration fixes the linearization point `C_r` and solves
//!
//! ```text
//! minimize γ  over (γ, X, C̃)
//!   F(X, C̃) ⪯ 0                         (size 3n + m̃)
//!   [[γ, Eᵀ], [E, Iₙ ⊗ X]] ⪰ 0            (γ ≥ tr X⁻¹)
//!   [[U·I, cᵢ], [cᵢᵀ, U·I]] ⪰ 0  per sensor (σ_max(cᵢ) ≤ U)
//!   X ⪰ δI
//! ```
//!
//! with `F` the Schur-complement form of the Riccati inequality
//! `X⁻¹ ⪰ A(X + G₀ + C̃ᵀR̃⁻¹C̃)⁻¹Aᵀ + Q` after linearizing the quadratic term in
//! `C̃` around `C_r`. The previous iterate is always feasible for the next
//! subproblem, so `γ` never increases.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::analysis::trace_gap;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LinearSystem, SensorBank};
use crate::riccati::{dare_residual, solve_dare_fixed_point, FixedPointOptions};
use crate::sdp::{LmiBlock, Problem, Sense, SolveStatus, SolverOptions, VarId, VariableKind};

/// Allowed increase of `γ` between iterations before the run is flagged.
pub const MONOTONE_SLACK: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Clone, Debug)]
pub struct DesignSpec {
    pub sys: LinearSystem,
    pub base: SensorBank,
    /// Rows per redundant sensor; sums to `m̃`.
    pub row_partition: Vec<usize>,
    /// Block-diagonal noise covariance of the redundant sensors, `m̃ × m̃`.
    pub r_tilde: DMatrix<f64>,
    /// Spectral-norm budget applied to each sensor's row block.
    pub norm_bound: f64,
    /// Initial linearization point, `m̃ × n`.
    pub c_r0: DMatrix<f64>,
    pub epsilon: f64,
    pub max_iters: usize,
}

impl DesignSpec {
    /// Spec with the default initial point and iteration cap.
    pub fn new(
        sys: LinearSystem,
        base: SensorBank,
        row_partition: Vec<usize>,
        r_tilde: DMatrix<f64>,
        norm_bound: f64,
        epsilon: f64,
    ) -> Self {
        let rows = row_partition.iter().sum();
        let c_r0 = default_initial(rows, sys.n());
        Self { sys, base, row_partition, r_tilde, norm_bound, c_r0, epsilon, max_iters: DEFAULT_MAX_ITERS }
    }

    pub fn rows(&self) -> usize {
        self.row_partition.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sys.n();
        let m = self.rows();
        if self.base.n() != n {
            return Err(Error::dims("base sensor bank", n, self.base.n()));
        }
        if self.row_partition.is_empty() || self.row_partition.contains(&0) {
            return Err(Error::InvalidArgument("every redundant sensor needs at least one row".into()));
        }
        if self.c_r0.shape() != (m, n) {
            return Err(Error::dims("initial output matrix", format!("{m}x{n}"), format!("{}x{}", self.c_r0.nrows(), self.c_r0.ncols())));
        }
        if self.r_tilde.shape() != (m, m) {
            return Err(Error::dims("redundant noise covariance", format!("{m}x{m}"), format!("{}x{}", self.r_tilde.nrows(), self.r_tilde.ncols())));
        }
        let lmin = linalg::min_eigenvalue(&linalg::symmetrize(&self.r_tilde));
        if lmin <= 0.0 {
            return Err(Error::SensorNoiseNotPositiveDefinite { label: "redundant".into(), min_eigenvalue: lmin });
        }
        if !(self.norm_bound > 0.0 && self.norm_bound.is_finite()) {
            return Err(Error::InvalidArgument(format!("norm bound must be positive, got {}", self.norm_bound)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Zero rows with `1e-3` at `(i, i mod n)`. A row that starts at zero
/// drops out of the linearized information term and stays zero, so the
/// diagonal wraps around when there are more rows than states.
pub fn default_initial(rows: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, n, |i, j| if i % n == j { 1e-3 } else { 0.0 })
}

/// Decision variables of one subproblem.
#[derive(Clone, Copy, Debug)]
pub struct DesignVariables {
    pub gamma: VarId,
    pub x: VarId,
    pub c: VarId,
}

pub fn design_variables(problem: &mut Problem, n: usize, rows: usize) -> DesignVariables {
    let gamma = problem.add_variable("gamma", VariableKind::Scalar);
    let x = problem.add_variable("X", VariableKind::Symmetric(n));
    let c = problem.add_variable("C", VariableKind::Rectangular(rows, n));
    DesignVariables { gamma, x, c }
}

/// Riccati-inequality block, negative semidefinite, size `3n + m̃`.
pub fn build_f_lmi(
    problem: &Problem,
    vars: &DesignVariables,
    sys: &LinearSystem,
    g0: &DMatrix<f64>,
    c_r: &DMatrix<f64>,
    r_tilde: &DMatrix<f64>,
) -> Result<LmiBlock> {
    let n = sys.n();
    let m = c_r.nrows();
    if c_r.ncols() != n || g0.shape() != (n, n) || r_tilde.shape() != (m, m) {
        return Err(Error::dims(
            "Riccati LMI data",
            format!("C_r {m}x{n}, G0 {n}x{n}, R {m}x{m}"),
            format!(
                "C_r {}x{}, G0 {}x{}, R {}x{}",
                c_r.nrows(),
                c_r.ncols(),
                g0.nrows(),
                g0.ncols(),
                r_tilde.nrows(),
                r_tilde.ncols()
            ),
        ));
    }
    let r_inv = linalg::spd_inverse(r_tilde)
        .ok_or_else(|| Error::SensorNoiseNotPositiveDefinite { label: "redundant".into(), min_eigenvalue: linalg::min_eigenvalue(r_tilde) })?;
    let id = DMatrix::identity(n, n);
    let sqrt_q = sys.sqrt_q();
    let mut b = problem.block("riccati", 3 * n + m, Sense::NegativeSemidefinite);
    b.term(0, 0, &(-&id), vars.x, false, &id)
        .term(0, n, &id, vars.x, false, sys.a())
        .term(0, 2 * n, &id, vars.x, false, &sqrt_q)
        .term(n, n, &(-&id), vars.x, false, &id)
        .constant(n, n, &(-g0))
        .term(n, n, &(-&id), vars.c, true, &(&r_inv * c_r))
        .term(n, n, &(-(c_r.transpose() * &r_inv)), vars.c, false, &id)
        .constant(n, 3 * n, &c_r.transpose())
        .constant(2 * n, 2 * n, &(-DMatrix::<f64>::identity(n, n)))
        .constant(3 * n, 3 * n, &(-r_tilde));
    b.build()
}

/// `[[γ, Eᵀ], [E, Iₙ ⊗ X]] ⪰ 0` with `E` the stacked unit vectors.
pub fn build_trace_lmi(problem: &Problem, vars: &DesignVariables, n: usize) -> Result<LmiBlock> {
    let id = DMatrix::identity(n, n);
    let e_t = DMatrix::from_fn(1, n * n, |_, j| if j % (n + 1) == 0 { 1.0 } else { 0.0 });
    let mut b = problem.block("trace", n * n + 1, Sense::PositiveSemidefinite);
    b.scalar(0, 0, vars.gamma, &DMatrix::from_element(1, 1, 1.0)).constant(0, 1, &e_t);
    for k in 0..n {
        b.term(1 + k * n, 1 + k * n, &id, vars.x, false, &id);
    }
    b.build()
}

/// `[[U·I, c], [cᵀ, U·I]] ⪰ 0` for the row block `offset..offset+rows` of `C̃`.
pub fn build_norm_lmi(
    problem: &Problem,
    vars: &DesignVariables,
    n: usize,
    offset: usize,
    rows: usize,
    bound: f64,
) -> Result<LmiBlock> {
    let total = problem.variable(vars.c).kind.shape().0;
    if offset + rows > total {
        return Err(Error::dims("sensor row block", format!("within {total} rows"), format!("{offset}..{}", offset + rows)));
    }
    let select = DMatrix::from_fn(rows, total, |i, j| if j == offset + i { 1.0 } else { 0.0 });
    let mut b = problem.block(format!("norm[{offset}..{}]", offset + rows), rows + n, Sense::PositiveSemidefinite);
    b.constant(0, 0, &(DMatrix::identity(rows, rows) * bound))
        .constant(rows, rows, &(DMatrix::identity(n, n) * bound))
        .term(0, rows, &select, vars.c, false, &DMatrix::identity(n, n));
    b.build()
}

/// `tr(P̄) − γ`: certified lower bound on the trace improvement.
pub fn performance_bound(sys: &LinearSystem, base: &SensorBank, gamma: f64) -> Result<f64> {
    let sol = solve_dare_fixed_point(sys, base, FixedPointOptions::default())?;
    Ok(sol.trace() - gamma)
}

/// One assembled subproblem.
pub struct Subproblem {
    pub problem: Problem,
    pub vars: DesignVariables,
}

pub fn assemble(spec: &DesignSpec, c_r: &DMatrix<f64>) -> Result<Subproblem> {
    let n = spec.sys.n();
    let m = spec.rows();
    let g0 = spec.base.information();
    let mut problem = Problem::new();
    let vars = design_variables(&mut problem, n, m);
    let f = build_f_lmi(&problem, &vars, &spec.sys, g0, c_r, &spec.r_tilde)?;
    let t = build_trace_lmi(&problem, &vars, n)?;
    problem.add_lmi_block(f)?;
    problem.add_lmi_block(t)?;
    let mut offset = 0;
    for &rows in &spec.row_partition {
        let nb = build_norm_lmi(&problem, &vars, n, offset, rows, spec.norm_bound)?;
        problem.add_lmi_block(nb)?;
        offset += rows;
    }
    let scale = linalg::max_abs(spec.sys.a()).max(linalg::max_abs(spec.sys.q())).max(linalg::max_abs(g0));
    let delta = 1e-9 * (1.0 + scale);
    let id = DMatrix::identity(n, n);
    let mut b = problem.block("X >= delta I", n, Sense::PositiveSemidefinite);
    b.term(0, 0, &id, vars.x, false, &id).constant(0, 0, &(-&id * delta));
    let xb = b.build()?;
    problem.add_lmi_block(xb)?;
    problem.add_objective(vars.gamma, &DMatrix::from_element(1, 1, 1.0))?;
    Ok(Subproblem { problem, vars })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

impl std::fmt::Display for DesignStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DesignStatus::Converged => "converged",
            DesignStatus::MaxIterations => "max_iterations",
            DesignStatus::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Clone, Debug)]
pub struct PostValidation {
    /// `tr(P)` of the augmented network at `C̃*`.
    pub dare_trace: f64,
    /// `tr(P̄)` of the base network.
    pub base_trace: f64,
    /// `tr(P̄) − γ*`.
    pub bound_gap: f64,
    /// `tr(P̄) − tr(P)`.
    pub actual_gap: f64,
    /// `‖X*⁻¹ − P‖_∞`.
    pub inverse_gap: f64,
    /// Augmented DARE residual of `X*⁻¹`.
    pub inverse_residual: f64,
    /// `|γ* − tr(X*⁻¹)|`.
    pub gamma_trace_gap: f64,
    /// `C̃*ᵀ R̃⁻¹ C̃*`.
    pub gram: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct DesignResult {
    pub status: DesignStatus,
    pub c_star: DMatrix<f64>,
    pub x_star: DMatrix<f64>,
    pub gamma_star: f64,
    pub gamma_trajectory: Vec<f64>,
    /// Outer iterations performed.
    pub iterations: usize,
    /// Largest eigenvalue of the Riccati block at the previous iterate under
    /// the current linearization point, one entry per iteration after the first.
    pub warm_start_margins: Vec<f64>,
    /// Interior-point iterations per outer iteration.
    pub sdp_iterations: Vec<usize>,
    pub post_validation: Option<PostValidation>,
    pub elapsed: Duration,
}

/// Runs the outer loop until `|γʲ − γʲ⁻¹| < ε` or the iteration cap.
pub fn design_redundant_sensors(spec: &DesignSpec) -> Result<DesignResult> {
    design_with_options(spec, &SolverOptions::default())
}

pub fn design_with_options(spec: &DesignSpec, opts: &SolverOptions) -> Result<DesignResult> {
    spec.validate()?;
    let start = Instant::now();
    let mut c_r = spec.c_r0.clone();
    let mut trajectory: Vec<f64> = Vec::new();
    let mut margins = Vec::new();
    let mut sdp_iterations = Vec::new();
    let mut best: Option<(DMatrix<f64>, DMatrix<f64>, f64)> = None;
    let mut status = DesignStatus::MaxIterations;

    for j in 0..spec.max_iters {
        let sub = assemble(spec, &c_r)?;
        if let Some((x_prev, c_prev, g_prev)) = &best {
            let y = sub.problem.assignment(&[
                (sub.vars.gamma, &DMatrix::from_element(1, 1, *g_prev)),
                (sub.vars.x, x_prev),
                (sub.vars.c, c_prev),
            ])?;
            let f = &sub.problem.blocks()[0];
            margins.push(-f.margin(&y));
        }
        let sol = sub.problem.solve(opts)?;
        sdp_iterations.push(sol.iterations);
        log::debug!(
            "design iteration {j}: status {} gamma {:.10} ({} ipm iterations)",
            sol.status,
            sol.scalar(sub.vars.gamma),
            sol.iterations
        );
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible if best.is_none() => return Err(Error::DesignInfeasible { iteration: j }),
            _ if best.is_none() => {
                return Err(Error::Numerical(format!("design subproblem at iteration {j} ended with status {}", sol.status)))
            }
            other => {
                log::warn!("design subproblem at iteration {j} ended with status {other}; keeping the previous iterate");
                status = DesignStatus::NumericalFailure;
                break;
            }
        }
        let gamma = sol.scalar(sub.vars.gamma);
        let x = linalg::symmetrize(sol.value(sub.vars.x));
        let c = sol.value(sub.vars.c).clone();
        let prev = trajectory.last().copied();
        trajectory.push(gamma);
        best = Some((x, c.clone(), gamma));
        if let Some(prev) = prev {
            if (gamma - prev).abs() < spec.epsilon {
                status = DesignStatus::Converged;
                break;
            }
            if gamma > prev + MONOTONE_SLACK {
                log::warn!("gamma increased from {prev} to {gamma} at iteration {j}");
                status = DesignStatus::NumericalFailure;
                break;
            }
        }
        c_r = c;
    }

    let (x_star, c_star, gamma_star) = best.expect("at least one successful iteration");
    let post_validation = match post_validate(spec, &x_star, &c_star, gamma_star) {
        Ok(pv) => Some(pv),
        Err(e) => {
            log::warn!("post-validation failed: {e}");
            None
        }
    };
    Ok(DesignResult {
        status,
        iterations: trajectory.len(),
        c_star,
        x_star,
        gamma_star,
        gamma_trajectory: trajectory,
        warm_start_margins: margins,
        sdp_iterations,
        post_validation,
        elapsed: start.elapsed(),
    })
}

/// Redundant bank built from a designed output matrix.
pub fn designed_bank(spec: &DesignSpec, c: &DMatrix<f64>) -> Result<SensorBank> {
    SensorBank::from_stacked(c, &spec.r_tilde, &spec.row_partition, "design")
}

pub fn post_validate(spec: &DesignSpec, x_star: &DMatrix<f64>, c_star: &DMatrix<f64>, gamma_star: f64) -> Result<PostValidation> {
    let redundant = designed_bank(spec, c_star)?;
    let gap = trace_gap(&spec.sys, &spec.base, &redundant)?;
    let p = gap.augmented.p.clone();
    let x_inv = linalg::spd_inverse(x_star).ok_or_else(|| Error::Numerical("designed X is not positive definite".into()))?;
    let g = spec.base.information() + redundant.information();
    let r_inv = linalg::spd_inverse(&spec.r_tilde).expect("validated positive definite");
    Ok(PostValidation {
        dare_trace: gap.tr_augmented,
        base_trace: gap.tr_base,
        bound_gap: gap.tr_base - gamma_star,
        actual_gap: gap.gap,
        inverse_gap: linalg::inf_norm(&(&x_inv - &p)),
        inverse_residual: dare_residual(&spec.sys, &g, &x_inv)?,
        gamma_trace_gap: (gamma_star - linalg::trace(&x_inv)).abs(),
        gram: linalg::symmetrize(&(c_star.transpose() * r_inv * c_star)),
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::solve_dare_fixed_point;
    use crate::testkit::{example, scalar_dare_root};

    fn example_spec() -> DesignSpec {
        let mut spec =
            DesignSpec::new(example::system(), example::base_bank(), vec![1, 1], DMatrix::identity(2, 2), 5.0, 1e-5);
        spec.c_r0 = example::design_initial();
        spec
    }

    fn problem_for(n: usize, m: usize) -> (Problem, DesignVariables) {
        let mut p = Problem::new();
        let v = design_variables(&mut p, n, m);
        (p, v)
    }

    #[test]
    fn trace_block_examples() {
        let (p, v) = problem_for(2, 1);
        let block = build_trace_lmi(&p, &v, 2).unwrap();
        assert_eq!(block.size, 5);
        let at = |g: f64, x: DMatrix<f64>| {
            let y = p.assignment(&[(v.gamma, &DMatrix::from_element(1, 1, g)), (v.x, &x)]).unwrap();
            block.margin(&y)
        };
        assert!(at(2.0, DMatrix::identity(2, 2)).abs() < 1e-12);
        assert!(at(3.0, DMatrix::identity(2, 2)) > 0.0);
        assert!(at(0.7, DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[2.0, 4.0]))) < 0.0);
        // γ = tr(X⁻¹) + 1 at X = I is strictly feasible
        assert!(at(3.0, DMatrix::identity(2, 2)) > 1e-3);
    }

    #[test]
    fn norm_block_examples() {
        let (p, v) = problem_for(2, 1);
        let block = build_norm_lmi(&p, &v, 2, 0, 1, 5.0).unwrap();
        let at = |row: [f64; 2]| {
            let y = p.assignment(&[(v.c, &DMatrix::from_row_slice(1, 2, &row))]).unwrap();
            block.margin(&y)
        };
        assert!(at([3.0, 0.0]) > 0.0);
        assert!(at([3.0, 4.0]).abs() < 1e-12);
        assert!(at([4.0, 4.0]) < 0.0);
    }

    #[test]
    fn riccati_block_is_affine() {
        let sys = example::system();
        let g0 = example::base_bank().information().clone();
        let c_r = example::design_initial();
        let (p, v) = problem_for(2, 2);
        let f = build_f_lmi(&p, &v, &sys, &g0, &c_r, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.size, 8);
        let pt = |x: &DMatrix<f64>, c: &DMatrix<f64>| p.assignment(&[(v.x, x), (v.c, c)]).unwrap();
        let x1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c1 = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let x2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.1, -0.1, 4.0]);
        let c2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, -1.0]);
        let f0 = f.evaluate(&pt(&DMatrix::zeros(2, 2), &DMatrix::zeros(2, 2)));
        let f1 = f.evaluate(&pt(&x1, &c1));
        let f2 = f.evaluate(&pt(&x2, &c2));
        let f12 = f.evaluate(&pt(&(&x1 + &x2), &(&c1 + &c2)));
        assert!((f12 - f1 - f2 + f0).amax() < 1e-12);
    }

    #[test]
    fn riccati_block_entries_match_the_block_form() {
        let sys = example::system();
        let g0 = example::base_bank().information().clone();
        let c_r = example::design_initial();
        let (p, v) = problem_for(2, 2);
        let f = build_f_lmi(&p, &v, &sys, &g0, &c_r, &DMatrix::identity(2, 2)).unwrap();
        let x = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let m = f.evaluate(&p.assignment(&[(v.x, &x), (v.c, &c)]).unwrap());
        let phi = -&x - &g0 - c.transpose() * &c_r - c_r.transpose() * &c;
        assert!((m.view((0, 0), (2, 2)) + &x).amax() < 1e-12);
        assert!((m.view((0, 2), (2, 2)) - &x * sys.a()).amax() < 1e-12);
        assert!((m.view((0, 4), (2, 2)) - &x * sys.sqrt_q()).amax() < 1e-12);
        assert!((m.view((2, 2), (2, 2)) - &phi).amax() < 1e-12);
        assert!((m.view((2, 6), (2, 2)) - c_r.transpose()).amax() < 1e-12);
        assert!((m.view((4, 4), (2, 2)) + DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!((m.view((6, 6), (2, 2)) + DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
        assert!(m.view((0, 6), (2, 2)).amax() == 0.0);
    }

    #[test]
    fn riccati_block_is_feasible_at_a_dare_solution() {
        let sys = example::system();
        let base = example::base_bank();
        let c_r = example::design_initial();
        let full = crate::model::augment(&base, &example::r2_redundant()).unwrap();
        let p_r2 = solve_dare_fixed_point(&sys, &full, FixedPointOptions::default()).unwrap().p;
        let (p, v) = problem_for(2, 2);
        let f = build_f_lmi(&p, &v, &sys, base.information(), &c_r, &DMatrix::identity(2, 2)).unwrap();
        let x = linalg::spd_inverse(&p_r2).unwrap();
        let y = p.assignment(&[(v.x, &x), (v.c, &c_r)]).unwrap();
        assert!(-f.margin(&y) <= 1e-6, "{}", -f.margin(&y));
        // tiny X with no redundant sensors violates the inequality
        let y = p.assignment(&[(v.x, &(DMatrix::identity(2, 2) * 1e-6)), (v.c, &DMatrix::zeros(2, 2))]).unwrap();
        assert!(-f.margin(&y) > 0.0);
    }

    #[test]
    fn bound_examples() {
        let sys = example::system();
        let base = example::base_bank();
        let tr = scalar_dare_root(0.9, 0.25, 3.0) + scalar_dare_root(1.1, 0.25, 3.0);
        assert!((performance_bound(&sys, &base, tr).unwrap()).abs() < 1e-9);
        assert!(performance_bound(&sys, &base, tr + 1.0).unwrap() < 0.0);
        assert!((performance_bound(&sys, &base, 0.5572).unwrap() - 0.3296).abs() < 1e-3);
    }

    #[test]
    fn example_design_run() {
        let spec = example_spec();
        let res = design_redundant_sensors(&spec).unwrap();
        assert_eq!(res.status, DesignStatus::Converged);
        assert!((res.gamma_star - 0.5572).abs() <= 0.01, "{}", res.gamma_star);
        for i in 0..2 {
            let norm = res.c_star.row(i).norm();
            assert!((norm - 5.0).abs() <= 1e-2, "row {i} norm {norm}");
        }
        for w in res.gamma_trajectory.windows(2) {
            assert!(w[1] <= w[0] + MONOTONE_SLACK);
        }
        assert!(res.iterations <= 20);
        for m in &res.warm_start_margins {
            assert!(*m <= 1e-6, "warm start margin {m}");
        }
        let pv = res.post_validation.unwrap();
        assert!(pv.dare_trace <= res.gamma_star + 1e-6 * (1.0 + res.gamma_star));
        assert!(pv.inverse_gap <= 1e-4 * (1.0 + linalg::inf_norm(&pv.p)));
        assert!(pv.inverse_residual <= 1e-5 * (1.0 + linalg::inf_norm(&pv.p)));
        assert!(pv.gamma_trace_gap <= 1e-6);
        assert!(pv.actual_gap > 0.0);
    }

    #[test]
    fn vanishing_budget_recovers_base_trace() {
        let spec =
            DesignSpec::new(example::system(), example::base_bank(), vec![1, 1], DMatrix::identity(2, 2), 1e-6, 1e-5);
        let res = design_redundant_sensors(&spec).unwrap();
        let tr = scalar_dare_root(0.9, 0.25, 3.0) + scalar_dare_root(1.1, 0.25, 3.0);
        assert!((tr - 0.8868).abs() < 1e-4);
        assert!((res.gamma_star - tr).abs() < 1e-4, "{} vs {tr}", res.gamma_star);
    }

    #[test]
    fn infeasible_initial_point_is_reported() {
        let mut spec = example_spec();
        spec.norm_bound = 1e-6;
        assert!(matches!(design_redundant_sensors(&spec), Err(Error::DesignInfeasible { iteration: 0 })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = example_spec();
        spec.norm_bound = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = example_spec();
        spec.c_r0 = DMatrix::zeros(3, 2);
        assert!(spec.validate().is_err());
        let mut spec = example_spec();
        spec.epsilon = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn default_initial_point() {
        let c = default_initial(3, 2);
        assert_eq!(c[(0, 0)], 1e-3);
        assert_eq!(c[(1, 1)], 1e-3);
        assert_eq!(c[(2, 0)], 1e-3);
        assert_eq!(c[(2, 1)], 0.0);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn rows_beyond_the_state_dimension_contribute() {
        let spec = DesignSpec::new(example::system(), example::base_bank(), vec![1; 4], DMatrix::identity(4, 4), 5.0, 1e-5);
        let res = design_redundant_sensors(&spec).unwrap();
        for i in 0..4 {
            assert!((res.c_star.row(i).norm() - 5.0).abs() <= 1e-2, "{}", res.c_star);
        }
    }
}
