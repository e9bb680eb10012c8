//! Steady-state Kalman covariances.
//!
//! The priori covariance `P` solves the DARE
//! `P = A P Aᵀ + Q − A P Cᵀ (C P Cᵀ + R)⁻¹ C P Aᵀ`, equivalently
//! `A (I + P G)⁻¹ P Aᵀ − P + Q = 0` with `G = Cᵀ R⁻¹ C`. Two independent
//! solvers are provided: a fixed-point iteration of the filter's covariance
//! recursion, and the stable invariant subspace of the associated symplectic
//! matrix.

mod lyapunov;
pub mod schur;
mod symplectic;

pub use lyapunov::solve_discrete_lyapunov;
pub use symplectic::{
    build_symplectic, eigen_residual, pairing_residual, solve_dare_symplectic, symplectic_residual, Symplectic,
    SymplecticSpectrum, UNIT_CIRCLE_MARGIN,
};

use nalgebra::DMatrix;

use crate::extended;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{check_observability, LinearSystem, SensorBank};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DareMethod {
    FixedPoint,
    Symplectic,
}

impl std::fmt::Display for DareMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DareMethod::FixedPoint => "fixed_point",
            DareMethod::Symplectic => "symplectic",
        })
    }
}

#[derive(Clone, Debug)]
pub struct DareSolution {
    /// Priori (one-step prediction) covariance.
    pub p: DMatrix<f64>,
    /// Posteriori (filtered) covariance `(I + P G)⁻¹ P`.
    pub p_post: DMatrix<f64>,
    /// Steady measurement-update gain `P Cᵀ (C P Cᵀ + R)⁻¹`; only available
    /// when the solution was computed from a sensor bank.
    pub gain: Option<DMatrix<f64>>,
    /// `A (I + P G)⁻¹`.
    pub closed_loop: DMatrix<f64>,
    pub method: DareMethod,
    pub iterations: usize,
    /// `‖A(I+PG)⁻¹PAᵀ − P + Q‖_∞`.
    pub residual: f64,
    /// `‖A P_p Aᵀ + Q − P‖_∞`.
    pub posteriori_residual: f64,
    /// `‖g(h(P_p)) − P_p‖_∞`, the posteriori fixed-point defect.
    pub posteriori_fixed_point_residual: f64,
    pub closed_loop_radius: f64,
}

impl DareSolution {
    pub fn trace(&self) -> f64 {
        linalg::trace(&self.p)
    }

    pub fn trace_post(&self) -> f64 {
        linalg::trace(&self.p_post)
    }
}

/// Lyapunov operator `h(X) = A X Aᵀ + Q`.
pub fn lyapunov_step(sys: &LinearSystem, x: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(sys.a() * x * sys.a().transpose() + sys.q()))
}

/// Riccati measurement operator `g(X) = X − X Cᵀ (C X Cᵀ + R)⁻¹ C X`.
pub fn riccati_update(bank: &SensorBank, x: &DMatrix<f64>) -> DMatrix<f64> {
    if bank.outputs() == 0 {
        return x.clone();
    }
    let c = bank.stacked_c();
    let xct = x * c.transpose();
    let innov = linalg::symmetrize(&(c * &xct + bank.stacked_r()));
    let correction = match innov.clone().cholesky() {
        Some(ch) => &xct * ch.solve(&xct.transpose()),
        None => &xct * innov.lu().solve(&xct.transpose()).expect("innovation covariance is invertible"),
    };
    linalg::symmetrize(&(x - correction))
}

/// Information-form update `(I + X G)⁻¹ X`, equal to [`riccati_update`].
pub fn riccati_update_info(g: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let lhs = DMatrix::identity(n, n) + x * g;
    let sol = lhs
        .lu()
        .solve(x)
        .ok_or_else(|| Error::Numerical("I + X G is singular".into()))?;
    Ok(linalg::symmetrize(&sol))
}

/// `‖A (I + P G)⁻¹ P Aᵀ − P + Q‖_∞`.
pub fn dare_residual(sys: &LinearSystem, g: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<f64> {
    let post = riccati_update_info(g, p)?;
    Ok(linalg::inf_norm(&(sys.a() * post * sys.a().transpose() - p + sys.q())))
}

/// `A (I + P G)⁻¹`.
pub fn closed_loop(sys: &LinearSystem, g: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let m = DMatrix::identity(n, n) + p * g;
    // A M⁻¹ = (M⁻ᵀ Aᵀ)ᵀ
    let sol = m
        .transpose()
        .lu()
        .solve(&sys.a().transpose())
        .ok_or_else(|| Error::Numerical("I + P G is singular".into()))?;
    Ok(sol.transpose())
}

#[derive(Clone, Copy, Debug)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 100_000 }
    }
}

/// Iterates `P ← h(g(P))` from `P₀ = Q` until the update is below
/// `tol · (1 + ‖P‖_∞)`.
pub fn solve_dare_fixed_point(
    sys: &LinearSystem,
    bank: &SensorBank,
    opts: FixedPointOptions,
) -> Result<DareSolution> {
    let obs = check_observability(sys, bank)?;
    if !obs.pass {
        return Err(Error::NotObservable { rank: obs.rank, n: sys.n() });
    }
    let mut p = sys.q().clone();
    let mut last_step = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = lyapunov_step(sys, &riccati_update(bank, &p));
        last_step = linalg::inf_norm(&(&next - &p));
        p = next;
        if !last_step.is_finite() {
            break;
        }
        if last_step <= opts.tol * (1.0 + linalg::inf_norm(&p)) {
            let gain = steady_gain(bank, &p);
            return finish(sys, bank.information(), p, Some(gain), DareMethod::FixedPoint, it);
        }
    }
    Err(Error::NotConverged { iterations: opts.max_iter, last_step })
}

/// `P Cᵀ (C P Cᵀ + R)⁻¹`.
pub fn steady_gain(bank: &SensorBank, p: &DMatrix<f64>) -> DMatrix<f64> {
    let c = bank.stacked_c();
    if c.nrows() == 0 {
        return DMatrix::zeros(p.nrows(), 0);
    }
    let pct = p * c.transpose();
    let innov = linalg::symmetrize(&(c * &pct + bank.stacked_r()));
    // K = P Cᵀ S⁻¹  ⇔  S Kᵀ = C P
    let kt = innov.lu().solve(&pct.transpose()).expect("innovation covariance is invertible");
    kt.transpose()
}

/// Tolerance for the DARE residual: `1e-8 · (1 + ‖P‖_∞)`.
pub fn residual_tolerance(p: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + linalg::inf_norm(p))
}

/// Populates diagnostics and checks the solution invariants.
pub(crate) fn finish(
    sys: &LinearSystem,
    g: &DMatrix<f64>,
    p: DMatrix<f64>,
    gain: Option<DMatrix<f64>>,
    method: DareMethod,
    iterations: usize,
) -> Result<DareSolution> {
    let p = linalg::symmetrize(&p);
    let p_post = riccati_update_info(g, &p)?;
    let residual = extended::dare_residual(sys.a(), sys.q(), g, &p)
        .ok_or_else(|| Error::Numerical(format!("{method}: I + P G is singular")))?;
    let posteriori_residual = linalg::inf_norm(&(lyapunov_step(sys, &p_post) - &p));
    let again = riccati_update_info(g, &lyapunov_step(sys, &p_post))?;
    let posteriori_fixed_point_residual = linalg::inf_norm(&(again - &p_post));
    let cl = closed_loop(sys, g, &p)?;
    let closed_loop_radius = linalg::spectral_radius(&cl);

    let tol = residual_tolerance(&p);
    if residual > tol {
        return Err(Error::Numerical(format!("{method} DARE residual {residual:e} exceeds {tol:e}")));
    }
    let min_eig = linalg::min_eigenvalue(&p);
    if min_eig <= 0.0 {
        return Err(Error::Numerical(format!("{method} DARE solution is not positive definite (min eigenvalue {min_eig:e})")));
    }
    if closed_loop_radius >= 1.0 {
        return Err(Error::Numerical(format!("closed loop is not stable (spectral radius {closed_loop_radius})")));
    }
    Ok(DareSolution {
        p,
        p_post,
        gain,
        closed_loop: cl,
        method,
        iterations,
        residual,
        posteriori_residual,
        posteriori_fixed_point_residual,
        closed_loop_radius,
    })
}
