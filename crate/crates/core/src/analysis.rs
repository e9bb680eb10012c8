//! Effect of redundant sensors on the steady-state covariance.
//!
//! Adding sensors never increases the priori covariance (`P̄ ≥ P`), and the
//! trace strictly drops as soon as the added information `G₁` is nonzero.
//! Whether the improvement is strict in every direction (`P̄ > P`) is decided
//! by the ordering of the two DARE solutions and, independently, by looking
//! for stable eigenpairs shared by the two symplectic matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::extended;
use crate::model::{augment, check_observability, LinearSystem, SensorBank};
use crate::riccati::schur::{subspace_angle, Eigenpair};
use crate::riccati::{
    build_symplectic, closed_loop, solve_dare_fixed_point, DareSolution, FixedPointOptions, SymplecticSpectrum,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderingClass {
    StrictlyGreater,
    GreaterWithKernel,
    Equal,
    Indefinite,
}

impl std::fmt::Display for OrderingClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OrderingClass::StrictlyGreater => "StrictlyGreater",
            OrderingClass::GreaterWithKernel => "GreaterWithKernel",
            OrderingClass::Equal => "Equal",
            OrderingClass::Indefinite => "Indefinite",
        })
    }
}

#[derive(Clone, Debug)]
pub struct OrderingVerdict {
    pub class: OrderingClass,
    pub kernel_dimension: usize,
    /// Orthonormal eigenvectors of the difference for eigenvalues in `[−tol, tol]`.
    pub kernel_basis: Vec<DVector<f64>>,
    /// Eigenvalues of the symmetrized difference, ascending.
    pub eigenvalues: Vec<f64>,
    pub tolerance: f64,
}

/// `1e-7 · (1 + ‖P_big‖_∞)`.
pub fn default_ordering_tolerance(p_big: &DMatrix<f64>) -> f64 {
    1e-7 * (1.0 + linalg::inf_norm(p_big))
}

/// Classifies `P_big − P_small` in the PSD order.
pub fn classify_ordering(p_big: &DMatrix<f64>, p_small: &DMatrix<f64>, tol: Option<f64>) -> Result<OrderingVerdict> {
    if p_big.shape() != p_small.shape() || !p_big.is_square() {
        return Err(Error::dims(
            "ordering",
            format!("{}x{}", p_big.nrows(), p_big.ncols()),
            format!("{}x{}", p_small.nrows(), p_small.ncols()),
        ));
    }
    let tol = tol.unwrap_or_else(|| default_ordering_tolerance(p_big));
    let (eigenvalues, vectors) = linalg::sym_eigen_sorted(&(p_big - p_small));
    let in_band: Vec<usize> = (0..eigenvalues.len()).filter(|&i| eigenvalues[i].abs() <= tol).collect();
    let min = eigenvalues.first().copied().unwrap_or(0.0);
    let max = eigenvalues.last().copied().unwrap_or(0.0);
    let class = if in_band.len() == eigenvalues.len() {
        OrderingClass::Equal
    } else if min > tol {
        OrderingClass::StrictlyGreater
    } else if min >= -tol && max > tol {
        OrderingClass::GreaterWithKernel
    } else {
        OrderingClass::Indefinite
    };
    let kernel_basis = in_band.iter().map(|&i| vectors.column(i).into_owned()).collect();
    Ok(OrderingVerdict { class, kernel_dimension: in_band.len(), kernel_basis, eigenvalues, tolerance: tol })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub zero: usize,
    pub negative: usize,
}

/// Eigenvalue counts above, inside and below the band `[−tol, tol]`.
pub fn inertia(m: &DMatrix<f64>, tol: f64) -> Inertia {
    let ev = linalg::sym_eigenvalues(m);
    Inertia {
        positive: ev.iter().filter(|&&e| e > tol).count(),
        zero: ev.iter().filter(|&&e| e.abs() <= tol).count(),
        negative: ev.iter().filter(|&&e| e < -tol).count(),
    }
}

/// Band used when comparing inertias of covariance differences:
/// `1e-10 · (1 + ‖M‖_∞)`.
pub fn default_inertia_tolerance(m: &DMatrix<f64>) -> f64 {
    1e-10 * (1.0 + linalg::inf_norm(m))
}

/// Zero band for eigenvalues of differences computed in double-double
/// arithmetic, relative to `1 + ‖P̄‖_∞`.
pub const EXTENDED_INERTIA_REL: f64 = 1e-24;

/// Inertia of `P̄ − P` and `P̄_p − P_p` with both DAREs solved and both
/// differences formed in double-double arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceInertia {
    pub priori: Inertia,
    pub posteriori: Inertia,
    /// Ascending, rounded to double precision.
    pub priori_eigenvalues: Vec<f64>,
    pub posteriori_eigenvalues: Vec<f64>,
    pub tolerance: f64,
}

fn banded(ev: &[extended::Dd], tol: f64) -> Inertia {
    Inertia {
        positive: ev.iter().filter(|&&e| e > tol).count(),
        zero: ev.iter().filter(|&&e| e.abs() <= tol).count(),
        negative: ev.iter().filter(|&&e| e < -tol).count(),
    }
}

pub fn difference_inertia(sys: &LinearSystem, base: &SensorBank, redundant: &SensorBank) -> Result<DifferenceInertia> {
    let full = augment(base, redundant)?;
    for bank in [base, &full] {
        let obs = check_observability(sys, bank)?;
        if !obs.pass {
            return Err(Error::NotObservable { rank: obs.rank, n: sys.n() });
        }
    }
    let (a, q) = (sys.a(), sys.q());
    let g0 = extended::information(base)?;
    let g = g0.add(&extended::information(redundant)?);
    let p_bar = extended::dare_doubling(a, q, &g0)?;
    let p = extended::dare_doubling(a, q, &g)?;
    let d = p_bar.sub(&p).symmetrize();
    let dp = extended::posteriori(&p_bar, &g0)?.sub(&extended::posteriori(&p, &g)?).symmetrize();
    let tolerance = EXTENDED_INERTIA_REL * (1.0 + p_bar.inf_norm());
    let ev = d.sym_eigenvalues();
    let evp = dp.sym_eigenvalues();
    Ok(DifferenceInertia {
        priori: banded(&ev, tolerance),
        posteriori: banded(&evp, tolerance),
        priori_eigenvalues: ev.iter().map(|e| e.to_f64()).collect(),
        posteriori_eigenvalues: evp.iter().map(|e| e.to_f64()).collect(),
        tolerance,
    })
}

#[derive(Clone, Debug)]
pub struct TraceGap {
    pub tr_base: f64,
    pub tr_augmented: f64,
    /// `tr(P̄) − tr(P)`.
    pub gap: f64,
    pub base: DareSolution,
    pub augmented: DareSolution,
}

/// Solves the base and augmented DAREs and compares their traces.
pub fn trace_gap(sys: &LinearSystem, base: &SensorBank, redundant: &SensorBank) -> Result<TraceGap> {
    let full = augment(base, redundant)?;
    let base_sol = solve_dare_fixed_point(sys, base, FixedPointOptions::default())?;
    let aug_sol = solve_dare_fixed_point(sys, &full, FixedPointOptions::default())?;
    let tr_base = base_sol.trace();
    let tr_augmented = aug_sol.trace();
    Ok(TraceGap { tr_base, tr_augmented, gap: tr_base - tr_augmented, base: base_sol, augmented: aug_sol })
}

#[derive(Clone, Copy, Debug)]
pub struct SpectralTolerances {
    /// Relative eigenvalue distance `|λ̄ − λ| ≤ eig · (1 + |λ|)`.
    pub eig: f64,
    /// Principal angle between eigenvectors, radians.
    pub angle: f64,
}

impl Default for SpectralTolerances {
    fn default() -> Self {
        Self { eig: 1e-6, angle: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenMatch {
    pub base_value: Complex64,
    pub augmented_value: Complex64,
    pub distance: f64,
    pub angle: f64,
}

#[derive(Clone, Debug)]
pub struct CommonEigenpairReport {
    pub found: bool,
    pub matches: Vec<EigenMatch>,
    /// Some eigenvalues within one spectrum are closer than the eigenvalue
    /// tolerance, so eigenvector comparison is unreliable.
    pub inconclusive: bool,
}

fn has_cluster(pairs: &[Eigenpair], tol: f64) -> bool {
    pairs.iter().enumerate().any(|(i, a)| {
        pairs[i + 1..]
            .iter()
            .any(|b| (a.value - b.value).norm() <= tol * (1.0 + a.value.norm()))
    })
}

fn match_eigenpairs(base: &[Eigenpair], augmented: &[Eigenpair], tol: SpectralTolerances) -> CommonEigenpairReport {
    let mut matches = Vec::new();
    for b in base {
        for a in augmented {
            let distance = (b.value - a.value).norm();
            if distance > tol.eig * (1.0 + a.value.norm()) {
                continue;
            }
            let angle = subspace_angle(&b.vector, &a.vector);
            if angle <= tol.angle {
                matches.push(EigenMatch { base_value: b.value, augmented_value: a.value, distance, angle });
            }
        }
    }
    CommonEigenpairReport {
        found: !matches.is_empty(),
        matches,
        inconclusive: has_cluster(base, tol.eig) || has_cluster(augmented, tol.eig),
    }
}

fn spectra(sys: &LinearSystem, g0: &DMatrix<f64>, g1: &DMatrix<f64>) -> Result<(SymplecticSpectrum, SymplecticSpectrum)> {
    let base = SymplecticSpectrum::analyze(&build_symplectic(sys, g0)?)?;
    let aug = SymplecticSpectrum::analyze(&build_symplectic(sys, &(g0 + g1))?)?;
    Ok((base, aug))
}

/// Searches for stable eigenpairs shared by the symplectic matrices of `G₀`
/// and `G₀ + G₁`. No match (and no clustering) certifies `P̄ > P`.
pub fn strict_improvement_condition(
    sys: &LinearSystem,
    g0: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    tol: SpectralTolerances,
) -> Result<CommonEigenpairReport> {
    let (base, aug) = spectra(sys, g0, g1)?;
    Ok(match_eigenpairs(&base.stable, &aug.stable, tol))
}

/// The same test on unstable left eigenpairs.
pub fn left_eigen_condition(
    sys: &LinearSystem,
    g0: &DMatrix<f64>,
    g1: &DMatrix<f64>,
    tol: SpectralTolerances,
) -> Result<CommonEigenpairReport> {
    let (base, aug) = spectra(sys, g0, g1)?;
    Ok(match_eigenpairs(&base.unstable_left_eigenpairs(), &aug.unstable_left_eigenpairs(), tol))
}

/// ∞-norm of
/// `A₀ D A₀ᵀ − D + A₀ D G₀ (I + P G₀)⁻¹ D A₀ᵀ + A (I + P G₀)⁻¹ P Aᵀ − A (I + P G)⁻¹ P Aᵀ`
/// with `D = P̄ − P` and `A₀ = A (I + P̄ G₀)⁻¹`; zero when `P̄`, `P` solve
/// their DAREs.
pub fn verify_lyapunov_identity(
    sys: &LinearSystem,
    base: &SensorBank,
    redundant: &SensorBank,
    p_bar: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let n = sys.n();
    let a = sys.a();
    let g0 = base.information();
    let g = g0 + redundant.information();
    let a0 = closed_loop(sys, g0, p_bar)?;
    let d = p_bar - p;
    let id = DMatrix::identity(n, n);
    let solve = |m: DMatrix<f64>, rhs: &DMatrix<f64>| {
        m.lu().solve(rhs).ok_or_else(|| Error::Numerical("singular I + P G".into()))
    };
    let ipg0_inv_d = solve(&id + p * g0, &d)?;
    let ipg0_inv_p = solve(&id + p * g0, p)?;
    let ipg_inv_p = solve(&id + p * &g, p)?;
    let lhs = &a0 * &d * a0.transpose() - &d + &a0 * &d * g0 * ipg0_inv_d * a0.transpose() + a * ipg0_inv_p * a.transpose()
        - a * ipg_inv_p * a.transpose();
    Ok(linalg::inf_norm(&lhs))
}

/// Largest sine of the angle between `Mᵀ x` and the span of the kernel
/// basis, over basis vectors `x`. Zero when the kernel is `Mᵀ`-invariant.
pub fn kernel_invariance_defect(m: &DMatrix<f64>, kernel_basis: &[DVector<f64>]) -> f64 {
    if kernel_basis.is_empty() {
        return 0.0;
    }
    let n = m.nrows();
    let basis = DMatrix::from_columns(kernel_basis);
    let proj = &basis * basis.transpose();
    kernel_basis
        .iter()
        .map(|x| {
            let y = m.transpose() * x;
            let ny = y.norm();
            if ny == 0.0 {
                0.0
            } else {
                ((DMatrix::identity(n, n) - &proj) * &y).norm() / ny
            }
        })
        .fold(0.0, f64::max)
}

/// Combined report used by the `analyze` command.
#[derive(Clone, Debug)]
pub struct ImprovementAssessment {
    pub gap: TraceGap,
    pub ordering: OrderingVerdict,
    pub posteriori_ordering: OrderingVerdict,
    /// Inertias of both differences, resolved in extended precision.
    pub inertia: DifferenceInertia,
    pub spectral: Option<CommonEigenpairReport>,
    pub left_spectral: Option<CommonEigenpairReport>,
    pub lyapunov_residual: f64,
    pub warnings: Vec<String>,
    /// Set when the spectral test disagrees with the ordering verdict. The
    /// ordering verdict is authoritative.
    pub anomaly: Option<String>,
}

pub fn assess_improvement(
    sys: &LinearSystem,
    base: &SensorBank,
    redundant: &SensorBank,
    tol: SpectralTolerances,
) -> Result<ImprovementAssessment> {
    let gap = trace_gap(sys, base, redundant)?;
    let ordering = classify_ordering(&gap.base.p, &gap.augmented.p, None)?;
    let posteriori_ordering = classify_ordering(&gap.base.p_post, &gap.augmented.p_post, None)?;
    let inertia = difference_inertia(sys, base, redundant)?;
    let lyapunov_residual = verify_lyapunov_identity(sys, base, redundant, &gap.base.p, &gap.augmented.p)?;

    let mut warnings = Vec::new();
    let g1 = redundant.information();
    let g1_zero = linalg::max_abs(g1) == 0.0;
    let (spectral, left_spectral, anomaly) = if g1_zero {
        warnings.push("redundant sensors carry no information (G₁ = 0); covariances are unchanged".into());
        (None, None, None)
    } else {
        let right = strict_improvement_condition(sys, base.information(), g1, tol)?;
        let left = left_eigen_condition(sys, base.information(), g1, tol)?;
        let strict = ordering.class == OrderingClass::StrictlyGreater;
        let mut anomaly = None;
        if !right.inconclusive && right.found == strict {
            anomaly = Some(format!(
                "spectral test (common eigenpair found = {}) disagrees with ordering verdict {}",
                right.found, ordering.class
            ));
        } else if right.found != left.found && !right.inconclusive && !left.inconclusive {
            anomaly = Some("right and left eigenpair tests disagree".into());
        }
        if let Some(msg) = &anomaly {
            log::warn!("{msg}");
        }
        (Some(right), Some(left), anomaly)
    };
    Ok(ImprovementAssessment {
        gap,
        ordering,
        posteriori_ordering,
        inertia,
        spectral,
        left_spectral,
        lyapunov_residual,
        warnings,
        anomaly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sensor;
    use crate::testkit::example;

    #[test]
    fn inertia_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 0.0, -1.0]));
        assert_eq!(inertia(&m, 1e-12), Inertia { positive: 1, zero: 1, negative: 1 });
        assert_eq!(inertia(&DMatrix::zeros(3, 3), 1e-12), Inertia { positive: 0, zero: 3, negative: 0 });
    }

    #[test]
    fn equal_matrices_classify_equal() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let v = classify_ordering(&p, &p, None).unwrap();
        assert_eq!(v.class, OrderingClass::Equal);
        assert_eq!(v.kernel_dimension, 2);
    }

    #[test]
    fn indefinite_and_mismatch() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 1.0]));
        let b = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0]));
        assert_eq!(classify_ordering(&a, &b, None).unwrap().class, OrderingClass::Indefinite);
        assert!(classify_ordering(&a, &DMatrix::zeros(3, 3), None).is_err());
    }

    #[test]
    fn example_r1_has_kernel_along_second_state() {
        let sys = example::system();
        let gap = trace_gap(&sys, &example::base_bank(), &example::r1_redundant()).unwrap();
        let v = classify_ordering(&gap.base.p, &gap.augmented.p, None).unwrap();
        assert_eq!(v.class, OrderingClass::GreaterWithKernel);
        assert_eq!(v.kernel_dimension, 1);
        assert!(v.kernel_basis[0][1].abs() > 1.0 - 1e-9);
        // per-state scalar quadratics: g = 3 vs g = 21 on state 1
        let expected = crate::testkit::scalar_dare_root(0.9, 0.25, 3.0) - crate::testkit::scalar_dare_root(0.9, 0.25, 21.0);
        assert!((expected - 0.113705).abs() < 1e-5);
        assert!((gap.gap - expected).abs() < 1e-9, "{}", gap.gap);
    }

    #[test]
    fn single_added_copy_matches_frozen_values() {
        let sys = example::system();
        let one = SensorBank::new(2, vec![Sensor::unit_noise("c1", &[3.0, 0.0]).unwrap()]).unwrap();
        let gap = trace_gap(&sys, &example::base_bank(), &one).unwrap();
        let p = &gap.augmented.p;
        assert!((p[(0, 0)] - 0.30294).abs() < 1e-5, "{}", p[(0, 0)]);
        assert!((p[(1, 1)] - 0.49005).abs() < 1e-5);
        assert!(p[(0, 1)].abs() < 1e-12);
        assert!((gap.gap - 0.09378).abs() < 1e-5, "{}", gap.gap);
        let v = classify_ordering(&gap.base.p, p, None).unwrap();
        assert_eq!(v.class, OrderingClass::GreaterWithKernel);
    }

    #[test]
    fn example_r2_is_strict() {
        let sys = example::system();
        let gap = trace_gap(&sys, &example::base_bank(), &example::r2_redundant()).unwrap();
        assert!(gap.gap > 0.0);
        let v = classify_ordering(&gap.base.p, &gap.augmented.p, None).unwrap();
        assert_eq!(v.class, OrderingClass::StrictlyGreater);
    }

    #[test]
    fn zero_redundant_gives_zero_gap() {
        let sys = example::system();
        let zero = SensorBank::new(2, vec![Sensor::unit_noise("z", &[0.0, 0.0]).unwrap()]).unwrap();
        let gap = trace_gap(&sys, &example::base_bank(), &zero).unwrap();
        assert!(gap.gap.abs() < 1e-9);
        let a = assess_improvement(&sys, &example::base_bank(), &zero, Default::default()).unwrap();
        assert_eq!(a.ordering.class, OrderingClass::Equal);
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn spectral_test_on_example_networks() {
        let sys = example::system();
        let g0 = example::base_bank().information().clone();
        let r1 = strict_improvement_condition(&sys, &g0, example::r1_redundant().information(), Default::default()).unwrap();
        assert!(r1.found && !r1.inconclusive);
        assert_eq!(r1.matches.len(), 1);
        let r2 = strict_improvement_condition(&sys, &g0, example::r2_redundant().information(), Default::default()).unwrap();
        assert!(!r2.found && !r2.inconclusive);
        let dup = strict_improvement_condition(&sys, &g0, &g0, Default::default()).unwrap();
        assert!(!dup.found);

        let l1 = left_eigen_condition(&sys, &g0, example::r1_redundant().information(), Default::default()).unwrap();
        assert!(l1.found);
        let l2 = left_eigen_condition(&sys, &g0, example::r2_redundant().information(), Default::default()).unwrap();
        assert!(!l2.found);
    }

    #[test]
    fn lyapunov_identity_on_example_networks() {
        let sys = example::system();
        let base = example::base_bank();
        let red = example::r2_redundant();
        let gap = trace_gap(&sys, &base, &red).unwrap();
        let res = verify_lyapunov_identity(&sys, &base, &red, &gap.base.p, &gap.augmented.p).unwrap();
        assert!(res <= 1e-7, "{res}");
        let empty = SensorBank::empty(2);
        let same = verify_lyapunov_identity(&sys, &base, &empty, &gap.base.p, &gap.base.p).unwrap();
        assert!(same <= 1e-9);
    }

    #[test]
    fn kernel_is_closed_loop_invariant_for_r1() {
        let sys = example::system();
        let base = example::base_bank();
        let gap = trace_gap(&sys, &base, &example::r1_redundant()).unwrap();
        let v = classify_ordering(&gap.base.p, &gap.augmented.p, None).unwrap();
        let a0 = closed_loop(&sys, base.information(), &gap.base.p).unwrap();
        assert!(kernel_invariance_defect(&a0, &v.kernel_basis) < 1e-6);
        let g1 = example::r1_redundant().information().clone();
        let x = &v.kernel_basis[0];
        let g1px = &g1 * &gap.augmented.p * x;
        assert!(g1px.norm() < 1e-6 * g1.norm() * gap.augmented.p.norm());
    }
}
