use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::schur::{ComplexSchur, Eigenpair};
use super::{finish, DareMethod, DareSolution};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{LinearSystem, CONDITION_WARN};

/// Minimum distance of any eigenvalue modulus from 1 for dom(Ric) membership.
pub const UNIT_CIRCLE_MARGIN: f64 = 1e-8;

/// Condition number of the `X` block above which the stable subspace is
/// treated as not complementary to `Im [0; I]`.
const COMPLEMENTARITY_COND: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct Symplectic {
    pub matrix: DMatrix<f64>,
    /// `‖J⁻¹ Sᵀ J S − I‖_∞`.
    pub symplectic_residual: f64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct SymplecticSpectrum {
    pub matrix: DMatrix<f64>,
    /// All `2n` eigenvalues in Schur order (stable block first).
    pub eigenvalues: Vec<Complex64>,
    pub stable: Vec<Eigenpair>,
    /// Per stable eigenvalue: another stable eigenvalue lies within
    /// `1e-6 · (1 + |λ|)`.
    pub clustered: Vec<bool>,
    /// Basis of the stable invariant subspace `[X; Y]` (orthonormal columns).
    pub x_block: DMatrix<Complex64>,
    pub y_block: DMatrix<Complex64>,
    pub symplectic_residual: f64,
    /// `min |1 − |λ||` over the spectrum.
    pub unit_circle_margin: f64,
    pub pairing_residual: f64,
}

fn j_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = -1.0;
        j[(n + i, i)] = 1.0;
    }
    j
}

/// `‖J⁻¹ Sᵀ J S − I‖_∞`, zero for an exactly symplectic `S`.
pub fn symplectic_residual(s: &DMatrix<f64>) -> f64 {
    let n2 = s.nrows();
    let j = j_matrix(n2 / 2);
    // J⁻¹ = −J
    let prod = -&j * s.transpose() * &j * s;
    linalg::inf_norm(&(prod - DMatrix::identity(n2, n2)))
}

/// Largest relative distance from `1/λ` and from `λ̄` to the nearest
/// eigenvalue, over all eigenvalues.
pub fn pairing_residual(eigs: &[Complex64]) -> f64 {
    let nearest = |target: Complex64| {
        eigs.iter().map(|z| (z - target).norm()).fold(f64::INFINITY, f64::min) / (1.0 + target.norm())
    };
    eigs.iter()
        .map(|&l| nearest(l.inv()).max(nearest(l.conj())))
        .fold(0.0, f64::max)
}

/// `[[Aᵀ + G A⁻¹ Q, −G A⁻¹], [−A⁻¹ Q, A⁻¹]]`.
pub fn build_symplectic(sys: &LinearSystem, g: &DMatrix<f64>) -> Result<Symplectic> {
    let n = sys.n();
    if g.shape() != (n, n) {
        return Err(Error::dims("information matrix", format!("{n}x{n}"), format!("{}x{}", g.nrows(), g.ncols())));
    }
    let a = sys.a();
    let q = sys.q();
    let condition = linalg::condition_number(a);
    if linalg::numerical_rank(a) < n {
        return Err(Error::SingularStateMatrix { condition });
    }
    let a_inv = linalg::inverse(a).ok_or(Error::SingularStateMatrix { condition })?;
    let mut warnings = Vec::new();
    if condition > CONDITION_WARN {
        let msg = format!("A is ill-conditioned (condition number {condition:e}); A⁻¹ may be inaccurate");
        warn!("{msg}");
        warnings.push(msg);
    }
    let g_ainv = g * &a_inv;
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    s.view_mut((0, 0), (n, n)).copy_from(&(a.transpose() + &g_ainv * q));
    s.view_mut((0, n), (n, n)).copy_from(&(-&g_ainv));
    s.view_mut((n, 0), (n, n)).copy_from(&(-&a_inv * q));
    s.view_mut((n, n), (n, n)).copy_from(&a_inv);
    let symplectic_residual = symplectic_residual(&s);
    Ok(Symplectic { matrix: s, symplectic_residual, warnings })
}

fn cluster_flags(values: &[Complex64], tol: f64) -> Vec<bool> {
    values
        .iter()
        .enumerate()
        .map(|(i, a)| {
            values
                .iter()
                .enumerate()
                .any(|(j, b)| i != j && (a - b).norm() <= tol * (1.0 + a.norm()))
        })
        .collect()
}

impl SymplecticSpectrum {
    /// Ordered Schur analysis of `S`; fails when `S ∉ dom(Ric)`.
    pub fn analyze(sym: &Symplectic) -> Result<Self> {
        let s = &sym.matrix;
        let n = s.nrows() / 2;
        let mut schur = ComplexSchur::new(s);
        let all = schur.eigenvalues();
        let unit_circle_margin = all.iter().map(|z| (1.0 - z.norm()).abs()).fold(f64::INFINITY, f64::min);
        if unit_circle_margin < UNIT_CIRCLE_MARGIN {
            return Err(Error::NotInDomRic {
                reason: format!("eigenvalue within {unit_circle_margin:e} of the unit circle"),
            });
        }
        let stable_count = schur.reorder(|z| z.norm() < 1.0);
        if stable_count != n {
            return Err(Error::NotInDomRic {
                reason: format!("{stable_count} stable eigenvalues, expected {n}"),
            });
        }
        let x_block = schur.z.view((0, 0), (n, n)).into_owned();
        let y_block = schur.z.view((n, 0), (n, n)).into_owned();
        let x_sv = x_block.singular_values();
        let (smax, smin) = x_sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), &v| (hi.max(v), lo.min(v)));
        if smin == 0.0 || smax / smin > COMPLEMENTARITY_COND {
            return Err(Error::NotInDomRic {
                reason: format!("stable subspace is not complementary to Im[0; I] (cond(X) = {:e})", smax / smin),
            });
        }
        let stable = schur.eigenpairs(|z| z.norm() < 1.0);
        let stable_values: Vec<Complex64> = stable.iter().map(|p| p.value).collect();
        let eigenvalues = schur.eigenvalues();
        Ok(Self {
            matrix: s.clone(),
            pairing_residual: pairing_residual(&eigenvalues),
            eigenvalues,
            clustered: cluster_flags(&stable_values, 1e-6),
            stable,
            x_block,
            y_block,
            symplectic_residual: sym.symplectic_residual,
            unit_circle_margin,
        })
    }

    /// `Y X⁻¹` (complex); its real part is the DARE solution.
    pub fn riccati_solution(&self) -> Result<DMatrix<Complex64>> {
        // P = Y X⁻¹  ⇔  Xᵀ Pᵀ = Yᵀ
        let sol = self
            .x_block
            .transpose()
            .lu()
            .solve(&self.y_block.transpose())
            .ok_or_else(|| Error::NotInDomRic { reason: "X block is singular".into() })?;
        Ok(sol.transpose())
    }

    pub fn stable_values(&self) -> Vec<Complex64> {
        self.stable.iter().map(|p| p.value).collect()
    }

    /// Left eigenpairs of `S` for eigenvalues with `|λ| > 1`, computed from
    /// an independent Schur factorization of `Sᵀ`. A left eigenvector `w`
    /// satisfies `wᴴ S = λ wᴴ`.
    pub fn unstable_left_eigenpairs(&self) -> Vec<Eigenpair> {
        let schur_t = ComplexSchur::new(&self.matrix.transpose());
        // Sᵀ w = μ w  ⇔  wᴴ S = μ̄ wᴴ for real S.
        schur_t
            .eigenpairs(|z| z.norm() > 1.0)
            .into_iter()
            .map(|p| Eigenpair { value: p.value.conj(), vector: p.vector })
            .collect()
    }
}

/// DARE solution from the stable invariant subspace of the symplectic matrix
/// built from `(A, Q, G)`.
pub fn solve_dare_symplectic(sys: &LinearSystem, g: &DMatrix<f64>) -> Result<(DareSolution, SymplecticSpectrum)> {
    let sym = build_symplectic(sys, g)?;
    let spectrum = SymplecticSpectrum::analyze(&sym)?;
    let pc = spectrum.riccati_solution()?;
    let imag = pc.iter().fold(0.0f64, |acc, z| acc.max(z.im.abs()));
    let p = linalg::symmetrize(&pc.map(|z| z.re));
    if imag > 1e-6 * (1.0 + linalg::max_abs(&p)) {
        warn!("symplectic DARE solution has imaginary part {imag:e}");
    }
    let n = sys.n();
    let ipg = DMatrix::identity(n, n) + &p * g;
    if linalg::condition_number(&ipg) > 1e14 {
        return Err(Error::Numerical("I + P G is numerically singular".into()));
    }
    let sol = finish(sys, g, p, None, DareMethod::Symplectic, 0)?;
    Ok((sol, spectrum))
}

/// Residual of the eigenpair relation `‖S v − λ v‖`.
pub fn eigen_residual(s: &DMatrix<f64>, pair: &Eigenpair) -> f64 {
    let sc = super::schur::to_complex(s);
    let r: DVector<Complex64> = sc * &pair.vector - pair.vector.map(|x| x * pair.value);
    r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
