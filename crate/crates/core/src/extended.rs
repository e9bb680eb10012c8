//! Double-double (about 32 significant digits) kernels for quantities that
//! are differences of nearly equal Riccati solutions.
//!
//! In double precision `P̄ − P` only resolves eigenvalues above roughly
//! `1e-13 · ‖P‖`; below that the sign of an eigenvalue is rounding noise and
//! congruence by `A` can move it across any fixed zero band. Solving both
//! equations here and differencing in the same arithmetic pushes that floor
//! down by about fifteen decades.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Div, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SensorBank;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

/// Error-free `a + b`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Error-free `a + b` for `|a| ≥ |b|`.
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Error-free `a · b` through a fused multiply-add.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub const fn from_f64(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (h, l) = quick_two_sum(hi, lo);
        Dd { hi: h, lo: l }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn mul_f64(self, b: f64) -> Self {
        let (p, e) = two_prod(self.hi, b);
        Self::renorm(p, e + self.lo * b)
    }

    /// One Newton correction on the double-precision root; zero for
    /// non-positive input.
    pub fn sqrt(self) -> Self {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let q = self.hi.sqrt();
        let (p, e) = two_prod(q, q);
        let r = (self - Dd { hi: p, lo: e }).hi;
        Self::renorm(q, r / (2.0 * q))
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        Dd::renorm(s, e + f)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        Dd::renorm(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    /// Long division with three partial quotients.
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        if !q1.is_finite() {
            return Dd::from_f64(q1);
        }
        let r = self - o.mul_f64(q1);
        let q2 = r.hi / o.hi;
        let r = r - o.mul_f64(q2);
        let q3 = r.hi / o.hi;
        Dd::renorm(q1, q2) + Dd::from_f64(q3)
    }
}

impl AddAssign for Dd {
    fn add_assign(&mut self, o: Dd) {
        *self = *self + o;
    }
}

impl SubAssign for Dd {
    fn sub_assign(&mut self, o: Dd) {
        *self = *self - o;
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&o.lo),
            ord => Some(ord),
        }
    }
}

impl PartialEq<f64> for Dd {
    fn eq(&self, o: &f64) -> bool {
        *self == Dd::from_f64(*o)
    }
}

impl PartialOrd<f64> for Dd {
    fn partial_cmp(&self, o: &f64) -> Option<Ordering> {
        self.partial_cmp(&Dd::from_f64(*o))
    }
}

type T = Dd;
const ZERO: T = Dd::ZERO;
const ONE: T = Dd::ONE;

/// Relative step at which the doubling iteration stops.
pub const DOUBLING_TOL: f64 = 1e-29;
pub const DOUBLING_MAX_ITER: usize = 96;

/// Dense row-major matrix of double-double entries.
#[derive(Clone, Debug, PartialEq)]
pub struct XMatrix {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl Index<(usize, usize)> for XMatrix {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for XMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

impl XMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    /// Exact embedding of a double-precision matrix.
    pub fn from_f64(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out[(i, j)] = T::from_f64(m[(i, j)]);
            }
        }
        out
    }

    /// Rounds every entry to the nearest double.
    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)].to_f64())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape(), "matching shapes");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrize(&self) -> Self {
                let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                let v = (self[(i, j)] + self[(j, i)]).mul_f64(0.5);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Maximum absolute row sum, rounded to a double.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)].to_f64().abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `self⁻¹ rhs` by Gaussian elimination with partial pivoting; `None` when
    /// a pivot vanishes.
    pub fn solve(&self, rhs: &Self) -> Option<Self> {
        let n = self.rows;
        assert!(self.cols == n && rhs.rows == n, "square system");
        let mut a = self.clone();
        let mut b = rhs.clone();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| {
                a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap_or(std::cmp::Ordering::Equal)
            })?;
            if a[(p, k)] == ZERO || !a[(p, k)].is_finite() {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
                for j in 0..b.cols {
                    b.data.swap(p * b.cols + j, k * b.cols + j);
                }
            }
            let piv = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / piv;
                if f == ZERO {
                    continue;
                }
                for j in k..n {
                    let v = a[(k, j)];
                    a[(i, j)] -= f * v;
                }
                for j in 0..b.cols {
                    let v = b[(k, j)];
                    b[(i, j)] -= f * v;
                }
            }
        }
        for k in (0..n).rev() {
            for j in 0..b.cols {
                let mut s = b[(k, j)];
                for i in k + 1..n {
                    s -= a[(k, i)] * b[(i, j)];
                }
                b[(k, j)] = s / a[(k, k)];
            }
        }
        Some(b)
    }

    /// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<T> {
        let n = self.rows;
        let mut a = self.symmetrize();
        let frob = a.data.iter().fold(ZERO, |s, v| s + *v * *v).sqrt();
        for _sweep in 0..64 {
            let mut off = ZERO;
            for i in 0..n {
                for j in 0..i {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
            if off == ZERO || off.sqrt() <= frob.mul_f64(1e-33) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    // below this the rotation is an identity to working precision
                    if apq.abs().hi <= 1e-40 * (a[(p, p)].abs().hi + a[(q, q)].abs().hi) {
                        a[(p, q)] = ZERO;
                        a[(q, p)] = ZERO;
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / apq.mul_f64(2.0);
                    let t = {
                        // t ≈ 1/(2θ) once θ² would overflow
                        let r = if theta.abs() > Dd::from_f64(1e150) {
                            ONE / theta.abs().mul_f64(2.0)
                        } else {
                            ONE / (theta.abs() + (theta * theta + ONE).sqrt())
                        };
                        if theta < 0.0 {
                            -r
                        } else {
                            r
                        }
                    };
                    let c = ONE / (t * t + ONE).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }
}

/// `‖A (I + P G)⁻¹ P Aᵀ − P + Q‖_∞` for double-precision data, evaluated
/// without the cancellation that limits the same expression in `f64` when
/// `I + P G` is ill conditioned.
pub fn dare_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, g: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<f64> {
    let n = p.nrows();
    let px = XMatrix::from_f64(p);
    let ax = XMatrix::from_f64(a);
    let post = XMatrix::identity(n).add(&px.mul(&XMatrix::from_f64(g))).solve(&px)?;
    let r = ax.mul(&post).mul(&ax.transpose()).sub(&px).add(&XMatrix::from_f64(q));
    Some(r.inf_norm())
}

/// `Σ Cᵢᵀ Rᵢ⁻¹ Cᵢ` over the sensors of `bank`. Forming it per sensor keeps
/// the information of an augmented bank exactly additive.
pub fn information(bank: &SensorBank) -> Result<XMatrix> {
    let n = bank.n();
    let mut g = XMatrix::zeros(n, n);
    for s in bank.sensors() {
        let c = XMatrix::from_f64(s.c());
        let rc = XMatrix::from_f64(s.r())
            .solve(&c)
            .ok_or_else(|| Error::Numerical(format!("noise covariance of `{}` is singular", s.label())))?;
        g = g.add(&c.transpose().mul(&rc));
    }
    Ok(g.symmetrize())
}

/// Stabilizing solution of `P = A (I + P G)⁻¹ P Aᵀ + Q` by the structure-
/// preserving doubling iteration, which converges quadratically:
/// `A₀ = Aᵀ, G₀ = G, H₀ = Q`,
/// `Aₖ₊₁ = Aₖ Wₖ⁻¹ Aₖ`, `Gₖ₊₁ = Gₖ + Aₖ Wₖ⁻¹ Gₖ Aₖᵀ`,
/// `Hₖ₊₁ = Hₖ + Aₖᵀ Hₖ Wₖ⁻¹ Aₖ` with `Wₖ = I + Gₖ Hₖ`; `Hₖ → P`.
pub fn dare_doubling(a: &DMatrix<f64>, q: &DMatrix<f64>, g: &XMatrix) -> Result<XMatrix> {
    let n = a.nrows();
    let id = XMatrix::identity(n);
    let mut ak = XMatrix::from_f64(&a.transpose());
    let mut gk = g.clone();
    let mut hk = XMatrix::from_f64(q);
    let mut step = f64::INFINITY;
    for _ in 0..DOUBLING_MAX_ITER {
        let w = id.add(&gk.mul(&hk));
        let singular = || Error::Numerical("I + G H is singular in the doubling iteration".into());
        let w_a = w.solve(&ak).ok_or_else(singular)?;
        let w_g = w.solve(&gk).ok_or_else(singular)?;
        let h_next = hk.add(&ak.transpose().mul(&hk).mul(&w_a)).symmetrize();
        let g_next = gk.add(&ak.mul(&w_g).mul(&ak.transpose())).symmetrize();
        ak = ak.mul(&w_a);
        step = h_next.sub(&hk).inf_norm();
        hk = h_next;
        gk = g_next;
        if !step.is_finite() {
            break;
        }
        if step <= DOUBLING_TOL * (1.0 + hk.inf_norm()) {
            return Ok(hk);
        }
    }
    Err(Error::NotConverged { iterations: DOUBLING_MAX_ITER, last_step: step })
}

/// `(I + P G)⁻¹ P`.
pub fn posteriori(p: &XMatrix, g: &XMatrix) -> Result<XMatrix> {
    let n = p.rows;
    let ipg = XMatrix::identity(n).add(&p.mul(g));
    ipg.solve(p)
        .map(|m| m.symmetrize())
        .ok_or_else(|| Error::Numerical("I + P G is singular".into()))
}
