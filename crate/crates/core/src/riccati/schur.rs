//! Ordered complex Schur form and eigenvector extraction for small dense
//! nonsymmetric matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// `M = Z T Zᴴ` with `T` upper triangular and `Z` unitary.
#[derive(Clone, Debug)]
pub struct ComplexSchur {
    pub t: DMatrix<Complex64>,
    pub z: DMatrix<Complex64>,
}

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: Complex64,
    /// Unit norm, first significant component real and positive.
    pub vector: DVector<Complex64>,
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

impl ComplexSchur {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (z, mut t) = to_complex(m).schur().unpack();
        for j in 0..t.ncols() {
            for i in (j + 1)..t.nrows() {
                t[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
        Self { t, z }
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        (0..self.t.nrows()).map(|i| self.t[(i, i)]).collect()
    }

    /// Swaps diagonal entries `k` and `k+1` with a unitary rotation.
    fn swap(&mut self, k: usize) {
        let a = self.t[(k, k)];
        let b = self.t[(k + 1, k + 1)];
        let t12 = self.t[(k, k + 1)];
        // Eigenvector of the 2×2 block for eigenvalue b is (t12, b − a).
        let (x, y) = (t12, b - a);
        let nrm = (x.norm_sqr() + y.norm_sqr()).sqrt();
        if nrm == 0.0 {
            return;
        }
        let (c, s) = (x / nrm, y / nrm);
        // Q = [[c, −s̄], [s, c̄]], first column is the eigenvector.
        let q = [[c, -s.conj()], [s, c.conj()]];
        let size = self.t.nrows();
        // T ← Qᴴ T on rows k, k+1.
        for j in 0..size {
            let (u, v) = (self.t[(k, j)], self.t[(k + 1, j)]);
            self.t[(k, j)] = q[0][0].conj() * u + q[1][0].conj() * v;
            self.t[(k + 1, j)] = q[0][1].conj() * u + q[1][1].conj() * v;
        }
        // T ← T Q and Z ← Z Q on columns k, k+1.
        for m in [&mut self.t, &mut self.z] {
            for i in 0..size {
                let (u, v) = (m[(i, k)], m[(i, k + 1)]);
                m[(i, k)] = u * q[0][0] + v * q[1][0];
                m[(i, k + 1)] = u * q[0][1] + v * q[1][1];
            }
        }
        self.t[(k + 1, k)] = Complex64::new(0.0, 0.0);
        self.t[(k, k)] = b;
        self.t[(k + 1, k + 1)] = a;
    }

    /// Moves every selected eigenvalue to the leading block, keeping relative
    /// order within both groups. Returns the size of the leading block.
    pub fn reorder(&mut self, select: impl Fn(Complex64) -> bool) -> usize {
        let size = self.t.nrows();
        let mut placed = 0;
        for k in 0..size {
            if select(self.t[(k, k)]) {
                for j in (placed..k).rev() {
                    self.swap(j);
                }
                placed += 1;
            }
        }
        placed
    }

    /// Eigenvector of `T` for the diagonal entry `k`, mapped back through `Z`.
    fn eigenvector(&self, k: usize) -> DVector<Complex64> {
        let size = self.t.nrows();
        let lambda = self.t[(k, k)];
        let scale = self.t.iter().fold(0.0f64, |acc, x| acc.max(x.norm())).max(1.0);
        let floor = f64::EPSILON * scale;
        let mut w = DVector::from_element(size, Complex64::new(0.0, 0.0));
        w[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = self.t[(i, k)];
            for j in (i + 1)..k {
                acc += self.t[(i, j)] * w[j];
            }
            let mut d = self.t[(i, i)] - lambda;
            if d.norm() < floor {
                d = Complex64::new(floor, 0.0);
            }
            w[i] = -acc / d;
        }
        canonicalize(&self.z * w)
    }

    /// Eigenpairs for every eigenvalue accepted by `select`, in diagonal order.
    pub fn eigenpairs(&self, select: impl Fn(Complex64) -> bool) -> Vec<Eigenpair> {
        (0..self.t.nrows())
            .filter(|&k| select(self.t[(k, k)]))
            .map(|k| Eigenpair { value: self.t[(k, k)], vector: self.eigenvector(k) })
            .collect()
    }
}

/// Scales to unit norm with the first significant entry real and positive.
pub fn canonicalize(v: DVector<Complex64>) -> DVector<Complex64> {
    let nrm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if nrm == 0.0 {
        return v;
    }
    let v = v.map(|x| x / nrm);
    let big = v.iter().fold(0.0f64, |acc, x| acc.max(x.norm()));
    let pivot = v.iter().find(|x| x.norm() > 1e-8 * big).copied().unwrap_or(Complex64::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    v.map(|x| x * phase)
}

/// Principal angle (radians) between the complex lines spanned by `u` and `v`.
pub fn subspace_angle(u: &DVector<Complex64>, v: &DVector<Complex64>) -> f64 {
    let nu = u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let u = u.map(|x| x / nu);
    let v = v.map(|x| x / nv);
    let proj: Complex64 = u.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
    // Sine of the angle from the residual of projecting v onto u; stable near zero.
    let resid = v - u.map(|x| x * proj);
    let s = resid.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().min(1.0);
    let c = proj.norm().min(1.0);
    s.atan2(c)
}
