//! Plant and sensor-network data model.
//!
//! The process is `x_{k+1} = A x_k + w_k` with `w_k ~ N(0, Q)`, observed by an
//! ordered bank of sensors `y_{i,k} = C_i x_k + v_{i,k}`, `v_{i,k} ~ N(0, R_i)`.
//! A bank is summarized for estimation purposes by its information matrix
//! `G = Cᵀ R⁻¹ C`, which is additive across sensors.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry residual above which ingestion emits a warning.
pub const SYMMETRY_WARN: f64 = 1e-9;

/// Symmetrize a matrix declared symmetric, warning when the input was
/// noticeably asymmetric.
pub(crate) fn ingest_symmetric(m: DMatrix<f64>, what: &str, warnings: &mut Vec<String>) -> DMatrix<f64> {
    let res = linalg::symmetry_residual(&m);
    if res > SYMMETRY_WARN * (1.0 + linalg::inf_norm(&m)) {
        let msg = format!("{what} is not symmetric (residual {res:e}); using (M + Mᵀ)/2");
        warn!("{msg}");
        warnings.push(msg);
    }
    linalg::symmetrize(&m)
}

#[derive(Clone, Debug)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    warnings: Vec<String>,
}

impl LinearSystem {
    /// Builds a plant. `Q` is symmetrized and must be PSD; invertibility and
    /// controllability are reported by [`validate_system`] rather than enforced.
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::dims("state matrix A", "square, non-empty", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if q.shape() != (n, n) {
            return Err(Error::dims("process noise Q", format!("{n}x{n}"), format!("{}x{}", q.nrows(), q.ncols())));
        }
        let mut warnings = Vec::new();
        let q = ingest_symmetric(q, "Q", &mut warnings);
        let min_eig = linalg::min_eigenvalue(&q);
        if min_eig < -1e-10 * (1.0 + linalg::inf_norm(&q)) {
            return Err(Error::NotPositiveSemidefinite { what: "Q".into(), min_eigenvalue: min_eig });
        }
        Ok(Self { a, q, warnings })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Symmetric PSD square root of `Q`.
    pub fn sqrt_q(&self) -> DMatrix<f64> {
        linalg::psd_sqrt(&self.q)
    }
}

#[derive(Clone, Debug)]
pub struct Sensor {
    label: String,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    warnings: Vec<String>,
}

impl Sensor {
    pub fn new(label: impl Into<String>, c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let label = label.into();
        let m = c.nrows();
        if r.shape() != (m, m) {
            return Err(Error::dims(
                format!("noise covariance of sensor `{label}`"),
                format!("{m}x{m}"),
                format!("{}x{}", r.nrows(), r.ncols()),
            ));
        }
        let mut warnings = Vec::new();
        let r = ingest_symmetric(r, &format!("R of sensor `{label}`"), &mut warnings);
        if m > 0 {
            let min_eig = linalg::min_eigenvalue(&r);
            if min_eig <= 0.0 {
                return Err(Error::SensorNoiseNotPositiveDefinite { label, min_eigenvalue: min_eig });
            }
        }
        Ok(Self { label, c, r, warnings })
    }

    /// Scalar-output sensor with unit noise variance.
    pub fn unit_noise(label: impl Into<String>, row: &[f64]) -> Result<Self> {
        Self::new(label, DMatrix::from_row_slice(1, row.len(), row), DMatrix::identity(1, 1))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C_iᵀ R_i⁻¹ C_i`.
    pub fn information(&self) -> Result<DMatrix<f64>> {
        let n = self.c.ncols();
        if self.outputs() == 0 {
            return Ok(DMatrix::zeros(n, n));
        }
        let chol = self.r.clone().cholesky().ok_or_else(|| Error::SensorNoiseNotPositiveDefinite {
            label: self.label.clone(),
            min_eigenvalue: linalg::min_eigenvalue(&self.r),
        })?;
        let rinv_c = chol.solve(&self.c);
        Ok(linalg::symmetrize(&(self.c.transpose() * rinv_c)))
    }
}

/// Ordered list of sensors observing an `n`-dimensional state.
#[derive(Clone, Debug)]
pub struct SensorBank {
    n: usize,
    sensors: Vec<Sensor>,
    stacked_c: DMatrix<f64>,
    stacked_r: DMatrix<f64>,
    info: DMatrix<f64>,
}

impl SensorBank {
    pub fn new(n: usize, sensors: Vec<Sensor>) -> Result<Self> {
        for s in &sensors {
            if s.c.ncols() != n {
                return Err(Error::dims(
                    format!("output matrix of sensor `{}`", s.label),
                    format!("{n} columns"),
                    format!("{} columns", s.c.ncols()),
                ));
            }
        }
        let rows: usize = sensors.iter().map(Sensor::outputs).sum();
        let mut stacked_c = DMatrix::zeros(rows, n);
        let mut offset = 0;
        for s in &sensors {
            stacked_c.view_mut((offset, 0), s.c.shape()).copy_from(&s.c);
            offset += s.outputs();
        }
        let rs: Vec<&DMatrix<f64>> = sensors.iter().map(|s| &s.r).collect();
        let stacked_r = linalg::block_diag(&rs);
        let mut info = DMatrix::zeros(n, n);
        for s in &sensors {
            info += s.information()?;
        }
        let info = linalg::symmetrize(&info);
        Ok(Self { n, sensors, stacked_c, stacked_r, info })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            sensors: Vec::new(),
            stacked_c: DMatrix::zeros(0, n),
            stacked_r: DMatrix::zeros(0, 0),
            info: DMatrix::zeros(n, n),
        }
    }

    /// Splits a stacked output matrix into sensors by row counts, taking the
    /// matching diagonal blocks of `r`.
    pub fn from_stacked(
        c: &DMatrix<f64>,
        r: &DMatrix<f64>,
        row_partition: &[usize],
        label_prefix: &str,
    ) -> Result<Self> {
        let total: usize = row_partition.iter().sum();
        if total != c.nrows() || r.shape() != (total, total) {
            return Err(Error::dims(
                "stacked sensor partition",
                format!("{} rows", c.nrows()),
                format!("{total} rows (R is {}x{})", r.nrows(), r.ncols()),
            ));
        }
        let mut sensors = Vec::with_capacity(row_partition.len());
        let mut off = 0;
        for (i, &rows) in row_partition.iter().enumerate() {
            let ci = c.rows(off, rows).into_owned();
            let ri = r.view((off, off), (rows, rows)).into_owned();
            sensors.push(Sensor::new(format!("{label_prefix}{}", i + 1), ci, ri)?);
            off += rows;
        }
        Self::new(c.ncols(), sensors)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.stacked_c.nrows()
    }

    pub fn stacked_c(&self) -> &DMatrix<f64> {
        &self.stacked_c
    }

    pub fn stacked_r(&self) -> &DMatrix<f64> {
        &self.stacked_r
    }

    /// Information matrix `G = Cᵀ R⁻¹ C` (symmetric PSD, zero for an empty bank).
    pub fn information(&self) -> &DMatrix<f64> {
        &self.info
    }

    pub fn warnings(&self) -> Vec<String> {
        self.sensors.iter().flat_map(|s| s.warnings.iter().cloned()).collect()
    }
}

/// Information matrix of a bank.
pub fn information_matrix(bank: &SensorBank) -> DMatrix<f64> {
    bank.information().clone()
}

/// Appends the redundant sensors after the base sensors.
pub fn augment(base: &SensorBank, redundant: &SensorBank) -> Result<SensorBank> {
    if base.n != redundant.n {
        return Err(Error::dims("augmentation", format!("state dimension {}", base.n), redundant.n));
    }
    if redundant.is_empty() {
        return Ok(base.clone());
    }
    let mut sensors = base.sensors.clone();
    sensors.extend(redundant.sensors.iter().cloned());
    let rs: Vec<&DMatrix<f64>> = sensors.iter().map(|s| &s.r).collect();
    let stacked_r = linalg::block_diag(&rs);
    let stacked_c = linalg::vstack(&base.stacked_c, &redundant.stacked_c);
    // G = G₀ + G₁ exactly, without re-summing per sensor.
    let info = &base.info + &redundant.info;
    Ok(SensorBank { n: base.n, sensors, stacked_c, stacked_r, info })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankCheck {
    pub pass: bool,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertibilityCheck {
    pub pass: bool,
    pub rank: usize,
    pub condition: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub invertibility: InvertibilityCheck,
    pub controllability: RankCheck,
    pub observability: Option<RankCheck>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.invertibility.pass
            && self.controllability.pass
            && self.observability.as_ref().is_none_or(|o| o.pass)
    }
}

/// Condition number above which a (still invertible) `A` is flagged.
pub const CONDITION_WARN: f64 = 1e8;

/// Krylov matrix `[B, AB, …, A^{n−1}B]`.
fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let k = b.ncols();
    let mut out = DMatrix::zeros(n, n * k);
    let mut block = b.clone();
    for i in 0..n {
        out.view_mut((0, i * k), (n, k)).copy_from(&block);
        block = a * block;
    }
    out
}

/// Observability matrix `[C; CA; …; CA^{n−1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    controllability_matrix(&a.transpose(), &c.transpose()).transpose()
}

/// Checks invertibility of `A` and controllability of `(A, √Q)`.
pub fn validate_system(sys: &LinearSystem) -> ValidationReport {
    let n = sys.n();
    let mut warnings = sys.warnings.clone();
    let a_rank = linalg::numerical_rank(&sys.a);
    let condition = linalg::condition_number(&sys.a);
    let invertible = a_rank == n;
    if invertible && condition > CONDITION_WARN {
        warnings.push(format!("A is ill-conditioned (condition number {condition:e})"));
    }
    let ctrb = controllability_matrix(&sys.a, &sys.sqrt_q());
    let c_rank = linalg::numerical_rank(&ctrb);
    ValidationReport {
        n,
        invertibility: InvertibilityCheck { pass: invertible, rank: a_rank, condition },
        controllability: RankCheck { pass: c_rank == n, rank: c_rank },
        observability: None,
        warnings,
    }
}

/// Rank test on the stacked observability matrix of `(A, C)`.
pub fn check_observability(sys: &LinearSystem, bank: &SensorBank) -> Result<RankCheck> {
    if bank.n() != sys.n() {
        return Err(Error::dims("observability check", format!("state dimension {}", sys.n()), bank.n()));
    }
    if bank.outputs() == 0 {
        return Ok(RankCheck { pass: false, rank: 0 });
    }
    let rank = linalg::numerical_rank(&observability_matrix(&sys.a, &bank.stacked_c));
    Ok(RankCheck { pass: rank == sys.n(), rank })
}

/// Full validation of a plant together with its base sensor bank.
pub fn validate_network(sys: &LinearSystem, bank: &SensorBank) -> Result<ValidationReport> {
    let mut report = validate_system(sys);
    report.observability = Some(check_observability(sys, bank)?);
    report.warnings.extend(bank.warnings());
    Ok(report)
}
