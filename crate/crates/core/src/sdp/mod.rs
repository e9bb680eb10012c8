//! Small dense semidefinite programs in LMI form.
//!
//! Decision variables (symmetric matrices, rectangular matrices, scalars) are
//! flattened into one coordinate vector `y`. Symmetric matrices are stored as
//! their upper triangle with off-diagonal entries scaled by `√2`, so the
//! Euclidean inner product of coordinates equals the trace inner product of
//! matrices. Each LMI block is an affine map
//! `F(y) = F₀ + Σᵢ yᵢ Fᵢ` constrained to be PSD or NSD, and the problem is
//! `minimize cᵀy` over all blocks.
//!
//! ```
//! use nalgebra::DMatrix;
//! use rsd_core::sdp::{Problem, Sense, SolveStatus, VariableKind};
//!
//! // minimize γ  s.t.  [[γ, 1], [1, 1]] ⪰ 0
//! let mut p = Problem::new();
//! let g = p.add_variable("gamma", VariableKind::Scalar);
//! let mut b = p.block("schur", 2, Sense::PositiveSemidefinite);
//! b.constant(0, 1, &DMatrix::from_element(1, 1, 1.0));
//! b.constant(1, 1, &DMatrix::from_element(1, 1, 1.0));
//! b.scalar(0, 0, g, &DMatrix::from_element(1, 1, 1.0));
//! let block = b.build().unwrap();
//! p.add_lmi_block(block).unwrap();
//! p.add_objective(g, &DMatrix::from_element(1, 1, 1.0)).unwrap();
//! let sol = p.solve(&Default::default()).unwrap();
//! assert_eq!(sol.status, SolveStatus::Optimal);
//! assert!((sol.objective - 1.0).abs() < 1e-7);
//! ```

mod ipm;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub use ipm::SolverOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariableKind {
    Symmetric(usize),
    Rectangular(usize, usize),
    Scalar,
}

impl VariableKind {
    pub fn storage_len(&self) -> usize {
        match *self {
            VariableKind::Symmetric(n) => n * (n + 1) / 2,
            VariableKind::Rectangular(r, c) => r * c,
            VariableKind::Scalar => 1,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match *self {
            VariableKind::Symmetric(n) => (n, n),
            VariableKind::Rectangular(r, c) => (r, c),
            VariableKind::Scalar => (1, 1),
        }
    }
}

/// Handle to a registered decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct VarId(usize);

#[derive(Clone, Debug)]
pub struct DecisionVariable {
    pub name: String,
    pub kind: VariableKind,
    /// First coordinate in the flattened vector.
    pub offset: usize,
}

impl DecisionVariable {
    pub fn len(&self) -> usize {
        self.kind.storage_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Basis matrices: for each local coordinate, the nonzero entries
    /// `(row, col, weight)` of the matrix it multiplies.
    fn basis(&self) -> Vec<Vec<(usize, usize, f64)>> {
        match self.kind {
            VariableKind::Scalar => vec![vec![(0, 0, 1.0)]],
            VariableKind::Rectangular(r, c) => (0..r)
                .flat_map(|i| (0..c).map(move |j| vec![(i, j, 1.0)]))
                .collect(),
            VariableKind::Symmetric(n) => {
                let w = std::f64::consts::FRAC_1_SQRT_2;
                let mut out = Vec::with_capacity(n * (n + 1) / 2);
                for j in 0..n {
                    for i in 0..=j {
                        if i == j {
                            out.push(vec![(i, i, 1.0)]);
                        } else {
                            out.push(vec![(i, j, w), (j, i, w)]);
                        }
                    }
                }
                out
            }
        }
    }

    /// Matrix value from the flattened coordinates.
    pub fn decode(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let (r, c) = self.kind.shape();
        let mut m = DMatrix::zeros(r, c);
        for (k, entries) in self.basis().iter().enumerate() {
            for &(i, j, w) in entries {
                m[(i, j)] += w * y[self.offset + k];
            }
        }
        m
    }

    /// Flattened coordinates of a matrix value (symmetric part for symmetric kinds).
    pub fn encode(&self, value: &DMatrix<f64>) -> Result<Vec<f64>> {
        if value.shape() != self.kind.shape() {
            return Err(Error::dims(
                format!("value of variable `{}`", self.name),
                format!("{:?}", self.kind.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        Ok(self
            .basis()
            .iter()
            .map(|entries| entries.iter().map(|&(i, j, w)| w * value[(i, j)]).sum())
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    PositiveSemidefinite,
    NegativeSemidefinite,
}

/// Sparse symmetric coefficient: full list of `(row, col, value)` entries.
pub type Triplets = Vec<(usize, usize, f64)>;

#[derive(Clone, Debug)]
pub struct LmiBlock {
    pub label: String,
    pub size: usize,
    pub sense: Sense,
    pub constant: DMatrix<f64>,
    /// `(coordinate, coefficient)` pairs, sorted by coordinate.
    pub coefficients: Vec<(usize, Triplets)>,
}

impl LmiBlock {
    /// `F₀ + Σ yᵢ Fᵢ` (before applying the sense).
    pub fn evaluate(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (coord, trip) in &self.coefficients {
            let v = y[*coord];
            if v != 0.0 {
                for &(r, c, w) in trip {
                    m[(r, c)] += v * w;
                }
            }
        }
        m
    }

    /// Smallest eigenvalue of the block in its PSD orientation; nonnegative
    /// iff the constraint holds.
    pub fn margin(&self, y: &DVector<f64>) -> f64 {
        let m = self.evaluate(y);
        match self.sense {
            Sense::PositiveSemidefinite => linalg::min_eigenvalue(&m),
            Sense::NegativeSemidefinite => linalg::min_eigenvalue(&(-m)),
        }
    }
}

/// Assembles one LMI block term by term.
pub struct LmiBuilder<'p> {
    vars: &'p [DecisionVariable],
    label: String,
    size: usize,
    sense: Sense,
    constant: DMatrix<f64>,
    coeffs: BTreeMap<usize, BTreeMap<(usize, usize), f64>>,
    error: Option<Error>,
}

impl<'p> LmiBuilder<'p> {
    fn fits(&mut self, r0: usize, c0: usize, rows: usize, cols: usize) -> bool {
        if r0 + rows > self.size || c0 + cols > self.size {
            self.error.get_or_insert(Error::dims(
                format!("term placement in block `{}`", self.label),
                format!("within {}x{}", self.size, self.size),
                format!("{rows}x{cols} at ({r0},{c0})"),
            ));
            return false;
        }
        true
    }

    /// Adds `m` at `(r0, c0)`, and `mᵀ` at `(c0, r0)` when the placement is
    /// off the diagonal.
    pub fn constant(&mut self, r0: usize, c0: usize, m: &DMatrix<f64>) -> &mut Self {
        if !self.fits(r0, c0, m.nrows(), m.ncols()) || !self.fits(c0, r0, m.ncols(), m.nrows()) {
            return self;
        }
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                self.constant[(r0 + i, c0 + j)] += m[(i, j)];
                if r0 != c0 {
                    self.constant[(c0 + j, r0 + i)] += m[(i, j)];
                }
            }
        }
        self
    }

    /// Adds `L · V · R` (or `L · Vᵀ · R`) at `(r0, c0)`, mirrored like
    /// [`constant`](Self::constant).
    pub fn term(
        &mut self,
        r0: usize,
        c0: usize,
        left: &DMatrix<f64>,
        var: VarId,
        transpose: bool,
        right: &DMatrix<f64>,
    ) -> &mut Self {
        let v = &self.vars[var.0];
        let (vr, vc) = if transpose {
            let (r, c) = v.kind.shape();
            (c, r)
        } else {
            v.kind.shape()
        };
        if left.ncols() != vr || right.nrows() != vc {
            self.error.get_or_insert(Error::dims(
                format!("term on `{}` in block `{}`", v.name, self.label),
                format!("L with {vr} columns and R with {vc} rows"),
                format!("L {}x{}, R {}x{}", left.nrows(), left.ncols(), right.nrows(), right.ncols()),
            ));
            return self;
        }
        let (p, q) = (left.nrows(), right.ncols());
        if !self.fits(r0, c0, p, q) || !self.fits(c0, r0, q, p) {
            return self;
        }
        let offset = v.offset;
        for (k, entries) in v.basis().into_iter().enumerate() {
            let mut local = DMatrix::<f64>::zeros(p, q);
            for (i, j, w) in entries {
                let (a, b) = if transpose { (j, i) } else { (i, j) };
                // L[:, a] · w · R[b, :]
                for rr in 0..p {
                    let l = left[(rr, a)];
                    if l == 0.0 {
                        continue;
                    }
                    for cc in 0..q {
                        local[(rr, cc)] += l * w * right[(b, cc)];
                    }
                }
            }
            let entry = self.coeffs.entry(offset + k).or_default();
            for rr in 0..p {
                for cc in 0..q {
                    let x = local[(rr, cc)];
                    if x == 0.0 {
                        continue;
                    }
                    *entry.entry((r0 + rr, c0 + cc)).or_insert(0.0) += x;
                    if r0 != c0 {
                        *entry.entry((c0 + cc, r0 + rr)).or_insert(0.0) += x;
                    }
                }
            }
        }
        self
    }

    /// Adds `y · M` for a scalar variable.
    pub fn scalar(&mut self, r0: usize, c0: usize, var: VarId, m: &DMatrix<f64>) -> &mut Self {
        if self.vars[var.0].kind != VariableKind::Scalar {
            self.error.get_or_insert(Error::InvalidArgument(format!(
                "variable `{}` is not a scalar",
                self.vars[var.0].name
            )));
            return self;
        }
        if !self.fits(r0, c0, m.nrows(), m.ncols()) || !self.fits(c0, r0, m.ncols(), m.nrows()) {
            return self;
        }
        let entry = self.coeffs.entry(self.vars[var.0].offset).or_default();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let x = m[(i, j)];
                if x == 0.0 {
                    continue;
                }
                *entry.entry((r0 + i, c0 + j)).or_insert(0.0) += x;
                if r0 != c0 {
                    *entry.entry((c0 + j, r0 + i)).or_insert(0.0) += x;
                }
            }
        }
        self
    }

    pub fn build(self) -> Result<LmiBlock> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let scale = 1.0 + linalg::max_abs(&self.constant);
        if linalg::symmetry_residual(&self.constant) > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!("constant term of block `{}` is not symmetric", self.label)));
        }
        let mut coefficients = Vec::with_capacity(self.coeffs.len());
        for (coord, entries) in self.coeffs {
            for (&(r, c), &v) in &entries {
                let mirror = entries.get(&(c, r)).copied().unwrap_or(0.0);
                if (v - mirror).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "coefficient of coordinate {coord} in block `{}` is not symmetric at ({r},{c})",
                        self.label
                    )));
                }
            }
            let trip: Triplets = entries.into_iter().filter(|&(_, v)| v != 0.0).map(|((r, c), v)| (r, c, v)).collect();
            if !trip.is_empty() {
                coefficients.push((coord, trip));
            }
        }
        Ok(LmiBlock { label: self.label, size: self.size, sense: self.sense, constant: self.constant, coefficients })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
    NumericalFailure,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::MaxIterations => "max_iterations",
            SolveStatus::NumericalFailure => "numerical_failure",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Flattened decision vector (best iterate when not optimal).
    pub y: DVector<f64>,
    values: Vec<DMatrix<f64>>,
    pub objective: f64,
    /// `‖F₀ + Σ yᵢFᵢ − S‖_F / (1 + ‖F₀‖_F)` over all blocks.
    pub primal_infeasibility: f64,
    /// `‖c − A*(Z)‖ / (1 + ‖c‖)`.
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
    pub iterations: usize,
    /// Optimal phase-I value when infeasibility was checked.
    pub phase_one: Option<f64>,
}

impl SdpSolution {
    pub fn value(&self, var: VarId) -> &DMatrix<f64> {
        &self.values[var.0]
    }

    pub fn scalar(&self, var: VarId) -> f64 {
        self.values[var.0][(0, 0)]
    }
}

#[derive(Clone, Debug, Default)]
pub struct Problem {
    vars: Vec<DecisionVariable>,
    blocks: Vec<LmiBlock>,
    objective: BTreeMap<usize, f64>,
    dim: usize,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, name: impl Into<String>, kind: VariableKind) -> VarId {
        let var = DecisionVariable { name: name.into(), kind, offset: self.dim };
        self.dim += var.len();
        self.vars.push(var);
        VarId(self.vars.len() - 1)
    }

    pub fn variable(&self, id: VarId) -> &DecisionVariable {
        &self.vars[id.0]
    }

    pub fn variables(&self) -> &[DecisionVariable] {
        &self.vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    /// Number of flattened coordinates.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, label: impl Into<String>, size: usize, sense: Sense) -> LmiBuilder<'_> {
        LmiBuilder {
            vars: &self.vars,
            label: label.into(),
            size,
            sense,
            constant: DMatrix::zeros(size, size),
            coeffs: BTreeMap::new(),
            error: None,
        }
    }

    pub fn add_lmi_block(&mut self, block: LmiBlock) -> Result<()> {
        if block.constant.shape() != (block.size, block.size) {
            return Err(Error::dims("LMI constant", block.size, block.constant.nrows()));
        }
        for (coord, trip) in &block.coefficients {
            if *coord >= self.dim {
                return Err(Error::InvalidArgument(format!(
                    "block `{}` references unregistered coordinate {coord}",
                    block.label
                )));
            }
            if trip.iter().any(|&(r, c, _)| r >= block.size || c >= block.size) {
                return Err(Error::InvalidArgument(format!("block `{}` has an out-of-range entry", block.label)));
            }
            let lookup: BTreeMap<(usize, usize), f64> = trip.iter().map(|&(r, c, v)| ((r, c), v)).collect();
            for &(r, c, v) in trip {
                let m = lookup.get(&(c, r)).copied().unwrap_or(0.0);
                if (v - m).abs() > 1e-12 * (1.0 + v.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric coefficient for coordinate {coord} in block `{}`",
                        block.label
                    )));
                }
            }
        }
        if linalg::symmetry_residual(&block.constant) > 1e-12 * (1.0 + linalg::max_abs(&block.constant)) {
            return Err(Error::InvalidArgument(format!("asymmetric constant in block `{}`", block.label)));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Adds `⟨W, V⟩` (Frobenius inner product) to the minimized objective.
    pub fn add_objective(&mut self, var: VarId, weights: &DMatrix<f64>) -> Result<()> {
        let v = &self.vars[var.0];
        if weights.shape() != v.kind.shape() {
            return Err(Error::dims(format!("objective weights for `{}`", v.name), format!("{:?}", v.kind.shape()), format!("{:?}", weights.shape())));
        }
        for (k, entries) in v.basis().iter().enumerate() {
            let c: f64 = entries.iter().map(|&(i, j, w)| w * weights[(i, j)]).sum();
            *self.objective.entry(v.offset + k).or_insert(0.0) += c;
        }
        Ok(())
    }

    pub fn objective_vector(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim);
        for (&k, &v) in &self.objective {
            c[k] = v;
        }
        c
    }

    /// Flattened vector from per-variable values; unset variables are zero.
    pub fn assignment(&self, values: &[(VarId, &DMatrix<f64>)]) -> Result<DVector<f64>> {
        let mut y = DVector::zeros(self.dim);
        for (id, value) in values {
            let var = &self.vars[id.0];
            for (k, x) in var.encode(value)?.into_iter().enumerate() {
                y[var.offset + k] = x;
            }
        }
        Ok(y)
    }

    pub fn decode(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.vars.iter().map(|v| v.decode(y)).collect()
    }

    pub fn solve(&self, opts: &SolverOptions) -> Result<SdpSolution> {
        if self.blocks.is_empty() {
            return Err(Error::InvalidArgument("problem has no LMI blocks".into()));
        }
        Ok(ipm::solve(self, opts))
    }

    /// Sparse text dump: one line `block row col coord value` per nonzero,
    /// with `coord = -1` for the constant term; upper triangle only.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# variables");
        for v in &self.vars {
            let _ = writeln!(out, "# {} {:?} offset={} len={}", v.name, v.kind, v.offset, v.len());
        }
        let _ = writeln!(out, "# objective coord value");
        for (&k, &c) in &self.objective {
            let _ = writeln!(out, "c {k} {c:e}");
        }
        let _ = writeln!(out, "# block row col coord value");
        for (b, block) in self.blocks.iter().enumerate() {
            let sign = match block.sense {
                Sense::PositiveSemidefinite => "psd",
                Sense::NegativeSemidefinite => "nsd",
            };
            let _ = writeln!(out, "# block {b} `{}` size={} {sign}", block.label, block.size);
            for c in 0..block.size {
                for r in 0..=c {
                    let v = block.constant[(r, c)];
                    if v != 0.0 {
                        let _ = writeln!(out, "{b} {r} {c} -1 {v:e}");
                    }
                }
            }
            for (coord, trip) in &block.coefficients {
                for &(r, c, v) in trip {
                    if r <= c {
                        let _ = writeln!(out, "{b} {r} {c} {coord} {v:e}");
                    }
                }
            }
        }
        out
    }
}
