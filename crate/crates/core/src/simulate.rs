//! Monte-Carlo Kalman filtering of the true process.
//!
//! Noise is drawn from ChaCha8 streams keyed by `(seed, trial, stream)`:
//! stream 0 drives the process noise and stream `i + 1` drives sensor `i`.
//! Networks that share their leading sensors therefore see identical noise
//! on those sensors, which is what makes cross-network variance ratios
//! meaningful. Gaussian samples come from the Marsaglia polar method.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate_network, LinearSystem, SensorBank};
use crate::riccati::{solve_dare_fixed_point, FixedPointOptions};

/// Covariance norm beyond which the recursion is declared divergent.
pub const BLOWUP_NORM: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub steps: usize,
    pub trials: usize,
    pub seed: u64,
    /// Initial true state; zero when absent.
    pub x0: Option<DVector<f64>>,
    /// Initial filter covariance; `Q` when absent. The initial estimate is zero.
    pub p0: Option<DMatrix<f64>>,
    pub burn_in: usize,
    pub bins: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { steps: 20_000, trials: 1, seed: 0, x0: None, p0: None, burn_in: 200, bins: 60 }
    }
}

impl SimConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(Error::InvalidArgument(format!(
                "steps ({}) must exceed burn_in ({})",
                self.steps, self.burn_in
            )));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.bins == 0 {
            return Err(Error::InvalidArgument("bins must be at least 1".into()));
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != n {
                return Err(Error::dims("initial state", n, x0.len()));
            }
        }
        if let Some(p0) = &self.p0 {
            if p0.shape() != (n, n) {
                return Err(Error::dims("initial covariance", format!("{n}x{n}"), format!("{}x{}", p0.nrows(), p0.ncols())));
            }
            let lmin = linalg::min_eigenvalue(&linalg::symmetrize(p0));
            if lmin < -1e-10 * (1.0 + linalg::inf_norm(p0)) {
                return Err(Error::NotPositiveSemidefinite { what: "initial covariance".into(), min_eigenvalue: lmin });
            }
        }
        Ok(())
    }
}

/// Standard normal stream (Marsaglia polar method).
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, trial: usize, stream: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((trial as u64) << 32) | stream as u64);
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        loop {
            let u = 2.0 * self.rng.random::<f64>() - 1.0;
            let v = 2.0 * self.rng.random::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.sample())
    }
}

#[derive(Clone, Debug)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `count / (total · width)`.
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bin_left", "bin_right", "count", "density"])?;
        for i in 0..self.counts.len() {
            out.write_record([
                format!("{}", self.edges[i]),
                format!("{}", self.edges[i + 1]),
                self.counts[i].to_string(),
                format!("{}", self.density[i]),
            ])?;
        }
        out.flush()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RangePolicy {
    /// `mean ± k` sample standard deviations.
    Sigma(f64),
    Fixed(f64, f64),
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy::Sigma(4.0)
    }
}

/// Density-normalized histogram; samples outside the range land in the edge
/// bins so counts always sum to the sample count.
pub fn histogram(samples: &[f64], bins: usize, range: RangePolicy) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("histogram of an empty series".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut lo, mut hi) = match range {
        RangePolicy::Fixed(lo, hi) => (lo, hi),
        RangePolicy::Sigma(k) => {
            let var = if samples.len() > 1 {
                samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let sd = var.sqrt();
            (mean - k * sd, mean + k * sd)
        }
    };
    if !(hi > lo) {
        let half = 0.5 * mean.abs().max(1.0);
        lo = mean - half;
        hi = mean + half;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let idx = ((x - lo) / width).floor();
        let idx = if idx.is_nan() || idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    Ok(Histogram { edges, counts, density })
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    /// Per trial: `(steps − burn_in) × n` posteriori errors `x̂_{k|k} − x_k`.
    pub error_series: Vec<DMatrix<f64>>,
    /// Sample covariance of all retained errors.
    pub empirical_covariance: DMatrix<f64>,
    /// Steady-state posteriori covariance from the DARE.
    pub predicted_covariance: DMatrix<f64>,
    /// Filter covariance `P_{k|k}` at the last step of trial 0.
    pub final_filter_covariance: DMatrix<f64>,
    /// First step at which `‖P_{k|k} − P_p‖_∞ ≤ 1e-8`.
    pub settle_step: Option<usize>,
    pub histograms: Vec<Histogram>,
    pub burn_in: usize,
}

impl SimOutput {
    pub fn variances(&self) -> DVector<f64> {
        self.empirical_covariance.diagonal()
    }

    /// Mean squared error over retained samples.
    pub fn mse(&self) -> f64 {
        linalg::trace(&self.empirical_covariance)
    }

    /// `k, e_1, …, e_n` for one trial, `k` counted from the first step.
    pub fn write_trajectory_csv(&self, trial: usize, w: &mut impl Write) -> std::io::Result<()> {
        let series = &self.error_series[trial];
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend((1..=series.ncols()).map(|i| format!("e_{i}")));
        out.write_record(&header)?;
        for r in 0..series.nrows() {
            let mut rec = vec![(self.burn_in + r).to_string()];
            rec.extend(series.row(r).iter().map(|v| format!("{v}")));
            out.write_record(&rec)?;
        }
        out.flush()
    }

    /// Writes `trajectory.csv` (trial 0) and `histogram_<i>.csv` into `dir`.
    pub fn write_csv_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("trajectory.csv"))?);
        self.write_trajectory_csv(0, &mut f)?;
        for (i, h) in self.histograms.iter().enumerate() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("histogram_{}.csv", i + 1)))?);
            h.write_csv(&mut f)?;
        }
        Ok(())
    }
}

struct Trial {
    errors: DMatrix<f64>,
    final_p: DMatrix<f64>,
    settle_step: Option<usize>,
}

fn run_trial(
    sys: &LinearSystem,
    bank: &SensorBank,
    config: &SimConfig,
    trial: usize,
    sqrt_q: &DMatrix<f64>,
    noise_factors: &[DMatrix<f64>],
    p_post: &DMatrix<f64>,
) -> Result<Trial> {
    let n = sys.n();
    let a = sys.a();
    let c = bank.stacked_c();
    let r = bank.stacked_r();
    let mut process = NormalStream::new(config.seed, trial, 0);
    let mut sensors: Vec<NormalStream> =
        (0..bank.sensors().len()).map(|i| NormalStream::new(config.seed, trial, i + 1)).collect();

    // Error-state form of truth plus filter: with ẽ = x̂_{k|k−1} − x_k,
    // e_{k|k} = (I − K C) ẽ + K v and ẽ_{k+1} = A e_{k|k} − w. Propagating
    // x and x̂ separately would cancel catastrophically for unstable A.
    let mut e_prior = -config.x0.clone().unwrap_or_else(|| DVector::zeros(n));
    let mut p = config.p0.clone().unwrap_or_else(|| sys.q().clone());
    let retained = config.steps - config.burn_in;
    let mut errors = DMatrix::zeros(retained, n);
    let mut settle_step = None;
    let mut v = DVector::zeros(c.nrows());
    let mut final_p = p.clone();

    for k in 0..config.steps {
        let mut off = 0;
        for (s, (sensor, l)) in bank.sensors().iter().zip(noise_factors).enumerate() {
            let m = sensor.outputs();
            let z = sensors[s].vector(m);
            v.rows_mut(off, m).copy_from(&(l * z));
            off += m;
        }

        // K = P Cᵀ (C P Cᵀ + R)⁻¹
        let pct = &p * c.transpose();
        let innov = linalg::symmetrize(&(c * &pct + r));
        let chol = innov
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("innovation covariance lost definiteness at step {k}")))?;
        let gain = chol.solve(&pct.transpose()).transpose();
        let e = &e_prior + &gain * (&v - c * &e_prior);
        p = linalg::symmetrize(&(&p - &gain * c * &p));
        let norm = linalg::inf_norm(&p);
        if !norm.is_finite() || norm > BLOWUP_NORM {
            return Err(Error::SimulationDiverged { step: k, norm });
        }
        if settle_step.is_none() && linalg::inf_norm(&(&p - p_post)) <= 1e-8 {
            settle_step = Some(k);
        }
        if k >= config.burn_in {
            errors.row_mut(k - config.burn_in).copy_from(&e.transpose());
        }
        final_p = p.clone();

        let w = sqrt_q * process.vector(n);
        e_prior = a * e - w;
        p = linalg::symmetrize(&(a * &p * a.transpose() + sys.q()));
    }
    Ok(Trial { errors, final_p, settle_step })
}

/// Simulates truth and the time-varying filter from `x̂₀ = 0`; trials run in
/// parallel and are aggregated in trial order.
pub fn run_kalman(sys: &LinearSystem, bank: &SensorBank, config: &SimConfig) -> Result<SimOutput> {
    let n = sys.n();
    config.validate(n)?;
    let report = validate_network(sys, bank)?;
    if !report.controllability.pass {
        return Err(Error::PropertyViolated(format!(
            "(A, sqrt(Q)) is not controllable (rank {} < {n})",
            report.controllability.rank
        )));
    }
    if let Some(obs) = &report.observability {
        if !obs.pass {
            return Err(Error::NotObservable { rank: obs.rank, n });
        }
    }
    let predicted = solve_dare_fixed_point(sys, bank, FixedPointOptions::default())?.p_post;
    let sqrt_q = sys.sqrt_q();
    let factors: Vec<DMatrix<f64>> = bank
        .sensors()
        .iter()
        .map(|s| s.r().clone().cholesky().expect("sensor noise is positive definite").unpack())
        .collect();

    let trials: Vec<Trial> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(sys, bank, config, t, &sqrt_q, &factors, &predicted))
        .collect::<Result<_>>()?;

    let total: usize = trials.iter().map(|t| t.errors.nrows()).sum();
    let mut mean = DVector::zeros(n);
    for t in &trials {
        for r in 0..t.errors.nrows() {
            mean += t.errors.row(r).transpose();
        }
    }
    mean /= total as f64;
    let mut cov = DMatrix::zeros(n, n);
    for t in &trials {
        for r in 0..t.errors.nrows() {
            let d = t.errors.row(r).transpose() - &mean;
            cov += &d * d.transpose();
        }
    }
    cov /= (total.max(2) - 1) as f64;

    let mut histograms = Vec::with_capacity(n);
    for i in 0..n {
        let samples: Vec<f64> = trials.iter().flat_map(|t| t.errors.column(i).iter().copied().collect::<Vec<_>>()).collect();
        histograms.push(histogram(&samples, config.bins, RangePolicy::default())?);
    }
    let final_filter_covariance = trials[0].final_p.clone();
    let settle_step = trials[0].settle_step;
    Ok(SimOutput {
        error_series: trials.into_iter().map(|t| t.errors).collect(),
        empirical_covariance: linalg::symmetrize(&cov),
        predicted_covariance: predicted,
        final_filter_covariance,
        settle_step,
        histograms,
        burn_in: config.burn_in,
    })
}

#[derive(Clone, Debug)]
pub struct NetworkRun {
    pub name: String,
    pub output: SimOutput,
}

/// Per-element `var(other) / var(reference)`.
#[derive(Clone, Debug)]
pub struct VarianceRatio {
    pub reference: String,
    pub other: String,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub runs: Vec<NetworkRun>,
    /// One entry per ordered pair `(i, j)` with `i < j`.
    pub ratios: Vec<VarianceRatio>,
}

impl Comparison {
    pub fn ratio(&self, reference: &str, other: &str) -> Option<&VarianceRatio> {
        self.ratios.iter().find(|r| r.reference == reference && r.other == other)
    }
}

/// Runs every network with the same seed and reports pairwise variance ratios.
pub fn compare_networks(sys: &LinearSystem, banks: &[(String, SensorBank)], config: &SimConfig) -> Result<Comparison> {
    let runs: Vec<NetworkRun> = banks
        .iter()
        .map(|(name, bank)| Ok(NetworkRun { name: name.clone(), output: run_kalman(sys, bank, config)? }))
        .collect::<Result<_>>()?;
    let mut ratios = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let vi = runs[i].output.variances();
            let vj = runs[j].output.variances();
            ratios.push(VarianceRatio {
                reference: runs[i].name.clone(),
                other: runs[j].name.clone(),
                ratios: vj.iter().zip(vi.iter()).map(|(a, b)| a / b).collect(),
            });
        }
    }
    Ok(Comparison { runs, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::augment;
    use crate::testkit::example;

    fn short() -> SimConfig {
        SimConfig { steps: 3000, burn_in: 200, seed: 11, ..SimConfig::default() }
    }

    #[test]
    fn polar_sampler_moments() {
        let mut s = NormalStream::new(1, 0, 0);
        let xs: Vec<f64> = (0..200_000).map(|_| s.sample()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: Vec<f64> = {
            let mut s = NormalStream::new(5, 0, 1);
            (0..8).map(|_| s.sample()).collect()
        };
        let b: Vec<f64> = {
            let mut s = NormalStream::new(5, 0, 1);
            (0..8).map(|_| s.sample()).collect()
        };
        let c: Vec<f64> = {
            let mut s = NormalStream::new(5, 1, 1);
            (0..8).map(|_| s.sample()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[2.5; 40], 10, RangePolicy::default()).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.total(), 40);

        let mut s = NormalStream::new(3, 0, 0);
        let xs: Vec<f64> = (0..100_000).map(|_| s.sample()).collect();
        let h = histogram(&xs, 81, RangePolicy::default()).unwrap();
        assert_eq!(h.total(), xs.len());
        let mid = h.density[40];
        assert!((mid - 0.3989).abs() < 0.1 * 0.3989, "{mid}");
        let integral: f64 = h.density.iter().zip(h.edges.windows(2)).map(|(d, e)| d * (e[1] - e[0])).sum();
        assert!((integral - 1.0).abs() < 1e-12);

        let h = histogram(&[-10.0, 0.0, 10.0], 4, RangePolicy::Fixed(-1.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![1, 0, 1, 1]);
        assert!(histogram(&[], 4, RangePolicy::default()).is_err());
    }

    #[test]
    fn covariance_recursion_settles_to_steady_state() {
        let out = run_kalman(&example::system(), &example::base_bank(), &short()).unwrap();
        let k = out.settle_step.expect("filter covariance settles");
        assert!(k <= 500, "{k}");
        assert!(linalg::inf_norm(&(&out.final_filter_covariance - &out.predicted_covariance)) <= 1e-8);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SimConfig { trials: 2, ..short() };
        let a = run_kalman(&example::system(), &example::base_bank(), &cfg).unwrap();
        let b = run_kalman(&example::system(), &example::base_bank(), &cfg).unwrap();
        assert_eq!(a.error_series, b.error_series);
        assert_eq!(a.empirical_covariance, b.empirical_covariance);
    }

    #[test]
    fn uncontrollable_plant_is_rejected() {
        let sys = LinearSystem::new(example::system().a().clone(), DMatrix::zeros(2, 2)).unwrap();
        let r = run_kalman(&sys, &example::base_bank(), &short());
        assert!(matches!(r, Err(Error::PropertyViolated(_))));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = SimConfig { steps: 100, burn_in: 100, ..SimConfig::default() };
        assert!(run_kalman(&example::system(), &example::base_bank(), &cfg).is_err());
    }

    #[test]
    fn full_length_base_network_matches_prediction() {
        let cfg = SimConfig { seed: 2024, ..SimConfig::default() };
        let out = run_kalman(&example::system(), &example::base_bank(), &cfg).unwrap();
        let emp = out.variances();
        let pred = out.predicted_covariance.diagonal();
        for i in 0..2 {
            assert!((emp[i] / pred[i] - 1.0).abs() < 0.05, "element {i}: {} vs {}", emp[i], pred[i]);
        }
        assert!((out.mse() / linalg::trace(&out.predicted_covariance) - 1.0).abs() < 0.05);
    }

    #[test]
    fn shared_sensor_noise_makes_unaffected_element_identical() {
        let base = example::base_bank();
        let r1 = augment(&base, &example::r1_redundant()).unwrap();
        let cmp = compare_networks(&example::system(), &[("base".into(), base), ("r1".into(), r1)], &short()).unwrap();
        let ratio = &cmp.ratio("base", "r1").unwrap().ratios;
        assert!(ratio[0] < 0.9);
        assert!((ratio[1] - 1.0).abs() < 1e-9, "{}", ratio[1]);
    }

    #[test]
    fn csv_outputs_have_expected_shape() {
        let out = run_kalman(&example::system(), &example::base_bank(), &SimConfig { steps: 300, burn_in: 200, bins: 7, ..short() }).unwrap();
        let mut buf = Vec::new();
        out.write_trajectory_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,e_1,e_2");
        assert_eq!(lines.len(), 101);
        assert!(lines[1].starts_with("200,"));
        let mut buf = Vec::new();
        out.histograms[0].write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "bin_left,bin_right,count,density");
        assert_eq!(text.lines().count(), 8);
    }
}
