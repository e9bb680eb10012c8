use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rsd_core::analysis::{assess_improvement, CommonEigenpairReport, Inertia, OrderingVerdict, SpectralTolerances};
use rsd_core::design::{design_redundant_sensors, performance_bound, DesignResult, DesignStatus};
use rsd_core::model::{augment, validate_network, ValidationReport};
use rsd_core::riccati::{solve_dare_fixed_point, solve_dare_symplectic, FixedPointOptions};
use rsd_core::simulate::compare_networks;
use rsd_core::{linalg, DareSolution, SensorBank};
use serde::Serialize;

use crate::config::Config;
use crate::error::{CliError, CliResult, ExitKind};
use crate::report::{rows, vector};

/// What a command produced: the result payload plus the exit status it
/// implies. A nonzero status with a payload still writes the report.
pub struct CommandOutput {
    pub result: serde_json::Value,
    pub kind: ExitKind,
    pub status: String,
    /// Human-readable lines for the terminal.
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
    /// Set when `kind` is nonzero.
    pub failure: Option<String>,
}

impl CommandOutput {
    fn ok(result: impl Serialize, summary: Vec<String>, warnings: Vec<String>) -> Self {
        Self {
            result: serde_json::to_value(result).expect("serializable"),
            kind: ExitKind::Success,
            status: "ok".into(),
            summary,
            warnings,
            failure: None,
        }
    }
}

#[derive(Serialize)]
struct CheckJson {
    pass: bool,
    rank: usize,
}

#[derive(Serialize)]
struct ValidateJson {
    n: usize,
    invertibility: CheckJson,
    condition_number: f64,
    controllability: CheckJson,
    observability: Option<CheckJson>,
    redundant_observability: Option<CheckJson>,
    pass: bool,
}

fn failed_assumptions(v: &ValidationReport) -> Vec<String> {
    let mut out = Vec::new();
    if !v.invertibility.pass {
        out.push(format!(
            "invertibility assumption violated: A is singular (rank {} < {})",
            v.invertibility.rank, v.n
        ));
    }
    if !v.controllability.pass {
        out.push(format!(
            "controllability assumption violated: (A, Q^1/2) has controllability rank {} < {}",
            v.controllability.rank, v.n
        ));
    }
    if let Some(o) = v.observability.as_ref().filter(|o| !o.pass) {
        out.push(format!(
            "collective observability assumption violated: (A, C) of the base sensors has observability rank {} < {}",
            o.rank, v.n
        ));
    }
    out
}

pub fn validate(cfg: &Config) -> CliResult<CommandOutput> {
    let sys = cfg.system()?;
    let n = sys.n();
    let base = cfg.base_bank(n)?;
    let v = validate_network(&sys, &base)?;
    let redundant_observability = match cfg.redundant_bank(n)? {
        Some(red) => {
            let full = augment(&base, &red)?;
            Some(rsd_core::model::check_observability(&sys, &full)?)
        }
        None => None,
    };
    let failures = failed_assumptions(&v);
    let json = ValidateJson {
        n,
        invertibility: CheckJson { pass: v.invertibility.pass, rank: v.invertibility.rank },
        condition_number: v.invertibility.condition,
        controllability: CheckJson { pass: v.controllability.pass, rank: v.controllability.rank },
        observability: v.observability.as_ref().map(|o| CheckJson { pass: o.pass, rank: o.rank }),
        redundant_observability: redundant_observability.map(|o| CheckJson { pass: o.pass, rank: o.rank }),
        pass: failures.is_empty(),
    };
    let mut summary = vec![format!("state dimension {n}, {} base sensor(s)", base.sensors().len())];
    summary.push(format!(
        "A invertible: {} (condition number {:.3e})",
        v.invertibility.pass, v.invertibility.condition
    ));
    summary.push(format!("(A, Q^1/2) controllable: {}", v.controllability.pass));
    if let Some(o) = &v.observability {
        summary.push(format!("(A, C) observable: {}", o.pass));
    }
    let mut out = CommandOutput::ok(json, summary, v.warnings.clone());
    if !failures.is_empty() {
        out.kind = ExitKind::Validation;
        out.status = "validation_failed".into();
        out.failure = Some(failures.join("; "));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Fixed,
    Symplectic,
    Both,
}

#[derive(Serialize)]
struct DareJson {
    method: String,
    p: Vec<Vec<f64>>,
    p_post: Vec<Vec<f64>>,
    trace: f64,
    trace_post: f64,
    residual: f64,
    posteriori_residual: f64,
    iterations: usize,
    closed_loop_radius: f64,
    gain: Option<Vec<Vec<f64>>>,
}

impl From<&DareSolution> for DareJson {
    fn from(s: &DareSolution) -> Self {
        Self {
            method: s.method.to_string(),
            p: rows(&s.p),
            p_post: rows(&s.p_post),
            trace: s.trace(),
            trace_post: s.trace_post(),
            residual: s.residual,
            posteriori_residual: s.posteriori_residual,
            iterations: s.iterations,
            closed_loop_radius: s.closed_loop_radius,
            gain: s.gain.as_ref().map(rows),
        }
    }
}

#[derive(Serialize)]
struct DareNetworkJson {
    network: String,
    solutions: Vec<DareJson>,
    /// `‖P_fixed − P_symplectic‖_∞ / (1 + ‖P_fixed‖_∞)`.
    discrepancy: Option<f64>,
}

#[derive(Serialize)]
struct DareReportJson {
    networks: Vec<DareNetworkJson>,
}

fn dare_network(
    sys: &rsd_core::LinearSystem,
    name: &str,
    bank: &SensorBank,
    method: Method,
    summary: &mut Vec<String>,
) -> CliResult<DareNetworkJson> {
    let mut sols = Vec::new();
    if method != Method::Symplectic {
        sols.push(solve_dare_fixed_point(sys, bank, FixedPointOptions::default())?);
    }
    if method != Method::Fixed {
        sols.push(solve_dare_symplectic(sys, bank.information())?.0);
    }
    let discrepancy = (sols.len() == 2)
        .then(|| linalg::inf_norm(&(&sols[0].p - &sols[1].p)) / (1.0 + linalg::inf_norm(&sols[0].p)));
    for s in &sols {
        summary.push(format!(
            "{name} [{}]: tr(P) = {:.6}, tr(P_post) = {:.6}, residual {:.2e}",
            s.method,
            s.trace(),
            s.trace_post(),
            s.residual
        ));
    }
    if let Some(d) = discrepancy {
        summary.push(format!("{name}: cross-method discrepancy {d:.2e}"));
    }
    Ok(DareNetworkJson { network: name.into(), solutions: sols.iter().map(DareJson::from).collect(), discrepancy })
}

pub fn dare(cfg: &Config, method: Method) -> CliResult<CommandOutput> {
    let sys = cfg.system()?;
    let n = sys.n();
    let base = cfg.base_bank(n)?;
    let mut summary = Vec::new();
    let mut networks = vec![dare_network(&sys, "base", &base, method, &mut summary)?];
    if let Some(red) = cfg.redundant_bank(n)? {
        let full = augment(&base, &red)?;
        networks.push(dare_network(&sys, "augmented", &full, method, &mut summary)?);
    }
    let mut warnings = sys.warnings().to_vec();
    warnings.extend(base.warnings());
    Ok(CommandOutput::ok(DareReportJson { networks }, summary, warnings))
}

#[derive(Serialize)]
struct OrderingJson {
    class: String,
    kernel_dimension: usize,
    /// Orthonormal basis vectors of the near-null eigenspace.
    kernel_basis: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    tolerance: f64,
}

impl From<&OrderingVerdict> for OrderingJson {
    fn from(v: &OrderingVerdict) -> Self {
        Self {
            class: v.class.to_string(),
            kernel_dimension: v.kernel_dimension,
            kernel_basis: v.kernel_basis.iter().map(vector).collect(),
            eigenvalues: v.eigenvalues.clone(),
            tolerance: v.tolerance,
        }
    }
}

#[derive(Serialize)]
struct InertiaJson {
    positive: usize,
    zero: usize,
    negative: usize,
}

impl From<Inertia> for InertiaJson {
    fn from(i: Inertia) -> Self {
        Self { positive: i.positive, zero: i.zero, negative: i.negative }
    }
}

#[derive(Serialize)]
struct EigenMatchJson {
    /// `[re, im]`.
    base_value: [f64; 2],
    augmented_value: [f64; 2],
    distance: f64,
    angle: f64,
}

#[derive(Serialize)]
struct SpectralJson {
    common_eigenpair_found: bool,
    inconclusive: bool,
    matches: Vec<EigenMatchJson>,
}

impl From<&CommonEigenpairReport> for SpectralJson {
    fn from(r: &CommonEigenpairReport) -> Self {
        Self {
            common_eigenpair_found: r.found,
            inconclusive: r.inconclusive,
            matches: r
                .matches
                .iter()
                .map(|m| EigenMatchJson {
                    base_value: [m.base_value.re, m.base_value.im],
                    augmented_value: [m.augmented_value.re, m.augmented_value.im],
                    distance: m.distance,
                    angle: m.angle,
                })
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct AnalyzeJson {
    verdict: String,
    base_trace: f64,
    augmented_trace: f64,
    trace_gap: f64,
    p_base: Vec<Vec<f64>>,
    p_augmented: Vec<Vec<f64>>,
    p_post_base: Vec<Vec<f64>>,
    p_post_augmented: Vec<Vec<f64>>,
    ordering: OrderingJson,
    posteriori_ordering: OrderingJson,
    priori_inertia: InertiaJson,
    posteriori_inertia: InertiaJson,
    inertia_agrees: bool,
    /// Zero band of the extended-precision inertia count.
    inertia_tolerance: f64,
    strict_improvement_condition: Option<SpectralJson>,
    left_eigen_condition: Option<SpectralJson>,
    lyapunov_residual: f64,
    anomaly: Option<String>,
}

pub fn verdict_text(v: &OrderingVerdict) -> String {
    match v.class {
        rsd_core::analysis::OrderingClass::GreaterWithKernel => {
            format!("{}, kernel dim {}", v.class, v.kernel_dimension)
        }
        _ => v.class.to_string(),
    }
}

pub fn analyze(cfg: &Config) -> CliResult<CommandOutput> {
    let sys = cfg.system()?;
    let n = sys.n();
    let base = cfg.base_bank(n)?;
    let red = cfg
        .redundant_bank(n)?
        .ok_or_else(|| CliError::config("missing `redundant_sensors` section; analyze compares base and augmented networks"))?;
    let a = assess_improvement(&sys, &base, &red, SpectralTolerances::default())?;
    let verdict = verdict_text(&a.ordering);
    let mut summary = vec![
        format!("verdict: {verdict}"),
        format!(
            "tr(P_base) = {:.6}, tr(P_augmented) = {:.6}, gap = {:.6}",
            a.gap.tr_base, a.gap.tr_augmented, a.gap.gap
        ),
    ];
    if let Some(s) = &a.spectral {
        summary.push(format!(
            "common stable eigenpair of the symplectic matrices: {}{}",
            if s.found { "found" } else { "none" },
            if s.inconclusive { " (inconclusive: clustered eigenvalues)" } else { "" }
        ));
    }
    summary.push(format!("Lyapunov identity residual {:.2e}", a.lyapunov_residual));
    let mut warnings = sys.warnings().to_vec();
    warnings.extend(a.warnings.iter().cloned());
    if let Some(an) = &a.anomaly {
        warnings.push(an.clone());
    }
    let json = AnalyzeJson {
        verdict,
        base_trace: a.gap.tr_base,
        augmented_trace: a.gap.tr_augmented,
        trace_gap: a.gap.gap,
        p_base: rows(&a.gap.base.p),
        p_augmented: rows(&a.gap.augmented.p),
        p_post_base: rows(&a.gap.base.p_post),
        p_post_augmented: rows(&a.gap.augmented.p_post),
        ordering: (&a.ordering).into(),
        posteriori_ordering: (&a.posteriori_ordering).into(),
        priori_inertia: a.inertia.priori.into(),
        posteriori_inertia: a.inertia.posteriori.into(),
        inertia_agrees: a.inertia.priori == a.inertia.posteriori,
        inertia_tolerance: a.inertia.tolerance,
        strict_improvement_condition: a.spectral.as_ref().map(SpectralJson::from),
        left_eigen_condition: a.left_spectral.as_ref().map(SpectralJson::from),
        lyapunov_residual: a.lyapunov_residual,
        anomaly: a.anomaly.clone(),
    };
    Ok(CommandOutput::ok(json, summary, warnings))
}

#[derive(Serialize)]
struct PostValidationJson {
    dare_trace: f64,
    base_trace: f64,
    bound_gap: f64,
    actual_gap: f64,
    inverse_gap: f64,
    inverse_residual: f64,
    gamma_trace_gap: f64,
    p: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct DesignJson {
    status: String,
    gamma_star: f64,
    gamma_trajectory: Vec<f64>,
    iterations: usize,
    c_star: Vec<Vec<f64>>,
    /// `C̃*ᵀ R̃⁻¹ C̃*`; the quantity that determines performance.
    gram: Vec<Vec<f64>>,
    x_star: Vec<Vec<f64>>,
    row_partition: Vec<usize>,
    /// Spectral norm of each sensor's row block.
    sensor_norms: Vec<f64>,
    norm_bound: f64,
    /// `tr(P̄) − γ*`, a certified lower bound on the trace improvement.
    performance_bound: f64,
    post_validation: Option<PostValidationJson>,
    sdp_iterations: Vec<usize>,
    warm_start_margins: Vec<f64>,
    elapsed_seconds: f64,
}

fn sensor_norms(c: &DMatrix<f64>, partition: &[usize]) -> Vec<f64> {
    let mut off = 0;
    partition
        .iter()
        .map(|&k| {
            let block = c.rows(off, k).into_owned();
            off += k;
            linalg::spectral_norm(&block)
        })
        .collect()
}

fn write_gamma_csv(dir: &Path, res: &DesignResult) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("gamma_trajectory.csv");
    let write = || -> std::io::Result<()> {
        let mut f = BufWriter::new(File::create(&path)?);
        writeln!(f, "iter,gamma")?;
        for (j, g) in res.gamma_trajectory.iter().enumerate() {
            writeln!(f, "{},{g}", j + 1)?;
        }
        f.flush()
    };
    write().map_err(|e| CliError::io(&path, e))
}

pub fn design(cfg: &Config, csv_dir: Option<&Path>) -> CliResult<CommandOutput> {
    let sys = cfg.system()?;
    let n = sys.n();
    let base = cfg.base_bank(n)?;
    let spec = cfg.design_spec(&sys, &base)?;
    let res = design_redundant_sensors(&spec)?;
    if let Some(dir) = csv_dir {
        write_gamma_csv(dir, &res)?;
    }
    let bound = performance_bound(&sys, &base, res.gamma_star)?;
    let norms = sensor_norms(&res.c_star, &spec.row_partition);
    let gram = res.post_validation.as_ref().map(|p| p.gram.clone()).unwrap_or_else(|| {
        let rinv = linalg::spd_inverse(&spec.r_tilde).unwrap_or_else(|| DMatrix::identity(spec.rows(), spec.rows()));
        res.c_star.transpose() * rinv * &res.c_star
    });
    let mut summary = vec![
        format!("status: {} after {} iteration(s)", res.status, res.iterations),
        format!("gamma* = {:.6}", res.gamma_star),
        format!("trace improvement bound tr(P_base) - gamma* = {bound:.6}"),
        format!("sensor norms: {norms:.6?} (bound {})", spec.norm_bound),
    ];
    if let Some(p) = &res.post_validation {
        summary.push(format!(
            "post-validation: tr(P) = {:.6}, |X*^-1 - P| = {:.2e}",
            p.dare_trace, p.inverse_gap
        ));
    }
    summary.push(format!("elapsed {:.3} s", res.elapsed.as_secs_f64()));
    let mut warnings = Vec::new();
    if res.status == DesignStatus::MaxIterations {
        warnings.push(format!("design stopped at the iteration cap ({}) before convergence", spec.max_iters));
    }
    let json = DesignJson {
        status: res.status.to_string(),
        gamma_star: res.gamma_star,
        gamma_trajectory: res.gamma_trajectory.clone(),
        iterations: res.iterations,
        c_star: rows(&res.c_star),
        gram: rows(&gram),
        x_star: rows(&res.x_star),
        row_partition: spec.row_partition.clone(),
        sensor_norms: norms,
        norm_bound: spec.norm_bound,
        performance_bound: bound,
        post_validation: res.post_validation.as_ref().map(|p| PostValidationJson {
            dare_trace: p.dare_trace,
            base_trace: p.base_trace,
            bound_gap: p.bound_gap,
            actual_gap: p.actual_gap,
            inverse_gap: p.inverse_gap,
            inverse_residual: p.inverse_residual,
            gamma_trace_gap: p.gamma_trace_gap,
            p: rows(&p.p),
        }),
        sdp_iterations: res.sdp_iterations.clone(),
        warm_start_margins: res.warm_start_margins.clone(),
        elapsed_seconds: res.elapsed.as_secs_f64(),
    };
    let mut out = CommandOutput::ok(json, summary, warnings);
    out.status = res.status.to_string();
    if res.status == DesignStatus::NumericalFailure {
        out.kind = ExitKind::Solver;
        out.failure = Some(format!(
            "design stopped after {} iteration(s): the objective increased, which indicates a numerical failure of the subproblem solver",
            res.iterations
        ));
    }
    Ok(out)
}

#[derive(Serialize)]
struct SimSettingsJson {
    steps: usize,
    trials: usize,
    seed: u64,
    burn_in: usize,
    bins: usize,
    /// The filter starts from a zero estimate.
    initial_estimate: &'static str,
    /// `"Q"` unless an explicit `P0` was configured.
    initial_covariance: String,
}

#[derive(Serialize)]
struct NetworkSimJson {
    name: String,
    empirical_variances: Vec<f64>,
    predicted_variances: Vec<f64>,
    /// `var_emp / var_pred − 1` per element.
    relative_errors: Vec<f64>,
    empirical_mse: f64,
    predicted_mse: f64,
    empirical_covariance: Vec<Vec<f64>>,
    predicted_covariance: Vec<Vec<f64>>,
    settle_step: Option<usize>,
    retained_samples: usize,
}

#[derive(Serialize)]
struct RatioJson {
    reference: String,
    other: String,
    /// `var(other) / var(reference)` per element.
    ratios: Vec<f64>,
}

#[derive(Serialize)]
struct SimulateJson {
    settings: SimSettingsJson,
    networks: Vec<NetworkSimJson>,
    variance_ratios: Vec<RatioJson>,
}

pub fn simulate(
    cfg: &Config,
    csv_dir: Option<&Path>,
    steps: Option<usize>,
    trials: Option<usize>,
    seed: Option<u64>,
) -> CliResult<CommandOutput> {
    let sys = cfg.system()?;
    let n = sys.n();
    let base = cfg.base_bank(n)?;
    let sim = cfg.sim_config(n, steps, trials, seed)?;
    let nets = cfg.networks(n, &base)?;
    let cmp = compare_networks(&sys, &nets, &sim)?;
    if let Some(dir) = csv_dir {
        for run in &cmp.runs {
            let sub = dir.join(&run.name);
            run.output.write_csv_dir(&sub).map_err(|e| CliError::io(&sub, e))?;
        }
    }
    let mut summary = Vec::new();
    let networks = cmp
        .runs
        .iter()
        .map(|r| {
            let emp = r.output.variances();
            let pred = r.output.predicted_covariance.diagonal();
            let rel: Vec<f64> = emp.iter().zip(pred.iter()).map(|(e, p)| e / p - 1.0).collect();
            summary.push(format!(
                "{}: empirical variances {:.5?}, predicted {:.5?}",
                r.name,
                emp.as_slice(),
                pred.as_slice()
            ));
            NetworkSimJson {
                name: r.name.clone(),
                empirical_variances: vector(&emp),
                predicted_variances: vector(&pred),
                relative_errors: rel,
                empirical_mse: r.output.mse(),
                predicted_mse: linalg::trace(&r.output.predicted_covariance),
                empirical_covariance: rows(&r.output.empirical_covariance),
                predicted_covariance: rows(&r.output.predicted_covariance),
                settle_step: r.output.settle_step,
                retained_samples: r.output.error_series.iter().map(|s| s.nrows()).sum(),
            }
        })
        .collect();
    for r in &cmp.ratios {
        summary.push(format!("variance ratio {} / {}: {:.4?}", r.other, r.reference, r.ratios));
    }
    let json = SimulateJson {
        settings: SimSettingsJson {
            steps: sim.steps,
            trials: sim.trials,
            seed: sim.seed,
            burn_in: sim.burn_in,
            bins: sim.bins,
            initial_estimate: "zero",
            initial_covariance: if sim.p0.is_some() { "configured".into() } else { "Q".into() },
        },
        networks,
        variance_ratios: cmp
            .ratios
            .iter()
            .map(|r| RatioJson { reference: r.reference.clone(), other: r.other.clone(), ratios: r.ratios.clone() })
            .collect(),
    };
    Ok(CommandOutput::ok(json, summary, sys.warnings().to_vec()))
}
