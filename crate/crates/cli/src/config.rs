//! JSON run configuration. Matrices are row-major arrays of arrays.
//!
//! ```json
//! {
//!   "system": { "A": [[0.9, 0], [0, 1.1]], "Q": [[0.25, 0], [0, 0.25]] },
//!   "base_sensors": [ { "label": "s1", "C": [[1, 0]], "R": [[1]] } ],
//!   "redundant_sensors": [ { "C": [[3, 0]] } ],
//!   "design": { "num_sensors": 2, "rows_per_sensor": 1, "norm_bound": 5 },
//!   "simulate": { "steps": 20000, "seed": 42 }
//! }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rsd_core::design::{DesignSpec, DEFAULT_MAX_ITERS};
use rsd_core::simulate::SimConfig;
use rsd_core::{LinearSystem, Sensor, SensorBank};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    #[serde(default)]
    pub base_sensors: Vec<SensorConfig>,
    pub redundant_sensors: Option<Vec<SensorConfig>>,
    pub design: Option<DesignConfig>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "Q")]
    pub q: Matrix,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(rename = "C")]
    pub c: Matrix,
    /// Identity when absent.
    #[serde(rename = "R")]
    pub r: Option<Matrix>,
    pub label: Option<String>,
}

/// Either one row count shared by all sensors or one count per sensor.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum RowsPerSensor {
    Uniform(usize),
    PerSensor(Vec<usize>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub num_sensors: usize,
    #[serde(default = "one_row")]
    pub rows_per_sensor: RowsPerSensor,
    /// Identity when absent.
    #[serde(rename = "R")]
    pub r: Option<Matrix>,
    pub norm_bound: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(rename = "C_r0")]
    pub c_r0: Option<Matrix>,
    pub max_iters: Option<usize>,
}

fn one_row() -> RowsPerSensor {
    RowsPerSensor::Uniform(1)
}

fn default_epsilon() -> f64 {
    1e-5
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub steps: Option<usize>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub burn_in: Option<usize>,
    pub bins: Option<usize>,
    pub x0: Option<Vec<f64>>,
    #[serde(rename = "P0")]
    pub p0: Option<Matrix>,
    /// Networks compared against the base bank. When absent the base bank
    /// is compared with base plus `redundant_sensors` (if given).
    pub networks: Option<Vec<NetworkConfig>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub name: String,
    pub redundant_sensors: Vec<SensorConfig>,
}

/// Reads and parses a config file. Syntax errors carry line and column,
/// type errors the JSON path of the offending value.
pub fn load(path: &Path) -> CliResult<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|e| CliError::config(format!("{}: {}", path.display(), e.message)))
}

pub fn parse(text: &str) -> CliResult<Config> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        let at = e.path().to_string();
        let loc = format!("line {} column {}", inner.line(), inner.column());
        let msg = if inner.is_syntax() || inner.is_eof() || at == "." {
            format!("invalid JSON at {loc}: {inner}")
        } else {
            format!("invalid value at `{at}` ({loc}): {inner}")
        };
        CliError::config(msg)
    })
}

/// Converts nested rows into a matrix; `path` qualifies error messages.
pub fn to_matrix(rows: &Matrix, path: &str) -> CliResult<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(CliError::config(format!("`{path}` must be a nonempty matrix")));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(CliError::config(format!(
            "`{path}` row {i} has {} entries, expected {ncols}",
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::config(format!("`{path}` contains a non-finite entry")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn qualify(path: &str, e: rsd_core::Error) -> CliError {
    let mut err = CliError::from(e);
    err.message = format!("{path}: {}", err.message);
    err
}

impl Config {
    pub fn system(&self) -> CliResult<LinearSystem> {
        let a = to_matrix(&self.system.a, "system.A")?;
        let q = to_matrix(&self.system.q, "system.Q")?;
        LinearSystem::new(a, q).map_err(|e| qualify("system", e))
    }

    pub fn base_bank(&self, n: usize) -> CliResult<SensorBank> {
        bank(&self.base_sensors, n, "base_sensors", "base")
    }

    pub fn redundant_bank(&self, n: usize) -> CliResult<Option<SensorBank>> {
        self.redundant_sensors
            .as_ref()
            .map(|s| bank(s, n, "redundant_sensors", "redundant"))
            .transpose()
    }

    pub fn design_spec(&self, sys: &LinearSystem, base: &SensorBank) -> CliResult<DesignSpec> {
        let d = self
            .design
            .as_ref()
            .ok_or_else(|| CliError::config("missing `design` section"))?;
        if d.num_sensors == 0 {
            return Err(CliError::config("`design.num_sensors` must be at least 1"));
        }
        let partition = match &d.rows_per_sensor {
            RowsPerSensor::Uniform(k) => vec![*k; d.num_sensors],
            RowsPerSensor::PerSensor(v) => {
                if v.len() != d.num_sensors {
                    return Err(CliError::config(format!(
                        "`design.rows_per_sensor` lists {} sensors, expected {}",
                        v.len(),
                        d.num_sensors
                    )));
                }
                v.clone()
            }
        };
        let rows: usize = partition.iter().sum();
        let r = match &d.r {
            Some(r) => to_matrix(r, "design.R")?,
            None => DMatrix::identity(rows, rows),
        };
        let mut spec = DesignSpec::new(sys.clone(), base.clone(), partition, r, d.norm_bound, d.epsilon);
        if let Some(c0) = &d.c_r0 {
            spec.c_r0 = to_matrix(c0, "design.C_r0")?;
        }
        spec.max_iters = d.max_iters.unwrap_or(DEFAULT_MAX_ITERS);
        spec.validate().map_err(|e| qualify("design", e))?;
        Ok(spec)
    }

    /// Simulation settings; command-line overrides win over the file.
    pub fn sim_config(
        &self,
        n: usize,
        steps: Option<usize>,
        trials: Option<usize>,
        seed: Option<u64>,
    ) -> CliResult<SimConfig> {
        let s = self.simulate.clone().unwrap_or_default();
        let d = SimConfig::default();
        let cfg = SimConfig {
            steps: steps.or(s.steps).unwrap_or(d.steps),
            trials: trials.or(s.trials).unwrap_or(d.trials),
            seed: seed.or(s.seed).unwrap_or(d.seed),
            x0: s.x0.map(|v| DVector::from_vec(v)),
            p0: s.p0.as_ref().map(|p| to_matrix(p, "simulate.P0")).transpose()?,
            burn_in: s.burn_in.unwrap_or(d.burn_in),
            bins: s.bins.unwrap_or(d.bins),
        };
        cfg.validate(n).map_err(|e| qualify("simulate", e))?;
        Ok(cfg)
    }

    /// Named networks for simulation, base first.
    pub fn networks(&self, n: usize, base: &SensorBank) -> CliResult<Vec<(String, SensorBank)>> {
        let mut out = vec![("base".to_string(), base.clone())];
        let extra: Vec<(String, SensorBank)> = match self.simulate.as_ref().and_then(|s| s.networks.as_ref()) {
            Some(nets) => nets
                .iter()
                .enumerate()
                .map(|(i, net)| {
                    let path = format!("simulate.networks[{i}].redundant_sensors");
                    Ok((net.name.clone(), bank(&net.redundant_sensors, n, &path, &net.name)?))
                })
                .collect::<CliResult<_>>()?,
            None => self.redundant_bank(n)?.map(|b| ("augmented".to_string(), b)).into_iter().collect(),
        };
        for (name, red) in extra {
            let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !valid || out.iter().any(|(m, _)| *m == name) {
                return Err(CliError::config(format!(
                    "network name `{name}` must be unique and use only letters, digits, `_` or `-`"
                )));
            }
            let full = rsd_core::model::augment(base, &red)?;
            out.push((name, full));
        }
        Ok(out)
    }
}

fn bank(sensors: &[SensorConfig], n: usize, path: &str, prefix: &str) -> CliResult<SensorBank> {
    let built = sensors
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let at = format!("{path}[{i}]");
            let c = to_matrix(&s.c, &format!("{at}.C"))?;
            let r = match &s.r {
                Some(r) => to_matrix(r, &format!("{at}.R"))?,
                None => DMatrix::identity(c.nrows(), c.nrows()),
            };
            let label = s.label.clone().unwrap_or_else(|| format!("{prefix}{}", i + 1));
            Sensor::new(label, c, r).map_err(|e| qualify(&at, e))
        })
        .collect::<CliResult<Vec<_>>>()?;
    SensorBank::new(n, built).map_err(|e| qualify(path, e))
}
