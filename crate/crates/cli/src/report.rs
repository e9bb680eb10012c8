//! Machine-readable run reports. Floats are written in shortest round-trip
//! form, so re-parsing a report reproduces every matrix bit for bit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    /// Command line as given, program name excluded.
    pub arguments: Vec<String>,
    pub version: String,
    pub config: String,
    pub status: String,
    pub exit_code: i32,
    pub timing: Timing,
    pub warnings: Vec<String>,
    pub result: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report values are serializable");
        s.push('\n');
        s
    }
}

/// Row-major nested rows.
pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Inverse of [`rows`].
pub fn matrix(v: &serde_json::Value) -> Option<DMatrix<f64>> {
    let r: Vec<Vec<f64>> = serde_json::from_value(v.clone()).ok()?;
    let ncols = r.first().map_or(0, Vec::len);
    if r.iter().any(|x| x.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}
