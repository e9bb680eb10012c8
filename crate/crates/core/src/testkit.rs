//! Reference instances: the four-sensor example network and a seeded
//! generator of random valid systems for property checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::model::{check_observability, validate_system, LinearSystem, Sensor, SensorBank};

pub mod example {
    use super::*;

    /// `A = diag(0.9, 1.1)`, `Q = I/4`.
    pub fn system() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(&[0.9, 1.1])),
            DMatrix::identity(2, 2) / 4.0,
        )
        .expect("valid example system")
    }

    fn bank(rows: &[(&str, [f64; 2])]) -> SensorBank {
        let sensors = rows
            .iter()
            .map(|(l, r)| Sensor::unit_noise(*l, r).expect("valid sensor"))
            .collect();
        SensorBank::new(2, sensors).expect("valid bank")
    }

    /// Rows `[1,0]`, `[0,1]`, `[1,1]`, `[1,−1]` with unit noise.
    pub fn base_bank() -> SensorBank {
        bank(&[("s1", [1.0, 0.0]), ("s2", [0.0, 1.0]), ("s3", [1.0, 1.0]), ("s4", [1.0, -1.0])])
    }

    /// Two copies of `[3, 0]`.
    pub fn r1_redundant() -> SensorBank {
        bank(&[("c1a", [3.0, 0.0]), ("c1b", [3.0, 0.0])])
    }

    /// `[3, 0]` and `[3, 3]`.
    pub fn r2_redundant() -> SensorBank {
        bank(&[("c1", [3.0, 0.0]), ("c2", [3.0, 3.0])])
    }

    /// Initial redundant output matrix used for the design example.
    pub fn design_initial() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 3.0, 3.0])
    }
}

/// Positive root of `g p² + (1 − a² − q g) p − q = 0`: the scalar DARE
/// solution for state gain `a`, noise `q` and information `g > 0`.
pub fn scalar_dare_root(a: f64, q: f64, g: f64) -> f64 {
    let b = 1.0 - a * a - q * g;
    (-b + (b * b + 4.0 * g * q).sqrt()) / (2.0 * g)
}

/// One random problem: plant, observable base bank and nonzero redundant bank.
#[derive(Clone, Debug)]
pub struct RandomInstance {
    pub seed: u64,
    pub system: LinearSystem,
    pub base: SensorBank,
    pub redundant: SensorBank,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box–Muller; only used for instance generation.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n);
    linalg::symmetrize(&(&b * b.transpose() / n as f64 + DMatrix::identity(n, n) * floor))
}

fn random_bank(rng: &mut ChaCha8Rng, n: usize, count: usize, prefix: &str) -> SensorBank {
    let sensors = (0..count)
        .map(|i| {
            let rows = if rng.random_bool(0.25) { 2 } else { 1 };
            let c = random_matrix(rng, rows, n);
            let r = random_spd(rng, rows, 0.2);
            Sensor::new(format!("{prefix}{}", i + 1), c, r).expect("valid random sensor")
        })
        .collect();
    SensorBank::new(n, sensors).expect("valid random bank")
}

/// Random plant with `n` states: spectral radius in `[0.3, 1.4]` (both stable
/// and unstable), `|det A| > 1e-3`, `(A, √Q)` controllable, and a base bank
/// that is observable.
pub fn random_instance(seed: u64, n: usize) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let raw = random_matrix(&mut rng, n, n);
        let radius = linalg::spectral_radius(&raw);
        if radius < 1e-6 {
            continue;
        }
        let target = 0.3 + 1.1 * rng.random::<f64>();
        let a = raw * (target / radius);
        if a.determinant().abs() <= 1e-3 || linalg::condition_number(&a) > 1e4 {
            continue;
        }
        let q = random_spd(&mut rng, n, 0.05);
        let Ok(system) = LinearSystem::new(a, q) else { continue };
        let report = validate_system(&system);
        if !report.invertibility.pass || !report.controllability.pass {
            continue;
        }
        let base_count = 1 + rng.random_range(0..n);
        let base = random_bank(&mut rng, n, base_count, "b");
        if !check_observability(&system, &base).map(|r| r.pass).unwrap_or(false) {
            continue;
        }
        let red_count = 1 + rng.random_range(0..3);
        let redundant = random_bank(&mut rng, n, red_count, "r");
        if linalg::max_abs(redundant.information()) < 1e-6 {
            continue;
        }
        return RandomInstance { seed, system, base, redundant };
    }
}

/// `count` instances with `n` cycling through `2..=6`.
pub fn random_corpus(seed: u64, count: usize) -> Vec<RandomInstance> {
    (0..count)
        .map(|i| random_instance(seed.wrapping_mul(1_000_003).wrapping_add(i as u64), 2 + i % 5))
        .collect()
}
