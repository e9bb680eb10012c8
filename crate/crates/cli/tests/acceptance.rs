//! Acceptance criteria AC1 through AC10. Each test prints exactly one
//! `[PASS] ACn ...` or `[FAIL] ACn ...` line before asserting.
//!
//! Run with `cargo test -p rsd-cli --test acceptance -- --nocapture` to see
//! the lines.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::Value;

use rsd_core::analysis::{
    classify_ordering, difference_inertia, strict_improvement_condition, trace_gap, verify_lyapunov_identity,
    OrderingClass, SpectralTolerances,
};
use rsd_core::design::{design_redundant_sensors, designed_bank, DesignSpec, MONOTONE_SLACK};
use rsd_core::linalg;
use rsd_core::model::{augment, LinearSystem, Sensor, SensorBank};
use rsd_core::riccati::{
    build_symplectic, solve_dare_fixed_point, solve_dare_symplectic, FixedPointOptions, SymplecticSpectrum,
};
use rsd_core::simulate::{compare_networks, SimConfig};
use rsd_core::testkit::{example, random_corpus, RandomInstance};

const CORPUS_SEED: u64 = 20_240_601;
const CORPUS_SIZE: usize = 100;

fn verdict(id: &str, pass: bool, detail: String) {
    // written to the raw handle so the line survives libtest output capture
    let line = format!("[{}] {id} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{id} failed: {detail}");
}

fn corpus() -> Vec<RandomInstance> {
    random_corpus(CORPUS_SEED, CORPUS_SIZE)
}

/// Positive root of `g p² + (1 − a² − q g) p − q = 0`, written out here so the
/// library's own helper is not its own oracle.
fn quadratic_root(a: f64, q: f64, g: f64) -> f64 {
    let b = 1.0 - a * a - q * g;
    let disc = (b * b + 4.0 * g * q).sqrt();
    // rationalized form avoids cancellation when b > 0
    if b > 0.0 {
        2.0 * q / (b + disc)
    } else {
        (disc - b) / (2.0 * g)
    }
}

fn rel_inf(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    linalg::inf_norm(&(a - b)) / linalg::inf_norm(a)
}

fn unit_bank(rows: &[[f64; 2]]) -> SensorBank {
    let sensors = rows
        .iter()
        .enumerate()
        .map(|(i, r)| Sensor::unit_noise(format!("x{i}"), r).unwrap())
        .collect();
    SensorBank::new(2, sensors).unwrap()
}

#[test]
fn ac1_example_design_reproduction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.json");
    let out = dir.path().join("design.json");
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_rsd"))
        .args(["design", "-c", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let wall = start.elapsed();
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let r = &report["result"];
    let gamma = r["gamma_star"].as_f64().unwrap();
    let norms: Vec<f64> = serde_json::from_value(r["sensor_norms"].clone()).unwrap();
    let traj: Vec<f64> = serde_json::from_value(r["gamma_trajectory"].clone()).unwrap();
    let iters = r["iterations"].as_u64().unwrap() as usize;

    let gamma_ok = (gamma - 0.5572).abs() <= 0.01;
    let norms_ok = norms.len() == 2 && norms.iter().all(|v| (v - 5.0).abs() <= 1e-2);
    let monotone = traj.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK);
    let pass = status.status.code() == Some(0)
        && r["status"] == "converged"
        && gamma_ok
        && norms_ok
        && monotone
        && iters <= 20
        && wall < Duration::from_secs(10);
    verdict(
        "AC1",
        pass,
        format!(
            "gamma*={gamma:.6} (target 0.5572±0.01) norms={norms:.5?} monotone={monotone} iterations={iters} wall={:.3}s",
            wall.as_secs_f64()
        ),
    );
}

#[test]
fn ac2_design_post_validation() {
    let spec = DesignSpec {
        c_r0: example::design_initial(),
        ..DesignSpec::new(example::system(), example::base_bank(), vec![1, 1], DMatrix::identity(2, 2), 5.0, 1e-5)
    };
    let res = design_redundant_sensors(&spec).unwrap();
    // independent check: symplectic solve of the augmented network at C̃*
    let full = augment(&spec.base, &designed_bank(&spec, &res.c_star).unwrap()).unwrap();
    let (sol, _) = solve_dare_symplectic(&spec.sys, full.information()).unwrap();
    let tr = linalg::trace(&sol.p);
    let x_inv = res.x_star.clone().try_inverse().unwrap();
    let inv_gap = linalg::inf_norm(&(&x_inv - &sol.p));
    let inv_tol = 1e-4 * (1.0 + linalg::inf_norm(&sol.p));
    let pass = tr <= res.gamma_star + 1e-4 && inv_gap <= inv_tol;
    verdict(
        "AC2",
        pass,
        format!("tr(P)={tr:.6} gamma*={:.6} |X*^-1 - P|={inv_gap:.2e} (tol {inv_tol:.2e})", res.gamma_star),
    );
}

#[test]
fn ac3_effect_analysis_on_the_example() {
    let sys = example::system();
    let base = example::base_bank();
    let solve = |bank: &SensorBank| solve_dare_fixed_point(&sys, bank, FixedPointOptions::default()).unwrap().p;
    let p_bar = solve(&base);
    // base information is diag(3, 3); one copy of [3, 0] adds 9, two copies 18
    let bar = [quadratic_root(0.9, 0.25, 3.0), quadratic_root(1.1, 0.25, 3.0)];
    let single = quadratic_root(0.9, 0.25, 12.0);
    let double = quadratic_root(0.9, 0.25, 21.0);
    let p_single = solve(&augment(&base, &unit_bank(&[[3.0, 0.0]])).unwrap());
    let p_r1 = solve(&augment(&base, &example::r1_redundant()).unwrap());
    let p_r2 = solve(&augment(&base, &example::r2_redundant()).unwrap());

    let close = |m: &DMatrix<f64>, d: [f64; 2], tol: f64| {
        (m - DMatrix::from_diagonal(&DVector::from_row_slice(&d))).abs().max() <= tol
    };
    let oracle_ok = close(&p_bar, bar, 1e-5)
        && close(&p_single, [single, bar[1]], 1e-5)
        && close(&p_r1, [double, bar[1]], 1e-5)
        && close(&p_bar, [0.39672, 0.49005], 1e-5)
        && close(&p_single, [0.30294, 0.49005], 1e-5);

    let v1 = classify_ordering(&p_bar, &p_r1, None).unwrap();
    let v2 = classify_ordering(&p_bar, &p_r2, None).unwrap();
    let kernel_e2 = v1.kernel_dimension == 1 && v1.kernel_basis[0][1].abs() >= 1.0 - 1e-9;
    let g0 = base.information();
    let tol = SpectralTolerances::default();
    let s1 = strict_improvement_condition(&sys, g0, example::r1_redundant().information(), tol).unwrap();
    let s2 = strict_improvement_condition(&sys, g0, example::r2_redundant().information(), tol).unwrap();
    let spectral_ok = s1.found && !s2.found && !s1.inconclusive && !s2.inconclusive;
    let pass = oracle_ok
        && v1.class == OrderingClass::GreaterWithKernel
        && kernel_e2
        && v2.class == OrderingClass::StrictlyGreater
        && spectral_ok;
    verdict(
        "AC3",
        pass,
        format!(
            "P_bar=diag({:.5}, {:.5}) P_single=diag({:.5}, {:.5}) P_r1=diag({:.5}, {:.5}) r1:{} kernel_e2={kernel_e2} r2:{} common-eigenpair r1={} r2={}",
            p_bar[(0, 0)],
            p_bar[(1, 1)],
            p_single[(0, 0)],
            p_single[(1, 1)],
            p_r1[(0, 0)],
            p_r1[(1, 1)],
            v1.class,
            v2.class,
            s1.found,
            s2.found
        ),
    );
}

#[test]
fn ac4_improvement_property_suite() {
    let mut failures = Vec::new();
    let mut worst_eig = f64::INFINITY;
    let mut worst_lyap: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for inst in corpus() {
        let gap = trace_gap(&inst.system, &inst.base, &inst.redundant).unwrap();
        let scale = 1.0 + linalg::inf_norm(&gap.base.p);
        let lmin = linalg::min_eigenvalue(&linalg::symmetrize(&(&gap.base.p - &gap.augmented.p)));
        let lyap =
            verify_lyapunov_identity(&inst.system, &inst.base, &inst.redundant, &gap.base.p, &gap.augmented.p)
                .unwrap();
        worst_eig = worst_eig.min(lmin / scale);
        worst_lyap = worst_lyap.max(lyap / scale);
        min_gap = min_gap.min(gap.gap);
        if lmin < -1e-8 * scale || gap.gap <= 0.0 || lyap > 1e-7 * scale {
            failures.push(inst.seed);
        }
    }
    verdict(
        "AC4",
        failures.is_empty(),
        format!(
            "{CORPUS_SIZE} systems: min eig/(1+|P_bar|)={worst_eig:.2e} min gap={min_gap:.2e} max Lyapunov residual/(1+|P_bar|)={worst_lyap:.2e} failing seeds={failures:?}"
        ),
    );
}

#[test]
fn ac5_inertia_suite() {
    let mut failures = Vec::new();
    let mut closest = f64::INFINITY;
    for inst in corpus() {
        let r = difference_inertia(&inst.system, &inst.base, &inst.redundant).unwrap();
        for e in r.priori_eigenvalues.iter().chain(&r.posteriori_eigenvalues) {
            if e.abs() > r.tolerance {
                closest = closest.min(e.abs() / r.tolerance);
            }
        }
        if r.priori != r.posteriori {
            failures.push((inst.seed, r.priori, r.posteriori));
        }
    }
    verdict(
        "AC5",
        failures.is_empty(),
        format!(
            "{CORPUS_SIZE} systems: inertia(P_bar-P) == inertia(P_bar_p-P_p) on all but {}; smallest resolved |eigenvalue| is {closest:.1e} x band; mismatches={failures:?}",
            failures.len()
        ),
    );
}

#[test]
fn ac6_cross_solver_suite() {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for inst in corpus() {
        let full = augment(&inst.base, &inst.redundant).unwrap();
        for bank in [&inst.base, &full] {
            let fixed = solve_dare_fixed_point(&inst.system, bank, FixedPointOptions::default()).unwrap();
            let (sympl, _) = solve_dare_symplectic(&inst.system, bank.information()).unwrap();
            let d = rel_inf(&fixed.p, &sympl.p);
            worst = worst.max(d);
            if d > 1e-7 {
                failures.push(inst.seed);
            }
        }
    }
    let sys = LinearSystem::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let bank = SensorBank::new(1, vec![Sensor::unit_noise("c", &[1.0]).unwrap()]).unwrap();
    let oracle = quadratic_root(0.5, 1.0, 1.0);
    let fixed = solve_dare_fixed_point(&sys, &bank, FixedPointOptions::default()).unwrap().p[(0, 0)];
    let sympl = solve_dare_symplectic(&sys, bank.information()).unwrap().0.p[(0, 0)];
    let scalar_ok =
        (fixed - oracle).abs() <= 1e-9 && (sympl - oracle).abs() <= 1e-9 && (oracle - 1.1327822).abs() <= 5e-8;
    verdict(
        "AC6",
        failures.is_empty() && scalar_ok,
        format!(
            "{} solves: max relative difference {worst:.2e} (tol 1e-7); scalar case fixed={fixed:.10} symplectic={sympl:.10} oracle={oracle:.10}",
            2 * CORPUS_SIZE
        ),
    );
}

#[test]
fn ac7_symplectic_structure_suite() {
    let mut worst_identity: f64 = 0.0;
    let mut worst_pairing: f64 = 0.0;
    let mut count = 0;
    for inst in corpus() {
        let g0 = inst.base.information();
        let g = g0 + inst.redundant.information();
        for g in [g0.clone(), g] {
            let s = build_symplectic(&inst.system, &g).unwrap();
            let spec = SymplecticSpectrum::analyze(&s).unwrap();
            worst_identity = worst_identity.max(s.symplectic_residual);
            worst_pairing = worst_pairing.max(pairing(&spec.eigenvalues));
            count += 1;
        }
    }
    verdict(
        "AC7",
        worst_identity <= 1e-8 && worst_pairing <= 1e-7,
        format!("{count} matrices: max |J^-1 S^T J S - I|={worst_identity:.2e} (tol 1e-8) max pairing={worst_pairing:.2e} (tol 1e-7)"),
    );
}

/// Largest relative distance from `1/λ` and `λ̄` to the spectrum, recomputed
/// here rather than trusting the library's own figure.
fn pairing(eigs: &[Complex64]) -> f64 {
    let nearest = |t: Complex64| eigs.iter().map(|z| (z - t).norm()).fold(f64::INFINITY, f64::min) / (1.0 + t.norm());
    eigs.iter().map(|&l| nearest(1.0 / l).max(nearest(l.conj()))).fold(0.0, f64::max)
}

#[test]
fn ac8_outer_loop_convergence_suite() {
    let mut failures = Vec::new();
    let mut worst_rise = f64::NEG_INFINITY;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut runs = 0;
    for (i, inst) in corpus().into_iter().enumerate() {
        let sensors = 1 + i % 2;
        let tr_q = linalg::trace(inst.system.q());
        let spec = DesignSpec::new(
            inst.system,
            inst.base,
            vec![1; sensors],
            DMatrix::identity(sensors, sensors),
            2.0,
            1e-5,
        );
        let res = design_redundant_sensors(&spec).unwrap();
        runs += 1;
        let rise = res.gamma_trajectory.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        let margin = res.warm_start_margins.iter().map(|m| m / (1.0 + res.gamma_star)).fold(f64::NEG_INFINITY, f64::max);
        worst_rise = worst_rise.max(rise);
        worst_margin = worst_margin.max(margin);
        let bounded = res.gamma_trajectory.iter().all(|g| *g >= tr_q);
        if rise > MONOTONE_SLACK || !bounded || margin > 1e-6 || res.warm_start_margins.len() + 1 != res.iterations {
            failures.push(inst.seed);
        }
    }
    verdict(
        "AC8",
        failures.is_empty(),
        format!(
            "{runs} designs: max gamma rise {worst_rise:.2e} (slack {MONOTONE_SLACK:e}) all >= tr(Q): {} max warm-start margin/(1+gamma*)={worst_margin:.2e} failing seeds={failures:?}",
            failures.is_empty()
        ),
    );
}

#[test]
fn ac9_monte_carlo_verification() {
    let sys = example::system();
    let base = example::base_bank();
    let banks = vec![
        ("base".to_string(), base.clone()),
        ("r1".to_string(), augment(&base, &example::r1_redundant()).unwrap()),
        ("r2".to_string(), augment(&base, &example::r2_redundant()).unwrap()),
    ];
    let cfg = SimConfig { steps: 20_000, seed: 42, ..SimConfig::default() };
    let cmp = compare_networks(&sys, &banks, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for run in &cmp.runs {
        let predicted = run.output.predicted_covariance.diagonal();
        for (e, p) in run.output.variances().iter().zip(predicted.iter()) {
            worst = worst.max((e / p - 1.0).abs());
        }
    }
    let r1 = &cmp.ratio("base", "r1").unwrap().ratios;
    let r2 = &cmp.ratio("base", "r2").unwrap().ratios;
    let pass = worst <= 0.05 && (0.95..=1.05).contains(&r1[1]) && r2.iter().all(|r| *r < 0.9);
    verdict(
        "AC9",
        pass,
        format!("max |empirical/predicted - 1|={worst:.4} (tol 0.05) r1/base={r1:.4?} r2/base={r2:.4?}"),
    );
}

#[test]
fn ac10_hundred_row_smoke_design() {
    let spec = DesignSpec::new(example::system(), example::base_bank(), vec![10; 10], DMatrix::identity(100, 100), 5.0, 1e-5);
    let start = Instant::now();
    let res = design_redundant_sensors(&spec).unwrap();
    let wall = start.elapsed();
    let pass = wall < Duration::from_secs(120) && res.post_validation.is_some();
    verdict(
        "AC10",
        pass,
        format!(
            "100 rows: status {} gamma*={:.6} iterations={} wall={:.2}s (limit 120s)",
            res.status,
            res.gamma_star,
            res.iterations,
            wall.as_secs_f64()
        ),
    );
}
