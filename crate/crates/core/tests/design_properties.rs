use nalgebra::DMatrix;
use proptest::prelude::*;

use rsd_core::design::{design_redundant_sensors, designed_bank, DesignSpec, DesignStatus, MONOTONE_SLACK};
use rsd_core::linalg;
use rsd_core::model::augment;
use rsd_core::riccati::{solve_dare_fixed_point, FixedPointOptions};
use rsd_core::testkit::random_instance;

fn spec_for(seed: u64, n: usize, sensors: usize, bound: f64) -> DesignSpec {
    let inst = random_instance(seed, n);
    DesignSpec::new(inst.system, inst.base, vec![1; sensors], DMatrix::identity(sensors, sensors), bound, 1e-5)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn outer_loop_invariants(seed in any::<u64>(), n in 2usize..=4, sensors in 1usize..=2, bound in 0.5f64..4.0) {
        let spec = spec_for(seed, n, sensors, bound);
        let res = design_redundant_sensors(&spec).unwrap();
        prop_assert_ne!(res.status, DesignStatus::NumericalFailure);
        let tr_q = linalg::trace(spec.sys.q());
        for w in res.gamma_trajectory.windows(2) {
            prop_assert!(w[1] <= w[0] + MONOTONE_SLACK, "{:?}", res.gamma_trajectory);
        }
        for g in &res.gamma_trajectory {
            prop_assert!(*g >= tr_q - 1e-9);
        }
        prop_assert_eq!(res.warm_start_margins.len(), res.iterations - 1);
        for m in &res.warm_start_margins {
            prop_assert!(*m <= 1e-6 * (1.0 + res.gamma_star), "warm start margin {}", m);
        }
        for i in 0..sensors {
            prop_assert!(res.c_star.row(i).norm() <= bound * (1.0 + 1e-6));
        }
        let pv = res.post_validation.as_ref().unwrap();
        prop_assert!(pv.dare_trace <= res.gamma_star + 1e-6 * (1.0 + res.gamma_star));
        prop_assert!(pv.bound_gap <= pv.actual_gap + 1e-6);
        if linalg::max_abs(&res.c_star) > 1e-6 {
            prop_assert!(pv.actual_gap > 0.0);
        }
    }

    #[test]
    fn rotated_design_rows_give_the_same_covariance(seed in any::<u64>(), theta in 0.0f64..6.28) {
        let spec = spec_for(seed, 3, 2, 2.0);
        let res = design_redundant_sensors(&spec).unwrap();
        let rot = DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]);
        let solve = |c: &DMatrix<f64>| {
            let bank = augment(&spec.base, &designed_bank(&spec, c).unwrap()).unwrap();
            solve_dare_fixed_point(&spec.sys, &bank, FixedPointOptions::default()).unwrap().p
        };
        let a = solve(&res.c_star);
        let b = solve(&(&rot * &res.c_star));
        prop_assert!(linalg::inf_norm(&(&a - &b)) <= 1e-9 * (1.0 + linalg::inf_norm(&a)));
    }
}
