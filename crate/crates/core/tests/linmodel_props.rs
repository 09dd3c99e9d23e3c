mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tenseco::linalg::{inverse, max_abs};
use tenseco::linmodel::{
    acceleration_jacobians, assemble_class1, bar_blocks, nonlinear_oracle, rest_length_jacobians, StringInput,
};
use tenseco::topology::{rest_lengths_from_prestress, string_vectors};

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_model_matches_finite_differences(seed in any::<u64>(), moving in any::<bool>()) {
        let mut r = common::rng(seed);
        let s = common::random_class1(&mut r, moving);
        let (t, c) = (&s.topology, &s.config);
        let m = assemble_class1(t, c).unwrap();
        let (k, d, b, _) = acceleration_jacobians(&m).unwrap();
        let g0 = DVector::from_column_slice(&c.prestress);
        let eval = |n: &DVector<f64>, v: &DVector<f64>, g: &DVector<f64>| {
            nonlinear_oracle(t, c, n, v, StringInput::ForceDensity(g.as_slice()), &c.external_force).unwrap()
        };
        let h = 1e-5;
        let fd = |which: usize| {
            let len = [c.positions.len(), c.velocities.len(), g0.len()][which];
            let cols: Vec<DVector<f64>> = (0..len)
                .map(|j| {
                    let mut a = [c.positions.clone(), c.velocities.clone(), g0.clone()];
                    a[which][j] += h;
                    let p = eval(&a[0], &a[1], &a[2]);
                    a[which][j] -= 2.0 * h;
                    (p - eval(&a[0], &a[1], &a[2])) / (2.0 * h)
                })
                .collect();
            DMatrix::from_columns(&cols)
        };
        prop_assert!(rel(&k, &fd(0)) < 1e-5);
        prop_assert!(rel(&d, &fd(1)) < 1e-5);
        prop_assert!(rel(&b, &fd(2)) < 1e-5);
    }

    #[test]
    fn mass_is_symmetric_positive_definite(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let s = common::random_class1(&mut r, false);
        let m = assemble_class1(&s.topology, &s.config).unwrap().mass;
        prop_assert!(max_abs(&(&m - m.transpose())) < 1e-12);
        prop_assert!(common::sym_min_eig(&m) > 0.0);
    }

    #[test]
    fn bar_forcing_is_half_a_projector(x in prop::collection::vec(-2.0..2.0f64, 3), l in 0.5..3.0f64) {
        let b = DVector::from_vec(x);
        prop_assume!(b.norm() > 0.1);
        let b = &b * (l / b.norm());
        let z = DVector::zeros(3);
        let blk = bar_blocks(&b, &z, &z, &z, 0.1, l).unwrap();
        let p2 = &blk.forcing * 2.0;
        prop_assert!(max_abs(&(&p2 * &p2 - &p2)) < 1e-12);
    }

    #[test]
    fn rest_length_input_reproduces_force_density(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let s = common::random_class1(&mut r, false);
        let (t, c) = (&s.topology, &s.config);
        let rho = rest_lengths_from_prestress(t, c).unwrap();
        let lin = rest_length_jacobians(t, c, &rho).unwrap();
        let sigma = t.string_count();
        let dg = DVector::from_fn(sigma, |i, _| 1e-6 * (1.0 + i as f64));
        // static perturbation: only the rest lengths move
        let drho = -inverse(&lin.k_ps).unwrap() * &dg;
        let gamma: Vec<f64> = string_vectors(t, c)
            .iter()
            .enumerate()
            .map(|(i, v)| c.string_stiffness[i] * (1.0 - (rho[i] + drho[i]) / v.norm()) - c.prestress[i])
            .collect();
        let err = (DVector::from_vec(gamma) - &dg).amax();
        prop_assert!(err < 1e-5 * dg.amax(), "{}", err);
    }
}
