mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use tenseco::bounds::{
    bound, certificate_residual, covariance_oracle, energy_to_energy_sweep, energy_to_peak_oracle,
    impulse_to_energy_oracle, BoundKind,
};
use tenseco::sdp::SdpStatus;
use tenseco::statespace::ClosedLoop;

const KINDS: [BoundKind; 4] =
    [BoundKind::Covariance, BoundKind::EnergyToPeak, BoundKind::ImpulseToEnergy, BoundKind::EnergyToEnergy];

fn oracle(cl: &ClosedLoop, kind: BoundKind, w: &DMatrix<f64>) -> f64 {
    match kind {
        BoundKind::Covariance => covariance_oracle(cl, w).unwrap(),
        BoundKind::EnergyToPeak => energy_to_peak_oracle(cl).unwrap(),
        BoundKind::ImpulseToEnergy => impulse_to_energy_oracle(cl).unwrap(),
        BoundKind::EnergyToEnergy => energy_to_energy_sweep(cl, 1000).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bounds_dominate_oracles(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = r.gen_range(2..7);
        let (ins, outs) = (r.gen_range(1..3), r.gen_range(1..3));
        let cl = common::random_stable_loop(&mut r, n, ins, outs, seed % 2 == 1);
        let w = DMatrix::identity(cl.b.ncols(), cl.b.ncols());
        for kind in KINDS {
            let b = bound(&cl, kind, &w).unwrap();
            prop_assert_eq!(b.status, SdpStatus::Optimal);
            let o = oracle(&cl, kind, &w);
            let tol = if kind == BoundKind::EnergyToEnergy { 0.02 } else { 0.01 };
            prop_assert!(b.value >= o * (1.0 - 1e-6), "{}: {} < {}", kind.name(), b.value, o);
            prop_assert!(b.value <= o * (1.0 + tol), "{}: {} vs {}", kind.name(), b.value, o);
            // the certificate satisfies its own inequality
            prop_assert!(certificate_residual(&cl, &b, &w).unwrap() < 0.0);
        }
    }

    #[test]
    fn bounds_ignore_state_coordinates(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let n = r.gen_range(2..6);
        let cl = common::random_stable_loop(&mut r, n, 2, 1, false);
        let q = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0)).qr().q();
        let moved = ClosedLoop::standard(q.transpose() * &cl.a * &q, q.transpose() * &cl.b, &cl.c * &q);
        let w = DMatrix::identity(2, 2);
        for kind in KINDS {
            let a = bound(&cl, kind, &w).unwrap().value;
            let b = bound(&moved, kind, &w).unwrap().value;
            prop_assert!((a - b).abs() < 1e-6 * a, "{}: {} vs {}", kind.name(), a, b);
        }
    }
}
