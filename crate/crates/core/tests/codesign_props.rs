mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tenseco::codesign::{
    closed_loop_at, extremize, Architecture, CodesignProblem, CodesignSettings, CodesignSolution, Prices, Target,
};
use tenseco::desk;
use tenseco::statespace::{AffineMatrixFamily, DescriptorSystem};
use tenseco::sweep::{run_sweep, SweepAxis, SweepConfig, SweepParameter};

fn arm() -> (tenseco::model::Model, CodesignProblem) {
    let m = desk::arm().build().unwrap();
    let p = desk::arm_problem().build(m.family().unwrap()).unwrap();
    (m, p)
}

/// `ẋ = α x + u + w_p + w_a`, `y = z = x + w_s` with `α` in a box of stable values.
fn scalar_problem(lo: f64, hi: f64, y_bar: f64) -> CodesignProblem {
    let one = DMatrix::from_element(1, 1, 1.0);
    CodesignProblem {
        system: DescriptorSystem {
            e: AffineMatrixFamily::constant(one.clone()),
            a: AffineMatrixFamily::new(DMatrix::zeros(1, 1), vec![one.clone()]).unwrap(),
            b: one.clone(),
            d_p: AffineMatrixFamily::constant(one.clone()),
            d_a: AffineMatrixFamily::constant(one.clone()),
            c_y: AffineMatrixFamily::constant(one.clone()),
            c_z: one.clone(),
            d_s: one.clone(),
        },
        w_p: one.clone(),
        y_bar: &one * y_bar,
        u_bar: &one * 10.0,
        budget: 100.0,
        gamma_a_cap: DVector::from_element(1, 10.0),
        gamma_s_cap: DVector::from_element(1, 10.0),
        alpha_lower: DVector::from_element(1, lo),
        alpha_upper: DVector::from_element(1, hi),
        prices: Prices {
            actuator: DVector::from_element(1, 1.0),
            sensor: DVector::from_element(1, 1.0),
            alpha: DVector::from_element(1, 0.0),
        },
        fixed_alpha: None,
        fixed_precisions: false,
        settings: CodesignSettings::default(),
    }
}

fn assert_monotone(s: &CodesignSolution) {
    let mut prev = s.z0;
    for z in &s.history {
        let ok = if s.target.maximizes() { *z >= prev - 1e-9 * prev.abs() } else { *z <= prev + 1e-9 * prev.abs() };
        assert!(ok, "z̄ moved the wrong way: {prev} → {z}");
        prev = *z;
    }
    for it in &s.iterates {
        assert!(it.plug_back < 0.0, "plug-back {}", it.plug_back);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn scalar_runs_are_monotone_and_verified(lo in -3.0..-1.5f64, width in 0.2..1.0f64, y in 0.5..5.0f64) {
        let p = scalar_problem(lo, lo + width, y);
        let s = extremize(&p, Target::Budget, Architecture::OutputFeedback).unwrap();
        assert_monotone(&s);
        prop_assert!(s.report.as_ref().unwrap().passed);
    }
}

#[test]
fn schur_blocks_bound_the_covariances() {
    let (_, p) = arm();
    let s = extremize(&p, Target::Budget, Architecture::OutputFeedback).unwrap();
    assert_monotone(&s);
    let (cl, _) = closed_loop_at(&p, &s.point).unwrap();
    let x = s.point.q.clone().try_inverse().unwrap();
    let y = &cl.c * &x * cl.c.transpose();
    let u = &cl.m * &x * cl.m.transpose();
    assert!(common::sym_max_eig(&(y - &p.y_bar)) < 0.0);
    assert!(common::sym_max_eig(&(u - &p.u_bar)) < 0.0);
}

#[test]
fn output_bound_target_improves_on_start() {
    let (_, p) = arm();
    let s = extremize(&p, Target::OutputBound, Architecture::OutputFeedback).unwrap();
    assert_monotone(&s);
    assert!(s.z < s.z0);
    assert!(s.report.as_ref().unwrap().passed);
}

#[test]
fn relaxing_output_bound_never_raises_budget() {
    let (m, p) = arm();
    let cfg = SweepConfig {
        axes: vec![SweepAxis { parameter: SweepParameter::YbarScale, values: vec![1.0, 2.0, 4.0, 8.0] }],
        fixed: Default::default(),
        target: Target::Budget,
        architecture: Architecture::OutputFeedback,
        threads: None,
        output: None,
    };
    let cells = run_sweep(&p, &m.alpha_nominal(), &cfg).unwrap();
    for c in &cells {
        assert_eq!(c.status, "pass");
    }
    for w in cells.windows(2) {
        assert!(w[1].z() <= w[0].z() + 1e-9 * w[0].z(), "{} then {}", w[0].z(), w[1].z());
    }
}
