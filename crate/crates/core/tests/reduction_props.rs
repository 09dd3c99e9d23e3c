mod common;

use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;
use tenseco::linalg::max_abs;
use tenseco::structure::Structure;
use tenseco::topology::build_connectivity;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Pinned or jointed structure; `None` when nothing can move.
fn random_structure(seed: u64) -> Option<Structure> {
    let mut r = common::rng(seed);
    let s = common::random_class1(&mut r, false);
    let d = s.topology.dimension();
    let spec = if seed.is_multiple_of(3) {
        // bars 0 and 1 share node 1
        Some(tenseco::topology::TopologySpec {
            dimension: d,
            node_count: 5,
            bars: vec![[0, 1], [1, 2], [3, 4]],
            strings: vec![[0, 2], [2, 3], [0, 4], [1, 3]],
            point_mass_nodes: vec![],
        })
    } else {
        None
    };
    let (t, c) = match spec {
        Some(sp) => {
            let t = build_connectivity(&sp).ok()?;
            let g = common::random_class1_sized(&mut r, d, 3, 4, 0, false);
            let pos = t.expand_nodes(&g.config.positions.rows(0, d * t.physical_node_count()).into_owned()).ok()?;
            let mut c = tenseco::topology::Configuration::uniform(&t, pos, 1.0, 1.0, 100.0, 0.0, 1.0);
            c.bar_inertias = vec![0.1; t.bar_count()];
            (t, c)
        }
        None => (s.topology, s.config),
    };
    let fixed: Vec<usize> = if seed.is_multiple_of(2) { vec![0] } else { vec![] };
    Structure::new(t, c, fixed).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retained_modes_respect_constraints(seed in any::<u64>()) {
        let Some(st) = random_structure(seed) else { return Ok(()); };
        let p = st.p_tot();
        prop_assert!(inf_norm(&(st.bar_modes().phi1.transpose() * p)) < 1e-10);
        if !st.constraints.is_empty() {
            prop_assert!(inf_norm(&(&st.constraints.a * p)) < 1e-10);
        }
        let mm = st.nominal_minimal().unwrap();
        prop_assert!(max_abs(&(&mm.mass - mm.mass.transpose())) < 1e-12);
        prop_assert!(common::sym_min_eig(&mm.mass) > 0.0);
    }

    #[test]
    fn reduced_spectrum_matches_nullspace_oracle(seed in any::<u64>()) {
        let Some(st) = random_structure(seed) else { return Ok(()); };
        let mm = st.nominal_minimal().unwrap();
        let (full, _) = st.class1(&st.nominal.prestress).unwrap();
        // orthonormal basis of ker(A) ∩ ker(Φ₁ᵀ) straight from an SVD
        let phi1t = st.bar_modes().phi1.transpose();
        let stacked = if st.constraints.is_empty() {
            phi1t
        } else {
            let a = &st.constraints.a;
            let mut s = DMatrix::zeros(a.nrows() + phi1t.nrows(), a.ncols());
            s.rows_mut(0, a.nrows()).copy_from(a);
            s.rows_mut(a.nrows(), phi1t.nrows()).copy_from(&phi1t);
            s
        };
        let eig = (stacked.transpose() * &stacked).symmetric_eigen();
        let top = eig.eigenvalues.max();
        let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] < 1e-12 * top).collect();
        let n = eig.eigenvectors.select_columns(&keep);
        prop_assert_eq!(n.ncols(), mm.mass.nrows());
        let spec = |m: &DMatrix<f64>, k: &DMatrix<f64>| -> Vec<Complex<f64>> {
            let mut e: Vec<Complex<f64>> =
                (m.clone().try_inverse().unwrap() * k).complex_eigenvalues().iter().copied().collect();
            e.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            e
        };
        let ours = spec(&mm.mass, &mm.stiffness);
        let oracle = spec(&(n.transpose() * &full.mass * &n), &(n.transpose() * &full.stiffness * &n));
        let scale = oracle.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for (a, b) in ours.iter().zip(&oracle) {
            prop_assert!((a - b).norm() < 1e-8 * scale, "{} vs {}", a, b);
        }
    }
}

#[test]
fn generator_yields_structures() {
    let made = (0..60u64).filter(|s| random_structure(*s).is_some()).count();
    assert!(made >= 45, "only {made} of 60 seeds gave a structure");
}
