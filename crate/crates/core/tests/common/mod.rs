//! Random structures and loops shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tenseco::statespace::ClosedLoop;
use tenseco::topology::{build_connectivity, Configuration, Topology, TopologySpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Node positions with every pair at least `gap` apart.
fn spread_points(r: &mut ChaCha8Rng, n: usize, d: usize, gap: f64) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    while pts.len() < n {
        let p = random_point(r, d);
        if pts.iter().all(|q| dist(q, &p) > gap) {
            pts.push(p);
        }
    }
    pts
}

/// Class-1 spec: `bars` disjoint bars, `strings` distinct strings, point
/// masses on extra nodes.
pub fn class1_spec(r: &mut ChaCha8Rng, d: usize, bars: usize, strings: usize, point_masses: usize) -> TopologySpec {
    let n = 2 * bars + point_masses;
    let bar_list: Vec<[usize; 2]> = (0..bars).map(|i| [2 * i, 2 * i + 1]).collect();
    let mut pairs: Vec<[usize; 2]> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !bar_list.contains(&[i, j]) {
                pairs.push([i, j]);
            }
        }
    }
    pairs.shuffle(r);
    // every point mass needs a string so it feels a force
    let mut chosen: Vec<[usize; 2]> = Vec::new();
    for k in 0..point_masses {
        let node = 2 * bars + k;
        if let Some(p) = pairs.iter().find(|p| p.contains(&node) && !chosen.contains(p)) {
            chosen.push(*p);
        }
    }
    for p in pairs {
        if chosen.len() >= strings.max(point_masses) {
            break;
        }
        if !chosen.contains(&p) {
            chosen.push(p);
        }
    }
    TopologySpec {
        dimension: d,
        node_count: n,
        bars: bar_list,
        strings: chosen,
        point_mass_nodes: (2 * bars..n).collect(),
    }
}

/// Topology where bars may share nodes (class k ≥ 1).
pub fn jointed_spec(r: &mut ChaCha8Rng, d: usize, nodes: usize, bars: usize, strings: usize) -> TopologySpec {
    let mut pairs: Vec<[usize; 2]> = Vec::new();
    for i in 0..nodes {
        for j in i + 1..nodes {
            pairs.push([i, j]);
        }
    }
    pairs.shuffle(r);
    let bar_list: Vec<[usize; 2]> = pairs[..bars].to_vec();
    let string_list: Vec<[usize; 2]> = pairs[bars..(bars + strings).min(pairs.len())].to_vec();
    let used: Vec<usize> = (0..nodes).filter(|i| !bar_list.iter().any(|b| b.contains(i))).collect();
    TopologySpec { dimension: d, node_count: nodes, bars: bar_list, strings: string_list, point_mass_nodes: used }
}

/// A random class-1 structure with a random (not necessarily balanced)
/// static or moving linearization point.
pub struct RandomStructure {
    pub topology: Topology,
    pub config: Configuration,
}

pub fn random_class1(r: &mut ChaCha8Rng, moving: bool) -> RandomStructure {
    let d = if r.gen_bool(0.5) { 2 } else { 3 };
    let bars = r.gen_range(2..=4);
    let strings = r.gen_range(2..=6);
    let pm = if r.gen_bool(0.5) { r.gen_range(1..=2) } else { 0 };
    random_class1_sized(r, d, bars, strings, pm, moving)
}

pub fn random_class1_sized(
    r: &mut ChaCha8Rng,
    d: usize,
    bars: usize,
    strings: usize,
    point_masses: usize,
    moving: bool,
) -> RandomStructure {
    let spec = class1_spec(r, d, bars, strings, point_masses);
    let topology = build_connectivity(&spec).expect("generated topology is valid");
    let pts = spread_points(r, spec.node_count, d, 0.3);
    let nc = topology.coordinate_count();
    let positions = DVector::from_iterator(nc, pts.iter().flatten().copied());
    let beta = topology.bar_count();
    let sigma = topology.string_count();
    let bar_masses: Vec<f64> = (0..beta).map(|_| r.gen_range(0.5..2.0)).collect();
    let config = Configuration {
        positions,
        velocities: if moving {
            DVector::from_fn(nc, |_, _| r.gen_range(-0.5..0.5))
        } else {
            DVector::zeros(nc)
        },
        bar_inertias: bar_masses.iter().map(|m| m * r.gen_range(0.05..0.2)).collect(),
        bar_masses,
        point_masses: (0..topology.point_mass_count()).map(|_| r.gen_range(0.2..2.0)).collect(),
        string_stiffness: (0..sigma).map(|_| r.gen_range(50.0..200.0)).collect(),
        string_damping: (0..sigma).map(|_| r.gen_range(0.0..1.0)).collect(),
        prestress: (0..sigma).map(|_| r.gen_range(0.5..3.0)).collect(),
        external_force: DVector::from_fn(nc, |_, _| r.gen_range(-0.3..0.3)),
    };
    RandomStructure { topology, config }
}

/// Hurwitz loop with `n` states, spectral abscissa at most `-0.2`, and an
/// optional well-conditioned descriptor matrix.
pub fn random_stable_loop(r: &mut ChaCha8Rng, n: usize, inputs: usize, outputs: usize, descriptor: bool) -> ClosedLoop {
    let a0 = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
    let shift = tenseco::linalg::spectral_abscissa(&a0) + r.gen_range(0.2..1.0);
    let a = a0 - DMatrix::identity(n, n) * shift;
    let b = DMatrix::from_fn(n, inputs, |_, _| r.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(outputs, n, |_, _| r.gen_range(-1.0..1.0));
    if !descriptor {
        return ClosedLoop::standard(a, b, c);
    }
    // E A_e = A keeps the spectrum of E⁻¹A_e equal to that of a
    let e = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| r.gen_range(-0.2..0.2));
    let mut cl = ClosedLoop::standard(&e * a, &e * b, c);
    cl.e = e;
    cl
}

/// `vec(X)` solve of `A X + X Aᵀ + Q = 0` through the Kronecker sum.
pub fn kron_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let x = big.lu().solve(&rhs).expect("Kronecker sum is nonsingular");
    let x = DMatrix::from_column_slice(n, n, x.as_slice());
    (&x + x.transpose()) * 0.5
}

pub fn sym_max_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().max()
}

pub fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// Peak of `σ_max(C (jωE − A)⁻¹ B)` on `points` log-spaced frequencies plus ω = 0.
pub fn frequency_peak(cl: &ClosedLoop, points: usize) -> f64 {
    use nalgebra::Complex;
    let n = cl.a.nrows();
    let gain = |w: f64| -> f64 {
        let m = DMatrix::from_fn(n, n, |i, j| Complex::new(-cl.a[(i, j)], w * cl.e[(i, j)]));
        let b = cl.b.map(|v| Complex::new(v, 0.0));
        let x = m.lu().solve(&b).expect("resolvent");
        (cl.c.map(|v| Complex::new(v, 0.0)) * x).singular_values().max()
    };
    let (lo, hi) = (1e-3_f64, 1e3_f64);
    let step = (hi / lo).ln() / (points - 1) as f64;
    (0..points).map(|k| gain(lo * (step * k as f64).exp())).fold(gain(0.0), f64::max)
}
