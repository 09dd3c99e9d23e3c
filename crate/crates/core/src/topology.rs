//! Tensegrity connectivity and configuration data.
//!
//! Node coordinates are stacked node-major: `n = [n_0; n_1; …]` with `d`
//! entries per node, so every incidence matrix `C` acts as `C ⊗ I_d`.
//!
//! Bars that share a node (class-k structures) are given private copies of
//! the shared node. Copies are appended after the physical nodes and tied to
//! the original by joint constraints (see [`crate::reduction`]).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kron_eye;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TopologySpec {
    pub dimension: usize,
    pub node_count: usize,
    pub bars: Vec<[usize; 2]>,
    pub strings: Vec<[usize; 2]>,
    #[serde(default)]
    pub point_mass_nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Topology {
    dimension: usize,
    physical_nodes: usize,
    /// physical node of every (possibly duplicated) node
    physical_of: Vec<usize>,
    /// bar endpoints `[tail, head]` in expanded numbering
    bars: Vec<[usize; 2]>,
    strings: Vec<[usize; 2]>,
    point_mass_nodes: Vec<usize>,
    /// groups of expanded nodes that coincide physically
    joints: Vec<Vec<usize>>,
    c_b: DMatrix<f64>,
    c_s: DMatrix<f64>,
    c_r: DMatrix<f64>,
    c_nb: DMatrix<f64>,
    c_ns: DMatrix<f64>,
}

/// Validate connectivity and build the incidence matrices.
pub fn build_connectivity(spec: &TopologySpec) -> Result<Topology> {
    let d = spec.dimension;
    if d != 2 && d != 3 {
        return Err(Error::Topology(format!("dimension must be 2 or 3, got {d}")));
    }
    let n = spec.node_count;
    let check = |i: usize, what: &str| {
        if i >= n {
            Err(Error::Topology(format!("{what} references node {i} but only {n} nodes exist")))
        } else {
            Ok(())
        }
    };
    if spec.bars.is_empty() && spec.point_mass_nodes.is_empty() {
        return Err(Error::Topology("structure has no bars and no point masses".into()));
    }
    for (k, b) in spec.bars.iter().enumerate() {
        check(b[0], "bar")?;
        check(b[1], "bar")?;
        if b[0] == b[1] {
            return Err(Error::Topology(format!("bar {k} has identical endpoints")));
        }
        for (j, o) in spec.bars[..k].iter().enumerate() {
            if (o[0] == b[0] && o[1] == b[1]) || (o[0] == b[1] && o[1] == b[0]) {
                return Err(Error::Topology(format!("bar {k} duplicates bar {j}")));
            }
        }
    }
    for (k, s) in spec.strings.iter().enumerate() {
        check(s[0], "string")?;
        check(s[1], "string")?;
        if s[0] == s[1] {
            return Err(Error::Topology(format!("string {k} has identical endpoints")));
        }
    }
    let mut bar_count = vec![0usize; n];
    for b in &spec.bars {
        bar_count[b[0]] += 1;
        bar_count[b[1]] += 1;
    }
    let mut is_pm = vec![false; n];
    for &p in &spec.point_mass_nodes {
        check(p, "point mass")?;
        if is_pm[p] {
            return Err(Error::Topology(format!("point mass node {p} listed twice")));
        }
        if bar_count[p] > 0 {
            return Err(Error::Topology(format!("node {p} is both a bar endpoint and a point mass")));
        }
        is_pm[p] = true;
    }
    if let Some(i) = (0..n).find(|&i| bar_count[i] == 0 && !is_pm[i]) {
        return Err(Error::Topology(format!("node {i} is neither a bar endpoint nor a point mass")));
    }

    let mut physical_of: Vec<usize> = (0..n).collect();
    let mut used = vec![false; n];
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bars = Vec::with_capacity(spec.bars.len());
    for b in &spec.bars {
        let mut e = [0usize; 2];
        for k in 0..2 {
            let p = b[k];
            if !used[p] {
                used[p] = true;
                e[k] = p;
                groups[p].push(p);
            } else {
                let copy = physical_of.len();
                physical_of.push(p);
                groups[p].push(copy);
                e[k] = copy;
            }
        }
        bars.push(e);
    }
    let joints: Vec<Vec<usize>> = groups.into_iter().filter(|g| g.len() > 1).collect();
    let total = physical_of.len();
    let beta = bars.len();
    let sigma = spec.strings.len();
    let ns = spec.point_mass_nodes.len();

    let mut c_b = DMatrix::zeros(beta, total);
    let mut c_r = DMatrix::zeros(beta, total);
    let mut c_nb = DMatrix::zeros(2 * beta, total);
    for (i, e) in bars.iter().enumerate() {
        c_b[(i, e[0])] = -1.0;
        c_b[(i, e[1])] = 1.0;
        c_r[(i, e[0])] = 0.5;
        c_r[(i, e[1])] = 0.5;
        c_nb[(2 * i, e[0])] = 1.0;
        c_nb[(2 * i + 1, e[1])] = 1.0;
    }
    let mut c_s = DMatrix::zeros(sigma, total);
    for (i, s) in spec.strings.iter().enumerate() {
        c_s[(i, s[0])] = -1.0;
        c_s[(i, s[1])] = 1.0;
    }
    let mut c_ns = DMatrix::zeros(ns, total);
    for (i, &p) in spec.point_mass_nodes.iter().enumerate() {
        c_ns[(i, p)] = 1.0;
    }
    Ok(Topology {
        dimension: d,
        physical_nodes: n,
        physical_of,
        bars,
        strings: spec.strings.clone(),
        point_mass_nodes: spec.point_mass_nodes.clone(),
        joints,
        c_b,
        c_s,
        c_r,
        c_nb,
        c_ns,
    })
}

impl Topology {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of nodes including joint copies.
    pub fn node_count(&self) -> usize {
        self.physical_of.len()
    }

    pub fn physical_node_count(&self) -> usize {
        self.physical_nodes
    }

    pub fn physical_of(&self, node: usize) -> usize {
        self.physical_of[node]
    }

    /// Number of generalized coordinates `d · n`.
    pub fn coordinate_count(&self) -> usize {
        self.dimension * self.node_count()
    }

    pub fn bar_count(&self) -> usize {
        self.bars.len()
    }

    pub fn string_count(&self) -> usize {
        self.strings.len()
    }

    pub fn point_mass_count(&self) -> usize {
        self.point_mass_nodes.len()
    }

    pub fn bars(&self) -> &[[usize; 2]] {
        &self.bars
    }

    pub fn strings(&self) -> &[[usize; 2]] {
        &self.strings
    }

    pub fn point_mass_nodes(&self) -> &[usize] {
        &self.point_mass_nodes
    }

    /// Groups of coincident nodes created for shared bar endpoints.
    pub fn joints(&self) -> &[Vec<usize>] {
        &self.joints
    }

    /// Largest number of bars meeting at one physical node.
    pub fn class(&self) -> usize {
        let mut count = vec![0usize; self.physical_nodes];
        for b in &self.bars {
            count[self.physical_of[b[0]]] += 1;
            count[self.physical_of[b[1]]] += 1;
        }
        count.into_iter().max().unwrap_or(0).max(1)
    }

    /// Bar incidence `C_b` (β × n).
    pub fn c_b(&self) -> &DMatrix<f64> {
        &self.c_b
    }

    /// String incidence `C_s` (σ × n).
    pub fn c_s(&self) -> &DMatrix<f64> {
        &self.c_s
    }

    /// Bar centre map `C_r` (β × n).
    pub fn c_r(&self) -> &DMatrix<f64> {
        &self.c_r
    }

    /// Bar-node selector `C_nb` (2β × n), tail then head of each bar.
    pub fn c_nb(&self) -> &DMatrix<f64> {
        &self.c_nb
    }

    /// Point-mass selector `C_ns` (n_s × n).
    pub fn c_ns(&self) -> &DMatrix<f64> {
        &self.c_ns
    }

    /// Coordinate transform `T` mapping nodes to `[b; r; r_s]`.
    pub fn transform(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let mut t = DMatrix::zeros(n, n);
        let beta = self.bar_count();
        t.rows_mut(0, beta).copy_from(&self.c_b);
        t.rows_mut(beta, beta).copy_from(&self.c_r);
        t.rows_mut(2 * beta, self.point_mass_count()).copy_from(&self.c_ns);
        kron_eye(&t, self.dimension)
    }

    /// Closed form `T^{-T} = [½C_b; 2C_r; C_ns] ⊗ I`.
    pub fn transform_inverse_transpose(&self) -> DMatrix<f64> {
        let n = self.node_count();
        let beta = self.bar_count();
        let mut t = DMatrix::zeros(n, n);
        t.rows_mut(0, beta).copy_from(&(&self.c_b * 0.5));
        t.rows_mut(beta, beta).copy_from(&(&self.c_r * 2.0));
        t.rows_mut(2 * beta, self.point_mass_count()).copy_from(&self.c_ns);
        kron_eye(&t, self.dimension)
    }

    /// `‖(½C_b)ᵀC_b + (2C_r)ᵀC_r + C_nsᵀC_ns − I‖_max`.
    pub fn transform_identity_residual(&self) -> f64 {
        let n = self.node_count();
        let m = (self.c_b.transpose() * 0.5) * &self.c_b
            + (self.c_r.transpose() * 2.0) * &self.c_r
            + self.c_ns.transpose() * &self.c_ns
            - DMatrix::identity(n, n);
        crate::linalg::max_abs(&m)
    }

    /// Expand physical node coordinates (d per node) to all nodes.
    pub fn expand_nodes(&self, physical: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dimension;
        if physical.len() != d * self.physical_nodes {
            return Err(Error::Dimension(format!(
                "expected {} node coordinates, got {}",
                d * self.physical_nodes,
                physical.len()
            )));
        }
        let mut out = DVector::zeros(self.coordinate_count());
        for (i, &p) in self.physical_of.iter().enumerate() {
            out.rows_mut(d * i, d).copy_from(&physical.rows(d * p, d));
        }
        Ok(out)
    }

    /// Expand a physical node load: each physical load acts on the first copy only.
    pub fn expand_loads(&self, physical: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.dimension;
        if physical.len() != d * self.physical_nodes {
            return Err(Error::Dimension(format!(
                "expected {} load entries, got {}",
                d * self.physical_nodes,
                physical.len()
            )));
        }
        let mut out = DVector::zeros(self.coordinate_count());
        out.rows_mut(0, physical.len()).copy_from(physical);
        Ok(out)
    }
}

/// Physical parameters and the linearization point.
#[derive(Clone, Debug)]
pub struct Configuration {
    /// `d · n` node positions (all nodes, including joint copies)
    pub positions: DVector<f64>,
    pub velocities: DVector<f64>,
    pub bar_masses: Vec<f64>,
    /// bar inertia `J` (kg, scales the bar vector of full length)
    pub bar_inertias: Vec<f64>,
    pub point_masses: Vec<f64>,
    pub string_stiffness: Vec<f64>,
    pub string_damping: Vec<f64>,
    /// equilibrium force densities `γ̄`
    pub prestress: Vec<f64>,
    /// external force `w̄` on every node coordinate
    pub external_force: DVector<f64>,
}

impl Configuration {
    /// Configuration at rest with uniform parameters and `J = m/12`.
    pub fn uniform(
        t: &Topology,
        positions: DVector<f64>,
        bar_mass: f64,
        point_mass: f64,
        stiffness: f64,
        damping: f64,
        prestress: f64,
    ) -> Self {
        let nc = t.coordinate_count();
        Configuration {
            positions,
            velocities: DVector::zeros(nc),
            bar_masses: vec![bar_mass; t.bar_count()],
            bar_inertias: vec![bar_mass / 12.0; t.bar_count()],
            point_masses: vec![point_mass; t.point_mass_count()],
            string_stiffness: vec![stiffness; t.string_count()],
            string_damping: vec![damping; t.string_count()],
            prestress: vec![prestress; t.string_count()],
            external_force: DVector::zeros(nc),
        }
    }

    pub fn validate(&self, t: &Topology) -> Result<()> {
        let nc = t.coordinate_count();
        let lens = [
            ("positions", self.positions.len(), nc),
            ("velocities", self.velocities.len(), nc),
            ("external_force", self.external_force.len(), nc),
            ("bar_masses", self.bar_masses.len(), t.bar_count()),
            ("bar_inertias", self.bar_inertias.len(), t.bar_count()),
            ("point_masses", self.point_masses.len(), t.point_mass_count()),
            ("string_stiffness", self.string_stiffness.len(), t.string_count()),
            ("string_damping", self.string_damping.len(), t.string_count()),
            ("prestress", self.prestress.len(), t.string_count()),
        ];
        for (name, got, want) in lens {
            if got != want {
                return Err(Error::Dimension(format!("{name}: expected {want} entries, got {got}")));
            }
        }
        let positive = [
            ("bar mass", &self.bar_masses),
            ("bar inertia", &self.bar_inertias),
            ("point mass", &self.point_masses),
            ("string stiffness", &self.string_stiffness),
        ];
        for (name, v) in positive {
            if let Some(x) = v.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
                return Err(Error::Configuration(format!("{name} must be positive, got {x}")));
            }
        }
        if let Some(x) = self.string_damping.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::Configuration(format!("string damping must be nonnegative, got {x}")));
        }
        for (i, l) in bar_lengths(t, self).iter().enumerate() {
            if !(*l > 0.0) {
                return Err(Error::Configuration(format!("bar {i} has zero length")));
            }
        }
        for (i, s) in string_vectors(t, self).iter().enumerate() {
            if !(s.norm() > 0.0) {
                return Err(Error::Configuration(format!("string {i} has zero length")));
            }
        }
        Ok(())
    }
}

fn node(v: &DVector<f64>, d: usize, i: usize) -> DVector<f64> {
    v.rows(d * i, d).into_owned()
}

/// Bar vectors `b_i = n_head − n_tail`.
pub fn bar_vectors(t: &Topology, c: &Configuration) -> Vec<DVector<f64>> {
    let d = t.dimension();
    t.bars().iter().map(|e| node(&c.positions, d, e[1]) - node(&c.positions, d, e[0])).collect()
}

pub fn bar_velocities(t: &Topology, c: &Configuration) -> Vec<DVector<f64>> {
    let d = t.dimension();
    t.bars().iter().map(|e| node(&c.velocities, d, e[1]) - node(&c.velocities, d, e[0])).collect()
}

pub fn bar_lengths(t: &Topology, c: &Configuration) -> Vec<f64> {
    bar_vectors(t, c).iter().map(|b| b.norm()).collect()
}

/// String vectors `s_i = n_head − n_tail`.
pub fn string_vectors(t: &Topology, c: &Configuration) -> Vec<DVector<f64>> {
    let d = t.dimension();
    t.strings().iter().map(|e| node(&c.positions, d, e[1]) - node(&c.positions, d, e[0])).collect()
}

pub fn string_velocities(t: &Topology, c: &Configuration) -> Vec<DVector<f64>> {
    let d = t.dimension();
    t.strings().iter().map(|e| node(&c.velocities, d, e[1]) - node(&c.velocities, d, e[0])).collect()
}

/// Net nodal force `f̄ = w̄ − (C_sᵀ ⊗ I)(γ̄ ⊗ 𝟙)^ s̄`.
pub fn equilibrium_residual(t: &Topology, c: &Configuration) -> DVector<f64> {
    string_forces(t, &c.positions, &c.prestress, &c.external_force)
}

/// Nodal force from strings with force densities `gamma` plus `w`.
pub(crate) fn string_forces(
    t: &Topology,
    positions: &DVector<f64>,
    gamma: &[f64],
    w: &DVector<f64>,
) -> DVector<f64> {
    let d = t.dimension();
    let mut f = w.clone();
    for (k, e) in t.strings().iter().enumerate() {
        let s = node(positions, d, e[1]) - node(positions, d, e[0]);
        let g = &s * gamma[k];
        let mut head = f.rows_mut(d * e[1], d);
        head -= &g;
        let mut tail = f.rows_mut(d * e[0], d);
        tail += &g;
    }
    f
}

/// Static balance defect: for every bar `[f_a + f_b; (I − bbᵀ/l²)(f_b − f_a)]`,
/// then the net force on every point mass. Zero at a static equilibrium.
pub fn balance_defect_of(t: &Topology, c: &Configuration, f: &DVector<f64>) -> DVector<f64> {
    let d = t.dimension();
    let bars = bar_vectors(t, c);
    let mut out = DVector::zeros(2 * d * t.bar_count() + d * t.point_mass_count());
    for (i, e) in t.bars().iter().enumerate() {
        let fa = node(f, d, e[0]);
        let fb = node(f, d, e[1]);
        let b = &bars[i];
        let l2 = b.norm_squared();
        let df = &fb - &fa;
        let transverse = &df - b * (b.dot(&df) / l2);
        out.rows_mut(2 * d * i, d).copy_from(&(fa + fb));
        out.rows_mut(2 * d * i + d, d).copy_from(&transverse);
    }
    let off = 2 * d * t.bar_count();
    for (k, &p) in t.point_mass_nodes().iter().enumerate() {
        out.rows_mut(off + d * k, d).copy_from(&node(f, d, p));
    }
    out
}

pub fn balance_defect(t: &Topology, c: &Configuration) -> DVector<f64> {
    balance_defect_of(t, c, &equilibrium_residual(t, c))
}

/// Rest lengths `ρ_i = ‖s̄_i‖ (1 − γ̄_i / k_i)` reproducing the prestress at a static point.
pub fn rest_lengths_from_prestress(t: &Topology, c: &Configuration) -> Result<Vec<f64>> {
    string_vectors(t, c)
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (g, k) = (c.prestress[i], c.string_stiffness[i]);
            if g >= k {
                Err(Error::Configuration(format!(
                    "string {i}: force density {g} is not below stiffness {k}"
                )))
            } else {
                Ok(s.norm() * (1.0 - g / k))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bars: Vec<[usize; 2]>, strings: Vec<[usize; 2]>, n: usize) -> TopologySpec {
        TopologySpec { dimension: 2, node_count: n, bars, strings, point_mass_nodes: vec![] }
    }

    #[test]
    fn single_bar_incidence() {
        let t = build_connectivity(&spec(vec![[0, 1]], vec![], 2)).unwrap();
        assert_eq!(t.c_b().row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0]);
        assert_eq!(t.c_r().row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);
        assert!(t.transform_identity_residual() < 1e-15);
    }

    #[test]
    fn rejects_bad_topologies() {
        assert!(build_connectivity(&spec(vec![[0, 1], [1, 0]], vec![], 2)).is_err());
        assert!(build_connectivity(&spec(vec![[0, 0]], vec![], 2)).is_err());
        assert!(build_connectivity(&spec(vec![[0, 1]], vec![[0, 5]], 2)).is_err());
        assert!(build_connectivity(&spec(vec![[0, 1]], vec![], 3)).is_err());
    }

    #[test]
    fn shared_nodes_are_split() {
        let t = build_connectivity(&spec(vec![[0, 1], [1, 2]], vec![[0, 2]], 3)).unwrap();
        assert_eq!(t.node_count(), 4);
        assert_eq!(t.class(), 2);
        assert_eq!(t.joints(), &[vec![1, 3]]);
        assert!(t.transform_identity_residual() < 1e-15);
    }

    #[test]
    fn transform_inverse_closed_form() {
        let mut s = spec(vec![[0, 1], [2, 3]], vec![[0, 2], [1, 3], [1, 4]], 5);
        s.point_mass_nodes = vec![4];
        let t = build_connectivity(&s).unwrap();
        let prod = t.transform_inverse_transpose().transpose() * t.transform();
        assert!((prod - DMatrix::identity(10, 10)).norm() < 1e-14);
    }
}
