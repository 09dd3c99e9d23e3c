//! Constraint elimination and the minimal-coordinate model.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::{full_svd, max_abs, normalize_column_signs, rank_tolerance};
use crate::linmodel::Class1Model;
use crate::topology::{bar_vectors, Configuration, Topology};

/// Linear holonomic constraints `A n = d`.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    pub a: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl ConstraintSet {
    pub fn empty(coordinates: usize) -> Self {
        ConstraintSet { a: DMatrix::zeros(0, coordinates), d: DVector::zeros(0) }
    }

    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// Pin every copy of the given physical nodes at their current position.
    pub fn pins(t: &Topology, positions: &DVector<f64>, physical: &[usize]) -> Result<Self> {
        let dim = t.dimension();
        let nc = t.coordinate_count();
        let mut rows = Vec::new();
        for &p in physical {
            if p >= t.physical_node_count() {
                return Err(Error::Topology(format!("fixed node {p} does not exist")));
            }
            for node in (0..t.node_count()).filter(|&i| t.physical_of(i) == p) {
                for k in 0..dim {
                    rows.push((dim * node + k, positions[dim * node + k]));
                }
            }
        }
        let mut a = DMatrix::zeros(rows.len(), nc);
        let mut d = DVector::zeros(rows.len());
        for (r, &(col, v)) in rows.iter().enumerate() {
            a[(r, col)] = 1.0;
            d[r] = v;
        }
        Ok(ConstraintSet { a, d })
    }

    /// Coincidence of joint copies, skipping physical nodes in `skip`.
    pub fn joints(t: &Topology, skip: &[usize]) -> Self {
        let dim = t.dimension();
        let nc = t.coordinate_count();
        let mut pairs = Vec::new();
        for g in t.joints() {
            if skip.contains(&t.physical_of(g[0])) {
                continue;
            }
            for &other in &g[1..] {
                pairs.push((g[0], other));
            }
        }
        let mut a = DMatrix::zeros(dim * pairs.len(), nc);
        for (r, &(p, q)) in pairs.iter().enumerate() {
            for k in 0..dim {
                a[(dim * r + k, dim * q + k)] = 1.0;
                a[(dim * r + k, dim * p + k)] = -1.0;
            }
        }
        ConstraintSet { a, d: DVector::zeros(dim * pairs.len()) }
    }

    /// Joint coincidence plus pins for the fixed physical nodes.
    pub fn for_structure(t: &Topology, positions: &DVector<f64>, fixed: &[usize]) -> Result<Self> {
        let joints = Self::joints(t, fixed);
        let pins = Self::pins(t, positions, fixed)?;
        Ok(joints.stack(&pins))
    }

    pub fn stack(&self, other: &ConstraintSet) -> Self {
        let nc = self.a.ncols();
        let rows = self.len() + other.len();
        let mut a = DMatrix::zeros(rows, nc);
        a.rows_mut(0, self.len()).copy_from(&self.a);
        a.rows_mut(self.len(), other.len()).copy_from(&other.a);
        let mut d = DVector::zeros(rows);
        d.rows_mut(0, self.len()).copy_from(&self.d);
        d.rows_mut(self.len(), other.len()).copy_from(&other.d);
        ConstraintSet { a, d }
    }

    /// `‖A n − d‖∞`.
    pub fn residual(&self, n: &DVector<f64>) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (&self.a * n - &self.d).amax()
    }

    fn check(&self, n: &DVector<f64>) -> Result<()> {
        let r = self.residual(n);
        let scale = 1.0 + n.amax();
        if r > 1e-8 * scale {
            return Err(Error::InconsistentConstraints(r));
        }
        Ok(())
    }
}

/// `A = U Σ₁ V₁ᵀ` with `V₂` spanning the null space of `A`.
#[derive(Clone, Debug)]
pub struct ProjectionBasis {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    /// rows removed by rank truncation
    pub dropped: usize,
}

fn project(a: &DMatrix<f64>) -> Result<ProjectionBasis> {
    let (r, c) = a.shape();
    let svd = full_svd(a);
    let smax = svd.sigma.iter().copied().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(Error::DegenerateConstraints("constraint matrix is zero".into()));
    }
    let tol = rank_tolerance(r, c, smax);
    let rank = svd.sigma.iter().filter(|&&s| s > tol).count();
    let mut v1 = svd.v.columns(0, rank).into_owned();
    let mut v2 = svd.v.columns(rank, c - rank).into_owned();
    normalize_column_signs(&mut v1);
    normalize_column_signs(&mut v2);
    let sigma = svd.sigma.rows(0, rank).into_owned();
    let u = a * &v1 * DMatrix::from_diagonal(&sigma.map(|s| 1.0 / s));
    Ok(ProjectionBasis { u, sigma, v1, v2, dropped: r - rank })
}

pub fn svd_project(cs: &ConstraintSet) -> Result<ProjectionBasis> {
    if cs.is_empty() {
        return Err(Error::DegenerateConstraints("no constraint rows".into()));
    }
    let p = project(&cs.a)?;
    if p.dropped > 0 {
        log::warn!("constraint matrix is rank deficient; dropping {} redundant rows", p.dropped);
    }
    Ok(p)
}

/// Class-k model on the constraint manifold, coordinates `η` with `ñ = V₂ η`.
#[derive(Clone, Debug)]
pub struct ReducedModel {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub forcing: DMatrix<f64>,
    pub input: DMatrix<f64>,
    pub basis: DMatrix<f64>,
}

pub fn reduce_classk(m: &Class1Model, cs: &ConstraintSet, n_bar: &DVector<f64>) -> Result<ReducedModel> {
    let nc = m.mass.nrows();
    let v2 = if cs.is_empty() {
        DMatrix::identity(nc, nc)
    } else {
        cs.check(n_bar)?;
        svd_project(cs)?.v2
    };
    let v2t = v2.transpose();
    Ok(ReducedModel {
        mass: &v2t * &m.mass * &v2,
        damping: &v2t * &m.damping * &v2,
        stiffness: &v2t * &m.stiffness * &v2,
        forcing: &v2t * &m.forcing,
        input: &v2t * &m.input,
        basis: v2,
    })
}

/// Bar-stretch directions `Φ₁` and their orthogonal complement `Φ₂`.
#[derive(Clone, Debug)]
pub struct BarModeBasis {
    pub phi1: DMatrix<f64>,
    pub phi2: DMatrix<f64>,
}

pub fn bar_mode_basis(t: &Topology, c: &Configuration) -> BarModeBasis {
    let d = t.dimension();
    let nc = t.coordinate_count();
    let beta = t.bar_count();
    let mut phi1 = DMatrix::zeros(nc, beta);
    let per_bar = 2 * d - 1;
    let mut phi2 = DMatrix::zeros(nc, per_bar * beta + d * t.point_mass_count());
    for (i, (e, b)) in t.bars().iter().zip(bar_vectors(t, c)).enumerate() {
        let mut u = DVector::zeros(2 * d);
        u.rows_mut(0, d).copy_from(&(-&b));
        u.rows_mut(d, d).copy_from(&b);
        u /= u.norm();
        let rows = [d * e[0], d * e[1]];
        for (k, &r0) in rows.iter().enumerate() {
            phi1.view_mut((r0, i), (d, 1)).copy_from(&u.rows(k * d, d));
        }
        let row = DMatrix::from_row_slice(1, 2 * d, u.as_slice());
        let svd = full_svd(&row);
        let mut comp = svd.v.columns(1, per_bar).into_owned();
        normalize_column_signs(&mut comp);
        for (k, &r0) in rows.iter().enumerate() {
            phi2.view_mut((r0, per_bar * i), (d, per_bar)).copy_from(&comp.rows(k * d, d));
        }
    }
    let off = per_bar * beta;
    for (k, &p) in t.point_mass_nodes().iter().enumerate() {
        for j in 0..d {
            phi2[(d * p + j, off + d * k + j)] = 1.0;
        }
    }
    BarModeBasis { phi1, phi2 }
}

/// Minimal-coordinate model in coordinates `η` with `ñ = P_tot η`.
#[derive(Clone, Debug)]
pub struct MinimalModel {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// `P_k` mapping nodal loads to modal forces
    pub forcing: DMatrix<f64>,
    /// `B_k` mapping force densities to modal forces
    pub input: DMatrix<f64>,
    pub p_tot: DMatrix<f64>,
    pub v2_phi: DMatrix<f64>,
}

/// Total projector `P_tot = Φ₂ V₂φ` for the given constraints.
pub fn total_projector(cs: &ConstraintSet, bm: &BarModeBasis) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n2 = bm.phi2.ncols();
    let v2_phi = if cs.is_empty() {
        DMatrix::identity(n2, n2)
    } else {
        let a2 = &cs.a * &bm.phi2;
        if max_abs(&a2) == 0.0 {
            DMatrix::identity(n2, n2)
        } else {
            project(&a2)?.v2
        }
    };
    Ok((&bm.phi2 * &v2_phi, v2_phi))
}

pub fn minimal_model(
    m: &Class1Model,
    cs: &ConstraintSet,
    bm: &BarModeBasis,
    n_bar: &DVector<f64>,
) -> Result<MinimalModel> {
    cs.check(n_bar)?;
    let (p_tot, v2_phi) = total_projector(cs, bm)?;
    Ok(project_model(m, p_tot, v2_phi))
}

pub(crate) fn project_model(m: &Class1Model, p_tot: DMatrix<f64>, v2_phi: DMatrix<f64>) -> MinimalModel {
    let pt = p_tot.transpose();
    MinimalModel {
        mass: crate::linalg::sym(&(&pt * &m.mass * &p_tot)),
        damping: &pt * &m.damping * &p_tot,
        stiffness: &pt * &m.stiffness * &p_tot,
        forcing: &pt * &m.forcing,
        input: &pt * &m.input,
        p_tot,
        v2_phi,
    }
}

/// `(2d − 1)β + d·n_s − rank(AΦ₂)`.
pub fn expected_mode_count(dimension: usize, bars: usize, point_masses: usize, constraint_rank: usize) -> usize {
    (2 * dimension - 1) * bars + dimension * point_masses - constraint_rank
}

/// Reaction forces `Aᵀλ` that best balance the bars and point masses under
/// the current string forces and external load, with the remaining defect.
pub fn constraint_reactions(t: &Topology, c: &Configuration, cs: &ConstraintSet) -> Result<(DVector<f64>, f64)> {
    let nc = t.coordinate_count();
    let f0 = crate::topology::equilibrium_residual(t, c);
    let h = balance_operator(t, c);
    if cs.is_empty() {
        let defect = (&h * &f0).amax();
        return Ok((DVector::zeros(nc), defect));
    }
    let ha = &h * cs.a.transpose();
    let rhs = -(&h * &f0);
    let svd = SVD::new(ha, true, true);
    let smax = svd.singular_values.max();
    let lambda = svd
        .solve(&rhs, smax * 1e-12)
        .map_err(|e| Error::Singular(format!("reaction solve: {e}")))?;
    let reaction = cs.a.transpose() * lambda;
    let defect = (&h * (&f0 + &reaction)).amax();
    Ok((reaction, defect))
}

/// Matrix form of [`crate::topology::balance_defect_of`].
pub fn balance_operator(t: &Topology, c: &Configuration) -> DMatrix<f64> {
    let d = t.dimension();
    let nc = t.coordinate_count();
    let beta = t.bar_count();
    let mut h = DMatrix::zeros(2 * d * beta + d * t.point_mass_count(), nc);
    let eye = DMatrix::<f64>::identity(d, d);
    for (i, (e, b)) in t.bars().iter().zip(bar_vectors(t, c)).enumerate() {
        let proj = &eye - &b * b.transpose() / b.norm_squared();
        h.view_mut((2 * d * i, d * e[0]), (d, d)).copy_from(&eye);
        h.view_mut((2 * d * i, d * e[1]), (d, d)).copy_from(&eye);
        h.view_mut((2 * d * i + d, d * e[0]), (d, d)).copy_from(&(-&proj));
        h.view_mut((2 * d * i + d, d * e[1]), (d, d)).copy_from(&proj);
    }
    let off = 2 * d * beta;
    for (k, &p) in t.point_mass_nodes().iter().enumerate() {
        h.view_mut((off + d * k, d * p), (d, d)).copy_from(&eye);
    }
    h
}
