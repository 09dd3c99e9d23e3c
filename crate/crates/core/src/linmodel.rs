//! Linearized class-1 dynamics about a configuration, plus the nonlinear
//! right-hand side used to check them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{blkdiag, inverse, kron_eye};
use crate::topology::{
    bar_lengths, bar_vectors, bar_velocities, equilibrium_residual, string_forces, string_vectors,
    string_velocities, Configuration, Topology,
};

/// Per-bar blocks of the linearized bar equation.
#[derive(Clone, Debug)]
pub struct BarBlocks {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    /// `½(I − b̄b̄ᵀ/l²)`, the map from `f₂ − f₁` to the bar equation
    pub forcing: DMatrix<f64>,
}

pub fn bar_blocks(
    b: &DVector<f64>,
    b_dot: &DVector<f64>,
    f1: &DVector<f64>,
    f2: &DVector<f64>,
    inertia: f64,
    length: f64,
) -> Result<BarBlocks> {
    if !(length > 0.0) || !(inertia > 0.0) {
        return Err(Error::Configuration(format!(
            "bar needs positive length and inertia (l = {length}, J = {inertia})"
        )));
    }
    let d = b.len();
    let l2 = length * length;
    let id = DMatrix::<f64>::identity(d, d);
    let df = f2 - f1;
    let damping = b * b_dot.transpose() * (2.0 * inertia / l2);
    let diag = inertia / l2 * b_dot.norm_squared() + b.dot(&df) / (2.0 * l2);
    let stiffness = &id * diag + b * df.transpose() / (2.0 * l2);
    let forcing = (&id - b * b.transpose() / l2) * 0.5;
    Ok(BarBlocks { mass: &id * inertia, damping, stiffness, forcing })
}

/// `M₁ ñ̈ + D₁ ñ̇ + K₁ ñ = B₁ γ̃ + P₁ w̃` in node coordinates.
#[derive(Clone, Debug)]
pub struct Class1Model {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub forcing: DMatrix<f64>,
    pub input: DMatrix<f64>,
    /// `K_s = (C_sᵀ ⊗ I)(γ̄ ⊗ 𝟙)^`
    pub string_force_jacobian: DMatrix<f64>,
    /// `K_γ = (C_sᵀ ⊗ I) ŝ̄`
    pub string_input: DMatrix<f64>,
    /// true when the linearization point has nonzero velocities
    pub dynamic_point: bool,
}

/// `(K_s, K_γ)`.
pub fn string_force_jacobians(t: &Topology, c: &Configuration) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = t.dimension();
    let sigma = t.string_count();
    let cst = kron_eye(&t.c_s().transpose(), d);
    let mut gam = DMatrix::zeros(d * sigma, d * sigma);
    let mut s_hat = DMatrix::zeros(d * sigma, sigma);
    for (i, s) in string_vectors(t, c).iter().enumerate() {
        for k in 0..d {
            gam[(d * i + k, d * i + k)] = c.prestress[i];
            s_hat[(d * i + k, i)] = s[k];
        }
    }
    (&cst * gam, cst * s_hat)
}

pub fn assemble_class1(t: &Topology, c: &Configuration) -> Result<Class1Model> {
    c.validate(t)?;
    let d = t.dimension();
    let f = equilibrium_residual(t, c);
    let bars = bar_vectors(t, c);
    let bar_vel = bar_velocities(t, c);
    let lengths = bar_lengths(t, c);
    let dynamic_point = c.velocities.iter().any(|v| *v != 0.0);
    if dynamic_point {
        log::warn!("linearizing about a point with nonzero velocities");
    }

    let mut m_b = Vec::new();
    let mut d_b = Vec::new();
    let mut k_b = Vec::new();
    let mut p_b = Vec::new();
    for (i, e) in t.bars().iter().enumerate() {
        let f1 = f.rows(d * e[0], d).into_owned();
        let f2 = f.rows(d * e[1], d).into_owned();
        let blk = bar_blocks(&bars[i], &bar_vel[i], &f1, &f2, c.bar_inertias[i], lengths[i])?;
        m_b.push(blk.mass);
        d_b.push(blk.damping);
        k_b.push(blk.stiffness);
        // T^{-T} already carries the ½ on the bar rows
        p_b.push(blk.forcing * 2.0);
    }
    let zero = DMatrix::<f64>::zeros(d, d);
    let eye = DMatrix::<f64>::identity(d, d);
    let mut m_blocks: Vec<DMatrix<f64>> = m_b;
    let mut d_blocks: Vec<DMatrix<f64>> = d_b;
    let mut k_blocks: Vec<DMatrix<f64>> = k_b;
    let mut p_blocks: Vec<DMatrix<f64>> = p_b;
    for &m in &c.bar_masses {
        m_blocks.push(&eye * m);
        d_blocks.push(zero.clone());
        k_blocks.push(zero.clone());
        p_blocks.push(eye.clone());
    }
    for &m in &c.point_masses {
        m_blocks.push(&eye * m);
        d_blocks.push(zero.clone());
        k_blocks.push(zero.clone());
        p_blocks.push(eye.clone());
    }
    let refs = |v: &Vec<DMatrix<f64>>| blkdiag(&v.iter().collect::<Vec<_>>());
    let tr = t.transform();
    let tit = t.transform_inverse_transpose();
    let trt = tr.transpose();
    let mass = &trt * refs(&m_blocks) * &tr;
    let damping = &trt * refs(&d_blocks) * &tr;
    let forcing = &trt * refs(&p_blocks) * &tit;
    let (ks, kg) = string_force_jacobians(t, c);
    let cs = kron_eye(t.c_s(), d);
    let stiffness = &trt * refs(&k_blocks) * &tr + &forcing * &ks * &cs;
    let input = -(&forcing * &kg);
    Ok(Class1Model {
        mass,
        damping,
        stiffness,
        forcing,
        input,
        string_force_jacobian: ks,
        string_input: kg,
        dynamic_point,
    })
}

/// `γ̃ = K_ks s̃ + K_cs ṡ̃ − K_ps ρ̃`.
#[derive(Clone, Debug)]
pub struct StringLinearization {
    pub k_ks: DMatrix<f64>,
    pub k_cs: DMatrix<f64>,
    pub k_ps: DMatrix<f64>,
}

pub fn rest_length_jacobians(
    t: &Topology,
    c: &Configuration,
    rest_lengths: &[f64],
) -> Result<StringLinearization> {
    let d = t.dimension();
    let sigma = t.string_count();
    if rest_lengths.len() != sigma {
        return Err(Error::Dimension(format!("expected {sigma} rest lengths, got {}", rest_lengths.len())));
    }
    let mut k_ks = DMatrix::zeros(sigma, d * sigma);
    let mut k_cs = DMatrix::zeros(sigma, d * sigma);
    let mut k_ps = DMatrix::zeros(sigma, sigma);
    let vel = string_velocities(t, c);
    for (i, s) in string_vectors(t, c).iter().enumerate() {
        let n2 = s.norm_squared();
        let n = n2.sqrt();
        if !(n > 0.0) {
            return Err(Error::Configuration(format!("string {i} has zero length")));
        }
        let (k, cd, rho) = (c.string_stiffness[i], c.string_damping[i], rest_lengths[i]);
        let sd = &vel[i];
        let zeta = s * (k * rho / (n2 * n)) + sd * (cd / n2) - s * (2.0 * cd * sd.dot(s) / (n2 * n2));
        let kappa = s * (cd / n2);
        for j in 0..d {
            k_ks[(i, d * i + j)] = zeta[j];
            k_cs[(i, d * i + j)] = kappa[j];
        }
        k_ps[(i, i)] = k / n;
    }
    Ok(StringLinearization { k_ks, k_cs, k_ps })
}

/// Open loop with rest lengths as input: `M ñ̈ + D ñ̇ + K ñ = B_ρ ρ̃ + P w̃`.
#[derive(Clone, Debug)]
pub struct OpenLoopModel {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
    pub forcing: DMatrix<f64>,
    pub rest_length_input: DMatrix<f64>,
}

pub fn open_loop_class1(t: &Topology, m: &Class1Model, s: &StringLinearization) -> OpenLoopModel {
    let cs = kron_eye(t.c_s(), t.dimension());
    let pk = &m.forcing * &m.string_input;
    OpenLoopModel {
        mass: m.mass.clone(),
        damping: &m.damping + &pk * &s.k_cs * &cs,
        stiffness: &m.stiffness + &pk * &s.k_ks * &cs,
        forcing: m.forcing.clone(),
        rest_length_input: pk * &s.k_ps,
    }
}

/// How the strings are driven in the nonlinear model.
#[derive(Clone, Copy, Debug)]
pub enum StringInput<'a> {
    ForceDensity(&'a [f64]),
    RestLength(&'a [f64]),
}

/// Nonlinear generalized accelerations `[b̈; r̈; r̈_s]` at state `(n, ṅ)`.
///
/// Bar lengths and all physical constants come from `c`; only the state,
/// string input and load vary.
pub fn nonlinear_generalized_accelerations(
    t: &Topology,
    c: &Configuration,
    n: &DVector<f64>,
    n_dot: &DVector<f64>,
    input: StringInput,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = t.dimension();
    let nc = t.coordinate_count();
    if n.len() != nc || n_dot.len() != nc || w.len() != nc {
        return Err(Error::Dimension(format!("state and load must have {nc} entries")));
    }
    let sigma = t.string_count();
    let gamma: Vec<f64> = match input {
        StringInput::ForceDensity(g) => {
            if g.len() != sigma {
                return Err(Error::Dimension(format!("expected {sigma} force densities")));
            }
            g.to_vec()
        }
        StringInput::RestLength(rho) => {
            if rho.len() != sigma {
                return Err(Error::Dimension(format!("expected {sigma} rest lengths")));
            }
            t.strings()
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let s = n.rows(d * e[1], d) - n.rows(d * e[0], d);
                    let sd = n_dot.rows(d * e[1], d) - n_dot.rows(d * e[0], d);
                    let n2 = s.norm_squared();
                    c.string_stiffness[i] * (1.0 - rho[i] / n2.sqrt()) + c.string_damping[i] * s.dot(&sd) / n2
                })
                .collect()
        }
    };
    let f = string_forces(t, n, &gamma, w);
    let lengths = bar_lengths(t, c);
    let beta = t.bar_count();
    let mut q = DVector::zeros(nc);
    for (i, e) in t.bars().iter().enumerate() {
        let b = n.rows(d * e[1], d) - n.rows(d * e[0], d);
        let bd = n_dot.rows(d * e[1], d) - n_dot.rows(d * e[0], d);
        let f1 = f.rows(d * e[0], d);
        let f2 = f.rows(d * e[1], d);
        let df = f2 - f1;
        let (j, l2) = (c.bar_inertias[i], lengths[i] * lengths[i]);
        let bdd = (&df * 0.5 - &b * (b.dot(&df) / (2.0 * l2)) - &b * (j / l2 * bd.norm_squared())) / j;
        q.rows_mut(d * i, d).copy_from(&bdd);
        let rdd = (f1 + f2) / c.bar_masses[i];
        q.rows_mut(d * (beta + i), d).copy_from(&rdd);
    }
    for (k, &p) in t.point_mass_nodes().iter().enumerate() {
        let a = f.rows(d * p, d) / c.point_masses[k];
        q.rows_mut(d * (2 * beta + k), d).copy_from(&a);
    }
    Ok(q)
}

/// Nonlinear nodal accelerations `n̈ = T⁻¹ [b̈; r̈; r̈_s]`.
pub fn nonlinear_oracle(
    t: &Topology,
    c: &Configuration,
    n: &DVector<f64>,
    n_dot: &DVector<f64>,
    input: StringInput,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    let q = nonlinear_generalized_accelerations(t, c, n, n_dot, input, w)?;
    Ok(t.transform_inverse_transpose().transpose() * q)
}

/// Linear accelerations `M₁⁻¹(−K₁ ñ − D₁ ñ̇ + B₁ γ̃ + P₁ w̃)` as matrices
/// `(−M⁻¹K, −M⁻¹D, M⁻¹B, M⁻¹P)`.
pub fn acceleration_jacobians(
    m: &Class1Model,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let mi = inverse(&m.mass)?;
    Ok((-(&mi * &m.stiffness), -(&mi * &m.damping), &mi * &m.input, &mi * &m.forcing))
}
