//! Descriptor plant, closed loop and covariance analysis.
//!
//! Plant (`x = [η; η̇]`, α enters `A` affinely):
//!
//! ```text
//! E ẋ = A(α) x + B u + D_p w_p + D_a w_a
//! y = C_y x,   z = C_z x + D_s w_s
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_matrix, blkdiag, inverse, lyapunov, spectral_abscissa, sym};
use crate::reduction::MinimalModel;
use crate::structure::Structure;

/// `M(α) = base + Σ α_i coeffs_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineMatrixFamily {
    pub base: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl AffineMatrixFamily {
    pub fn constant(m: DMatrix<f64>) -> Self {
        AffineMatrixFamily { base: m, coeffs: Vec::new() }
    }

    pub fn new(base: DMatrix<f64>, coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        if coeffs.iter().any(|c| c.shape() != base.shape()) {
            return Err(Error::Dimension("affine family coefficients differ in shape".into()));
        }
        Ok(AffineMatrixFamily { base, coeffs })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.base.shape()
    }

    pub fn parameter_count(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, alpha: &[f64]) -> DMatrix<f64> {
        let mut m = self.base.clone();
        for (c, a) in self.coeffs.iter().zip(alpha) {
            m += c * *a;
        }
        m
    }

}

/// Output and measurement selection for the descriptor plant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DescriptorOptions {
    /// physical nodes whose positions form `y`
    pub output_nodes: Vec<usize>,
    /// physical nodes whose positions (and velocities) form `z`
    pub measured_nodes: Vec<usize>,
    pub measure_velocity: bool,
    /// physical nodes receiving the disturbance `w_p`
    pub disturbance_nodes: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DescriptorSystem {
    pub e: AffineMatrixFamily,
    pub a: AffineMatrixFamily,
    pub b: DMatrix<f64>,
    pub d_p: AffineMatrixFamily,
    pub d_a: AffineMatrixFamily,
    pub c_y: AffineMatrixFamily,
    pub c_z: DMatrix<f64>,
    pub d_s: DMatrix<f64>,
}

/// Descriptor plant evaluated at one parameter value.
#[derive(Clone, Debug)]
pub struct PlantMatrices {
    pub e: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d_p: DMatrix<f64>,
    pub d_a: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub c_z: DMatrix<f64>,
    pub d_s: DMatrix<f64>,
}

impl DescriptorSystem {
    pub fn state_dim(&self) -> usize {
        self.a.shape().0
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.d_p.shape().1
    }

    pub fn output_dim(&self) -> usize {
        self.c_y.shape().0
    }

    pub fn measurement_dim(&self) -> usize {
        self.c_z.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        [&self.e, &self.a, &self.d_p, &self.d_a, &self.c_y]
            .iter()
            .map(|f| f.parameter_count())
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        let p = self.parameter_count();
        let checks = [
            ("E", self.e.shape(), (n, n)),
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, m)),
            ("D_p", self.d_p.shape(), (n, self.disturbance_dim())),
            ("D_a", self.d_a.shape(), (n, m)),
            ("C_y", self.c_y.shape(), (self.output_dim(), n)),
            ("C_z", self.c_z.shape(), (self.measurement_dim(), n)),
            ("D_s", self.d_s.shape(), (self.measurement_dim(), self.measurement_dim())),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        for (name, f) in [("E", &self.e), ("A", &self.a), ("D_p", &self.d_p), ("D_a", &self.d_a), ("C_y", &self.c_y)] {
            if f.parameter_count() != 0 && f.parameter_count() != p {
                return Err(Error::Dimension(format!("{name} has {} parameters, expected {p}", f.parameter_count())));
            }
        }
        Ok(())
    }

    pub fn at(&self, alpha: &[f64]) -> PlantMatrices {
        PlantMatrices {
            e: self.e.eval(alpha),
            a: self.a.eval(alpha),
            b: self.b.clone(),
            d_p: self.d_p.eval(alpha),
            d_a: self.d_a.eval(alpha),
            c_y: self.c_y.eval(alpha),
            c_z: self.c_z.clone(),
            d_s: self.d_s.clone(),
        }
    }
}

fn selection_blocks(
    structure: &Structure,
    mm: &MinimalModel,
    opts: &DescriptorOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let nm = mm.p_tot.ncols();
    let zero = |r: usize| DMatrix::<f64>::zeros(r, nm);
    let out = structure.node_selector(&opts.output_nodes)? * &mm.p_tot;
    let c_y = block_matrix(&[vec![&out, &zero(out.nrows())]]);
    let meas = structure.node_selector(&opts.measured_nodes)? * &mm.p_tot;
    let c_z = if opts.measure_velocity {
        block_matrix(&[
            vec![&meas, &zero(meas.nrows())],
            vec![&zero(meas.nrows()), &meas],
        ])
    } else {
        block_matrix(&[vec![&meas, &zero(meas.nrows())]])
    };
    let dist = &mm.forcing * structure.node_selector(&opts.disturbance_nodes)?.transpose();
    let d_p = block_matrix(&[vec![&DMatrix::zeros(nm, dist.ncols())], vec![&dist]]);
    Ok((c_y, c_z, d_p))
}

fn state_matrix(stiffness: &DMatrix<f64>, damping: &DMatrix<f64>) -> DMatrix<f64> {
    let n = stiffness.nrows();
    block_matrix(&[
        vec![&DMatrix::zeros(n, n), &DMatrix::identity(n, n)],
        vec![&(-stiffness), &(-damping)],
    ])
}

/// Plant at a single prestress, constant in α.
pub fn to_descriptor(structure: &Structure, mm: &MinimalModel, opts: &DescriptorOptions) -> Result<DescriptorSystem> {
    let nm = mm.p_tot.ncols();
    let e = blkdiag(&[&DMatrix::identity(nm, nm), &mm.mass]);
    let a = state_matrix(&mm.stiffness, &mm.damping);
    let b = block_matrix(&[vec![&DMatrix::zeros(nm, mm.input.ncols())], vec![&mm.input]]);
    let (c_y, c_z, d_p) = selection_blocks(structure, mm, opts)?;
    let l = c_z.nrows();
    let sys = DescriptorSystem {
        e: AffineMatrixFamily::constant(e),
        a: AffineMatrixFamily::constant(a),
        d_a: AffineMatrixFamily::constant(b.clone()),
        b,
        d_p: AffineMatrixFamily::constant(d_p),
        c_y: AffineMatrixFamily::constant(c_y),
        c_z,
        d_s: DMatrix::identity(l, l),
    };
    sys.validate()?;
    Ok(sys)
}

/// `K_k(α)` with prestress `γ̄ = S α` for the columns of `basis`.
///
/// Each coefficient is the exact difference `K_k(S e_j) − K_k(0)`; reactions
/// are linear in the prestress so the family is exact.
pub fn affine_stiffness(structure: &Structure, basis: &DMatrix<f64>) -> Result<AffineMatrixFamily> {
    let sigma = structure.string_count();
    if basis.nrows() != sigma {
        return Err(Error::Dimension(format!("prestress basis needs {sigma} rows")));
    }
    let k0 = structure.minimal(&vec![0.0; sigma])?.stiffness;
    let coeffs = (0..basis.ncols())
        .map(|j| {
            let g: Vec<f64> = basis.column(j).iter().copied().collect();
            Ok(structure.minimal(&g)?.stiffness - &k0)
        })
        .collect::<Result<Vec<_>>>()?;
    AffineMatrixFamily::new(k0, coeffs)
}

/// Plant whose stiffness follows the prestress `γ̄ = S α`.
pub fn descriptor_family(
    structure: &Structure,
    basis: &DMatrix<f64>,
    opts: &DescriptorOptions,
) -> Result<DescriptorSystem> {
    let mm = structure.nominal_minimal()?;
    let mut sys = to_descriptor(structure, &mm, opts)?;
    let kf = affine_stiffness(structure, basis)?;
    let base = state_matrix(&kf.base, &mm.damping);
    let zero = DMatrix::zeros(mm.damping.nrows(), mm.damping.ncols());
    let coeffs = kf.coeffs.iter().map(|k| state_matrix(k, &zero) - state_matrix(&zero, &zero)).collect();
    sys.a = AffineMatrixFamily::new(base, coeffs)?;
    sys.validate()?;
    Ok(sys)
}

/// White-noise intensities: process `W_p`, actuator `Γ_a⁻¹`, sensor `Γ_s⁻¹`.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    pub w_p: DMatrix<f64>,
    pub gamma_a: DVector<f64>,
    pub gamma_s: DVector<f64>,
}

impl NoiseModel {
    /// `W = blkdiag(W_p, Γ_a⁻¹, Γ_s⁻¹)`.
    pub fn intensity(&self) -> Result<DMatrix<f64>> {
        for g in self.gamma_a.iter().chain(self.gamma_s.iter()) {
            if !(*g > 0.0) {
                return Err(Error::Problem(format!("precisions must be positive, got {g}")));
            }
        }
        let ga = DMatrix::from_diagonal(&self.gamma_a.map(|g| 1.0 / g));
        let gs = DMatrix::from_diagonal(&self.gamma_s.map(|g| 1.0 / g));
        Ok(blkdiag(&[&self.w_p, &ga, &gs]))
    }
}

/// Dynamic output-feedback controller `ẋ_c = A_c x_c + B_c z`, `u = C_c x_c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    pub a_c: DMatrix<f64>,
    pub b_c: DMatrix<f64>,
    pub c_c: DMatrix<f64>,
}

/// `E ẋ = A x + B w`, `y = C x`, `u = M x`.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub e: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub m: DMatrix<f64>,
}

impl ClosedLoop {
    /// Plain system with identity `E` and no control channel.
    pub fn standard(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Self {
        let n = a.nrows();
        ClosedLoop { e: DMatrix::identity(n, n), a, b, c, m: DMatrix::zeros(0, n) }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// `(E⁻¹A, E⁻¹B)`.
    pub fn explicit(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let ei = inverse(&self.e).map_err(|_| Error::Singular("descriptor matrix E".into()))?;
        Ok((&ei * &self.a, &ei * &self.b))
    }

    /// Scale the disturbance channels by `W^{1/2}`.
    pub fn weighted(&self, w: &DMatrix<f64>) -> ClosedLoop {
        let mut out = self.clone();
        out.b = &self.b * crate::linalg::sqrt_psd(w);
        out
    }
}

pub fn assemble_closed_loop(p: &PlantMatrices, k: &Controller) -> Result<ClosedLoop> {
    let n = p.a.nrows();
    let nc = k.a_c.nrows();
    let (m, l, np) = (p.b.ncols(), p.c_z.nrows(), p.d_p.ncols());
    if k.a_c.shape() != (nc, nc) || k.b_c.shape() != (nc, l) || k.c_c.shape() != (m, nc) {
        return Err(Error::Dimension(format!(
            "controller shapes A_c {:?}, B_c {:?}, C_c {:?} do not fit the plant",
            k.a_c.shape(),
            k.b_c.shape(),
            k.c_c.shape()
        )));
    }
    let e = blkdiag(&[&p.e, &DMatrix::identity(nc, nc)]);
    let a = block_matrix(&[vec![&p.a, &(&p.b * &k.c_c)], vec![&(&k.b_c * &p.c_z), &k.a_c]]);
    let b = block_matrix(&[
        vec![&p.d_p, &p.d_a, &DMatrix::zeros(n, l)],
        vec![&DMatrix::zeros(nc, np), &DMatrix::zeros(nc, m), &(&k.b_c * &p.d_s)],
    ]);
    let c = block_matrix(&[vec![&p.c_y, &DMatrix::zeros(p.c_y.nrows(), nc)]]);
    let mm = block_matrix(&[vec![&DMatrix::zeros(m, n), &k.c_c]]);
    Ok(ClosedLoop { e, a, b, c, m: mm })
}

/// Static state feedback `u = −K x`; disturbances `[w_p; w_a]`.
pub fn state_feedback_loop(p: &PlantMatrices, gain: &DMatrix<f64>) -> Result<ClosedLoop> {
    if gain.shape() != (p.b.ncols(), p.a.nrows()) {
        return Err(Error::Dimension(format!("gain is {:?}", gain.shape())));
    }
    Ok(ClosedLoop {
        e: p.e.clone(),
        a: &p.a - &p.b * gain,
        b: block_matrix(&[vec![&p.d_p, &p.d_a]]),
        c: p.c_y.clone(),
        m: -gain,
    })
}

/// Steady-state covariances of a stable closed loop.
#[derive(Clone, Debug)]
pub struct CovarianceReport {
    pub state: DMatrix<f64>,
    pub output: DMatrix<f64>,
    pub input: DMatrix<f64>,
}

/// `(stable, spectral abscissa of E⁻¹A)`.
pub fn stability_check(cl: &ClosedLoop) -> Result<(bool, f64)> {
    let (a, _) = cl.explicit()?;
    let s = spectral_abscissa(&a);
    Ok((s < 0.0, s))
}

pub fn lyapunov_covariance(cl: &ClosedLoop, w: &DMatrix<f64>) -> Result<CovarianceReport> {
    let (a, b) = cl.explicit()?;
    let s = spectral_abscissa(&a);
    if !(s < 0.0) {
        return Err(Error::Unstable(s));
    }
    let x = lyapunov(&a, &(&b * w * b.transpose()))?;
    Ok(CovarianceReport {
        output: sym(&(&cl.c * &x * cl.c.transpose())),
        input: sym(&(&cl.m * &x * cl.m.transpose())),
        state: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_eval() {
        let f = AffineMatrixFamily::new(
            DMatrix::identity(2, 2),
            vec![DMatrix::from_element(2, 2, 1.0), DMatrix::from_element(2, 2, -2.0)],
        )
        .unwrap();
        let m = f.eval(&[0.5, 0.25]);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(0, 0)], 1.0);
    }

    #[test]
    fn scalar_covariance() {
        let cl = ClosedLoop::standard(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        let r = lyapunov_covariance(&cl, &DMatrix::identity(1, 1)).unwrap();
        assert!((r.output[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn unstable_loop_rejected() {
        let cl = ClosedLoop::standard(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        assert!(matches!(lyapunov_covariance(&cl, &DMatrix::identity(1, 1)), Err(Error::Unstable(_))));
    }
}
