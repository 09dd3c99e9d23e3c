//! JSON descriptions of structures, design problems and solutions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codesign::{
    Architecture, CodesignProblem, CodesignSettings, CodesignSolution, CodesignStatus, DesignPoint, Feedback,
    IterateRecord, Prices, Target, VerificationReport,
};
use crate::error::{Error, Result};
use crate::statespace::{descriptor_family, Controller, DescriptorOptions, DescriptorSystem};
use crate::structure::Structure;
use crate::topology::{bar_lengths, build_connectivity, Configuration, Topology, TopologySpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A matrix given as rows, or a scalar meaning `s·I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            MatrixSpec::Rows(r) => rows_to_matrix(r),
        }
    }
}

/// A vector given in full, or a scalar repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Scalar(f64),
    Values(Vec<f64>),
}

impl VectorSpec {
    pub fn to_vector(&self, n: usize) -> Result<DVector<f64>> {
        match self {
            VectorSpec::Scalar(s) => Ok(DVector::from_element(n, *s)),
            VectorSpec::Values(v) if v.len() == n => Ok(DVector::from_column_slice(v)),
            VectorSpec::Values(v) => Err(Error::Input(format!("expected {n} values, got {}", v.len()))),
        }
    }
}

pub fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Input("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn default_one() -> VectorSpec {
    VectorSpec::Scalar(1.0)
}

fn default_zero() -> VectorSpec {
    VectorSpec::Scalar(0.0)
}

/// A structure with supports, physical data and the plant selection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub topology: TopologySpec,
    /// physical node positions
    pub nodes: Vec<Vec<f64>>,
    #[serde(default)]
    pub fixed_nodes: Vec<usize>,
    #[serde(default = "default_one")]
    pub bar_masses: VectorSpec,
    /// rotational inertia per bar; `m l²/12` when absent
    #[serde(default)]
    pub bar_inertias: Option<VectorSpec>,
    #[serde(default = "default_one")]
    pub point_masses: VectorSpec,
    #[serde(default = "default_one")]
    pub string_stiffness: VectorSpec,
    #[serde(default = "default_zero")]
    pub string_damping: VectorSpec,
    /// nominal force densities
    pub prestress: VectorSpec,
    /// applied load per physical node
    #[serde(default)]
    pub loads: Option<Vec<Vec<f64>>>,
    /// columns `S` with `γ̄ = S α`; the nominal prestress when absent
    #[serde(default)]
    pub prestress_basis: Option<Vec<Vec<f64>>>,
    pub descriptor: DescriptorOptions,
}

/// A built model.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub structure: Structure,
    pub basis: DMatrix<f64>,
}

fn flatten(nodes: &[Vec<f64>], d: usize, what: &str) -> Result<DVector<f64>> {
    if nodes.iter().any(|n| n.len() != d) {
        return Err(Error::Input(format!("every {what} entry needs {d} coordinates")));
    }
    Ok(DVector::from_iterator(nodes.len() * d, nodes.iter().flatten().copied()))
}

impl ModelSpec {
    pub fn topology(&self) -> Result<Topology> {
        build_connectivity(&self.topology)
    }

    pub fn configuration(&self, t: &Topology) -> Result<Configuration> {
        let d = t.dimension();
        if self.nodes.len() != t.physical_node_count() {
            return Err(Error::Input(format!(
                "{} node positions for {} nodes",
                self.nodes.len(),
                t.physical_node_count()
            )));
        }
        let positions = t.expand_nodes(&flatten(&self.nodes, d, "node")?)?;
        let nc = t.coordinate_count();
        let external_force = match &self.loads {
            Some(l) => t.expand_loads(&flatten(l, d, "load")?)?,
            None => DVector::zeros(nc),
        };
        let nb = t.bar_count();
        let ns = t.string_count();
        let mut c = Configuration {
            positions,
            velocities: DVector::zeros(nc),
            bar_masses: self.bar_masses.to_vector(nb)?.iter().copied().collect(),
            bar_inertias: Vec::new(),
            point_masses: self.point_masses.to_vector(t.point_mass_count())?.iter().copied().collect(),
            string_stiffness: self.string_stiffness.to_vector(ns)?.iter().copied().collect(),
            string_damping: self.string_damping.to_vector(ns)?.iter().copied().collect(),
            prestress: self.prestress.to_vector(ns)?.iter().copied().collect(),
            external_force,
        };
        c.bar_inertias = match &self.bar_inertias {
            Some(j) => j.to_vector(nb)?.iter().copied().collect(),
            None => bar_lengths(t, &c).iter().zip(&c.bar_masses).map(|(l, m)| m * l * l / 12.0).collect(),
        };
        Ok(c)
    }

    pub fn build(&self) -> Result<Model> {
        let t = self.topology()?;
        let c = self.configuration(&t)?;
        let ns = t.string_count();
        let basis = match &self.prestress_basis {
            Some(cols) => {
                if cols.iter().any(|c| c.len() != ns) {
                    return Err(Error::Input(format!("prestress basis columns need {ns} entries")));
                }
                DMatrix::from_fn(ns, cols.len(), |i, j| cols[j][i])
            }
            None => DMatrix::from_column_slice(ns, 1, &c.prestress),
        };
        let structure = Structure::new(t, c, self.fixed_nodes.clone())?;
        Ok(Model { spec: self.clone(), structure, basis })
    }
}

impl Model {
    /// Plant with stiffness affine in α.
    pub fn family(&self) -> Result<DescriptorSystem> {
        descriptor_family(&self.structure, &self.basis, &self.spec.descriptor)
    }

    /// Least-squares `α` reproducing the nominal prestress.
    pub fn alpha_nominal(&self) -> DVector<f64> {
        let g = DVector::from_column_slice(&self.structure.nominal.prestress);
        let svd = self.basis.clone().svd(true, true);
        svd.solve(&g, 1e-12).unwrap_or_else(|_| DVector::zeros(self.basis.ncols()))
    }
}

fn default_architecture() -> Architecture {
    Architecture::OutputFeedback
}

/// Limits, prices and options of a design problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemSpec {
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    pub w_p: MatrixSpec,
    pub y_bar: MatrixSpec,
    pub u_bar: MatrixSpec,
    pub budget: f64,
    pub gamma_a_cap: VectorSpec,
    #[serde(default = "default_one")]
    pub gamma_s_cap: VectorSpec,
    pub alpha_lower: VectorSpec,
    pub alpha_upper: VectorSpec,
    #[serde(default = "default_one")]
    pub price_actuator: VectorSpec,
    #[serde(default = "default_one")]
    pub price_sensor: VectorSpec,
    #[serde(default = "default_zero")]
    pub price_alpha: VectorSpec,
    #[serde(default)]
    pub fixed_alpha: Option<VectorSpec>,
    #[serde(default)]
    pub fixed_precisions: bool,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub convergence: Option<f64>,
    #[serde(default)]
    pub margin: Option<f64>,
}

impl ProblemSpec {
    pub fn build(&self, system: DescriptorSystem) -> Result<CodesignProblem> {
        let (np, m, p, l, na) = (
            system.disturbance_dim(),
            system.input_dim(),
            system.output_dim(),
            system.measurement_dim(),
            system.parameter_count(),
        );
        let mut settings = CodesignSettings::default();
        if let Some(k) = self.max_iterations {
            settings.max_iterations = k;
        }
        if let Some(c) = self.convergence {
            settings.convergence = c;
        }
        if let Some(mg) = self.margin {
            settings.margin = mg;
        }
        let problem = CodesignProblem {
            w_p: self.w_p.to_matrix(np)?,
            y_bar: self.y_bar.to_matrix(p)?,
            u_bar: self.u_bar.to_matrix(m)?,
            budget: self.budget,
            gamma_a_cap: self.gamma_a_cap.to_vector(m)?,
            gamma_s_cap: self.gamma_s_cap.to_vector(l)?,
            alpha_lower: self.alpha_lower.to_vector(na)?,
            alpha_upper: self.alpha_upper.to_vector(na)?,
            prices: Prices {
                actuator: self.price_actuator.to_vector(m)?,
                sensor: self.price_sensor.to_vector(l)?,
                alpha: self.price_alpha.to_vector(na)?,
            },
            fixed_alpha: self.fixed_alpha.as_ref().map(|a| a.to_vector(na)).transpose()?,
            fixed_precisions: self.fixed_precisions,
            settings,
            system,
        };
        problem.validate()?;
        Ok(problem)
    }
}

/// Tool version and a hash of the inputs that produced an output file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub config_hash: String,
}

impl Metadata {
    pub fn for_inputs(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let digest = h.finalize();
        Metadata {
            tool: format!("tenseco {TOOL_VERSION}"),
            config_hash: digest.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }

    pub fn comment_line(&self) -> String {
        format!("# {} config_sha256={}", self.tool, self.config_hash)
    }
}

/// Serialized design result; matrices are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionFile {
    pub meta: Metadata,
    pub architecture: Architecture,
    pub target: Target,
    pub status: CodesignStatus,
    /// stationary point of the convexified iteration; not a certified optimum
    pub z: f64,
    pub z0: f64,
    pub eps_conv: f64,
    pub alpha: Vec<f64>,
    pub gamma_a: Vec<f64>,
    pub gamma_s: Vec<f64>,
    #[serde(default)]
    pub a_c: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub b_c: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub c_c: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    pub q: Vec<Vec<f64>>,
    pub history: Vec<f64>,
    pub iterates: Vec<IterateRecord>,
    #[serde(default)]
    pub verification: Option<VerificationReport>,
}

impl SolutionFile {
    pub fn from_solution(s: &CodesignSolution, meta: Metadata) -> Self {
        let (a_c, b_c, c_c, k) = match &s.point.feedback {
            Feedback::Dynamic(c) => {
                (Some(matrix_to_rows(&c.a_c)), Some(matrix_to_rows(&c.b_c)), Some(matrix_to_rows(&c.c_c)), None)
            }
            Feedback::State(k) => (None, None, None, Some(matrix_to_rows(k))),
        };
        SolutionFile {
            meta,
            architecture: s.architecture,
            target: s.target,
            status: s.status,
            z: s.z,
            z0: s.z0,
            eps_conv: s.eps_conv,
            alpha: s.point.alpha.iter().copied().collect(),
            gamma_a: s.point.gamma_a.iter().copied().collect(),
            gamma_s: s.point.gamma_s.iter().copied().collect(),
            a_c,
            b_c,
            c_c,
            k,
            q: matrix_to_rows(&s.point.q),
            history: s.history.clone(),
            iterates: s.iterates.clone(),
            verification: s.report.clone(),
        }
    }

    pub fn to_solution(&self) -> Result<CodesignSolution> {
        let need = |m: &Option<Vec<Vec<f64>>>, name: &str| -> Result<DMatrix<f64>> {
            rows_to_matrix(m.as_ref().ok_or_else(|| Error::Input(format!("solution lacks {name}")))?)
        };
        let feedback = match self.architecture {
            Architecture::OutputFeedback => Feedback::Dynamic(Controller {
                a_c: need(&self.a_c, "a_c")?,
                b_c: need(&self.b_c, "b_c")?,
                c_c: need(&self.c_c, "c_c")?,
            }),
            Architecture::StateFeedback => Feedback::State(need(&self.k, "k")?),
        };
        Ok(CodesignSolution {
            architecture: self.architecture,
            target: self.target,
            point: DesignPoint {
                alpha: DVector::from_column_slice(&self.alpha),
                gamma_a: DVector::from_column_slice(&self.gamma_a),
                gamma_s: DVector::from_column_slice(&self.gamma_s),
                feedback,
                q: rows_to_matrix(&self.q)?,
            },
            z: self.z,
            z0: self.z0,
            eps_conv: self.eps_conv,
            history: self.history.clone(),
            iterates: self.iterates.clone(),
            status: self.status,
            report: self.verification.clone(),
        })
    }
}

/// Number in 17 significant digits.
pub fn full(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_spec_forms() {
        let s: MatrixSpec = serde_json::from_str("2.0").unwrap();
        assert_eq!(s.to_matrix(2).unwrap(), DMatrix::identity(2, 2) * 2.0);
        let r: MatrixSpec = serde_json::from_str("[[1,2],[3,4]]").unwrap();
        assert_eq!(r.to_matrix(0).unwrap()[(1, 0)], 3.0);
        let v: VectorSpec = serde_json::from_str("[1,2,3]").unwrap();
        assert!(v.to_vector(2).is_err());
    }

    #[test]
    fn metadata_hash_is_stable() {
        let a = Metadata::for_inputs(&[b"x", b"y"]);
        let b = Metadata::for_inputs(&[b"x", b"y"]);
        let c = Metadata::for_inputs(&[b"xy"]);
        assert_eq!(a, b);
        assert_ne!(a.config_hash, c.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }

    #[test]
    fn full_precision_round_trip() {
        let v = std::f64::consts::PI / 7.0;
        assert_eq!(full(v).parse::<f64>().unwrap(), v);
    }
}
