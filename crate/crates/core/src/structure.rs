//! A tensegrity with supports: topology, nominal configuration and the
//! constraint set, with reactions recomputed for every prestress.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linmodel::{assemble_class1, Class1Model};
use crate::reduction::{
    bar_mode_basis, constraint_reactions, project_model, total_projector, BarModeBasis, ConstraintSet,
    MinimalModel,
};
use crate::topology::{Configuration, Topology};

#[derive(Clone, Debug)]
pub struct Structure {
    pub topology: Topology,
    /// nominal configuration; its `external_force` is the applied load only
    pub nominal: Configuration,
    /// physical node indices held fixed
    pub fixed_nodes: Vec<usize>,
    pub constraints: ConstraintSet,
    modes: BarModeBasis,
    p_tot: DMatrix<f64>,
    v2_phi: DMatrix<f64>,
}

/// Balance defect above which a configuration is reported as off-equilibrium.
const DEFECT_TOLERANCE: f64 = 1e-8;

impl Structure {
    pub fn new(topology: Topology, nominal: Configuration, fixed_nodes: Vec<usize>) -> Result<Self> {
        nominal.validate(&topology)?;
        let constraints = ConstraintSet::for_structure(&topology, &nominal.positions, &fixed_nodes)?;
        let modes = bar_mode_basis(&topology, &nominal);
        let (p_tot, v2_phi) = total_projector(&constraints, &modes)?;
        if p_tot.ncols() == 0 {
            return Err(Error::DegenerateConstraints("no motion remains after reduction".into()));
        }
        Ok(Structure { topology, nominal, fixed_nodes, constraints, modes, p_tot, v2_phi })
    }

    pub fn string_count(&self) -> usize {
        self.topology.string_count()
    }

    pub fn mode_count(&self) -> usize {
        self.p_tot.ncols()
    }

    pub fn bar_modes(&self) -> &BarModeBasis {
        &self.modes
    }

    /// `P_tot = Φ₂ V₂φ`, fixed by geometry and supports.
    pub fn p_tot(&self) -> &DMatrix<f64> {
        &self.p_tot
    }

    pub fn v2_phi(&self) -> &DMatrix<f64> {
        &self.v2_phi
    }

    /// Configuration at prestress `gamma` with support and joint reactions
    /// folded into the external force, plus the remaining balance defect.
    pub fn configuration(&self, gamma: &[f64]) -> Result<(Configuration, f64)> {
        if gamma.len() != self.string_count() {
            return Err(Error::Dimension(format!(
                "expected {} force densities, got {}",
                self.string_count(),
                gamma.len()
            )));
        }
        let mut c = self.nominal.clone();
        c.prestress = gamma.to_vec();
        let (reaction, defect) = constraint_reactions(&self.topology, &c, &self.constraints)?;
        c.external_force += reaction;
        Ok((c, defect))
    }

    pub fn class1(&self, gamma: &[f64]) -> Result<(Class1Model, Configuration)> {
        let (c, defect) = self.configuration(gamma)?;
        let scale = 1.0 + gamma.iter().fold(0.0_f64, |a, g| a.max(g.abs()));
        if defect > DEFECT_TOLERANCE * scale {
            log::warn!("configuration is not an equilibrium (balance defect {defect:.3e})");
        }
        Ok((assemble_class1(&self.topology, &c)?, c))
    }

    pub fn minimal(&self, gamma: &[f64]) -> Result<MinimalModel> {
        let (m, _) = self.class1(gamma)?;
        Ok(project_model(&m, self.p_tot.clone(), self.v2_phi.clone()))
    }

    pub fn nominal_minimal(&self) -> Result<MinimalModel> {
        self.minimal(&self.nominal.prestress.clone())
    }

    /// Balance defect of the nominal configuration with reactions.
    pub fn nominal_defect(&self) -> Result<f64> {
        Ok(self.configuration(&self.nominal.prestress)?.1)
    }

    /// Node position coordinates (first copy of each physical node).
    pub fn node_selector(&self, physical: &[usize]) -> Result<DMatrix<f64>> {
        let d = self.topology.dimension();
        let nc = self.topology.coordinate_count();
        let mut s = DMatrix::zeros(d * physical.len(), nc);
        for (k, &p) in physical.iter().enumerate() {
            if p >= self.topology.physical_node_count() {
                return Err(Error::Topology(format!("node {p} does not exist")));
            }
            for j in 0..d {
                s[(d * k + j, d * p + j)] = 1.0;
            }
        }
        Ok(s)
    }

    /// Physical nodes that are not fixed.
    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.topology.physical_node_count()).filter(|p| !self.fixed_nodes.contains(p)).collect()
    }

    pub fn nominal_positions(&self) -> &DVector<f64> {
        &self.nominal.positions
    }
}
