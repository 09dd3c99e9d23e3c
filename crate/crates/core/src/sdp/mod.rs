//! Small semidefinite-programming layer: typed decision variables, affine
//! matrix expressions, strict LMIs realized with a margin, and a primal-dual
//! interior-point solver.

mod expr;
mod ipm;

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use expr::{Expr, Triplets};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, max_eig, sym};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarShape {
    Scalar,
    Vector(usize),
    Symmetric(usize),
    Matrix(usize, usize),
}

impl VarShape {
    fn dims(&self) -> (usize, usize) {
        match *self {
            VarShape::Scalar => (1, 1),
            VarShape::Vector(n) => (n, 1),
            VarShape::Symmetric(n) => (n, n),
            VarShape::Matrix(r, c) => (r, c),
        }
    }

    fn dof_count(&self) -> usize {
        match *self {
            VarShape::Symmetric(n) => n * (n + 1) / 2,
            _ => {
                let (r, c) = self.dims();
                r * c
            }
        }
    }
}

/// Handle to a declared decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
struct VarInfo {
    name: String,
    shape: VarShape,
    offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `F ≺ 0`
    Negative,
    /// `F ≻ 0`
    Positive,
}

#[derive(Clone, Debug)]
struct Constraint {
    name: String,
    expr: Expr,
    sense: Sense,
    margin: f64,
    elementwise: bool,
}

#[derive(Clone, Debug)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub gap_tolerance: f64,
    pub feasibility_tolerance: f64,
    pub infeasibility_tolerance: f64,
    pub step_fraction: f64,
    /// Relative gap and dual residual at which a stalled solve still
    /// counts as optimal.
    pub acceptable_gap: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 120,
            gap_tolerance: 1e-10,
            feasibility_tolerance: 1e-10,
            infeasibility_tolerance: 1e-8,
            step_fraction: 0.95,
            acceptable_gap: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    /// The dual side stalled; `x` is the best primal point seen and it
    /// satisfies every constraint, but optimality is not certified.
    Inaccurate,
    Infeasible,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `max_k λ_max(F_k) + ε_k/2` over all constraints, oriented so that
    /// `≤ 0` means every strict inequality holds with half its margin.
    pub max_violation: f64,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    vars: Vec<VarInfo>,
}

impl SdpSolution {
    pub fn value(&self, v: Var) -> DMatrix<f64> {
        read_var(&self.vars[v.0], &self.x)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    pub fn vector(&self, v: Var) -> DVector<f64> {
        self.value(v).column(0).into_owned()
    }
}

fn read_var(info: &VarInfo, x: &[f64]) -> DMatrix<f64> {
    let (r, c) = info.shape.dims();
    let mut m = DMatrix::zeros(r, c);
    match info.shape {
        VarShape::Symmetric(n) => {
            let mut k = info.offset;
            for j in 0..n {
                for i in 0..=j {
                    m[(i, j)] = x[k];
                    m[(j, i)] = x[k];
                    k += 1;
                }
            }
        }
        _ => {
            for j in 0..c {
                for i in 0..r {
                    m[(i, j)] = x[info.offset + i + j * r];
                }
            }
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    vars: Vec<VarInfo>,
    dof: usize,
    constraints: Vec<Constraint>,
    objective: Expr,
    margin: f64,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        SdpProblem {
            vars: Vec::new(),
            dof: 0,
            constraints: Vec::new(),
            objective: Expr::zeros(1, 1),
            margin: 1e-7,
        }
    }

    /// Relative strictness margin: each `F ≺ 0` becomes `F ⪯ −ε I` with
    /// `ε = margin · max(1, max|F_0|)`.
    pub fn set_margin(&mut self, margin: f64) {
        self.margin = margin;
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Absolute margin of the first constraint called `name`.
    pub fn margin_of(&self, name: &str) -> Option<f64> {
        self.constraints.iter().find(|c| c.name == name).map(|c| c.margin)
    }

    pub fn dof_count(&self) -> usize {
        self.dof
    }

    pub fn constraint_count(&self) -> usize {
        self.constraints.len()
    }

    fn declare(&mut self, name: &str, shape: VarShape) -> Var {
        let v = Var(self.vars.len());
        self.vars.push(VarInfo { name: name.to_string(), shape, offset: self.dof });
        self.dof += shape.dof_count();
        v
    }

    pub fn scalar(&mut self, name: &str) -> Var {
        self.declare(name, VarShape::Scalar)
    }

    pub fn vector(&mut self, name: &str, n: usize) -> Var {
        self.declare(name, VarShape::Vector(n))
    }

    pub fn symmetric(&mut self, name: &str, n: usize) -> Var {
        self.declare(name, VarShape::Symmetric(n))
    }

    pub fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Var {
        self.declare(name, VarShape::Matrix(rows, cols))
    }

    /// The variable as an affine expression.
    pub fn expr(&self, v: Var) -> Expr {
        let info = &self.vars[v.0];
        let (r, c) = info.shape.dims();
        let mut terms = BTreeMap::new();
        match info.shape {
            VarShape::Symmetric(n) => {
                let mut k = info.offset;
                for j in 0..n {
                    for i in 0..=j {
                        let t = if i == j { vec![(i, i, 1.0)] } else { vec![(i, j, 1.0), (j, i, 1.0)] };
                        terms.insert(k, t);
                        k += 1;
                    }
                }
            }
            _ => {
                for j in 0..c {
                    for i in 0..r {
                        terms.insert(info.offset + i + j * r, vec![(i, j, 1.0)]);
                    }
                }
            }
        }
        Expr::from_terms(r, c, terms)
    }

    pub fn minimize(&mut self, objective: Expr) {
        assert_eq!(objective.shape(), (1, 1), "objective must be scalar");
        self.objective = objective;
    }

    pub fn maximize(&mut self, objective: Expr) {
        self.minimize(-objective);
    }

    fn push(
        &mut self,
        name: &str,
        expr: Expr,
        sense: Sense,
        elementwise: bool,
        margin: Option<f64>,
    ) -> Result<()> {
        if !elementwise {
            let scale = max_abs(expr.constant_part()).max(1.0);
            if expr.asymmetry() > 1e-9 * scale {
                return Err(Error::Problem(format!("constraint '{name}' is not symmetric")));
            }
        }
        let margin = margin.unwrap_or(self.margin * max_abs(expr.constant_part()).max(1.0));
        self.constraints.push(Constraint { name: name.to_string(), expr, sense, margin, elementwise });
        Ok(())
    }

    /// Strict matrix inequality `expr ≺ 0` or `expr ≻ 0`.
    pub fn constrain(&mut self, name: &str, expr: Expr, sense: Sense) -> Result<()> {
        self.push(name, expr, sense, false, None)
    }

    /// Strict matrix inequality with an explicit absolute margin.
    pub fn constrain_with_margin(&mut self, name: &str, expr: Expr, sense: Sense, margin: f64) -> Result<()> {
        self.push(name, expr, sense, false, Some(margin))
    }

    /// Strict inequality on every entry of `expr`.
    pub fn constrain_entries(&mut self, name: &str, expr: Expr, sense: Sense) -> Result<()> {
        self.push(name, expr, sense, true, None)
    }

    /// Oriented matrix `±F − εI` for every scalar block, with its margin.
    fn oriented_blocks(&self) -> Vec<(String, Expr, f64)> {
        let mut out = Vec::new();
        for c in &self.constraints {
            let sign = match c.sense {
                Sense::Negative => -1.0,
                Sense::Positive => 1.0,
            };
            if c.elementwise {
                let (r, cc) = c.expr.shape();
                for j in 0..cc {
                    for i in 0..r {
                        let e = c.expr.entry(i, j).scale(sign);
                        out.push((format!("{}[{},{}]", c.name, i, j), e, c.margin));
                    }
                }
            } else {
                out.push((c.name.clone(), c.expr.scale(sign), c.margin));
            }
        }
        out
    }

    /// Per-constraint `λ_max(F) + ε/2` in the constraint's own orientation.
    pub fn violations(&self, x: &[f64]) -> Vec<(String, f64)> {
        self.constraints
            .iter()
            .map(|c| {
                let f = c.expr.eval(x);
                let lam = match (c.sense, c.elementwise) {
                    (Sense::Negative, false) => max_eig(&f),
                    (Sense::Positive, false) => max_eig(&(-f)),
                    (Sense::Negative, true) => f.max(),
                    (Sense::Positive, true) => -f.min(),
                };
                (c.name.clone(), lam + 0.5 * c.margin)
            })
            .collect()
    }

    pub fn solve(&self, settings: &SolverSettings) -> Result<SdpSolution> {
        let mut c = DVector::zeros(self.dof);
        for (&k, t) in self.objective.terms() {
            c[k] = t.iter().map(|e| e.2).sum();
        }
        let blocks: Vec<ipm::Block> = self
            .oriented_blocks()
            .into_iter()
            .map(|(_, e, eps)| {
                let n = e.nrows();
                let g0 = sym(e.constant_part()) - DMatrix::identity(n, n) * eps;
                let coeffs = e
                    .terms()
                    .iter()
                    .map(|(&k, t)| {
                        let mut upper: BTreeMap<(usize, usize), f64> = BTreeMap::new();
                        for &(r, cc, v) in t {
                            let key = if r <= cc { (r, cc) } else { (cc, r) };
                            let w = if r == cc { v } else { 0.5 * v };
                            *upper.entry(key).or_default() += w;
                        }
                        let trip: Triplets =
                            upper.into_iter().filter(|e| e.1 != 0.0).map(|((r, cc), v)| (r, cc, v)).collect();
                        (k, trip)
                    })
                    .filter(|(_, t)| !t.is_empty())
                    .collect();
                ipm::Block::new(g0, coeffs)
            })
            .collect();
        let out = ipm::solve(&c, &blocks, settings);
        let x: Vec<f64> = out.x.iter().copied().collect();
        let objective = self.objective.eval(&x)[(0, 0)];
        let max_violation =
            self.violations(&x).iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        let status = match out.status {
            ipm::Status::Converged if max_violation <= 0.0 => SdpStatus::Optimal,
            ipm::Status::Infeasible => SdpStatus::Infeasible,
            ipm::Status::Stalled | ipm::Status::MaxIterations | ipm::Status::Converged
                if out.primal_feasible && max_violation <= 0.0 =>
            {
                SdpStatus::Inaccurate
            }
            _ => SdpStatus::Unknown,
        };
        Ok(SdpSolution {
            status,
            x,
            objective,
            iterations: out.iterations,
            max_violation,
            relative_gap: out.relative_gap,
            primal_infeasibility: out.primal_infeasibility,
            dual_infeasibility: out.dual_infeasibility,
            vars: self.vars.clone(),
        })
    }

    /// Plain-text listing of variables, objective and constraint data.
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "dof {}", self.dof)?;
        for v in &self.vars {
            writeln!(w, "var {} {:?} offset {}", v.name, v.shape, v.offset)?;
        }
        writeln!(w, "objective constant {:.17e}", self.objective.constant_part()[(0, 0)])?;
        for (&k, t) in self.objective.terms() {
            let s: f64 = t.iter().map(|e| e.2).sum();
            writeln!(w, "objective {k} {s:.17e}")?;
        }
        for c in &self.constraints {
            let (r, cc) = c.expr.shape();
            writeln!(
                w,
                "constraint {} {:?}{} {}x{} margin {:.17e}",
                c.name,
                c.sense,
                if c.elementwise { " entries" } else { "" },
                r,
                cc,
                c.margin
            )?;
            let f0 = c.expr.constant_part();
            for j in 0..cc {
                for i in 0..r {
                    if f0[(i, j)] != 0.0 {
                        writeln!(w, "  const {i} {j} {:.17e}", f0[(i, j)])?;
                    }
                }
            }
            for (&k, t) in c.expr.terms() {
                for &(i, j, v) in t {
                    writeln!(w, "  coef {k} {i} {j} {v:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lp() {
        let mut p = SdpProblem::new();
        let x = p.scalar("x");
        let e = p.expr(x);
        p.constrain_entries("lower", &e - &Expr::scalar_constant(2.0), Sense::Positive).unwrap();
        p.minimize(e);
        let s = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.scalar(x) - 2.0).abs() < 1e-6, "{}", s.scalar(x));
    }

    #[test]
    fn lyapunov_lmi_matches_closed_form() {
        // min tr(X) s.t. aX + Xaᵀ + 1 ≺ 0 with a = -1 gives 0.5
        let mut p = SdpProblem::new();
        let x = p.symmetric("X", 1);
        let e = p.expr(x);
        let a = DMatrix::from_element(1, 1, -1.0);
        let lyap = e.lmul(&a) + e.rmul(&a.transpose()) + Expr::identity(1);
        p.constrain("lyap", lyap, Sense::Negative).unwrap();
        p.constrain("pos", e.clone(), Sense::Positive).unwrap();
        p.minimize(e.trace());
        let s = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.objective - 0.5).abs() < 1e-5);
    }

    #[test]
    fn matrix_norm_bound() {
        // min t s.t. [tI A; Aᵀ tI] ≻ 0 gives the spectral norm of A
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let mut p = SdpProblem::new();
        let t = p.scalar("t");
        let te = p.expr(t);
        let blk = Expr::blocks(vec![
            vec![Some(te.times_identity(2)), Some(Expr::constant(a.clone()))],
            vec![Some(Expr::constant(a.transpose())), Some(te.times_identity(3))],
        ]);
        p.constrain("norm", blk, Sense::Positive).unwrap();
        p.minimize(te);
        let s = p.solve(&SolverSettings::default()).unwrap();
        let norm = a.singular_values().max();
        assert_eq!(s.status, SdpStatus::Optimal);
        assert!((s.scalar(t) - norm).abs() < 1e-5 * norm);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = SdpProblem::new();
        let x = p.scalar("x");
        let e = p.expr(x);
        p.constrain_entries("a", e.clone() - Expr::scalar_constant(1.0), Sense::Positive).unwrap();
        p.constrain_entries("b", e.clone() + Expr::scalar_constant(1.0), Sense::Negative).unwrap();
        p.minimize(e);
        let s = p.solve(&SolverSettings::default()).unwrap();
        assert_eq!(s.status, SdpStatus::Infeasible);
    }
}
