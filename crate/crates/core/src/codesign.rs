//! Joint design of prestress, instrument precisions and controller.
//!
//! The closed-loop covariance inequality `A X Eᵀ + E X Aᵀ + B W Bᵀ ≺ 0` is
//! bilinear in the controller and `X`. It is rewritten with `Q = X⁻¹` and a
//! linearization point `G`, giving the convex block
//!
//! ```text
//! [ ⋆     B     A    E  ]
//! [ Bᵀ   −W⁻¹   0    0  ]  ≺ 0,   ⋆ = −(A−E)Gᵀ − G(A−E)ᵀ + G Q Gᵀ
//! [ Aᵀ    0    −Q    0  ]
//! [ Eᵀ    0     0   −Q  ]
//! ```
//!
//! which is a restriction of the original inequality for every `G`. The
//! iteration re-linearizes at `G = (A − E) Q⁻¹` after each solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{blkdiag, block_matrix, care, inverse, lyapunov, max_abs, max_eig, spectral_abscissa, sqrt_psd, sym};
use crate::sdp::{Expr, SdpProblem, SdpSolution, SdpStatus, Sense, SolverSettings, Var};
use crate::statespace::{
    assemble_closed_loop, lyapunov_covariance, state_feedback_loop, AffineMatrixFamily, ClosedLoop, Controller,
    DescriptorSystem, NoiseModel, PlantMatrices,
};

/// Price per unit precision and per unit structure parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Prices {
    pub actuator: DVector<f64>,
    pub sensor: DVector<f64>,
    pub alpha: DVector<f64>,
}

/// `p_aᵀγ_a + p_sᵀγ_s + p_αᵀα`; an empty `γ_s` (state feedback) drops the
/// sensor term.
pub fn price(gamma_a: &DVector<f64>, gamma_s: &DVector<f64>, alpha: &DVector<f64>, prices: &Prices) -> f64 {
    let sensor = if gamma_s.is_empty() { 0.0 } else { prices.sensor.dot(gamma_s) };
    prices.actuator.dot(gamma_a) + sensor + prices.alpha.dot(alpha)
}

/// The scalar being extremized; the other four limits stay fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// minimize the budget `$̄`
    Budget,
    /// minimize `z` with `Ū = z Ū_ref`
    InputBound,
    /// minimize `z` with `Ȳ = z Ȳ_ref`
    OutputBound,
    /// minimize a common upper limit `α_i < z`
    AlphaUpper,
    /// maximize a common lower limit `α_i > z`
    AlphaLower,
}

impl Target {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "budget" | "price" => Ok(Target::Budget),
            "input_bound" | "ubar" | "u" => Ok(Target::InputBound),
            "output_bound" | "ybar" | "y" => Ok(Target::OutputBound),
            "alpha_upper" => Ok(Target::AlphaUpper),
            "alpha_lower" => Ok(Target::AlphaLower),
            _ => Err(Error::Input(format!("unknown target '{s}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Target::Budget => "budget",
            Target::InputBound => "input_bound",
            Target::OutputBound => "output_bound",
            Target::AlphaUpper => "alpha_upper",
            Target::AlphaLower => "alpha_lower",
        }
    }

    pub fn maximizes(&self) -> bool {
        matches!(self, Target::AlphaLower)
    }
}

#[derive(Clone, Debug)]
pub struct CodesignSettings {
    pub max_iterations: usize,
    /// `ε_conv = convergence · |z̄₀|`
    pub convergence: f64,
    /// relative strictness margin of every LMI
    pub margin: f64,
    /// inflation of the initial Lyapunov solution
    pub inflation: f64,
    /// regularization added to weights in the initial LQG design
    pub regularization: f64,
    pub solver: SolverSettings,
}

impl Default for CodesignSettings {
    fn default() -> Self {
        CodesignSettings {
            max_iterations: 50,
            convergence: 1e-4,
            margin: 1e-7,
            inflation: 1.1,
            regularization: 1e-6,
            solver: SolverSettings::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CodesignProblem {
    pub system: DescriptorSystem,
    /// process-noise intensity, positive definite
    pub w_p: DMatrix<f64>,
    pub y_bar: DMatrix<f64>,
    pub u_bar: DMatrix<f64>,
    pub budget: f64,
    pub gamma_a_cap: DVector<f64>,
    pub gamma_s_cap: DVector<f64>,
    pub alpha_lower: DVector<f64>,
    pub alpha_upper: DVector<f64>,
    pub prices: Prices,
    /// hold α at this value instead of optimizing it
    pub fixed_alpha: Option<DVector<f64>>,
    /// hold the precisions at their caps
    pub fixed_precisions: bool,
    pub settings: CodesignSettings,
}

impl CodesignProblem {
    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        let s = &self.system;
        let (n_p, m, p, l, na) =
            (s.disturbance_dim(), s.input_dim(), s.output_dim(), s.measurement_dim(), s.parameter_count());
        let dims = [
            ("W_p", self.w_p.shape(), (n_p, n_p)),
            ("Ybar", self.y_bar.shape(), (p, p)),
            ("Ubar", self.u_bar.shape(), (m, m)),
            ("actuator caps", (self.gamma_a_cap.len(), 1), (m, 1)),
            ("sensor caps", (self.gamma_s_cap.len(), 1), (l, 1)),
            ("alpha lower", (self.alpha_lower.len(), 1), (na, 1)),
            ("alpha upper", (self.alpha_upper.len(), 1), (na, 1)),
            ("actuator prices", (self.prices.actuator.len(), 1), (m, 1)),
            ("sensor prices", (self.prices.sensor.len(), 1), (l, 1)),
            ("alpha prices", (self.prices.alpha.len(), 1), (na, 1)),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::Problem(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        if let Some(a) = &self.fixed_alpha {
            if a.len() != na {
                return Err(Error::Problem(format!("fixed alpha has {} entries, expected {na}", a.len())));
            }
        }
        for (name, mat) in [("W_p", &self.w_p), ("Ybar", &self.y_bar), ("Ubar", &self.u_bar)] {
            if mat.nrows() > 0 && crate::linalg::min_eig(&sym(mat)) <= 0.0 {
                return Err(Error::Problem(format!("{name} must be positive definite")));
            }
        }
        for (lo, hi) in self.alpha_lower.iter().zip(self.alpha_upper.iter()) {
            if !(lo < hi) {
                return Err(Error::Problem(format!("alpha box is empty: {lo} >= {hi}")));
            }
        }
        let positive = self.gamma_a_cap.iter().chain(self.gamma_s_cap.iter());
        if positive.clone().any(|v| !(*v > 0.0)) {
            return Err(Error::Problem("precision caps must be positive".into()));
        }
        let prices = self.prices.actuator.iter().chain(self.prices.sensor.iter()).chain(self.prices.alpha.iter());
        if prices.clone().any(|v| !(*v >= 0.0)) {
            return Err(Error::Problem("prices must be nonnegative".into()));
        }
        Ok(())
    }

    /// The problem with the target limit set to `z`.
    pub fn with_target_value(&self, target: Target, z: f64) -> CodesignProblem {
        let mut p = self.clone();
        match target {
            Target::Budget => p.budget = z,
            Target::InputBound => p.u_bar = &self.u_bar * z,
            Target::OutputBound => p.y_bar = &self.y_bar * z,
            Target::AlphaUpper => p.alpha_upper.fill(z),
            Target::AlphaLower => p.alpha_lower.fill(z),
        }
        p
    }

    fn alpha_start(&self) -> DVector<f64> {
        match &self.fixed_alpha {
            Some(a) => a.clone(),
            None => (&self.alpha_lower + &self.alpha_upper) * 0.5,
        }
    }
}

/// Which closed loop the LMIs describe.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// full-order dynamic output feedback
    #[default]
    OutputFeedback,
    /// `u = −K x` with the full state measured without noise
    StateFeedback,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Feedback {
    Dynamic(Controller),
    State(DMatrix<f64>),
}

/// Linearization point of the convexified inequality.
#[derive(Clone, Debug)]
pub struct ConvexifyState {
    pub g: DMatrix<f64>,
    pub k: usize,
}

/// A design point `δ`.
#[derive(Clone, Debug)]
pub struct DesignPoint {
    pub alpha: DVector<f64>,
    pub gamma_a: DVector<f64>,
    pub gamma_s: DVector<f64>,
    pub feedback: Feedback,
    pub q: DMatrix<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodesignStatus {
    /// `|Δz̄| < ε_conv`; a stationary point, not a certified optimum
    Stationary,
    MaxIterations,
    /// a later solve failed; the best earlier iterate is returned
    SolverFailure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterateRecord {
    pub z: f64,
    /// `λ_max` of the original (non-convexified) block at the iterate
    pub plug_back: f64,
    pub sdp_iterations: usize,
    pub max_violation: f64,
    pub relative_gap: f64,
    /// the subproblem solve met the optimality tolerances (otherwise only
    /// primal feasibility is known)
    pub certified: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Clone, Debug)]
pub struct CodesignSolution {
    pub architecture: Architecture,
    pub target: Target,
    pub point: DesignPoint,
    /// achieved extremum `z̄`
    pub z: f64,
    pub z0: f64,
    pub eps_conv: f64,
    /// SDP objective after each iteration
    pub history: Vec<f64>,
    pub iterates: Vec<IterateRecord>,
    pub status: CodesignStatus,
    pub report: Option<VerificationReport>,
}

impl CodesignSolution {
    pub fn alpha(&self) -> &DVector<f64> {
        &self.point.alpha
    }

    pub fn price(&self, prices: &Prices) -> f64 {
        price(&self.point.gamma_a, &self.point.gamma_s, &self.point.alpha, prices)
    }
}

/// Closed-loop matrices as expressions in the decision variables.
struct LoopExprs {
    a: Expr,
    e: Expr,
    b: Expr,
    w_inv: Expr,
    c: Expr,
    m: Expr,
}

struct Handles {
    alpha: Option<Var>,
    gamma_a: Option<Var>,
    gamma_s: Option<Var>,
    a_c: Option<Var>,
    b_c: Option<Var>,
    c_c: Option<Var>,
    k: Option<Var>,
    q: Var,
    z: Var,
    scaling: Scaling,
}

/// An assembled subproblem and where its variables live.
pub struct CodesignSdp {
    pub sdp: SdpProblem,
    handles: Handles,
    architecture: Architecture,
}

fn family_expr(f: &AffineMatrixFamily, alpha: &Expr) -> Expr {
    let mut e = Expr::constant(f.base.clone());
    for (i, c) in f.coeffs.iter().enumerate() {
        e = e + alpha.entry(i, 0).times_matrix(c);
    }
    e
}

fn zeros(r: usize, c: usize) -> Expr {
    Expr::zeros(r, c)
}

/// Constraints whose expression is constant are checked, not handed to the
/// solver.
fn add(p: &mut SdpProblem, name: &str, expr: Expr, sense: Sense, margin: Option<f64>, entries: bool) -> Result<()> {
    if expr.nrows() == 0 {
        return Ok(());
    }
    if expr.is_constant() {
        let v = expr.constant_part();
        let sign = if sense == Sense::Negative { 1.0 } else { -1.0 };
        let worst = if entries || v.nrows() == 0 {
            v.iter().map(|x| sign * x).fold(f64::NEG_INFINITY, f64::max)
        } else {
            max_eig(&(sym(v) * sign))
        };
        if worst >= 0.0 {
            return Err(Error::Problem(format!("constraint '{name}' is violated by the fixed data")));
        }
        return Ok(());
    }
    match (entries, margin) {
        (true, _) => p.constrain_entries(name, expr, sense),
        (false, Some(m)) => p.constrain_with_margin(name, expr, sense, m),
        (false, None) => p.constrain(name, expr, sense),
    }
}

/// Variable scales: each decision variable is `scale · (solver variable)`
/// so the solver sees quantities of order one.
#[derive(Clone, Debug)]
pub struct Scaling {
    alpha: DVector<f64>,
    gamma_a: DVector<f64>,
    gamma_s: DVector<f64>,
    a_c: f64,
    b_c: f64,
    c_c: f64,
    k: f64,
    /// `Q = D Q̂ D`
    q: DVector<f64>,
    z: f64,
}

fn magnitude(m: &DMatrix<f64>) -> f64 {
    let v = max_abs(m);
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

impl Scaling {
    pub fn unit(p: &CodesignProblem, arch: Architecture) -> Self {
        let s = &p.system;
        let nq = match arch {
            Architecture::OutputFeedback => 2 * s.state_dim(),
            Architecture::StateFeedback => s.state_dim(),
        };
        Scaling {
            alpha: DVector::from_element(s.parameter_count(), 1.0),
            gamma_a: DVector::from_element(s.input_dim(), 1.0),
            gamma_s: DVector::from_element(s.measurement_dim(), 1.0),
            a_c: 1.0,
            b_c: 1.0,
            c_c: 1.0,
            k: 1.0,
            q: DVector::from_element(nq, 1.0),
            z: 1.0,
        }
    }

    /// Scales taken from the box, the caps and a reference design point.
    pub fn from_point(p: &CodesignProblem, arch: Architecture, d: &DesignPoint, z0: f64) -> Self {
        let mut out = Scaling::unit(p, arch);
        for i in 0..out.alpha.len() {
            let v = p.alpha_lower[i].abs().max(p.alpha_upper[i].abs());
            out.alpha[i] = if v > 0.0 { v } else { 1.0 };
        }
        out.gamma_a = p.gamma_a_cap.clone();
        out.gamma_s = p.gamma_s_cap.clone();
        match &d.feedback {
            Feedback::Dynamic(c) => {
                out.a_c = magnitude(&c.a_c);
                out.b_c = magnitude(&c.b_c);
                out.c_c = magnitude(&c.c_c);
            }
            Feedback::State(k) => out.k = magnitude(k),
        }
        if d.q.nrows() == out.q.len() {
            out.q = d.q.diagonal().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        }
        out.z = if z0.abs() > 0.0 && z0.is_finite() { z0.abs() } else { 1.0 };
        out
    }
}

fn scaled_vector(e: Expr, s: &DVector<f64>) -> Expr {
    e.lmul(&DMatrix::from_diagonal(s))
}

fn declare(
    p: &CodesignProblem,
    arch: Architecture,
    sc: &Scaling,
    sdp: &mut SdpProblem,
) -> Result<(Handles, [Expr; 3])> {
    let s = &p.system;
    let (n, m, l, na) = (s.state_dim(), s.input_dim(), s.measurement_dim(), s.parameter_count());
    let (a_c, b_c, c_c, k) = match arch {
        Architecture::OutputFeedback => (
            Some(sdp.matrix("A_c", n, n)),
            Some(sdp.matrix("B_c", n, l)),
            Some(sdp.matrix("C_c", m, n)),
            None,
        ),
        Architecture::StateFeedback => (None, None, None, Some(sdp.matrix("K", m, n))),
    };
    let (alpha, alpha_e) = match &p.fixed_alpha {
        Some(a) => (None, Expr::constant(DMatrix::from_column_slice(na, 1, a.as_slice()))),
        None => {
            let v = sdp.vector("alpha", na);
            (Some(v), scaled_vector(sdp.expr(v), &sc.alpha))
        }
    };
    let (gamma_a, ga) = if p.fixed_precisions {
        (None, Expr::constant(DMatrix::from_column_slice(m, 1, p.gamma_a_cap.as_slice())))
    } else {
        let v = sdp.vector("gamma_a", m);
        (Some(v), scaled_vector(sdp.expr(v), &sc.gamma_a))
    };
    let (gamma_s, gs) = match arch {
        Architecture::StateFeedback => (None, Expr::zeros(0, 1)),
        Architecture::OutputFeedback if p.fixed_precisions => {
            (None, Expr::constant(DMatrix::from_column_slice(l, 1, p.gamma_s_cap.as_slice())))
        }
        Architecture::OutputFeedback => {
            let v = sdp.vector("gamma_s", l);
            (Some(v), scaled_vector(sdp.expr(v), &sc.gamma_s))
        }
    };
    let nq = match arch {
        Architecture::OutputFeedback => 2 * n,
        Architecture::StateFeedback => n,
    };
    let q = sdp.symmetric("Q", nq);
    let z = sdp.scalar("z");
    Ok((
        Handles { alpha, gamma_a, gamma_s, a_c, b_c, c_c, k, q, z, scaling: sc.clone() },
        [alpha_e, ga, gs],
    ))
}

impl Handles {
    fn a_c(&self, sdp: &SdpProblem) -> Expr {
        sdp.expr(self.a_c.unwrap()).scale(self.scaling.a_c)
    }

    fn b_c(&self, sdp: &SdpProblem) -> Expr {
        sdp.expr(self.b_c.unwrap()).scale(self.scaling.b_c)
    }

    fn c_c(&self, sdp: &SdpProblem) -> Expr {
        sdp.expr(self.c_c.unwrap()).scale(self.scaling.c_c)
    }

    fn k(&self, sdp: &SdpProblem) -> Expr {
        sdp.expr(self.k.unwrap()).scale(self.scaling.k)
    }

    fn q(&self, sdp: &SdpProblem) -> Expr {
        let d = DMatrix::from_diagonal(&self.scaling.q);
        sdp.expr(self.q).lmul(&d).rmul(&d)
    }

    fn z(&self, sdp: &SdpProblem) -> Expr {
        sdp.expr(self.z).scale(self.scaling.z)
    }
}

fn loop_exprs(p: &CodesignProblem, arch: Architecture, sdp: &SdpProblem, h: &Handles, alpha: &Expr, ga: &Expr, gs: &Expr) -> LoopExprs {
    let s = &p.system;
    let (n, m, l, np) = (s.state_dim(), s.input_dim(), s.measurement_dim(), s.disturbance_dim());
    let a = family_expr(&s.a, alpha);
    let e = family_expr(&s.e, alpha);
    let d_p = family_expr(&s.d_p, alpha);
    let d_a = family_expr(&s.d_a, alpha);
    let c_y = family_expr(&s.c_y, alpha);
    let w_p_inv = Expr::constant(sym(&inverse(&p.w_p).unwrap_or_else(|_| DMatrix::zeros(np, np))));
    match arch {
        Architecture::OutputFeedback => {
            let a_c = h.a_c(sdp);
            let b_c = h.b_c(sdp);
            let c_c = h.c_c(sdp);
            let p_ = c_y.nrows();
            LoopExprs {
                a: Expr::blocks(vec![
                    vec![Some(a), Some(c_c.lmul(&s.b))],
                    vec![Some(b_c.rmul(&s.c_z)), Some(a_c)],
                ]),
                e: Expr::blocks(vec![vec![Some(e), None], vec![None, Some(Expr::identity(n))]]),
                b: Expr::blocks(vec![
                    vec![Some(d_p), Some(d_a), Some(zeros(n, l))],
                    vec![Some(zeros(n, np)), Some(zeros(n, m)), Some(b_c.rmul(&s.d_s))],
                ]),
                w_inv: Expr::block_diag(vec![w_p_inv, ga.diag(), gs.diag()]),
                c: Expr::blocks(vec![vec![Some(c_y), Some(zeros(p_, n))]]),
                m: Expr::blocks(vec![vec![Some(zeros(m, n)), Some(c_c)]]),
            }
        }
        Architecture::StateFeedback => {
            let k = h.k(sdp);
            LoopExprs {
                a: a - k.lmul(&s.b),
                e,
                b: Expr::blocks(vec![vec![Some(d_p), Some(d_a)]]),
                w_inv: Expr::block_diag(vec![w_p_inv, ga.diag()]),
                c: c_y,
                m: -k,
            }
        }
    }
}

/// `(⋆)` block with linearization point `G`.
fn star(a_minus_e: &Expr, g: &DMatrix<f64>, q: &Expr) -> Expr {
    let t = a_minus_e.rmul(&g.transpose());
    -(&t + &t.t()) + q.lmul(g).rmul(&g.transpose())
}

fn big_block(lp: &LoopExprs, q: &Expr, g: &DMatrix<f64>) -> Expr {
    let a_minus_e = &lp.a - &lp.e;
    Expr::blocks(vec![
        vec![Some(star(&a_minus_e, g, q)), Some(lp.b.clone()), Some(lp.a.clone()), Some(lp.e.clone())],
        vec![Some(lp.b.t()), Some(-lp.w_inv.clone()), None, None],
        vec![Some(lp.a.t()), None, Some(-q.clone()), None],
        vec![Some(lp.e.t()), None, None, Some(-q.clone())],
    ])
}

fn build(
    p: &CodesignProblem,
    arch: Architecture,
    g: &ConvexifyState,
    target: Target,
    big_margin: Option<f64>,
    scaling: &Scaling,
) -> Result<CodesignSdp> {
    p.validate()?;
    let mut sdp = SdpProblem::new();
    sdp.set_margin(p.settings.margin);
    let (h, [alpha, ga, gs]) = declare(p, arch, scaling, &mut sdp)?;
    let mut lp = loop_exprs(p, arch, &sdp, &h, &alpha, &ga, &gs);
    if p.fixed_precisions {
        // W is constant: the congruence diag(I, W^½, I, I) turns the noise
        // block into −I so the caps do not set the margin's scale
        let w_inv = lp.w_inv.constant_part().clone();
        let half = sqrt_psd(&inverse(&sym(&w_inv))?);
        lp.b = lp.b.rmul(&half);
        lp.w_inv = Expr::identity(w_inv.nrows());
    }
    let q = h.q(&sdp);
    let z = h.z(&sdp);
    let nq = q.nrows();
    if g.g.shape() != (nq, nq) {
        return Err(Error::Dimension(format!("G is {:?}, expected {nq}×{nq}", g.g.shape())));
    }

    let cost = ga.lmul(&DMatrix::from_row_slice(1, p.prices.actuator.len(), p.prices.actuator.as_slice()))
        + alpha.lmul(&DMatrix::from_row_slice(1, p.prices.alpha.len(), p.prices.alpha.as_slice()))
        + if arch == Architecture::OutputFeedback {
            gs.lmul(&DMatrix::from_row_slice(1, p.prices.sensor.len(), p.prices.sensor.as_slice()))
        } else {
            Expr::zeros(1, 1)
        };
    let budget = if target == Target::Budget { z.clone() } else { Expr::scalar_constant(p.budget) };
    if !(p.fixed_precisions && p.fixed_alpha.is_some()) {
        add(&mut sdp, "price", cost - budget, Sense::Negative, None, true)?;
    }
    if !p.fixed_precisions {
        let cap = |v: &DVector<f64>| Expr::constant(DMatrix::from_column_slice(v.len(), 1, v.as_slice()));
        add(&mut sdp, "actuator caps", ga.clone() - cap(&p.gamma_a_cap), Sense::Negative, None, true)?;
        add(&mut sdp, "actuator precision", ga.clone(), Sense::Positive, None, true)?;
        if arch == Architecture::OutputFeedback {
            add(&mut sdp, "sensor caps", gs.clone() - cap(&p.gamma_s_cap), Sense::Negative, None, true)?;
            add(&mut sdp, "sensor precision", gs.clone(), Sense::Positive, None, true)?;
        }
    }
    if p.fixed_alpha.is_none() {
        let na = alpha.nrows();
        let ones = DMatrix::from_element(na, 1, 1.0);
        let upper = match target {
            Target::AlphaUpper => z.lmul(&ones),
            _ => Expr::constant(DMatrix::from_column_slice(na, 1, p.alpha_upper.as_slice())),
        };
        let lower = match target {
            Target::AlphaLower => z.lmul(&ones),
            _ => Expr::constant(DMatrix::from_column_slice(na, 1, p.alpha_lower.as_slice())),
        };
        add(&mut sdp, "alpha upper", alpha.clone() - upper, Sense::Negative, None, true)?;
        add(&mut sdp, "alpha lower", alpha.clone() - lower, Sense::Positive, None, true)?;
    }

    let u_bar = match target {
        Target::InputBound => z.times_matrix(&sym(&p.u_bar)),
        _ => Expr::constant(sym(&p.u_bar)),
    };
    let y_bar = match target {
        Target::OutputBound => z.times_matrix(&sym(&p.y_bar)),
        _ => Expr::constant(sym(&p.y_bar)),
    };
    if lp.m.nrows() > 0 {
        let blk = Expr::blocks(vec![vec![Some(u_bar), Some(lp.m.clone())], vec![Some(lp.m.t()), Some(q.clone())]]);
        add(&mut sdp, "input covariance", blk, Sense::Positive, None, false)?;
    }
    if lp.c.nrows() > 0 {
        let blk = Expr::blocks(vec![vec![Some(y_bar), Some(lp.c.clone())], vec![Some(lp.c.t()), Some(q.clone())]]);
        add(&mut sdp, "output covariance", blk, Sense::Positive, None, false)?;
    }
    add(&mut sdp, "stability", big_block(&lp, &q, &g.g), Sense::Negative, big_margin, false)?;

    if target.maximizes() {
        sdp.maximize(z);
    } else {
        sdp.minimize(z);
    }
    Ok(CodesignSdp { sdp, handles: h, architecture: arch })
}

/// Convexified output-feedback LMIs for a fixed linearization point.
pub fn build_theorem1_lmis(p: &CodesignProblem, g: &ConvexifyState, target: Target) -> Result<CodesignSdp> {
    build(p, Architecture::OutputFeedback, g, target, None, &Scaling::unit(p, Architecture::OutputFeedback))
}

/// Convexified state-feedback LMIs for a fixed linearization point.
pub fn build_state_feedback_lmis(p: &CodesignProblem, g: &ConvexifyState, target: Target) -> Result<CodesignSdp> {
    build(p, Architecture::StateFeedback, g, target, None, &Scaling::unit(p, Architecture::StateFeedback))
}

impl CodesignSdp {
    /// Design point and target value from a solver return.
    pub fn extract(&self, p: &CodesignProblem, s: &SdpSolution) -> (DesignPoint, f64) {
        let h = &self.handles;
        let sc = &h.scaling;
        let alpha = match (h.alpha, &p.fixed_alpha) {
            (Some(v), _) => s.vector(v).component_mul(&sc.alpha),
            (None, Some(a)) => a.clone(),
            (None, None) => DVector::zeros(0),
        };
        let gamma_a =
            h.gamma_a.map(|v| s.vector(v).component_mul(&sc.gamma_a)).unwrap_or_else(|| p.gamma_a_cap.clone());
        let gamma_s = match self.architecture {
            Architecture::StateFeedback => DVector::zeros(0),
            Architecture::OutputFeedback => h
                .gamma_s
                .map(|v| s.vector(v).component_mul(&sc.gamma_s))
                .unwrap_or_else(|| p.gamma_s_cap.clone()),
        };
        let feedback = match self.architecture {
            Architecture::OutputFeedback => Feedback::Dynamic(Controller {
                a_c: s.value(h.a_c.unwrap()) * sc.a_c,
                b_c: s.value(h.b_c.unwrap()) * sc.b_c,
                c_c: s.value(h.c_c.unwrap()) * sc.c_c,
            }),
            Architecture::StateFeedback => Feedback::State(s.value(h.k.unwrap()) * sc.k),
        };
        let d = DMatrix::from_diagonal(&sc.q);
        let q = sym(&(&d * s.value(h.q) * &d));
        (DesignPoint { alpha, gamma_a, gamma_s, feedback, q }, s.scalar(h.z) * sc.z)
    }
}

/// Numeric closed loop and `W⁻¹` at a design point.
pub fn closed_loop_at(p: &CodesignProblem, d: &DesignPoint) -> Result<(ClosedLoop, DMatrix<f64>)> {
    let plant = p.system.at(d.alpha.as_slice());
    match &d.feedback {
        Feedback::Dynamic(c) => {
            let noise = NoiseModel { w_p: p.w_p.clone(), gamma_a: d.gamma_a.clone(), gamma_s: d.gamma_s.clone() };
            Ok((assemble_closed_loop(&plant, c)?, noise.intensity()?))
        }
        Feedback::State(k) => {
            let noise = NoiseModel { w_p: p.w_p.clone(), gamma_a: d.gamma_a.clone(), gamma_s: DVector::zeros(0) };
            Ok((state_feedback_loop(&plant, k)?, noise.intensity()?))
        }
    }
}

/// `G = (A_cl − E_cl) Q⁻¹` at a design point.
pub fn convexify_update(p: &CodesignProblem, d: &DesignPoint, k: usize) -> Result<ConvexifyState> {
    let (cl, _) = closed_loop_at(p, d)?;
    let x = inverse(&d.q).map_err(|_| Error::Singular("Q".into()))?;
    Ok(ConvexifyState { g: (&cl.a - &cl.e) * x, k })
}

/// `(A_cl − E_cl − G Q) X (A_cl − E_cl − G Q)ᵀ`, the gap between the
/// convexified and the original top-left block.
pub fn convexifying_potential(cl: &ClosedLoop, q: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = inverse(q)?;
    let r = &cl.a - &cl.e - g * q;
    Ok(sym(&(&r * x * r.transpose())))
}

/// The original block with `−(A−E) Q⁻¹ (A−E)ᵀ` in the corner.
pub fn nonconvex_block(cl: &ClosedLoop, w_inv: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = inverse(q)?;
    let d = &cl.a - &cl.e;
    let corner = -(&d * x * d.transpose());
    let n = q.nrows();
    let nw = w_inv.nrows();
    let z = |r: usize, c: usize| DMatrix::zeros(r, c);
    Ok(sym(&block_matrix(&[
        vec![&corner, &cl.b, &cl.a, &cl.e],
        vec![&cl.b.transpose(), &(-w_inv), &z(nw, n), &z(nw, n)],
        vec![&cl.a.transpose(), &z(n, nw), &(-q), &z(n, n)],
        vec![&cl.e.transpose(), &z(n, nw), &z(n, n), &(-q)],
    ])))
}

/// `λ_max` of the original block at a design point (negative when the
/// point certifies the covariance bound).
pub fn plug_back(p: &CodesignProblem, d: &DesignPoint) -> Result<f64> {
    let (cl, w) = closed_loop_at(p, d)?;
    let w_inv = inverse(&w)?;
    Ok(max_eig(&nonconvex_block(&cl, &w_inv, &d.q)?))
}

/// Starting point: a regularized LQG design at the middle of the α box
/// with precisions at their caps, `X₀` from the closed-loop Lyapunov
/// equation inflated to leave slack.
pub fn initial_point(p: &CodesignProblem, arch: Architecture) -> Result<DesignPoint> {
    p.validate()?;
    let set = &p.settings;
    let alpha = p.alpha_start();
    let plant: PlantMatrices = p.system.at(alpha.as_slice());
    let ei = inverse(&plant.e)?;
    let a = &ei * &plant.a;
    let b = &ei * &plant.b;
    let n = a.nrows();
    let delta = set.regularization;
    let eye = |k: usize| DMatrix::<f64>::identity(k, k);
    let y_inv = inverse(&sym(&p.y_bar))?;
    let weight = sym(&(plant.c_y.transpose() * y_inv * &plant.c_y)) + eye(n) * delta;
    let r = sym(&inverse(&sym(&p.u_bar))?);
    let pr = care(&a, &b, &weight, &r)?;
    let gain = sym(&p.u_bar) * b.transpose() * pr;
    let gamma_a = p.gamma_a_cap.clone();
    let wa = DMatrix::from_diagonal(&gamma_a.map(|g| 1.0 / g));
    let feedback = match arch {
        Architecture::StateFeedback => Feedback::State(gain.clone()),
        Architecture::OutputFeedback => {
            let bw = &ei * block_matrix(&[vec![&plant.d_p, &plant.d_a]]);
            let ww = blkdiag(&[&p.w_p, &wa]);
            let proc = sym(&(&bw * ww * bw.transpose())) + eye(n) * delta;
            let v = sym(&(&plant.d_s * DMatrix::from_diagonal(&p.gamma_s_cap.map(|g| 1.0 / g)) * plant.d_s.transpose()));
            let sigma = care(&a.transpose(), &plant.c_z.transpose(), &proc, &v)?;
            let l = &sigma * plant.c_z.transpose() * inverse(&v)?;
            Feedback::Dynamic(Controller {
                a_c: &a - &b * &gain - &l * &plant.c_z,
                b_c: l,
                c_c: -gain.clone(),
            })
        }
    };
    let gamma_s = match arch {
        Architecture::OutputFeedback => p.gamma_s_cap.clone(),
        Architecture::StateFeedback => DVector::zeros(0),
    };
    let mut d = DesignPoint { alpha, gamma_a, gamma_s, feedback, q: DMatrix::zeros(0, 0) };
    let (cl, w) = closed_loop_at(p, &d)?;
    let (acl, bcl) = cl.explicit()?;
    let sa = spectral_abscissa(&acl);
    if !(sa < 0.0) {
        return Err(Error::InitialInfeasible(format!("initial controller does not stabilize (abscissa {sa:.3e})")));
    }
    let nx = acl.nrows();
    let rhs = sym(&(&bcl * &w * bcl.transpose()));
    let tau = delta * max_abs(&rhs).max(1.0);
    let x = lyapunov(&acl, &(rhs + DMatrix::identity(nx, nx) * tau))?;
    d.q = sym(&inverse(&(sym(&x) * set.inflation))?);
    Ok(d)
}

/// Value of the target scalar implied by a design point.
pub fn target_value(p: &CodesignProblem, d: &DesignPoint, target: Target) -> Result<f64> {
    let x = inverse(&d.q)?;
    let (cl, _) = closed_loop_at(p, d)?;
    let ratio = |cov: DMatrix<f64>, bound: &DMatrix<f64>| -> Result<f64> {
        let s = inverse(&sqrt_psd(&sym(bound)))?;
        Ok(max_eig(&sym(&(&s * cov * &s))))
    };
    Ok(match target {
        Target::Budget => price(&d.gamma_a, &d.gamma_s, &d.alpha, &p.prices),
        Target::InputBound => ratio(&cl.m * &x * cl.m.transpose(), &p.u_bar)?,
        Target::OutputBound => ratio(&cl.c * &x * cl.c.transpose(), &p.y_bar)?,
        Target::AlphaUpper => d.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Target::AlphaLower => d.alpha.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Iterate convexified solves from the initial point until the target
/// stops moving.
pub fn extremize(p: &CodesignProblem, target: Target, arch: Architecture) -> Result<CodesignSolution> {
    let init = initial_point(p, arch)?;
    extremize_from(p, target, arch, init)
}

pub fn extremize_from(
    p: &CodesignProblem,
    target: Target,
    arch: Architecture,
    init: DesignPoint,
) -> Result<CodesignSolution> {
    let set = &p.settings;
    let z0 = target_value(p, &init, target)?;
    let eps_conv = set.convergence * z0.abs().max(f64::MIN_POSITIVE);
    let mut g = convexify_update(p, &init, 0)?;
    let scaling = Scaling::from_point(p, arch, &init, z0);

    // fixed absolute margin on the stability block so earlier iterates stay
    // feasible for later subproblems
    let probe = build(p, arch, &g, target, None, &scaling)?;
    let big_margin = probe.sdp.margin_of("stability").unwrap_or(set.margin);

    let mut history = Vec::new();
    let mut iterates = Vec::new();
    let mut best: Option<(DesignPoint, f64)> = None;
    let mut prev = z0;
    let mut status = CodesignStatus::MaxIterations;
    for k in 1..=set.max_iterations {
        let sub = build(p, arch, &g, target, Some(big_margin), &scaling)?;
        let sol = sub.sdp.solve(&set.solver)?;
        if !matches!(sol.status, SdpStatus::Optimal | SdpStatus::Inaccurate) {
            if best.is_none() {
                return Err(Error::InitialInfeasible(format!(
                    "first convexified subproblem returned {:?} (violation {:.3e}, gap {:.3e})",
                    sol.status, sol.max_violation, sol.relative_gap
                )));
            }
            log::warn!("subproblem {k} returned {:?}; keeping iterate {}", sol.status, k - 1);
            status = CodesignStatus::SolverFailure;
            break;
        }
        let (point, z) = sub.extract(p, &sol);
        // the previous iterate is feasible for this subproblem, so a worse
        // value only reflects solver accuracy
        let worse = if target.maximizes() { z < prev } else { z > prev };
        if worse {
            log::debug!("iteration {k}: z = {z:.10e} does not improve on {prev:.10e}; stopping");
            if best.is_none() {
                best = Some((init.clone(), z0));
            }
            status = CodesignStatus::Stationary;
            break;
        }
        let pb = plug_back(p, &point)?;
        log::debug!("iteration {k}: z = {z:.10e}, plug-back {pb:.3e}");
        history.push(z);
        iterates.push(IterateRecord {
            z,
            plug_back: pb,
            sdp_iterations: sol.iterations,
            max_violation: sol.max_violation,
            relative_gap: sol.relative_gap,
            certified: sol.status == SdpStatus::Optimal,
        });
        g = convexify_update(p, &point, k)?;
        best = Some((point, z));
        if (z - prev).abs() < eps_conv {
            status = CodesignStatus::Stationary;
            break;
        }
        prev = z;
    }
    let (point, z) = best.expect("at least one iterate");
    let mut out = CodesignSolution {
        architecture: arch,
        target,
        point,
        z,
        z0,
        eps_conv,
        history,
        iterates,
        status,
        report: None,
    };
    out.report = Some(verify_solution(&out, p)?);
    Ok(out)
}

/// Posterior checks from the closed loop alone: stability, Lyapunov
/// covariances against the bounds, price, caps and box.
pub fn verify_solution(s: &CodesignSolution, p: &CodesignProblem) -> Result<VerificationReport> {
    let eff = p.with_target_value(s.target, s.z);
    let d = &s.point;
    let mut checks = Vec::new();
    let mut push = |name: &str, value: f64, limit: f64| {
        checks.push(Check { name: name.to_string(), value, limit, passed: value <= limit });
    };
    let positive = d.gamma_a.iter().chain(d.gamma_s.iter()).all(|g| *g > 0.0);
    push("precisions positive", if positive { 0.0 } else { 1.0 }, 0.0);
    if positive {
        let (cl, w) = closed_loop_at(&eff, d)?;
        let (acl, _) = cl.explicit()?;
        let sa = spectral_abscissa(&acl);
        push("stability", sa, 0.0);
        if sa < 0.0 {
            let cov = lyapunov_covariance(&cl, &w)?;
            let ny = eff.y_bar.norm();
            let nu = eff.u_bar.norm();
            push("output covariance", max_eig(&(&cov.output - &eff.y_bar)), 1e-6 * ny);
            if cl.m.nrows() > 0 {
                push("input covariance", max_eig(&(&cov.input - &eff.u_bar)), 1e-6 * nu);
            }
        }
    }
    let pr = price(&d.gamma_a, &d.gamma_s, &d.alpha, &p.prices);
    if !(p.fixed_alpha.is_some() && p.fixed_precisions) {
        push("price", pr, eff.budget);
    }
    let over = |v: &DVector<f64>, cap: &DVector<f64>| {
        v.iter().zip(cap.iter()).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
    };
    if !p.fixed_precisions {
        push("actuator caps", over(&d.gamma_a, &eff.gamma_a_cap), 0.0);
        if s.architecture == Architecture::OutputFeedback {
            push("sensor caps", over(&d.gamma_s, &eff.gamma_s_cap), 0.0);
        }
    }
    if p.fixed_alpha.is_none() && !d.alpha.is_empty() {
        push("alpha upper", over(&d.alpha, &eff.alpha_upper), 0.0);
        push("alpha lower", over(&eff.alpha_lower, &d.alpha), 0.0);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerificationReport { checks, passed })
}
