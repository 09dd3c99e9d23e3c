//! LMI bounds on closed-loop performance and their direct oracles.
//!
//! All inequalities are written in E-conjugated form so `E⁻¹` never enters
//! an LMI.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codesign::{closed_loop_at, extremize, Architecture, CodesignProblem, Feedback, Target};
use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, inverse, lyapunov, max_eig, spectral_abscissa, sym};
use crate::sdp::{Expr, SdpProblem, SdpStatus, Sense, SolverSettings};
use crate::statespace::ClosedLoop;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// `tr E[yyᵀ]` under white noise of intensity `W`
    Covariance,
    /// `Γ_ep`: peak output for unit-energy input
    EnergyToPeak,
    /// `Γ_ie`: output energy for a unit impulse
    ImpulseToEnergy,
    /// `Γ_ee`: the H∞ norm
    EnergyToEnergy,
}

impl BoundKind {
    pub const ALL: [BoundKind; 4] = [
        BoundKind::Covariance,
        BoundKind::EnergyToPeak,
        BoundKind::ImpulseToEnergy,
        BoundKind::EnergyToEnergy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::Covariance => "covariance",
            BoundKind::EnergyToPeak => "energy-to-peak",
            BoundKind::ImpulseToEnergy => "impulse-to-energy",
            BoundKind::EnergyToEnergy => "energy-to-energy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "covariance" | "cov" => Ok(BoundKind::Covariance),
            "energy-to-peak" | "ep" => Ok(BoundKind::EnergyToPeak),
            "impulse-to-energy" | "ie" => Ok(BoundKind::ImpulseToEnergy),
            "energy-to-energy" | "ee" | "hinf" => Ok(BoundKind::EnergyToEnergy),
            _ => Err(Error::Input(format!("unknown bound kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundResult {
    pub kind: BoundKind,
    pub value: f64,
    /// `X` (covariance), `Q` (energy-to-peak) or `P = EᵀP̂E` (the others)
    pub certificate: DMatrix<f64>,
    pub status: SdpStatus,
    pub iterations: usize,
    pub max_violation: f64,
}

fn check_loop(cl: &ClosedLoop) -> Result<()> {
    let n = cl.state_dim();
    if cl.e.shape() != (n, n) || cl.b.nrows() != n || cl.c.ncols() != n {
        return Err(Error::Dimension("closed-loop matrices are inconsistent".into()));
    }
    let (a, _) = cl.explicit()?;
    let s = spectral_abscissa(&a);
    if !(s < 0.0) {
        return Err(Error::Unstable(s));
    }
    Ok(())
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// `A X Eᵀ + E X Aᵀ` for symmetric `X`.
fn lyap_expr(a: &DMatrix<f64>, e: &DMatrix<f64>, x: &Expr) -> Expr {
    let axe = x.lmul(a).rmul(&e.transpose());
    &axe + &axe.t()
}

pub fn bound_covariance(cl: &ClosedLoop, w: &DMatrix<f64>) -> Result<BoundResult> {
    check_loop(cl)?;
    let n = cl.state_dim();
    let mut p = SdpProblem::new();
    let xv = p.symmetric("X", n);
    let x = p.expr(xv);
    let bwb = &cl.b * w * cl.b.transpose();
    p.constrain("lyapunov", lyap_expr(&cl.a, &cl.e, &x) + Expr::constant(sym(&bwb)), Sense::Negative)?;
    p.constrain("positive", x.clone(), Sense::Positive)?;
    p.minimize(x.lmul(&cl.c).rmul(&cl.c.transpose()).trace());
    let s = p.solve(&settings())?;
    Ok(BoundResult {
        kind: BoundKind::Covariance,
        value: s.objective,
        certificate: s.value(xv),
        status: s.status,
        iterations: s.iterations,
        max_violation: s.max_violation,
    })
}

pub fn bound_energy_to_peak(cl: &ClosedLoop) -> Result<BoundResult> {
    check_loop(cl)?;
    let n = cl.state_dim();
    let ny = cl.c.nrows();
    let mut p = SdpProblem::new();
    let qv = p.symmetric("Q", n);
    let tv = p.scalar("t");
    let q = p.expr(qv);
    let t = p.expr(tv);
    let bb = &cl.b * cl.b.transpose();
    p.constrain("lyapunov", lyap_expr(&cl.a, &cl.e, &q) + Expr::constant(sym(&bb)), Sense::Negative)?;
    p.constrain("positive", q.clone(), Sense::Positive)?;
    p.constrain("peak", q.lmul(&cl.c).rmul(&cl.c.transpose()) - t.times_identity(ny), Sense::Negative)?;
    p.minimize(t);
    let s = p.solve(&settings())?;
    Ok(BoundResult {
        kind: BoundKind::EnergyToPeak,
        value: s.scalar(tv).max(0.0).sqrt(),
        certificate: s.value(qv),
        status: s.status,
        iterations: s.iterations,
        max_violation: s.max_violation,
    })
}

/// `Eᵀ P̂ A + Aᵀ P̂ E`.
fn dual_lyap_expr(a: &DMatrix<f64>, e: &DMatrix<f64>, p: &Expr) -> Expr {
    let epa = p.lmul(&e.transpose()).rmul(a);
    &epa + &epa.t()
}

pub fn bound_impulse_to_energy(cl: &ClosedLoop) -> Result<BoundResult> {
    check_loop(cl)?;
    let n = cl.state_dim();
    let nw = cl.b.ncols();
    let mut p = SdpProblem::new();
    let pv = p.symmetric("P", n);
    let tv = p.scalar("t");
    let ph = p.expr(pv);
    let t = p.expr(tv);
    let ctc = cl.c.transpose() * &cl.c;
    p.constrain("lyapunov", dual_lyap_expr(&cl.a, &cl.e, &ph) + Expr::constant(sym(&ctc)), Sense::Negative)?;
    p.constrain("positive", ph.clone(), Sense::Positive)?;
    p.constrain("energy", ph.lmul(&cl.b.transpose()).rmul(&cl.b) - t.times_identity(nw), Sense::Negative)?;
    p.minimize(t);
    let s = p.solve(&settings())?;
    let phat = s.value(pv);
    Ok(BoundResult {
        kind: BoundKind::ImpulseToEnergy,
        value: s.scalar(tv).max(0.0).sqrt(),
        certificate: cl.e.transpose() * phat * &cl.e,
        status: s.status,
        iterations: s.iterations,
        max_violation: s.max_violation,
    })
}

pub fn bound_energy_to_energy(cl: &ClosedLoop) -> Result<BoundResult> {
    check_loop(cl)?;
    let n = cl.state_dim();
    let nw = cl.b.ncols();
    let mut p = SdpProblem::new();
    let pv = p.symmetric("P", n);
    let tv = p.scalar("t");
    let ph = p.expr(pv);
    let t = p.expr(tv);
    let ctc = cl.c.transpose() * &cl.c;
    let tl = dual_lyap_expr(&cl.a, &cl.e, &ph) + Expr::constant(sym(&ctc));
    let tr = ph.lmul(&cl.e.transpose()).rmul(&cl.b);
    let blk = Expr::blocks(vec![vec![Some(tl), Some(tr.clone())], vec![Some(tr.t()), Some(-t.times_identity(nw))]]);
    p.constrain("bounded-real", blk, Sense::Negative)?;
    p.constrain("positive", ph.clone(), Sense::Positive)?;
    p.minimize(t);
    let s = p.solve(&settings())?;
    let phat = s.value(pv);
    Ok(BoundResult {
        kind: BoundKind::EnergyToEnergy,
        value: s.scalar(tv).max(0.0).sqrt(),
        certificate: cl.e.transpose() * phat * &cl.e,
        status: s.status,
        iterations: s.iterations,
        max_violation: s.max_violation,
    })
}

/// Any of the four bounds; `w` is only used by the covariance bound.
pub fn bound(cl: &ClosedLoop, kind: BoundKind, w: &DMatrix<f64>) -> Result<BoundResult> {
    match kind {
        BoundKind::Covariance => bound_covariance(cl, w),
        BoundKind::EnergyToPeak => bound_energy_to_peak(cl),
        BoundKind::ImpulseToEnergy => bound_impulse_to_energy(cl),
        BoundKind::EnergyToEnergy => bound_energy_to_energy(cl),
    }
}

/// `tr(C X Cᵀ)` with `X` from the Lyapunov equation.
pub fn covariance_oracle(cl: &ClosedLoop, w: &DMatrix<f64>) -> Result<f64> {
    let (a, b) = cl.explicit()?;
    let x = lyapunov(&a, &(&b * w * b.transpose()))?;
    Ok((&cl.c * x * cl.c.transpose()).trace())
}

/// `√λ_max(C P Cᵀ)` with `P` the controllability Gramian.
pub fn energy_to_peak_oracle(cl: &ClosedLoop) -> Result<f64> {
    let (a, b) = cl.explicit()?;
    let p = lyapunov(&a, &(&b * b.transpose()))?;
    Ok(max_eig(&(&cl.c * p * cl.c.transpose())).max(0.0).sqrt())
}

/// `√λ_max(Bᵀ L B)` with `L` the observability Gramian.
pub fn impulse_to_energy_oracle(cl: &ClosedLoop) -> Result<f64> {
    let (a, b) = cl.explicit()?;
    let l = lyapunov(&a.transpose(), &(cl.c.transpose() * &cl.c))?;
    Ok(max_eig(&(b.transpose() * l * b)).max(0.0).sqrt())
}

/// `σ_max(C (jωE − A)⁻¹ B)`.
pub fn frequency_gain(cl: &ClosedLoop, omega: f64) -> Result<f64> {
    let n = cl.state_dim();
    let mut m = DMatrix::<Complex<f64>>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = Complex::new(-cl.a[(i, j)], omega * cl.e[(i, j)]);
        }
    }
    let b = cl.b.map(|v| Complex::new(v, 0.0));
    let x = m.lu().solve(&b).ok_or_else(|| Error::Singular("resolvent".into()))?;
    let g = cl.c.map(|v| Complex::new(v, 0.0)) * x;
    Ok(g.singular_values().max())
}

/// Peak gain over `points` log-spaced frequencies (plus ω = 0), refined
/// locally around the best sample.
pub fn energy_to_energy_sweep(cl: &ClosedLoop, points: usize) -> Result<f64> {
    let (a, _) = cl.explicit()?;
    let mags: Vec<f64> = eigenvalues(&a).iter().map(|(re, im)| re.hypot(*im)).filter(|m| *m > 0.0).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min).min(1.0) * 1e-3;
    let hi = mags.iter().copied().fold(0.0, f64::max).max(1.0) * 1e3;
    let mut best = frequency_gain(cl, 0.0)?;
    let mut best_w = 0.0;
    let step = (hi / lo).ln() / (points.max(2) - 1) as f64;
    for k in 0..points {
        let w = lo * (step * k as f64).exp();
        let g = frequency_gain(cl, w)?;
        if g > best {
            best = g;
            best_w = w;
        }
    }
    if best_w > 0.0 {
        let (mut a0, mut b0) = (best_w * (-step).exp(), best_w * step.exp());
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b0 - phi * (b0 - a0);
            let d = a0 + phi * (b0 - a0);
            if frequency_gain(cl, c)? > frequency_gain(cl, d)? {
                b0 = d;
            } else {
                a0 = c;
            }
        }
        best = best.max(frequency_gain(cl, 0.5 * (a0 + b0))?);
    }
    Ok(best)
}

/// Plug a certificate back into its defining inequality; returns
/// `λ_max` of the (negative-definite) matrix.
pub fn certificate_residual(cl: &ClosedLoop, r: &BoundResult, w: &DMatrix<f64>) -> Result<f64> {
    let (e, a) = (&cl.e, &cl.a);
    let m = match r.kind {
        BoundKind::Covariance => {
            let x = &r.certificate;
            a * x * e.transpose() + e * x * a.transpose() + &cl.b * w * cl.b.transpose()
        }
        BoundKind::EnergyToPeak => {
            let q = &r.certificate;
            a * q * e.transpose() + e * q * a.transpose() + &cl.b * cl.b.transpose()
        }
        BoundKind::ImpulseToEnergy | BoundKind::EnergyToEnergy => {
            let ei = inverse(e)?;
            let ph = ei.transpose() * &r.certificate * &ei;
            let core = e.transpose() * &ph * a + a.transpose() * &ph * e + cl.c.transpose() * &cl.c;
            if r.kind == BoundKind::ImpulseToEnergy {
                core
            } else {
                let t = r.value * r.value;
                let off = e.transpose() * &ph * &cl.b;
                let nw = cl.b.ncols();
                crate::linalg::block_matrix(&[
                    vec![&core, &off],
                    vec![&off.transpose(), &(-DMatrix::identity(nw, nw) * t)],
                ])
            }
        }
    };
    Ok(max_eig(&m))
}

/// One row of a prestress sweep.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub scale: f64,
    pub bound: Option<BoundResult>,
    /// controller the bound was computed for
    pub feedback: Option<Feedback>,
    /// solver status of the bound, or the reason there is none
    pub status: String,
}

impl SweepPoint {
    pub fn value(&self) -> f64 {
        self.bound.as_ref().map_or(f64::NAN, |b| b.value)
    }

    pub fn iterations(&self) -> usize {
        self.bound.as_ref().map_or(0, |b| b.iterations)
    }
}

/// Bound of `kind` for the structure at `α = scale·nominal`, one row per
/// scale.
///
/// Each point first synthesizes a controller with the co-design iteration
/// (α frozen, precisions fixed at their caps, output bound minimized) and
/// then bounds that loop. A point that fails is recorded and the sweep goes
/// on.
pub fn prestress_sweep(
    problem: &CodesignProblem,
    nominal: &DVector<f64>,
    scales: &[f64],
    kind: BoundKind,
    arch: Architecture,
) -> Result<Vec<SweepPoint>> {
    Ok(prestress_sweep_kinds(problem, nominal, scales, &[kind], arch)?.remove(0))
}

/// Several bound kinds from one synthesis per scale; the outer vector
/// follows `kinds`.
pub fn prestress_sweep_kinds(
    problem: &CodesignProblem,
    nominal: &DVector<f64>,
    scales: &[f64],
    kinds: &[BoundKind],
    arch: Architecture,
) -> Result<Vec<Vec<SweepPoint>>> {
    if nominal.len() != problem.system.parameter_count() {
        return Err(Error::Dimension(format!(
            "nominal prestress has {} entries, the family {}",
            nominal.len(),
            problem.system.parameter_count()
        )));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Input(format!("prestress scale {s} is not positive")));
    }
    let rows: Vec<Vec<SweepPoint>> =
        scales.par_iter().map(|&scale| sweep_point(problem, nominal, scale, kinds, arch)).collect();
    Ok((0..kinds.len()).map(|k| rows.iter().map(|r| r[k].clone()).collect()).collect())
}

fn sweep_point(
    p: &CodesignProblem,
    nominal: &DVector<f64>,
    scale: f64,
    kinds: &[BoundKind],
    arch: Architecture,
) -> Vec<SweepPoint> {
    let mut q = p.clone();
    q.fixed_alpha = Some(nominal * scale);
    q.fixed_precisions = true;
    let failed = |status: String| SweepPoint { scale, bound: None, feedback: None, status };
    let sol = match extremize(&q, Target::OutputBound, arch) {
        Ok(s) => s,
        Err(e) => return kinds.iter().map(|_| failed(format!("synthesis failed: {e}"))).collect(),
    };
    let (cl, w) = match closed_loop_at(&q, &sol.point) {
        Ok(v) => v,
        Err(e) => return kinds.iter().map(|_| failed(format!("closed loop failed: {e}"))).collect(),
    };
    kinds
        .iter()
        .map(|&kind| match bound(&cl, kind, &w) {
            Ok(b) => SweepPoint {
                scale,
                status: format!("{:?}", b.status).to_lowercase(),
                bound: Some(b),
                feedback: Some(sol.point.feedback.clone()),
            },
            Err(e) => SweepPoint { feedback: Some(sol.point.feedback.clone()), ..failed(format!("bound failed: {e}")) },
        })
        .collect()
}

/// `scale,bound,status,iterations` rows with full-precision numbers.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("scale,bound,status,iterations\n");
    for pt in points {
        let status = pt.status.replace([',', '\n'], ";");
        out.push_str(&format!("{},{},{},{}\n", crate::model::full(pt.scale), crate::model::full(pt.value()), status, pt.iterations()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64) -> ClosedLoop {
        ClosedLoop::standard(
            DMatrix::from_element(1, 1, -a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
    }

    #[test]
    fn scalar_covariance_bound() {
        let r = bound_covariance(&scalar(1.0), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(r.status, SdpStatus::Optimal);
        assert!((r.value - 0.5).abs() < 1e-4, "{}", r.value);
    }

    #[test]
    fn scalar_gains() {
        let cl = scalar(0.5);
        let ep = bound_energy_to_peak(&cl).unwrap();
        let ie = bound_impulse_to_energy(&cl).unwrap();
        let ee = bound_energy_to_energy(&cl).unwrap();
        assert!((ep.value - 1.0).abs() < 1e-3, "{}", ep.value);
        assert!((ie.value - 1.0).abs() < 1e-3, "{}", ie.value);
        assert!((ee.value - 2.0).abs() < 1e-3, "{}", ee.value);
    }

    #[test]
    fn unstable_rejected() {
        assert!(bound_energy_to_peak(&scalar(-1.0)).is_err());
    }
}
