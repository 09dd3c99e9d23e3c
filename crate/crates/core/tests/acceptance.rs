//! End-to-end acceptance checks, one line per criterion.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use tenseco::bounds::{
    bound_covariance, bound_energy_to_energy, bound_energy_to_peak, bound_impulse_to_energy, prestress_sweep_kinds,
    BoundKind,
};
use tenseco::codesign::{
    closed_loop_at, extremize, price, Architecture, CodesignProblem, CodesignSolution, CodesignStatus, Feedback,
    Target,
};
use tenseco::desk;
use tenseco::linalg::{max_abs, nullspace};
use tenseco::linmodel::{acceleration_jacobians, assemble_class1, nonlinear_oracle, StringInput};
use tenseco::model::{Model, ProblemSpec};
use tenseco::reduction::expected_mode_count;
use tenseco::statespace::ClosedLoop;
use tenseco::structure::Structure;
use tenseco::sweep::{run_sweep, SweepAxis, SweepConfig, SweepParameter};
use tenseco::topology::{build_connectivity, Configuration, Topology, TopologySpec};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn build(model: tenseco::model::ModelSpec, problem: ProblemSpec) -> Result<(Model, CodesignProblem), String> {
    let m = model.build().map_err(e2s)?;
    let p = problem.build(m.family().map_err(e2s)?).map_err(e2s)?;
    Ok((m, p))
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Central differences of the nonlinear accelerations in each argument.
fn fd_jacobians(t: &Topology, c: &Configuration) -> [DMatrix<f64>; 4] {
    let n0 = c.positions.clone();
    let v0 = c.velocities.clone();
    let g0 = DVector::from_column_slice(&c.prestress);
    let w0 = c.external_force.clone();
    let f = |n: &DVector<f64>, v: &DVector<f64>, g: &DVector<f64>, w: &DVector<f64>| {
        nonlinear_oracle(t, c, n, v, StringInput::ForceDensity(g.as_slice()), w).expect("oracle")
    };
    let column = |which: usize, k: usize| -> DVector<f64> {
        let mut args = [n0.clone(), v0.clone(), g0.clone(), w0.clone()];
        let h = 1e-5 * args[which][k].abs().max(1.0);
        args[which][k] += h;
        let plus = f(&args[0], &args[1], &args[2], &args[3]);
        args[which][k] -= 2.0 * h;
        let minus = f(&args[0], &args[1], &args[2], &args[3]);
        (plus - minus) / (2.0 * h)
    };
    let mat = |which: usize, len: usize| {
        let cols: Vec<DVector<f64>> = (0..len).map(|k| column(which, k)).collect();
        DMatrix::from_columns(&cols)
    };
    [mat(0, n0.len()), mat(1, v0.len()), mat(2, g0.len()), mat(3, w0.len())]
}

fn linearization() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(1);
    let mut worst: f64 = 0.0;
    let count = 24;
    for i in 0..count {
        let s = common::random_class1(&mut r, i % 2 == 1);
        let m = assemble_class1(&s.topology, &s.config).map_err(e2s)?;
        let (k, d, b, p) = acceleration_jacobians(&m).map_err(e2s)?;
        let fd = fd_jacobians(&s.topology, &s.config);
        for (name, an, num) in [("K", &k, &fd[0]), ("D", &d, &fd[1]), ("B", &b, &fd[2]), ("P", &p, &fd[3])] {
            let rel = (an - num).norm() / an.norm().max(1.0);
            worst = worst.max(rel);
            ensure(rel < 1e-5, || format!("config {i}: {name} differs by relative {rel:.3e}"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{count} random configurations, worst relative error {worst:.2e}, {secs:.2} s"))
}

fn transform_identity() -> Outcome {
    let mut r = common::rng(2);
    let mut specs: Vec<TopologySpec> = (0..40)
        .map(|i| {
            let d = 2 + i % 2;
            common::class1_spec(&mut r, d, 2 + i % 3, 2 + i % 5, i % 3)
        })
        .collect();
    specs.extend((0..40).map(|i| common::jointed_spec(&mut r, 2 + i % 2, 4 + i % 4, 3 + i % 3, 2 + i % 4)));
    specs.extend([desk::arm(), desk::beam(), desk::hinged_bar()].into_iter().map(|m| m.topology));
    let mut worst: f64 = 0.0;
    for (i, s) in specs.iter().enumerate() {
        let t = build_connectivity(s).map_err(|e| format!("spec {i}: {e}"))?;
        let res = t.transform_identity_residual();
        let direct = max_abs(&(t.transform_inverse_transpose().transpose() * t.transform()
            - DMatrix::identity(t.coordinate_count(), t.coordinate_count())));
        worst = worst.max(res).max(direct);
    }
    ensure(worst < 1e-12, || format!("residual {worst:.3e}"))?;
    Ok(format!("{} topologies, worst residual {worst:.2e}", specs.len()))
}

fn minimal_order() -> Outcome {
    let m = desk::beam().build().map_err(e2s)?;
    let st = &m.structure;
    let mm = st.nominal_minimal().map_err(e2s)?;
    let k = &mm.stiffness;
    let asym = max_abs(&(k - k.transpose())) / max_abs(k);
    ensure(asym < 1e-12, || format!("K_k asymmetry {asym:.3e}"))?;
    let lam = common::sym_min_eig(k);
    ensure(lam > 0.0, || format!("λ_min(K_k) = {lam:.3e}"))?;
    let a_res = inf_norm(&(&st.constraints.a * st.p_tot()));
    let phi_res = inf_norm(&(st.bar_modes().phi1.transpose() * st.p_tot()));
    ensure(a_res < 1e-10 && phi_res < 1e-10, || format!("‖AΦ₂V‖ {a_res:.3e}, ‖Φ₁ᵀΦ₂V‖ {phi_res:.3e}"))?;
    let t = &st.topology;
    let (_, rank) = nullspace(&(&st.constraints.a * &st.bar_modes().phi2));
    let expected = expected_mode_count(t.dimension(), t.bar_count(), t.point_mass_count(), rank);
    ensure(mm.mass.nrows() == expected, || format!("beam has {} modes, formula {expected}", mm.mass.nrows()))?;

    let bar = build_connectivity(&TopologySpec {
        dimension: 3,
        node_count: 2,
        bars: vec![[0, 1]],
        strings: vec![],
        point_mass_nodes: vec![],
    })
    .map_err(e2s)?;
    let pos = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.3, 0.4, 1.2]);
    let free = Structure::new(bar.clone(), Configuration::uniform(&bar, pos, 1.0, 1.0, 1.0, 0.0, 0.0), vec![])
        .map_err(e2s)?;
    ensure(free.mode_count() == 5 && expected_mode_count(3, 1, 0, 0) == 5, || {
        format!("free 3D bar has {} modes", free.mode_count())
    })?;
    Ok(format!(
        "beam: {} modes, λ_min(K_k) {lam:.3e}, ‖AΦ₂V‖∞ {a_res:.1e}, ‖Φ₁ᵀΦ₂V‖∞ {phi_res:.1e}; free 3D bar: 5 modes",
        mm.mass.nrows()
    ))
}

fn scalar_loop(a: f64) -> ClosedLoop {
    let one = DMatrix::from_element(1, 1, 1.0);
    ClosedLoop::standard(DMatrix::from_element(1, 1, -a), one.clone(), one)
}

fn scalar_norms() -> Outcome {
    let start = Instant::now();
    let w = DMatrix::from_element(1, 1, 1.0);
    let cov = bound_covariance(&scalar_loop(1.0), &w).map_err(e2s)?.value;
    ensure((cov - 0.5).abs() < 1e-4, || format!("covariance {cov}"))?;
    let ep = bound_energy_to_peak(&scalar_loop(0.5)).map_err(e2s)?.value;
    let ie = bound_impulse_to_energy(&scalar_loop(0.5)).map_err(e2s)?.value;
    ensure((ep - 1.0).abs() < 1e-3 && (ie - 1.0).abs() < 1e-3, || format!("Γ_ep {ep}, Γ_ie {ie}"))?;
    for a in [0.5, 1.0, 2.0] {
        let ee = bound_energy_to_energy(&scalar_loop(a)).map_err(e2s)?.value;
        ensure((ee - 1.0 / a).abs() < 1e-3, || format!("Γ_ee at a = {a}: {ee}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("covariance {cov:.6}, Γ_ep {ep:.6}, Γ_ie {ie:.6}, Γ_ee = 1/a for a ∈ {{0.5, 1, 2}}"))
}

fn lmi_vs_oracle() -> Outcome {
    let mut r = common::rng(5);
    let mut worst = [0.0_f64; 4];
    let count = 10;
    for i in 0..count {
        let n = 4 + i % 5;
        let cl = common::random_stable_loop(&mut r, n, 1 + i % 3, 1 + i % 2, i % 3 == 2);
        let ei = cl.e.clone().try_inverse().ok_or("singular E")?;
        let (a, b) = (&ei * &cl.a, &ei * &cl.b);
        let w = DMatrix::identity(b.ncols(), b.ncols());
        let ctrl = common::kron_lyapunov(&a, &(&b * b.transpose()));
        let obs = common::kron_lyapunov(&a.transpose(), &(cl.c.transpose() * &cl.c));
        let oracles = [
            (&cl.c * &ctrl * cl.c.transpose()).trace(),
            common::sym_max_eig(&(&cl.c * &ctrl * cl.c.transpose())).sqrt(),
            common::sym_max_eig(&(b.transpose() * &obs * &b)).sqrt(),
            common::frequency_peak(&cl, 1000),
        ];
        let bounds = [
            bound_covariance(&cl, &w).map_err(e2s)?.value,
            bound_energy_to_peak(&cl).map_err(e2s)?.value,
            bound_impulse_to_energy(&cl).map_err(e2s)?.value,
            bound_energy_to_energy(&cl).map_err(e2s)?.value,
        ];
        for k in 0..4 {
            let rel = (bounds[k] - oracles[k]) / oracles[k];
            let tol = if k == 3 { 0.02 } else { 0.01 };
            worst[k] = worst[k].max(rel.abs());
            ensure(rel.abs() < tol, || {
                format!("loop {i} ({n} states): bound {k} = {:.6e} against oracle {:.6e}", bounds[k], oracles[k])
            })?;
            if k < 3 {
                ensure(rel > -1e-6, || format!("loop {i}: bound {k} below its oracle by {rel:.2e}"))?;
            }
        }
    }
    Ok(format!(
        "{count} loops, worst relative gaps: covariance {:.1e}, Γ_ep {:.1e}, Γ_ie {:.1e}, Γ_ee {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

fn prestress_trend() -> Outcome {
    let (m, p) = build(desk::arm(), desk::arm_problem())?;
    let scales = [1.0, 2.0, 5.0, 10.0];
    let kinds = [BoundKind::Covariance, BoundKind::EnergyToPeak, BoundKind::ImpulseToEnergy, BoundKind::EnergyToEnergy];
    let sweeps = prestress_sweep_kinds(&p, &m.alpha_nominal(), &scales, &kinds, Architecture::OutputFeedback)
        .map_err(e2s)?;
    let mut summary = Vec::new();
    for (kind, pts) in kinds.iter().zip(&sweeps) {
        for pt in pts {
            ensure(pt.status == "optimal", || format!("{} at scale {}: {}", kind.name(), pt.scale, pt.status))?;
        }
        for w in pts.windows(2) {
            ensure(w[1].value() <= w[0].value() + 1e-9, || {
                format!("{} rises from {:.9e} to {:.9e} at scale {}", kind.name(), w[0].value(), w[1].value(), w[1].scale)
            })?;
        }
        summary.push(format!("{} {:.3e} → {:.3e}", kind.name(), pts[0].value(), pts[pts.len() - 1].value()));
    }
    Ok(summary.join("; "))
}

fn history_checks(s: &CodesignSolution) -> Result<(), String> {
    let mut prev = s.z0;
    for (k, z) in s.history.iter().enumerate() {
        ensure(*z <= prev + 1e-9 * prev.abs(), || format!("iterate {} raises z̄ from {prev:.10e} to {z:.10e}", k + 1))?;
        prev = *z;
    }
    for (k, it) in s.iterates.iter().enumerate() {
        ensure(it.plug_back < 0.0, || format!("iterate {} plug-back λ_max = {:.3e}", k + 1, it.plug_back))?;
    }
    Ok(())
}

fn beam_solution() -> Result<(CodesignProblem, CodesignSolution), String> {
    let (_, p) = build(desk::beam(), desk::beam_problem())?;
    let s = extremize(&p, Target::Budget, Architecture::OutputFeedback).map_err(e2s)?;
    Ok((p, s))
}

fn convexifying_iteration(s: &CodesignSolution) -> Outcome {
    ensure(s.status == CodesignStatus::Stationary, || format!("ended {:?}", s.status))?;
    let n = s.history.len();
    ensure(n <= 50, || format!("{n} iterations"))?;
    history_checks(s)?;
    let last_step = if n >= 2 { (s.history[n - 1] - s.history[n - 2]).abs() } else { (s.history[0] - s.z0).abs() };
    ensure(last_step < s.eps_conv, || format!("final |Δz̄| = {last_step:.3e} against ε_conv {:.3e}", s.eps_conv))?;
    let worst = s.iterates.iter().map(|i| i.plug_back).fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "z̄ {:.6e} → {:.6e} in {n} iterations, final |Δz̄| {last_step:.2e} < ε_conv {:.2e}, max plug-back {worst:.2e}",
        s.z0, s.z, s.eps_conv
    ))
}

/// Lyapunov covariances against the bounds, computed without the library solver.
fn posterior_checks(p: &CodesignProblem, s: &CodesignSolution) -> Result<String, String> {
    let (cl, w) = closed_loop_at(p, &s.point).map_err(e2s)?;
    let ei = cl.e.clone().try_inverse().ok_or("singular E")?;
    let (a, b) = (&ei * &cl.a, &ei * &cl.b);
    let abscissa = tenseco::linalg::spectral_abscissa(&a);
    ensure(abscissa < 0.0, || format!("closed loop unstable ({abscissa:.3e})"))?;
    let x = common::kron_lyapunov(&a, &(&b * &w * b.transpose()));
    let y = &cl.c * &x * cl.c.transpose();
    let u = &cl.m * &x * cl.m.transpose();
    let ey = common::sym_max_eig(&(&y - &p.y_bar));
    let eu = common::sym_max_eig(&(&u - &p.u_bar));
    let ny = p.y_bar.norm();
    let nu = p.u_bar.norm();
    ensure(ey <= 1e-6 * ny, || format!("λ_max(Y − Ȳ) = {ey:.3e}"))?;
    ensure(eu <= 1e-6 * nu, || format!("λ_max(U − Ū) = {eu:.3e}"))?;
    let pr = price(&s.point.gamma_a, &s.point.gamma_s, &s.point.alpha, &p.prices);
    ensure(pr <= p.budget, || format!("price {pr:.6e} over budget {:.6e}", p.budget))?;
    if s.target == Target::Budget {
        ensure(pr <= s.z, || format!("price {pr:.10e} over the achieved budget {:.10e}", s.z))?;
    }
    let report = s.report.as_ref().ok_or("no verification report")?;
    ensure(report.passed, || format!("library verification failed: {:?}", report.failures()))?;
    Ok(format!("λ_max(Y−Ȳ) {ey:.2e}, λ_max(U−Ū) {eu:.2e}, price {pr:.6e}"))
}

fn posterior_verification(beam: &(CodesignProblem, CodesignSolution)) -> Outcome {
    let b = posterior_checks(&beam.0, &beam.1).map_err(|e| format!("beam: {e}"))?;
    let (_, p) = build(desk::arm(), desk::arm_problem())?;
    let s = extremize(&p, Target::Budget, Architecture::OutputFeedback).map_err(e2s)?;
    let a = posterior_checks(&p, &s).map_err(|e| format!("arm: {e}"))?;
    Ok(format!("beam: {b}; arm: {a}"))
}

fn budget_surface() -> Outcome {
    let start = Instant::now();
    let (m, p) = build(desk::arm(), desk::arm_problem())?;
    let values = vec![1.0, 2.0, 4.0];
    let cfg = SweepConfig {
        axes: vec![
            SweepAxis { parameter: SweepParameter::UbarScale, values: values.clone() },
            SweepAxis { parameter: SweepParameter::YbarScale, values: values.clone() },
        ],
        fixed: Default::default(),
        target: Target::Budget,
        architecture: Architecture::OutputFeedback,
        threads: None,
        output: None,
    };
    let cells = run_sweep(&p, &m.alpha_nominal(), &cfg).map_err(e2s)?;
    for c in &cells {
        ensure(c.status == "pass", || format!("cell {:?}: {}", c.values, c.status))?;
    }
    let z = |i: usize, j: usize| cells[3 * i + j].z();
    for i in 0..3 {
        for j in 0..3 {
            if i + 1 < 3 {
                ensure(z(i + 1, j) <= z(i, j) + 1e-9 * z(i, j), || format!("budget rises along Ū at ({i}, {j})"))?;
            }
            if j + 1 < 3 {
                ensure(z(i, j + 1) <= z(i, j) + 1e-9 * z(i, j), || format!("budget rises along Ȳ at ({i}, {j})"))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 900.0, || format!("took {secs:.0} s"))?;
    Ok(format!("budget {:.4e} at (1, 1) → {:.4e} at (4, 4), {secs:.1} s", z(0, 0), z(2, 2)))
}

fn state_feedback() -> Outcome {
    let problem = ProblemSpec { architecture: Architecture::StateFeedback, ..desk::arm_problem() };
    let (m, p) = build(desk::hinged_bar(), problem)?;
    let states = p.system.e.eval(m.alpha_nominal().as_slice()).nrows();
    ensure(states == 2, || format!("plant has {states} states"))?;
    let s = extremize(&p, Target::Budget, Architecture::StateFeedback).map_err(e2s)?;
    let Feedback::State(k) = &s.point.feedback else {
        return Err("no state-feedback gain".into());
    };
    history_checks(&s)?;
    let alpha = &s.point.alpha;
    let inside = alpha.iter().zip(p.alpha_lower.iter().zip(p.alpha_upper.iter())).all(|(a, (lo, hi))| lo <= a && a <= hi);
    ensure(inside, || format!("α = {alpha} leaves its box"))?;
    let checks = posterior_checks(&p, &s)?;
    Ok(format!("K = {:?}, α = {:?}, γ_a = {:?}; {checks}", k.as_slice(), alpha.as_slice(), s.point.gamma_a.as_slice()))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, out: Outcome| {
        match &out {
            Ok(detail) => println!("PASS [{n:>2}] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{n:>2}] {name}: {why}");
            }
        }
    };
    report(1, "linearization matches finite differences", linearization());
    report(2, "transform identity", transform_identity());
    report(3, "minimal-order structure", minimal_order());
    report(4, "scalar analytic norms", scalar_norms());
    report(5, "LMI bounds against oracles", lmi_vs_oracle());
    report(6, "prestress trend on the arm", prestress_trend());
    let beam = beam_solution();
    match &beam {
        Ok(b) => {
            report(7, "convexifying iteration on the beam", convexifying_iteration(&b.1));
            report(8, "posterior verification", posterior_verification(b));
        }
        Err(e) => {
            report(7, "convexifying iteration on the beam", Err(e.clone()));
            report(8, "posterior verification", Err(e.clone()));
        }
    }
    report(9, "budget surface trend", budget_surface());
    report(10, "state-feedback variant", state_feedback());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
