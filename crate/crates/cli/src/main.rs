use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use tenseco::bounds::{prestress_sweep, sweep_csv as bounds_csv, BoundKind};
use tenseco::codesign::{extremize, verify_solution, Target};
use tenseco::linalg::{max_abs, min_eig, nullspace};
use tenseco::model::{matrix_to_rows, Metadata, Model, ModelSpec, ProblemSpec, SolutionFile};
use tenseco::reduction::expected_mode_count;
use tenseco::sweep::{run_sweep, sweep_csv, SweepConfig};

/// Exit code for a design that fails posterior verification.
const VERIFY_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "tenseco", version, about = "Tensegrity linearization, reduction and LMI co-design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the class-1 linear model (mass, damping, stiffness, forcing, input).
    Linearize {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the minimal-coordinate model and its mode counts.
    Reduce {
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bound a controlled loop across prestress scales (CSV).
    Bounds {
        model: PathBuf,
        /// design problem supplying noise, precisions and limits for synthesis
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, default_value = "covariance")]
        kind: String,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        prestress_scales: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extremize one design scalar and verify the result.
    Codesign {
        model: PathBuf,
        problem: PathBuf,
        #[arg(long, default_value = "budget")]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a grid of co-design problems; writes `sweep.csv` into the output directory.
    Sweep {
        model: PathBuf,
        sweep: PathBuf,
        /// base design problem the grid scales
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// overrides the config and the TENSECO_THREADS default
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Re-check a solution file against its model and problem.
    Verify {
        model: PathBuf,
        problem: PathBuf,
        solution: PathBuf,
    },
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).map_err(tenseco::Error::Io).with_context(|| format!("reading {}", path.display()))
}

fn parse<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &Path) -> anyhow::Result<T> {
    serde_json::from_slice(bytes).map_err(tenseco::Error::Json).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(tenseco::Error::Io)?;
    }
    fs::write(path, text).map_err(tenseco::Error::Io).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(tenseco::Error::Json)?;
    text.push('\n');
    write(path, &text)
}

fn load_model(path: &Path) -> anyhow::Result<(Vec<u8>, Model)> {
    let bytes = read(path)?;
    let spec: ModelSpec = parse(&bytes, path)?;
    let model = spec.build().with_context(|| format!("building {}", path.display()))?;
    Ok((bytes, model))
}

type Rows = Vec<Vec<f64>>;

#[derive(Serialize)]
struct LinearizeFile {
    meta: Metadata,
    coordinates: usize,
    mass: Rows,
    damping: Rows,
    stiffness: Rows,
    forcing: Rows,
    input: Rows,
    balance_defect: f64,
}

#[derive(Serialize)]
struct ReduceFile {
    meta: Metadata,
    modes: usize,
    expected_modes: usize,
    coordinates: usize,
    constraints: usize,
    constraint_rank: usize,
    constraint_residual: f64,
    stiffness_min_eigenvalue: f64,
    mass: Rows,
    damping: Rows,
    stiffness: Rows,
    forcing: Rows,
    input: Rows,
    projector: Rows,
}

fn linearize(model: &Path, out: &Path) -> anyhow::Result<u8> {
    let (bytes, m) = load_model(model)?;
    let st = &m.structure;
    let (c1, _) = st.class1(&st.nominal.prestress)?;
    let defect = st.nominal_defect()?;
    log::info!(
        "class-1 model: {} coordinates, M {:?}, K {:?}, input {:?}",
        c1.mass.nrows(),
        c1.mass.shape(),
        c1.stiffness.shape(),
        c1.input.shape()
    );
    write_json(
        out,
        &LinearizeFile {
            meta: Metadata::for_inputs(&[b"linearize", &bytes]),
            coordinates: c1.mass.nrows(),
            mass: matrix_to_rows(&c1.mass),
            damping: matrix_to_rows(&c1.damping),
            stiffness: matrix_to_rows(&c1.stiffness),
            forcing: matrix_to_rows(&c1.forcing),
            input: matrix_to_rows(&c1.input),
            balance_defect: defect,
        },
    )?;
    Ok(0)
}

fn reduce(model: &Path, out: &Path) -> anyhow::Result<u8> {
    let (bytes, m) = load_model(model)?;
    let st = &m.structure;
    let mm = st.nominal_minimal()?;
    let t = &st.topology;
    let (_, rank) = nullspace(&(&st.constraints.a * &st.bar_modes().phi2));
    let expected = expected_mode_count(t.dimension(), t.bar_count(), t.point_mass_count(), rank);
    let residual = max_abs(&(&st.constraints.a * st.p_tot()));
    let lam = min_eig(&mm.stiffness);
    log::info!("{} modes ({} expected), constraint residual {residual:.3e}, λ_min(K) {lam:.3e}", mm.mass.nrows(), expected);
    write_json(
        out,
        &ReduceFile {
            meta: Metadata::for_inputs(&[b"reduce", &bytes]),
            modes: mm.mass.nrows(),
            expected_modes: expected,
            coordinates: t.coordinate_count(),
            constraints: st.constraints.len(),
            constraint_rank: rank,
            constraint_residual: residual,
            stiffness_min_eigenvalue: lam,
            mass: matrix_to_rows(&mm.mass),
            damping: matrix_to_rows(&mm.damping),
            stiffness: matrix_to_rows(&mm.stiffness),
            forcing: matrix_to_rows(&mm.forcing),
            input: matrix_to_rows(&mm.input),
            projector: matrix_to_rows(&mm.p_tot),
        },
    )?;
    Ok(0)
}

fn load_problem(path: &Path, m: &Model) -> anyhow::Result<(Vec<u8>, ProblemSpec, tenseco::codesign::CodesignProblem)> {
    let bytes = read(path)?;
    let spec: ProblemSpec = parse(&bytes, path)?;
    let p = spec.build(m.family()?).with_context(|| format!("building {}", path.display()))?;
    Ok((bytes, spec, p))
}

fn bounds(model: &Path, problem: &Path, kind: &str, scales: &[f64], out: &Path) -> anyhow::Result<u8> {
    let kind = BoundKind::parse(kind)?;
    let (mb, m) = load_model(model)?;
    let (pb, spec, p) = load_problem(problem, &m)?;
    let scale_text = scales.iter().map(|s| format!("{s:e}")).collect::<Vec<_>>().join(",");
    let points = prestress_sweep(&p, &m.alpha_nominal(), scales, kind, spec.architecture)?;
    for pt in &points {
        log::info!("scale {}: {} = {:.6e} ({})", pt.scale, kind.name(), pt.value(), pt.status);
    }
    let meta = Metadata::for_inputs(&[b"bounds", &mb, &pb, kind.name().as_bytes(), scale_text.as_bytes()]);
    write(out, &format!("{}\n{}", meta.comment_line(), bounds_csv(&points)))?;
    Ok(0)
}

fn codesign(model: &Path, problem: &Path, target: &str, out: &Path) -> anyhow::Result<u8> {
    let target = Target::parse(target)?;
    let (mb, m) = load_model(model)?;
    let (pb, spec, p) = load_problem(problem, &m)?;
    let s = extremize(&p, target, spec.architecture)?;
    let meta = Metadata::for_inputs(&[b"codesign", &mb, &pb, target.name().as_bytes()]);
    write_json(out, &SolutionFile::from_solution(&s, meta))?;
    let report = s.report.as_ref().expect("extremize verifies");
    log::info!("{} = {:.10e} after {} iterations ({:?})", target.name(), s.z, s.history.len(), s.status);
    if report.passed {
        Ok(0)
    } else {
        for c in report.failures() {
            log::error!("verification failed: {} = {:.6e} against {:.6e}", c.name, c.value, c.limit);
        }
        Ok(VERIFY_FAILED)
    }
}

fn sweep(model: &Path, sweep: &Path, problem: &Path, out: &Path, threads: Option<usize>) -> anyhow::Result<u8> {
    let (mb, m) = load_model(model)?;
    let (pb, _, p) = load_problem(problem, &m)?;
    let sb = read(sweep)?;
    let mut cfg: SweepConfig = parse(&sb, sweep)?;
    if threads.is_some() {
        cfg.threads = threads;
    }
    let cells = run_sweep(&p, &m.alpha_nominal(), &cfg)?;
    let meta = Metadata::for_inputs(&[b"sweep", &mb, &pb, &sb]);
    let path = out.join(cfg.output.as_deref().unwrap_or("sweep.csv"));
    write(&path, &format!("{}\n{}", meta.comment_line(), sweep_csv(&cfg, &cells)))?;
    log::info!("{} cells written to {}", cells.len(), path.display());
    Ok(0)
}

fn verify(model: &Path, problem: &Path, solution: &Path) -> anyhow::Result<u8> {
    let (_, m) = load_model(model)?;
    let (_, _, p) = load_problem(problem, &m)?;
    let sb = read(solution)?;
    let file: SolutionFile = parse(&sb, solution)?;
    let s = file.to_solution()?;
    let report = match verify_solution(&s, &p) {
        Ok(r) => r,
        Err(e) => {
            log::error!("verification failed: {e}");
            return Ok(VERIFY_FAILED);
        }
    };
    for c in &report.checks {
        log::info!("{}: {:.6e} against {:.6e} ({})", c.name, c.value, c.limit, if c.passed { "ok" } else { "FAIL" });
    }
    Ok(if report.passed { 0 } else { VERIFY_FAILED })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Linearize { model, out } => linearize(model, out),
        Command::Reduce { model, out } => reduce(model, out),
        Command::Bounds { model, problem, kind, prestress_scales, out } => {
            bounds(model, problem, kind, prestress_scales, out)
        }
        Command::Codesign { model, problem, target, out } => codesign(model, problem, target, out),
        Command::Sweep { model, sweep: s, problem, out, threads } => sweep(model, s, problem, out, *threads),
        Command::Verify { model, problem, solution } => verify(model, problem, solution),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            log::error!("{e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<tenseco::Error>()).map_or(1, |t| t.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
