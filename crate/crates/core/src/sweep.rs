//! Grids of co-design runs over bound scales, budget and prestress.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codesign::{extremize, extremize_from, Architecture, CodesignProblem, CodesignSolution, Target};
use crate::error::{Error, Result};
use crate::model::full;

/// Environment variable read for the default worker count.
pub const THREADS_ENV: &str = "TENSECO_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// multiplies `Ū`
    UbarScale,
    /// multiplies `Ȳ`
    YbarScale,
    /// replaces the budget
    Budget,
    /// freezes `α` at this multiple of the nominal prestress
    PrestressScale,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::UbarScale => "ubar_scale",
            SweepParameter::YbarScale => "ybar_scale",
            SweepParameter::Budget => "budget",
            SweepParameter::PrestressScale => "prestress_scale",
        }
    }

    /// Larger values enlarge the feasible set for `target`.
    fn relaxes(&self, target: Target) -> bool {
        match self {
            SweepParameter::UbarScale => target != Target::InputBound,
            SweepParameter::YbarScale => target != Target::OutputBound,
            SweepParameter::Budget => target != Target::Budget,
            SweepParameter::PrestressScale => false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepAxis {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axes: Vec<SweepAxis>,
    /// parameters held at one value in every cell
    #[serde(default)]
    pub fixed: BTreeMap<SweepParameter, f64>,
    #[serde(default = "default_target")]
    pub target: Target,
    #[serde(default)]
    pub architecture: Architecture,
    /// worker count; falls back to `TENSECO_THREADS`, then to rayon's default
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_target() -> Target {
    Target::Budget
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Input("sweep has no axes".into()));
        }
        for ax in &self.axes {
            if ax.values.is_empty() {
                return Err(Error::Input(format!("axis {} has no values", ax.parameter.name())));
            }
            if let Some(v) = ax.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Input(format!("axis {} has non-positive value {v}", ax.parameter.name())));
            }
            if self.fixed.contains_key(&ax.parameter) {
                return Err(Error::Input(format!("{} is both an axis and fixed", ax.parameter.name())));
            }
        }
        for (i, a) in self.axes.iter().enumerate() {
            if self.axes[..i].iter().any(|b| b.parameter == a.parameter) {
                return Err(Error::Input(format!("axis {} appears twice", a.parameter.name())));
            }
        }
        if let Some((p, v)) = self.fixed.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Input(format!("fixed {} = {v} is not positive", p.name())));
        }
        if self.threads == Some(0) {
            return Err(Error::Input("threads must be positive".into()));
        }
        Ok(())
    }

    fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.values.len()).collect()
    }

    fn threads(&self) -> Result<Option<usize>> {
        if self.threads.is_some() {
            return Ok(self.threads);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(n) if n > 0 => Ok(Some(n)),
                _ => Err(Error::Input(format!("{THREADS_ENV}={v} is not a positive integer"))),
            },
            Err(_) => Ok(None),
        }
    }
}

/// Result of one grid cell.
#[derive(Clone, Debug)]
pub struct SweepCell {
    /// axis values in config order
    pub values: Vec<f64>,
    pub solution: Option<CodesignSolution>,
    /// `pass`, `verify_failed`, or the error that stopped the cell
    pub status: String,
}

impl SweepCell {
    pub fn z(&self) -> f64 {
        self.solution.as_ref().map_or(f64::NAN, |s| s.z)
    }

    fn sums(&self) -> [f64; 3] {
        match &self.solution {
            Some(s) => [s.point.gamma_a.sum(), s.point.gamma_s.sum(), s.point.alpha.sum()],
            None => [f64::NAN; 3],
        }
    }
}

/// The problem of one cell.
pub fn cell_problem(
    base: &CodesignProblem,
    nominal: &DVector<f64>,
    settings: impl IntoIterator<Item = (SweepParameter, f64)>,
) -> CodesignProblem {
    let mut p = base.clone();
    for (param, v) in settings {
        match param {
            SweepParameter::UbarScale => p.u_bar = &base.u_bar * v,
            SweepParameter::YbarScale => p.y_bar = &base.y_bar * v,
            SweepParameter::Budget => p.budget = v,
            SweepParameter::PrestressScale => p.fixed_alpha = Some(nominal * v),
        }
    }
    p
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = flat % shape[k];
        flat /= shape[k];
    }
    idx
}

fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (i, n)| acc * n + i)
}

/// Run every cell of the grid, row-major over the axes.
///
/// Cells are processed in wavefronts of equal index sum. Along an axis
/// whose values increase and relax the problem, a cell starts from the
/// better of its tighter neighbours' solutions (still feasible there), so
/// the optimum cannot get worse as the problem is relaxed; other cells
/// start cold. Results do not depend on the worker count.
pub fn run_sweep(base: &CodesignProblem, nominal: &DVector<f64>, cfg: &SweepConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    base.validate()?;
    let shape = cfg.shape();
    let total: usize = shape.iter().product();
    let warm_axes: Vec<bool> = cfg
        .axes
        .iter()
        .map(|a| a.parameter.relaxes(cfg.target) && a.values.windows(2).all(|w| w[0] < w[1]))
        .collect();
    let run = || -> Vec<SweepCell> {
        let mut cells: Vec<Option<SweepCell>> = vec![None; total];
        let max_level: usize = shape.iter().map(|n| n - 1).sum();
        for level in 0..=max_level {
            let todo: Vec<usize> = (0..total).filter(|&f| unravel(f, &shape).iter().sum::<usize>() == level).collect();
            let done: Vec<(usize, SweepCell)> = todo
                .par_iter()
                .map(|&f| {
                    let idx = unravel(f, &shape);
                    let warm = (0..shape.len())
                        .filter(|&k| warm_axes[k] && idx[k] > 0)
                        .filter_map(|k| {
                            let mut j = idx.clone();
                            j[k] -= 1;
                            cells[ravel(&j, &shape)].as_ref().and_then(|c| c.solution.as_ref())
                        })
                        .filter(|s| s.report.as_ref().is_some_and(|r| r.passed))
                        .min_by(|a, b| {
                            let (x, y) = if cfg.target.maximizes() { (b.z, a.z) } else { (a.z, b.z) };
                            x.total_cmp(&y)
                        });
                    (f, run_cell(base, nominal, cfg, &idx, warm))
                })
                .collect();
            for (f, c) in done {
                cells[f] = Some(c);
            }
        }
        cells.into_iter().map(|c| c.expect("every level visited")).collect()
    };
    match cfg.threads()? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

fn run_cell(
    base: &CodesignProblem,
    nominal: &DVector<f64>,
    cfg: &SweepConfig,
    idx: &[usize],
    warm: Option<&CodesignSolution>,
) -> SweepCell {
    let values: Vec<f64> = cfg.axes.iter().zip(idx).map(|(a, &i)| a.values[i]).collect();
    let settings = cfg
        .fixed
        .iter()
        .map(|(p, v)| (*p, *v))
        .chain(cfg.axes.iter().zip(&values).map(|(a, v)| (a.parameter, *v)));
    let p = cell_problem(base, nominal, settings);
    let run = match warm {
        Some(w) => extremize_from(&p, cfg.target, cfg.architecture, w.point.clone()),
        None => extremize(&p, cfg.target, cfg.architecture),
    };
    match run {
        Ok(s) => {
            let status = if s.report.as_ref().is_some_and(|r| r.passed) { "pass" } else { "verify_failed" };
            SweepCell { values, status: status.into(), solution: Some(s) }
        }
        Err(e) => SweepCell { values, solution: None, status: e.kind().into() },
    }
}

/// Header plus one row per cell; numbers at full precision.
pub fn sweep_csv(cfg: &SweepConfig, cells: &[SweepCell]) -> String {
    let mut out = String::new();
    for a in &cfg.axes {
        out.push_str(a.parameter.name());
        out.push(',');
    }
    out.push_str("z,sum_gamma_a,sum_gamma_s,sum_alpha,status\n");
    for c in cells {
        for v in &c.values {
            out.push_str(&full(*v));
            out.push(',');
        }
        let [ga, gs, al] = c.sums();
        out.push_str(&format!("{},{},{},{},{}\n", full(c.z()), full(ga), full(gs), full(al), c.status));
    }
    out
}
