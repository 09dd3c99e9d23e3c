//! Infeasible-start primal-dual interior-point method (Nesterov-Todd
//! direction, Mehrotra predictor-corrector) for
//!
//! ```text
//! minimize cᵀx  subject to  S_k = G_k0 + Σ_i x_i G_ki ⪰ 0
//! ```
//!
//! with dual `maximize −Σ⟨G_k0, Z_k⟩` subject to `Σ_k⟨G_ki, Z_k⟩ = c_i, Z_k ⪰ 0`.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, LU};

use super::expr::Triplets;
use super::SolverSettings;

pub(crate) struct Coeff {
    dof: usize,
    /// upper-triangular entries
    upper: Triplets,
    support: Vec<usize>,
    /// dense `G[support, support]`
    dense: DMatrix<f64>,
}

pub(crate) struct Block {
    n: usize,
    g0: DMatrix<f64>,
    coeffs: Vec<Coeff>,
}

impl Block {
    pub(crate) fn new(g0: DMatrix<f64>, coeffs: Vec<(usize, Triplets)>) -> Self {
        let n = g0.nrows();
        let coeffs = coeffs
            .into_iter()
            .map(|(dof, upper)| {
                let mut support: Vec<usize> = upper.iter().flat_map(|e| [e.0, e.1]).collect();
                support.sort_unstable();
                support.dedup();
                let pos = |i: usize| support.binary_search(&i).unwrap();
                let mut dense = DMatrix::zeros(support.len(), support.len());
                for &(r, c, v) in &upper {
                    let (a, b) = (pos(r), pos(c));
                    dense[(a, b)] = v;
                    dense[(b, a)] = v;
                }
                Coeff { dof, upper, support, dense }
            })
            .collect();
        Block { n, g0, coeffs }
    }

    /// `Σ_i x_i G_i` without the constant.
    fn apply(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for c in &self.coeffs {
            let xi = x[c.dof];
            if xi != 0.0 {
                for &(r, cc, v) in &c.upper {
                    m[(r, cc)] += xi * v;
                    if r != cc {
                        m[(cc, r)] += xi * v;
                    }
                }
            }
        }
        m
    }

    /// Accumulate `⟨G_i, W⟩` into `out`.
    fn adjoint(&self, w: &DMatrix<f64>, out: &mut DVector<f64>) {
        for c in &self.coeffs {
            out[c.dof] += inner(&c.upper, w);
        }
    }
}

fn inner(upper: &Triplets, w: &DMatrix<f64>) -> f64 {
    upper
        .iter()
        .map(|&(r, c, v)| if r == c { v * w[(r, r)] } else { v * (w[(r, c)] + w[(c, r)]) })
        .sum()
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn symm(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Status {
    Converged,
    Infeasible,
    Unbounded,
    MaxIterations,
    Stalled,
}

pub(crate) struct Output {
    pub status: Status,
    pub x: DVector<f64>,
    pub iterations: usize,
    pub relative_gap: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    /// `x` came from an iterate with negligible primal residual
    pub primal_feasible: bool,
}

/// Largest step `α` with `m + α d ⪰ 0`, given the Cholesky factor of `m`.
fn max_step(chol: &Cholesky<f64, nalgebra::Dyn>, d: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let Some(x) = l.solve_lower_triangular(d) else { return 0.0 };
    let Some(w) = l.solve_lower_triangular(&x.transpose()) else { return 0.0 };
    let lam = SymmetricEigen::new(symm(w)).eigenvalues.min();
    if lam >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lam
    }
}

fn chol(m: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone())
}

/// Nesterov-Todd scaling `W = T Tᵀ` with `W Z W = S` and
/// `T⁻¹ S T⁻ᵀ = Tᵀ Z T = Λ`.
struct NtScaling {
    t: DMatrix<f64>,
    t_inv: DMatrix<f64>,
    w_inv: DMatrix<f64>,
    lambda: DVector<f64>,
}

fn nt_scaling(s: &Cholesky<f64, nalgebra::Dyn>, z: &Cholesky<f64, nalgebra::Dyn>) -> Option<NtScaling> {
    let l = s.l();
    let r = z.l();
    let n = l.nrows();
    let svd = (r.transpose() * &l).svd(false, true);
    let v_t = svd.v_t?;
    let lambda = svd.singular_values;
    if lambda.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let l_inv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
    let mut t_inv = &v_t * l_inv;
    let mut t = l * v_t.transpose();
    for i in 0..n {
        let q = lambda[i].sqrt();
        t_inv.row_mut(i).scale_mut(q);
        t.column_mut(i).unscale_mut(q);
    }
    let w_inv = t_inv.transpose() * &t_inv;
    Some(NtScaling { t, t_inv, w_inv, lambda })
}

struct Direction {
    dx: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dz: Vec<DMatrix<f64>>,
}

enum Factor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn solve(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Factor::Chol(c) => Some(c.solve(b)),
            Factor::Lu(l) => l.solve(b),
        }
    }
}

fn factor_schur(m: DMatrix<f64>) -> Option<Factor> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(Factor::Chol(c));
    }
    let scale = m.diagonal().iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..6 {
        let mut r = m.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(r) {
            return Some(Factor::Chol(c));
        }
        reg *= 100.0;
    }
    let lu = LU::new(m);
    if lu.is_invertible() {
        Some(Factor::Lu(lu))
    } else {
        None
    }
}

/// Equilibrated solve. Blocks get a diagonal congruence `D S D` and
/// variables a column scaling, alternated a few times (Ruiz); the
/// objective is divided by its largest entry. None of this changes the
/// feasible set or the minimizer.
pub(crate) fn solve(c: &DVector<f64>, blocks: &[Block], settings: &SolverSettings) -> Output {
    let m = c.len();
    let mut scaled: Vec<Block> = blocks
        .iter()
        .map(|b| Block {
            n: b.n,
            g0: b.g0.clone(),
            coeffs: b
                .coeffs
                .iter()
                .map(|cf| Coeff {
                    dof: cf.dof,
                    upper: cf.upper.clone(),
                    support: cf.support.clone(),
                    dense: cf.dense.clone(),
                })
                .collect(),
        })
        .collect();
    let mut nu = vec![1.0_f64; m];
    for _ in 0..6 {
        for b in &mut scaled {
            let mut r = vec![0.0_f64; b.n];
            for j in 0..b.n {
                for i in 0..b.n {
                    r[i] = r[i].max(b.g0[(i, j)].abs());
                }
            }
            for cf in &b.coeffs {
                for &(i, j, v) in &cf.upper {
                    r[i] = r[i].max(v.abs());
                    r[j] = r[j].max(v.abs());
                }
            }
            let d: Vec<f64> = r.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
            for j in 0..b.n {
                for i in 0..b.n {
                    b.g0[(i, j)] *= d[i] * d[j];
                }
            }
            for cf in &mut b.coeffs {
                for e in &mut cf.upper {
                    e.2 *= d[e.0] * d[e.1];
                }
                for (a, &i) in cf.support.iter().enumerate() {
                    for (bb, &j) in cf.support.iter().enumerate() {
                        cf.dense[(a, bb)] *= d[i] * d[j];
                    }
                }
            }
        }
        let mut col = vec![0.0_f64; m];
        for b in &scaled {
            for cf in &b.coeffs {
                col[cf.dof] = col[cf.dof].max(cf.dense.amax());
            }
        }
        for b in &mut scaled {
            for cf in &mut b.coeffs {
                let k = col[cf.dof].sqrt();
                if k > 0.0 {
                    for e in &mut cf.upper {
                        e.2 /= k;
                    }
                    cf.dense /= k;
                }
            }
        }
        for i in 0..m {
            if col[i] > 0.0 {
                nu[i] *= col[i].sqrt();
            }
        }
    }
    let c_hat = DVector::from_iterator(m, (0..m).map(|i| c[i] / nu[i]));
    let c_scale = c_hat.amax().max(1e-300);
    let mut out = solve_equilibrated(&(c_hat / c_scale), &scaled, settings);
    for i in 0..m {
        out.x[i] /= nu[i];
    }
    out
}

fn solve_equilibrated(c: &DVector<f64>, blocks: &[Block], settings: &SolverSettings) -> Output {
    let m = c.len();
    let total_n: usize = blocks.iter().map(|b| b.n).sum::<usize>().max(1);
    let c_norm = c.norm();
    let g0_norm = blocks.iter().map(|b| b.g0.norm_squared()).sum::<f64>().sqrt();

    // dofs that appear in no constraint are fixed at zero
    let mut touched = vec![false; m];
    for b in blocks {
        for cf in &b.coeffs {
            touched[cf.dof] = true;
        }
    }
    if (0..m).any(|i| !touched[i] && c[i] != 0.0) {
        return Output {
            status: Status::Unbounded,
            x: DVector::zeros(m),
            iterations: 0,
            relative_gap: f64::INFINITY,
            primal_infeasibility: f64::INFINITY,
            dual_infeasibility: f64::INFINITY,
            primal_feasible: false,
        };
    }

    let mut x = DVector::<f64>::zeros(m);
    let mut s: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
    let mut z: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
    for b in blocks {
        let n = b.n as f64;
        let mut max_g = b.g0.norm();
        let mut ratio: f64 = 0.0;
        for cf in &b.coeffs {
            let gn = cf.dense.norm();
            max_g = max_g.max(gn);
            ratio = ratio.max((1.0 + c[cf.dof].abs()) / (1.0 + gn));
        }
        let zeta = 10.0_f64.max(n.sqrt()).max(n * ratio);
        let eta = 10.0_f64.max(n.sqrt()).max(max_g);
        s.push(DMatrix::identity(b.n, b.n) * eta);
        z.push(DMatrix::identity(b.n, b.n) * zeta);
    }

    let mut status = Status::MaxIterations;
    let mut iterations = 0;
    let mut rel_gap = f64::INFINITY;
    let mut pinf = f64::INFINITY;
    let mut dinf = f64::INFINITY;
    // best certified iterate by max(gap, dual residual), and best primal
    // point by objective
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut best_primal: Option<(f64, f64, DVector<f64>)> = None;
    let mut last_improvement = 0;

    for it in 0..settings.max_iterations {
        iterations = it;
        let rp: Vec<DMatrix<f64>> = blocks
            .iter()
            .zip(&s)
            .map(|(b, sb)| &b.g0 + b.apply(&x) - sb)
            .collect();
        let mut atz = DVector::zeros(m);
        for (b, zb) in blocks.iter().zip(&z) {
            b.adjoint(zb, &mut atz);
        }
        let rd = c - &atz;
        let gap: f64 = s.iter().zip(&z).map(|(a, b)| dot(a, b)).sum();
        let mu = gap / total_n as f64;
        let pobj = c.dot(&x);
        let dobj: f64 = -blocks.iter().zip(&z).map(|(b, zb)| dot(&b.g0, zb)).sum::<f64>();
        rel_gap = gap.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        pinf = rp.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + g0_norm);
        dinf = rd.norm() / (1.0 + c_norm);
        log::trace!(
            "ipm {it:3} pobj {pobj:+.10e} dobj {dobj:+.10e} gap {rel_gap:.2e} pinf {pinf:.2e} dinf {dinf:.2e}"
        );

        if pinf < 1e-9 {
            let score = rel_gap.max(dinf);
            if best.as_ref().is_none_or(|b| score < b.0) {
                best = Some((score, x.clone()));
            }
            match &best_primal {
                _ if pinf >= 1e-12 => {}
                Some((p, _, _)) if pobj >= *p - 1e-10 * (1.0 + p.abs()) => {
                    if pobj < *p {
                        best_primal = Some((pobj, rel_gap, x.clone()));
                    }
                }
                _ => {
                    best_primal = Some((pobj, rel_gap, x.clone()));
                    last_improvement = it;
                }
            }
            if best_primal.is_some() && it >= last_improvement + 12 {
                status = Status::Stalled;
                break;
            }
        }
        if rel_gap < settings.gap_tolerance
            && pinf < settings.feasibility_tolerance
            && dinf < settings.feasibility_tolerance
        {
            status = Status::Converged;
            break;
        }
        if dobj > 0.0 && atz.norm() / dobj < settings.infeasibility_tolerance && pinf > 1e-10 {
            status = Status::Infeasible;
            break;
        }
        if pobj < -1e12 * (1.0 + c_norm) && pinf < 1e-6 {
            status = Status::Unbounded;
            break;
        }

        let s_chol: Option<Vec<_>> = s.iter().map(chol).collect();
        let z_chol: Option<Vec<_>> = z.iter().map(chol).collect();
        let (Some(s_chol), Some(z_chol)) = (s_chol, z_chol) else {
            status = Status::Stalled;
            break;
        };
        let Some(nt) = s_chol.iter().zip(&z_chol).map(|(a, b)| nt_scaling(a, b)).collect::<Option<Vec<_>>>() else {
            status = Status::Stalled;
            break;
        };

        // Schur complement M_ij = ⟨G_i, W⁻¹ G_j W⁻¹⟩
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for (bi, b) in blocks.iter().enumerate() {
            let wi = &nt[bi].w_inv;
            for cj in &b.coeffs {
                let left = wi.select_columns(cj.support.iter()) * &cj.dense;
                let y = left * wi.select_rows(cj.support.iter());
                for ci in &b.coeffs {
                    if ci.dof <= cj.dof {
                        schur[(ci.dof, cj.dof)] += inner(&ci.upper, &y);
                    }
                }
            }
        }
        for j in 0..m {
            if !touched[j] {
                schur[(j, j)] = 1.0;
            }
            for i in 0..j {
                schur[(j, i)] = schur[(i, j)];
            }
        }
        let Some(factor) = factor_schur(schur.clone()) else {
            status = Status::Stalled;
            break;
        };

        let direction = |sigma_mu: f64, corr: Option<&Direction>| -> Option<Direction> {
            let mut rhs = -&rd;
            let mut base = Vec::with_capacity(blocks.len());
            for (bi, b) in blocks.iter().enumerate() {
                let sc = &nt[bi];
                let n = b.n;
                // scaled centering residual L_Λ⁻¹(σμI − Λ² − H(dŜ dẐ))
                let mut rh = DMatrix::<f64>::zeros(n, n);
                for i in 0..n {
                    rh[(i, i)] = sigma_mu / sc.lambda[i] - sc.lambda[i];
                }
                if let Some(cd) = corr {
                    let ds_hat = &sc.t_inv * &cd.ds[bi] * sc.t_inv.transpose();
                    let dz_hat = sc.t.transpose() * &cd.dz[bi] * &sc.t;
                    let h = symm(ds_hat * dz_hat);
                    for j in 0..n {
                        for i in 0..n {
                            rh[(i, j)] -= 2.0 * h[(i, j)] / (sc.lambda[i] + sc.lambda[j]);
                        }
                    }
                }
                let t = symm(sc.t_inv.transpose() * rh * &sc.t_inv - &sc.w_inv * &rp[bi] * &sc.w_inv);
                b.adjoint(&t, &mut rhs);
                base.push(t);
            }
            let mut dx = factor.solve(&rhs)?;
            for _ in 0..3 {
                let r = &rhs - &schur * &dx;
                if r.norm() <= 1e-15 * rhs.norm() {
                    break;
                }
                dx += factor.solve(&r)?;
            }
            let mut ds = Vec::with_capacity(blocks.len());
            let mut dz = Vec::with_capacity(blocks.len());
            for (bi, b) in blocks.iter().enumerate() {
                let dsb = b.apply(&dx) + &rp[bi];
                let dzb = &base[bi] - symm(&nt[bi].w_inv * b.apply(&dx) * &nt[bi].w_inv);
                ds.push(dsb);
                dz.push(dzb);
            }
            Some(Direction { dx, ds, dz })
        };

        let steps = |d: &Direction| -> (f64, f64) {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for bi in 0..blocks.len() {
                ap = ap.min(max_step(&s_chol[bi], &d.ds[bi]));
                ad = ad.min(max_step(&z_chol[bi], &d.dz[bi]));
            }
            (ap, ad)
        };

        let Some(pred) = direction(0.0, None) else {
            status = Status::Stalled;
            break;
        };
        let (ap, ad) = steps(&pred);
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let mut gap_aff = 0.0;
        for bi in 0..blocks.len() {
            gap_aff += dot(&(&s[bi] + &pred.ds[bi] * ap), &(&z[bi] + &pred.dz[bi] * ad));
        }
        let mu_aff = gap_aff / total_n as f64;
        let sigma = if mu > 0.0 { (mu_aff / mu).clamp(0.0, 1.0).powi(3) } else { 0.0 };
        let Some(d) = direction(sigma * mu, Some(&pred)) else {
            status = Status::Stalled;
            break;
        };
        let (ap, ad) = steps(&d);
        let tau = settings.step_fraction;
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        log::trace!("ipm     sigma {sigma:.2e} ap {ap:.3e} ad {ad:.3e}");
        if ap < 1e-12 && ad < 1e-12 {
            status = Status::Stalled;
            break;
        }
        x += &d.dx * ap;
        for bi in 0..blocks.len() {
            s[bi] += &d.ds[bi] * ap;
            z[bi] += &d.dz[bi] * ad;
            s[bi] = symm(std::mem::take(&mut s[bi]));
            z[bi] = symm(std::mem::take(&mut z[bi]));
        }
    }

    let mut primal_feasible = status == Status::Converged;
    if status != Status::Converged && status != Status::Infeasible && status != Status::Unbounded {
        if let Some((score, bx)) = best.filter(|b| b.0 < settings.acceptable_gap) {
            status = Status::Converged;
            x = bx;
            rel_gap = score;
            primal_feasible = true;
        } else if let Some((_, gap, bx)) = best_primal {
            x = bx;
            rel_gap = gap;
            primal_feasible = true;
        }
    }
    Output {
        status,
        x,
        iterations: iterations + 1,
        relative_gap: rel_gap,
        primal_infeasibility: pinf,
        dual_infeasibility: dinf,
        primal_feasible,
    }
}
