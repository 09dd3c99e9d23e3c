//! Dense linear algebra helpers built on nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Schur, SymmetricEigen, LU, SVD};

use crate::error::{Error, Result};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let v = a[(i, j)];
            if v != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * v));
            }
        }
    }
    out
}

/// `a ⊗ I_d`.
pub fn kron_eye(a: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    kron(a, &DMatrix::identity(d, d))
}

/// Block-diagonal concatenation.
pub fn blkdiag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Assemble a block matrix from rows of blocks. All blocks in a row share a row count.
pub fn block_matrix(rows: &[Vec<&DMatrix<f64>>]) -> DMatrix<f64> {
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = rows[0].iter().map(|b| b.ncols()).collect();
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r0 = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            assert_eq!(b.shape(), (heights[i], widths[j]), "block ({i},{j}) has wrong shape");
            out.view_mut((r0, c0), b.shape()).copy_from(*b);
            c0 += widths[j];
        }
        r0 += heights[i];
    }
    out
}

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<f64> = SymmetricEigen::new(sym(m)).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Square root of a symmetric positive semidefinite matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(sym(m));
    let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    LU::new(m.clone())
        .try_inverse()
        .ok_or_else(|| Error::Singular("matrix inverse".into()))
}

/// Solve `m x = rhs`.
pub fn solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    LU::new(m.clone())
        .solve(rhs)
        .ok_or_else(|| Error::Singular("linear solve".into()))
}

/// Full singular value decomposition with singular values sorted descending.
///
/// Returns `(sigma, u, v)` where `v` is square (`cols × cols`) and `sigma` has
/// `min(rows, cols)` entries. Wide matrices are padded with zero rows so the
/// full right basis is available.
pub struct FullSvd {
    pub sigma: DVector<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

pub fn full_svd(a: &DMatrix<f64>) -> FullSvd {
    let (r, c) = a.shape();
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = SVD::new(padded, true, true);
    let v = svd.v_t.unwrap().transpose();
    let u = svd.u.unwrap();
    let k = r.min(c);
    FullSvd {
        sigma: svd.singular_values.rows(0, k).into_owned(),
        u: u.view((0, 0), (r, k)).into_owned(),
        v,
    }
}

/// Default numerical rank tolerance `max(rows, cols) · ε · σ_max`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Flip column signs so the first entry with magnitude above `1e-12` is positive.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let first = m.column(j).iter().copied().find(|v| v.abs() > 1e-12);
        if let Some(v) = first {
            if v < 0.0 {
                m.column_mut(j).neg_mut();
            }
        }
    }
}

/// Orthonormal basis of the null space of `a` and its numerical rank.
pub fn nullspace(a: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (r, c) = a.shape();
    if r == 0 {
        return (DMatrix::identity(c, c), 0);
    }
    let svd = full_svd(a);
    let smax = svd.sigma.iter().copied().fold(0.0, f64::max);
    let tol = rank_tolerance(r, c, smax);
    let rank = svd.sigma.iter().filter(|&&s| s > tol).count();
    let mut n = svd.v.columns(rank, c - rank).into_owned();
    normalize_column_signs(&mut n);
    (n, rank)
}

/// Eigenvalues of a real square matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<(f64, f64)> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    Schur::new(a.clone())
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect()
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalues of the symmetric pencil `(k, m)` with `m` positive definite, ascending.
pub fn generalized_sym_eigenvalues(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = Cholesky::new(sym(m)).ok_or(Error::NotPositiveDefinite("mass matrix".into()))?;
    let l = chol.l();
    let li = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
        .ok_or_else(|| Error::Singular("cholesky factor".into()))?;
    Ok(sym_eigenvalues(&(&li * sym(k) * li.transpose())))
}

/// Diagonal block boundaries of a real quasi-triangular Schur factor.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 0.0 {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solve `t y + y tᵀ = c` for quasi-upper-triangular `t`.
fn quasi_triangular_lyapunov(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let blocks = schur_blocks(t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(j0, jn) in blocks.iter().rev() {
        let mut r = c.columns(j0, jn).into_owned();
        for k in (j0 + jn)..n {
            for jj in 0..jn {
                let tjk = t[(j0 + jj, k)];
                if tjk != 0.0 {
                    let col = y.column(k) * tjk;
                    let mut rc = r.column_mut(jj);
                    rc -= col;
                }
            }
        }
        let tjj = t.view((j0, j0), (jn, jn)).into_owned();
        for &(i0, inn) in blocks.iter().rev() {
            let mut s = r.rows(i0, inn).into_owned();
            let tail = i0 + inn;
            if tail < n {
                s -= t.view((i0, tail), (inn, n - tail)) * y.view((tail, j0), (n - tail, jn));
            }
            let tii = t.view((i0, i0), (inn, inn)).into_owned();
            let k = kron(&DMatrix::identity(jn, jn), &tii) + kron(&tjj, &DMatrix::identity(inn, inn));
            let rhs = DVector::from_column_slice(s.as_slice());
            let z = LU::new(k)
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("lyapunov operator".into()))?;
            y.view_mut((i0, j0), (inn, jn))
                .copy_from(&DMatrix::from_column_slice(inn, jn, z.as_slice()));
        }
    }
    Ok(y)
}

/// Solve `a x + x aᵀ + q = 0` by the Bartels–Stewart method.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (u, t) = Schur::new(a.clone()).unpack();
    let c = -(u.transpose() * q * &u);
    let y = quasi_triangular_lyapunov(&t, &c)?;
    Ok(sym(&(&u * y * u.transpose())))
}

/// Stabilizing solution of `aᵀx + xa − x b r⁻¹ bᵀ x + q = 0` via the matrix sign function.
pub fn care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let g = b * inverse(r)? * b.transpose();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let mut z = h;
    let dim = (2 * n) as f64;
    for _ in 0..100 {
        let lu = LU::new(z.clone());
        let det = lu.determinant().abs();
        let zi = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("hamiltonian has imaginary-axis eigenvalues".into()))?;
        let c = if det > 0.0 && det.is_finite() { det.powf(1.0 / dim) } else { 1.0 };
        let next = (&z / c + zi * c) * 0.5;
        let delta = (&next - &z).norm() / next.norm().max(1.0);
        z = next;
        if delta < 1e-13 {
            break;
        }
    }
    let id = DMatrix::<f64>::identity(n, n);
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let lhs = block_matrix(&[vec![&w12], vec![&(w22 + &id)]]);
    let rhs = -block_matrix(&[vec![&(w11 + &id)], vec![&w21]]);
    let sol = SVD::new(lhs, true, true)
        .solve(&rhs, 1e-13)
        .map_err(|e| Error::Singular(format!("riccati recovery: {e}")))?;
    let x = sym(&sol);
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("riccati solution not finite".into()));
    }
    Ok(x)
}
