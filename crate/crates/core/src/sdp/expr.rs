//! Affine matrix expressions over the scalar degrees of freedom of an SDP.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

/// Sparse coefficient entries `(row, col, value)`.
pub type Triplets = Vec<(usize, usize, f64)>;

/// `constant + Σ_k x_k · coeff_k`, with each coefficient stored sparsely.
#[derive(Clone, Debug)]
pub struct Expr {
    rows: usize,
    cols: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, Triplets>,
}

fn normalize(t: &mut Triplets) {
    t.sort_by_key(|&(r, c, _)| (r, c));
    let mut out: Triplets = Vec::with_capacity(t.len());
    for &(r, c, v) in t.iter() {
        match out.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => out.push((r, c, v)),
        }
    }
    out.retain(|e| e.2 != 0.0);
    *t = out;
}

impl Expr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Expr { rows, cols, constant: DMatrix::zeros(rows, cols), terms: BTreeMap::new() }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        Expr { rows: m.nrows(), cols: m.ncols(), constant: m, terms: BTreeMap::new() }
    }

    pub fn scalar_constant(v: f64) -> Self {
        Self::constant(DMatrix::from_element(1, 1, v))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub(crate) fn from_terms(rows: usize, cols: usize, terms: BTreeMap<usize, Triplets>) -> Self {
        Expr { rows, cols, constant: DMatrix::zeros(rows, cols), terms }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn constant_part(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> &BTreeMap<usize, Triplets> {
        &self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.constant *= s;
        if s == 0.0 {
            out.terms.clear();
        } else {
            for t in out.terms.values_mut() {
                for e in t.iter_mut() {
                    e.2 *= s;
                }
            }
        }
        out
    }

    fn merge(&mut self, other: &Expr, sign: f64) {
        assert_eq!(self.shape(), other.shape(), "expression shape mismatch");
        self.constant += &other.constant * sign;
        for (&k, t) in &other.terms {
            let entry = self.terms.entry(k).or_default();
            entry.extend(t.iter().map(|&(r, c, v)| (r, c, sign * v)));
            normalize(entry);
        }
        self.terms.retain(|_, t| !t.is_empty());
    }

    /// `m · self`.
    pub fn lmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows, "left factor has wrong width");
        let mut terms = BTreeMap::new();
        for (&k, t) in &self.terms {
            let mut out = Vec::with_capacity(t.len() * m.nrows());
            for &(r, c, v) in t {
                for i in 0..m.nrows() {
                    let a = m[(i, r)];
                    if a != 0.0 {
                        out.push((i, c, a * v));
                    }
                }
            }
            normalize(&mut out);
            if !out.is_empty() {
                terms.insert(k, out);
            }
        }
        Expr { rows: m.nrows(), cols: self.cols, constant: m * &self.constant, terms }
    }

    /// `self · m`.
    pub fn rmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), self.cols, "right factor has wrong height");
        let mut terms = BTreeMap::new();
        for (&k, t) in &self.terms {
            let mut out = Vec::with_capacity(t.len() * m.ncols());
            for &(r, c, v) in t {
                for j in 0..m.ncols() {
                    let a = m[(c, j)];
                    if a != 0.0 {
                        out.push((r, j, v * a));
                    }
                }
            }
            normalize(&mut out);
            if !out.is_empty() {
                terms.insert(k, out);
            }
        }
        Expr { rows: self.rows, cols: m.ncols(), constant: &self.constant * m, terms }
    }

    pub fn t(&self) -> Self {
        let mut terms = BTreeMap::new();
        for (&k, t) in &self.terms {
            let mut out: Triplets = t.iter().map(|&(r, c, v)| (c, r, v)).collect();
            normalize(&mut out);
            terms.insert(k, out);
        }
        Expr { rows: self.cols, cols: self.rows, constant: self.constant.transpose(), terms }
    }

    /// Diagonal matrix from a column-vector expression.
    pub fn diag(&self) -> Self {
        assert_eq!(self.cols, 1, "diag expects a column vector");
        let n = self.rows;
        let mut constant = DMatrix::zeros(n, n);
        for i in 0..n {
            constant[(i, i)] = self.constant[(i, 0)];
        }
        let terms = self
            .terms
            .iter()
            .map(|(&k, t)| (k, t.iter().map(|&(r, _, v)| (r, r, v)).collect()))
            .collect();
        Expr { rows: n, cols: n, constant, terms }
    }

    pub fn trace(&self) -> Self {
        assert_eq!(self.rows, self.cols, "trace of a non-square expression");
        let mut terms = BTreeMap::new();
        for (&k, t) in &self.terms {
            let s: f64 = t.iter().filter(|e| e.0 == e.1).map(|e| e.2).sum();
            if s != 0.0 {
                terms.insert(k, vec![(0, 0, s)]);
            }
        }
        Expr { rows: 1, cols: 1, constant: DMatrix::from_element(1, 1, self.constant.trace()), terms }
    }

    /// A 1×1 expression times the `n × n` identity.
    pub fn times_identity(&self, n: usize) -> Self {
        assert_eq!(self.shape(), (1, 1), "times_identity expects a scalar");
        let c = self.constant[(0, 0)];
        let terms = self
            .terms
            .iter()
            .map(|(&k, t)| {
                let v: f64 = t.iter().map(|e| e.2).sum();
                (k, (0..n).map(|i| (i, i, v)).collect())
            })
            .collect();
        Expr { rows: n, cols: n, constant: DMatrix::identity(n, n) * c, terms }
    }

    /// A 1×1 expression times a constant matrix.
    pub fn times_matrix(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(self.shape(), (1, 1), "times_matrix expects a scalar");
        let mut nz = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    nz.push((i, j, m[(i, j)]));
                }
            }
        }
        let terms = self
            .terms
            .iter()
            .map(|(&k, t)| {
                let v: f64 = t.iter().map(|e| e.2).sum();
                (k, nz.iter().map(|&(i, j, a)| (i, j, a * v)).collect())
            })
            .collect();
        Expr { rows: m.nrows(), cols: m.ncols(), constant: m * self.constant[(0, 0)], terms }
    }

    /// Entry `(i, j)` as a 1×1 expression.
    pub fn entry(&self, i: usize, j: usize) -> Self {
        let mut terms = BTreeMap::new();
        for (&k, t) in &self.terms {
            if let Some(&(_, _, v)) = t.iter().find(|e| e.0 == i && e.1 == j) {
                terms.insert(k, vec![(0, 0, v)]);
            }
        }
        Expr { rows: 1, cols: 1, constant: DMatrix::from_element(1, 1, self.constant[(i, j)]), terms }
    }

    /// Sum of all entries of a column vector weighted by `w`.
    pub fn dot(&self, w: &[f64]) -> Self {
        assert_eq!(self.cols, 1);
        assert_eq!(self.rows, w.len());
        let row = DMatrix::from_row_slice(1, w.len(), w);
        self.lmul(&row)
    }

    /// Assemble a block matrix; `None` entries are zero blocks whose size is
    /// taken from the other blocks in the same block row and column.
    pub fn blocks(grid: Vec<Vec<Option<Expr>>>) -> Self {
        let nr = grid.len();
        let nc = grid[0].len();
        let mut heights = vec![None; nr];
        let mut widths = vec![None; nc];
        for (i, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), nc, "ragged block grid");
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    for (slot, v) in [(&mut heights[i], b.rows), (&mut widths[j], b.cols)] {
                        match slot {
                            Some(s) => assert_eq!(*s, v, "inconsistent block sizes"),
                            None => *slot = Some(v),
                        }
                    }
                }
            }
        }
        let heights: Vec<usize> = heights.into_iter().map(|h| h.expect("undetermined block height")).collect();
        let widths: Vec<usize> = widths.into_iter().map(|w| w.expect("undetermined block width")).collect();
        let rows: usize = heights.iter().sum();
        let cols: usize = widths.iter().sum();
        let mut out = Expr::zeros(rows, cols);
        let mut r0 = 0;
        for (i, row) in grid.into_iter().enumerate() {
            let mut c0 = 0;
            for (j, b) in row.into_iter().enumerate() {
                if let Some(b) = b {
                    out.constant.view_mut((r0, c0), (b.rows, b.cols)).copy_from(&b.constant);
                    for (k, t) in b.terms {
                        out.terms
                            .entry(k)
                            .or_default()
                            .extend(t.into_iter().map(|(r, c, v)| (r + r0, c + c0, v)));
                    }
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        for t in out.terms.values_mut() {
            normalize(t);
        }
        out
    }

    pub fn block_diag(blocks: Vec<Expr>) -> Self {
        let n = blocks.len();
        let grid = blocks
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                let mut row: Vec<Option<Expr>> = (0..n).map(|_| None).collect();
                row[i] = Some(b);
                row
            })
            .collect::<Vec<_>>();
        // off-diagonal sizes are fully determined by the diagonal blocks
        Expr::blocks(grid)
    }

    /// Evaluate at the flat decision vector `x`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (&k, t) in &self.terms {
            let xk = x[k];
            if xk != 0.0 {
                for &(r, c, v) in t {
                    m[(r, c)] += xk * v;
                }
            }
        }
        m
    }

    /// Largest asymmetry `|a_ij − a_ji|` over the constant and all coefficients.
    pub fn asymmetry(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst = crate::linalg::max_abs(&(&self.constant - self.constant.transpose()));
        for t in self.terms.values() {
            let mut m: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            for &(r, c, v) in t {
                *m.entry((r, c)).or_default() += v;
            }
            for (&(r, c), &v) in &m {
                let w = m.get(&(c, r)).copied().unwrap_or(0.0);
                worst = worst.max((v - w).abs());
            }
        }
        worst
    }
}

impl Add<&Expr> for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        let mut out = self.clone();
        out.merge(rhs, 1.0);
        out
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(mut self, rhs: Expr) -> Expr {
        self.merge(&rhs, 1.0);
        self
    }
}

impl Sub<&Expr> for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        let mut out = self.clone();
        out.merge(rhs, -1.0);
        out
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(mut self, rhs: Expr) -> Expr {
        self.merge(&rhs, -1.0);
        self
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Expr {
    type Output = Expr;
    fn mul(self, s: f64) -> Expr {
        self.scale(s)
    }
}

impl Mul<f64> for &Expr {
    type Output = Expr;
    fn mul(self, s: f64) -> Expr {
        self.scale(s)
    }
}
