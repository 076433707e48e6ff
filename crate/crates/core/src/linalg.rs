//! Small dense matrices with symmetric / positive-definite discipline.
//!
//! Storage and products come from `nalgebra`; the Cholesky factorization with
//! its pivot tolerance is done here so that acceptance of an SPD matrix is
//! governed by one explicit rule (see [`SPD_REL_TOLERANCE`]).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Largest supported dimension for any matrix side.
pub const MAX_DIM: usize = 64;

/// Cholesky pivots must exceed this multiple of the largest diagonal entry.
pub const SPD_REL_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry above which an input is rejected rather than mirrored.
pub const SYMMETRY_REL_TOLERANCE: f64 = 1e-9;

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        Err(Error::UnsupportedSize(d))
    } else {
        Ok(())
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Eigenvalues of the symmetric part of a square matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let s = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m)[0]
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    *sym_eigenvalues(m).last().expect("non-empty matrix")
}

/// Largest singular value of an arbitrary dense matrix.
pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().fold(0.0_f64, |a, &s| a.max(s))
}

/// Square symmetric matrix. Symmetry is exact: the lower triangle is always
/// a mirror of the upper one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Accepts a square matrix whose asymmetry is within
    /// [`SYMMETRY_REL_TOLERANCE`] of its largest entry, then mirrors the upper
    /// triangle into the lower one.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_dim(m.nrows())?;
        check_finite(&m)?;
        let n = m.nrows();
        let scale = max_abs(&m);
        let mut asym = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if scale > 0.0 && asym > SYMMETRY_REL_TOLERANCE * scale {
            return Err(Error::NotSymmetric(asym / scale));
        }
        Ok(Self::mirror_upper(m))
    }

    fn mirror_upper(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                m[(j, i)] = m[(i, j)];
            }
        }
        Self { m }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("matrix rows must all have length n".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn zeros(n: usize) -> Self {
        Self { m: DMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { m: DMatrix::identity(n, n) }
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    /// `c * v vᵀ`, exactly symmetric.
    pub fn outer(v: &Vector, c: f64) -> Result<Self> {
        Self::new(v * v.transpose() * c)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { m: &self.m * c }
    }

    pub fn add(&self, other: &SymMatrix) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self { m: &self.m + &other.m })
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<Self> {
        self.same_dim(other)?;
        Ok(Self { m: &self.m - &other.m })
    }

    fn same_dim(&self, other: &SymMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.dim(),
                self.dim(),
                other.dim(),
                other.dim()
            )));
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.m)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("non-empty")
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.m)
    }

    /// Positive semidefinite up to `-rel_tol * max(1, max|entry|)`.
    pub fn is_psd(&self, rel_tol: f64) -> bool {
        self.min_eigenvalue() >= -rel_tol * self.max_abs().max(1.0)
    }
}

/// Symmetric positive-definite matrix with its lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    m: DMatrix<f64>,
    chol: DMatrix<f64>,
}

fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let tol = SPD_REL_TOLERANCE * max_diag.max(0.0);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

impl SpdMatrix {
    pub fn new(s: SymMatrix) -> Result<Self> {
        let chol = cholesky(&s.m)?;
        Ok(Self { m: s.m, chol })
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::new(m)?)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
            chol: DMatrix::identity(n, n),
        }
    }

    pub fn scaled_identity(n: usize, c: f64) -> Result<Self> {
        Self::new(SymMatrix::identity(n).scale(c))
    }

    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        Self::new(SymMatrix::from_diagonal(d)?)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn to_sym(&self) -> SymMatrix {
        SymMatrix { m: self.m.clone() }
    }

    /// Solves `self * X = B` by forward and back substitution on the factor.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "solve: matrix is {n}x{n}, right-hand side has {} rows",
                b.nrows()
            )));
        }
        let l = &self.chol;
        let mut x = b.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn solve_vec(&self, b: &Vector) -> Result<Vector> {
        let x = self.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
        Ok(x.column(0).into_owned())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        sym_eigenvalues(&self.m)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues().last().expect("non-empty")
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &Vector) -> f64 {
        x.dot(&(&self.m * x))
    }
}

/// Rectangular matrix with finite entries (regressors, noise blocks).
#[derive(Debug, Clone, PartialEq)]
pub struct RectMatrix {
    m: DMatrix<f64>,
}

impl RectMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_dim(m.nrows())?;
        check_dim(m.ncols())?;
        check_finite(&m)?;
        Ok(Self { m })
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for {rows}x{cols}, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { m: DMatrix::zeros(rows, cols) }
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `selfᵀ self`, exactly symmetric.
    pub fn gram(&self) -> SymMatrix {
        SymMatrix::mirror_upper(self.m.transpose() * &self.m)
    }

    pub fn sigma_max(&self) -> f64 {
        sigma_max(&self.m)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm()
    }
}

/// `m^{-1}`.
pub fn spd_inverse(m: &SpdMatrix) -> Result<SpdMatrix> {
    let inv = m.solve(&DMatrix::identity(m.dim(), m.dim()))?;
    SpdMatrix::new(SymMatrix::new(inv)?)
}

/// The unique SPD `S` with `Sᵀ S = m^{-1}`, via eigendecomposition.
pub fn spd_inverse_sqrt(m: &SpdMatrix) -> Result<SpdMatrix> {
    let eig = m.m.clone().symmetric_eigen();
    let n = m.dim();
    let max_diag = (0..n).map(|i| m.m[(i, i)]).fold(0.0_f64, f64::max);
    let tol = SPD_REL_TOLERANCE * max_diag;
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if !(l > tol) {
            return Err(Error::NotPositiveDefinite { index: i, pivot: l });
        }
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let s = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    SpdMatrix::new(SymMatrix::new(s)?)
}

/// Unique minimizer `-h^{-1} b` of `xᵀ h x + 2 bᵀ x + c`.
pub fn quadratic_minimizer(h: &SpdMatrix, b: &Vector) -> Result<Vector> {
    if b.len() != h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "quadratic_minimizer: h is {}x{}, b has length {}",
            h.dim(),
            h.dim(),
            b.len()
        )));
    }
    Ok(-h.solve_vec(b)?)
}

/// `(A + U C Uᵀ)^{-1}` from `A^{-1}` and `C^{-1}` by the matrix inversion lemma.
pub fn mil_inverse(a_inv: &SpdMatrix, u: &RectMatrix, c_inv: &SpdMatrix) -> Result<SpdMatrix> {
    if u.rows() != a_inv.dim() || u.cols() != c_inv.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mil_inverse: A is {0}x{0}, U is {1}x{2}, C is {3}x{3}",
            a_inv.dim(),
            u.rows(),
            u.cols(),
            c_inv.dim()
        )));
    }
    let x = a_inv.as_matrix() * u.as_matrix();
    let inner = c_inv.as_matrix() + u.as_matrix().transpose() * &x;
    let inner = SpdMatrix::new(SymMatrix::new(inner)?)?;
    let corr = &x * inner.solve(&x.transpose())?;
    SpdMatrix::new(SymMatrix::new(a_inv.as_matrix() - corr)?)
}

/// Assembles a conforming grid of blocks into one dense matrix.
pub fn assemble_blocks(blocks: &[Vec<RectMatrix>]) -> Result<DMatrix<f64>> {
    let (row_heights, col_widths) = grid_shape(blocks)?;
    let rows: usize = row_heights.iter().sum();
    let cols: usize = col_widths.iter().sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for (i, row) in blocks.iter().enumerate() {
        let mut c0 = 0;
        for (j, b) in row.iter().enumerate() {
            out.view_mut((r0, c0), (b.rows(), b.cols())).copy_from(b.as_matrix());
            c0 += col_widths[j];
        }
        r0 += row_heights[i];
    }
    Ok(out)
}

fn grid_shape(blocks: &[Vec<RectMatrix>]) -> Result<(Vec<usize>, Vec<usize>)> {
    let first = blocks
        .first()
        .filter(|r| !r.is_empty())
        .ok_or_else(|| Error::DimensionMismatch("empty block grid".into()))?;
    let col_widths: Vec<usize> = first.iter().map(RectMatrix::cols).collect();
    let mut row_heights = Vec::with_capacity(blocks.len());
    for (i, row) in blocks.iter().enumerate() {
        if row.len() != col_widths.len() {
            return Err(Error::DimensionMismatch(format!(
                "block row {i} has {} blocks, expected {}",
                row.len(),
                col_widths.len()
            )));
        }
        let h = row[0].rows();
        for (j, b) in row.iter().enumerate() {
            if b.rows() != h || b.cols() != col_widths[j] {
                return Err(Error::DimensionMismatch(format!(
                    "block ({i},{j}) is {}x{}, expected {h}x{}",
                    b.rows(),
                    b.cols(),
                    col_widths[j]
                )));
            }
        }
        row_heights.push(h);
    }
    Ok((row_heights, col_widths))
}

/// `sqrt(Σ σ_max(A_ij)²)`, an upper bound on `σ_max` of the assembled matrix.
pub fn block_sigma_max_bound(blocks: &[Vec<RectMatrix>]) -> Result<f64> {
    grid_shape(blocks)?;
    let sum: f64 = blocks
        .iter()
        .flatten()
        .map(|b| b.sigma_max().powi(2))
        .sum();
    Ok(sum.sqrt())
}
