//! Dense real-matrix kernels: minimum-norm least squares through the SVD,
//! numerical rank and condition numbers.
//!
//! Every routine is a deterministic function of its input: the factorizations
//! run sequentially, so results do not depend on thread scheduling.

use std::sync::Once;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Par};

use crate::error::{Error, Result};

fn sequential() {
    static INIT: Once = Once::new();
    INIT.call_once(|| faer::set_global_parallelism(Par::Seq));
}

/// Row-major dense matrix of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · v`
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "matvec_t dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                let dst = out.row_mut(r);
                for (d, b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// Stack `blocks` vertically. All blocks must share a column count.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::invalid("vstack: column counts differ"));
        }
        let mut data = Vec::with_capacity(blocks.iter().map(|b| b.data.len()).sum());
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(Matrix {
            rows: data.len() / cols.max(1),
            cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    fn to_faer(&self) -> Mat<f64> {
        sequential();
        Mat::from_fn(self.rows, self.cols, |r, c| self.data[r * self.cols + c])
    }

    fn from_faer(m: MatRef<'_, f64>) -> Matrix {
        let data = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| m[(r, c)]))
            .collect();
        Matrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimum-norm least-squares solution together with its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub numeric_rank: usize,
    /// Largest over smallest *retained* singular value.
    pub condition: f64,
}

/// Singular values of `a`, sorted descending.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    check_finite(a)?;
    if a.rows == 0 || a.cols == 0 {
        return Ok(Vec::new());
    }
    Ok(thin_svd(a)?.1)
}

/// `A = U·diag(σ)·Vᵀ` with `σ` descending.
///
/// The bidiagonal iteration can stall on heavily repeated singular values
/// (a compacted `||k||·I` block has hundreds); a QR step first breaks the
/// structure up, so it is the fallback.
fn thin_svd(a: &Matrix) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    match a.to_faer().thin_svd() {
        Ok(svd) => Ok(split_svd(svd)),
        Err(_) => svd_via_qr(a),
    }
}

fn split_svd(svd: faer::linalg::solvers::Svd<f64>) -> (Mat<f64>, Vec<f64>, Mat<f64>) {
    let s = svd.S().column_vector().iter().copied().collect();
    (svd.U().to_owned(), s, svd.V().to_owned())
}

fn svd_via_qr(a: &Matrix) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let fail = |e| Error::NumericalFailure(format!("SVD did not converge: {e:?}"));
    let fa = a.to_faer();
    if a.rows >= a.cols {
        let qr = fa.qr();
        let (ur, s, v) = split_svd(qr.thin_R().thin_svd().map_err(fail)?);
        Ok((qr.compute_thin_Q() * ur, s, v))
    } else {
        let qr = fa.transpose().qr();
        let (vr, s, u) = split_svd(qr.thin_R().thin_svd().map_err(fail)?);
        Ok((u, s, qr.compute_thin_Q() * vr))
    }
}

fn check_finite(a: &Matrix) -> Result<()> {
    if !a.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    Ok(())
}

fn default_rcond(a: &Matrix) -> f64 {
    a.rows.max(a.cols) as f64 * f64::EPSILON
}

/// Solve `min ||A·x − b||₂` with minimum `||x||₂`.
///
/// Singular values at or below `rcond · σ_max` are treated as zero;
/// `rcond == 0` selects the default `max(rows, cols) · ε`.
pub fn pinv_solve(a: &Matrix, b: &[f64], rcond: f64) -> Result<LstsqSolution> {
    if a.rows != b.len() {
        return Err(Error::invalid(format!(
            "pinv_solve: A has {} rows but b has {} entries",
            a.rows,
            b.len()
        )));
    }
    if !(0.0..1.0).contains(&rcond) {
        return Err(Error::invalid(format!("rcond {rcond} not in [0, 1)")));
    }
    check_finite(a)?;
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("right-hand side has non-finite entries"));
    }
    let rcond = if rcond == 0.0 { default_rcond(a) } else { rcond };
    if a.cols == 0 {
        return Ok(LstsqSolution {
            x: Vec::new(),
            residual_norm: norm2(b),
            numeric_rank: 0,
            condition: 0.0,
        });
    }
    if a.rows == 0 {
        return Ok(LstsqSolution {
            x: vec![0.0; a.cols],
            residual_norm: 0.0,
            numeric_rank: 0,
            condition: 0.0,
        });
    }

    let (u, sigma, v) = thin_svd(a)?;
    let s_max = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * s_max;

    let mut x = vec![0.0; a.cols];
    let mut rank = 0;
    let mut s_min = f64::INFINITY;
    // Accumulate in index order so the sum is bit-stable.
    for (j, &s) in sigma.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        rank += 1;
        s_min = s_min.min(s);
        let coef = (0..a.rows).map(|i| u[(i, j)] * b[i]).sum::<f64>() / s;
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += coef * v[(i, j)];
        }
    }

    let ax = a.matvec(&x);
    let residual_norm = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    Ok(LstsqSolution {
        x,
        residual_norm,
        numeric_rank: rank,
        condition: if rank == 0 { 0.0 } else { s_max / s_min },
    })
}

/// Number of singular values strictly above `tol · σ_max`
/// (`tol == 0` selects `max(rows, cols) · ε`).
pub fn numeric_rank(a: &Matrix, tol: f64) -> Result<usize> {
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::invalid(format!("tolerance {tol} must be >= 0")));
    }
    let s = singular_values(a)?;
    let tol = if tol == 0.0 { default_rcond(a) } else { tol };
    let s_max = s.first().copied().unwrap_or(0.0);
    if s_max == 0.0 {
        return Ok(0);
    }
    Ok(s.iter().filter(|&&v| v > tol * s_max).count())
}

/// `σ_max / σ_min`, or `+∞` when the matrix is numerically rank-deficient.
pub fn condition_number(a: &Matrix) -> Result<f64> {
    let s = singular_values(a)?;
    let s_max = s.first().copied().unwrap_or(0.0);
    if s_max == 0.0 {
        return Err(Error::invalid("condition number of an all-zero matrix"));
    }
    let cutoff = default_rcond(a) * s_max;
    let full = a.rows.min(a.cols);
    let kept: Vec<f64> = s.into_iter().filter(|&v| v > cutoff).collect();
    if kept.len() < full {
        return Ok(f64::INFINITY);
    }
    Ok(s_max / kept[kept.len() - 1])
}

/// Solve `A·X = B` for square, nonsingular `A` by partial-pivot LU.
pub fn solve_square(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols || a.rows != b.rows {
        return Err(Error::invalid(format!(
            "solve_square: A is {}x{}, B has {} rows",
            a.rows, a.cols, b.rows
        )));
    }
    check_finite(a)?;
    check_finite(b)?;
    let lu = a.to_faer().partial_piv_lu();
    let u = lu.U();
    if (0..u.nrows()).any(|i| u[(i, i)] == 0.0) {
        return Err(Error::NumericalFailure("singular matrix".into()));
    }
    let x = Matrix::from_faer(lu.solve(b.to_faer()).as_ref());
    if !x.is_finite() {
        return Err(Error::NumericalFailure("singular matrix".into()));
    }
    Ok(x)
}
