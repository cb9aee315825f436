//! Dense least squares and banded Cholesky, sized for this crate's needs.
//!
//! The regression module solves tall weighted Vandermonde systems (a few
//! hundred rows by a couple hundred columns), and the finite-difference
//! solvers factor symmetric positive definite matrices whose bandwidth is
//! one grid line. Both are small enough that straightforward, allocation
//! conscious implementations beat pulling in a full linear algebra stack.

use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is rank deficient: numerical rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {value:e} in row {row})")]
    NotPositiveDefinite { row: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("non-finite entry encountered during factorization")]
    NonFinite,
}

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    pub fn col(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn col_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    /// `self * x` for a vector `x` of length `cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for c in 0..self.cols {
            let col = self.col(c);
            let xc = x[c];
            for (yi, &a) in y.iter_mut().zip(col) {
                *yi += a * xc;
            }
        }
        y
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, &x| {
        let ax = libm::fabs(x);
        if ax > m {
            ax
        } else {
            m
        }
    })
}

/// Result of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    /// `cols x nrhs` solution block.
    pub solution: Matrix,
    /// Numerical rank at the supplied tolerance.
    pub rank: usize,
    /// Ratio of largest to smallest retained diagonal of `R`; a cheap
    /// condition indicator, not a rigorous condition number.
    pub condition: f64,
    /// Euclidean residual norm per right-hand side.
    pub residual_norms: Vec<f64>,
}

/// Solves `min ||A X - B||` column by column via Householder QR with column
/// pivoting. Consumes both operands (the factorization overwrites them).
///
/// Columns whose pivot falls below `rank_tol` times the first pivot are
/// considered dependent; any rank deficiency is reported as an error rather
/// than silently projected away.
pub fn solve_least_squares(
    mut a: Matrix,
    mut b: Matrix,
    rank_tol: f64,
) -> Result<LeastSquares, LinalgError> {
    let (rows, cols, nrhs) = (a.rows, a.cols, b.cols);
    if b.rows != rows {
        return Err(LinalgError::Shape("rhs row count differs from matrix"));
    }
    if cols == 0 || rows == 0 {
        return Err(LinalgError::Shape("empty system"));
    }
    if !a.data.iter().all(|v| v.is_finite()) || !b.data.iter().all(|v| v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }

    let kmax = usize::min(rows, cols);
    let mut perm: Vec<usize> = (0..cols).collect();
    let mut diag = vec![0.0f64; kmax];
    let mut v = vec![0.0f64; rows];
    let mut rank = kmax;

    for k in 0..kmax {
        // Freshly computed trailing column norms keep the pivot decision
        // honest even after heavy cancellation.
        let mut best = k;
        let mut best_norm = -1.0;
        for j in k..cols {
            let s = dot(&a.col(j)[k..], &a.col(j)[k..]);
            if s > best_norm {
                best_norm = s;
                best = j;
            }
        }
        if best != k {
            swap_cols(&mut a.data, rows, k, best);
            perm.swap(k, best);
        }

        let norm = libm::sqrt(best_norm);
        if !norm.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        if k > 0 && norm <= rank_tol * libm::fabs(diag[0]) {
            rank = k;
            break;
        }
        if norm == 0.0 {
            rank = k;
            break;
        }

        let alpha = if a.get(k, k) >= 0.0 { -norm } else { norm };
        let tail = &a.col(k)[k..];
        v[k..rows].copy_from_slice(tail);
        v[k] -= alpha;
        let beta = dot(&v[k..rows], &v[k..rows]);
        diag[k] = alpha;
        {
            let ck = a.col_mut(k);
            ck[k] = alpha;
            for item in ck[k + 1..].iter_mut() {
                *item = 0.0;
            }
        }
        if beta == 0.0 {
            continue;
        }
        for j in k + 1..cols {
            let cj = a.col_mut(j);
            let w = 2.0 * dot(&v[k..rows], &cj[k..]) / beta;
            for (ci, &vi) in cj[k..].iter_mut().zip(&v[k..rows]) {
                *ci -= w * vi;
            }
        }
        for j in 0..nrhs {
            let cj = b.col_mut(j);
            let w = 2.0 * dot(&v[k..rows], &cj[k..]) / beta;
            for (ci, &vi) in cj[k..].iter_mut().zip(&v[k..rows]) {
                *ci -= w * vi;
            }
        }
    }

    if rank < cols {
        return Err(LinalgError::RankDeficient { rank, cols });
    }

    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for &d in &diag[..rank] {
        let ad = libm::fabs(d);
        dmin = dmin.min(ad);
        dmax = dmax.max(ad);
    }
    let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };

    let mut solution = Matrix::zeros(cols, nrhs);
    let mut residual_norms = vec![0.0f64; nrhs];
    let mut y = vec![0.0f64; cols];
    for j in 0..nrhs {
        let bj = b.col(j);
        for (yk, &bk) in y.iter_mut().zip(bj) {
            *yk = bk;
        }
        for k in (0..cols).rev() {
            let mut s = y[k];
            for i in k + 1..cols {
                s -= a.get(k, i) * y[i];
            }
            y[k] = s / diag[k];
        }
        for k in 0..cols {
            solution.set(perm[k], j, y[k]);
        }
        residual_norms[j] = norm2(&bj[cols..]);
    }

    Ok(LeastSquares {
        solution,
        rank,
        condition,
        residual_norms,
    })
}

fn swap_cols(data: &mut [f64], rows: usize, i: usize, j: usize) {
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let (head, tail) = data.split_at_mut(hi * rows);
    head[lo * rows..(lo + 1) * rows].swap_with_slice(&mut tail[..rows]);
}

/// Symmetric banded matrix, lower part stored column-major: entry `(i, j)`
/// with `j <= i <= j + bandwidth` lives at `j * (bandwidth + 1) + (i - j)`.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    bandwidth: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        BandedMatrix {
            n,
            bandwidth,
            data: vec![0.0; n * (bandwidth + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Adds `v` to the symmetric entry `(i, j)`; only the lower triangle is
    /// stored, so `(i, j)` and `(j, i)` are the same slot.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            hi - lo <= self.bandwidth,
            "entry ({i}, {j}) is outside bandwidth {}",
            self.bandwidth
        );
        self.data[lo * (self.bandwidth + 1) + (hi - lo)] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bandwidth {
            return 0.0;
        }
        self.data[lo * (self.bandwidth + 1) + (hi - lo)]
    }

    /// In-place Cholesky factorization `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandedCholesky, LinalgError> {
        let (n, bw) = (self.n, self.bandwidth);
        let w = bw + 1;
        for j in 0..n {
            let kmin = j.saturating_sub(bw);
            let mut s = self.data[j * w];
            for k in kmin..j {
                let l = self.data[k * w + (j - k)];
                s -= l * l;
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(LinalgError::NotPositiveDefinite { row: j, value: s });
            }
            let ljj = libm::sqrt(s);
            self.data[j * w] = ljj;
            let imax = usize::min(n - 1, j + bw);
            for i in j + 1..=imax {
                let kmin_i = i.saturating_sub(bw);
                let mut s = self.data[j * w + (i - j)];
                for k in usize::max(kmin, kmin_i)..j {
                    s -= self.data[k * w + (i - k)] * self.data[k * w + (j - k)];
                }
                self.data[j * w + (i - j)] = s / ljj;
            }
        }
        Ok(BandedCholesky {
            n,
            bandwidth: bw,
            l: self.data,
        })
    }
}

/// Cholesky factor of a banded SPD matrix; reusable across many solves.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        assert_eq!(rhs.len(), self.n);
        let (n, bw, w) = (self.n, self.bandwidth, self.bandwidth + 1);
        for j in 0..n {
            let x = rhs[j] / self.l[j * w];
            rhs[j] = x;
            let imax = usize::min(n - 1, j + bw);
            for i in j + 1..=imax {
                rhs[i] -= self.l[j * w + (i - j)] * x;
            }
        }
        for j in (0..n).rev() {
            let imax = usize::min(n - 1, j + bw);
            let mut s = rhs[j];
            for i in j + 1..=imax {
                s -= self.l[j * w + (i - j)] * rhs[i];
            }
            rhs[j] = s / self.l[j * w];
        }
    }
}
