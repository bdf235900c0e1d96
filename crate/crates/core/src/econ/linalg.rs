//! Dense column-major matrices and a column-pivoted Householder QR.

use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_columns(columns: &[Vec<T>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(Error::DimensionMismatch { expected: rows, actual: c.len() });
            }
            data.extend_from_slice(c);
        }
        Ok(Matrix { rows, cols: columns.len(), data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[c * self.rows + r] = v;
    }

    pub fn column(&self, c: usize) -> &[T] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    fn column_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![T::zero(); self.rows];
        for (c, &vc) in v.iter().enumerate() {
            if vc == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.column(c)) {
                *o = *o + a * vc;
            }
        }
        out
    }

    /// `self^T v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols).map(|c| self.column(c).iter().zip(v).map(|(&a, &b)| a * b).sum()).collect()
    }

    fn swap_columns(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for r in 0..self.rows {
            self.data.swap(a * self.rows + r, b * self.rows + r);
        }
    }
}

/// Relative tolerance on `|R_kk| / |R_00|` below which a column is treated
/// as linearly dependent on the ones before it.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ColPivQr<T> {
    factors: Matrix<T>,
    reflectors: Vec<(Vec<T>, T)>,
    perm: Vec<usize>,
    rank: usize,
}

impl<T: Scalar> ColPivQr<T> {
    pub fn new(a: &Matrix<T>) -> Self {
        Self::with_tolerance(a, T::lit(RANK_TOLERANCE))
    }

    pub fn with_tolerance(a: &Matrix<T>, tol: T) -> Self {
        let (n, p) = (a.rows(), a.cols());
        let mut m = a.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut reflectors = Vec::with_capacity(p.min(n));
        let steps = p.min(n);

        for k in 0..steps {
            // pivot: largest remaining sub-column norm
            let mut best = k;
            let mut best_norm = T::zero();
            for j in k..p {
                let s: T = m.column(j)[k..].iter().map(|&x| x * x).sum();
                if s > best_norm {
                    best_norm = s;
                    best = j;
                }
            }
            m.swap_columns(k, best);
            perm.swap(k, best);

            let x = &m.column(k)[k..];
            let norm_x = x.iter().map(|&v| v * v).sum::<T>().sqrt();
            let mut v = x.to_vec();
            let beta;
            if norm_x == T::zero() {
                beta = T::zero();
            } else {
                let alpha = if v[0] >= T::zero() { -norm_x } else { norm_x };
                v[0] = v[0] - alpha;
                let vtv: T = v.iter().map(|&e| e * e).sum();
                beta = if vtv == T::zero() { T::zero() } else { T::lit(2.0) / vtv };
            }
            if beta != T::zero() {
                for j in k..p {
                    let col = &mut m.column_mut(j)[k..];
                    let s = beta * col.iter().zip(&v).map(|(&c, &e)| c * e).sum::<T>();
                    for (c, &e) in col.iter_mut().zip(&v) {
                        *c = *c - s * e;
                    }
                }
            }
            for r in k + 1..n {
                m.set(r, k, T::zero());
            }
            reflectors.push((v, beta));
        }

        let lead = if steps > 0 { m.get(0, 0).abs() } else { T::zero() };
        let rank = if lead == T::zero() { 0 } else { (0..steps).take_while(|&k| m.get(k, k).abs() > tol * lead).count() };
        ColPivQr { factors: m, reflectors, perm, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.factors.cols()
    }

    /// Original column indices judged dependent on earlier pivots.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    fn apply_qt(&self, y: &[T]) -> Vec<T> {
        let mut out = y.to_vec();
        for (k, (v, beta)) in self.reflectors.iter().enumerate() {
            if *beta == T::zero() {
                continue;
            }
            let tail = &mut out[k..];
            let s = *beta * tail.iter().zip(v).map(|(&a, &b)| a * b).sum::<T>();
            for (t, &e) in tail.iter_mut().zip(v) {
                *t = *t - s * e;
            }
        }
        out
    }

    /// Least-squares solution of `A x = y`; requires full column rank.
    pub fn solve(&self, y: &[T]) -> Result<Vec<T>> {
        let p = self.factors.cols();
        if !self.is_full_rank() {
            return Err(Error::RankDeficient { columns: self.dependent_columns().iter().map(|c| c.to_string()).collect() });
        }
        let qty = self.apply_qt(y);
        let mut z = vec![T::zero(); p];
        for i in (0..p).rev() {
            let mut s = qty[i];
            for j in i + 1..p {
                s = s - self.factors.get(i, j) * z[j];
            }
            z[i] = s / self.factors.get(i, i);
        }
        let mut x = vec![T::zero(); p];
        for (k, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[k];
        }
        Ok(x)
    }

    /// Diagonal of `(A^T A)^{-1}` in original column order.
    pub fn inverse_gram_diagonal(&self) -> Result<Vec<T>> {
        let p = self.factors.cols();
        if !self.is_full_rank() {
            return Err(Error::RankDeficient { columns: self.dependent_columns().iter().map(|c| c.to_string()).collect() });
        }
        // R^{-1} by back substitution, column by column.
        let mut rinv = Matrix::zeros(p, p);
        for c in 0..p {
            for i in (0..=c).rev() {
                let mut s = if i == c { T::one() } else { T::zero() };
                for j in i + 1..=c {
                    s = s - self.factors.get(i, j) * rinv.get(j, c);
                }
                rinv.set(i, c, s / self.factors.get(i, i));
            }
        }
        // (A^T A)^{-1} = P R^{-1} R^{-T} P^T; diagonal entry k is the squared norm of row k of R^{-1}.
        let mut diag = vec![T::zero(); p];
        for (k, &orig) in self.perm.iter().enumerate() {
            diag[orig] = (k..p).map(|c| rinv.get(k, c) * rinv.get(k, c)).sum();
        }
        Ok(diag)
    }
}
