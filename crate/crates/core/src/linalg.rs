//! Small dense matrices. Every matrix in this crate is at most 3x3, so the
//! routines here favour clarity over blocking or pivot heuristics.

use serde::Serialize;

use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| v * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    /// Solves `self * x = b` by Gaussian elimination with partial pivoting.
    /// Returns `None` when a pivot falls below `tol` relative to the matrix scale.
    pub fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(self.rows, b.len());
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.to_vec();
        let scale = a.max_abs().max(T::min_positive_value());
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| a[(i, k)].abs().partial_cmp(&a[(j, k)].abs()).unwrap())?;
            if a[(piv, k)].abs() <= scale * T::epsilon() * T::lit(16.0) {
                return None;
            }
            if piv != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(piv, j)];
                    a[(piv, j)] = tmp;
                }
                x.swap(k, piv);
            }
            for i in k + 1..n {
                let f = a[(i, k)] / a[(k, k)];
                for j in k..n {
                    a[(i, j)] = a[(i, j)] - f * a[(k, j)];
                }
                x[i] = x[i] - f * x[k];
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..n {
                s = s - a[(k, j)] * x[j];
            }
            x[k] = s / a[(k, k)];
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<Self> {
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let c = self.solve(&e)?;
            for i in 0..n {
                inv[(i, j)] = c[i];
            }
        }
        Some(inv)
    }

    /// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
    ///
    /// Eigenvalues come back in ascending order; column `k` of the returned
    /// matrix is the unit eigenvector for eigenvalue `k`.
    pub fn symmetric_eigen(&self) -> (Vec<T>, Self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut v = Self::identity(n);
        for _sweep in 0..64 {
            let off: T = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off <= T::min_positive_value() || off.sqrt() <= T::epsilon() * a.max_abs() * T::lit(1e-2) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap());
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Self::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            for r in 0..n {
                vectors[(r, k)] = v[(r, i)];
            }
        }
        (values, vectors)
    }
}

impl<T> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_spectrum() {
        let m = Mat::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]]);
        let (vals, vecs) = m.symmetric_eigen();
        assert!((vals[0] - 1.0_f64).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
        assert!((vals[2] - 5.0).abs() < 1e-14);
        for k in 0..3 {
            let v = vecs.col(k);
            let mv = m.matvec(&v);
            for i in 0..3 {
                assert!((mv[i] - vals[k] * v[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn solve_and_inverse() {
        let m = Mat::from_rows(&[vec![0.0, 2.0], vec![3.0, 1.0]]);
        let x = m.solve(&[4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0_f64).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        let inv = m.inverse().unwrap();
        let id = m.matmul(&inv);
        assert!(id.sub(&Mat::identity(2)).max_abs() < 1e-14);
        assert!(Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).solve(&[1.0, 1.0]).is_none());
    }
}
