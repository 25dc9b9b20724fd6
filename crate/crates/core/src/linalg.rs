//! Small dense linear algebra for the handful of 3x3 / 4x4 systems the
//! calibration, inversion, and fitting code needs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
pub type Matrix<T> = Vec<Vec<T>>;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve<T: Scalar>(a: &[Vec<T>], b: &[T]) -> Result<Vec<T>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidConfig("solve: dimension mismatch".into()));
    }
    let mut m: Vec<Vec<T>> = a
        .iter()
        .zip(b)
        .map(|(row, &rhs)| {
            let mut r = row.clone();
            r.push(rhs);
            r
        })
        .collect();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    if scale == T::zero() {
        return Err(Error::Singular);
    }
    let tiny = scale * T::epsilon() * T::lit(n as f64 * 16.0);

    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        if m[pivot][col].abs() <= tiny {
            return Err(Error::Singular);
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            if factor == T::zero() {
                continue;
            }
            for k in col..=n {
                let v = m[col][k];
                m[row][k] -= factor * v;
            }
        }
    }

    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Ok(x)
}

/// Inverse of a square matrix, column by column.
pub fn invert<T: Scalar>(a: &[Vec<T>]) -> Result<Matrix<T>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        cols.push(solve(a, &e)?);
    }
    Ok((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

pub fn transpose<T: Scalar>(a: &[Vec<T>]) -> Matrix<T> {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn mat_mul<T: Scalar>(a: &[Vec<T>], b: &[Vec<T>]) -> Matrix<T> {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).fold(T::zero(), |acc, k| acc + row[k] * b[k][j]))
                .collect()
        })
        .collect()
}

pub fn mat_vec<T: Scalar>(a: &[Vec<T>], x: &[T]) -> Vec<T> {
    a.iter()
        .map(|row| row.iter().zip(x).fold(T::zero(), |acc, (&r, &v)| acc + r * v))
        .collect()
}

/// Least-squares solution of an over-determined system via Householder QR.
///
/// `a` has `m >= n` rows. Returns the minimizer of `|a x - b|`.
pub fn least_squares<T: Scalar>(a: &[Vec<T>], b: &[T]) -> Result<Vec<T>> {
    let m = a.len();
    if m == 0 || b.len() != m {
        return Err(Error::InvalidConfig("least_squares: dimension mismatch".into()));
    }
    let n = a[0].len();
    if m < n {
        return Err(Error::InvalidConfig("least_squares: under-determined system".into()));
    }
    let mut r: Vec<Vec<T>> = a.to_vec();
    let mut qtb: Vec<T> = b.to_vec();
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::lit(m as f64 * 16.0);

    for k in 0..n {
        let norm = (k..m).fold(T::zero(), |acc, i| acc + r[i][k] * r[i][k]).sqrt();
        if norm <= tiny {
            return Err(Error::Singular);
        }
        let alpha = if r[k][k] > T::zero() { -norm } else { norm };
        let mut v: Vec<T> = (k..m).map(|i| r[i][k]).collect();
        v[0] -= alpha;
        let vnorm2 = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vnorm2 == T::zero() {
            continue;
        }
        for j in k..n {
            let dot = (k..m).fold(T::zero(), |acc, i| acc + v[i - k] * r[i][j]);
            let f = T::lit(2.0) * dot / vnorm2;
            for i in k..m {
                r[i][j] -= f * v[i - k];
            }
        }
        let dot = (k..m).fold(T::zero(), |acc, i| acc + v[i - k] * qtb[i]);
        let f = T::lit(2.0) * dot / vnorm2;
        for i in k..m {
            qtb[i] -= f * v[i - k];
        }
    }

    let mut x = vec![T::zero(); n];
    for row in (0..n).rev() {
        let mut acc = qtb[row];
        for k in row + 1..n {
            acc -= r[row][k] * x[k];
        }
        x[row] = acc / r[row][row];
    }
    Ok(x)
}
