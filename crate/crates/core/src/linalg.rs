//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;

pub fn identity(d: usize) -> Mat {
    Mat::identity(d, d)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let c = rows[0].len();
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidInput("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn diag(values: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(values))
}

pub fn rotation(angle: f64) -> Mat {
    let (s, c) = angle.sin_cos();
    Mat::from_row_slice(2, 2, &[c, -s, s, c])
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Spectral norm.
pub fn op_norm(m: &Mat) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Smallest singular value (the conorm for square matrices).
pub fn conorm(m: &Mat) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn condition(m: &Mat) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        _ => f64::INFINITY,
    }
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidInput("inverse of non-square matrix".into()));
    }
    let inv = m.clone().try_inverse().ok_or(Error::Singular)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(inv)
}

/// Solves `a * x = b`.
pub fn solve(a: &Mat, b: &Mat) -> Result<Mat> {
    a.clone().lu().solve(b).ok_or(Error::Singular)
}

pub fn power(m: &Mat, n: u32) -> Mat {
    let mut result = identity(m.nrows());
    let mut base = m.clone();
    let mut e = n;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        base = &base * &base;
        e >>= 1;
    }
    result
}

/// QR factorization with non-negative diagonal in R.
pub fn qr_positive(m: &Mat) -> (Mat, Mat) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)] < 0.0 {
            for j in 0..r.ncols() {
                r[(i, j)] = -r[(i, j)];
            }
            for j in 0..q.nrows() {
                q[(j, i)] = -q[(j, i)];
            }
        }
    }
    (q, r)
}

/// Orthonormal basis of the column span (assumes full column rank).
pub fn orthonormalize(m: &Mat) -> Mat {
    qr_positive(m).0
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex64> {
    let d = m.nrows();
    if d == 1 {
        return vec![Complex64::new(m[(0, 0)], 0.0)];
    }
    let mut ev: Vec<Complex64> = m.clone().complex_eigenvalues().iter().copied().collect();
    sort_spectrum(&mut ev);
    ev
}

/// Sorts by (modulus, argument) ascending.
pub fn sort_spectrum(ev: &mut [Complex64]) {
    ev.sort_by(|a, b| {
        let (ma, mb) = (a.norm(), b.norm());
        if (ma - mb).abs() > 1e-12 * ma.max(mb).max(1.0) {
            ma.partial_cmp(&mb).unwrap()
        } else {
            a.arg().partial_cmp(&b.arg()).unwrap()
        }
    });
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Numerical rank with relative singular-value tolerance.
pub fn complex_rank(m: &CMat, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let scale = s.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    s.iter().filter(|&&v| v > tol * scale).count()
}

/// Orthonormal basis of the numerical null space of a square complex matrix.
pub fn complex_null_space(m: &CMat, tol: f64) -> CMat {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let s = &svd.singular_values;
    let scale = s.iter().cloned().fold(0.0f64, f64::max).max(1.0);
    let mut cols = Vec::new();
    for (i, &sv) in s.iter().enumerate() {
        if sv <= tol * scale {
            cols.push(v_t.row(i).transpose().map(|z| z.conj()));
        }
    }
    for i in s.len()..n {
        cols.push(v_t.row(i).transpose().map(|z| z.conj()));
    }
    if cols.is_empty() {
        return CMat::zeros(n, 0);
    }
    CMat::from_columns(&cols)
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Ordinary least squares fit of y = a + b x; returns (a, b, rms residual).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    (a, b, (rss / n).sqrt())
}

/// Serializes a matrix as a list of rows.
pub fn ser_mat<S: serde::Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    to_rows(m).serialize(s)
}

pub fn ser_mats<S: serde::Serializer>(ms: &[Mat], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    ms.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
}

pub fn ser_opt_mat<S: serde::Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    m.as_ref().map(to_rows).serialize(s)
}

pub fn ser_vector<S: serde::Serializer>(v: &Vector, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    v.iter().copied().collect::<Vec<f64>>().serialize(s)
}

/// Serializes complex numbers as `[re, im]` pairs.
pub fn ser_complex<S: serde::Serializer>(zs: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::Serialize;
    zs.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_of_diagonal() {
        let m = diag(&[3.0, -5.0, 0.5]);
        assert!((op_norm(&m) - 5.0).abs() < 1e-14);
        assert!((conorm(&m) - 0.5).abs() < 1e-14);
        assert!((condition(&m) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn qr_has_positive_diagonal() {
        let m = Mat::from_row_slice(2, 2, &[-1.0, 2.0, 3.0, -4.0]);
        let (q, r) = qr_positive(&m);
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        assert!(max_abs_diff(&(&q * &r), &m) < 1e-13);
    }

    #[test]
    fn power_matches_repeated_product() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let p = power(&m, 5);
        let mut q = identity(2);
        for _ in 0..5 {
            q = &q * &m;
        }
        assert!(max_abs_diff(&p, &q) < 1e-12);
    }

    #[test]
    fn null_space_of_jordan_block() {
        let m = to_complex(&Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        let n = complex_null_space(&m, 1e-12);
        assert_eq!(n.ncols(), 1);
        assert!(n[(1, 0)].norm() < 1e-12);
    }

    #[test]
    fn spectrum_sorted_by_modulus() {
        let ev = eigenvalues(&diag(&[4.0, 0.25, -1.0]));
        assert!((ev[0].re - 0.25).abs() < 1e-12);
        assert!((ev[2].re - 4.0).abs() < 1e-12);
    }
}
