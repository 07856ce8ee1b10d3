//! Exact integer matrices and polynomials.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub type IMat = Vec<Vec<i128>>;

pub fn identity(d: usize) -> IMat {
    (0..d).map(|i| (0..d).map(|j| (i == j) as i128).collect()).collect()
}

pub fn mul(a: &IMat, b: &IMat) -> IMat {
    let n = a.len();
    let m = b[0].len();
    let k = b.len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

pub fn mul_vec(a: &IMat, v: &[i128]) -> Vec<i128> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

pub fn power(a: &IMat, n: u32) -> IMat {
    let mut r = identity(a.len());
    for _ in 0..n {
        r = mul(&r, a);
    }
    r
}

pub fn to_f64(a: &IMat) -> Mat {
    let d = a.len();
    Mat::from_fn(d, a[0].len(), |i, j| a[i][j] as f64)
}

/// Determinant by fraction-free Bareiss elimination.
pub fn det(a: &IMat) -> i128 {
    let n = a.len();
    if n == 0 {
        return 1;
    }
    let mut m = a.clone();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k][k] == 0 {
            match (k + 1..n).find(|&i| m[i][k] != 0) {
                Some(i) => {
                    m.swap(i, k);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
        }
        prev = m[k][k];
    }
    sign * m[n - 1][n - 1]
}

/// Diagonal reduction `U A V = diag(d)` with unimodular `U`, `V`; returns `(d, V)`.
/// The diagonal satisfies the Smith divisibility chain.
pub fn smith_normal_form(a: &IMat) -> (Vec<i128>, IMat) {
    let n = a.len();
    let mut m = a.clone();
    let mut v = identity(n);
    for t in 0..n {
        loop {
            let mut pivot = None;
            for i in t..n {
                for j in t..n {
                    if m[i][j] != 0 && pivot.is_none_or(|(pi, pj): (usize, usize)| m[i][j].abs() < m[pi][pj].abs()) {
                        pivot = Some((i, j));
                    }
                }
            }
            let Some((pi, pj)) = pivot else {
                return ((0..n).map(|i| m[i][i]).collect(), v);
            };
            m.swap(t, pi);
            for row in m.iter_mut() {
                row.swap(t, pj);
            }
            for row in v.iter_mut() {
                row.swap(t, pj);
            }
            let p = m[t][t];
            let mut clean = true;
            for i in t + 1..n {
                let q = m[i][t] / p;
                if q != 0 {
                    for j in t..n {
                        m[i][j] -= q * m[t][j];
                    }
                }
                clean &= m[i][t] == 0;
            }
            for j in t + 1..n {
                let q = m[t][j] / p;
                if q != 0 {
                    for i in 0..n {
                        m[i][j] -= q * m[i][t];
                    }
                    for row in v.iter_mut() {
                        row[j] -= q * row[t];
                    }
                }
                clean &= m[t][j] == 0;
            }
            if !clean {
                continue;
            }
            let bad = (t + 1..n).find(|&i| (t + 1..n).any(|j| m[i][j] % p != 0));
            match bad {
                Some(i) => {
                    for j in t..n {
                        m[t][j] += m[i][j];
                    }
                }
                None => break,
            }
        }
    }
    ((0..n).map(|i| m[i][i]).collect(), v)
}

/// Characteristic polynomial `det(xI - A)`, coefficients from the constant term up
/// (monic, length d + 1), by Faddeev-LeVerrier with exact division.
pub fn char_poly(a: &IMat) -> Vec<i128> {
    let n = a.len();
    let mut coeffs = vec![0i128; n + 1];
    coeffs[n] = 1;
    let mut mk = identity(n);
    let mut c_prev = 1i128;
    for k in 1..=n {
        if k > 1 {
            let am = mul(a, &mk);
            mk = am;
            for (i, row) in mk.iter_mut().enumerate() {
                row[i] += c_prev;
            }
        }
        let amk = mul(a, &mk);
        let tr: i128 = (0..n).map(|i| amk[i][i]).sum();
        let c = -tr / k as i128;
        coeffs[n - k] = c;
        c_prev = c;
    }
    coeffs
}

/// Exact division of monic integer polynomials; `None` if the remainder is nonzero.
pub fn poly_div_exact(p: &[i128], d: &[i128]) -> Option<Vec<i128>> {
    let dn = d.len() - 1;
    if p.len() < d.len() || d[dn] != 1 {
        return None;
    }
    let mut r = p.to_vec();
    let qn = p.len() - d.len();
    let mut q = vec![0i128; qn + 1];
    for k in (0..=qn).rev() {
        let c = r[k + dn];
        q[k] = c;
        for j in 0..=dn {
            r[k + j] -= c * d[j];
        }
    }
    if r.iter().all(|&c| c == 0) {
        Some(q)
    } else {
        None
    }
}

pub fn poly_roots(p: &[i128]) -> Vec<Complex64> {
    let n = p.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![Complex64::new(-p[0] as f64, 0.0)];
    }
    let companion = Mat::from_fn(n, n, |i, j| {
        if j == n - 1 {
            -(p[i] as f64)
        } else if i == j + 1 {
            1.0
        } else {
            0.0
        }
    });
    companion.complex_eigenvalues().iter().copied().collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RationalFactor {
    /// Coefficients from the constant term up.
    pub coefficients: Vec<i128>,
    pub root_moduli: Vec<f64>,
}

/// Factors a monic integer polynomial into irreducibles over the rationals by
/// searching conjugate-closed root subsets whose product has integer coefficients.
pub fn factor_over_rationals(p: &[i128]) -> Result<Vec<RationalFactor>> {
    let mut rest = p.to_vec();
    let mut roots = poly_roots(p);
    let mut factors = Vec::new();
    while rest.len() > 1 {
        let n = roots.len();
        let mut found = None;
        'size: for size in 1..=n {
            let mut idx: Vec<usize> = (0..size).collect();
            loop {
                if let Some(cand) = integer_poly_from_roots(&idx.iter().map(|&i| roots[i]).collect::<Vec<_>>()) {
                    if let Some(q) = poly_div_exact(&rest, &cand) {
                        found = Some((idx.clone(), cand, q));
                        break 'size;
                    }
                }
                if !next_combination(&mut idx, n) {
                    break;
                }
            }
        }
        let (idx, cand, q) = found.ok_or_else(|| Error::InvalidInput("factorization failed".into()))?;
        let mut moduli: Vec<f64> = poly_roots(&cand).iter().map(|z| z.norm()).collect();
        moduli.sort_by(|a, b| a.partial_cmp(b).unwrap());
        factors.push(RationalFactor { coefficients: cand, root_moduli: moduli });
        for &i in idx.iter().rev() {
            roots.remove(i);
        }
        rest = q;
    }
    Ok(factors)
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn integer_poly_from_roots(roots: &[Complex64]) -> Option<Vec<i128>> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i + 1] += ci;
            next[i] -= ci * r;
        }
        c = next;
    }
    let mut out = Vec::with_capacity(c.len());
    for z in c {
        let rounded = z.re.round();
        let scale = z.re.abs().max(1.0);
        if (z.re - rounded).abs() > 1e-6 * scale || z.im.abs() > 1e-6 * scale {
            return None;
        }
        out.push(rounded as i128);
    }
    Some(out)
}

/// Distinct values of a sorted list, merged within `tol`.
pub fn distinct_moduli(moduli: &[f64], tol: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &m in moduli {
        if out.last().is_none_or(|&l| (m - l).abs() > tol * l.max(1.0)) {
            out.push(m);
        }
    }
    out
}
