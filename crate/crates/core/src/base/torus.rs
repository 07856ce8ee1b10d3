//! Hyperbolic toral automorphisms and exact rational periodic points.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::intmat::{self, IMat, RationalFactor};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: i128, b: i128) -> i128 {
    a / gcd(a, b) * b
}

/// A point of `[0,1)^d` with rational coordinates `num[i] / den`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RationalPoint {
    num: Vec<i128>,
    den: i128,
}

impl RationalPoint {
    pub fn new(num: Vec<i128>, den: i128) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidInput("zero denominator".into()));
        }
        Ok(Self::normalized(num, den))
    }

    fn normalized(mut num: Vec<i128>, mut den: i128) -> Self {
        if den < 0 {
            den = -den;
            num.iter_mut().for_each(|v| *v = -*v);
        }
        num.iter_mut().for_each(|v| *v = v.rem_euclid(den));
        let g = num.iter().fold(den, |g, &v| gcd(g, v));
        RationalPoint { num: num.iter().map(|v| v / g).collect(), den: den / g }
    }

    pub fn origin(d: usize) -> Self {
        RationalPoint { num: vec![0; d], den: 1 }
    }

    pub fn numerators(&self) -> &[i128] {
        &self.num
    }

    pub fn denominator(&self) -> i128 {
        self.den
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.num.iter().map(|&v| v as f64 / self.den as f64).collect()
    }

    pub fn apply(&self, m: &IMat) -> Self {
        Self::normalized(intmat::mul_vec(m, &self.num), self.den)
    }
}

impl fmt::Display for RationalPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .num
            .iter()
            .map(|&v| {
                let g = gcd(v, self.den);
                format!("{}/{}", v / g, self.den / g)
            })
            .collect();
        write!(f, "({})", parts.join(", "))
    }
}

impl std::str::FromStr for RationalPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('(').trim_end_matches(')');
        let mut fracs = Vec::new();
        for part in inner.split(',') {
            let part = part.trim();
            let (a, b) = part.split_once('/').unwrap_or((part, "1"));
            let a: i128 = a.trim().parse().map_err(|_| Error::Parse(format!("bad fraction `{part}`")))?;
            let b: i128 = b.trim().parse().map_err(|_| Error::Parse(format!("bad fraction `{part}`")))?;
            if b == 0 {
                return Err(Error::Parse("zero denominator".into()));
            }
            fracs.push((a, b));
        }
        let den = fracs.iter().fold(1i128, |l, &(_, b)| lcm(l, b.abs()));
        let num = fracs.iter().map(|&(a, b)| a * (den / b)).collect();
        RationalPoint::new(num, den)
    }
}

/// Integer matrix with determinant `±1` and no eigenvalue on the unit circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToralAutomorphism {
    matrix: IMat,
}

pub const HYPERBOLICITY_TOL: f64 = 1e-8;

impl ToralAutomorphism {
    pub fn new(rows: Vec<Vec<i64>>) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("toral automorphism must be square".into()));
        }
        let matrix: IMat = rows.iter().map(|r| r.iter().map(|&v| v as i128).collect()).collect();
        if intmat::det(&matrix).abs() != 1 {
            return Err(Error::InvalidInput("determinant must be ±1".into()));
        }
        let l = ToralAutomorphism { matrix };
        if l.eigenvalues().iter().any(|z| (z.norm() - 1.0).abs() < HYPERBOLICITY_TOL) {
            return Err(Error::InvalidInput("not hyperbolic: eigenvalue of modulus 1".into()));
        }
        Ok(l)
    }

    pub fn cat_map() -> Self {
        ToralAutomorphism::new(vec![vec![2, 1], vec![1, 1]]).unwrap()
    }

    /// Block-diagonal sum.
    pub fn block_sum(&self, other: &ToralAutomorphism) -> Result<Self> {
        let (a, b) = (self.dim(), other.dim());
        let rows = (0..a + b)
            .map(|i| {
                (0..a + b)
                    .map(|j| {
                        if i < a && j < a {
                            self.matrix[i][j] as i64
                        } else if i >= a && j >= a {
                            other.matrix[i - a][j - a] as i64
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        ToralAutomorphism::new(rows)
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    pub fn matrix(&self) -> &IMat {
        &self.matrix
    }

    pub fn as_mat(&self) -> Mat {
        intmat::to_f64(&self.matrix)
    }

    pub fn eigenvalues(&self) -> Vec<num_complex::Complex64> {
        linalg::eigenvalues(&self.as_mat())
    }

    pub fn char_poly(&self) -> Vec<i128> {
        intmat::char_poly(&self.matrix)
    }

    /// Fixed points of `L^n` (solutions of `(L^n - I) x ∈ Z^d` in `[0,1)^d`).
    pub fn fixed_points(&self, n: u32, cap: usize) -> Result<Vec<RationalPoint>> {
        let d = self.dim();
        let mut a = intmat::power(&self.matrix, n);
        for (i, row) in a.iter_mut().enumerate() {
            row[i] -= 1;
        }
        let (diag, v) = intmat::smith_normal_form(&a);
        if diag.contains(&0) {
            return Err(Error::InvalidInput("L^n - I is singular".into()));
        }
        let dabs: Vec<i128> = diag.iter().map(|x| x.abs()).collect();
        let count: i128 = dabs.iter().product();
        if count as u128 > cap as u128 {
            return Err(Error::CapacityExceeded { count: count as usize, cap });
        }
        let den = dabs.iter().fold(1i128, |l, &x| lcm(l, x));
        let mut out = Vec::with_capacity(count as usize);
        let mut k = vec![0i128; d];
        loop {
            let y: Vec<i128> = (0..d).map(|i| k[i] * (den / dabs[i])).collect();
            out.push(RationalPoint::normalized(intmat::mul_vec(&v, &y), den));
            let mut i = 0;
            loop {
                if i == d {
                    return Ok(out);
                }
                k[i] += 1;
                if k[i] < dabs[i] {
                    break;
                }
                k[i] = 0;
                i += 1;
            }
        }
    }

    /// `|det(L^n - I)|`.
    pub fn fixed_point_count(&self, n: u32) -> i128 {
        let mut a = intmat::power(&self.matrix, n);
        for (i, row) in a.iter_mut().enumerate() {
            row[i] -= 1;
        }
        intmat::det(&a).abs()
    }

    /// Orbits of minimal period `n`, represented by their lexicographically smallest point.
    pub fn orbits_of_period(&self, n: usize, cap: usize) -> Result<Vec<RationalPoint>> {
        let pts = self.fixed_points(n as u32, cap)?;
        let divisors: Vec<usize> = (1..n).filter(|k| n % k == 0).collect();
        let powers: Vec<IMat> = divisors.iter().map(|&k| intmat::power(&self.matrix, k as u32)).collect();
        let mut reps: Vec<RationalPoint> = pts
            .into_iter()
            .filter(|p| powers.iter().all(|m| &p.apply(m) != p))
            .filter(|p| {
                let mut q = p.apply(&self.matrix);
                for _ in 1..n {
                    if &q < p {
                        return false;
                    }
                    q = q.apply(&self.matrix);
                }
                true
            })
            .collect();
        reps.sort();
        Ok(reps)
    }

    /// Closes a pseudo-orbit: `p = (L^n - I)^{-1} m` with `m` the rounded lattice
    /// displacement of `L^n x - x`, solved exactly.
    pub fn close(&self, x: &[f64], n: u32) -> Result<(RationalPoint, Vec<i128>)> {
        let d = self.dim();
        let ln = intmat::power(&self.matrix, n);
        let lx: Vec<f64> = (0..d).map(|i| (0..d).map(|j| ln[i][j] as f64 * x[j]).sum()).collect();
        let m: Vec<i128> = (0..d).map(|i| (lx[i] - x[i]).round() as i128).collect();
        let mut a = ln.clone();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] -= 1;
        }
        let det = intmat::det(&a);
        if det == 0 {
            return Err(Error::Singular);
        }
        let adj = adjugate(&a);
        let num = intmat::mul_vec(&adj, &m);
        Ok((RationalPoint::new(num, det)?, m))
    }

    pub fn weak_irreducibility(&self) -> Result<WeakIrreducibility> {
        let factors = intmat::factor_over_rationals(&self.char_poly())?;
        let sets: Vec<Vec<f64>> = factors.iter().map(|f| intmat::distinct_moduli(&f.root_moduli, 1e-10)).collect();
        let same = sets.windows(2).all(|w| {
            w[0].len() == w[1].len() && w[0].iter().zip(&w[1]).all(|(a, b)| (a - b).abs() <= 1e-10 * a.max(1.0))
        });
        Ok(WeakIrreducibility { weakly_irreducible: same, factors })
    }
}

fn adjugate(a: &IMat) -> IMat {
    let n = a.len();
    if n == 1 {
        return vec![vec![1]];
    }
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let minor: IMat = (0..n)
                        .filter(|&r| r != j)
                        .map(|r| (0..n).filter(|&c| c != i).map(|c| a[r][c]).collect())
                        .collect();
                    let s = if (i + j) % 2 == 0 { 1 } else { -1 };
                    s * intmat::det(&minor)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct WeakIrreducibility {
    pub weakly_irreducible: bool,
    pub factors: Vec<RationalFactor>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_map_single_fixed_point() {
        let l = ToralAutomorphism::cat_map();
        let pts = l.fixed_points(1, 100).unwrap();
        assert_eq!(pts, vec![RationalPoint::origin(2)]);
    }

    #[test]
    fn fixed_point_counts_match_determinant() {
        let l = ToralAutomorphism::cat_map();
        for n in 1..=8 {
            let pts = l.fixed_points(n, 1 << 20).unwrap();
            assert_eq!(pts.len() as i128, l.fixed_point_count(n));
            for p in &pts {
                assert_eq!(&p.apply(&intmat::power(l.matrix(), n)), p);
            }
        }
    }

    #[test]
    fn rational_point_text() {
        let p: RationalPoint = "(1/5, 2/5)".parse().unwrap();
        assert_eq!(p.to_string(), "(1/5, 2/5)");
        assert_eq!(p.denominator(), 5);
    }

    #[test]
    fn closing_pseudo_orbit() {
        let l = ToralAutomorphism::cat_map();
        let (p, _) = l.close(&[0.2 + 1e-7, 0.4 - 2e-7], 2).unwrap();
        let p2 = p.apply(&intmat::power(l.matrix(), 2));
        assert_eq!(p, p2);
    }

    #[test]
    fn rejects_elliptic() {
        assert!(ToralAutomorphism::new(vec![vec![0, -1], vec![1, 0]]).is_err());
    }

    #[test]
    fn weak_irreducibility_examples() {
        let a = ToralAutomorphism::cat_map();
        assert!(a.weak_irreducibility().unwrap().weakly_irreducible);
        assert!(a.block_sum(&a).unwrap().weak_irreducibility().unwrap().weakly_irreducible);
        let b = ToralAutomorphism::new(vec![vec![3, 1], vec![2, 1]]).unwrap();
        assert!(!a.block_sum(&b).unwrap().weak_irreducibility().unwrap().weakly_irreducible);
    }
}
