//! Smooth perturbations of hyperbolic toral automorphisms.

use std::f64::consts::PI;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use super::torus::ToralAutomorphism;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

/// `amplitude * sin(2π k·x + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: Vec<f64>,
    pub frequency: Vec<i64>,
    pub phase: f64,
}

impl TrigTerm {
    pub fn sin(amplitude: Vec<f64>, frequency: Vec<i64>) -> Self {
        TrigTerm { amplitude, frequency, phase: 0.0 }
    }

    pub fn cos(amplitude: Vec<f64>, frequency: Vec<i64>) -> Self {
        TrigTerm { amplitude, frequency, phase: PI / 2.0 }
    }

    fn angle(&self, x: &Vector) -> f64 {
        2.0 * PI * self.frequency.iter().zip(x.iter()).map(|(&k, &v)| k as f64 * v).sum::<f64>() + self.phase
    }

    fn c1_size(&self) -> f64 {
        let a = self.amplitude.iter().map(|v| v * v).sum::<f64>().sqrt();
        let k = self.frequency.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
        a * 2.0 * PI * k
    }
}

/// Trigonometric polynomial map `T^d -> R^d`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigPoly {
    pub terms: Vec<TrigTerm>,
}

impl TrigPoly {
    pub fn new(terms: Vec<TrigTerm>) -> Self {
        TrigPoly { terms }
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        let mut out = Vector::zeros(x.len());
        for t in &self.terms {
            let s = t.angle(x).sin();
            for (o, a) in out.iter_mut().zip(&t.amplitude) {
                *o += a * s;
            }
        }
        out
    }

    /// `P(b + δ) - P(b)` using `sin(u + h) - sin(u) = 2 cos(u + h/2) sin(h/2)`.
    pub fn difference(&self, b: &Vector, delta: &Vector) -> Vector {
        let mut out = Vector::zeros(b.len());
        for t in &self.terms {
            let u = t.angle(b);
            let h = 2.0 * PI * t.frequency.iter().zip(delta.iter()).map(|(&k, &v)| k as f64 * v).sum::<f64>();
            let s = 2.0 * (u + 0.5 * h).cos() * (0.5 * h).sin();
            for (o, a) in out.iter_mut().zip(&t.amplitude) {
                *o += a * s;
            }
        }
        out
    }

    pub fn jacobian(&self, x: &Vector) -> Mat {
        let d = x.len();
        let mut out = Mat::zeros(d, d);
        for t in &self.terms {
            let c = 2.0 * PI * t.angle(x).cos();
            for i in 0..d {
                for j in 0..d {
                    out[(i, j)] += t.amplitude[i] * c * t.frequency[j] as f64;
                }
            }
        }
        out
    }

    pub fn c1_size(&self) -> f64 {
        self.terms.iter().map(TrigTerm::c1_size).sum()
    }

    pub fn sup_size(&self) -> f64 {
        self.terms.iter().map(|t| t.amplitude.iter().map(|v| v * v).sum::<f64>().sqrt()).sum()
    }
}

/// A diffeomorphism of `T^d` homotopic to a hyperbolic automorphism, through its lift.
pub trait ToralMap: Send + Sync + Debug {
    fn linear(&self) -> &ToralAutomorphism;

    fn linear_mat(&self) -> &Mat;

    /// `F(x) - Lx`, a `Z^d`-periodic function.
    fn displacement(&self, x: &Vector) -> Vector;

    fn displacement_jacobian(&self, x: &Vector) -> Mat;

    /// Bound on the C^1 size of the displacement.
    fn c1_size(&self) -> f64;

    fn name(&self) -> String;

    fn dim(&self) -> usize {
        self.linear().dim()
    }

    fn apply(&self, x: &Vector) -> Vector {
        self.linear_mat() * x + self.displacement(x)
    }

    fn derivative(&self, x: &Vector) -> Mat {
        self.linear_mat() + self.displacement_jacobian(x)
    }

    /// `F(b + δ) - F(b)`.
    fn difference(&self, b: &Vector, delta: &Vector) -> Vector {
        let bd = b + delta;
        self.linear_mat() * delta + (self.displacement(&bd) - self.displacement(b))
    }

    fn apply_inverse(&self, y: &Vector) -> Vector {
        let linv = linalg::inverse(self.linear_mat()).expect("automorphism is invertible");
        let mut x = &linv * y;
        for _ in 0..60 {
            let r = self.apply(&x) - y;
            if r.amax() < 1e-15 {
                break;
            }
            let step = self.derivative(&x).lu().solve(&r).expect("diffeomorphism derivative is invertible");
            x -= step;
        }
        x
    }

    /// `F^{-1}(b + δ) - F^{-1}(b)` given `b`.
    fn inverse_difference(&self, b: &Vector, delta: &Vector) -> Vector {
        let pre = self.apply_inverse(b);
        let mut d = linalg::inverse(&self.derivative(&pre)).unwrap() * delta;
        for _ in 0..60 {
            let r = self.difference(&pre, &d) - delta;
            if r.amax() < 1e-17 + 1e-15 * delta.amax() {
                break;
            }
            let step = self.derivative(&(&pre + &d)).lu().solve(&r).unwrap();
            d -= step;
        }
        d
    }

    /// A conservative C^1 radius keeping the perturbation Anosov.
    fn anosov_bound(&self) -> f64 {
        anosov_bound(self.linear())
    }

    /// Whether `f` is known to be topologically conjugate to its linear part.
    fn conjugate_to_linear(&self) -> bool {
        self.c1_size() < self.anosov_bound()
    }
}

/// Half the spectral gap from the unit circle, divided by the eigenbasis condition number.
pub fn anosov_bound(l: &ToralAutomorphism) -> f64 {
    let ev = l.eigenvalues();
    let gap = ev.iter().map(|z| (z.norm() - 1.0).abs()).fold(f64::INFINITY, f64::min);
    let m = l.as_mat();
    let kappa = if (&m - m.transpose()).amax() == 0.0 { 1.0 } else { eigenbasis_condition(&m) };
    0.5 * gap / kappa
}

fn eigenbasis_condition(m: &Mat) -> f64 {
    let d = m.nrows();
    let ev = linalg::eigenvalues(m);
    let mut cols = Vec::new();
    for z in &ev {
        if z.im.abs() > 1e-12 {
            return 1e3;
        }
        let mut a = m.clone();
        for i in 0..d {
            a[(i, i)] -= z.re;
        }
        let n = linalg::complex_null_space(&linalg::to_complex(&a), 1e-9);
        if n.ncols() == 0 {
            return 1e3;
        }
        cols.push(n.column(0).map(|c| c.re));
    }
    linalg::condition(&Mat::from_columns(&cols))
}

/// `f(x) = Lx + P(x)` with a trigonometric displacement.
#[derive(Clone, Debug)]
pub struct PerturbedToralMap {
    linear: ToralAutomorphism,
    linear_mat: Mat,
    perturbation: TrigPoly,
    /// Fibre-affine skew product over a linear factor; conjugate to `L` for every amplitude.
    skew: bool,
}

impl PerturbedToralMap {
    pub fn new(linear: ToralAutomorphism, perturbation: TrigPoly) -> Result<Self> {
        let d = linear.dim();
        if perturbation.terms.iter().any(|t| t.amplitude.len() != d || t.frequency.len() != d) {
            return Err(Error::InvalidInput("perturbation term dimension mismatch".into()));
        }
        let linear_mat = linear.as_mat();
        Ok(PerturbedToralMap { linear, linear_mat, perturbation, skew: false })
    }

    pub fn linear_only(linear: ToralAutomorphism) -> Self {
        PerturbedToralMap::new(linear, TrigPoly::default()).unwrap()
    }

    /// `(x, y) ↦ (Ax + ε sin(2π y_1) v, By)` on `T^4`, `v` the expanding eigenvector of `A`.
    pub fn skew_t4(a: &ToralAutomorphism, b: &ToralAutomorphism, epsilon: f64) -> Result<Self> {
        if a.dim() != 2 || b.dim() != 2 {
            return Err(Error::InvalidInput("skew map needs 2x2 blocks".into()));
        }
        let v = expanding_eigenvector(&a.as_mat());
        let l = a.block_sum(b)?;
        let term = TrigTerm::sin(vec![epsilon * v[0], epsilon * v[1], 0.0, 0.0], vec![0, 0, 1, 0]);
        let mut map = PerturbedToralMap::new(l, TrigPoly::new(vec![term]))?;
        map.skew = true;
        Ok(map)
    }

    pub fn perturbation(&self) -> &TrigPoly {
        &self.perturbation
    }
}

pub fn expanding_eigenvector(a: &Mat) -> Vector {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let lambda = if tr >= 0.0 { 0.5 * (tr + disc) } else { 0.5 * (tr - disc) };
    let v = if a[(0, 1)].abs() > a[(1, 0)].abs() {
        Vector::from_vec(vec![a[(0, 1)], lambda - a[(0, 0)]])
    } else {
        Vector::from_vec(vec![lambda - a[(1, 1)], a[(1, 0)]])
    };
    let v = v.normalize();
    if v[0] < 0.0 {
        -v
    } else {
        v
    }
}

impl ToralMap for PerturbedToralMap {
    fn linear(&self) -> &ToralAutomorphism {
        &self.linear
    }

    fn linear_mat(&self) -> &Mat {
        &self.linear_mat
    }

    fn displacement(&self, x: &Vector) -> Vector {
        self.perturbation.eval(x)
    }

    fn displacement_jacobian(&self, x: &Vector) -> Mat {
        self.perturbation.jacobian(x)
    }

    fn difference(&self, b: &Vector, delta: &Vector) -> Vector {
        &self.linear_mat * delta + self.perturbation.difference(b, delta)
    }

    fn c1_size(&self) -> f64 {
        self.perturbation.c1_size()
    }

    fn conjugate_to_linear(&self) -> bool {
        self.skew || self.c1_size() < self.anosov_bound()
    }

    fn name(&self) -> String {
        format!("perturbed({} terms)", self.perturbation.terms.len())
    }
}

/// `f = T^{-1} ∘ L ∘ T` for `T = id + ψ`; its conjugacy to `L` is `T` itself.
#[derive(Clone, Debug)]
pub struct PlantedToralMap {
    linear: ToralAutomorphism,
    linear_mat: Mat,
    psi: TrigPoly,
}

impl PlantedToralMap {
    pub fn new(linear: ToralAutomorphism, psi: TrigPoly) -> Result<Self> {
        if psi.c1_size() >= 0.5 {
            return Err(Error::InvalidInput("planted conjugacy must be a small perturbation of id".into()));
        }
        let linear_mat = linear.as_mat();
        Ok(PlantedToralMap { linear, linear_mat, psi })
    }

    pub fn conjugacy(&self, x: &Vector) -> Vector {
        x + self.psi.eval(x)
    }

    pub fn conjugacy_jacobian(&self, x: &Vector) -> Mat {
        linalg::identity(x.len()) + self.psi.jacobian(x)
    }

    pub fn conjugacy_inverse(&self, y: &Vector) -> Vector {
        let mut z = y.clone();
        for _ in 0..80 {
            let r = self.conjugacy(&z) - y;
            if r.amax() < 1e-16 {
                break;
            }
            z -= self.conjugacy_jacobian(&z).lu().solve(&r).unwrap();
        }
        z
    }

    pub fn psi(&self) -> &TrigPoly {
        &self.psi
    }
}

impl ToralMap for PlantedToralMap {
    fn linear(&self) -> &ToralAutomorphism {
        &self.linear
    }

    fn linear_mat(&self) -> &Mat {
        &self.linear_mat
    }

    fn displacement(&self, x: &Vector) -> Vector {
        let y = &self.linear_mat * self.conjugacy(x);
        self.conjugacy_inverse(&y) - &self.linear_mat * x
    }

    fn displacement_jacobian(&self, x: &Vector) -> Mat {
        let y = &self.linear_mat * self.conjugacy(x);
        let fx = self.conjugacy_inverse(&y);
        let inner = &self.linear_mat * self.conjugacy_jacobian(x);
        linalg::inverse(&self.conjugacy_jacobian(&fx)).unwrap() * inner - &self.linear_mat
    }

    fn apply_inverse(&self, y: &Vector) -> Vector {
        let linv = linalg::inverse(&self.linear_mat).expect("automorphism is invertible");
        self.conjugacy_inverse(&(linv * self.conjugacy(y)))
    }

    fn c1_size(&self) -> f64 {
        let c = self.psi.c1_size();
        let l = linalg::op_norm(&self.linear_mat);
        c * (1.0 + l) / (1.0 - c) + c * l
    }

    fn name(&self) -> String {
        "planted".into()
    }

    fn conjugate_to_linear(&self) -> bool {
        true
    }
}

/// Distance on the torus: smallest Euclidean distance between lifts.
pub fn torus_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            let d = d - d.round();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn reduce_mod1(x: &Vector) -> Vector {
    x.map(|v| v - v.floor())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat() -> ToralAutomorphism {
        ToralAutomorphism::cat_map()
    }

    fn perturbed() -> PerturbedToralMap {
        let p = TrigPoly::new(vec![
            TrigTerm::sin(vec![0.01, 0.0], vec![1, 0]),
            TrigTerm::cos(vec![0.0, 0.01], vec![1, 1]),
        ]);
        PerturbedToralMap::new(cat(), p).unwrap()
    }

    #[test]
    fn inverse_round_trip() {
        let f = perturbed();
        let x = Vector::from_vec(vec![0.3, 0.7]);
        let y = f.apply(&x);
        assert!((f.apply_inverse(&y) - x).amax() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let f = perturbed();
        let x = Vector::from_vec(vec![0.13, 0.42]);
        let h = 1e-6;
        let j = f.derivative(&x);
        for k in 0..2 {
            let mut e = Vector::zeros(2);
            e[k] = h;
            let fd = (f.apply(&(&x + &e)) - f.apply(&(&x - &e))) / (2.0 * h);
            assert!((fd - j.column(k)).amax() < 1e-8);
        }
    }

    #[test]
    fn difference_agrees_with_naive() {
        let f = perturbed();
        let b = Vector::from_vec(vec![0.2, 0.9]);
        let d = Vector::from_vec(vec![1e-3, -2e-3]);
        let naive = f.apply(&(&b + &d)) - f.apply(&b);
        assert!((f.difference(&b, &d) - &naive).amax() < 1e-14);
        let back = f.inverse_difference(&f.apply(&b), &naive);
        assert!((back - d).amax() < 1e-13);
    }

    #[test]
    fn planted_map_conjugates() {
        let psi = TrigPoly::new(vec![TrigTerm::sin(vec![0.02, -0.01], vec![0, 1])]);
        let f = PlantedToralMap::new(cat(), psi).unwrap();
        let x = Vector::from_vec(vec![0.35, 0.61]);
        let lhs = f.linear_mat() * f.conjugacy(&x);
        let rhs = f.conjugacy(&f.apply(&x));
        assert!((lhs - rhs).amax() < 1e-14);
        let j = f.derivative(&x);
        let h = 1e-6;
        let e = Vector::from_vec(vec![h, 0.0]);
        let fd = (f.apply(&(&x + &e)) - f.apply(&(&x - &e))) / (2.0 * h);
        assert!((fd - j.column(0)).amax() < 1e-7);
    }

    #[test]
    fn skew_map_structure() {
        let a = cat();
        let b = ToralAutomorphism::new(vec![vec![3, 1], vec![2, 1]]).unwrap();
        let f = PerturbedToralMap::skew_t4(&a, &b, 0.05).unwrap();
        let x = Vector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let j = f.derivative(&x);
        for i in 2..4 {
            for k in 0..2 {
                assert_eq!(j[(i, k)], 0.0);
            }
        }
    }

    #[test]
    fn anosov_bound_for_cat_map() {
        let b = anosov_bound(&cat());
        assert!((b - 0.5 * (1.0 - 2.0 / (3.0 + 5f64.sqrt()))).abs() < 1e-12);
    }
}
