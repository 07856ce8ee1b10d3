//! Stable and unstable leaves of Anosov maps of `T^2`, grown by pulling back short
//! tangent segments along orbits.

use std::sync::Arc;

use serde::Serialize;

use super::toral_map::{reduce_mod1, ToralMap};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Leaf {
    Stable,
    Unstable,
}

#[derive(Clone, Debug)]
pub struct Leaves {
    map: Arc<dyn ToralMap>,
    e_s: Vector,
    e_u: Vector,
    coords: Mat,
    depth: usize,
    tol: f64,
}

impl Leaves {
    pub fn new(map: Arc<dyn ToralMap>) -> Result<Self> {
        Leaves::with_depth(map, 12, 1e-15)
    }

    pub fn with_depth(map: Arc<dyn ToralMap>, depth: usize, tol: f64) -> Result<Self> {
        if map.dim() != 2 {
            return Err(Error::InvalidInput("leaf computations need d = 2".into()));
        }
        let l = map.linear_mat().clone();
        let u = super::toral_map::expanding_eigenvector(&l);
        let linv = linalg::inverse(&l)?;
        let s = super::toral_map::expanding_eigenvector(&linv);
        let basis = Mat::from_columns(&[s.clone(), u.clone()]);
        let coords = linalg::inverse(&basis)?;
        Ok(Leaves { map, e_s: s, e_u: u, coords, depth, tol })
    }

    pub fn map(&self) -> &Arc<dyn ToralMap> {
        &self.map
    }

    pub fn stable_direction(&self) -> &Vector {
        &self.e_s
    }

    pub fn unstable_direction(&self) -> &Vector {
        &self.e_u
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Coordinates `(s, u)` of a vector in the eigenbasis of the linear part.
    pub fn coordinates(&self, v: &Vector) -> (f64, f64) {
        let c = &self.coords * v;
        (c[0], c[1])
    }

    pub fn forward_orbit(&self, b: &Vector, n: usize) -> Vec<Vector> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(reduce_mod1(b));
        for k in 0..n {
            let next = reduce_mod1(&self.map.apply(&out[k]));
            out.push(next);
        }
        out
    }

    pub fn backward_orbit(&self, b: &Vector, n: usize) -> Vec<Vector> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(reduce_mod1(b));
        for k in 0..n {
            let prev = reduce_mod1(&self.map.apply_inverse(&out[k]));
            out.push(prev);
        }
        out
    }

    /// Unit tangent of the leaf through `p`, oriented along the positive eigen-direction.
    pub fn tangent(&self, p: &Vector, leaf: Leaf) -> Vector {
        let n = 2 * self.depth + 8;
        let v = match leaf {
            Leaf::Unstable => {
                let orbit = self.backward_orbit(p, n);
                let mut v = self.e_u.clone();
                for k in (1..=n).rev() {
                    v = (self.map.derivative(&orbit[k]) * v).normalize();
                }
                v
            }
            Leaf::Stable => {
                let orbit = self.forward_orbit(p, n);
                let mut v = self.e_s.clone();
                for k in (0..n).rev() {
                    v = self.map.derivative(&orbit[k]).lu().solve(&v).unwrap().normalize();
                }
                v
            }
        };
        let (cs, cu) = self.coordinates(&v);
        let along = match leaf {
            Leaf::Stable => cs,
            Leaf::Unstable => cu,
        };
        if along < 0.0 {
            -v
        } else {
            v
        }
    }

    /// Stretch `‖Df_p v‖` of the unit leaf tangent at `p`.
    pub fn stretch(&self, p: &Vector, leaf: Leaf) -> f64 {
        (self.map.derivative(p) * self.tangent(p, leaf)).norm()
    }

    /// Stretches `a(f^k x)`, `k = 0..n`, along the forward orbit (unstable tangents pushed forward,
    /// stable tangents pulled back from the end of the segment).
    pub fn stretches_along(&self, x: &Vector, n: usize, leaf: Leaf) -> Vec<f64> {
        let orbit = self.forward_orbit(x, n);
        match leaf {
            Leaf::Unstable => {
                let mut v = self.tangent(x, Leaf::Unstable);
                let mut out = Vec::with_capacity(n);
                for p in orbit.iter().take(n) {
                    let w = self.map.derivative(p) * &v;
                    let a = w.norm();
                    out.push(a);
                    v = w / a;
                }
                out
            }
            Leaf::Stable => {
                let mut v = self.tangent(&orbit[n], Leaf::Stable);
                let mut out = vec![0.0; n];
                for k in (0..n).rev() {
                    let w = self.map.derivative(&orbit[k]).lu().solve(&v).unwrap();
                    let r = w.norm();
                    out[k] = 1.0 / r;
                    v = w / r;
                }
                out
            }
        }
    }

    /// Point of the leaf through `b` whose displacement from `b` has eigen-coordinate `t`
    /// along the leaf direction.
    pub fn leaf_point(&self, b: &Vector, t: f64, leaf: Leaf) -> Result<Vector> {
        Ok(b + self.leaf_offset(b, t, leaf)?)
    }

    /// `leaf_point(b, t) - b`, kept exact for tiny `t`.
    pub fn leaf_offset(&self, b: &Vector, t: f64, leaf: Leaf) -> Result<Vector> {
        if t == 0.0 {
            return Ok(Vector::zeros(b.len()));
        }
        let n = self.depth;
        let (orbit, far) = match leaf {
            Leaf::Stable => {
                let o = self.forward_orbit(b, n);
                let far = o[n].clone();
                (o, far)
            }
            Leaf::Unstable => {
                let o = self.backward_orbit(b, n);
                let far = o[n].clone();
                (o, far)
            }
        };
        let v = self.tangent(&far, leaf);
        let pull = |tau: f64| -> Vector {
            let mut d = &v * tau;
            for k in (0..n).rev() {
                let tiny = d.amax() < 1e-9;
                d = match (leaf, tiny) {
                    (Leaf::Stable, false) => self.map.inverse_difference(&orbit[k + 1], &d),
                    (Leaf::Stable, true) => self.map.derivative(&orbit[k]).lu().solve(&d).unwrap(),
                    (Leaf::Unstable, false) => self.map.difference(&orbit[k + 1], &d),
                    (Leaf::Unstable, true) => self.map.derivative(&orbit[k + 1]) * d,
                };
            }
            d
        };
        let coord = |d: &Vector| {
            let (cs, cu) = self.coordinates(d);
            match leaf {
                Leaf::Stable => cs,
                Leaf::Unstable => cu,
            }
        };
        let mut w = v.clone();
        for k in (0..n).rev() {
            w = match leaf {
                Leaf::Stable => self.map.derivative(&orbit[k]).lu().solve(&w).unwrap(),
                Leaf::Unstable => self.map.derivative(&orbit[k + 1]) * w,
            };
        }
        let slope = coord(&w);
        let mut tau0 = t / slope;
        let mut h0 = coord(&pull(tau0)) - t;
        if h0.abs() <= self.tol * t.abs() {
            return Ok(pull(tau0));
        }
        let mut tau1 = tau0 * (1.0 - 1e-3);
        let mut h1 = coord(&pull(tau1)) - t;
        for _ in 0..60 {
            if h1.abs() <= self.tol * t.abs() || h1 == h0 {
                break;
            }
            let next = tau1 - h1 * (tau1 - tau0) / (h1 - h0);
            tau0 = tau1;
            h0 = h1;
            tau1 = next;
            h1 = coord(&pull(tau1)) - t;
        }
        if !h1.is_finite() || h1.abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::LeafGrowthFailed(format!("leaf solve residual {h1:.3e}")));
        }
        Ok(pull(tau1))
    }

    /// The point of `W^u(y)` lying on `W^s(z)`, with its unstable coordinate relative to `y`.
    pub fn intersect(&self, z: &Vector, y: &Vector) -> Result<(Vector, f64)> {
        let residual = |t: f64| -> Result<(f64, Vector)> {
            let u = self.leaf_point(y, t, Leaf::Unstable)?;
            let (sigma, _) = self.coordinates(&(&u - z));
            let s = self.leaf_point(z, sigma, Leaf::Stable)?;
            let (_, r) = self.coordinates(&(&u - &s));
            Ok((r, u))
        };
        let (_, t_lin) = self.coordinates(&(z - y));
        let mut t0 = t_lin;
        let (mut r0, mut u) = residual(t0)?;
        if r0 == 0.0 {
            return Ok((u, t0));
        }
        let mut t1 = t0 - r0;
        let (mut r1, mut u1) = residual(t1)?;
        for _ in 0..40 {
            if r1.abs() < 1e-15 || r1 == r0 {
                break;
            }
            let next = t1 - r1 * (t1 - t0) / (r1 - r0);
            t0 = t1;
            r0 = r1;
            t1 = next;
            let (r, uu) = residual(t1)?;
            r1 = r;
            u1 = uu;
        }
        if r1.abs() > 1e-12 {
            return Err(Error::LeafGrowthFailed(format!("intersection residual {r1:.3e}")));
        }
        u = u1;
        Ok((u, t1))
    }

    /// Arclength along the leaf of `b` between `b` and the point with coordinate `t`.
    pub fn arclength(&self, b: &Vector, t: f64, leaf: Leaf) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let (nodes, weights) = gauss_legendre_8();
        let mut total = 0.0;
        for (x, w) in nodes.iter().zip(weights) {
            let tau = 0.5 * t * (1.0 + x);
            let p = self.leaf_point(b, tau, leaf)?;
            let v = self.tangent(&p, leaf);
            let (cs, cu) = self.coordinates(&v);
            let along = match leaf {
                Leaf::Stable => cs,
                Leaf::Unstable => cu,
            };
            total += w / along;
        }
        Ok(0.5 * t * total)
    }

    /// Leaf coordinate `t` with prescribed signed arclength.
    pub fn coordinate_for_arclength(&self, b: &Vector, sigma: f64, leaf: Leaf) -> Result<f64> {
        if sigma == 0.0 {
            return Ok(0.0);
        }
        let v = self.tangent(b, leaf);
        let (cs, cu) = self.coordinates(&v);
        let along = match leaf {
            Leaf::Stable => cs,
            Leaf::Unstable => cu,
        };
        let mut t = sigma * along;
        for _ in 0..30 {
            let s = self.arclength(b, t, leaf)?;
            let p = self.leaf_point(b, t, leaf)?;
            let tv = self.tangent(&p, leaf);
            let (cs, cu) = self.coordinates(&tv);
            let a = match leaf {
                Leaf::Stable => cs,
                Leaf::Unstable => cu,
            };
            let step = (s - sigma) * a;
            t -= step;
            if step.abs() < 1e-16 * t.abs().max(1e-300) + 1e-18 {
                break;
            }
        }
        Ok(t)
    }
}

fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    (
        [
            -0.960_289_856_497_536_2,
            -0.796_666_477_413_626_7,
            -0.525_532_409_916_329_0,
            -0.183_434_642_495_649_8,
            0.183_434_642_495_649_8,
            0.525_532_409_916_329_0,
            0.796_666_477_413_626_7,
            0.960_289_856_497_536_2,
        ],
        [
            0.101_228_536_290_376_3,
            0.222_381_034_453_374_5,
            0.313_706_645_877_887_3,
            0.362_683_783_378_362_0,
            0.362_683_783_378_362_0,
            0.313_706_645_877_887_3,
            0.222_381_034_453_374_5,
            0.101_228_536_290_376_3,
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::toral_map::{PerturbedToralMap, TrigPoly, TrigTerm};
    use crate::base::torus::ToralAutomorphism;

    fn perturbed() -> Arc<dyn ToralMap> {
        let p = TrigPoly::new(vec![
            TrigTerm::sin(vec![0.01, 0.005], vec![1, 0]),
            TrigTerm::sin(vec![-0.004, 0.01], vec![0, 1]),
        ]);
        Arc::new(PerturbedToralMap::new(ToralAutomorphism::cat_map(), p).unwrap())
    }

    #[test]
    fn linear_leaves_are_lines() {
        let f: Arc<dyn ToralMap> = Arc::new(PerturbedToralMap::linear_only(ToralAutomorphism::cat_map()));
        let leaves = Leaves::new(f).unwrap();
        let b = Vector::from_vec(vec![0.3, 0.1]);
        let p = leaves.leaf_point(&b, 0.05, Leaf::Stable).unwrap();
        let expected = &b + leaves.stable_direction() * 0.05;
        assert!((p - expected).amax() < 1e-14);
        assert!((leaves.arclength(&b, 0.05, Leaf::Unstable).unwrap() - 0.05).abs() < 1e-14);
    }

    #[test]
    fn stable_leaf_points_converge() {
        let leaves = Leaves::new(perturbed()).unwrap();
        let b = Vector::from_vec(vec![0.21, 0.67]);
        let p = leaves.leaf_point(&b, 0.03, Leaf::Stable).unwrap();
        let mut d = &p - &b;
        let orbit = leaves.forward_orbit(&b, 12);
        for k in 0..12 {
            d = leaves.map().difference(&orbit[k], &d);
        }
        assert!(d.norm() < 1e-6);
        let refined = Leaves::with_depth(perturbed(), 20, 1e-15).unwrap();
        let q = refined.leaf_point(&b, 0.03, Leaf::Stable).unwrap();
        assert!((p - q).amax() < 1e-13);
    }

    #[test]
    fn intersection_lies_on_both_leaves() {
        let leaves = Leaves::new(perturbed()).unwrap();
        let y = Vector::from_vec(vec![0.4, 0.45]);
        let z = Vector::from_vec(vec![0.42, 0.44]);
        let (w, t) = leaves.intersect(&z, &y).unwrap();
        let on_u = leaves.leaf_point(&y, t, Leaf::Unstable).unwrap();
        assert!((&on_u - &w).amax() < 1e-14);
        let (sigma, _) = leaves.coordinates(&(&w - &z));
        let on_s = leaves.leaf_point(&z, sigma, Leaf::Stable).unwrap();
        assert!((on_s - w).amax() < 1e-12);
    }

    #[test]
    fn arclength_inverse() {
        let leaves = Leaves::new(perturbed()).unwrap();
        let b = Vector::from_vec(vec![0.1, 0.2]);
        let t = leaves.coordinate_for_arclength(&b, 0.02, Leaf::Unstable).unwrap();
        assert!((leaves.arclength(&b, t, Leaf::Unstable).unwrap() - 0.02).abs() < 1e-14);
    }
}
