//! Hyperbolic base systems.

pub mod intmat;
pub mod leaves;
pub mod sft;
pub mod toral_map;
pub mod torus;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

pub use leaves::{Leaf, Leaves};
pub use sft::{SftBase, SymbolicPoint};
pub use toral_map::{PerturbedToralMap, PlantedToralMap, ToralMap, TrigPoly, TrigTerm};
pub use torus::{RationalPoint, ToralAutomorphism, WeakIrreducibility};

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const DEFAULT_ORBIT_CAP: usize = 2_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Point {
    Symbolic(SymbolicPoint),
    Torus(Vector),
}

impl Point {
    pub fn symbolic(&self) -> Option<&SymbolicPoint> {
        match self {
            Point::Symbolic(s) => Some(s),
            Point::Torus(_) => None,
        }
    }

    pub fn torus(&self) -> Option<&Vector> {
        match self {
            Point::Torus(v) => Some(v),
            Point::Symbolic(_) => None,
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Point::Symbolic(s) => write!(f, "{s}"),
            Point::Torus(v) => {
                let parts: Vec<String> = v.iter().map(|c| format!("{c:.17}")).collect();
                write!(f, "({})", parts.join(", "))
            }
        }
    }
}

impl From<SymbolicPoint> for Point {
    fn from(s: SymbolicPoint) -> Self {
        Point::Symbolic(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OrbitPoint {
    Symbolic(SymbolicPoint),
    Rational(RationalPoint),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PeriodicOrbit {
    pub point: OrbitPoint,
    pub period: usize,
}

impl PeriodicOrbit {
    pub fn base_point(&self) -> Point {
        match &self.point {
            OrbitPoint::Symbolic(s) => Point::Symbolic(s.clone()),
            OrbitPoint::Rational(r) => Point::Torus(Vector::from_vec(r.to_f64())),
        }
    }

    pub fn label(&self) -> String {
        match &self.point {
            OrbitPoint::Symbolic(s) => s.to_string(),
            OrbitPoint::Rational(r) => r.to_string(),
        }
    }
}

impl fmt::Display for PeriodicOrbit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (period {})", self.label(), self.period)
    }
}

/// A base dynamical system `f: X -> X`.
#[derive(Clone, Debug)]
pub enum BaseSystem {
    Sft(Arc<SftBase>),
    Torus(Arc<dyn ToralMap>),
}

impl BaseSystem {
    pub fn sft(base: SftBase) -> Self {
        BaseSystem::Sft(Arc::new(base))
    }

    pub fn torus(map: impl ToralMap + 'static) -> Self {
        BaseSystem::Torus(Arc::new(map))
    }

    pub fn as_sft(&self) -> Option<&SftBase> {
        match self {
            BaseSystem::Sft(s) => Some(s),
            BaseSystem::Torus(_) => None,
        }
    }

    pub fn as_torus(&self) -> Option<&Arc<dyn ToralMap>> {
        match self {
            BaseSystem::Torus(t) => Some(t),
            BaseSystem::Sft(_) => None,
        }
    }

    /// `f^n(x)` (negative `n` allowed). Torus points are reduced to `[0,1)^d`.
    pub fn iterate_point(&self, x: &Point, n: i64) -> Result<Point> {
        match (self, x) {
            (BaseSystem::Sft(_), Point::Symbolic(s)) => Ok(Point::Symbolic(s.shift(n))),
            (BaseSystem::Torus(m), Point::Torus(v)) => {
                let mut p = toral_map::reduce_mod1(v);
                for _ in 0..n.unsigned_abs() {
                    p = if n > 0 { m.apply(&p) } else { m.apply_inverse(&p) };
                    p = toral_map::reduce_mod1(&p);
                }
                Ok(Point::Torus(p))
            }
            _ => Err(Error::InvalidInput("point does not belong to this base".into())),
        }
    }

    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        match (self, x, y) {
            (BaseSystem::Sft(b), Point::Symbolic(a), Point::Symbolic(c)) => Ok(b.distance(a, c)),
            (BaseSystem::Torus(_), Point::Torus(a), Point::Torus(c)) => {
                Ok(toral_map::torus_distance(a.as_slice(), c.as_slice()))
            }
            _ => Err(Error::InvalidInput("points do not belong to this base".into())),
        }
    }

    /// `W^s_loc(x) ∩ W^u_loc(z)`.
    pub fn local_product(&self, x: &Point, z: &Point) -> Result<Point> {
        match (self, x, z) {
            (BaseSystem::Sft(b), Point::Symbolic(a), Point::Symbolic(c)) => {
                Ok(Point::Symbolic(b.local_product(a, c)?))
            }
            (BaseSystem::Torus(m), Point::Torus(a), Point::Torus(c)) => {
                let dist = toral_map::torus_distance(a.as_slice(), c.as_slice());
                if dist > LOCAL_PRODUCT_RADIUS {
                    return Err(Error::NotInProductRange(format!("distance {dist:.3e}")));
                }
                let lift = c + (a - c).map(|v| v.round());
                let leaves = Leaves::new(m.clone())?;
                let (w, _) = leaves.intersect(a, &lift)?;
                Ok(Point::Torus(w))
            }
            _ => Err(Error::InvalidInput("points do not belong to this base".into())),
        }
    }

    /// Upper bound for the contraction rate `ν` of the base metric along stable leaves.
    pub fn contraction_rate(&self) -> f64 {
        match self {
            BaseSystem::Sft(b) => b.nu(),
            BaseSystem::Torus(m) => {
                let ev = m.linear().eigenvalues();
                let s = ev.iter().map(|z| z.norm()).filter(|&r| r < 1.0).fold(0.0, f64::max);
                (s * (1.0 + m.c1_size())).min(0.999)
            }
        }
    }

    pub fn periodic_orbits(&self, n_max: usize, cap: usize) -> Result<Vec<PeriodicOrbit>> {
        if n_max == 0 {
            return Err(Error::InvalidInput("n_max must be >= 1".into()));
        }
        let mut out = Vec::new();
        match self {
            BaseSystem::Sft(b) => {
                let mut found = 0usize;
                for n in 1..=n_max {
                    for w in b.primitive_cycles(n, cap, &mut found)? {
                        out.push(PeriodicOrbit { point: OrbitPoint::Symbolic(SymbolicPoint::periodic(&w)), period: n });
                    }
                }
            }
            BaseSystem::Torus(m) => {
                if m.c1_size() != 0.0 {
                    return Err(Error::InvalidInput(
                        "exact enumeration is available for linear toral maps only".into(),
                    ));
                }
                let l = m.linear();
                for n in 1..=n_max {
                    for r in l.orbits_of_period(n, cap)? {
                        out.push(PeriodicOrbit { point: OrbitPoint::Rational(r), period: n });
                        if out.len() > cap {
                            return Err(Error::CapacityExceeded { count: out.len(), cap });
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Closes the orbit segment `x .. f^n x`; returns the orbit and the measured constant K₁.
    pub fn closing(&self, x: &Point, n: usize) -> Result<(PeriodicOrbit, f64)> {
        match (self, x) {
            (BaseSystem::Sft(b), Point::Symbolic(s)) => {
                let (p, k) = b.close(s, n)?;
                let period = p.period().unwrap_or(n);
                Ok((PeriodicOrbit { point: OrbitPoint::Symbolic(p), period }, k))
            }
            (BaseSystem::Torus(m), Point::Torus(v)) => {
                if m.c1_size() != 0.0 {
                    return Err(Error::InvalidInput("closing is exact for linear toral maps only".into()));
                }
                let l = m.linear();
                let fx = self.iterate_point(x, n as i64)?;
                let gap = toral_map::torus_distance(v.as_slice(), fx.torus().unwrap().as_slice());
                if gap > CLOSING_THRESHOLD {
                    return Err(Error::NotCloseEnough { distance: gap, threshold: CLOSING_THRESHOLD });
                }
                let (p, _) = l.close(v.as_slice(), n as u32)?;
                let pv = Vector::from_vec(p.to_f64());
                let mut worst = 0.0f64;
                let mut a = Point::Torus(v.clone());
                let mut b = Point::Torus(pv);
                for _ in 0..=n {
                    worst = worst.max(self.distance(&a, &b)?);
                    a = self.iterate_point(&a, 1)?;
                    b = self.iterate_point(&b, 1)?;
                }
                let mut period = n;
                for k in 1..n {
                    if n % k == 0 && p.apply(&intmat::power(l.matrix(), k as u32)) == p {
                        period = k;
                        break;
                    }
                }
                let k1 = if gap > 0.0 { worst / gap } else { 0.0 };
                Ok((PeriodicOrbit { point: OrbitPoint::Rational(p), period }, k1))
            }
            _ => Err(Error::InvalidInput("point does not belong to this base".into())),
        }
    }
}

/// Local product radius for toral maps.
pub const LOCAL_PRODUCT_RADIUS: f64 = 0.05;
/// Closing threshold `d(x, f^n x)` for toral automorphisms.
pub const CLOSING_THRESHOLD: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_shift_orbits() {
        let b = BaseSystem::sft(SftBase::full_shift(2, 0.5).unwrap());
        let orbits = b.periodic_orbits(3, 1000).unwrap();
        let counts: Vec<usize> = (1..=3).map(|n| orbits.iter().filter(|o| o.period == n).count()).collect();
        assert_eq!(counts, vec![2, 1, 2]);
        let fix3: usize = orbits.iter().filter(|o| 3 % o.period == 0).map(|o| o.period).sum();
        assert_eq!(fix3, 8);
    }

    #[test]
    fn capacity_cap() {
        let b = BaseSystem::sft(SftBase::full_shift(2, 0.5).unwrap());
        assert!(matches!(b.periodic_orbits(10, 20), Err(Error::CapacityExceeded { .. })));
    }

    #[test]
    fn linear_local_product_matches_linear_solve() {
        let l = ToralAutomorphism::cat_map();
        let b = BaseSystem::torus(PerturbedToralMap::linear_only(l.clone()));
        let x = Vector::from_vec(vec![0.3, 0.3]);
        let z = Vector::from_vec(vec![0.31, 0.28]);
        let w = b.local_product(&Point::Torus(x.clone()), &Point::Torus(z.clone())).unwrap();
        let w = w.torus().unwrap().clone();
        // oracle: w = x + a e_s = z + c e_u
        let leaves = Leaves::new(b.as_torus().unwrap().clone()).unwrap();
        let es = leaves.stable_direction();
        let eu = leaves.unstable_direction();
        let m = crate::linalg::Mat::from_columns(&[es.clone(), -eu.clone()]);
        let sol = m.lu().solve(&(&z - &x)).unwrap();
        let oracle = &x + es * sol[0];
        assert!((w - oracle).amax() < 1e-12);
    }

    #[test]
    fn torus_closing() {
        let l = ToralAutomorphism::cat_map();
        let b = BaseSystem::torus(PerturbedToralMap::linear_only(l));
        let x = Point::Torus(Vector::from_vec(vec![0.2 + 3e-6, 0.4 - 1e-6]));
        let (orbit, k1) = b.closing(&x, 2).unwrap();
        assert_eq!(orbit.period, 2);
        assert!(k1 < 10.0);
    }
}
