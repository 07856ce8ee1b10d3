//! Stable and unstable holonomies of fiber bunched cocycles.

use serde::Serialize;

use crate::base::Point;
use crate::cocycle::{BunchingCertificate, CocycleSpec, Generator};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const MAX_DEPTH: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Stable,
    Unstable,
}

#[derive(Clone, Debug, Serialize)]
pub struct HolonomyOperator {
    #[serde(serialize_with = "linalg::ser_mat")]
    pub matrix: Mat,
    pub direction: Direction,
    pub source: String,
    pub target: String,
    #[serde(skip)]
    pub x: Option<Point>,
    #[serde(skip)]
    pub y: Option<Point>,
    pub depth: usize,
    pub error_bound: f64,
    pub distance: f64,
    /// `‖H − Id‖`.
    pub deviation: f64,
    /// True when the truncated product is already the limit.
    pub exact: bool,
}

impl HolonomyOperator {
    pub fn csv_header() -> &'static str {
        "x,y,direction,n,error_bound,deviation"
    }

    pub fn csv_row(&self) -> String {
        let dir = match self.direction {
            Direction::Stable => "stable",
            Direction::Unstable => "unstable",
        };
        format!("\"{}\",\"{}\",{dir},{},{:e},{:e}", self.source, self.target, self.depth, self.error_bound, self.deviation)
    }
}

/// Holonomies of one cocycle under a fixed bunching certificate.
#[derive(Clone, Debug)]
pub struct HolonomySolver {
    pub spec: CocycleSpec,
    pub certificate: BunchingCertificate,
}

fn window_of(g: &Generator) -> Option<(i64, i64)> {
    match g {
        Generator::Constant(_) => Some((0, 0)),
        Generator::LocallyConstant(t) => Some(t.window()),
        Generator::Conjugated { inner, .. } => window_of(inner),
        _ => None,
    }
}

/// `(A^n_y)^{-1} A^n_x`.
fn stable_product(a: &CocycleSpec, x: &Point, y: &Point, n: usize) -> Result<Mat> {
    let ax = a.product(x, 0, n as i64)?;
    let ay = a.product(y, 0, n as i64)?;
    linalg::solve(&ay, &ax)
}

/// `A^n_{f^{-n}y} (A^n_{f^{-n}x})^{-1}`.
fn unstable_product(a: &CocycleSpec, x: &Point, y: &Point, n: usize) -> Result<Mat> {
    let ax = a.product(x, -(n as i64), 0)?;
    let ay = a.product(y, -(n as i64), 0)?;
    Ok(linalg::solve(&ax.transpose(), &ay.transpose())?.transpose())
}

impl HolonomySolver {
    pub fn new(spec: CocycleSpec, certificate: BunchingCertificate) -> Result<Self> {
        if !certificate.valid {
            return Err(Error::NoBunchingCertificate { theta: certificate.theta });
        }
        Ok(HolonomySolver { spec, certificate })
    }

    /// Per-pair constant `G = max_k ‖A_{f^k y}^{-1}‖ ‖A_{f^k x} − A_{f^k y}‖ ‖H_k‖ / d_k^β`.
    fn pair_constant(&self, x: &Point, y: &Point, n: usize, dir: Direction) -> Result<f64> {
        let a = &self.spec;
        let beta = self.certificate.beta;
        let (vx, vy, step) = match dir {
            Direction::Stable => (a.values(x, 0, n as i64)?, a.values(y, 0, n as i64)?, 1i64),
            Direction::Unstable => (a.inverse_values(x, n)?, a.inverse_values(y, n)?, -1i64),
        };
        let mut g = 0.0f64;
        let mut hx = linalg::identity(a.dim);
        let mut hy = linalg::identity(a.dim);
        let mut xk = x.clone();
        let mut yk = y.clone();
        for k in 0..n {
            let d = a.base.distance(&xk, &yk)?;
            let diff = linalg::op_norm(&(&vx[k] - &vy[k]));
            if diff > 0.0 && d > 0.0 {
                let h = linalg::solve(&hy, &hx)?;
                let term = linalg::op_norm(&linalg::inverse(&vy[k])?) * diff * linalg::op_norm(&h) / d.powf(beta);
                g = g.max(term);
            }
            hx = &vx[k] * hx;
            hy = &vy[k] * hy;
            xk = a.base.iterate_point(&xk, step)?;
            yk = a.base.iterate_point(&yk, step)?;
        }
        Ok(g)
    }

    pub fn error_bound(&self, n: usize, dist: f64, pair_constant: f64) -> f64 {
        let c = &self.certificate;
        c.constant * pair_constant * c.theta.powi(n as i32) * dist.powf(c.beta) / (1.0 - c.theta)
    }

    fn depth_for(&self, tol: f64, dist: f64, pair_constant: f64) -> usize {
        let c = &self.certificate;
        let scale = c.constant * pair_constant.max(1e-300) * dist.powf(c.beta) / (1.0 - c.theta);
        if scale <= tol {
            return 0;
        }
        ((tol / scale).ln() / c.theta.ln()).ceil().max(0.0) as usize
    }

    /// Index from which the generator values along `x` and `y` coincide exactly, for
    /// symbolic pairs on a common local leaf.
    fn exact_depth(&self, x: &Point, y: &Point, dir: Direction) -> Option<usize> {
        let (lo, hi) = window_of(&self.spec.generator)?;
        let (sx, sy) = (x.symbolic()?, y.symbolic()?);
        match dir {
            Direction::Stable => {
                let n = sx.stable_agreement(sy)?;
                Some((n - lo).max(0) as usize)
            }
            Direction::Unstable => {
                let m = sx.unstable_agreement(sy)?;
                Some((hi - m).max(0) as usize)
            }
        }
    }

    /// Checks leaf membership; returns the number of base iterates needed to reach a local leaf.
    fn leaf_offset(&self, x: &Point, y: &Point, dir: Direction) -> Result<usize> {
        match (x, y) {
            (Point::Symbolic(sx), Point::Symbolic(sy)) => match dir {
                Direction::Stable => {
                    let n = sx.stable_agreement(sy).ok_or(Error::NotOnStableLeaf)?;
                    Ok(n.max(0) as usize)
                }
                Direction::Unstable => {
                    let m = sx.unstable_agreement(sy).ok_or(Error::NotOnUnstableLeaf)?;
                    Ok((-m).max(0) as usize)
                }
            },
            (Point::Torus(_), Point::Torus(_)) => {
                let d0 = self.spec.base.distance(x, y)?;
                let step = if dir == Direction::Stable { 20 } else { -20 };
                let fx = self.spec.base.iterate_point(x, step)?;
                let fy = self.spec.base.iterate_point(y, step)?;
                let d1 = self.spec.base.distance(&fx, &fy)?;
                if d0 > crate::base::LOCAL_PRODUCT_RADIUS || d1 > d0.max(1e-9) {
                    return Err(match dir {
                        Direction::Stable => Error::NotOnStableLeaf,
                        Direction::Unstable => Error::NotOnUnstableLeaf,
                    });
                }
                Ok(0)
            }
            _ => Err(Error::InvalidInput("points do not belong to the base".into())),
        }
    }

    pub fn stable(&self, x: &Point, y: &Point, tol: f64) -> Result<HolonomyOperator> {
        self.holonomy(x, y, tol, Direction::Stable)
    }

    pub fn unstable(&self, x: &Point, y: &Point, tol: f64) -> Result<HolonomyOperator> {
        self.holonomy(x, y, tol, Direction::Unstable)
    }

    pub fn holonomy(&self, x: &Point, y: &Point, tol: f64, dir: Direction) -> Result<HolonomyOperator> {
        let a = &self.spec;
        let offset = self.leaf_offset(x, y, dir)?;
        if offset > 0 && a.is_constant().is_none() {
            // global leaf: move to the local leaf and pull back by equivariance
            let k = offset as i64;
            let shift = if dir == Direction::Stable { k } else { -k };
            let fx = a.base.iterate_point(x, shift)?;
            let fy = a.base.iterate_point(y, shift)?;
            let local = self.holonomy(&fx, &fy, tol, dir)?;
            let matrix = match dir {
                Direction::Stable => {
                    let ax = a.product(x, 0, k)?;
                    let ay = a.product(y, 0, k)?;
                    linalg::solve(&ay, &(&local.matrix * ax))?
                }
                Direction::Unstable => {
                    let ax = a.product(&fx, 0, k)?;
                    let ay = a.product(&fy, 0, k)?;
                    let right = linalg::inverse(&ax)?;
                    ay * &local.matrix * right
                }
            };
            let deviation = linalg::op_norm(&(&matrix - linalg::identity(a.dim)));
            return Ok(HolonomyOperator {
                matrix,
                direction: dir,
                source: x.to_string(),
                target: y.to_string(),
                x: Some(x.clone()),
                y: Some(y.clone()),
                depth: local.depth + offset,
                error_bound: local.error_bound,
                distance: a.base.distance(x, y)?,
                deviation,
                exact: local.exact,
            });
        }
        let dist = a.base.distance(x, y)?;
        let (matrix, depth, error_bound, exact) = if x == y || a.is_constant().is_some() {
            (linalg::identity(a.dim), 0, 0.0, true)
        } else {
            let guess = self.depth_for(tol, dist, 1.0).clamp(1, MAX_DEPTH);
            let mut g = self.pair_constant(x, y, guess, dir)?;
            let mut n = self.depth_for(tol, dist, g).clamp(1, MAX_DEPTH);
            if n > guess {
                g = g.max(self.pair_constant(x, y, n, dir)?);
                n = self.depth_for(tol, dist, g).clamp(1, MAX_DEPTH);
            }
            match self.exact_depth(x, y, dir) {
                Some(j0) if j0 <= n => (self.truncated(x, y, j0, dir)?, j0, 0.0, true),
                _ => (self.truncated(x, y, n, dir)?, n, self.error_bound(n, dist, g), false),
            }
        };
        let deviation = linalg::op_norm(&(&matrix - linalg::identity(a.dim)));
        Ok(HolonomyOperator {
            matrix,
            direction: dir,
            source: x.to_string(),
            target: y.to_string(),
            x: Some(x.clone()),
            y: Some(y.clone()),
            depth,
            error_bound,
            distance: dist,
            deviation,
            exact,
        })
    }

    /// The raw truncation at depth `n`, without certification (used for explicit-depth studies).
    pub fn truncated(&self, x: &Point, y: &Point, n: usize, dir: Direction) -> Result<Mat> {
        match dir {
            Direction::Stable => stable_product(&self.spec, x, y, n),
            Direction::Unstable => unstable_product(&self.spec, x, y, n),
        }
    }

    /// Truncation at an explicit depth, with the certified bound for that depth.
    pub fn at_depth(&self, x: &Point, y: &Point, n: usize, dir: Direction) -> Result<HolonomyOperator> {
        if self.leaf_offset(x, y, dir)? > 0 {
            return Err(Error::InvalidInput("explicit depth requires a local leaf pair".into()));
        }
        let dist = self.spec.base.distance(x, y)?;
        let g = self.pair_constant(x, y, n.max(1), dir)?;
        let matrix = self.truncated(x, y, n, dir)?;
        let deviation = linalg::op_norm(&(&matrix - linalg::identity(self.spec.dim)));
        Ok(HolonomyOperator {
            matrix,
            direction: dir,
            source: x.to_string(),
            target: y.to_string(),
            x: Some(x.clone()),
            y: Some(y.clone()),
            depth: n,
            error_bound: self.error_bound(n, dist, g),
            distance: dist,
            deviation,
            exact: false,
        })
    }

    /// `‖A_x − H_{fy,fx} A_y H_{x,y}‖` using the holonomy at `(fy, fx)` computed to `tol`.
    pub fn equivariance_residual(&self, h: &HolonomyOperator, tol: f64) -> Result<f64> {
        let (x, y) = match (&h.x, &h.y) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::InvalidInput("holonomy without endpoints".into())),
        };
        let a = &self.spec;
        let fx = a.base.iterate_point(x, 1)?;
        let fy = a.base.iterate_point(y, 1)?;
        let back = self.holonomy(&fy, &fx, tol, h.direction)?;
        let lhs = a.value(x)?;
        let rhs = &back.matrix * a.value(y)? * &h.matrix;
        Ok(linalg::op_norm(&(lhs - rhs)))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderFit {
    pub beta: f64,
    pub constant: f64,
    pub residual: f64,
    pub pairs: usize,
    pub degenerate: bool,
}

/// Log-log regression of `‖H − Id‖` against distance.
pub fn holder_fit(pairs: &[(f64, f64)]) -> Result<HolderFit> {
    if pairs.len() < 8 {
        return Err(Error::InsufficientSpread(format!("{} pairs, need 8", pairs.len())));
    }
    let dists: Vec<f64> = pairs.iter().map(|p| p.0).filter(|&d| d > 0.0).collect();
    let lo = dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = dists.iter().cloned().fold(0.0, f64::max);
    if dists.len() < 8 || (hi / lo).log10() < 2.0 {
        return Err(Error::InsufficientSpread(format!("distances span [{lo:.3e}, {hi:.3e}]")));
    }
    let usable: Vec<(f64, f64)> = pairs.iter().copied().filter(|&(d, v)| d > 0.0 && v > 0.0).collect();
    if usable.len() < 2 {
        return Ok(HolderFit { beta: 0.0, constant: 0.0, residual: 0.0, pairs: pairs.len(), degenerate: true });
    }
    let xs: Vec<f64> = usable.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
    let (a, b, rms) = linalg::linear_fit(&xs, &ys);
    Ok(HolderFit { beta: b, constant: a.exp(), residual: rms, pairs: pairs.len(), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{BaseSystem, SftBase, SymbolicPoint};
    use crate::cocycle::{bunching_margin, WindowTable};

    fn base() -> BaseSystem {
        BaseSystem::sft(SftBase::full_shift(2, 0.5).unwrap())
    }

    fn p(s: &str) -> Point {
        s.parse::<SymbolicPoint>().unwrap().into()
    }

    fn window_cocycle(lo: i64, hi: i64) -> CocycleSpec {
        let table = WindowTable::from_fn(2, lo, hi, 2, |w| {
            let s: f64 = w.iter().enumerate().map(|(i, &c)| c as f64 * 0.1 / (i + 1) as f64).sum();
            linalg::rotation(0.6 + s) * Mat::from_row_slice(2, 2, &[1.0 + 0.2 * s, 0.1 * s, 0.0, 1.0])
        })
        .unwrap();
        CocycleSpec::locally_constant(base(), table, 1.0).unwrap()
    }

    fn solver(a: CocycleSpec) -> HolonomySolver {
        let samples: Vec<Point> = ["(0)^inf|.|(0)^inf", "(01)^inf|.|(01)^inf", "(011)^inf|.|(1)^inf"].iter().map(|s| p(s)).collect();
        let cert = bunching_margin(&a, 1.0, 12, &samples).unwrap();
        HolonomySolver::new(a, cert).unwrap()
    }

    #[test]
    fn constant_holonomy_is_identity() {
        let a = CocycleSpec::constant(base(), linalg::rotation(1.0), 1.0).unwrap();
        let s = HolonomySolver::new(a, BunchingCertificate::trivial(1.0, 0.5)).unwrap();
        let h = s.stable(&p("(1)^inf|10.1|(0)^inf"), &p("(0)^inf|00.1|(0)^inf"), 1e-12).unwrap();
        assert_eq!(h.matrix, linalg::identity(2));
        let h = s.unstable(&p("(1)^inf|1.01|(0)^inf"), &p("(1)^inf|1.00|(1)^inf"), 1e-12).unwrap();
        assert_eq!(h.matrix, linalg::identity(2));
    }

    #[test]
    fn future_window_has_trivial_stable_holonomy() {
        let s = solver(window_cocycle(0, 1));
        let h = s.stable(&p("(1)^inf|10.1|(0)^inf"), &p("(0)^inf|01.1|(0)^inf"), 1e-12).unwrap();
        assert_eq!(h.matrix, linalg::identity(2));
        let s = solver(window_cocycle(-1, 0));
        let h = s.unstable(&p("(1)^inf|1.01|(0)^inf"), &p("(1)^inf|1.00|(1)^inf"), 1e-12).unwrap();
        assert_eq!(h.matrix, linalg::identity(2));
    }

    #[test]
    fn past_window_matches_long_product() {
        let s = solver(window_cocycle(-1, 0));
        let x = p("(1)^inf|10.1|(0)^inf");
        let y = p("(0)^inf|11.1|(0)^inf");
        let h40 = s.at_depth(&x, &y, 40, Direction::Stable).unwrap();
        let h80 = s.truncated(&x, &y, 80, Direction::Stable).unwrap();
        let bound = s.certificate.constant * s.certificate.theta.powi(40);
        assert!(linalg::op_norm(&(&h40.matrix - &h80)) <= bound);
        let h = s.stable(&x, &y, 1e-12).unwrap();
        assert!(h.exact);
        // the window [-1, 0] at f^j x agrees with f^j y for j >= 1
        assert_eq!(h.depth, 1);
        assert!(linalg::op_norm(&(&h.matrix - &h80)) < 1e-12);
    }

    #[test]
    fn future_window_unstable_matches_inverse_time_oracle() {
        let s = solver(window_cocycle(0, 1));
        let x = p("(1)^inf|1.01|(0)^inf");
        let y = p("(1)^inf|1.10|(1)^inf");
        let h = s.unstable(&x, &y, 1e-12).unwrap();
        // oracle: A^n_{f^{-n} y} (A^n_{f^{-n} x})^{-1} at n = 60
        let a = &s.spec;
        let ax = a.product(&x, -60, 0).unwrap();
        let ay = a.product(&y, -60, 0).unwrap();
        let oracle = ay * linalg::inverse(&ax).unwrap();
        assert!(linalg::op_norm(&(&h.matrix - oracle)) < 1e-10);
    }

    #[test]
    fn equivariance_and_groupoid() {
        let s = solver(window_cocycle(-2, 1));
        let x = p("(1)^inf|10.1|(0)^inf");
        let y = p("(0)^inf|01.1|(0)^inf");
        let z = p("(01)^inf|11.1|(0)^inf");
        let hxy = s.stable(&x, &y, 1e-12).unwrap();
        let budget = 3.0 * 2.0 * 1e-12 * linalg::op_norm(&s.spec.value(&x).unwrap());
        assert!(s.equivariance_residual(&hxy, 1e-12).unwrap() <= budget.max(1e-12));
        let hyz = s.stable(&y, &z, 1e-12).unwrap();
        let hxz = s.stable(&x, &z, 1e-12).unwrap();
        assert!(linalg::op_norm(&(&hyz.matrix * &hxy.matrix - &hxz.matrix)) < 1e-10);
        let hxx = s.stable(&x, &x, 1e-12).unwrap();
        assert_eq!(hxx.matrix, linalg::identity(2));
    }

    #[test]
    fn global_stable_leaf() {
        let s = solver(window_cocycle(-1, 0));
        let x = p("(1)^inf|1.10|(0)^inf");
        let y = p("(1)^inf|0.01|(0)^inf");
        let h = s.stable(&x, &y, 1e-12).unwrap();
        let oracle = s.truncated(&x, &y, 60, Direction::Stable).unwrap();
        assert!(linalg::op_norm(&(&h.matrix - oracle)) < 1e-10);
        assert!(matches!(s.stable(&p("(1)^inf|.|(1)^inf"), &p("(0)^inf|.|(0)^inf"), 1e-9), Err(Error::NotOnStableLeaf)));
    }

    #[test]
    fn holder_fit_power_law() {
        let pairs: Vec<(f64, f64)> = (0..12).map(|i| {
            let d = 10f64.powf(-(i as f64) * 0.3);
            (d, 2.0 * d.sqrt())
        }).collect();
        let f = holder_fit(&pairs).unwrap();
        assert!((f.beta - 0.5).abs() < 1e-6 && (f.constant - 2.0).abs() < 1e-6);
        let zero: Vec<(f64, f64)> = pairs.iter().map(|&(d, _)| (d, 0.0)).collect();
        assert!(holder_fit(&zero).unwrap().degenerate);
        assert!(matches!(holder_fit(&pairs[..5]), Err(Error::InsufficientSpread(_))));
    }

    #[test]
    fn missing_certificate_is_rejected() {
        let a = CocycleSpec::constant(base(), linalg::diag(&[4.0, 0.25]), 1.0).unwrap();
        let cert = bunching_margin(&a, 1.0, 8, &[p("(0)^inf|.|(0)^inf")]).unwrap();
        assert!(matches!(HolonomySolver::new(a, cert), Err(Error::NoBunchingCertificate { .. })));
    }
}
