//! Lyapunov exponents, dominated splittings and block restrictions.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::{BaseSystem, PeriodicOrbit, Point};
use crate::cocycle::{periodic_data, CocycleSpec, FiberMap, Generator};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const GROUPING_TOL: f64 = 1e-2;
pub const INVARIANCE_TOL: f64 = 1e-6;
pub const DOMINATION_SLACK: f64 = 1e-3;
/// Target size of `τ̂^window` for the splitting windows.
pub const WINDOW_TARGET: f64 = 1e-10;
pub const MAX_WINDOW: usize = 400;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct LyapunovSpectrum {
    /// Non-increasing.
    pub exponents: Vec<f64>,
    /// Increasing distinct values.
    pub distinct: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub moduli: Vec<f64>,
}

impl LyapunovSpectrum {
    pub fn from_exponents(mut exponents: Vec<f64>, tol: f64) -> Self {
        exponents.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut groups: Vec<Vec<f64>> = Vec::new();
        for &e in exponents.iter().rev() {
            match groups.last_mut() {
                Some(g) if e - g[0] <= tol => g.push(e),
                _ => groups.push(vec![e]),
            }
        }
        let distinct: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / g.len() as f64).collect();
        let multiplicities = groups.iter().map(Vec::len).collect();
        let moduli = distinct.iter().map(|s| s.exp()).collect();
        LyapunovSpectrum { exponents, distinct, multiplicities, moduli }
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }
}

/// QR accumulation of `A_{f^{n-1}x} ⋯ A_x`.
pub fn lyapunov_exponents(a: &CocycleSpec, x: &Point, n: usize) -> Result<LyapunovSpectrum> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be >= 1".into()));
    }
    let mut q = linalg::identity(a.dim);
    let mut sums = vec![0.0; a.dim];
    const CHUNK: usize = 4096;
    let mut start = 0usize;
    while start < n {
        let end = (start + CHUNK).min(n);
        for m in a.values(x, start as i64, end as i64)? {
            let (qn, r) = linalg::qr_positive(&(m * &q));
            for (i, s) in sums.iter_mut().enumerate() {
                *s += r[(i, i)].ln();
            }
            q = qn;
        }
        start = end;
    }
    Ok(LyapunovSpectrum::from_exponents(sums.iter().map(|s| s / n as f64).collect(), GROUPING_TOL))
}

/// `(1/n) ln |eig(A_p^n)|`, non-increasing.
pub fn periodic_exponents(a: &CocycleSpec, orbit: &PeriodicOrbit) -> Result<Vec<f64>> {
    let datum = periodic_data(a, orbit)?;
    let n = orbit.period as f64;
    let mut out: Vec<f64> = datum.eigenvalues.iter().map(|z| z.norm().ln() / n).collect();
    out.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(out)
}

/// Deterministic orthonormal frame of a subspace, independent of the spanning basis given:
/// pivoted Gram-Schmidt on the columns of the orthogonal projector.
pub fn canonical_frame(basis: &Mat) -> Mat {
    let d = basis.nrows();
    let k = basis.ncols();
    let q = linalg::orthonormalize(basis);
    let p = &q * q.transpose();
    let mut chosen: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(k);
    let mut used = vec![false; d];
    for _ in 0..k {
        let mut best = (0usize, -1.0f64, nalgebra::DVector::zeros(d));
        for j in (0..d).filter(|&j| !used[j]) {
            let mut v = p.column(j).into_owned();
            for c in &chosen {
                let dot = c.dot(&v);
                v -= c * dot;
            }
            let norm = v.norm();
            if norm > best.1 + 1e-12 {
                best = (j, norm, v);
            }
        }
        used[best.0] = true;
        let mut col = best.2 / best.1;
        if col[best.0] < 0.0 {
            col.neg_mut();
        }
        chosen.push(col);
    }
    Mat::from_columns(&chosen)
}

fn generic_frame(d: usize, k: usize, salt: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 ^ salt);
    let m = Mat::from_fn(d, k, |_, _| rng.random_range(-1.0..1.0));
    linalg::orthonormalize(&m)
}

/// Fast (dimension `k`) and slow (dimension `d - k`) subspaces at `x` from windows of
/// length `window` in both time directions.
pub fn splitting_at(a: &CocycleSpec, x: &Point, k: usize, window: usize) -> Result<(Mat, Mat)> {
    let d = a.dim;
    let back = a.values(x, -(window as i64), 0)?;
    let mut fast = generic_frame(d, k, 1);
    for m in &back {
        fast = linalg::orthonormalize(&(m * fast));
    }
    let fwd = a.values(x, 0, window as i64)?;
    let mut slow = generic_frame(d, d - k, 2);
    for m in fwd.iter().rev() {
        slow = linalg::orthonormalize(&linalg::solve(m, &slow)?);
    }
    Ok((canonical_frame(&fast), canonical_frame(&slow)))
}

fn leakage(a_x: &Mat, frame_x: &Mat, frame_fx: &Mat) -> f64 {
    let img = a_x * frame_x;
    let off = &img - frame_fx * (frame_fx.transpose() * &img);
    linalg::op_norm(&off) / linalg::op_norm(&img)
}

/// `log ‖A^m|slow‖ − log m(A^m|fast)` for `m = 1..=horizon`.
/// The pushed slow frame is projected back onto the slow bundle along the fast one each step;
/// otherwise roundoff along fast directions grows like the full spectral spread.
fn domination_ratios(a: &CocycleSpec, x: &Point, fast: &Mat, slow: &Mat, horizon: usize, window: usize) -> Result<Vec<f64>> {
    let vals = a.values(x, 0, horizon as i64)?;
    let k = fast.ncols();
    let (mut qf, mut qs) = (fast.clone(), slow.clone());
    let mut rf = linalg::identity(k);
    let mut rs = linalg::identity(slow.ncols());
    let (mut lf, mut ls) = (0.0f64, 0.0f64);
    let mut out = Vec::with_capacity(horizon);
    let mut y = x.clone();
    for m in &vals {
        y = a.base.iterate_point(&y, 1)?;
        let (f1, s1) = splitting_at(a, &y, k, window)?;
        let basis = Mat::from_columns(&f1.column_iter().chain(s1.column_iter()).collect::<Vec<_>>());
        let coeffs = linalg::solve(&basis, &(m * &qs))?;
        let pushed_slow = &s1 * coeffs.rows(k, s1.ncols());
        let (q1, r1) = linalg::qr_positive(&(m * &qf));
        let (q2, r2) = linalg::qr_positive(&pushed_slow);
        qf = q1;
        qs = q2;
        rf = r1 * rf;
        rs = r2 * rs;
        let sf = rf.amax();
        let ss = rs.amax();
        rf /= sf;
        rs /= ss;
        lf += sf.ln();
        ls += ss.ln();
        out.push(ls + linalg::op_norm(&rs).ln() - lf - linalg::conorm(&rf).ln());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SplittingSample {
    pub point: String,
    #[serde(serialize_with = "linalg::ser_mats")]
    pub frames: Vec<Mat>,
    pub invariance_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplittingField {
    pub index: usize,
    pub dims: Vec<usize>,
    pub window: usize,
    pub horizon: usize,
    pub samples: Vec<SplittingSample>,
    pub k_const: f64,
    pub tau: f64,
    pub invariance_residual: f64,
}

impl SplittingField {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,point,block,column,entries\n");
        for (i, s) in self.samples.iter().enumerate() {
            for (b, f) in s.frames.iter().enumerate() {
                for c in 0..f.ncols() {
                    let e: Vec<String> = f.column(c).iter().map(|v| format!("{v:e}")).collect();
                    out.push_str(&format!("{i},\"{}\",{b},{c},{}\n", s.point, e.join(" ")));
                }
            }
        }
        out
    }
}

/// Fast/slow splitting of index `k`, certified by invariance and domination measurements.
/// Block 0 is the fast subspace (dimension `k`), block 1 the slow one.
pub fn dominated_splitting(a: &CocycleSpec, k: usize, samples: &[Point], horizon: usize) -> Result<SplittingField> {
    let d = a.dim;
    if k == 0 || k >= d || samples.is_empty() || horizon == 0 {
        return Err(Error::InvalidInput("need 0 < k < d, samples, horizon >= 1".into()));
    }
    // pilot pass to size the window; pushed slow frames lose accuracy like τ^{-m}
    let pilot_horizon = (horizon / 2).max(1);
    let pilot: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x| -> Result<Vec<f64>> {
            let (fast, slow) = splitting_at(a, x, k, horizon)?;
            domination_ratios(a, x, &fast, &slow, pilot_horizon, horizon)
        })
        .collect::<Result<_>>()?;
    let (_, tau) = fit_domination(&pilot);
    if !(tau < 1.0 - DOMINATION_SLACK) {
        return Err(Error::NoDomination(format!("measured rate τ = {tau:.4}")));
    }
    let window = horizon + (WINDOW_TARGET.ln() / tau.ln()).ceil() as usize;
    if window > MAX_WINDOW {
        return Err(Error::NoDomination(format!("window {window} needed for rate τ = {tau:.4}")));
    }
    let results: Vec<(SplittingSample, Vec<f64>)> = samples
        .par_iter()
        .map(|x| -> Result<(SplittingSample, Vec<f64>)> {
            let (fast, slow) = splitting_at(a, x, k, window)?;
            let fx = a.base.iterate_point(x, 1)?;
            let (fast1, slow1) = splitting_at(a, &fx, k, window)?;
            let ax = a.value(x)?;
            let res = leakage(&ax, &fast, &fast1).max(leakage(&ax, &slow, &slow1));
            let r = domination_ratios(a, x, &fast, &slow, horizon, window)?;
            Ok((SplittingSample { point: x.to_string(), frames: vec![fast, slow], invariance_residual: res }, r))
        })
        .collect::<Result<_>>()?;
    let ratios: Vec<Vec<f64>> = results.iter().map(|r| r.1.clone()).collect();
    let (k_const, tau) = fit_domination(&ratios);
    let samples: Vec<SplittingSample> = results.into_iter().map(|r| r.0).collect();
    let invariance_residual = samples.iter().map(|s| s.invariance_residual).fold(0.0, f64::max);
    if invariance_residual > INVARIANCE_TOL {
        return Err(Error::NoDomination(format!("invariance residual {invariance_residual:.3e}")));
    }
    if !(tau < 1.0 - DOMINATION_SLACK) {
        return Err(Error::NoDomination(format!("measured rate τ = {tau:.4}")));
    }
    Ok(SplittingField { index: k, dims: vec![k, d - k], window, horizon, samples, k_const, tau, invariance_residual })
}

/// Fits `log r_m ≤ log K + m log τ` over the worst sample at each `m`.
fn fit_domination(ratios: &[Vec<f64>]) -> (f64, f64) {
    let h = ratios[0].len();
    let worst: Vec<f64> = (0..h).map(|m| ratios.iter().map(|r| r[m]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let xs: Vec<f64> = (1..=h).map(|m| m as f64).collect();
    let slope = if h == 1 { worst[0] } else { linalg::linear_fit(&xs, &worst).1 };
    let log_k = worst.iter().enumerate().map(|(m, w)| w - slope * (m + 1) as f64).fold(f64::NEG_INFINITY, f64::max);
    (log_k.exp() * (1.0 + 1e-9), slope.exp())
}

/// `A_x` written in the moving frames of one block of a splitting.
#[derive(Debug)]
pub struct BlockCocycle {
    pub parent: CocycleSpec,
    pub index: usize,
    pub block: usize,
    pub window: usize,
}

impl BlockCocycle {
    pub fn frame(&self, x: &Point) -> Result<Mat> {
        let (fast, slow) = splitting_at(&self.parent, x, self.index, self.window)?;
        Ok(if self.block == 0 { fast } else { slow })
    }
}

impl FiberMap for BlockCocycle {
    fn dim(&self) -> usize {
        if self.block == 0 {
            self.index
        } else {
            self.parent.dim - self.index
        }
    }

    fn value(&self, _base: &BaseSystem, x: &Point) -> Result<Mat> {
        let ex = self.frame(x)?;
        let fx = self.parent.base.iterate_point(x, 1)?;
        let efx = self.frame(&fx)?;
        let ax = self.parent.value(x)?;
        let res = leakage(&ax, &ex, &efx);
        if res > INVARIANCE_TOL {
            return Err(Error::FrameMismatch(res));
        }
        Ok(efx.transpose() * ax * ex)
    }
}

pub fn block_cocycle(a: &CocycleSpec, s: &SplittingField, block: usize) -> Result<Arc<BlockCocycle>> {
    if block > 1 {
        return Err(Error::InvalidInput("block index must be 0 (fast) or 1 (slow)".into()));
    }
    Ok(Arc::new(BlockCocycle { parent: a.clone(), index: s.index, block, window: s.window }))
}

pub fn restrict_cocycle(a: &CocycleSpec, s: &SplittingField, block: usize) -> Result<CocycleSpec> {
    let evaluator = block_cocycle(a, s, block)?;
    let mut spec = CocycleSpec::new(a.base.clone(), Generator::Custom(evaluator), a.beta)?;
    spec.condition_cap = a.condition_cap;
    Ok(spec)
}

/// `‖E_{f^n x}^T A^n_x E_x − B^n_x‖ / ‖B^n_x‖` for the block cocycle `B`.
pub fn frame_consistency(block: &Arc<BlockCocycle>, x: &Point, n: usize) -> Result<f64> {
    let parent = &block.parent;
    let spec = CocycleSpec::new(parent.base.clone(), Generator::Custom(block.clone()), parent.beta)?;
    let b = spec.iterate(x, n as i64)?;
    let ex = block.frame(x)?;
    let efx = block.frame(&parent.base.iterate_point(x, n as i64)?)?;
    let direct = efx.transpose() * parent.iterate(x, n as i64)? * ex;
    Ok(linalg::op_norm(&(direct - &b)) / linalg::op_norm(&b))
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicApproximationReport {
    pub generic: Vec<f64>,
    pub nearest_orbit: String,
    pub nearest_exponents: Vec<f64>,
    pub gap: f64,
    pub tolerance: f64,
    pub violation: bool,
}

/// Distance from the exponents along `x` to the closest periodic exponent vector.
pub fn periodic_approximation_check(
    a: &CocycleSpec,
    x: &Point,
    n: usize,
    orbits: &[PeriodicOrbit],
    tolerance: f64,
) -> Result<PeriodicApproximationReport> {
    if orbits.is_empty() {
        return Err(Error::InvalidInput("no orbits".into()));
    }
    let generic = lyapunov_exponents(a, x, n)?.exponents;
    let per: Vec<Vec<f64>> = orbits.par_iter().map(|o| periodic_exponents(a, o)).collect::<Result<_>>()?;
    let dist = |p: &Vec<f64>| generic.iter().zip(p).map(|(g, q)| (g - q).abs()).fold(0.0, f64::max);
    let (idx, gap) = per
        .iter()
        .map(dist)
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, g)| if g < best.1 { (i, g) } else { best });
    Ok(PeriodicApproximationReport {
        generic,
        nearest_orbit: orbits[idx].label(),
        nearest_exponents: per[idx].clone(),
        gap,
        tolerance,
        violation: gap > tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{PerturbedToralMap, SftBase, SymbolicPoint, ToralAutomorphism};
    use crate::cocycle::WindowTable;

    fn full2() -> BaseSystem {
        BaseSystem::sft(SftBase::full_shift(2, 0.5).unwrap())
    }

    fn point(s: &str) -> Point {
        s.parse::<SymbolicPoint>().unwrap().into()
    }

    #[test]
    fn constant_diagonal_exponents() {
        let a = CocycleSpec::constant(full2(), linalg::diag(&[2.0, 0.5]), 1.0).unwrap();
        let l = lyapunov_exponents(&a, &point("(0)^inf|.|(0)^inf"), 50).unwrap();
        assert!((l.exponents[0] - 2f64.ln()).abs() < 1e-12);
        assert!((l.exponents[1] + 2f64.ln()).abs() < 1e-12);
        assert_eq!(l.multiplicities, vec![1, 1]);
    }

    #[test]
    fn cat_map_derivative_exponents() {
        let map = PerturbedToralMap::linear_only(ToralAutomorphism::cat_map());
        let a = CocycleSpec::derivative(Arc::new(map), 1.0).unwrap();
        let x = Point::Torus(nalgebra::DVector::from_vec(vec![0.123, 0.456]));
        let l = lyapunov_exponents(&a, &x, 20000).unwrap();
        // roots of t^2 - 3t + 1; the transient of the starting frame decays like 1/n
        let lam = ((3.0 + 5f64.sqrt()) / 2.0).ln();
        assert!((l.exponents[0] - lam).abs() < 1e-4);
        assert!((l.exponents[1] + lam).abs() < 1e-4);
        assert!(l.sum().abs() < 1e-12);
    }

    #[test]
    fn grouping_merges_twins() {
        let l = LyapunovSpectrum::from_exponents(vec![0.5, 0.501, -1.0], GROUPING_TOL);
        assert_eq!(l.multiplicities, vec![1, 2]);
        assert!((l.distinct[1] - 0.5005).abs() < 1e-12);
    }

    #[test]
    fn unipotent_periodic_exponents() {
        let u = Mat::from_row_slice(2, 2, &[1.0, 3.0, 0.0, 1.0]);
        let a = CocycleSpec::constant(full2(), u, 1.0).unwrap();
        let o = PeriodicOrbit { point: crate::base::OrbitPoint::Symbolic(SymbolicPoint::periodic(&[0, 1])), period: 2 };
        let e = periodic_exponents(&a, &o).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn diagonal_splitting() {
        let a = CocycleSpec::constant(full2(), linalg::diag(&[3.0, 2.0, 0.5]), 1.0).unwrap();
        let samples = vec![point("(0)^inf|.|(1)^inf")];
        let s = dominated_splitting(&a, 2, &samples, 12).unwrap();
        assert!((s.tau - 0.25).abs() < 1e-9);
        let fast = &s.samples[0].frames[0];
        let slow = &s.samples[0].frames[1];
        assert!(linalg::max_abs_diff(fast, &Mat::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0])) < 1e-9);
        assert!((slow[(2, 0)] - 1.0).abs() < 1e-9);
        let block = restrict_cocycle(&a, &s, 0).unwrap();
        let v = block.value(&samples[0]).unwrap();
        assert!(linalg::max_abs_diff(&v, &linalg::diag(&[3.0, 2.0])) < 1e-9);
    }

    #[test]
    fn rotation_has_no_domination() {
        let a = CocycleSpec::constant(full2(), linalg::rotation(0.4), 1.0).unwrap();
        let r = dominated_splitting(&a, 1, &[point("(0)^inf|.|(0)^inf")], 10);
        assert!(matches!(r, Err(Error::NoDomination(_))));
    }

    #[test]
    fn conjugated_blocks_keep_periodic_spectra() {
        let c = Mat::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.1, 1.0, 0.4, 0.0, -0.3, 1.0]);
        let ci = linalg::inverse(&c).unwrap();
        let table = WindowTable::from_fn(2, 0, 0, 3, |w| {
            let t = if w[0] == 0 { 1.0 } else { 1.3 };
            &c * linalg::diag(&[4.0 * t, 1.0, 0.25 / t]) * &ci
        })
        .unwrap();
        let a = CocycleSpec::locally_constant(full2(), table, 1.0).unwrap();
        let samples = vec![point("(01)^inf|.|(01)^inf")];
        let s = dominated_splitting(&a, 1, &samples, 10).unwrap();
        let fast = restrict_cocycle(&a, &s, 0).unwrap();
        let o = PeriodicOrbit { point: crate::base::OrbitPoint::Symbolic(SymbolicPoint::periodic(&[0, 1])), period: 2 };
        let top = periodic_exponents(&fast, &o).unwrap()[0];
        let full = periodic_exponents(&a, &o).unwrap()[0];
        assert!((top - full).abs() < 1e-8);
        let bc = block_cocycle(&a, &s, 1).unwrap();
        assert!(frame_consistency(&bc, &samples[0], 4).unwrap() < 1e-8);
    }

    #[test]
    fn determinant_telescoping() {
        let table = WindowTable::from_fn(2, -1, 0, 2, |w| {
            Mat::from_row_slice(2, 2, &[2.0 + w[0] as f64, 0.3, 0.1 * w[1] as f64, 0.7])
        })
        .unwrap();
        let a = CocycleSpec::locally_constant(full2(), table, 1.0).unwrap();
        let x = point("(01)^inf|0110.1|(001)^inf");
        let n = 60;
        let l = lyapunov_exponents(&a, &x, n).unwrap();
        let logdet: f64 = a.values(&x, 0, n as i64).unwrap().iter().map(|m| m.determinant().abs().ln()).sum();
        assert!((l.sum() - logdet / n as f64).abs() < 1e-9);
    }
}
