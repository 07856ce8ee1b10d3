//! Toral rigidity: Franks–Manning conjugacies, derivative transfer, nonstationary
//! linearization, smoothness of stable holonomies and the `T^4` skew example.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::toral_map::{reduce_mod1, torus_distance};
use crate::base::{Leaf, Leaves, PerturbedToralMap, ToralAutomorphism, ToralMap};
use crate::cocycle::{match_periodic_conjugator_with, real_jordan};
use crate::error::{Error, Result};
use crate::holonomy::holder_fit;
use crate::linalg::{self, Mat, Vector};

pub const FM_TERM_TOL: f64 = 1e-17;
pub const MAX_FM_TERMS: usize = 400;
pub const MAX_GRID_POINTS: usize = 1 << 20;
pub const CONVERGENCE_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Franks–Manning

/// `h = id + u` with `L ∘ h = h ∘ f`, `u` bounded and `Z^d`-periodic.
#[derive(Clone, Debug)]
pub struct ConjugacyField {
    map: Arc<dyn ToralMap>,
    /// `L^{-(k+1)} π_u`, `k = 0, 1, ...`.
    forward: Vec<Mat>,
    /// `L^{k-1} π_s`, `k = 1, 2, ...`.
    backward: Vec<Mat>,
    pub grid: usize,
    /// `u` at grid points `i / grid`, row-major with the last coordinate fastest.
    pub values: Vec<Vector>,
    /// `sup |L u(x) − P(x) − u(f x)|` over the grid.
    pub residual: f64,
    pub normalization: &'static str,
    pub holder_exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjugacySummary {
    pub grid: usize,
    pub points: usize,
    pub forward_terms: usize,
    pub backward_terms: usize,
    pub residual: f64,
    pub sup_displacement: f64,
    pub normalization: &'static str,
    pub holder_exponent: Option<f64>,
}

fn spectral_projectors(l: &Mat) -> Result<(Mat, Mat, f64, f64)> {
    let d = l.nrows();
    let j = real_jordan(l)?;
    let ri = linalg::inverse(&j.basis)?;
    let mut pu = Mat::zeros(d, d);
    let mut ps = Mat::zeros(d, d);
    let (mut rate_u, mut rate_s) = (f64::INFINITY, 0.0f64);
    for blk in &j.blocks {
        let m = blk.lambda.norm();
        let mut sel = Mat::zeros(d, d);
        for c in blk.offset..blk.offset + blk.width() {
            sel[(c, c)] = 1.0;
        }
        let p = &j.basis * sel * &ri;
        if m > 1.0 {
            pu += p;
            rate_u = rate_u.min(m);
        } else if m < 1.0 {
            ps += p;
            rate_s = rate_s.max(m);
        } else {
            return Err(Error::InvalidInput("linear part is not hyperbolic".into()));
        }
    }
    Ok((pu, ps, rate_u, rate_s))
}

fn series_length(amplitude: f64, contraction: f64, scale: f64) -> usize {
    if amplitude == 0.0 {
        return 0;
    }
    let k = ((FM_TERM_TOL / (amplitude * scale)).ln() / contraction.ln()).ceil();
    (k.max(1.0) as usize + 4).min(MAX_FM_TERMS)
}

impl ConjugacyField {
    pub fn map(&self) -> &Arc<dyn ToralMap> {
        &self.map
    }

    /// `u(x)`.
    pub fn displacement(&self, x: &Vector) -> Vector {
        let f = &self.map;
        let mut u = Vector::zeros(x.len());
        let mut p = reduce_mod1(x);
        for m in &self.forward {
            u += m * f.displacement(&p);
            p = reduce_mod1(&f.apply(&p));
        }
        let mut p = reduce_mod1(x);
        for m in &self.backward {
            p = reduce_mod1(&f.apply_inverse(&p));
            u -= m * f.displacement(&p);
        }
        u
    }

    /// `h(x) = x + u(x)` on the lift.
    pub fn eval(&self, x: &Vector) -> Vector {
        x + self.displacement(x)
    }

    /// `|L u(x) − P(x) − u(f x)|`, the defect of `L ∘ h = h ∘ f` at `x`.
    pub fn defect(&self, x: &Vector) -> f64 {
        let f = &self.map;
        let ux = self.displacement(x);
        let ufx = self.displacement(&reduce_mod1(&f.apply(x)));
        (f.linear_mat() * ux - f.displacement(x) - ufx).amax()
    }

    pub fn grid_point(&self, index: usize) -> Vector {
        grid_point(self.map.dim(), self.grid, index)
    }

    pub fn summary(&self) -> ConjugacySummary {
        ConjugacySummary {
            grid: self.grid,
            points: self.values.len(),
            forward_terms: self.forward.len(),
            backward_terms: self.backward.len(),
            residual: self.residual,
            sup_displacement: self.values.iter().map(|v| v.amax()).fold(0.0, f64::max),
            normalization: self.normalization,
            holder_exponent: self.holder_exponent,
        }
    }
}

fn grid_point(d: usize, n: usize, mut index: usize) -> Vector {
    let mut c = vec![0.0; d];
    for i in (0..d).rev() {
        c[i] = (index % n) as f64 / n as f64;
        index /= n;
    }
    Vector::from_vec(c)
}

/// Solves `L ∘ h = h ∘ f` by the split series and evaluates it on a `grid^d` lattice.
pub fn franks_manning(map: Arc<dyn ToralMap>, grid: usize) -> Result<ConjugacyField> {
    let d = map.dim();
    if grid == 0 {
        return Err(Error::InvalidInput("grid must be >= 1".into()));
    }
    let points = grid.checked_pow(d as u32).filter(|&p| p <= MAX_GRID_POINTS).ok_or_else(|| {
        Error::InvalidInput(format!("grid {grid}^{d} exceeds {MAX_GRID_POINTS} points"))
    })?;
    let c1 = map.c1_size();
    let bound = map.anosov_bound();
    if !map.conjugate_to_linear() {
        return Err(Error::NotContracting(format!("C1 size {c1:.4} above Anosov radius {bound:.4}")));
    }
    let l = map.linear_mat().clone();
    let (pu, ps, rate_u, rate_s) = spectral_projectors(&l)?;
    // amplitude bound for the displacement from a coarse sweep
    let amp = (0..4096usize.min(points.max(256)))
        .map(|i| map.displacement(&grid_point(d, 16, i % 16usize.pow(d as u32))).amax())
        .fold(0.0, f64::max);
    let linv = linalg::inverse(&l)?;
    let scale = linalg::op_norm(&pu).max(linalg::op_norm(&ps));
    let (nf, nb) = (series_length(amp, 1.0 / rate_u, scale), series_length(amp, rate_s, scale));
    let mut forward = Vec::with_capacity(nf);
    let mut m = &linv * &pu;
    for _ in 0..nf {
        forward.push(m.clone());
        m = &pu * (&linv * m);
    }
    let mut backward = Vec::with_capacity(nb);
    let mut m = ps.clone();
    for _ in 0..nb {
        backward.push(m.clone());
        m = &ps * (&l * m);
    }
    if let (Some(last), true) = (forward.last(), amp > 0.0) {
        if linalg::op_norm(last) * amp > 1e-12 {
            return Err(Error::NotContracting("forward series does not decay".into()));
        }
    }
    let mut field = ConjugacyField {
        map,
        forward,
        backward,
        grid,
        values: Vec::new(),
        residual: 0.0,
        normalization: "bounded displacement",
        holder_exponent: None,
    };
    let evaluated: Vec<(Vector, f64)> = (0..points)
        .into_par_iter()
        .map(|i| {
            let x = field.grid_point(i);
            let u = field.displacement(&x);
            let f = &field.map;
            let ufx = field.displacement(&reduce_mod1(&f.apply(&x)));
            let r = (f.linear_mat() * &u - f.displacement(&x) - ufx).amax();
            (u, r)
        })
        .collect();
    field.residual = evaluated.iter().map(|(_, r)| *r).fold(0.0, f64::max);
    field.values = evaluated.into_iter().map(|(u, _)| u).collect();
    field.holder_exponent = displacement_holder_exponent(&field);
    Ok(field)
}

fn displacement_holder_exponent(h: &ConjugacyField) -> Option<f64> {
    let d = h.map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let mut pairs = Vec::new();
    for _ in 0..8 {
        let x = Vector::from_fn(d, |_, _| rng.random::<f64>());
        let v = Vector::from_fn(d, |_, _| rng.random::<f64>() - 0.5).normalize();
        let ux = h.displacement(&x);
        for k in 1..=6 {
            let t = 10f64.powi(-k);
            let dev = (h.displacement(&(&x + &v * t)) - &ux).norm();
            pairs.push((t, dev));
        }
    }
    holder_fit(&pairs).ok().filter(|f| !f.degenerate).map(|f| f.beta)
}

// ---------------------------------------------------------------------------
// derivative transfer

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeSample {
    pub point: Vec<f64>,
    #[serde(serialize_with = "linalg::ser_mat")]
    pub dh: Mat,
    /// `‖L Dh(x) − Dh(fx) Df(x)‖`.
    pub residual: f64,
    /// Per direction, `|D(t_i) − D(t_{i+1})|` along the step ladder.
    pub ladder: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeTransfer {
    /// Eigenvalue moduli labelling the differentiation directions.
    pub directions: Vec<f64>,
    pub step: f64,
    pub ladder_steps: Vec<f64>,
    pub samples: Vec<DerivativeSample>,
    pub max_residual: f64,
    pub converged: bool,
    /// Directions whose ladder did not settle at some sample.
    pub nonconvergent: Vec<usize>,
}

fn eigen_directions(l: &Mat) -> Result<(Mat, Vec<f64>)> {
    let j = real_jordan(l)?;
    let mut moduli = vec![0.0; l.nrows()];
    for blk in &j.blocks {
        for c in blk.offset..blk.offset + blk.width() {
            moduli[c] = blk.lambda.norm();
        }
    }
    let mut basis = j.basis.clone();
    for mut c in basis.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    Ok((basis, moduli))
}

/// Richardson-extrapolated central difference of `h` along `v`.
fn directional(h: &ConjugacyField, x: &Vector, v: &Vector, t: f64) -> Vector {
    let central = |s: f64| -> Vector {
        let du = h.displacement(&(x + v * s)) - h.displacement(&(x - v * s));
        v + du / (2.0 * s)
    };
    (central(t / 2.0) * 4.0 - central(t)) / 3.0
}

fn jacobian_along(h: &ConjugacyField, x: &Vector, basis: &Mat, basis_inv: &Mat, t: f64) -> Mat {
    let cols: Vec<Vector> = basis.column_iter().map(|v| directional(h, x, &v.into_owned(), t)).collect();
    Mat::from_columns(&cols) * basis_inv
}

/// Finite-difference `Dh` at samples, with the defect of `L Dh(x) = Dh(fx) Df(x)`.
pub fn derivative_transfer(h: &ConjugacyField, samples: &[Vector], step: f64, ladder: &[f64]) -> Result<DerivativeTransfer> {
    let f = h.map.clone();
    let l = f.linear_mat().clone();
    let (basis, directions) = eigen_directions(&l)?;
    let basis_inv = linalg::inverse(&basis)?;
    let out: Vec<DerivativeSample> = samples
        .par_iter()
        .map(|x| {
            let dh = jacobian_along(h, x, &basis, &basis_inv, step);
            let fx = reduce_mod1(&f.apply(x));
            let dhf = jacobian_along(h, &fx, &basis, &basis_inv, step);
            let residual = linalg::op_norm(&(&l * &dh - dhf * f.derivative(x)));
            let mut lad = Vec::new();
            let mut converged = Vec::new();
            for v in basis.column_iter() {
                let v = v.into_owned();
                let est: Vec<Vector> = ladder.iter().map(|&t| directional(h, x, &v, t)).collect();
                let deltas: Vec<f64> = est.windows(2).map(|w| (&w[0] - &w[1]).norm()).collect();
                let scale = est.last().map_or(1.0, |e| e.norm().max(1.0));
                converged.push(deltas.last().is_some_and(|&dl| dl <= CONVERGENCE_TOL * scale));
                lad.push(deltas);
            }
            DerivativeSample { point: x.iter().copied().collect(), dh, residual, ladder: lad, converged }
        })
        .collect();
    let max_residual = out.iter().map(|s| s.residual).fold(0.0, f64::max);
    let nonconvergent: Vec<usize> =
        (0..directions.len()).filter(|&j| out.iter().any(|s| !s.converged[j])).collect();
    Ok(DerivativeTransfer {
        directions,
        step,
        ladder_steps: ladder.to_vec(),
        samples: out,
        max_residual,
        converged: nonconvergent.is_empty(),
        nonconvergent,
    })
}

// ---------------------------------------------------------------------------
// rates and bunching

/// `‖Df v^s‖ < ν < 1 < γ^{-1} < ‖Df v‖ < γ̂` for the expanding foliation `W`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RateTriple {
    pub nu: f64,
    pub gamma: f64,
    pub gamma_hat: f64,
}

impl RateTriple {
    pub fn new(nu: f64, gamma: f64, gamma_hat: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < 1.0 && gamma > 0.0 && gamma < 1.0 && gamma_hat > 1.0) {
            return Err(Error::InvalidInput(format!("rates need 0 < ν < 1, γ < 1 < γ̂ (got {nu}, {gamma}, {gamma_hat})")));
        }
        Ok(RateTriple { nu, gamma, gamma_hat })
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BunchingCheck {
    pub rates: RateTriple,
    pub beta: f64,
    /// `γ̂ γ ν^{β/(1+β)}`.
    pub first: f64,
    /// `γ̂ γ^{1+β}`.
    pub second: f64,
    pub holds: bool,
}

pub fn bunching_check(rates: &RateTriple, beta: f64) -> BunchingCheck {
    let RateTriple { nu, gamma, gamma_hat } = *rates;
    let first = gamma_hat * gamma * nu.powf(beta / (1.0 + beta));
    let second = gamma_hat * gamma.powf(1.0 + beta);
    BunchingCheck { rates: *rates, beta, first, second, holds: first < 1.0 && second < 1.0 }
}

/// Rates over a `sweep × sweep` grid, with `W` the foliation expanded by the map in use
/// (`f` for unstable leaves, `f^{-1}` for stable leaves).
pub fn measure_rates(leaves: &Leaves, leaf: Leaf, sweep: usize, margin: f64) -> Result<RateTriple> {
    let pts: Vec<Vector> = (0..sweep * sweep).map(|i| grid_point(2, sweep, i)).collect();
    let st: Vec<(f64, f64)> =
        pts.par_iter().map(|p| (leaves.stretch(p, Leaf::Stable), leaves.stretch(p, Leaf::Unstable))).collect();
    let (s_max, s_min) = st.iter().fold((0.0f64, f64::INFINITY), |(a, b), (s, _)| (a.max(*s), b.min(*s)));
    let (u_max, u_min) = st.iter().fold((0.0f64, f64::INFINITY), |(a, b), (_, u)| (a.max(*u), b.min(*u)));
    let (e_min, e_max, nu) = match leaf {
        Leaf::Unstable => (u_min, u_max, s_max),
        Leaf::Stable => (1.0 / s_max, 1.0 / s_min, 1.0 / u_min),
    };
    RateTriple::new(nu * (1.0 + margin), 1.0 / (e_min * (1.0 - margin)), e_max * (1.0 + margin))
}

// ---------------------------------------------------------------------------
// nonstationary linearization

#[derive(Clone, Debug, Serialize)]
pub struct LinearizationChart {
    pub point: Vec<f64>,
    pub leaf: Leaf,
    pub radius: f64,
    pub depth: usize,
    /// Leaf coordinates of the sampled points.
    pub coordinates: Vec<f64>,
    /// `φ_x` at the samples (depth `n`).
    pub values: Vec<f64>,
    /// `max |φ^{(n)} − φ^{(2n)}|`.
    pub uniqueness: f64,
    /// `max |φ_{fx}(f z) − Df|_E φ_x(z)| / max |φ_x|`.
    pub conjugation_residual: f64,
    /// `|D φ_x(x) − 1|`.
    pub derivative_defect: f64,
    pub bunching: BunchingCheck,
}

/// Pushes `b + d` along `f` (stable) or `f^{-1}` (unstable) for `n` steps; returns the far
/// base point, the far lift difference and `Π a_u(f^{-k} b)` (unstable) or `Π a_s(f^k b)^{-1}`.
fn pushed(leaves: &Leaves, b: &Vector, d: &Vector, leaf: Leaf, n: usize) -> Result<(Vector, Vector, f64)> {
    let f = leaves.map();
    let mut p = reduce_mod1(b);
    let mut d = d.clone();
    let mut gain = 1.0;
    for _ in 0..n {
        // snap back onto the leaf; the transverse component grows under iteration
        let (cs, cu) = leaves.coordinates(&d);
        let t = if leaf == Leaf::Stable { cs } else { cu };
        d = leaves.leaf_offset(&p, t, leaf)?;
        // below this size the differences cancel; the tangent map is exact to O(|d|^2)
        let tiny = d.amax() < 1e-9;
        match leaf {
            Leaf::Stable => {
                gain /= leaves.stretch(&p, Leaf::Stable);
                d = if tiny { f.derivative(&p) * &d } else { f.difference(&p, &d) };
                p = reduce_mod1(&f.apply(&p));
            }
            Leaf::Unstable => {
                let q = reduce_mod1(&f.apply_inverse(&p));
                d = if tiny { f.derivative(&q).lu().solve(&d).unwrap() } else { f.inverse_difference(&p, &d) };
                p = q;
                gain *= leaves.stretch(&p, Leaf::Unstable);
            }
        }
    }
    Ok((p, d, gain))
}

/// `φ_b` at the leaf point `b + d`, truncated at depth `n`.
fn chart_value(leaves: &Leaves, b: &Vector, d: &Vector, leaf: Leaf, n: usize) -> Result<f64> {
    let (p, dn, gain) = pushed(leaves, b, d, leaf, n)?;
    let (cs, cu) = leaves.coordinates(&dn);
    let t = if leaf == Leaf::Stable { cs } else { cu };
    Ok(leaves.arclength(&p, t, leaf)? * gain)
}

/// Holonomy of the scalar cocycle `a_u = ‖Df|E^u‖` between `x` and `x + d`, with `x + d` on
/// the `pair` leaf of `x`: `Π_{k<n} a_u(f^k x)/a_u(f^k y)` for stable pairs and
/// `Π_{k=1..n} a_u(f^{-k} y)/a_u(f^{-k} x)` for unstable pairs.
fn scalar_holonomy(leaves: &Leaves, x: &Vector, d: &Vector, pair: Leaf, n: usize) -> Result<f64> {
    let f = leaves.map();
    let mut p = reduce_mod1(x);
    let mut d = d.clone();
    let mut ratio = 1.0;
    for _ in 0..n {
        let (cs, cu) = leaves.coordinates(&d);
        d = leaves.leaf_offset(&p, if pair == Leaf::Stable { cs } else { cu }, pair)?;
        if d.amax() == 0.0 {
            break;
        }
        let tiny = d.amax() < 1e-9;
        match pair {
            Leaf::Stable => {
                ratio *= leaves.stretch(&p, Leaf::Unstable) / leaves.stretch(&(&p + &d), Leaf::Unstable);
                d = if tiny { f.derivative(&p) * &d } else { f.difference(&p, &d) };
                p = reduce_mod1(&f.apply(&p));
            }
            Leaf::Unstable => {
                let q = reduce_mod1(&f.apply_inverse(&p));
                d = if tiny { f.derivative(&q).lu().solve(&d).unwrap() } else { f.inverse_difference(&p, &d) };
                p = q;
                ratio *= leaves.stretch(&(&p + &d), Leaf::Unstable) / leaves.stretch(&p, Leaf::Unstable);
            }
        }
    }
    Ok(ratio)
}

/// Signed scalar `Df_x|E` in unit tangent coordinates.
fn leaf_derivative(leaves: &Leaves, x: &Vector, leaf: Leaf) -> f64 {
    let f = leaves.map();
    let w = f.derivative(x) * leaves.tangent(x, leaf);
    let t = leaves.tangent(&reduce_mod1(&f.apply(x)), leaf);
    w.norm() * w.dot(&t).signum()
}

pub fn nonstationary_linearization(
    leaves: &Leaves,
    x: &Vector,
    leaf: Leaf,
    radius: f64,
    depth: usize,
    samples: usize,
    beta: f64,
) -> Result<LinearizationChart> {
    let rates = measure_rates(leaves, leaf, 16, 1e-3)?;
    let bunching = bunching_check(&rates, beta);
    if bunching.second >= 1.0 {
        return Err(Error::BunchingFailed { first: bunching.first, second: bunching.second });
    }
    if samples < 2 || depth == 0 {
        return Err(Error::InvalidInput("need >= 2 samples and depth >= 1".into()));
    }
    let f = leaves.map();
    let x = reduce_mod1(x);
    let coordinates: Vec<f64> = (0..samples).map(|i| -radius + 2.0 * radius * i as f64 / (samples - 1) as f64).collect();
    let fx = reduce_mod1(&f.apply(&x));
    let a = leaf_derivative(leaves, &x, leaf);
    let rows: Vec<(f64, f64, f64)> = coordinates
        .par_iter()
        .map(|&t| -> Result<(f64, f64, f64)> {
            let d = leaves.leaf_offset(&x, t, leaf)?;
            let phi = chart_value(leaves, &x, &d, leaf, depth)?;
            let phi2 = chart_value(leaves, &x, &d, leaf, 2 * depth)?;
            let fd = f.difference(&x, &d);
            let image = chart_value(leaves, &fx, &fd, leaf, depth)?;
            Ok((phi, phi2, image))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let uniqueness = rows.iter().map(|r| (r.0 - r.1).abs()).fold(0.0, f64::max);
    let scale = rows.iter().map(|r| (a * r.0).abs()).fold(0.0, f64::max).max(1e-300);
    let conjugation_residual = rows.iter().map(|r| (r.2 - a * r.0).abs()).fold(0.0, f64::max) / scale;
    let hstep = 1e-4 * radius.max(1e-3);
    let dp = leaves.leaf_offset(&x, hstep, leaf)?;
    let dm = leaves.leaf_offset(&x, -hstep, leaf)?;
    let num = chart_value(leaves, &x, &dp, leaf, depth)? - chart_value(leaves, &x, &dm, leaf, depth)?;
    let den = leaves.arclength(&x, hstep, leaf)? - leaves.arclength(&x, -hstep, leaf)?;
    Ok(LinearizationChart {
        point: x.iter().copied().collect(),
        leaf,
        radius,
        depth,
        coordinates,
        values,
        uniqueness,
        conjugation_residual,
        derivative_defect: (num / den - 1.0).abs(),
        bunching,
    })
}

// ---------------------------------------------------------------------------
// foliation holonomy

/// The local stable holonomy between unstable leaves, `W^u(x) → W^u(y)`.
#[derive(Clone, Debug, Serialize)]
pub struct LeafMap {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Unstable coordinates on `W^u(x)`.
    pub sources: Vec<f64>,
    /// Unstable coordinates of the images on `W^u(y)`.
    pub images: Vec<f64>,
    /// `max` change under a refined leaf computation, when requested.
    pub accuracy: Option<f64>,
}

fn check_stable_pair(leaves: &Leaves, x: &Vector, y: &Vector) -> Result<()> {
    let (_, t) = leaves.intersect(x, y)?;
    if t.abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("y is not on the stable leaf of x (offset {t:.3e})")));
    }
    Ok(())
}

fn holonomy_images(leaves: &Leaves, x: &Vector, y: &Vector, ts: &[f64]) -> Result<Vec<f64>> {
    ts.par_iter()
        .map(|&t| {
            if x == y {
                return Ok(t);
            }
            let z = leaves.leaf_point(x, t, Leaf::Unstable)?;
            Ok(leaves.intersect(&z, y)?.1)
        })
        .collect()
}

pub fn foliation_holonomy(leaves: &Leaves, x: &Vector, y: &Vector, ts: &[f64], refine: bool) -> Result<LeafMap> {
    check_stable_pair(leaves, x, y)?;
    let images = holonomy_images(leaves, x, y, ts)?;
    let accuracy = if refine {
        let fine = Leaves::with_depth(leaves.map().clone(), leaves.depth() + 6, 5e-16)?;
        let again = holonomy_images(&fine, x, y, ts)?;
        Some(images.iter().zip(&again).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(LeafMap {
        x: x.iter().copied().collect(),
        y: y.iter().copied().collect(),
        sources: ts.to_vec(),
        images,
        accuracy,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LadderRow {
    pub step: f64,
    /// `σ_y(ℋ(z_t)) / σ_x(z_t)`.
    pub quotient: f64,
    /// `|quotient − H|`.
    pub deviation: f64,
    /// Richardson-extrapolated central quotient minus `H`.
    pub central_deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeCheckReport {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Stable holonomy of `Df|E^u` from `x` to `y`.
    pub cocycle_holonomy: f64,
    pub ladder: Vec<LadderRow>,
    pub monotone: bool,
    pub final_deviation: f64,
    pub bunching: BunchingCheck,
}

/// Finite-difference derivative of the foliation holonomy against `H^s_{x,y}` of `Df|E^u`.
pub fn holonomy_derivative_check(
    leaves: &Leaves,
    x: &Vector,
    y: &Vector,
    steps: &[f64],
    beta: f64,
) -> Result<DerivativeCheckReport> {
    let rates = measure_rates(leaves, Leaf::Unstable, 16, 1e-3)?;
    let bunching = bunching_check(&rates, beta);
    if !bunching.holds {
        return Err(Error::BunchingFailed { first: bunching.first, second: bunching.second });
    }
    check_stable_pair(leaves, x, y)?;
    let cocycle_holonomy = scalar_holonomy(leaves, x, &(y - x), Leaf::Stable, 80)?;
    let quotient = |t: f64| -> Result<(f64, f64)> {
        let sx = leaves.arclength(x, t, Leaf::Unstable)?;
        let img = holonomy_images(leaves, x, y, &[t])?[0];
        let sy = leaves.arclength(y, img, Leaf::Unstable)?;
        Ok((sy, sx))
    };
    let ladder: Vec<LadderRow> = steps
        .par_iter()
        .map(|&t| -> Result<LadderRow> {
            let (sy, sx) = quotient(t)?;
            let central = |s: f64| -> Result<f64> {
                let (py, px) = quotient(s)?;
                let (my, mx) = quotient(-s)?;
                Ok((py - my) / (px - mx))
            };
            let rich = (4.0 * central(t / 2.0)? - central(t)?) / 3.0;
            Ok(LadderRow {
                step: t,
                quotient: sy / sx,
                deviation: (sy / sx - cocycle_holonomy).abs(),
                central_deviation: (rich - cocycle_holonomy).abs(),
            })
        })
        .collect::<Result<_>>()?;
    let monotone = ladder.windows(2).all(|w| w[1].deviation < w[0].deviation);
    let final_deviation = ladder.last().map_or(f64::NAN, |r| r.deviation);
    Ok(DerivativeCheckReport {
        x: x.iter().copied().collect(),
        y: y.iter().copied().collect(),
        cocycle_holonomy,
        ladder,
        monotone,
        final_deviation,
        bunching,
    })
}

/// `C(y) H^u_{x,y} − C(x)` for the leaf derivative `C = Dh|E^u` against `L|E^u`, whose
/// holonomies are trivial. Pairs are `(x, t)` with `y` the point of `W^u(x)` at coordinate `t`.
pub fn intertwining_residual(h: &ConjugacyField, leaves: &Leaves, pairs: &[(Vector, f64)], step: f64) -> Result<f64> {
    let eu = leaves.unstable_direction().clone();
    let leaf_gain = |p: &Vector| -> f64 {
        let tangent = leaves.tangent(p, Leaf::Unstable);
        (directional(h, p, &tangent, step)).dot(&eu)
    };
    pairs
        .par_iter()
        .map(|(x, t)| -> Result<f64> {
            let d = leaves.leaf_offset(x, *t, Leaf::Unstable)?;
            let hu = scalar_holonomy(leaves, x, &d, Leaf::Unstable, 80)?;
            Ok((leaf_gain(&(x + &d)) * hu - leaf_gain(x)).abs())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

// ---------------------------------------------------------------------------
// metric isometry

/// `max |σ(g_y^{1/2} M g_x^{-1/2}) − 1|` over `(g_x, g_y, M)` triples.
pub fn metric_isometry_residual(samples: &[(Mat, Mat, Mat)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for (gx, gy, m) in samples {
        let lx = gx.clone().cholesky().ok_or_else(|| Error::InvalidInput("metric is not positive definite".into()))?.l();
        let ly = gy.clone().cholesky().ok_or_else(|| Error::InvalidInput("metric is not positive definite".into()))?.l();
        let t = ly.transpose() * m * linalg::inverse(&lx.transpose())?;
        let s = linalg::singular_values(&t);
        worst = worst.max((s[0] - 1.0).abs()).max((s[s.len() - 1] - 1.0).abs());
    }
    Ok(worst)
}

/// Pulled-back metric `Dh(x)^T Dh(x)` from a finite-difference Jacobian.
pub fn pulled_back_metric(h: &ConjugacyField, x: &Vector, step: f64) -> Result<Mat> {
    let (basis, _) = eigen_directions(h.map.linear_mat())?;
    let bi = linalg::inverse(&basis)?;
    let j = jacobian_along(h, x, &basis, &bi, step);
    Ok(j.transpose() * j)
}

// ---------------------------------------------------------------------------
// T^4 skew example

#[derive(Clone, Debug, Serialize)]
pub struct SkewPeriodRow {
    pub n: usize,
    pub points: usize,
    pub max_eigenvalue_deviation: f64,
    pub max_closure_error: f64,
    pub conjugators_found: usize,
    pub max_condition: f64,
    pub mean_condition: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SkewReport {
    pub epsilon: f64,
    pub lambda: f64,
    pub mu: f64,
    pub rows: Vec<SkewPeriodRow>,
    pub max_eigenvalue_deviation: f64,
    pub weakly_irreducible: bool,
    pub passed: bool,
}

pub const SKEW_EIGEN_TOL: f64 = 1e-8;

fn expanding_root(m: &Mat) -> f64 {
    let tr = m.trace();
    let det = m.determinant();
    0.5 * (tr.abs() + (tr * tr - 4.0 * det).sqrt())
}

/// Periodic data of `(x, y) ↦ (Ax + ε sin(2π y_1) v, By)` at every point of period `≤ n_max`.
pub fn t4_skew_periodic_demo(a: &ToralAutomorphism, b: &ToralAutomorphism, epsilon: f64, n_max: usize) -> Result<SkewReport> {
    let map = PerturbedToralMap::skew_t4(a, b, epsilon)?;
    let am = a.as_mat();
    let bm = b.as_mat();
    let lambda = expanding_root(&am);
    let mu = expanding_root(&bm);
    if !(mu > lambda && lambda > 1.0) {
        return Err(Error::InvalidInput(format!("need μ > λ > 1 (got μ = {mu}, λ = {lambda})")));
    }
    let l = map.linear_mat().clone();
    let cap = 8_000_000;
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let fa = a.fixed_points(n as u32, cap)?;
        let fb = b.fixed_points(n as u32, cap)?;
        let an = linalg::power(&am, n as u32);
        let solve = linalg::inverse(&(linalg::identity(2) - &an))?;
        let ln = linalg::power(&l, n as u32);
        let mut expected = [lambda.powi(-(n as i32)), mu.powi(-(n as i32)), lambda.powi(n as i32), mu.powi(n as i32)];
        expected.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let per_y: Vec<Vec<(f64, f64, Option<f64>)>> = fb
            .par_iter()
            .map(|yr| -> Result<Vec<(f64, f64, Option<f64>)>> {
                let y = yr.to_f64();
                // x-part of f^n(0, y) is the inhomogeneous term of the fixed-point equation
                let mut p = Vector::from_vec(vec![0.0, 0.0, y[0], y[1]]);
                for _ in 0..n {
                    p = map.apply(&p);
                }
                let c = Vector::from_vec(vec![p[0], p[1]]);
                let x0 = &solve * c;
                fa.iter()
                    .map(|xr| -> Result<(f64, f64, Option<f64>)> {
                        let xs = xr.to_f64();
                        let start = reduce_mod1(&Vector::from_vec(vec![x0[0] + xs[0], x0[1] + xs[1], y[0], y[1]]));
                        let mut q = start.clone();
                        let mut dfn = linalg::identity(4);
                        for _ in 0..n {
                            dfn = map.derivative(&q) * dfn;
                            q = reduce_mod1(&map.apply(&q));
                        }
                        let closure = torus_distance(start.as_slice(), q.as_slice());
                        let mut ev: Vec<f64> = linalg::eigenvalues(&dfn).iter().map(|z| z.norm()).collect();
                        ev.sort_by(|p, q| p.partial_cmp(q).unwrap());
                        let dev = ev.iter().zip(&expected).map(|(z, e)| (z - e).abs() / e).fold(0.0, f64::max);
                        let cond = match_periodic_conjugator_with(&dfn, &ln, false)?.map(|c| c.condition);
                        Ok((dev, closure, cond))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let all: Vec<&(f64, f64, Option<f64>)> = per_y.iter().flatten().collect();
        let conds: Vec<f64> = all.iter().filter_map(|r| r.2).collect();
        rows.push(SkewPeriodRow {
            n,
            points: all.len(),
            max_eigenvalue_deviation: all.iter().map(|r| r.0).fold(0.0, f64::max),
            max_closure_error: all.iter().map(|r| r.1).fold(0.0, f64::max),
            conjugators_found: conds.len(),
            max_condition: conds.iter().copied().fold(0.0, f64::max),
            mean_condition: if conds.is_empty() { f64::NAN } else { conds.iter().sum::<f64>() / conds.len() as f64 },
        });
    }
    let max_eigenvalue_deviation = rows.iter().map(|r| r.max_eigenvalue_deviation).fold(0.0, f64::max);
    let weakly_irreducible = map.linear().weak_irreducibility()?.weakly_irreducible;
    let passed = max_eigenvalue_deviation < SKEW_EIGEN_TOL && rows.iter().all(|r| r.conjugators_found == r.points);
    Ok(SkewReport { epsilon, lambda, mu, rows, max_eigenvalue_deviation, weakly_irreducible, passed })
}
