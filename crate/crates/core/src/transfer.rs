//! Transfer maps between cocycles, isometrizing metrics, the scalar Livšic equation and
//! the unipotent periodic criterion.

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{BaseSystem, PeriodicOrbit, Point, SftBase, SymbolicPoint};
use crate::cocycle::{
    bunching_margin, real_jordan, BunchingCertificate, CocycleSpec, Generator, WindowTable,
};
use crate::error::{Error, Result};
use crate::holonomy::{Direction, HolonomySolver};
use crate::linalg::{self, Mat};

pub const ISOMETRY_TOL: f64 = 1e-6;
pub const HOMOCLINIC_TOL: f64 = 1e-6;
pub const ANCHOR_TOL: f64 = 1e-8;
pub const MAX_TRANSFER_CONDITION: f64 = 1e8;
pub const OBSTRUCTION_TOL: f64 = 1e-6;
pub const LIVSIC_TOL: f64 = 1e-8;
pub const COMBINE_TOL: f64 = 1e-8;
const HOLONOMY_TOL: f64 = 1e-13;
const BUNCHING_HORIZON: usize = 16;
const BUNCHING_SAMPLES: usize = 16;

// ---------------------------------------------------------------------------
// isometrizing metric

#[derive(Clone, Debug, Serialize)]
pub struct IsometrizingMetric {
    /// Gram matrix, normalized to `det G = 1`.
    #[serde(serialize_with = "linalg::ser_mat")]
    pub gram: Mat,
    /// `|λ|` for each real Jordan block.
    pub moduli: Vec<f64>,
    /// `max_i ‖P_i^T (B^T G B − ρ_i² G) P_i‖ / ‖G‖`.
    pub residual: f64,
    #[serde(skip)]
    basis: Mat,
    #[serde(skip)]
    widths: Vec<(usize, usize)>,
    #[serde(skip)]
    factor: Mat,
}

impl IsometrizingMetric {
    /// The common modulus when `B` is conformal.
    pub fn rho(&self) -> Option<f64> {
        let first = *self.moduli.first()?;
        self.moduli.iter().all(|m| (m - first).abs() <= 1e-9 * first.max(1.0)).then_some(first)
    }

    /// `‖u‖_G`.
    pub fn norm(&self, u: &linalg::Vector) -> f64 {
        (self.factor.transpose() * u).norm()
    }

    /// Operator norm of `m` with respect to `G`.
    pub fn op_norm(&self, m: &Mat) -> f64 {
        let l = &self.factor;
        let li = linalg::inverse(&l.transpose()).expect("Gram factor is invertible");
        linalg::op_norm(&(l.transpose() * m * li))
    }

    /// Lower-triangular `L` with `G = L L^T`.
    pub fn factor(&self) -> &Mat {
        &self.factor
    }

    /// `B` rescaled by `1/|λ|` on each block, which is `G`-orthogonal.
    pub fn normalized(&self, b: &Mat) -> Result<Mat> {
        let r = &self.basis;
        let ri = linalg::inverse(r)?;
        let mut j = &ri * b * r;
        for (&(off, w), &m) in self.widths.iter().zip(&self.moduli) {
            for c in off..off + w {
                for row in 0..j.nrows() {
                    j[(row, c)] /= m;
                }
            }
        }
        Ok(r * j * ri)
    }
}

/// A Gram matrix making `B` conformal on each Lyapunov space.
pub fn isometrizing_inner_product(b: &Mat) -> Result<IsometrizingMetric> {
    let d = b.nrows();
    let jordan = real_jordan(b)?;
    if jordan.blocks.iter().any(|blk| blk.size > 1) {
        return Err(Error::NotDiagonalizable);
    }
    let r = &jordan.basis;
    let ri = linalg::inverse(r)?;
    let mut gram = Mat::zeros(d, d);
    let mut projectors = Vec::new();
    let widths: Vec<(usize, usize)> = jordan.blocks.iter().map(|blk| (blk.offset, blk.width())).collect();
    let moduli: Vec<f64> = jordan.blocks.iter().map(|blk| blk.lambda.norm()).collect();
    // real eigenvalues sharing a value are grouped so the eigenspace keeps the Euclidean structure
    let mut used = vec![false; jordan.blocks.len()];
    for (i, blk) in jordan.blocks.iter().enumerate() {
        if used[i] {
            continue;
        }
        let group: Vec<usize> = if blk.complex {
            vec![i]
        } else {
            (i..jordan.blocks.len())
                .filter(|&k| {
                    let o = &jordan.blocks[k];
                    !o.complex && !used[k] && (o.lambda - blk.lambda).norm() <= 1e-9 * blk.lambda.norm().max(1.0)
                })
                .collect()
        };
        let mut q = Mat::zeros(d, d);
        for &k in &group {
            used[k] = true;
            let (off, w) = widths[k];
            for c in off..off + w {
                q.row_mut(c).copy_from(&ri.row(c));
            }
        }
        let mut cols = Mat::zeros(d, d);
        for &k in &group {
            let (off, w) = widths[k];
            for c in off..off + w {
                cols.column_mut(c).copy_from(&r.column(c));
            }
        }
        let p = &cols * &q;
        let block = if blk.complex {
            let qq = q.transpose() * &q;
            let pp = p.transpose() * &p;
            qq * (pp.trace() / (q.transpose() * &q).trace())
        } else {
            p.transpose() * &p
        };
        gram += &block;
        projectors.push((p, blk.lambda.norm()));
    }
    gram = (&gram + gram.transpose()) * 0.5;
    let det = gram.determinant();
    if !(det > 0.0) {
        return Err(Error::NotIsometric);
    }
    gram /= det.powf(1.0 / d as f64);
    let scale = linalg::op_norm(&gram);
    let mut residual = 0.0f64;
    for (p, rho) in &projectors {
        let e = p.transpose() * (b.transpose() * &gram * b - &gram * (rho * rho)) * p;
        residual = residual.max(linalg::op_norm(&e) / (scale * rho * rho));
    }
    let factor = gram.clone().cholesky().ok_or(Error::NotIsometric)?.l();
    Ok(IsometrizingMetric { gram, moduli, residual, basis: r.clone(), widths, factor })
}

// ---------------------------------------------------------------------------
// recurrence

/// Times `n ≤ n_max` with `‖B̃^n − Id‖_G < tol` for the block-normalized `B̃`.
pub fn recurrence_times(b: &Mat, n_max: usize, tol: f64) -> Result<Vec<usize>> {
    let metric = isometrizing_inner_product(b)?;
    let bt = metric.normalized(b)?;
    let id = linalg::identity(b.nrows());
    let mut p = id.clone();
    let mut times = Vec::new();
    for n in 1..=n_max {
        p = &bt * p;
        if metric.op_norm(&(&p - &id)) < tol {
            times.push(n);
        }
    }
    if times.len() < 3 {
        return Err(Error::NoRecurrenceFound(n_max));
    }
    Ok(times)
}

// ---------------------------------------------------------------------------
// normalization

fn symbolic(x: &Point) -> Result<&SymbolicPoint> {
    x.symbolic().ok_or_else(|| Error::InvalidInput("symbolic base required".into()))
}

fn sft_of(base: &BaseSystem) -> Result<&SftBase> {
    base.as_sft().ok_or_else(|| Error::InvalidInput("symbolic base required".into()))
}

fn fixed_point(q: &SymbolicPoint) -> Result<()> {
    if q.period() != Some(1) {
        return Err(Error::InvalidInput(format!("{q} is not a fixed point")));
    }
    Ok(())
}

/// `x ↦ C_q^{-1} A_x C_q`, after checking `C_q^{-1} A_q C_q = B`.
pub fn normalize_at_fixed_point(a: &CocycleSpec, q: &SymbolicPoint, c_q: &Mat, b: &Mat) -> Result<CocycleSpec> {
    fixed_point(q)?;
    let c_inv = linalg::inverse(c_q)?;
    let aq = a.value(&Point::Symbolic(q.clone()))?;
    let residual = linalg::op_norm(&(&c_inv * &aq * c_q - b)) / linalg::op_norm(b);
    if !(residual < ANCHOR_TOL) {
        return Err(Error::BadConjugator(residual));
    }
    if *c_q == linalg::identity(a.dim) {
        return Ok(a.clone());
    }
    let generator = match &a.generator {
        Generator::Constant(m) => Generator::Constant(&c_inv * m * c_q),
        g => Generator::Conjugated { inner: Box::new(g.clone()), c: c_q.clone(), c_inv },
    };
    let mut out = CocycleSpec::new(a.base.clone(), generator, a.beta)?;
    out.condition_cap = a.condition_cap;
    out.horizon = a.horizon;
    Ok(out)
}

// ---------------------------------------------------------------------------
// transfer maps

/// A matrix field usable in conjugacy checks.
pub trait Conjugacy: Sync {
    /// The power of `f` the field conjugates over.
    fn power(&self) -> usize;
    fn at(&self, x: &SymbolicPoint) -> Option<Mat>;
}

impl Conjugacy for WindowTable {
    fn power(&self) -> usize {
        1
    }

    fn at(&self, x: &SymbolicPoint) -> Option<Mat> {
        Some(self.value_at(x, 0).clone())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderCertificate {
    pub beta: f64,
    /// `2 M K′`.
    pub constant: f64,
    /// `max` of `‖C‖`, `‖C^{-1}‖` over stored samples.
    pub m: f64,
    /// Leafwise constant: `‖C(y) C(x)^{-1} − Id‖ ≤ K d(x,y)^β` on local leaves.
    pub k_leaf: f64,
    /// `K′ = 2K + K²`.
    pub k_prime: f64,
    /// `max d(C(x), C(y)) / (2MK′ d(x,y)^β)` over checked pairs.
    pub max_ratio: f64,
    pub pairs: usize,
    pub valid: bool,
}

#[derive(Clone, Debug)]
pub struct TransferMap {
    pub anchor: SymbolicPoint,
    pub anchor_matrix: Mat,
    /// The constant target cocycle.
    pub target: Mat,
    pub power: usize,
    pub beta: f64,
    /// Sample points agree with the anchor outside `[-radius, radius]`.
    pub radius: usize,
    pub samples: BTreeMap<SymbolicPoint, Mat>,
    pub certificate: HolderCertificate,
    /// `max ‖H^s_{x,q} H^u_{q,x} − Id‖`.
    pub homoclinic_residual: f64,
    /// Relative residual of the conjugacy over `f^power` on closed samples.
    pub conjugacy_residual: f64,
    pub bunching: BunchingCertificate,
}

impl Conjugacy for TransferMap {
    fn power(&self) -> usize {
        self.power
    }

    fn at(&self, x: &SymbolicPoint) -> Option<Mat> {
        self.samples.get(x).cloned()
    }
}

#[derive(Serialize)]
struct TransferJson<'a> {
    anchor: String,
    #[serde(serialize_with = "linalg::ser_mat")]
    anchor_matrix: &'a Mat,
    power: usize,
    beta: f64,
    constant: f64,
    certificate: &'a HolderCertificate,
    homoclinic_residual: f64,
    conjugacy_residual: f64,
    rows: Vec<(String, Vec<Vec<f64>>)>,
}

impl TransferMap {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, x: &SymbolicPoint) -> Option<&Mat> {
        self.samples.get(x)
    }

    /// Truncation of `x` to `[-radius, radius]`, padded with the anchor symbol.
    pub fn project(&self, x: &SymbolicPoint) -> SymbolicPoint {
        let c = self.anchor.symbol(0);
        let m = self.radius as i64;
        SymbolicPoint::from_fn(1, -m, m + 1, 1, |i| if i.abs() <= m { x.symbol(i) } else { c })
    }

    /// `C(x)` at a stored point, or at the projection of `x`.
    pub fn value(&self, x: &SymbolicPoint) -> Result<Mat> {
        if let Some(m) = self.samples.get(x) {
            return Ok(m.clone());
        }
        let p = self.project(x);
        self.samples.get(&p).cloned().ok_or_else(|| Error::MissingSample(p.to_string()))
    }

    /// Stored points whose `f^power` image is stored as well.
    pub fn closed_samples(&self) -> Vec<SymbolicPoint> {
        self.samples.keys().filter(|x| self.samples.contains_key(&x.shift(self.power as i64))).cloned().collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows = self.samples.iter().map(|(x, m)| (x.to_string(), linalg::to_rows(m))).collect();
        let view = TransferJson {
            anchor: self.anchor.to_string(),
            anchor_matrix: &self.anchor_matrix,
            power: self.power,
            beta: self.beta,
            constant: self.certificate.constant,
            certificate: &self.certificate,
            homoclinic_residual: self.homoclinic_residual,
            conjugacy_residual: self.conjugacy_residual,
            rows,
        };
        serde_json::to_value(view).expect("transfer map serializes")
    }
}

/// Transfer map from `A` to the constant cocycle `B` with `A_q = B` at the fixed point `q`.
pub fn build_transfer_fixed_point(a: &CocycleSpec, b: &Mat, q: &SymbolicPoint, depth: usize) -> Result<TransferMap> {
    let id = linalg::identity(a.dim);
    build_transfer(a, b, q, &id, 1, depth)
}

/// Transfer map over `f^power` anchored at `C(q) = anchor`, where `A^power_q = anchor B^power anchor^{-1}`.
///
/// Samples are the points agreeing with `q` outside `[-r, r]`, `r = ⌈depth / 2⌉`.
pub fn build_transfer(
    a: &CocycleSpec,
    b: &Mat,
    q: &SymbolicPoint,
    anchor: &Mat,
    power: usize,
    depth: usize,
) -> Result<TransferMap> {
    fixed_point(q)?;
    if power == 0 {
        return Err(Error::InvalidInput("power must be >= 1".into()));
    }
    let sft = sft_of(&a.base)?;
    let metric = isometrizing_inner_product(b)?;
    if !(metric.residual < ISOMETRY_TOL) {
        return Err(Error::NotIsometric);
    }
    let qp = Point::Symbolic(q.clone());
    let bp = linalg::power(b, power as u32);
    let aq = a.iterate(&qp, power as i64)?;
    let anchor_inv = linalg::inverse(anchor)?;
    let anchor_res = linalg::op_norm(&(&aq - anchor * &bp * &anchor_inv)) / linalg::op_norm(&aq);
    if !(anchor_res < ANCHOR_TOL) {
        return Err(Error::BadConjugator(anchor_res));
    }
    let radius = depth.div_ceil(2);
    let points = sft.homoclinic_points(q, radius)?;
    let bunch_samples: Vec<Point> =
        points.iter().step_by((points.len() / BUNCHING_SAMPLES).max(1)).map(|p| Point::Symbolic(p.clone())).collect();
    let bunching = bunching_margin(a, a.beta, BUNCHING_HORIZON, &bunch_samples)?;
    let solver = HolonomySolver::new(a.clone(), bunching.clone())?;

    let computed: Vec<(Mat, f64)> = points
        .par_iter()
        .map(|x| -> Result<(Mat, f64)> {
            let xp = Point::Symbolic(x.clone());
            let hs = solver.holonomy(&qp, &xp, HOLONOMY_TOL, Direction::Stable)?.matrix;
            let hu = solver.holonomy(&qp, &xp, HOLONOMY_TOL, Direction::Unstable)?.matrix;
            let residual = linalg::op_norm(&(linalg::solve(&hs, &hu)? - linalg::identity(a.dim)));
            Ok((hs * anchor, residual))
        })
        .collect::<Result<_>>()?;
    let mut homoclinic_residual = 0.0f64;
    for (x, (c, res)) in points.iter().zip(&computed) {
        if !(*res <= HOMOCLINIC_TOL) {
            return Err(Error::HomoclinicInconsistency { point: x.to_string(), residual: *res });
        }
        homoclinic_residual = homoclinic_residual.max(*res);
        let cond = linalg::condition(c);
        if !(cond < MAX_TRANSFER_CONDITION) {
            return Err(Error::IllConditioned { condition: cond, cap: MAX_TRANSFER_CONDITION });
        }
    }
    let samples: BTreeMap<SymbolicPoint, Mat> =
        points.into_iter().zip(computed.into_iter().map(|(c, _)| c)).collect();
    let certificate = holder_certificate(sft, &samples, a.beta)?;
    let mut map = TransferMap {
        anchor: q.clone(),
        anchor_matrix: anchor.clone(),
        target: b.clone(),
        power,
        beta: a.beta,
        radius,
        samples,
        certificate,
        homoclinic_residual,
        conjugacy_residual: 0.0,
        bunching,
    };
    let closed = map.closed_samples();
    let bspec = CocycleSpec::constant(a.base.clone(), b.clone(), a.beta)?;
    map.conjugacy_residual = if closed.is_empty() { 0.0 } else { verify_conjugacy(a, &bspec, &map, &closed)? };
    Ok(map)
}

/// Leafwise constant from stored local-leaf pairs, then `d(C(x),C(y)) ≤ 2MK′ d^β` on every
/// stored pair in local product range.
fn holder_certificate(sft: &SftBase, samples: &BTreeMap<SymbolicPoint, Mat>, beta: f64) -> Result<HolderCertificate> {
    let pts: Vec<&SymbolicPoint> = samples.keys().collect();
    let mats: Vec<&Mat> = samples.values().collect();
    let invs: Vec<Mat> = mats.iter().map(|m| linalg::inverse(m)).collect::<Result<_>>()?;
    let m = mats
        .iter()
        .zip(&invs)
        .map(|(c, ci)| linalg::op_norm(c).max(linalg::op_norm(ci)))
        .fold(0.0f64, f64::max);
    let n = pts.len();
    let id = linalg::identity(mats.first().map_or(1, |c| c.nrows()));
    let k_leaf = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut k = 0.0f64;
            for j in i + 1..n {
                let (x, y) = (pts[i], pts[j]);
                let stable = x.stable_agreement(y).is_some_and(|s| s <= 0);
                let unstable = x.unstable_agreement(y).is_some_and(|u| u >= 0);
                if !(stable || unstable) {
                    continue;
                }
                let d = sft.distance(x, y);
                let dev = linalg::op_norm(&(mats[j] * &invs[i] - &id));
                k = k.max(dev / d.powf(beta));
            }
            k
        })
        .reduce(|| 0.0, f64::max);
    let k_prime = 2.0 * k_leaf + k_leaf * k_leaf;
    let constant = 2.0 * m * k_prime;
    let (max_ratio, pairs) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut worst = 0.0f64;
            let mut count = 0usize;
            for j in i + 1..n {
                let (x, y) = (pts[i], pts[j]);
                if x.symbol(0) != y.symbol(0) {
                    continue;
                }
                count += 1;
                let d = sft.distance(x, y);
                let dist = linalg::op_norm(&(mats[i] - mats[j])) + linalg::op_norm(&(&invs[i] - &invs[j]));
                if dist == 0.0 {
                    continue;
                }
                let bound = constant * d.powf(beta);
                worst = worst.max(if bound > 0.0 { dist / bound } else { f64::INFINITY });
            }
            (worst, count)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    Ok(HolderCertificate { beta, constant, m, k_leaf, k_prime, max_ratio, pairs, valid: max_ratio <= 1.0 + 1e-9 })
}

/// `max_x ‖A^p_x − C(f^p x) B^p_x C(x)^{-1}‖ / ‖A^p_x‖` with `p = c.power()`.
pub fn verify_conjugacy(a: &CocycleSpec, b: &CocycleSpec, c: &dyn Conjugacy, samples: &[SymbolicPoint]) -> Result<f64> {
    let p = c.power() as i64;
    samples
        .par_iter()
        .map(|x| -> Result<f64> {
            let fx = x.shift(p);
            let cx = c.at(x).ok_or_else(|| Error::MissingSample(x.to_string()))?;
            let cfx = c.at(&fx).ok_or_else(|| Error::MissingSample(fx.to_string()))?;
            let xp = Point::Symbolic(x.clone());
            let ax = a.iterate(&xp, p)?;
            let bx = b.iterate(&xp, p)?;
            let rhs = cfx * bx * linalg::inverse(&cx)?;
            Ok(linalg::op_norm(&(&ax - rhs)) / linalg::op_norm(&ax))
        })
        .try_reduce(|| 0.0, |u, v| Ok(u.max(v)))
}

#[derive(Clone, Debug, Serialize)]
pub struct HomoclinicConsistency {
    pub point: String,
    pub n: usize,
    /// `‖A^{2n}_{f^{-n}x} − Id‖`.
    pub value: f64,
    pub closing_orbit: String,
    /// `‖A^{2n}_p − Id‖` along the closing orbit.
    pub closing_value: f64,
}

/// Consistency along the largest usable recurrence time in `times`.
pub fn homoclinic_consistency(
    a: &CocycleSpec,
    x: &SymbolicPoint,
    q: &SymbolicPoint,
    times: &[usize],
) -> Result<HomoclinicConsistency> {
    fixed_point(q)?;
    let sft = sft_of(&a.base)?;
    if x.stable_agreement(q).is_none() || x.unstable_agreement(q).is_none() {
        return Err(Error::InvalidInput(format!("{x} is not homoclinic to {q}")));
    }
    let id = linalg::identity(a.dim);
    let mut last_err = Error::NoRecurrenceFound(times.last().copied().unwrap_or(0));
    for &n in times.iter().rev() {
        if 2 * n > a.horizon {
            continue;
        }
        let y = x.shift(-(n as i64));
        let attempt = (|| -> Result<HomoclinicConsistency> {
            let value = linalg::op_norm(&(a.iterate(&Point::Symbolic(y.clone()), 2 * n as i64)? - &id));
            let (p, _) = sft.close(&y, 2 * n)?;
            let closing_value = linalg::op_norm(&(a.iterate(&Point::Symbolic(p.clone()), 2 * n as i64)? - &id));
            Ok(HomoclinicConsistency { point: x.to_string(), n, value, closing_orbit: p.to_string(), closing_value })
        })();
        match attempt {
            Ok(r) => return Ok(r),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

// ---------------------------------------------------------------------------
// invariant metric

#[derive(Clone, Debug)]
pub struct MetricField {
    /// `g_x = C(x)^{-T} G_B C(x)^{-1}`.
    pub grams: BTreeMap<SymbolicPoint, Mat>,
    pub rho: f64,
    /// `max |σ(A_x)/ρ − 1|` for `A_x : (E_x, g_x) → (E_{fx}, g_{fx})`.
    pub isometry_residual: f64,
    /// `max |σ(H^u_{x,y}) − 1|` over local unstable pairs.
    pub holonomy_residual: f64,
    pub holonomy_pairs: usize,
}

impl MetricField {
    pub fn rows(&self) -> Vec<(String, Vec<Vec<f64>>)> {
        self.grams.iter().map(|(x, g)| (x.to_string(), linalg::to_rows(g))).collect()
    }
}

fn distortion(lx: &Mat, ly: &Mat, m: &Mat) -> Result<(f64, f64)> {
    // σ of L_y^T M L_x^{-T}
    let t = ly.transpose() * m * linalg::inverse(&lx.transpose())?;
    let s = linalg::singular_values(&t);
    Ok((s[0], s[s.len() - 1]))
}

/// Pushes the `B`-isometric metric through `C`; checks `A` and the unstable holonomies of `A`.
pub fn invariant_metric_from_transfer(c: &TransferMap, a: &CocycleSpec, max_pairs: usize) -> Result<MetricField> {
    let metric = isometrizing_inner_product(&c.target)?;
    let rho = metric.rho().ok_or_else(|| Error::InvalidInput("target is not conformal".into()))?;
    let lb = metric.factor();
    let factors: BTreeMap<&SymbolicPoint, Mat> = c
        .samples
        .iter()
        .map(|(x, cx)| Ok((x, linalg::inverse(cx)?.transpose() * lb)))
        .collect::<Result<_>>()?;
    let grams = factors.iter().map(|(x, l)| ((*x).clone(), l * l.transpose())).collect();
    let closed: Vec<SymbolicPoint> = c.samples.keys().filter(|x| c.samples.contains_key(&x.shift(1))).cloned().collect();
    let mut isometry_residual = 0.0f64;
    for x in &closed {
        let ax = a.value(&Point::Symbolic(x.clone()))?;
        let (hi, lo) = distortion(&factors[x], &factors[&x.shift(1)], &ax)?;
        isometry_residual = isometry_residual.max((hi / rho - 1.0).abs()).max((lo / rho - 1.0).abs());
    }
    let solver = HolonomySolver::new(a.clone(), c.bunching.clone())?;
    let keys: Vec<&SymbolicPoint> = c.samples.keys().collect();
    let mut pairs = Vec::new();
    'outer: for (i, x) in keys.iter().enumerate() {
        for y in &keys[i + 1..] {
            if x.unstable_agreement(y).is_some_and(|u| u >= 0) {
                pairs.push((*x, *y));
                if pairs.len() >= max_pairs {
                    break 'outer;
                }
            }
        }
    }
    let holonomy_residual = pairs
        .par_iter()
        .map(|(x, y)| -> Result<f64> {
            let h = solver
                .holonomy(&Point::Symbolic((*x).clone()), &Point::Symbolic((*y).clone()), HOLONOMY_TOL, Direction::Unstable)?
                .matrix;
            let (hi, lo) = distortion(&factors[x], &factors[y], &h)?;
            Ok((hi - 1.0).abs().max((lo - 1.0).abs()))
        })
        .try_reduce(|| 0.0, |u, v| Ok(u.max(v)))?;
    Ok(MetricField { grams, rho, isometry_residual, holonomy_residual, holonomy_pairs: pairs.len() })
}

// ---------------------------------------------------------------------------
// coprime combination

#[derive(Clone, Debug, Serialize)]
pub struct CoprimeCombineReport {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub r: i64,
    pub s: i64,
    /// Relative residual of `A_x = C_2(fx) B C_2(x)^{-1}` on closed samples.
    pub residual: f64,
    /// `max ‖D B − B D‖ / ‖B‖` for `D(x) = C_1(x)^{-1} C_2(x)`.
    pub centralizer_residual: f64,
    pub samples: usize,
}

/// `(g, r, s)` with `a r + b s = g = gcd(a, b)`.
pub fn extended_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    let (mut r0, mut r1) = (a, b);
    let (mut s0, mut s1) = (1i64, 0i64);
    let (mut t0, mut t1) = (0i64, 1i64);
    while r1 != 0 {
        let qt = r0.div_euclid(r1);
        (r0, r1) = (r1, r0 - qt * r1);
        (s0, s1) = (s1, s0 - qt * s1);
        (t0, t1) = (t1, t0 - qt * t1);
    }
    if r0 < 0 {
        (-r0, -s0, -t0)
    } else {
        (r0, s0, t0)
    }
}

/// Checks that `c2` (over `f^K`) conjugates over `f` itself, given `c1` over `f^{NM}`.
pub fn combine_coprime(
    a: &CocycleSpec,
    c1: &TransferMap,
    n: usize,
    m: usize,
    c2: &TransferMap,
) -> Result<CoprimeCombineReport> {
    let nm = n * m;
    if c1.power != nm {
        return Err(Error::InvalidInput(format!("first transfer map is over f^{}, expected f^{nm}", c1.power)));
    }
    let k = c2.power;
    let (g, r, s) = extended_gcd(nm as i64, k as i64);
    if g != 1 {
        return Err(Error::NotCoprime { a: nm as i64, b: k as i64, gcd: g });
    }
    debug_assert_eq!(nm as i64 * r + k as i64 * s, 1);
    let b = &c2.target;
    let bn = linalg::op_norm(b);
    let mut centralizer_residual = 0.0f64;
    for (x, m2) in &c2.samples {
        if let Some(m1) = c1.samples.get(x) {
            let d = linalg::solve(m1, m2)?;
            centralizer_residual = centralizer_residual.max(linalg::op_norm(&(&d * b - b * &d)) / bn);
        }
    }
    let closed: Vec<SymbolicPoint> = c2.samples.keys().filter(|x| c2.samples.contains_key(&x.shift(1))).cloned().collect();
    let c2_over_f = SampledConjugacy { power: 1, samples: &c2.samples };
    let bspec = CocycleSpec::constant(a.base.clone(), b.clone(), a.beta)?;
    let residual = verify_conjugacy(a, &bspec, &c2_over_f, &closed)?;
    if !(residual < COMBINE_TOL) {
        return Err(Error::CombineFailed(residual));
    }
    Ok(CoprimeCombineReport { n, m, k, r, s, residual, centralizer_residual, samples: closed.len() })
}

struct SampledConjugacy<'a> {
    power: usize,
    samples: &'a BTreeMap<SymbolicPoint, Mat>,
}

impl Conjugacy for SampledConjugacy<'_> {
    fn power(&self) -> usize {
        self.power
    }

    fn at(&self, x: &SymbolicPoint) -> Option<Mat> {
        self.samples.get(x).cloned()
    }
}

// ---------------------------------------------------------------------------
// scalar Livšic equation

#[derive(Clone, Debug, Serialize)]
pub struct LivsicSolution {
    /// `φ` depends on `x_lo .. x_{hi}` for this window.
    pub window: (i64, i64),
    pub rho: f64,
    #[serde(serialize_with = "ser_phi")]
    pub phi: BTreeMap<Vec<u8>, f64>,
    /// `max |a^n(p) / ρ^n − 1|` over checked orbits.
    pub obstruction: f64,
    pub orbits: usize,
    /// `max |a(x) φ(x) / (ρ φ(fx)) − 1|` over all cylinders.
    pub residual: f64,
}

fn ser_phi<S: serde::Serializer>(phi: &BTreeMap<Vec<u8>, f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeMap;
    let mut map = s.serialize_map(Some(phi.len()))?;
    for (w, v) in phi {
        let key: String = w.iter().map(|c| char::from(b'0' + c)).collect();
        map.serialize_entry(&key, v)?;
    }
    map.end()
}

impl LivsicSolution {
    pub fn value(&self, x: &SymbolicPoint) -> Option<f64> {
        self.phi.get(&x.word(self.window.0, self.window.1 + 1)).copied()
    }
}

fn admissible_words(sft: &SftBase, len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut word = Vec::with_capacity(len);
    fn go(sft: &SftBase, len: usize, word: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if word.len() == len {
            out.push(word.clone());
            return;
        }
        for s in 0..sft.symbols() as u8 {
            if word.last().is_none_or(|&l| sft.allowed(l, s)) {
                word.push(s);
                go(sft, len, word, out);
                word.pop();
            }
        }
    }
    go(sft, len, &mut word, &mut out);
    out
}

/// Solves `a(x) φ(x) / φ(fx) = ρ` for a positive locally constant scalar cocycle.
pub fn scalar_livsic(a: &CocycleSpec, rho: f64, n_max: usize) -> Result<LivsicSolution> {
    let table = match &a.generator {
        Generator::LocallyConstant(t) if t.dim() == 1 => t,
        _ => return Err(Error::InvalidInput("scalar locally constant cocycle required".into())),
    };
    if !(rho > 0.0) {
        return Err(Error::InvalidInput("rho must be positive".into()));
    }
    if table.entries().iter().any(|m| !(m[(0, 0)] > 0.0)) {
        return Err(Error::InvalidInput("cocycle values must be positive".into()));
    }
    let sft = sft_of(&a.base)?;
    let orbits = a.base.periodic_orbits(n_max, crate::base::DEFAULT_ORBIT_CAP)?;
    let mut obstruction = 0.0f64;
    for o in &orbits {
        let x = o.base_point();
        let s: f64 = a.values(&x, 0, o.period as i64)?.iter().map(|m| m[(0, 0)].ln()).sum();
        let dev = (s - o.period as f64 * rho.ln()).exp_m1().abs();
        if !(dev <= OBSTRUCTION_TOL) {
            return Err(Error::PeriodicObstruction { orbit: o.label(), deviation: dev });
        }
        obstruction = obstruction.max(dev);
    }
    let (lo, hi) = table.window();
    let len = (hi - lo) as usize;
    let states = admissible_words(sft, len);
    let edges = admissible_words(sft, len + 1);
    let mut out_edges: BTreeMap<&[u8], Vec<&Vec<u8>>> = BTreeMap::new();
    for e in &edges {
        out_edges.entry(&e[..len]).or_default().push(e);
    }
    let mut log_phi: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
    let root = states[0].clone();
    log_phi.insert(root.clone(), 0.0);
    let mut queue = VecDeque::from([root]);
    while let Some(s) = queue.pop_front() {
        let ls = log_phi[&s];
        for e in out_edges.get(s.as_slice()).into_iter().flatten() {
            let t = e[1..].to_vec();
            if !log_phi.contains_key(&t) {
                log_phi.insert(t.clone(), ls + table.value(e)[(0, 0)].ln() - rho.ln());
                queue.push_back(t);
            }
        }
    }
    if log_phi.len() != states.len() {
        return Err(Error::InvalidInput("transition graph is not irreducible".into()));
    }
    let mut residual = 0.0f64;
    let mut witness = String::new();
    for e in &edges {
        let r = (table.value(e)[(0, 0)].ln() + log_phi[&e[..len]] - log_phi[&e[1..]] - rho.ln()).exp_m1().abs();
        if r > residual {
            residual = r;
            witness = e.iter().map(|c| char::from(b'0' + c)).collect();
        }
    }
    if !(residual <= OBSTRUCTION_TOL) {
        return Err(Error::PeriodicObstruction { orbit: format!("cycle through {witness}"), deviation: residual });
    }
    let phi = log_phi.into_iter().map(|(w, l)| (w, l.exp())).collect();
    Ok(LivsicSolution { window: (lo, hi - 1), rho, phi, obstruction, orbits: orbits.len(), residual })
}

// ---------------------------------------------------------------------------
// unipotent family

/// `A_x = [[1, α(x)], [0, 1]]` against the constant `B = [[1, β], [0, 1]]`.
#[derive(Clone, Debug)]
pub struct UnipotentFamily {
    pub base: BaseSystem,
    /// Scalar (`1×1`) table for `α`.
    pub alpha: WindowTable,
    pub beta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnipotentRow {
    pub orbit: String,
    pub period: usize,
    pub sum: f64,
    pub target: f64,
    pub conjugate: bool,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UnipotentReport {
    pub conjugate: bool,
    pub ratio_bound: f64,
    pub witness: Option<String>,
    pub rows: Vec<UnipotentRow>,
}

impl UnipotentFamily {
    pub fn new(base: BaseSystem, alpha: WindowTable, beta: f64) -> Result<Self> {
        if alpha.dim() != 1 {
            return Err(Error::InvalidInput("alpha must be scalar".into()));
        }
        sft_of(&base)?;
        Ok(UnipotentFamily { base, alpha, beta })
    }

    pub fn cocycle(&self) -> Result<CocycleSpec> {
        let (lo, hi) = self.alpha.window();
        let table = WindowTable::from_fn(self.alpha.symbols(), lo, hi, 2, |w| {
            linalg::from_rows(&[vec![1.0, self.alpha.value(w)[(0, 0)]], vec![0.0, 1.0]]).expect("2x2")
        })?;
        CocycleSpec::locally_constant(self.base.clone(), table, 1.0)
    }

    pub fn target(&self) -> Result<CocycleSpec> {
        CocycleSpec::constant(self.base.clone(), linalg::from_rows(&[vec![1.0, self.beta], vec![0.0, 1.0]])?, 1.0)
    }

    /// `Σ_{j<n} α(f^j p)` over the orbit.
    pub fn birkhoff_sum(&self, orbit: &PeriodicOrbit) -> Result<f64> {
        let p = orbit.base_point();
        let x = symbolic(&p)?;
        Ok((0..orbit.period as i64).map(|j| self.alpha.value_at(x, j)[(0, 0)]).sum())
    }
}

/// Periodic conjugacy test for the unipotent family.
pub fn unipotent_periodic_criterion(fam: &UnipotentFamily, orbits: &[PeriodicOrbit]) -> Result<UnipotentReport> {
    let tol = 1e-12 * fam.alpha.entries().iter().map(|m| m[(0, 0)].abs()).fold(fam.beta.abs(), f64::max).max(1e-300);
    let mut rows = Vec::with_capacity(orbits.len());
    for o in orbits {
        let sum = fam.birkhoff_sum(o)?;
        let target = o.period as f64 * fam.beta;
        let zs = sum.abs() <= tol * o.period as f64;
        let zt = target.abs() <= tol * o.period as f64;
        let conjugate = zs == zt;
        let ratio = match (zs, zt) {
            (true, true) => 1.0,
            (false, false) => (sum / target).abs().max((target / sum).abs()),
            _ => f64::INFINITY,
        };
        rows.push(UnipotentRow { orbit: o.label(), period: o.period, sum, target, conjugate, ratio });
    }
    let witness = rows.iter().find(|r| !r.conjugate).map(|r| r.orbit.clone());
    let ratio_bound = rows.iter().map(|r| r.ratio).fold(1.0, f64::max);
    Ok(UnipotentReport { conjugate: witness.is_none(), ratio_bound, witness, rows })
}
