//! Linear cocycles over a base system.

pub mod conjugator;

use std::fmt::Debug;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

pub use conjugator::{
    match_periodic_conjugator, match_periodic_conjugator_with, real_jordan, JordanBlock, PeriodicConjugator, RealJordan,
};

use crate::base::{BaseSystem, PeriodicOrbit, Point, SymbolicPoint, ToralMap};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};

pub const DEFAULT_CONDITION_CAP: f64 = 1e12;
pub const DEFAULT_HORIZON: usize = 100_000;

/// Matrices indexed by the word `x_{lo} .. x_{hi}` (inclusive) seen from the current point.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTable {
    lo: i64,
    hi: i64,
    symbols: usize,
    dim: usize,
    values: Vec<Mat>,
}

impl WindowTable {
    pub fn from_fn(symbols: usize, lo: i64, hi: i64, dim: usize, f: impl Fn(&[u8]) -> Mat) -> Result<Self> {
        if hi < lo {
            return Err(Error::InvalidInput("window must satisfy lo <= hi".into()));
        }
        let len = (hi - lo + 1) as u32;
        let count = symbols
            .checked_pow(len)
            .filter(|&c| c <= 1 << 22)
            .ok_or_else(|| Error::InvalidInput("window table too large".into()))?;
        let mut values = Vec::with_capacity(count);
        let mut word = vec![0u8; len as usize];
        for idx in 0..count {
            let mut r = idx;
            for j in (0..len as usize).rev() {
                word[j] = (r % symbols) as u8;
                r /= symbols;
            }
            let m = f(&word);
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::InvalidInput("table entry has wrong dimension".into()));
            }
            values.push(m);
        }
        Ok(WindowTable { lo, hi, symbols, dim, values })
    }

    pub fn window(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn entries(&self) -> &[Mat] {
        &self.values
    }

    pub fn value(&self, word: &[u8]) -> &Mat {
        let idx = word.iter().fold(0usize, |acc, &s| acc * self.symbols + s as usize);
        &self.values[idx]
    }

    /// Entry at `f^j x`.
    pub fn value_at(&self, x: &SymbolicPoint, j: i64) -> &Mat {
        let mut idx = 0usize;
        for i in self.lo..=self.hi {
            idx = idx * self.symbols + x.symbol(j + i) as usize;
        }
        &self.values[idx]
    }

    /// Text form: one line per window word, `word: a11 a12 ... add`.
    pub fn to_text(&self) -> String {
        let len = (self.hi - self.lo + 1) as usize;
        let mut out = format!("window {} {}\n", self.lo, self.hi);
        for (idx, m) in self.values.iter().enumerate() {
            let mut r = idx;
            let mut word = vec![0u8; len];
            for j in (0..len).rev() {
                word[j] = (r % self.symbols) as u8;
                r /= self.symbols;
            }
            let w: String = word.iter().map(|s| char::from_digit(*s as u32, 36).unwrap()).collect();
            let entries: Vec<String> = (0..self.dim)
                .flat_map(|i| (0..self.dim).map(move |j| (i, j)))
                .map(|(i, j)| format!("{:.16e}", m[(i, j)]))
                .collect();
            out.push_str(&format!("{w}: {}\n", entries.join(" ")));
        }
        out
    }

    pub fn from_text(text: &str, symbols: usize, dim: usize) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Parse("empty table".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "window" {
            return Err(Error::Parse("table must start with `window lo hi`".into()));
        }
        let lo: i64 = parts[1].parse().map_err(|_| Error::Parse("bad window lo".into()))?;
        let hi: i64 = parts[2].parse().map_err(|_| Error::Parse("bad window hi".into()))?;
        let mut entries = std::collections::HashMap::new();
        for line in lines {
            let (w, rest) = line.split_once(':').ok_or_else(|| Error::Parse(format!("bad table line `{line}`")))?;
            let word: Vec<u8> = w
                .trim()
                .chars()
                .map(|c| c.to_digit(36).map(|d| d as u8).ok_or_else(|| Error::Parse(format!("bad symbol `{c}`"))))
                .collect::<Result<_>>()?;
            let vals: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| Error::Parse(format!("bad number `{v}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != dim * dim || word.len() as i64 != hi - lo + 1 {
                return Err(Error::Parse(format!("table line `{line}` has wrong size")));
            }
            entries.insert(word, Mat::from_row_slice(dim, dim, &vals));
        }
        let missing = std::cell::RefCell::new(None);
        let table = WindowTable::from_fn(symbols, lo, hi, dim, |w| match entries.get(w) {
            Some(m) => m.clone(),
            None => {
                *missing.borrow_mut() = Some(w.to_vec());
                linalg::identity(dim)
            }
        })?;
        if let Some(w) = missing.into_inner() {
            return Err(Error::Parse(format!("table misses word {w:?}")));
        }
        Ok(table)
    }
}

/// A user-supplied fiber map `x ↦ A_x`.
pub trait FiberMap: Send + Sync + Debug {
    fn dim(&self) -> usize;

    fn value(&self, base: &BaseSystem, x: &Point) -> Result<Mat>;

    /// `A_{f^j x}` for `j` in `from..to`.
    fn values(&self, base: &BaseSystem, x: &Point, from: i64, to: i64) -> Result<Vec<Mat>> {
        let mut p = base.iterate_point(x, from)?;
        let mut out = Vec::with_capacity((to - from).max(0) as usize);
        for _ in from..to {
            out.push(self.value(base, &p)?);
            p = base.iterate_point(&p, 1)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub enum Generator {
    Constant(Mat),
    LocallyConstant(WindowTable),
    /// `Df` of a toral map.
    Derivative,
    /// `c^{-1} A_x c` for an inner generator.
    Conjugated { inner: Box<Generator>, c: Mat, c_inv: Mat },
    Custom(Arc<dyn FiberMap>),
}

#[derive(Clone, Debug)]
pub struct CocycleSpec {
    pub base: BaseSystem,
    pub generator: Generator,
    pub dim: usize,
    pub beta: f64,
    pub condition_cap: f64,
    pub horizon: usize,
}

impl CocycleSpec {
    pub fn new(base: BaseSystem, generator: Generator, beta: f64) -> Result<Self> {
        let dim = match &generator {
            Generator::Constant(m) => m.nrows(),
            Generator::LocallyConstant(t) => t.dim(),
            Generator::Derivative => match &base {
                BaseSystem::Torus(m) => m.dim(),
                BaseSystem::Sft(_) => return Err(Error::InvalidInput("derivative cocycle needs a toral base".into())),
            },
            Generator::Conjugated { c, .. } => c.nrows(),
            Generator::Custom(f) => f.dim(),
        };
        if let (Generator::LocallyConstant(t), BaseSystem::Sft(b)) = (&generator, &base) {
            if t.symbols() != b.symbols() {
                return Err(Error::InvalidInput("table alphabet does not match the base".into()));
            }
        }
        if matches!(generator, Generator::LocallyConstant(_)) && base.as_sft().is_none() {
            return Err(Error::InvalidInput("locally constant generator needs a symbolic base".into()));
        }
        let spec = CocycleSpec { base, generator, dim, beta, condition_cap: DEFAULT_CONDITION_CAP, horizon: DEFAULT_HORIZON };
        spec.check_generator_values()?;
        Ok(spec)
    }

    pub fn constant(base: BaseSystem, b: Mat, beta: f64) -> Result<Self> {
        CocycleSpec::new(base, Generator::Constant(b), beta)
    }

    pub fn locally_constant(base: BaseSystem, table: WindowTable, beta: f64) -> Result<Self> {
        CocycleSpec::new(base, Generator::LocallyConstant(table), beta)
    }

    pub fn derivative(map: Arc<dyn ToralMap>, beta: f64) -> Result<Self> {
        CocycleSpec::new(BaseSystem::Torus(map), Generator::Derivative, beta)
    }

    fn check_generator_values(&self) -> Result<()> {
        let check = |m: &Mat| -> Result<()> {
            let c = linalg::condition(m);
            if c > self.condition_cap {
                return Err(Error::IllConditioned { condition: c, cap: self.condition_cap });
            }
            Ok(())
        };
        match &self.generator {
            Generator::Constant(m) => check(m),
            Generator::LocallyConstant(t) => t.entries().iter().try_for_each(check),
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> Option<&Mat> {
        match &self.generator {
            Generator::Constant(m) => Some(m),
            _ => None,
        }
    }

    pub fn value(&self, x: &Point) -> Result<Mat> {
        Ok(self.values(x, 0, 1)?.remove(0))
    }

    /// `A_{f^j x}` for `j` in `from..to`.
    pub fn values(&self, x: &Point, from: i64, to: i64) -> Result<Vec<Mat>> {
        generator_values(&self.generator, &self.base, x, from, to)
    }

    /// Ordered product `A_{f^{to-1} x} ⋯ A_{f^{from} x}`.
    pub fn product(&self, x: &Point, from: i64, to: i64) -> Result<Mat> {
        if let Some(b) = self.is_constant() {
            return Ok(linalg::power(b, (to - from).max(0) as u32));
        }
        let vals = self.values(x, from, to)?;
        let mut p = linalg::identity(self.dim);
        for (k, v) in vals.iter().enumerate() {
            p = v * p;
            if k % 16 == 15 {
                self.check_condition(&p)?;
            }
        }
        self.check_condition(&p)?;
        Ok(p)
    }

    fn check_condition(&self, p: &Mat) -> Result<()> {
        let c = linalg::condition(p);
        if !(c <= self.condition_cap) {
            return Err(Error::IllConditioned { condition: c, cap: self.condition_cap });
        }
        Ok(())
    }

    /// `A^n_x`; for negative `n`, `(A^{|n|}_{f^{n} x})^{-1}`.
    pub fn iterate(&self, x: &Point, n: i64) -> Result<Mat> {
        if n.unsigned_abs() as usize > self.horizon {
            return Err(Error::InvalidInput(format!("|n| = {} exceeds horizon {}", n.abs(), self.horizon)));
        }
        if n >= 0 {
            self.product(x, 0, n)
        } else {
            linalg::inverse(&self.product(x, n, 0)?)
        }
    }

    /// Inverse cocycle over `f^{-1}`: `x ↦ A_{f^{-1}x}^{-1}`.
    pub fn inverse_values(&self, x: &Point, n: usize) -> Result<Vec<Mat>> {
        let vals = self.values(x, -(n as i64), 0)?;
        vals.iter().rev().map(linalg::inverse).collect()
    }
}

fn generator_values(g: &Generator, base: &BaseSystem, x: &Point, from: i64, to: i64) -> Result<Vec<Mat>> {
    let len = (to - from).max(0) as usize;
    match g {
        Generator::Constant(m) => Ok(vec![m.clone(); len]),
        Generator::LocallyConstant(t) => {
            let s = x.symbolic().ok_or_else(|| Error::InvalidInput("symbolic point required".into()))?;
            Ok((from..to).map(|j| t.value_at(s, j).clone()).collect())
        }
        Generator::Derivative => {
            let map = base.as_torus().ok_or_else(|| Error::InvalidInput("toral base required".into()))?;
            let mut p = base.iterate_point(x, from)?;
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let v = p.torus().unwrap();
                out.push(map.derivative(v));
                p = base.iterate_point(&p, 1)?;
            }
            Ok(out)
        }
        Generator::Conjugated { inner, c, c_inv } => {
            Ok(generator_values(inner, base, x, from, to)?.into_iter().map(|m| c_inv * m * c).collect())
        }
        Generator::Custom(f) => f.values(base, x, from, to),
    }
}

/// `‖A − B‖ + ‖A⁻¹ − B⁻¹‖` in the spectral norm.
pub fn gl_distance(a: &Mat, b: &Mat) -> Result<f64> {
    let ai = linalg::inverse(a)?;
    let bi = linalg::inverse(b)?;
    Ok(linalg::op_norm(&(a - b)) + linalg::op_norm(&(ai - bi)))
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicDatum {
    pub orbit: PeriodicOrbit,
    #[serde(serialize_with = "linalg::ser_mat")]
    pub return_matrix: Mat,
    #[serde(serialize_with = "linalg::ser_complex")]
    pub eigenvalues: Vec<Complex64>,
}

pub fn periodic_data(a: &CocycleSpec, orbit: &PeriodicOrbit) -> Result<PeriodicDatum> {
    let p = orbit.base_point();
    let m = a.iterate(&p, orbit.period as i64)?;
    let eigenvalues = linalg::eigenvalues(&m);
    Ok(PeriodicDatum { orbit: orbit.clone(), return_matrix: m, eigenvalues })
}

/// Periodic data over many orbits (parallel, order preserving).
pub fn periodic_data_all(a: &CocycleSpec, orbits: &[PeriodicOrbit]) -> Result<Vec<PeriodicDatum>> {
    orbits.par_iter().map(|o| periodic_data(a, o)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NarrowSpectrumSpec {
    pub centers: Vec<f64>,
    pub width: f64,
}

impl NarrowSpectrumSpec {
    pub fn new(centers: Vec<f64>, width: f64) -> Result<Self> {
        if width < 0.0 || centers.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("centers must be non-increasing, width >= 0".into()));
        }
        Ok(NarrowSpectrumSpec { centers, width })
    }

    pub fn contains(&self, datum: &PeriodicDatum) -> bool {
        orbit_deviation(datum, &self.centers) <= self.width
    }
}

fn orbit_deviation(datum: &PeriodicDatum, centers: &[f64]) -> f64 {
    let n = datum.orbit.period as f64;
    let mut logs: Vec<f64> = datum.eigenvalues.iter().map(|z| z.norm().ln() / n).collect();
    logs.sort_by(|a, b| b.partial_cmp(a).unwrap());
    logs.iter().zip(centers).map(|(l, c)| (l - c).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct NarrowReport {
    pub delta: f64,
    pub witness: String,
    pub orbits: usize,
}

/// Smallest `δ` with `e^{n(λ_i−δ)} ≤ |α_i| ≤ e^{n(λ_i+δ)}` on every orbit (sorted matching).
pub fn delta_narrow_radius(a: &CocycleSpec, orbits: &[PeriodicOrbit], centers: &[f64]) -> Result<NarrowReport> {
    if orbits.is_empty() {
        return Err(Error::InvalidInput("no orbits".into()));
    }
    if centers.len() != a.dim {
        return Err(Error::InvalidInput("need one center per dimension".into()));
    }
    let mut sorted = centers.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let data = periodic_data_all(a, orbits)?;
    let devs: Vec<f64> = data.iter().map(|d| orbit_deviation(d, &sorted)).collect();
    let (idx, &delta) = devs
        .iter()
        .enumerate()
        .fold((0, &f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(NarrowReport { delta, witness: orbits[idx].label(), orbits: orbits.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct BunchingCertificate {
    pub beta: f64,
    pub horizon: usize,
    pub theta: f64,
    pub constant: f64,
    pub slack: f64,
    pub valid: bool,
    /// `max` over samples and both time directions, for `n = 1..=horizon`.
    pub sequence: Vec<f64>,
}

impl BunchingCertificate {
    /// A certificate for cocycles known to have trivial holonomies.
    pub fn trivial(beta: f64, nu: f64) -> Self {
        let theta = nu.powf(beta);
        BunchingCertificate { beta, horizon: 0, theta, constant: 1.0, slack: 0.0, valid: true, sequence: Vec::new() }
    }

    pub fn bound(&self, n: usize, dist: f64) -> f64 {
        self.constant * self.theta.powi(n as i32) * dist.powf(self.beta)
    }
}

pub const DEFAULT_BUNCHING_SLACK: f64 = 1e-3;

/// Fits `θ̂, L̂` to `max_x ‖A^n_x‖‖(A^n_x)^{-1}‖ ν^{nβ}` (forward and backward).
pub fn bunching_margin(a: &CocycleSpec, beta: f64, horizon: usize, samples: &[Point]) -> Result<BunchingCertificate> {
    if horizon == 0 || samples.is_empty() {
        return Err(Error::InvalidInput("bunching fit needs samples and horizon >= 1".into()));
    }
    let nu = a.base.contraction_rate();
    let per_sample: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x| -> Result<Vec<f64>> {
            let fwd = a.values(x, 0, horizon as i64)?;
            let bwd = a.inverse_values(x, horizon)?;
            let mut pf = linalg::identity(a.dim);
            let mut pb = linalg::identity(a.dim);
            let mut out = Vec::with_capacity(horizon);
            for n in 0..horizon {
                pf = &fwd[n] * pf;
                pb = &bwd[n] * pb;
                let s = linalg::condition(&pf).max(linalg::condition(&pb));
                out.push(s * nu.powf(beta * (n + 1) as f64));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let sequence: Vec<f64> =
        (0..horizon).map(|n| per_sample.iter().map(|s| s[n]).fold(0.0, f64::max)).collect();
    let xs: Vec<f64> = (1..=horizon).map(|n| n as f64).collect();
    let ys: Vec<f64> = sequence.iter().map(|s| s.ln()).collect();
    let (_, slope, _) = if horizon == 1 { (ys[0], ys[0], 0.0) } else { linalg::linear_fit(&xs, &ys) };
    let theta = slope.exp();
    let constant = sequence
        .iter()
        .enumerate()
        .map(|(n, s)| s / theta.powi(n as i32 + 1))
        .fold(0.0, f64::max)
        * (1.0 + 1e-9);
    let slack = DEFAULT_BUNCHING_SLACK;
    Ok(BunchingCertificate { beta, horizon, theta, constant, slack, valid: theta < 1.0 - slack, sequence })
}

/// `‖A^n_x‖ ‖(A^n_x)^{-1}‖`.
pub fn qc_distortion(a: &CocycleSpec, x: &Point, n: i64) -> Result<f64> {
    Ok(linalg::condition(&a.iterate(x, n)?))
}

/// Log-log slope of the distortion sequence `n ↦ qc(x, n)` for `n` in `ns`.
pub fn qc_growth_exponent(a: &CocycleSpec, x: &Point, ns: &[i64]) -> Result<f64> {
    let vals: Vec<f64> = ns.iter().map(|&n| qc_distortion(a, x, n)).collect::<Result<_>>()?;
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    Ok(linalg::linear_fit(&xs, &ys).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::{SftBase, SymbolicPoint};

    fn full2() -> BaseSystem {
        BaseSystem::sft(SftBase::full_shift(2, 0.5).unwrap())
    }

    fn diag_table() -> WindowTable {
        WindowTable::from_fn(2, 0, 0, 2, |w| if w[0] == 0 { linalg::diag(&[2.0, 0.5]) } else { linalg::diag(&[3.0, 1.0 / 3.0]) })
            .unwrap()
    }

    #[test]
    fn iterate_examples() {
        let a = CocycleSpec::locally_constant(full2(), diag_table(), 1.0).unwrap();
        let x: Point = "(0)^inf|.01|(0)^inf".parse::<SymbolicPoint>().unwrap().into();
        assert_eq!(a.iterate(&x, 0).unwrap(), linalg::identity(2));
        let m = a.iterate(&x, 2).unwrap();
        assert!(linalg::max_abs_diff(&m, &linalg::diag(&[6.0, 1.0 / 6.0])) < 1e-14);
        let b = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let c = CocycleSpec::constant(full2(), b.clone(), 1.0).unwrap();
        assert_eq!(c.iterate(&x, 3).unwrap(), &b * &b * &b);
    }

    #[test]
    fn negative_iterate_inverts() {
        let a = CocycleSpec::locally_constant(full2(), diag_table(), 1.0).unwrap();
        let x: Point = "(01)^inf|10.011|(1)^inf".parse::<SymbolicPoint>().unwrap().into();
        let back = a.iterate(&x, -3).unwrap();
        let fx = a.base.iterate_point(&x, -3).unwrap();
        let fwd = a.iterate(&fx, 3).unwrap();
        assert!(linalg::max_abs_diff(&(back * fwd), &linalg::identity(2)) < 1e-12);
    }

    #[test]
    fn gl_distance_examples() {
        let i = linalg::identity(2);
        assert_eq!(gl_distance(&i, &i).unwrap(), 0.0);
        assert!((gl_distance(&i, &(&i * 2.0)).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(gl_distance(&i, &Mat::zeros(2, 2)), Err(Error::Singular)));
    }

    #[test]
    fn table_text_round_trip() {
        let t = diag_table();
        let back = WindowTable::from_text(&t.to_text(), 2, 2).unwrap();
        assert_eq!(back, t);
        assert!(WindowTable::from_text("window 0 0\n0: 1 0 0 1\n", 2, 2).is_err());
    }

    #[test]
    fn qc_of_diagonal() {
        let c = CocycleSpec::constant(full2(), linalg::diag(&[2.0, 0.5]), 1.0).unwrap();
        let x: Point = SymbolicPoint::periodic(&[0]).into();
        assert!((qc_distortion(&c, &x, 5).unwrap() - 1024.0).abs() < 1e-9);
    }

    #[test]
    fn bunching_of_constant_cocycles() {
        let x: Vec<Point> = vec![SymbolicPoint::periodic(&[0, 1]).into()];
        let iso = CocycleSpec::constant(full2(), linalg::rotation(0.3), 1.0).unwrap();
        let cert = bunching_margin(&iso, 1.0, 10, &x).unwrap();
        assert!((cert.theta - 0.5).abs() < 1e-9 && cert.valid);
        let hyp = CocycleSpec::constant(full2(), linalg::diag(&[4.0, 0.25]), 1.0).unwrap();
        let cert = bunching_margin(&hyp, 1.0, 10, &x).unwrap();
        assert!((cert.theta - 8.0).abs() < 1e-6 && !cert.valid);
    }

    #[test]
    fn ill_conditioned_products_are_rejected() {
        let mut c = CocycleSpec::constant(full2(), linalg::diag(&[10.0, 0.1]), 1.0).unwrap();
        c.condition_cap = 1e6;
        let x: Point = SymbolicPoint::periodic(&[0]).into();
        c.generator = Generator::LocallyConstant(
            WindowTable::from_fn(2, 0, 0, 2, |_| linalg::diag(&[10.0, 0.1])).unwrap(),
        );
        assert!(matches!(c.iterate(&x, 5), Err(Error::IllConditioned { .. })));
    }
}
