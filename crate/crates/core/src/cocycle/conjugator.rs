//! Conjugators between return matrices `X = C Y C^{-1}`.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};
use crate::optimize::nelder_mead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLUSTER_TOL: f64 = 1e-5;
const RANK_TOL: f64 = 1e-7;
const SPECTRUM_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-7;
const BALANCE_STARTS: usize = 3;

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicConjugator {
    #[serde(serialize_with = "linalg::ser_mat")]
    pub matrix: Mat,
    pub condition: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct JordanBlock {
    #[serde(skip)]
    pub lambda: Complex64,
    pub size: usize,
    /// Complex pairs occupy `2 * size` columns.
    pub complex: bool,
    pub offset: usize,
}

type Block = JordanBlock;

impl JordanBlock {
    pub fn width(&self) -> usize {
        if self.complex {
            2 * self.size
        } else {
            self.size
        }
    }
}

/// Real Jordan basis `R` with `R^{-1} X R` block diagonal.
#[derive(Clone, Debug)]
pub struct RealJordan {
    pub basis: Mat,
    pub blocks: Vec<JordanBlock>,
}

fn clusters(ev: &[Complex64]) -> Vec<(Complex64, usize)> {
    let mut groups: Vec<Vec<Complex64>> = Vec::new();
    for &z in ev {
        let slot = groups.iter_mut().find(|g| {
            let mean: Complex64 = g.iter().sum::<Complex64>() / g.len() as f64;
            (z - mean).norm() <= CLUSTER_TOL * z.norm().max(1.0)
        });
        match slot {
            Some(g) => g.push(z),
            None => groups.push(vec![z]),
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let mean: Complex64 = g.iter().sum::<Complex64>() / g.len() as f64;
            (mean, g.len())
        })
        .collect()
}

fn null_space(m: &CMat, scale: f64) -> CMat {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.unwrap();
    let cols: Vec<_> = (0..n)
        .filter(|&i| i >= svd.singular_values.len() || svd.singular_values[i] <= RANK_TOL * scale)
        .map(|i| v_t.row(i).transpose().map(|z| z.conj()))
        .collect();
    if cols.is_empty() {
        CMat::zeros(n, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

fn rank_of(cols: &[nalgebra::DVector<Complex64>]) -> usize {
    if cols.is_empty() {
        return 0;
    }
    let m = CMat::from_columns(cols);
    let s = m.svd(false, false).singular_values;
    let scale = s.iter().cloned().fold(0.0f64, f64::max);
    s.iter().filter(|&&v| v > 1e-9 * scale.max(1e-300)).count()
}

fn normalize_phase(v: &mut nalgebra::DVector<Complex64>) {
    let n = v.norm();
    if n == 0.0 {
        return;
    }
    *v /= Complex64::new(n, 0.0);
    let lead = v.iter().copied().find(|z| z.norm() > 1e-8).unwrap_or(Complex64::new(1.0, 0.0));
    let phase = lead.conj() / lead.norm();
    *v *= phase;
}

/// Jordan chains of `X` at `λ` (algebraic multiplicity `m`); `None` if the numerical
/// null spaces do not add up to `m`.
fn chains(x: &CMat, lambda: Complex64, m: usize, scale: f64) -> Option<Vec<Vec<nalgebra::DVector<Complex64>>>> {
    let d = x.nrows();
    let n = x - CMat::identity(d, d) * lambda;
    let mut kernels: Vec<CMat> = vec![CMat::zeros(d, 0)];
    let mut power = CMat::identity(d, d);
    for j in 1..=m {
        power = &n * power;
        let k = null_space(&power, scale.powi(j as i32));
        let dim = k.ncols();
        kernels.push(k);
        if dim == m {
            break;
        }
        if j == m {
            return None;
        }
    }
    let top = kernels.len() - 1;
    if kernels[top].ncols() != m {
        return None;
    }
    let dims: Vec<usize> = kernels.iter().map(|k| k.ncols()).collect();
    let mut result: Vec<Vec<nalgebra::DVector<Complex64>>> = Vec::new();
    for s in (1..=top).rev() {
        let next = if s < top { dims[s + 1] } else { dims[s] };
        let count = (2 * dims[s]).checked_sub(dims[s - 1] + next)?;
        if count == 0 {
            continue;
        }
        let k = &kernels[s];
        let proj = k * k.adjoint();
        let mut spanning: Vec<nalgebra::DVector<Complex64>> =
            (0..kernels[s - 1].ncols()).map(|i| kernels[s - 1].column(i).into_owned()).collect();
        for chain in &result {
            spanning.push(chain[s - 1].clone());
        }
        let mut added = 0;
        for i in 0..d {
            if added == count {
                break;
            }
            let mut e = nalgebra::DVector::<Complex64>::zeros(d);
            e[i] = Complex64::new(1.0, 0.0);
            let mut cand = &proj * e;
            if cand.norm() < 1e-8 {
                continue;
            }
            normalize_phase(&mut cand);
            let before = rank_of(&spanning);
            spanning.push(cand.clone());
            if rank_of(&spanning) > before {
                let mut chain = vec![cand.clone()];
                for _ in 1..s {
                    let last = chain.last().unwrap().clone();
                    chain.push(&n * last);
                }
                // columns ordered bottom of the chain first
                chain.reverse();
                result.push(chain);
                added += 1;
            } else {
                spanning.pop();
            }
        }
        if added != count {
            return None;
        }
    }
    Some(result)
}

pub fn real_jordan(x: &Mat) -> Result<RealJordan> {
    let d = x.nrows();
    let ev = linalg::eigenvalues(x);
    let xc = linalg::to_complex(x);
    let scale = linalg::op_norm(x).max(1.0);
    let mut groups = clusters(&ev);
    let mut columns: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut blocks = Vec::new();
    let mut gi = 0;
    while gi < groups.len() {
        let (mut lambda, m) = groups[gi];
        gi += 1;
        let real = lambda.im.abs() <= 1e-9 * lambda.norm().max(1.0);
        if real {
            lambda.im = 0.0;
        } else if lambda.im < 0.0 {
            continue;
        }
        let Some(found) = chains(&xc, lambda, m, scale) else {
            if m == 1 {
                return Err(Error::InvalidInput("could not resolve the spectral structure".into()));
            }
            let members: Vec<Complex64> =
                ev.iter().copied().filter(|z| (z - lambda).norm() <= CLUSTER_TOL * z.norm().max(1.0) * 2.0).collect();
            for (k, z) in members.into_iter().enumerate() {
                groups.insert(gi + k, (z, 1));
            }
            continue;
        };
        let mut sorted = found;
        sorted.sort_by_key(|c| std::cmp::Reverse(c.len()));
        for chain in sorted {
            let offset = columns.len();
            for w in &chain {
                if real {
                    columns.push(w.map(|z| z.re));
                } else {
                    columns.push(w.map(|z| z.re));
                    columns.push(w.map(|z| z.im));
                }
            }
            blocks.push(Block { lambda, size: chain.len(), complex: !real, offset });
        }
    }
    if columns.len() != d {
        return Err(Error::InvalidInput("spectral structure incomplete".into()));
    }
    Ok(RealJordan { basis: Mat::from_columns(&columns), blocks })
}

/// Element of the commutant of the real Jordan form, parametrized per block.
fn commutant(blocks: &[Block], d: usize, p: &[f64], signs: u32) -> Mat {
    let mut w = Mat::zeros(d, d);
    let mut k = 0;
    let mut real_index = 0;
    for b in blocks {
        if b.complex {
            let mut coeffs = Vec::with_capacity(b.size);
            let r = p[k].exp();
            let a = p[k + 1];
            coeffs.push((r * a.cos(), r * a.sin()));
            k += 2;
            for _ in 1..b.size {
                coeffs.push((p[k], p[k + 1]));
                k += 2;
            }
            for i in 0..b.size {
                for j in i..b.size {
                    let (c, s) = coeffs[j - i];
                    let (r0, c0) = (b.offset + 2 * i, b.offset + 2 * j);
                    w[(r0, c0)] = c;
                    w[(r0, c0 + 1)] = s;
                    w[(r0 + 1, c0)] = -s;
                    w[(r0 + 1, c0 + 1)] = c;
                }
            }
        } else {
            let sign = if signs >> real_index & 1 == 1 { -1.0 } else { 1.0 };
            real_index += 1;
            let mut coeffs = vec![sign * p[k].exp()];
            k += 1;
            for _ in 1..b.size {
                coeffs.push(p[k]);
                k += 1;
            }
            for i in 0..b.size {
                for j in i..b.size {
                    w[(b.offset + i, b.offset + j)] = coeffs[j - i];
                }
            }
        }
    }
    w
}

fn initial_parameters(blocks: &[Block], rx: &Mat, ry_inv: &Mat) -> Vec<f64> {
    let mut p = Vec::new();
    for b in blocks {
        let cols = rx.columns(b.offset, b.width()).norm();
        let rows = ry_inv.rows(b.offset, b.width()).norm();
        p.push(0.5 * (rows / cols).ln());
        if b.complex {
            p.push(0.0);
        }
        for _ in 1..b.size {
            p.push(0.0);
            if b.complex {
                p.push(0.0);
            }
        }
    }
    p
}

fn angle_slots(blocks: &[Block]) -> Vec<bool> {
    let mut out = Vec::new();
    for b in blocks {
        out.push(false);
        if b.complex {
            out.push(true);
            out.extend(std::iter::repeat_n(false, 2 * (b.size - 1)));
        } else {
            out.extend(std::iter::repeat_n(false, b.size - 1));
        }
    }
    out
}

fn spectra_match(a: &RealJordan, b: &RealJordan) -> bool {
    a.blocks.len() == b.blocks.len()
        && a.blocks.iter().zip(&b.blocks).all(|(x, y)| {
            x.size == y.size
                && x.complex == y.complex
                && (x.lambda - y.lambda).norm() <= SPECTRUM_TOL * x.lambda.norm().max(1.0)
        })
}

/// Finds `C` with `X = C Y C^{-1}`, or `None` when the spectral data differ.
pub fn match_periodic_conjugator(x: &Mat, y: &Mat) -> Result<Option<PeriodicConjugator>> {
    match_periodic_conjugator_with(x, y, true)
}

pub fn match_periodic_conjugator_with(x: &Mat, y: &Mat, balance: bool) -> Result<Option<PeriodicConjugator>> {
    let d = x.nrows();
    if y.nrows() != d || x.ncols() != d || y.ncols() != d {
        return Err(Error::InvalidInput("return matrices must be square of equal size".into()));
    }
    let jx = real_jordan(x)?;
    let jy = real_jordan(y)?;
    if !spectra_match(&jx, &jy) {
        return Ok(None);
    }
    let ry_inv = linalg::inverse(&jy.basis)?;
    let build = |p: &[f64], signs: u32| -> Mat { &jx.basis * commutant(&jx.blocks, d, p, signs) * &ry_inv };
    let p0 = initial_parameters(&jx.blocks, &jx.basis, &ry_inv);
    let angles = angle_slots(&jx.blocks);
    let real_blocks = jx.blocks.iter().filter(|b| !b.complex).count() as u32;
    let (p, signs) = if balance {
        let evals = 600 * (p0.len() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut overall: Option<(Vec<f64>, u32, f64)> = None;
        // the first real block keeps its sign: an overall sign does not change the condition
        for signs in 0..(1u32 << real_blocks.saturating_sub(1)) {
            let signs = signs << 1;
            let objective = |p: &[f64]| -> f64 {
                let c = linalg::condition(&build(p, signs));
                if c.is_finite() {
                    c.ln()
                } else {
                    f64::INFINITY
                }
            };
            let surrogate = |p: &[f64]| -> f64 {
                let c = build(p, signs);
                match linalg::inverse(&c) {
                    Ok(ci) => (c.norm() * ci.norm()).ln(),
                    Err(_) => f64::INFINITY,
                }
            };
            let (mut best, mut value) = nelder_mead(&objective, &p0, 0.3, evals, 1e-15);
            for k in 0..=BALANCE_STARTS {
                let start: Vec<f64> = if k == 0 {
                    p0.clone()
                } else {
                    p0.iter()
                        .zip(&angles)
                        .map(|(v, &is_angle)| {
                            let w = if is_angle { std::f64::consts::PI } else { 1.5 };
                            v + rng.random_range(-w..w)
                        })
                        .collect()
                };
                let (smooth, _) = nelder_mead(&surrogate, &start, 0.3, evals, 1e-12);
                let (cand, v) = nelder_mead(&objective, &smooth, 0.1, evals, 1e-15);
                if v < value {
                    best = cand;
                    value = v;
                }
            }
            for _ in 0..4 {
                let (next, v) = nelder_mead(&objective, &best, 0.05, evals, 1e-15);
                if v < value {
                    best = next;
                    value = v;
                } else {
                    break;
                }
            }
            if overall.as_ref().is_none_or(|o| value < o.2) {
                overall = Some((best, signs, value));
            }
        }
        let (best, signs, _) = overall.unwrap();
        (best, signs)
    } else {
        (vec![0.0; p0.len()], 0)
    };
    let mut c = build(&p, signs);
    let det = c.determinant();
    if det == 0.0 || !det.is_finite() {
        return Ok(None);
    }
    c /= det.abs().powf(1.0 / d as f64);
    let residual = linalg::op_norm(&(x * &c - &c * y)) / (linalg::op_norm(x) * linalg::op_norm(&c)).max(1e-300);
    if residual > RESIDUAL_TOL {
        return Ok(None);
    }
    let condition = linalg::condition(&c);
    Ok(Some(PeriodicConjugator { matrix: c, condition, residual }))
}
