//! Acceptance suite: one PASS/FAIL line per criterion, run sequentially so timings are meaningful.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use cocycle_lab::base::{
    BaseSystem, Leaf, Leaves, PerturbedToralMap, PlantedToralMap, Point, SftBase, SymbolicPoint, ToralAutomorphism,
    ToralMap, TrigPoly, TrigTerm,
};
use cocycle_lab::cocycle::{delta_narrow_radius, gl_distance, CocycleSpec, WindowTable};
use cocycle_lab::linalg::{self, Mat, Vector};
use cocycle_lab::rigidity;
use cocycle_lab::scenario::{self, Outcome, RunOptions};
use cocycle_lab::spectrum::{dominated_splitting, lyapunov_exponents};
use cocycle_lab::transfer::{self, build_transfer_fixed_point, UnipotentFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

struct Verdict {
    ok: bool,
    notes: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Verdict { ok: true, notes: Vec::new() }
    }

    fn require(&mut self, cond: bool, what: impl Into<String>) {
        let what = what.into();
        if !cond {
            self.ok = false;
            self.notes.push(format!("FAILED {what}"));
        } else {
            self.notes.push(what);
        }
    }

    fn scenario(&mut self, out: &Outcome) {
        for c in &out.report.checks {
            self.require(c.passed, format!("[{}] {}", out.report.scenario.name, c.name));
        }
    }

    fn budget(&mut self, start: Instant, seconds: f64) {
        let t = start.elapsed().as_secs_f64();
        self.require(t < seconds, format!("runtime {t:.2}s < {seconds}s"));
    }
}

fn gallery(name: &str) -> Outcome {
    scenario::run_gallery(name, &RunOptions::default()).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn check_value(out: &Outcome, name: &str) -> f64 {
    out.report.checks.iter().find(|c| c.name == name).and_then(|c| c.value).unwrap_or(f64::NAN)
}

fn full_shift(nu: f64) -> BaseSystem {
    BaseSystem::sft(SftBase::full_shift(2, nu).unwrap())
}

fn near_id(rng: &mut ChaCha8Rng, eps: f64) -> Mat {
    let mut m = linalg::identity(2);
    for v in m.iter_mut() {
        *v += eps * (rng.random::<f64>() - 0.5);
    }
    m
}

/// Window-2 planted conjugacy over the full 2-shift; `cs[2 x_{-1} + x_0]`, with `cs[0] = Id`.
fn planted(b: &Mat, seed: u64) -> (CocycleSpec, Vec<Mat>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs: Vec<Mat> = (0..4).map(|i| if i == 0 { linalg::identity(2) } else { near_id(&mut rng, 0.6) }).collect();
    let c = cs.clone();
    let a = WindowTable::from_fn(2, -1, 1, 2, move |w| {
        &c[(w[1] * 2 + w[2]) as usize] * b * linalg::inverse(&c[(w[0] * 2 + w[1]) as usize]).unwrap()
    })
    .unwrap();
    (CocycleSpec::locally_constant(full_shift(0.5), a, 1.0).unwrap(), cs)
}

fn cbar(cs: &[Mat], x: &SymbolicPoint) -> Mat {
    cs[(x.symbol(-1) * 2 + x.symbol(0)) as usize].clone()
}

fn criterion_1_and_2() -> (Verdict, Verdict) {
    let start = Instant::now();
    let (mut v1, mut v2) = (Verdict::new(), Verdict::new());
    let b = linalg::rotation(2.0 * PI / 5.0);
    let (a, cs) = planted(&b, 17);
    let q = SymbolicPoint::periodic(&[0]);
    let t = build_transfer_fixed_point(&a, &b, &q, 8).unwrap();
    v1.require(t.len() >= 100, format!("{} homoclinic points", t.len()));
    let recovery = t.samples.iter().map(|(x, c)| gl_distance(c, &cbar(&cs, x)).unwrap()).fold(0.0, f64::max);
    v1.require(recovery < 1e-6, format!("max gl-distance to planted {recovery:.2e} < 1e-6"));
    // conjugacy equation at sample pairs, evaluated here from the generator directly
    let mut eq = 0.0f64;
    for (x, c) in &t.samples {
        let fx = x.shift(1);
        if let Some(cf) = t.samples.get(&fx) {
            let ax = a.value(&Point::from(x.clone())).unwrap();
            let lhs = cf * &b * linalg::inverse(c).unwrap();
            eq = eq.max(linalg::op_norm(&(lhs - &ax)) / linalg::op_norm(&ax));
        }
    }
    v1.require(eq < 1e-8 && t.conjugacy_residual < 1e-8, format!("conjugacy residual {:.2e} (direct {eq:.2e}) < 1e-8", t.conjugacy_residual));
    v1.scenario(&gallery("planted-coboundary"));
    v1.budget(start, 30.0);

    // stable holonomy to q composed with unstable back: B^{-n} A^{2n}_{f^{-n} x} B^{-n}
    let n = 30;
    let binv = linalg::power(&linalg::inverse(&b).unwrap(), n as u32);
    let mut worst = 0.0f64;
    for x in t.samples.keys() {
        let p = Point::from(x.shift(-(n as i64)));
        let prod = &binv * a.iterate(&p, 2 * n as i64).unwrap() * &binv;
        worst = worst.max(linalg::op_norm(&(prod - linalg::identity(2))));
    }
    v2.require(worst < 1e-6, format!("direct identity residual {worst:.2e} < 1e-6"));
    v2.require(t.homoclinic_residual < 1e-6, format!("library homoclinic residual {:.2e} < 1e-6", t.homoclinic_residual));
    (v1, v2)
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    let out = gallery("sft-holonomy");
    v.scenario(&out);
    v.require(check_value(&out, "pairs tested") >= 50.0, "at least 50 pairs");
    let fit = out.report.results["holder_fit"]["beta"].as_f64().unwrap_or(f64::NAN);
    v.require(((fit - 0.5) / 0.5).abs() < 0.1, format!("fitted exponent {fit:.4} within 10% of 0.5"));

    // brute-force oracle for the same generator: (A^n_y)^{-1} A^n_x with n far beyond the certified depth
    let nu: f64 = 0.25;
    let rho = nu.sqrt();
    let table = WindowTable::from_fn(2, -16, 0, 2, |w| {
        let s: f64 = (0..=16).map(|k| (2.0 * w[16 - k] as f64 - 1.0) * 0.1 * rho.powi(k as i32)).sum();
        linalg::rotation(0.6 + s) * Mat::from_row_slice(2, 2, &[1.0 + 0.05 * s, 0.05 * s, 0.0, 1.0])
    })
    .unwrap();
    let a = CocycleSpec::locally_constant(full_shift(nu), table, 0.5).unwrap();
    let sft = SftBase::full_shift(2, nu).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let samples: Vec<Point> = (0..16).map(|_| sft.random_periodic_point(&mut rng, 20).into()).collect();
    let cert = cocycle_lab::cocycle::bunching_margin(&a, 0.5, 12, &samples).unwrap();
    let solver = cocycle_lab::holonomy::HolonomySolver::new(a.clone(), cert).unwrap();
    let mut worst = 0.0f64;
    for i in 0..20 {
        let x = sft.random_periodic_point(&mut rng, 24);
        let k = 1 + i % 10;
        let y = SymbolicPoint::from_fn(24, -k, -k + 1, 24, |j| if j == -k { 1 - x.symbol(j) } else { x.symbol(j) });
        let (px, py) = (Point::from(x), Point::from(y));
        let h = solver.stable(&px, &py, 1e-12).unwrap();
        // window [-16, 0]: beyond 17 steps the products agree factor by factor
        let brute = linalg::inverse(&a.iterate(&py, 40).unwrap()).unwrap() * a.iterate(&px, 40).unwrap();
        worst = worst.max(linalg::op_norm(&(brute - &h.matrix)));
    }
    v.require(worst < 1e-9, format!("certified holonomy vs brute-force product {worst:.2e}"));
    v.budget(start, 10.0);
    v
}

/// Golden-mean orbit count of period ≤ n by Möbius inversion of Lucas numbers.
fn golden_orbit_count(n_max: usize) -> usize {
    let lucas = |n: usize| -> i64 {
        let (mut a, mut b) = (2i64, 1i64);
        for _ in 0..n {
            (a, b) = (b, a + b);
        }
        a
    };
    let mobius = |mut n: usize| -> i64 {
        let mut r = 1;
        let mut p = 2;
        while p * p <= n {
            if n % p == 0 {
                n /= p;
                if n % p == 0 {
                    return 0;
                }
                r = -r;
            }
            p += 1;
        }
        if n > 1 {
            r = -r;
        }
        r
    };
    (1..=n_max).map(|n| ((1..=n).filter(|d| n % d == 0).map(|d| mobius(n / d) * lucas(d)).sum::<i64>() / n as i64) as usize).sum()
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    v.scenario(&gallery("delta-narrow-splitting"));
    let sft = SftBase::golden_mean(0.5).unwrap();
    let base = BaseSystem::sft(sft.clone());
    let center = linalg::diag(&[4.0, 1.0, 0.25]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let es: Vec<Mat> = (0..8)
        .map(|_| {
            let e = Mat::from_fn(3, 3, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let n = linalg::op_norm(&e);
            e / n
        })
        .collect();
    let table = WindowTable::from_fn(2, -1, 1, 3, |w| &center * (linalg::identity(3) + &es[(w[0] * 4 + w[1] * 2 + w[2]) as usize] * 0.02)).unwrap();
    let mut a = CocycleSpec::locally_constant(base.clone(), table, 1.0).unwrap();
    a.condition_cap = 1e18;
    let orbits = base.periodic_orbits(10, 1 << 20).unwrap();
    v.require(orbits.len() == golden_orbit_count(10), format!("{} orbits, necklace count {}", orbits.len(), golden_orbit_count(10)));
    let centers = [4f64.ln(), 0.0, -(4f64.ln())];
    let narrow = delta_narrow_radius(&a, &orbits, &centers).unwrap();
    // direct eigen-moduli oracle
    let mut delta = 0.0f64;
    for o in &orbits {
        let m = a.iterate(&o.base_point(), o.period as i64).unwrap();
        let mut logs: Vec<f64> = linalg::eigenvalues(&m).iter().map(|z| z.norm().ln() / o.period as f64).collect();
        logs.sort_by(|p, q| q.partial_cmp(p).unwrap());
        for (l, c) in logs.iter().zip(&centers) {
            delta = delta.max((l - c).abs());
        }
    }
    v.require((narrow.delta - delta).abs() < 1e-9, format!("radius {:.6} matches direct eigenvalues {delta:.6}", narrow.delta));
    v.require(narrow.delta <= 0.05, format!("radius {:.4} <= 0.05", narrow.delta));
    let samples: Vec<Point> = orbits.iter().take(20).map(|o| o.base_point()).collect();
    for k in [1, 2] {
        let s = dominated_splitting(&a, k, &samples, 16).unwrap();
        v.require(s.tau <= 0.3, format!("k={k}: tau {:.4} <= 0.3", s.tau));
        v.require(s.invariance_residual < 1e-6, format!("k={k}: invariance {:.2e} < 1e-6", s.invariance_residual));
    }
    v.budget(start, 20.0);
    v
}

/// All primitive binary necklaces of length `n`, as their lexicographically least rotation.
fn necklaces(n: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for bits in 0u32..(1 << n) {
        let w: Vec<u8> = (0..n).map(|i| ((bits >> (n - 1 - i)) & 1) as u8).collect();
        let rots: Vec<Vec<u8>> = (0..n).map(|r| w[r..].iter().chain(&w[..r]).copied().collect()).collect();
        let least = rots.iter().min().unwrap();
        let primitive = (1..n).all(|r| rots[r] != w);
        if primitive && *least == w {
            out.push(w);
        }
    }
    out
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    v.scenario(&gallery("unipotent-criterion"));
    let neg = gallery("unipotent-negative");
    v.require(!neg.report.passed, "negative scenario reports a failed check");
    v.require(neg.report.results["witness"] == Value::String(SymbolicPoint::periodic(&[1]).to_string()), "negative witness is the fixed point of 1");

    let beta = 0.4;
    let g = [0.13, -0.31, 0.22, 0.05];
    let gv = |a: u8, b: u8| g[(a * 2 + b) as usize];
    let base = full_shift(0.5);
    let alpha = WindowTable::from_fn(2, 0, 2, 1, |w| Mat::from_element(1, 1, beta + gv(w[1], w[2]) - gv(w[0], w[1]))).unwrap();
    let fam = UnipotentFamily::new(base.clone(), alpha, beta).unwrap();
    let orbits = base.periodic_orbits(10, 1 << 20).unwrap();
    let rep = transfer::unipotent_periodic_criterion(&fam, &orbits).unwrap();
    // exhaustive oracle over necklaces: sums telescope to nβ
    let mut oracle: Vec<(usize, f64)> = Vec::new();
    for n in 1..=10 {
        for w in necklaces(n) {
            let s: f64 = (0..n).map(|j| beta + gv(w[(j + 1) % n], w[(j + 2) % n]) - gv(w[j], w[(j + 1) % n])).sum();
            oracle.push((n, s));
        }
    }
    let oracle_ratio = oracle.iter().map(|&(n, s)| (s / (n as f64 * beta)).abs().max((n as f64 * beta / s).abs())).fold(1.0, f64::max);
    v.require(rep.rows.len() == oracle.len(), format!("{} orbits, oracle {}", rep.rows.len(), oracle.len()));
    v.require(rep.conjugate && oracle.iter().all(|&(_, s)| s.abs() > 1e-9), "all orbits conjugate, as in the oracle");
    v.require((rep.ratio_bound - oracle_ratio).abs() <= 1e-12 * oracle_ratio, format!("ratio bound {:.15} vs oracle {oracle_ratio:.15}", rep.ratio_bound));
    v.require(rep.ratio_bound < 3.0, format!("ratio bound {:.4} < 3", rep.ratio_bound));

    let alpha = WindowTable::from_fn(2, 0, 1, 1, |w| Mat::from_element(1, 1, beta * (1.0 - (w[0] * w[1]) as f64))).unwrap();
    let fam = UnipotentFamily::new(base, alpha, beta).unwrap();
    let rep = transfer::unipotent_periodic_criterion(&fam, &orbits).unwrap();
    let zero: Vec<Vec<u8>> = (1..=10)
        .flat_map(necklaces)
        .filter(|w| (0..w.len()).all(|j| w[j] * w[(j + 1) % w.len()] == 1))
        .collect();
    v.require(zero == vec![vec![1u8]], "oracle: only (1)^inf has zero sum");
    v.require(!rep.conjugate && rep.witness == Some(SymbolicPoint::periodic(&[1]).to_string()), format!("witness {:?}", rep.witness));
    v.budget(start, 5.0);
    v
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    let out = gallery("coprime-combine");
    v.scenario(&out);
    let c = &out.report.results["combine"];
    let (r, s) = (c["r"].as_i64(), c["s"].as_i64());
    v.require(r == Some(-1) && s == Some(1), format!("(r, s) = ({r:?}, {s:?})"));
    let (n, m, k) = (c["n"].as_i64().unwrap(), c["m"].as_i64().unwrap(), c["k"].as_i64().unwrap());
    v.require(n * m * r.unwrap_or(0) + k * s.unwrap_or(0) == 1, "NMr + Ks = 1");
    let res = c["residual"].as_f64().unwrap_or(f64::NAN);
    v.require(res < 1e-8, format!("period-1 residual {res:.2e} < 1e-8"));
    v.budget(start, 5.0);
    v
}

fn criterion_7() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    for name in ["planted-coboundary", "delta-narrow-splitting"] {
        let out = gallery(name);
        for c in out.report.checks.iter().filter(|c| c.name.contains("lyapunov") || c.name.contains("determinant")) {
            v.require(c.passed, format!("[{name}] {} = {:.2e}", c.name, c.value.unwrap_or(f64::NAN)));
        }
    }
    // direct oracle: exponents from eigenvalues of the return matrix, compared with QR exponents
    let b = linalg::rotation(2.0 * PI / 5.0);
    let (a, _) = planted(&b, 17);
    let mut sum_gap = 0.0f64;
    let mut gap = 0.0f64;
    for word in [vec![0u8, 1], vec![0, 0, 1], vec![1, 1, 0, 1, 0], vec![0, 1, 1, 1, 0, 0, 1]] {
        let p = Point::from(SymbolicPoint::periodic(&word));
        let n = word.len() * 3000;
        let lyap = lyapunov_exponents(&a, &p, n).unwrap();
        let ret = a.iterate(&p, word.len() as i64).unwrap();
        let mut per: Vec<f64> = linalg::eigenvalues(&ret).iter().map(|z| z.norm().ln() / word.len() as f64).collect();
        per.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (l, q) in lyap.exponents.iter().zip(&per) {
            gap = gap.max((l - q).abs());
        }
        let logdet: f64 = a.values(&p, 0, n as i64).unwrap().iter().map(|m| m.determinant().abs().ln()).sum::<f64>() / n as f64;
        sum_gap = sum_gap.max((lyap.sum() - logdet).abs());
    }
    v.require(gap < 5e-3, format!("direct exponent gap {gap:.2e} < 5e-3"));
    v.require(sum_gap < 1e-9, format!("direct determinant telescoping {sum_gap:.2e} < 1e-9"));
    v.budget(start, 10.0);
    v
}

fn criterion_8() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    let out = gallery("catmap-rigidity");
    v.scenario(&out);
    v.require(out.report.results["perturbed"]["grid"] == 256, "solve grid 256^2");
    v.require(check_value(&out, "functional equation residual") < 1e-9, "residual < 1e-9 on the grid");
    // independent evaluation at random points: L h(x) − h(f x) on the torus
    let cat = ToralAutomorphism::cat_map();
    let pert = TrigPoly::new(vec![TrigTerm::sin(vec![0.01, 0.005], vec![1, 0]), TrigTerm::cos(vec![0.0, 0.01], vec![1, 1])]);
    let f = Arc::new(PerturbedToralMap::new(cat.clone(), pert).unwrap());
    let h = rigidity::franks_manning(f.clone(), 8).unwrap();
    let l = cat.as_mat();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = Vector::from_fn(2, |_, _| rng.random::<f64>());
        let lhs = &l * h.eval(&x);
        let rhs = h.eval(&f.apply(&x));
        let d = lhs - rhs;
        worst = worst.max(d.iter().map(|c| (c - c.round()).abs()).fold(0.0, f64::max));
    }
    v.require(worst < 1e-9, format!("off-grid equation residual {worst:.2e} < 1e-9"));
    let psi = TrigPoly::new(vec![TrigTerm::sin(vec![0.01, 0.005], vec![0, 1]), TrigTerm::cos(vec![0.004, -0.006], vec![1, 1])]);
    let pm = Arc::new(PlantedToralMap::new(cat, psi).unwrap());
    let hp = rigidity::franks_manning(pm.clone(), 8).unwrap();
    let mut sup = 0.0f64;
    for _ in 0..200 {
        let x = Vector::from_fn(2, |_, _| rng.random::<f64>());
        let d = hp.eval(&x) - pm.conjugacy(&x);
        sup = sup.max(d.iter().map(|c| (c - c.round()).abs()).fold(0.0, f64::max));
    }
    v.require(sup < 1e-6, format!("planted sup-error {sup:.2e} < 1e-6"));
    v.budget(start, 60.0);
    v
}

fn criterion_9() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    let out = gallery("linearization-demo");
    v.scenario(&out);
    let r = &out.report.results["holonomy_derivative"];
    let steps: Vec<f64> = r["ladder"].as_array().unwrap().iter().map(|row| row["step"].as_f64().unwrap()).collect();
    v.require(steps == vec![1e-2, 1e-3, 1e-4, 1e-5], format!("ladder {steps:?}"));
    let devs: Vec<f64> = r["ladder"].as_array().unwrap().iter().map(|row| row["deviation"].as_f64().unwrap()).collect();
    v.require(devs.windows(2).all(|w| w[1] < w[0]), format!("monotone deviations {devs:?}"));
    v.require(*devs.last().unwrap() < 1e-3, "final deviation < 1e-3");
    // linear control: holonomies are translations, so the derivative is exactly one
    let lin: Arc<dyn ToralMap> = Arc::new(PerturbedToralMap::new(ToralAutomorphism::cat_map(), TrigPoly::default()).unwrap());
    let leaves = Leaves::new(lin).unwrap();
    let x = Vector::from_vec(vec![0.21, 0.37]);
    let y = leaves.leaf_point(&x, 0.02, Leaf::Stable).unwrap();
    let lr = rigidity::holonomy_derivative_check(&leaves, &x, &y, &[1e-2, 1e-3], 0.5).unwrap();
    v.require((lr.cocycle_holonomy - 1.0).abs() < 1e-12, format!("linear holonomy {:.3e} from 1", lr.cocycle_holonomy - 1.0));
    v.budget(start, 60.0);
    v
}

fn criterion_10() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    let out = gallery("t4-skew");
    v.scenario(&out);
    let rows = out.report.results["periodic"]["rows"].as_array().unwrap();
    let ns: Vec<i64> = rows.iter().map(|r| r["n"].as_i64().unwrap()).collect();
    v.require(ns == (1..=6).collect::<Vec<_>>(), format!("periods {ns:?}"));
    // closed-form count of periodic points of f^n: |det(A^n − I)| · |det(B^n − I)|
    let a = ToralAutomorphism::new(vec![vec![2, 1], vec![1, 1]]).unwrap();
    let b = ToralAutomorphism::new(vec![vec![3, 1], vec![2, 1]]).unwrap();
    for r in rows {
        let n = r["n"].as_u64().unwrap() as u32;
        let expect = a.fixed_point_count(n) * b.fixed_point_count(n);
        v.require(r["points"].as_i64().map(i128::from) == Some(expect), format!("n={n}: {} points, expected {expect}", r["points"]));
    }
    let dev = out.report.results["periodic"]["max_eigenvalue_deviation"].as_f64().unwrap();
    v.require(dev < 1e-8, format!("eigenvalue deviation {dev:.2e} < 1e-8"));
    // direct oracle: analytic Df along a random orbit segment, eigenvalues vs λ^n, μ^n
    let (lam, mu) = ((3.0 + 5f64.sqrt()) / 2.0, 2.0 + 3f64.sqrt());
    let f = PerturbedToralMap::skew_t4(&a, &b, 0.05).unwrap();
    let vdir = cocycle_lab::base::toral_map::expanding_eigenvector(&a.as_mat());
    let mut x = Vector::from_vec(vec![0.1, 0.7, 0.33, 0.52]);
    let mut prod = linalg::identity(4);
    let mut worst = 0.0f64;
    for n in 1..=6 {
        let mut df = Mat::zeros(4, 4);
        df.view_mut((0, 0), (2, 2)).copy_from(&a.as_mat());
        df.view_mut((2, 2), (2, 2)).copy_from(&b.as_mat());
        let c = 0.05 * 2.0 * PI * (2.0 * PI * x[2]).cos();
        df[(0, 2)] = c * vdir[0];
        df[(1, 2)] = c * vdir[1];
        prod = df * prod;
        x = f.apply(&x);
        let mut got: Vec<f64> = linalg::eigenvalues(&prod).iter().map(|z| z.norm()).collect();
        got.sort_by(|p, q| p.partial_cmp(q).unwrap());
        let n = n as i32;
        let mut want = vec![lam.powi(n), lam.powi(-n), mu.powi(n), mu.powi(-n)];
        want.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs() / w);
        }
    }
    v.require(worst < 1e-8, format!("analytic Df^n eigenvalues relative error {worst:.2e}"));
    v.require(!out.report.results["periodic"]["weakly_irreducible"].as_bool().unwrap(), "diag(A, B) not weakly irreducible");
    let nonconv = out.report.results["conjugacy"]["nonconvergent"].as_array().map_or(0, Vec::len);
    v.require(nonconv > 0, format!("finite-difference ladder fails to converge along {nonconv} direction(s)"));
    v.budget(start, 90.0);
    v
}

fn criterion_11() -> Verdict {
    let start = Instant::now();
    let mut v = Verdict::new();
    v.scenario(&gallery("weak-irreducibility"));
    let a = ToralAutomorphism::cat_map();
    let b = ToralAutomorphism::new(vec![vec![3, 1], vec![2, 1]]).unwrap();
    // oracle: irreducible char polys have one modulus set; block sums compare the sets directly
    let moduli = |m: &ToralAutomorphism| {
        let mut s: Vec<f64> = m.eigenvalues().iter().map(|z| z.norm()).collect();
        s.sort_by(|p, q| p.partial_cmp(q).unwrap());
        s
    };
    let same = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(x, y)| (x - y).abs() < 1e-12);
    let cases = [
        ("cat map", a.clone(), true),
        ("diag(A, A)", a.block_sum(&a).unwrap(), same(&moduli(&a), &moduli(&a))),
        ("diag(A, B)", a.block_sum(&b).unwrap(), same(&moduli(&a), &moduli(&b))),
    ];
    for (label, m, expected) in cases {
        let got = m.weak_irreducibility().unwrap().weakly_irreducible;
        v.require(got == expected, format!("{label}: {got}, oracle {expected}"));
    }
    v.budget(start, 1.0);
    v
}

fn criterion_12() -> Verdict {
    let mut v = Verdict::new();
    let names = [
        "planted-coboundary",
        "sft-holonomy",
        "delta-narrow-splitting",
        "unipotent-criterion",
        "unipotent-negative",
        "coprime-combine",
        "catmap-rigidity",
        "linearization-demo",
        "t4-skew",
        "weak-irreducibility",
    ];
    let run_in = |threads: usize| -> Vec<String> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| names.iter().map(|n| gallery(n).report.to_json()).collect())
    };
    let one = run_in(1);
    let eight = run_in(8);
    for ((n, a), b) in names.iter().zip(&one).zip(&eight) {
        v.require(a == b, format!("{n}: 1-thread and 8-thread reports identical ({} bytes)", a.len()));
    }
    v
}

#[test]
fn acceptance() {
    let (c1, c2) = criterion_1_and_2();
    let mut all = vec![(1, c1), (2, c2)];
    all.push((3, criterion_3()));
    all.push((4, criterion_4()));
    all.push((5, criterion_5()));
    all.push((6, criterion_6()));
    all.push((7, criterion_7()));
    all.push((8, criterion_8()));
    all.push((9, criterion_9()));
    all.push((10, criterion_10()));
    all.push((11, criterion_11()));
    all.push((12, criterion_12()));
    let mut failed = Vec::new();
    for (i, v) in &all {
        println!("criterion {i:>2}: {}", if v.ok { "PASS" } else { "FAIL" });
        for note in &v.notes {
            println!("              {note}");
        }
        if !v.ok {
            failed.push(*i);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
