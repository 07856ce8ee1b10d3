//! Scenario configs, the built-in gallery and schema-tagged reports.
//!
//! A config is line-oriented: `key = value` pairs, optional `[section]` headers, `#` comments.
//! Matrices are bracketed row lists and may span lines until the brackets balance.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::base::toral_map::torus_distance;
use crate::base::{
    BaseSystem, Leaf, Leaves, PerturbedToralMap, PlantedToralMap, Point, SftBase, SymbolicPoint, ToralAutomorphism,
    ToralMap, TrigPoly, TrigTerm,
};
use crate::cocycle::{bunching_margin, delta_narrow_radius, gl_distance, CocycleSpec, WindowTable};
use crate::error::{Error, Result};
use crate::holonomy::{holder_fit, Direction, HolonomyOperator, HolonomySolver};
use crate::linalg::{self, Mat, Vector};
use crate::rigidity::{self, SKEW_EIGEN_TOL};
use crate::spectrum::{dominated_splitting, lyapunov_exponents, periodic_exponents};
use crate::transfer::{self, build_transfer, build_transfer_fixed_point, UnipotentFamily};

pub const SCHEMA: &str = "cocycle-lab.report/v1";

// ---------------------------------------------------------------------------
// config

#[derive(Clone, Debug)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Default)]
pub struct Config {
    entries: Vec<Entry>,
    used: RefCell<BTreeSet<usize>>,
}

fn field_name(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn config_error(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { line, field: field.into(), message: message.into() }
}

fn bracket_depth(s: &str) -> i64 {
    s.chars().map(|c| match c {
        '[' => 1,
        ']' => -1,
        _ => 0,
    }).sum()
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut entries: Vec<Entry> = Vec::new();
        let mut section = String::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((i, raw)) = lines.next() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && !line.contains('=') {
                if !line.ends_with(']') || line.len() < 3 {
                    return Err(config_error(i + 1, "", format!("malformed section header `{line}`")));
                }
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(config_error(i + 1, "", format!("expected `key = value`, found `{line}`")));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(config_error(i + 1, "", "empty key"));
            }
            let mut value = v.trim().to_string();
            while bracket_depth(&value) > 0 {
                match lines.next() {
                    Some((_, more)) => {
                        value.push(' ');
                        value.push_str(more.split('#').next().unwrap_or("").trim());
                    }
                    None => {
                        return Err(config_error(i + 1, field_name(&section, &key), "unbalanced brackets"));
                    }
                }
            }
            if entries.iter().any(|e| e.section == section && e.key == key) {
                return Err(config_error(i + 1, field_name(&section, &key), "duplicate key"));
            }
            entries.push(Entry { section: section.clone(), key, value, line: i + 1 });
        }
        Ok(Config { entries, used: RefCell::new(BTreeSet::new()) })
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        let (i, e) = self.entries.iter().enumerate().find(|(_, e)| e.section == section && e.key == key)?;
        self.used.borrow_mut().insert(i);
        Some(e)
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str, default: T, what: &str) -> Result<T> {
        match self.entry(section, key) {
            None => Ok(default),
            Some(e) => e
                .value
                .parse::<T>()
                .map_err(|_| config_error(e.line, field_name(section, key), format!("expected {what}, found `{}`", e.value))),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        self.parsed(section, key, default, "a number")
    }

    pub fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        self.parsed(section, key, default, "a non-negative integer")
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        self.parsed(section, key, default, "a non-negative integer")
    }

    pub fn str_or(&self, section: &str, key: &str, default: &str) -> String {
        self.entry(section, key).map_or_else(|| default.to_string(), |e| e.value.clone())
    }

    pub fn required_str(&self, section: &str, key: &str) -> Result<String> {
        self.entry(section, key)
            .map(|e| e.value.clone())
            .ok_or_else(|| config_error(0, field_name(section, key), "missing required field"))
    }

    fn rows<T: serde::de::DeserializeOwned>(&self, section: &str, key: &str, dim: Option<usize>) -> Result<Option<Vec<Vec<T>>>> {
        let Some(e) = self.entry(section, key) else {
            return Ok(None);
        };
        let field = field_name(section, key);
        let rows: Vec<Vec<T>> = serde_json::from_str(&e.value)
            .map_err(|err| config_error(e.line, &field, format!("expected a bracketed row list ({err})")))?;
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 {
            return Err(config_error(e.line, &field, "empty matrix"));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != cols) {
            return Err(config_error(e.line, &field, format!("row {} has {} entries, expected {cols}", r + 1, rows[r].len())));
        }
        if let Some(d) = dim {
            if rows.len() != d || cols != d {
                return Err(config_error(e.line, &field, format!("expected a {d}x{d} matrix, found {}x{cols}", rows.len())));
            }
        } else if rows.len() != cols {
            return Err(config_error(e.line, &field, format!("expected a square matrix, found {}x{cols}", rows.len())));
        }
        Ok(Some(rows))
    }

    pub fn matrix(&self, section: &str, key: &str, dim: Option<usize>) -> Result<Option<Mat>> {
        Ok(self.rows::<f64>(section, key, dim)?.map(|r| linalg::from_rows(&r).unwrap()))
    }

    pub fn int_matrix(&self, section: &str, key: &str, dim: Option<usize>) -> Result<Option<Vec<Vec<i64>>>> {
        self.rows::<i64>(section, key, dim)
    }

    pub fn f64_list(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.entry(section, key) {
            None => Ok(default.to_vec()),
            Some(e) => serde_json::from_str(&e.value)
                .map_err(|_| config_error(e.line, field_name(section, key), format!("expected a number list, found `{}`", e.value))),
        }
    }

    /// Fails on any field no scenario stage read.
    pub fn check_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().enumerate().find(|(i, _)| !used.contains(i)) {
            Some((_, e)) => Err(config_error(e.line, field_name(&e.section, &e.key), "unknown field")),
            None => Ok(()),
        }
    }

    pub fn echo(&self) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.section.clone()).or_default().insert(e.key.clone(), e.value.clone());
        }
        out
    }
}

// ---------------------------------------------------------------------------
// reports

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub relation: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn below(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), passed: value < threshold, value: Some(value), threshold: Some(threshold), relation: "<", detail: None }
    }

    pub fn at_most(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), passed: value <= threshold, value: Some(value), threshold: Some(threshold), relation: "<=", detail: None }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Check {
        Check { name: name.into(), passed: value >= threshold, value: Some(value), threshold: Some(threshold), relation: ">=", detail: None }
    }

    pub fn holds(name: &str, passed: bool, detail: impl Into<String>) -> Check {
        Check { name: name.into(), passed, value: None, threshold: None, relation: "holds", detail: Some(detail.into()) }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Check {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioEcho {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub budget_seconds: f64,
    pub config: BTreeMap<String, BTreeMap<String, String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub scenario: ScenarioEcho,
    pub results: Value,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl Report {
    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug)]
pub struct SideFile {
    /// Suffix appended to the scenario name, e.g. `ladder.csv`.
    pub suffix: String,
    pub contents: String,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub side_files: Vec<SideFile>,
    pub elapsed_seconds: f64,
}

impl Outcome {
    /// Writes `<name>.report.json`, the CSV side files and `<name>.timings.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(e.to_string()))?;
        let name = &self.report.scenario.name;
        let mut written = Vec::new();
        let mut put = |file: String, body: &str| -> Result<()> {
            let p = dir.join(file);
            std::fs::write(&p, body).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?;
            written.push(p);
            Ok(())
        };
        put(format!("{name}.report.json"), &self.report.to_json_pretty())?;
        for f in &self.side_files {
            put(format!("{name}.{}", f.suffix), &f.contents)?;
        }
        let timings = json!({
            "scenario": name,
            "elapsed_seconds": self.elapsed_seconds,
            "budget_seconds": self.report.scenario.budget_seconds,
            "within_budget": self.elapsed_seconds <= self.report.scenario.budget_seconds,
            "threads": rayon::current_num_threads(),
        });
        put(format!("{name}.timings.json"), &serde_json::to_string_pretty(&timings).unwrap())?;
        Ok(written)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
}

struct Stage {
    results: BTreeMap<String, Value>,
    checks: Vec<Check>,
    files: Vec<SideFile>,
}

impl Stage {
    fn new() -> Self {
        Stage { results: BTreeMap::new(), checks: Vec::new(), files: Vec::new() }
    }

    fn put(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(v).expect("result serializes"));
    }

    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn file(&mut self, suffix: &str, contents: String) {
        self.files.push(SideFile { suffix: suffix.into(), contents });
    }
}

// ---------------------------------------------------------------------------
// gallery

pub struct GalleryEntry {
    pub name: &'static str,
    pub description: &'static str,
    pub config: &'static str,
}

const GALLERY: &[GalleryEntry] = &[
    GalleryEntry {
        name: "sft-holonomy",
        description: "certified stable holonomies of a past-window cocycle on the full 2-shift",
        config: "scenario = sft-holonomy\nseed = 11\nbudget_seconds = 10\n\n[base]\nnu = 0.25\n\n[cocycle]\nwindow = 16\nbeta = 0.5\n\n[holonomy]\npairs = 60\ndepth = 3\n",
    },
    GalleryEntry {
        name: "planted-coboundary",
        description: "transfer map from homoclinic holonomies recovers a planted conjugacy",
        config: "scenario = planted-coboundary\nseed = 2\nbudget_seconds = 30\n\n[base]\nnu = 0.5\n\n[cocycle]\ntarget_turns = 0.2\nplanted_amplitude = 0.6\n\n[transfer]\ndepth = 8\n",
    },
    GalleryEntry {
        name: "delta-narrow-splitting",
        description: "narrow periodic spectrum and dominated splittings of a perturbed diagonal cocycle",
        config: "scenario = delta-narrow-splitting\nseed = 5\nbudget_seconds = 20\n\n[base]\nshift = golden-mean\nnu = 0.5\n\n[cocycle]\ncenter = [[4, 0, 0], [0, 1, 0], [0, 0, 0.25]]\nperturbation = 0.02\n\n[spectrum]\nmax_period = 10\n",
    },
    GalleryEntry {
        name: "unipotent-criterion",
        description: "periodic criterion for a unipotent family with a planted coboundary",
        config: "scenario = unipotent-criterion\nseed = 3\nbudget_seconds = 5\n\n[family]\nbeta = 0.4\nmode = coboundary\n\n[orbits]\nmax_period = 10\n",
    },
    GalleryEntry {
        name: "unipotent-negative",
        description: "unipotent family with one orbit of zero Birkhoff sum (expected CheckFailed)",
        config: "scenario = unipotent-criterion\nname = unipotent-negative\nseed = 3\nbudget_seconds = 5\n\n[family]\nbeta = 0.4\nmode = zero-orbit\n\n[orbits]\nmax_period = 10\n",
    },
    GalleryEntry {
        name: "coprime-combine",
        description: "combining transfer maps over coprime powers into a conjugacy over f",
        config: "scenario = coprime-combine\nseed = 9\nbudget_seconds = 5\n\n[cocycle]\ntarget_turns = 0.3333333333333333\n\n[combine]\nn = 2\nm = 1\nk = 3\ndepth = 4\n",
    },
    GalleryEntry {
        name: "catmap-rigidity",
        description: "conjugacy of perturbed and planted cat maps, with derivative and metric checks",
        config: "scenario = catmap-rigidity\nseed = 1\nbudget_seconds = 60\n\n[map]\nlinear = [[2, 1], [1, 1]]\nepsilon = 0.01\n\n[conjugacy]\ngrid = 256\nplanted_grid = 64\n",
    },
    GalleryEntry {
        name: "t4-skew",
        description: "periodic spectra and non-smooth conjugacy of the skew map on T^4",
        config: "scenario = t4-skew\nseed = 1\nbudget_seconds = 90\n\n[map]\na = [[2, 1], [1, 1]]\nb = [[3, 1], [2, 1]]\nepsilon = 0.05\n\n[periodic]\nmax_period = 6\n",
    },
    GalleryEntry {
        name: "linearization-demo",
        description: "nonstationary linearization and the holonomy derivative ladder on a perturbed cat map",
        config: "scenario = linearization-demo\nseed = 1\nbudget_seconds = 60\n\n[map]\nlinear = [[2, 1], [1, 1]]\nepsilon = 0.03\n\n[ladder]\nsteps = [0.01, 0.001, 0.0001, 0.00001]\nbeta = 0.5\n",
    },
    GalleryEntry {
        name: "weak-irreducibility",
        description: "weak irreducibility of cat map, block sums and a Jordan-type automorphism",
        config: "scenario = weak-irreducibility\nseed = 0\nbudget_seconds = 1\n\n[maps]\na = [[2, 1], [1, 1]]\nb = [[3, 1], [2, 1]]\n",
    },
];

pub fn gallery() -> &'static [GalleryEntry] {
    GALLERY
}

pub fn gallery_config(name: &str) -> Result<&'static str> {
    GALLERY.iter().find(|g| g.name == name).map(|g| g.config).ok_or_else(|| Error::UnknownScenario(name.to_string()))
}

pub fn run_gallery(name: &str, opts: &RunOptions) -> Result<Outcome> {
    run_config(gallery_config(name)?, opts)
}

pub fn run_scenario(path: &Path, opts: &RunOptions) -> Result<Outcome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    run_config(&text, opts)
}

pub fn run_config(text: &str, opts: &RunOptions) -> Result<Outcome> {
    let cfg = Config::parse(text)?;
    let kind = cfg.required_str("", "scenario")?;
    let name = cfg.str_or("", "name", &kind);
    let seed = opts.seed.unwrap_or(cfg.u64_or("", "seed", 0)?);
    let budget_seconds = cfg.f64_or("", "budget_seconds", 60.0)?;
    let runner: fn(&Config, u64, &mut Stage) -> Result<()> = match kind.as_str() {
        "sft-holonomy" => sft_holonomy,
        "planted-coboundary" => planted_coboundary,
        "delta-narrow-splitting" => delta_narrow_splitting,
        "unipotent-criterion" => unipotent_criterion,
        "coprime-combine" => coprime_combine,
        "catmap-rigidity" => catmap_rigidity,
        "t4-skew" => t4_skew,
        "linearization-demo" => linearization_demo,
        "weak-irreducibility" => weak_irreducibility,
        other => return Err(Error::UnknownScenario(other.to_string())),
    };
    let start = Instant::now();
    let mut stage = Stage::new();
    runner(&cfg, seed, &mut stage)?;
    cfg.check_unused()?;
    let passed = stage.checks.iter().all(|c| c.passed);
    let report = Report {
        schema: SCHEMA,
        scenario: ScenarioEcho { name, kind, seed, budget_seconds, config: cfg.echo() },
        results: Value::Object(stage.results.into_iter().collect()),
        checks: stage.checks,
        passed,
    };
    Ok(Outcome { report, side_files: stage.files, elapsed_seconds: start.elapsed().as_secs_f64() })
}

// ---------------------------------------------------------------------------
// shared pieces

fn sft_base(cfg: &Config) -> Result<SftBase> {
    let nu = cfg.f64_or("base", "nu", 0.5)?;
    match cfg.str_or("base", "shift", "full").as_str() {
        "full" => SftBase::full_shift(cfg.usize_or("base", "symbols", 2)?, nu),
        "golden-mean" => SftBase::golden_mean(nu),
        other => Err(config_error(0, "base.shift", format!("unknown shift `{other}`"))),
    }
}

fn automorphism(cfg: &Config, section: &str, key: &str, default: &[[i64; 2]; 2]) -> Result<ToralAutomorphism> {
    let rows = cfg.int_matrix(section, key, None)?.unwrap_or_else(|| default.iter().map(|r| r.to_vec()).collect());
    ToralAutomorphism::new(rows).map_err(|e| config_error(0, field_name(section, key), e.to_string()))
}

fn target_matrix(cfg: &Config, default_turns: f64) -> Result<Mat> {
    match cfg.matrix("cocycle", "target", Some(2))? {
        Some(m) => {
            cfg.entry("cocycle", "target_turns");
            Ok(m)
        }
        None => Ok(linalg::rotation(2.0 * PI * cfg.f64_or("cocycle", "target_turns", default_turns)?)),
    }
}

fn near_identity(rng: &mut ChaCha8Rng, d: usize, eps: f64) -> Mat {
    let mut m = linalg::identity(d);
    for v in m.iter_mut() {
        *v += eps * (rng.random::<f64>() - 0.5);
    }
    m
}

/// `C̄` on the window `[-1, 0]` with `C̄(q) = Id` at `q = (0)^inf`, and `A_x = C̄(fx) B C̄(x)^{-1}`.
fn planted_window_cocycle(base: &BaseSystem, b: &Mat, amplitude: f64, seed: u64) -> Result<(CocycleSpec, WindowTable)> {
    let sft = base.as_sft().unwrap();
    let k = sft.symbols();
    let d = b.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs: Vec<Mat> = (0..k * k).map(|i| if i == 0 { linalg::identity(d) } else { near_identity(&mut rng, d, amplitude) }).collect();
    let cbar = WindowTable::from_fn(k, -1, 0, d, |w| cs[w[0] as usize * k + w[1] as usize].clone())?;
    let a = WindowTable::from_fn(k, -1, 1, d, |w| {
        cbar.value(&w[1..3]) * b * linalg::inverse(cbar.value(&w[0..2])).unwrap()
    })?;
    Ok((CocycleSpec::locally_constant(base.clone(), a, 1.0)?, cbar))
}

#[derive(Serialize)]
struct ExponentRow {
    orbit: String,
    period: usize,
    iterations: usize,
    periodic: Vec<f64>,
    lyapunov: Vec<f64>,
    gap: f64,
    determinant_defect: f64,
}

/// Lyapunov exponents along closing orbits of random segments against their periodic exponents.
fn exponent_consistency(a: &CocycleSpec, rng: &mut ChaCha8Rng, orbits: usize, stage: &mut Stage, label: &str) -> Result<()> {
    let sft = a.base.as_sft().unwrap();
    let mut rows = Vec::new();
    while rows.len() < orbits {
        // short returns only: periodic products beyond ~10 steps lose the slow eigenvalues to roundoff
        let start = rng.random_range(4..8);
        let z = sft.random_periodic_point(rng, 40);
        let Some(len) = (start..=10).find(|&n| sft.distance(&z, &z.shift(n as i64)) < 1.0) else {
            continue;
        };
        let (orbit, _) = a.base.closing(&z.into(), len)?;
        let p = orbit.base_point();
        let iterations = orbit.period * (20_000 / orbit.period).max(1);
        let lyap = lyapunov_exponents(a, &p, iterations)?;
        let per = periodic_exponents(a, &orbit)?;
        let gap = lyap.exponents.iter().zip(&per).map(|(l, q)| (l - q).abs()).fold(0.0, f64::max);
        let logdet: f64 = a.values(&p, 0, iterations as i64)?.iter().map(|m| m.determinant().abs().ln()).sum::<f64>()
            / iterations as f64;
        rows.push(ExponentRow {
            orbit: orbit.label(),
            period: orbit.period,
            iterations,
            periodic: per,
            lyapunov: lyap.exponents.clone(),
            gap,
            determinant_defect: (lyap.sum() - logdet).abs(),
        });
    }
    let gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    let det = rows.iter().map(|r| r.determinant_defect).fold(0.0, f64::max);
    stage.check(Check::below(&format!("{label}: lyapunov vs periodic exponents"), gap, 5e-3));
    stage.check(Check::below(&format!("{label}: determinant telescoping"), det, 1e-9));
    stage.put("exponent_consistency", rows);
    Ok(())
}

// ---------------------------------------------------------------------------
// scenarios

fn sft_holonomy(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let nu = cfg.f64_or("base", "nu", 0.25)?;
    let sft = SftBase::full_shift(2, nu)?;
    let base = BaseSystem::sft(sft.clone());
    let window = cfg.usize_or("cocycle", "window", 16)? as i64;
    let beta = cfg.f64_or("cocycle", "beta", 0.5)?;
    let angle = cfg.f64_or("cocycle", "rotation", 0.6)?;
    let amp = cfg.f64_or("cocycle", "amplitude", 0.1)?;
    let shear = cfg.f64_or("cocycle", "shear", 0.05)?;
    let pairs = cfg.usize_or("holonomy", "pairs", 60)?;
    let depth = cfg.usize_or("holonomy", "depth", 3)?;
    let horizon = cfg.usize_or("holonomy", "horizon", 12)?;
    let theta_max = cfg.f64_or("holonomy", "theta_max", 0.6)?;
    let fit_tol = cfg.f64_or("holonomy", "fit_tolerance", 0.1)?;
    let max_sep = cfg.usize_or("holonomy", "max_separation", 14)?.min(window as usize - 1).max(1);

    // symbol at -k enters with weight ρ^k, ρ = ν^β, so the generator is exactly β-Hölder
    let rho = nu.powf(beta);
    let w = window as usize;
    let table = WindowTable::from_fn(2, -window, 0, 2, |word| {
        let s: f64 = (0..=w).map(|k| (2.0 * word[w - k] as f64 - 1.0) * amp * rho.powi(k as i32)).sum();
        linalg::rotation(angle + s) * Mat::from_row_slice(2, 2, &[1.0 + shear * s, shear * s, 0.0, 1.0])
    })?;
    let a = CocycleSpec::locally_constant(base, table, beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Point> = (0..16).map(|_| sft.random_periodic_point(&mut rng, 20).into()).collect();
    let cert = bunching_margin(&a, beta, horizon, &samples)?;
    stage.check(Check::at_most("bunching margin", cert.theta, theta_max));
    stage.put("certificate", &cert);
    let solver = HolonomySolver::new(a, cert)?;

    let mut ops: Vec<HolonomyOperator> = Vec::new();
    let mut worst_ratio = 0.0f64;
    let mut fit_pairs = Vec::new();
    let mut equivariance = 0.0f64;
    for i in 0..pairs {
        let period = 24;
        let x = sft.random_periodic_point(&mut rng, period);
        let n = 1 + (i % max_sep) as i64;
        let y = SymbolicPoint::from_fn(period, -n, -n + 1, period, |j| if j == -n { 1 - x.symbol(j) } else { x.symbol(j) });
        let (px, py): (Point, Point) = (x.into(), y.into());
        let h = solver.at_depth(&px, &py, depth, Direction::Stable)?;
        let long = solver.truncated(&px, &py, 2 * depth, Direction::Stable)?;
        let diff = linalg::op_norm(&(&h.matrix - long));
        worst_ratio = worst_ratio.max(diff / h.error_bound);
        let full = solver.stable(&px, &py, 1e-13)?;
        fit_pairs.push((full.distance, full.deviation));
        if i < 8 {
            equivariance = equivariance.max(solver.equivariance_residual(&full, 1e-13)?);
        }
        ops.push(h);
        ops.push(full);
    }
    stage.check(Check::at_least("pairs tested", pairs as f64, 50.0));
    stage.check(Check::below("truncation n vs 2n over certified bound", worst_ratio, 1.0));
    let fit = holder_fit(&fit_pairs)?;
    stage.check(
        Check::below("relative Hölder exponent error", (fit.beta - beta).abs() / beta, fit_tol)
            .with_detail(format!("fitted {:.4} against window decay {beta}", fit.beta)),
    );
    stage.check(Check::below("equivariance residual", equivariance, 1e-10));
    stage.put("holder_fit", &fit);
    let mut csv = String::from(HolonomyOperator::csv_header());
    csv.push('\n');
    for h in &ops {
        csv.push_str(&h.csv_row());
        csv.push('\n');
    }
    stage.file("holonomy.csv", csv);
    Ok(())
}

fn planted_coboundary(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let base = BaseSystem::sft(sft_base(cfg)?);
    let b = target_matrix(cfg, 0.2)?;
    let amplitude = cfg.f64_or("cocycle", "planted_amplitude", 0.6)?;
    let depth = cfg.usize_or("transfer", "depth", 8)?;
    let (a, cbar) = planted_window_cocycle(&base, &b, amplitude, seed)?;
    let q = SymbolicPoint::periodic(&[0]);
    let t = build_transfer_fixed_point(&a, &b, &q, depth)?;
    let recovery = t
        .samples
        .iter()
        .map(|(x, c)| gl_distance(c, cbar.value_at(x, 0)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    stage.check(Check::at_least("homoclinic points", t.len() as f64, 100.0));
    stage.check(Check::below("recovery gl-distance", recovery, 1e-6));
    stage.check(Check::below("conjugacy residual", t.conjugacy_residual, 1e-8));
    stage.check(Check::below("homoclinic identity", t.homoclinic_residual, 1e-6));
    stage.check(Check::holds("hölder certificate", t.certificate.valid, format!("constant {:.4e}", t.certificate.constant)));
    let x: SymbolicPoint = "(0)^inf|1.1|(0)^inf".parse()?;
    let hc = transfer::homoclinic_consistency(&a, &x, &q, &[5, 10, 15])?;
    stage.put("homoclinic_consistency", &hc);
    stage.put(
        "transfer",
        json!({
            "points": t.len(),
            "radius": t.radius,
            "recovery": recovery,
            "conjugacy_residual": t.conjugacy_residual,
            "homoclinic_residual": t.homoclinic_residual,
            "certificate": &t.certificate,
        }),
    );
    stage.file("transfer.json", serde_json::to_string_pretty(&t.to_json()).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    exponent_consistency(&a, &mut rng, 4, stage, "planted")?;
    Ok(())
}

fn delta_narrow_splitting(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let sft = sft_base(cfg)?;
    let base = BaseSystem::sft(sft.clone());
    let center = cfg.matrix("cocycle", "center", Some(3))?.unwrap_or_else(|| linalg::diag(&[4.0, 1.0, 0.25]));
    let eps = cfg.f64_or("cocycle", "perturbation", 0.02)?;
    let max_period = cfg.usize_or("spectrum", "max_period", 10)?;
    let radius_max = cfg.f64_or("spectrum", "radius_max", 0.05)?;
    let tau_max = cfg.f64_or("spectrum", "tau_max", 0.3)?;
    let horizon = cfg.usize_or("spectrum", "horizon", 16)?;
    let d = center.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = sft.symbols();
    let es: Vec<Mat> = (0..k * k * k)
        .map(|_| {
            let e = Mat::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let n = linalg::op_norm(&e);
            e / n
        })
        .collect();
    // multiplicative perturbation with ‖εE‖ = ε on every window word
    let table = WindowTable::from_fn(k, -1, 1, d, |w| {
        let e = &es[(w[0] as usize * k + w[1] as usize) * k + w[2] as usize];
        &center * (linalg::identity(d) + e * eps)
    })?;
    let mut a = CocycleSpec::locally_constant(base.clone(), table, 1.0)?;
    // period-10 products of a diag(4, 1, 1/4) cocycle reach condition 16^10
    a.condition_cap = cfg.f64_or("spectrum", "condition_cap", 1e18)?;
    let orbits = base.periodic_orbits(max_period, crate::base::DEFAULT_ORBIT_CAP)?;
    let mut centers: Vec<f64> = linalg::eigenvalues(&center).iter().map(|z| z.norm().ln()).collect();
    centers.sort_by(|p, q| q.partial_cmp(p).unwrap());
    let narrow = delta_narrow_radius(&a, &orbits, &centers)?;
    stage.check(Check::at_most("delta-narrow radius", narrow.delta, radius_max).with_detail(format!("witness {}", narrow.witness)));
    stage.put("narrow", &narrow);
    let mut samples: Vec<Point> = orbits.iter().take(24).map(|o| o.base_point()).collect();
    samples.extend((0..8).map(|_| Point::from(sft.random_periodic_point(&mut rng, 30))));
    let mut fields = Vec::new();
    for split in 1..d {
        let s = dominated_splitting(&a, split, &samples, horizon)?;
        stage.check(Check::at_most(&format!("domination rate k={split}"), s.tau, tau_max));
        stage.check(Check::below(&format!("invariance residual k={split}"), s.invariance_residual, 1e-6));
        stage.file(&format!("splitting-k{split}.csv"), s.to_csv());
        fields.push(json!({"k": split, "tau": s.tau, "k_const": s.k_const, "window": s.window, "invariance_residual": s.invariance_residual}));
    }
    stage.put("splittings", fields);
    exponent_consistency(&a, &mut rng, 4, stage, "perturbed diagonal")?;
    Ok(())
}

fn unipotent_criterion(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let base = BaseSystem::sft(sft_base(cfg)?);
    let k = base.as_sft().unwrap().symbols();
    let beta = cfg.f64_or("family", "beta", 0.4)?;
    let mode = cfg.str_or("family", "mode", "coboundary");
    let max_period = cfg.usize_or("orbits", "max_period", 10)?;
    let ratio_max = cfg.f64_or("orbits", "ratio_max", 3.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = match mode.as_str() {
        "coboundary" => {
            let g: Vec<f64> = (0..k * k).map(|_| rng.random::<f64>() - 0.5).collect();
            let gv = |w: &[u8]| g[w[0] as usize * k + w[1] as usize];
            WindowTable::from_fn(k, 0, 2, 1, |w| Mat::from_element(1, 1, beta + gv(&w[1..3]) - gv(&w[0..2])))?
        }
        // α vanishes exactly on the word 11, so only the fixed point (1)^inf sums to zero
        "zero-orbit" => WindowTable::from_fn(k, 0, 1, 1, |w| Mat::from_element(1, 1, beta * (1.0 - (w[0] * w[1]) as f64)))?,
        other => return Err(config_error(0, "family.mode", format!("unknown mode `{other}`"))),
    };
    let fam = UnipotentFamily::new(base.clone(), alpha, beta)?;
    let orbits = base.periodic_orbits(max_period, crate::base::DEFAULT_ORBIT_CAP)?;
    let report = transfer::unipotent_periodic_criterion(&fam, &orbits)?;
    stage.check(Check::holds(
        "periodic data conjugate to the unipotent target",
        report.conjugate,
        match &report.witness {
            Some(w) => format!("witness orbit {w}"),
            None => format!("{} orbits", orbits.len()),
        },
    ));
    if report.conjugate {
        stage.check(Check::below("ratio bound", report.ratio_bound, ratio_max));
    }
    stage.put("orbits", orbits.len());
    stage.put("conjugate", report.conjugate);
    stage.put("ratio_bound", report.ratio_bound);
    stage.put("witness", &report.witness);
    let mut csv = String::from("orbit,period,sum,target,conjugate,ratio\n");
    for r in &report.rows {
        csv.push_str(&format!("{},{},{:e},{:e},{},{:e}\n", r.orbit, r.period, r.sum, r.target, r.conjugate, r.ratio));
    }
    stage.file("orbits.csv", csv);
    Ok(())
}

fn coprime_combine(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let base = BaseSystem::sft(sft_base(cfg)?);
    let b = target_matrix(cfg, 1.0 / 3.0)?;
    let amplitude = cfg.f64_or("cocycle", "planted_amplitude", 0.6)?;
    let n = cfg.usize_or("combine", "n", 2)?;
    let m = cfg.usize_or("combine", "m", 1)?;
    let k = cfg.usize_or("combine", "k", 3)?;
    let depth = cfg.usize_or("combine", "depth", 4)?;
    let (a, _) = planted_window_cocycle(&base, &b, amplitude, seed)?;
    let q = SymbolicPoint::periodic(&[0]);
    let id = linalg::identity(b.nrows());
    let c1 = build_transfer(&a, &b, &q, &id, n * m, depth)?;
    let c2 = build_transfer(&a, &b, &q, &id, k, depth)?;
    let rep = transfer::combine_coprime(&a, &c1, n, m, &c2)?;
    let bezout = (n * m) as i64 * rep.r + k as i64 * rep.s;
    stage.check(Check::holds("bezout identity", bezout == 1, format!("NM·({}) + K·({}) = {bezout}", rep.r, rep.s)));
    stage.check(Check::below("period-1 conjugacy residual", rep.residual, 1e-8));
    stage.check(Check::below("centralizer residual", rep.centralizer_residual, 1e-8));
    stage.put("combine", &rep);
    // an anchor commuting with B^K but not with B must be rejected
    let twist = build_transfer(&a, &b, &q, &linalg::diag(&[2.0, 0.5]), k, depth);
    let rejected = match twist {
        Ok(t) => matches!(transfer::combine_coprime(&a, &c1, n, m, &t), Err(Error::CombineFailed(_))),
        Err(_) => true,
    };
    stage.check(Check::holds("twisted anchor rejected", rejected, "anchor diag(2, 1/2) over f^K"));
    Ok(())
}

fn trig_perturbation(eps: f64) -> TrigPoly {
    TrigPoly::new(vec![TrigTerm::sin(vec![eps, 0.5 * eps], vec![1, 0]), TrigTerm::cos(vec![0.0, eps], vec![1, 1])])
}

fn catmap_rigidity(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let l = automorphism(cfg, "map", "linear", &[[2, 1], [1, 1]])?;
    let eps = cfg.f64_or("map", "epsilon", 0.01)?;
    let grid = cfg.usize_or("conjugacy", "grid", 256)?;
    let planted_grid = cfg.usize_or("conjugacy", "planted_grid", 64)?;
    let psi_amp = cfg.f64_or("conjugacy", "planted_amplitude", 0.01)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let perturbed: Arc<dyn ToralMap> = Arc::new(PerturbedToralMap::new(l.clone(), trig_perturbation(eps))?);
    let h = rigidity::franks_manning(perturbed.clone(), grid)?;
    stage.check(Check::below("functional equation residual", h.residual, 1e-9));
    let fine: Vec<Vector> = (0..256).map(|_| Vector::from_fn(2, |_, _| rng.random::<f64>())).collect();
    let fine_res = fine.iter().map(|x| h.defect(x)).fold(0.0, f64::max);
    stage.check(Check::below("off-grid residual", fine_res, 1e-8));
    let eq = (0..16)
        .map(|i| {
            let mut x = fine[i].clone();
            let mut lh = h.eval(&x);
            let mut worst = 0.0f64;
            for _ in 0..6 {
                x = crate::base::toral_map::reduce_mod1(&perturbed.apply(&x));
                lh = perturbed.linear_mat() * lh;
                worst = worst.max(torus_distance(lh.as_slice(), h.eval(&x).as_slice()));
            }
            worst
        })
        .fold(0.0, f64::max);
    stage.check(Check::below("equivariance under f^6", eq, 1e-8));
    stage.put("perturbed", h.summary());

    let psi = TrigPoly::new(vec![
        TrigTerm::sin(vec![psi_amp, 0.5 * psi_amp], vec![0, 1]),
        TrigTerm::cos(vec![0.4 * psi_amp, -0.6 * psi_amp], vec![1, 1]),
    ]);
    let pm = Arc::new(PlantedToralMap::new(l.clone(), psi)?);
    let hp = rigidity::franks_manning(pm.clone(), planted_grid)?;
    let recovery = (0..hp.values.len())
        .map(|i| {
            let x = hp.grid_point(i);
            torus_distance(hp.eval(&x).as_slice(), pm.conjugacy(&x).as_slice())
        })
        .fold(0.0, f64::max);
    stage.check(Check::below("planted conjugacy recovery", recovery, 1e-6));
    stage.put("planted", hp.summary());

    let pts: Vec<Vector> = (0..8).map(|_| Vector::from_fn(2, |_, _| rng.random::<f64>())).collect();
    let ladder = [1e-2, 1e-3, 1e-4];
    let dt = rigidity::derivative_transfer(&hp, &pts, 1e-4, &ladder)?;
    stage.check(Check::below("derivative transfer residual (planted)", dt.max_residual, 1e-6));
    let leaves = Leaves::new(pm.clone())?;
    let pairs: Vec<(Vector, f64)> = pts.iter().take(4).enumerate().map(|(i, x)| (x.clone(), 0.005 * (i + 1) as f64)).collect();
    let inter = rigidity::intertwining_residual(&hp, &leaves, &pairs, 1e-4)?;
    stage.check(Check::below("intertwining residual", inter, 1e-5));
    // translations of the linear model pulled back by h are isometries of the pulled-back metric
    let shift = Vector::from_vec(vec![0.013, -0.021]);
    let tv = |p: &Vector| pm.conjugacy_inverse(&(pm.conjugacy(p) + &shift));
    let triples = pts
        .iter()
        .take(4)
        .map(|x| -> Result<(Mat, Mat, Mat)> {
            let y = tv(x);
            let s = 1e-5;
            let cols: Vec<Vector> = (0..2)
                .map(|j| {
                    let e = Vector::from_fn(2, |r, _| if r == j { s } else { 0.0 });
                    (tv(&(x + &e)) - tv(&(x - &e))) / (2.0 * s)
                })
                .collect();
            Ok((rigidity::pulled_back_metric(&hp, x, 1e-4)?, rigidity::pulled_back_metric(&hp, &y, 1e-4)?, Mat::from_columns(&cols)))
        })
        .collect::<Result<Vec<_>>>()?;
    let iso = rigidity::metric_isometry_residual(&triples)?;
    stage.check(Check::below("translation isometry residual", iso, 1e-5));
    stage.put("derivative_transfer", json!({"max_residual": dt.max_residual, "converged": dt.converged, "intertwining": inter, "isometry": iso}));

    let dtp = rigidity::derivative_transfer(&h, &pts[..2], 1e-4, &ladder)?;
    stage.put("perturbed_derivative", json!({"max_residual": dtp.max_residual, "converged": dtp.converged, "nonconvergent": dtp.nonconvergent}));
    let mut csv = String::from("x,y,u1,u2\n");
    let stride = (grid / 64).max(1);
    for i in 0..h.values.len() {
        let (r, c) = (i / grid, i % grid);
        if r % stride == 0 && c % stride == 0 {
            let x = h.grid_point(i);
            csv.push_str(&format!("{:e},{:e},{:e},{:e}\n", x[0], x[1], h.values[i][0], h.values[i][1]));
        }
    }
    stage.file("displacement.csv", csv);
    Ok(())
}

fn t4_skew(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let a = automorphism(cfg, "map", "a", &[[2, 1], [1, 1]])?;
    let b = automorphism(cfg, "map", "b", &[[3, 1], [2, 1]])?;
    let eps = cfg.f64_or("map", "epsilon", 0.05)?;
    let n_max = cfg.usize_or("periodic", "max_period", 6)?;
    let report = rigidity::t4_skew_periodic_demo(&a, &b, eps, n_max)?;
    stage.check(Check::below("periodic eigenvalue deviation", report.max_eigenvalue_deviation, SKEW_EIGEN_TOL));
    let missing: usize = report.rows.iter().map(|r| r.points - r.conjugators_found).sum();
    stage.check(Check::holds("conjugator to L^n at every periodic point", missing == 0, format!("{missing} missing")));
    stage.check(Check::holds("linear part not weakly irreducible", !report.weakly_irreducible, "diag(A, B)"));
    let mut csv = String::from("n,points,max_eigenvalue_deviation,max_closure_error,conjugators_found,max_condition,mean_condition\n");
    for r in &report.rows {
        csv.push_str(&format!(
            "{},{},{:e},{:e},{},{:e},{:e}\n",
            r.n, r.points, r.max_eigenvalue_deviation, r.max_closure_error, r.conjugators_found, r.max_condition, r.mean_condition
        ));
    }
    stage.file("periodic.csv", csv);

    let map: Arc<dyn ToralMap> = Arc::new(PerturbedToralMap::skew_t4(&a, &b, eps)?);
    let h = rigidity::franks_manning(map, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vector> = (0..2).map(|_| Vector::from_fn(4, |_, _| rng.random::<f64>())).collect();
    let ladder = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let dt = rigidity::derivative_transfer(&h, &pts, 1e-4, &ladder)?;
    let mu = report.mu;
    let fast_bad = dt.nonconvergent.iter().any(|&j| (dt.directions[j] - mu).abs() < 1e-9 * mu);
    stage.check(Check::holds(
        "finite-difference Dh diverges along the fast unstable direction",
        fast_bad,
        format!("nonconvergent direction moduli {:?}", dt.nonconvergent.iter().map(|&j| dt.directions[j]).collect::<Vec<_>>()),
    ));
    let mut lcsv = String::from("sample,direction_modulus,step,delta\n");
    for (i, s) in dt.samples.iter().enumerate() {
        for (j, lad) in s.ladder.iter().enumerate() {
            for (t, dl) in ladder.iter().skip(1).zip(lad) {
                lcsv.push_str(&format!("{i},{:e},{t:e},{dl:e}\n", dt.directions[j]));
            }
        }
    }
    stage.file("dh-ladder.csv", lcsv);
    stage.put("periodic", &report);
    stage.put("conjugacy", json!({"residual": h.residual, "directions": dt.directions, "nonconvergent": dt.nonconvergent}));
    Ok(())
}

fn linearization_demo(cfg: &Config, seed: u64, stage: &mut Stage) -> Result<()> {
    let l = automorphism(cfg, "map", "linear", &[[2, 1], [1, 1]])?;
    let eps = cfg.f64_or("map", "epsilon", 0.03)?;
    let steps = cfg.f64_list("ladder", "steps", &[1e-2, 1e-3, 1e-4, 1e-5])?;
    let beta = cfg.f64_or("ladder", "beta", 0.5)?;
    let gate_beta = cfg.f64_or("ladder", "gate_beta", 0.05)?;
    let map: Arc<dyn ToralMap> = Arc::new(PerturbedToralMap::new(l, trig_perturbation(eps))?);
    let leaves = Leaves::new(map)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Vector::from_fn(2, |_, _| rng.random::<f64>());
    let mut charts = Vec::new();
    for leaf in [Leaf::Unstable, Leaf::Stable] {
        let c = rigidity::nonstationary_linearization(&leaves, &x, leaf, 0.02, 20, 9, beta)?;
        stage.check(Check::below(&format!("{leaf:?} chart conjugation residual"), c.conjugation_residual, 1e-7));
        stage.check(Check::below(&format!("{leaf:?} chart uniqueness (depth n vs 2n)"), c.uniqueness, 1e-9));
        stage.check(Check::below(&format!("{leaf:?} chart derivative at origin"), c.derivative_defect, 1e-6));
        charts.push(c);
    }
    let y = leaves.leaf_point(&x, 0.02, Leaf::Stable)?;
    let r = rigidity::holonomy_derivative_check(&leaves, &x, &y, &steps, beta)?;
    stage.check(Check::holds("bunching", r.bunching.holds, format!("first {:.4}, second {:.4}", r.bunching.first, r.bunching.second)));
    stage.check(Check::holds("monotone ladder", r.monotone, format!("{} steps", r.ladder.len())));
    stage.check(Check::below("final ladder deviation", r.final_deviation, 1e-3));
    let gated = matches!(
        rigidity::holonomy_derivative_check(&leaves, &x, &y, &steps, gate_beta),
        Err(Error::BunchingFailed { .. })
    );
    stage.check(Check::holds("bunching gate rejects small exponent", gated, format!("beta = {gate_beta}")));
    let fol = rigidity::foliation_holonomy(&leaves, &x, &y, &[-0.01, -0.005, 0.005, 0.01], true)?;
    stage.check(Check::below("foliation holonomy refinement change", fol.accuracy.unwrap_or(f64::NAN), 1e-7));
    let mut csv = String::from("step,quotient,deviation,central_deviation\n");
    for row in &r.ladder {
        csv.push_str(&format!("{:e},{:e},{:e},{:e}\n", row.step, row.quotient, row.deviation, row.central_deviation));
    }
    stage.file("ladder.csv", csv);
    stage.put("charts", charts);
    stage.put("holonomy_derivative", &r);
    stage.put("foliation_holonomy", &fol);
    Ok(())
}

fn weak_irreducibility(cfg: &Config, _seed: u64, stage: &mut Stage) -> Result<()> {
    let a = automorphism(cfg, "maps", "a", &[[2, 1], [1, 1]])?;
    let b = automorphism(cfg, "maps", "b", &[[3, 1], [2, 1]])?;
    let am = a.matrix().clone();
    let jordan: Vec<Vec<i64>> = (0..4)
        .map(|i| {
            (0..4)
                .map(|j| {
                    let (bi, bj) = (i / 2, j / 2);
                    if bi == bj {
                        am[i % 2][j % 2] as i64
                    } else if bi == 0 && bj == 1 && i % 2 == j % 2 {
                        1
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let cases = [
        ("A", a.clone(), true),
        ("diag(A, A)", a.block_sum(&a)?, true),
        ("diag(A, B)", a.block_sum(&b)?, false),
        ("[[A, I], [0, A]]", ToralAutomorphism::new(jordan)?, true),
    ];
    let mut rows = Vec::new();
    for (label, m, expected) in cases {
        let w = m.weak_irreducibility()?;
        stage.check(Check::holds(
            &format!("weak irreducibility of {label}"),
            w.weakly_irreducible == expected,
            format!("got {}, expected {expected}", w.weakly_irreducible),
        ));
        rows.push(json!({"map": label, "weakly_irreducible": w.weakly_irreducible, "report": w}));
    }
    stage.put("cases", rows);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_matrices() {
        let cfg = Config::parse("scenario = x\n# comment\n[map]\nlinear = [[2, 1],\n  [1, 1]]\neps = 0.5 # trailing\n").unwrap();
        assert_eq!(cfg.required_str("", "scenario").unwrap(), "x");
        assert_eq!(cfg.int_matrix("map", "linear", Some(2)).unwrap().unwrap(), vec![vec![2, 1], vec![1, 1]]);
        assert_eq!(cfg.f64_or("map", "eps", 0.0).unwrap(), 0.5);
        assert_eq!(cfg.f64_or("map", "absent", 7.0).unwrap(), 7.0);
        cfg.check_unused().unwrap();
    }

    #[test]
    fn config_errors_name_the_field() {
        let cfg = Config::parse("[cocycle]\ncenter = [[4, 0, 0], [0, 1, 0]]\n").unwrap();
        match cfg.matrix("cocycle", "center", Some(3)).unwrap_err() {
            Error::Config { line, field, .. } => assert_eq!((line, field.as_str()), (2, "cocycle.center")),
            e => panic!("{e:?}"),
        }
        let cfg = Config::parse("[m]\nx = [[1, 2], [3]]\n").unwrap();
        assert!(matches!(cfg.matrix("m", "x", None), Err(Error::Config { ref field, .. }) if field == "m.x"));
        assert!(matches!(Config::parse("a = 1\nnonsense\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(Config::parse("a = [[1,\n"), Err(Error::Config { .. })));
        let cfg = Config::parse("a = 1\nb = 2\n").unwrap();
        cfg.f64_or("", "a", 0.0).unwrap();
        assert!(matches!(cfg.check_unused(), Err(Error::Config { ref field, .. }) if field == "b"));
        assert!(matches!(Config::parse("a = 1\na = 2\n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(cfg.f64_or("", "a", 0.0), Ok(_)));
        let cfg = Config::parse("a = one\n").unwrap();
        assert!(matches!(cfg.f64_or("", "a", 0.0), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn gallery_lists_builtin_scenarios() {
        let names: Vec<&str> = gallery().iter().map(|g| g.name).collect();
        assert!(names.len() >= 9);
        for n in ["sft-holonomy", "planted-coboundary", "delta-narrow-splitting", "unipotent-criterion", "coprime-combine", "catmap-rigidity", "t4-skew", "linearization-demo", "weak-irreducibility"] {
            assert!(names.contains(&n), "{n}");
        }
        for g in gallery() {
            Config::parse(g.config).unwrap();
        }
        assert!(matches!(gallery_config("nope"), Err(Error::UnknownScenario(_))));
        assert!(matches!(run_config("scenario = nope\n", &RunOptions::default()), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn unknown_field_in_scenario_is_reported() {
        let text = format!("{}\n[family]\nbogus = 1\n", "scenario = weak-irreducibility");
        assert!(matches!(run_config(&text, &RunOptions::default()), Err(Error::Config { ref field, .. }) if field == "family.bogus"));
    }

    #[test]
    fn weak_irreducibility_scenario_report() {
        let out = run_gallery("weak-irreducibility", &RunOptions::default()).unwrap();
        assert!(out.report.passed, "{:?}", out.report.failed_checks());
        let v: Value = serde_json::from_str(&out.report.to_json()).unwrap();
        assert_eq!(v["schema"], SCHEMA);
        assert_eq!(v["checks"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn unipotent_negative_reports_witness() {
        let out = run_gallery("unipotent-negative", &RunOptions::default()).unwrap();
        assert!(!out.report.passed);
        assert_eq!(out.report.results["witness"], SymbolicPoint::periodic(&[1]).to_string());
        let out = run_gallery("unipotent-criterion", &RunOptions::default()).unwrap();
        assert!(out.report.passed, "{:?}", out.report.failed_checks());
    }

    #[test]
    fn seed_override_is_echoed() {
        let out = run_gallery("weak-irreducibility", &RunOptions { seed: Some(42) }).unwrap();
        assert_eq!(out.report.scenario.seed, 42);
    }
}
