//! Subshifts of finite type and exact eventually-periodic points.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMBOLS: &[u8] = b"0123456789abcdefghijklmnopqrstuvwxyz";

fn symbol_char(s: u8) -> char {
    SYMBOLS[s as usize] as char
}

fn parse_symbol(c: char) -> Result<u8> {
    SYMBOLS
        .iter()
        .position(|&b| b as char == c.to_ascii_lowercase())
        .map(|p| p as u8)
        .ok_or_else(|| Error::Parse(format!("bad symbol `{c}`")))
}

fn primitive_root(w: &[u8]) -> Vec<u8> {
    let n = w.len();
    for p in 1..=n {
        if n % p == 0 && (p..n).all(|i| w[i] == w[i - p]) {
            return w[..p].to_vec();
        }
    }
    w.to_vec()
}

/// A bi-infinite eventually periodic sequence `... past past | core | future future ...`.
///
/// `core` occupies indices `start .. start + core.len()`; the past tail is laid out so
/// that `x[start - p + j] = past[j]`, and the future tail so that `x[end + j] = future[j]`.
/// The representation is kept normalized, so structural equality is sequence equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolicPoint {
    past: Vec<u8>,
    start: i64,
    core: Vec<u8>,
    future: Vec<u8>,
}

impl SymbolicPoint {
    pub fn new(past: Vec<u8>, start: i64, core: Vec<u8>, future: Vec<u8>) -> Result<Self> {
        if past.is_empty() || future.is_empty() {
            return Err(Error::InvalidInput("tails must be nonempty".into()));
        }
        Ok(SymbolicPoint { past, start, core, future }.normalized())
    }

    /// Builds the point whose symbols on `[a - p, b + q)` are given by `f`, with the
    /// left tail of period `p` and the right tail of period `q`.
    pub fn from_fn(p: usize, a: i64, b: i64, q: usize, f: impl Fn(i64) -> u8) -> Self {
        let past = (0..p as i64).map(|j| f(a - p as i64 + j)).collect();
        let core = (a..b).map(&f).collect();
        let future = (0..q as i64).map(|j| f(b + j)).collect();
        SymbolicPoint { past, start: a, core, future }.normalized()
    }

    /// The periodic point `(w)^inf` with `x_0 = w[0]`.
    pub fn periodic(word: &[u8]) -> Self {
        assert!(!word.is_empty());
        SymbolicPoint { past: word.to_vec(), start: 0, core: Vec::new(), future: word.to_vec() }
            .normalized()
    }

    pub fn symbol(&self, i: i64) -> u8 {
        let end = self.end();
        if i < self.start {
            let p = self.past.len() as i64;
            self.past[(i - self.start).rem_euclid(p) as usize]
        } else if i >= end {
            let q = self.future.len() as i64;
            self.future[(i - end).rem_euclid(q) as usize]
        } else {
            self.core[(i - self.start) as usize]
        }
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn end(&self) -> i64 {
        self.start + self.core.len() as i64
    }

    pub fn past_tail(&self) -> &[u8] {
        &self.past
    }

    pub fn future_tail(&self) -> &[u8] {
        &self.future
    }

    pub fn core(&self) -> &[u8] {
        &self.core
    }

    pub fn word(&self, a: i64, b: i64) -> Vec<u8> {
        (a..b).map(|i| self.symbol(i)).collect()
    }

    /// Minimal period if the sequence is periodic.
    pub fn period(&self) -> Option<usize> {
        if self.core.is_empty() && self.past == self.future {
            Some(self.future.len())
        } else {
            None
        }
    }

    /// The shift applied `k` times: `(f^k x)_i = x_{i+k}`.
    pub fn shift(&self, k: i64) -> Self {
        SymbolicPoint {
            past: self.past.clone(),
            start: self.start - k,
            core: self.core.clone(),
            future: self.future.clone(),
        }
        .normalized()
    }

    /// Range of indices beyond which both points are purely periodic, plus a period bound.
    fn comparison_reach(&self, other: &Self) -> (i64, i64) {
        let lo = self.start.min(other.start);
        let hi = self.end().max(other.end());
        let pl = (self.past.len() * other.past.len()) as i64;
        let pr = (self.future.len() * other.future.len()) as i64;
        (lo - pl, hi + pr)
    }

    /// `n(x, y) = min{|i| : x_i != y_i}`, or `None` when the points coincide.
    pub fn first_disagreement(&self, other: &Self) -> Option<u64> {
        if self == other {
            return None;
        }
        let (lo, hi) = self.comparison_reach(other);
        let reach = lo.unsigned_abs().max(hi.unsigned_abs()) as i64 + 1;
        for n in 0..=reach {
            if self.symbol(n) != other.symbol(n) || self.symbol(-n) != other.symbol(-n) {
                return Some(n as u64);
            }
        }
        None
    }

    /// Smallest `N` with `x_i = y_i` for all `i >= N`; `None` when the forward tails differ.
    pub fn stable_agreement(&self, other: &Self) -> Option<i64> {
        let (lo, hi) = self.comparison_reach(other);
        let right = self.end().max(other.end());
        if (right..hi).any(|i| self.symbol(i) != other.symbol(i)) {
            return None;
        }
        (lo..right).rev().find(|&i| self.symbol(i) != other.symbol(i)).map(|i| i + 1).or(Some(lo))
    }

    /// Largest `N` with `x_i = y_i` for all `i <= N`; `None` when the backward tails differ.
    pub fn unstable_agreement(&self, other: &Self) -> Option<i64> {
        let (lo, hi) = self.comparison_reach(other);
        let left = self.start.min(other.start);
        if (lo..left).any(|i| self.symbol(i) != other.symbol(i)) {
            return None;
        }
        (left..hi).find(|&i| self.symbol(i) != other.symbol(i)).map(|i| i - 1).or(Some(hi))
    }

    fn normalized(mut self) -> Self {
        self.past = primitive_root(&self.past);
        self.future = primitive_root(&self.future);
        let p = self.past.len() as i64;
        let q = self.future.len() as i64;
        let start = self.start;
        let end = self.end();
        let limit = end + p * q + p + q;
        let mut a = start;
        while a < limit && self.symbol(a) == self.symbol(a - p) {
            a += 1;
        }
        let lower = start - p * q - p - q;
        let mut b = end;
        while b > lower && self.symbol(b - 1) == self.symbol(b - 1 + q) {
            b -= 1;
        }
        let ns = if a >= limit { 0 } else { a.min(0) };
        let ne = if b <= lower { 0 } else { b.max(0) };
        let past = (0..p).map(|j| self.symbol(ns - p + j)).collect();
        let core = (ns..ne).map(|i| self.symbol(i)).collect();
        let future = (0..q).map(|j| self.symbol(ne + j)).collect();
        SymbolicPoint { past, start: ns, core, future }
    }
}

impl fmt::Display for SymbolicPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let word = |w: &[u8]| w.iter().map(|&s| symbol_char(s)).collect::<String>();
        let split = (-self.start) as usize;
        write!(
            f,
            "({})^inf|{}.{}|({})^inf",
            word(&self.past),
            word(&self.core[..split]),
            word(&self.core[split..]),
            word(&self.future)
        )
    }
}

impl std::str::FromStr for SymbolicPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let parts: Vec<&str> = s.split('|').collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("expected three `|`-separated parts in `{s}`")));
        }
        let tail = |t: &str| -> Result<Vec<u8>> {
            let inner = t
                .strip_prefix('(')
                .and_then(|t| t.strip_suffix(")^inf"))
                .ok_or_else(|| Error::Parse(format!("bad tail `{t}`")))?;
            let w = inner.chars().map(parse_symbol).collect::<Result<Vec<u8>>>()?;
            if w.is_empty() {
                return Err(Error::Parse("empty tail".into()));
            }
            Ok(w)
        };
        let past = tail(parts[0])?;
        let future = tail(parts[2])?;
        let (left, right) = parts[1]
            .split_once('.')
            .ok_or_else(|| Error::Parse("core needs a `.` marking index 0".into()))?;
        let mut core = left.chars().map(parse_symbol).collect::<Result<Vec<u8>>>()?;
        let start = -(core.len() as i64);
        core.extend(right.chars().map(parse_symbol).collect::<Result<Vec<u8>>>()?);
        SymbolicPoint::new(past, start, core, future)
    }
}

/// A topologically mixing subshift of finite type with the metric `d(x,y) = nu^n(x,y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftBase {
    transitions: Vec<Vec<u8>>,
    nu: f64,
    mixing_power: usize,
}

impl SftBase {
    pub fn new(transitions: Vec<Vec<u8>>, nu: f64) -> Result<Self> {
        let k = transitions.len();
        if k == 0 || k > SYMBOLS.len() {
            return Err(Error::InvalidInput(format!("alphabet size {k} unsupported")));
        }
        if transitions.iter().any(|r| r.len() != k || r.iter().any(|&v| v > 1)) {
            return Err(Error::InvalidInput("transition matrix must be square 0/1".into()));
        }
        if !(nu > 0.0 && nu < 1.0) {
            return Err(Error::InvalidInput(format!("metric parameter {nu} not in (0,1)")));
        }
        let bound = k * k - 2 * k + 2;
        let mut power: Vec<Vec<u64>> =
            transitions.iter().map(|r| r.iter().map(|&v| v as u64).collect()).collect();
        for n in 1..=bound.max(1) {
            if power.iter().all(|r| r.iter().all(|&v| v > 0)) {
                return Ok(SftBase { transitions, nu, mixing_power: n });
            }
            power = (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| {
                            let s: u64 = (0..k).map(|l| power[i][l] * transitions[l][j] as u64).sum();
                            s.min(1)
                        })
                        .collect()
                })
                .collect();
        }
        Err(Error::InvalidInput("transition matrix is not mixing".into()))
    }

    pub fn full_shift(k: usize, nu: f64) -> Result<Self> {
        SftBase::new(vec![vec![1; k]; k], nu)
    }

    pub fn golden_mean(nu: f64) -> Result<Self> {
        SftBase::new(vec![vec![1, 1], vec![1, 0]], nu)
    }

    pub fn symbols(&self) -> usize {
        self.transitions.len()
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mixing_power(&self) -> usize {
        self.mixing_power
    }

    pub fn transitions(&self) -> &[Vec<u8>] {
        &self.transitions
    }

    pub fn allowed(&self, a: u8, b: u8) -> bool {
        self.transitions[a as usize][b as usize] == 1
    }

    pub fn is_admissible(&self, x: &SymbolicPoint) -> bool {
        let k = self.symbols() as u8;
        let lo = x.start() - x.past_tail().len() as i64 - 1;
        let hi = x.end() + x.future_tail().len() as i64 + 1;
        (lo..=hi).all(|i| x.symbol(i) < k) && (lo..hi).all(|i| self.allowed(x.symbol(i), x.symbol(i + 1)))
    }

    pub fn distance(&self, x: &SymbolicPoint, y: &SymbolicPoint) -> f64 {
        match x.first_disagreement(y) {
            None => 0.0,
            Some(n) => self.nu.powi(n as i32),
        }
    }

    /// `W^s_loc(x) ∩ W^u_loc(z)`: symbols of `x` at `i >= 0`, of `z` at `i <= 0`.
    pub fn local_product(&self, x: &SymbolicPoint, z: &SymbolicPoint) -> Result<SymbolicPoint> {
        if x.symbol(0) != z.symbol(0) {
            return Err(Error::NotInProductRange(format!("x_0 != z_0 for {x} and {z}")));
        }
        let a = z.start().min(0);
        let b = x.end().max(0);
        Ok(SymbolicPoint::from_fn(z.past_tail().len(), a, b, x.future_tail().len(), |i| {
            if i >= 0 {
                x.symbol(i)
            } else {
                z.symbol(i)
            }
        }))
    }

    /// Admissible cyclic words of length `n`, one per orbit of minimal period `n`
    /// (lexicographically minimal rotation), in lexicographic order.
    pub fn primitive_cycles(&self, n: usize, cap: usize, found: &mut usize) -> Result<Vec<Vec<u8>>> {
        let k = self.symbols() as u8;
        let mut out = Vec::new();
        let mut word = Vec::with_capacity(n);
        fn is_canonical(w: &[u8]) -> bool {
            let n = w.len();
            (1..n).all(|r| {
                for i in 0..n {
                    let a = w[i];
                    let b = w[(i + r) % n];
                    if a != b {
                        return a < b;
                    }
                }
                false
            })
        }
        #[allow(clippy::too_many_arguments)]
        fn dfs(
            base: &SftBase,
            k: u8,
            n: usize,
            word: &mut Vec<u8>,
            out: &mut Vec<Vec<u8>>,
            cap: usize,
            found: &mut usize,
        ) -> Result<()> {
            if word.len() == n {
                if base.allowed(word[n - 1], word[0]) && is_canonical(word) {
                    *found += 1;
                    if *found > cap {
                        return Err(Error::CapacityExceeded { count: *found, cap });
                    }
                    out.push(word.clone());
                }
                return Ok(());
            }
            for s in 0..k {
                if let Some(&last) = word.last() {
                    if !base.allowed(last, s) {
                        continue;
                    }
                    // every rotation of a canonical word is >= it, so no symbol below word[0]
                    if s < word[0] {
                        continue;
                    }
                }
                word.push(s);
                dfs(base, k, n, word, out, cap, found)?;
                word.pop();
            }
            Ok(())
        }
        dfs(self, k, n, &mut word, &mut out, cap, found)?;
        Ok(out)
    }

    /// Points agreeing with the fixed point `q` outside `[-depth, depth]`.
    pub fn homoclinic_points(&self, q: &SymbolicPoint, depth: usize) -> Result<Vec<SymbolicPoint>> {
        if q.period() != Some(1) {
            return Err(Error::InvalidInput(format!("{q} is not a fixed point")));
        }
        if depth == 0 {
            return Ok(vec![q.clone()]);
        }
        let c = q.symbol(0);
        let len = 2 * depth + 1;
        let k = self.symbols() as u8;
        let mut out = Vec::new();
        let mut word: Vec<u8> = Vec::with_capacity(len);
        fn dfs(
            base: &SftBase,
            k: u8,
            c: u8,
            len: usize,
            word: &mut Vec<u8>,
            out: &mut Vec<Vec<u8>>,
        ) {
            if word.len() == len {
                if base.allowed(word[len - 1], c) {
                    out.push(word.clone());
                }
                return;
            }
            let prev = *word.last().unwrap_or(&c);
            for s in 0..k {
                if base.allowed(prev, s) {
                    word.push(s);
                    dfs(base, k, c, len, word, out);
                    word.pop();
                }
            }
        }
        let mut words = Vec::new();
        dfs(self, k, c, len, &mut word, &mut words);
        let d = depth as i64;
        for w in words {
            out.push(SymbolicPoint::from_fn(1, -d, d + 1, 1, |i| {
                if i.abs() <= d {
                    w[(i + d) as usize]
                } else {
                    c
                }
            }));
        }
        Ok(out)
    }

    /// Closes the segment `x_0 .. x_{n-1}`; returns the periodic point and the measured
    /// ratio `max_i d(f^i x, f^i p) / d(x, f^n x)`.
    pub fn close(&self, x: &SymbolicPoint, n: usize) -> Result<(SymbolicPoint, f64)> {
        if n == 0 {
            return Err(Error::InvalidInput("closing needs n >= 1".into()));
        }
        let fx = x.shift(n as i64);
        let gap = self.distance(x, &fx);
        if gap >= 1.0 {
            return Err(Error::NotCloseEnough { distance: gap, threshold: self.nu });
        }
        if gap == 0.0 {
            return Ok((x.clone(), 0.0));
        }
        let p = SymbolicPoint::periodic(&x.word(0, n as i64));
        let mut worst = 0.0f64;
        for i in 0..=n as i64 {
            worst = worst.max(self.distance(&x.shift(i), &p.shift(i)));
        }
        Ok((p, worst / gap))
    }

    /// Uniformly random admissible cyclic word of the given length, as a periodic point.
    pub fn random_periodic_point<R: Rng>(&self, rng: &mut R, period: usize) -> SymbolicPoint {
        let k = self.symbols() as u8;
        loop {
            let mut w = vec![rng.random_range(0..k)];
            while w.len() < period {
                let last = *w.last().unwrap();
                let choices: Vec<u8> = (0..k).filter(|&s| self.allowed(last, s)).collect();
                w.push(choices[rng.random_range(0..choices.len())]);
            }
            if self.allowed(w[period - 1], w[0]) {
                return SymbolicPoint::periodic(&w);
            }
        }
    }

    /// Count of admissible closed words of length `n` (trace of `M^n`).
    pub fn trace_power(&self, n: usize) -> u128 {
        let k = self.symbols();
        let m: Vec<Vec<u128>> =
            self.transitions.iter().map(|r| r.iter().map(|&v| v as u128).collect()).collect();
        let mut p: Vec<Vec<u128>> = (0..k).map(|i| (0..k).map(|j| (i == j) as u128).collect()).collect();
        for _ in 0..n {
            p = (0..k)
                .map(|i| (0..k).map(|j| (0..k).map(|l| p[i][l] * m[l][j]).sum()).collect())
                .collect();
        }
        (0..k).map(|i| p[i][i]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(s: &str) -> SymbolicPoint {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_format_round_trip() {
        let x = pt("(0)^inf|01.10|(0)^inf");
        assert_eq!(x.to_string(), "(0)^inf|1.1|(0)^inf");
        assert_eq!(x.symbol(-2), 0);
        assert_eq!(x.symbol(-1), 1);
        assert_eq!(x.symbol(0), 1);
        assert_eq!(x.symbol(1), 0);
        assert_eq!(pt(&x.to_string()), x);
    }

    #[test]
    fn normalization_collapses_tails() {
        let a = pt("(01)^inf|0101.01|(0101)^inf");
        assert_eq!(a, SymbolicPoint::periodic(&[0, 1]));
        assert_eq!(a.period(), Some(2));
        assert_eq!(pt("(0)^inf|.|(0)^inf").period(), Some(1));
    }

    #[test]
    fn shift_moves_index_zero() {
        let x = pt("(0)^inf|.1|(0)^inf");
        let y = x.shift(1);
        assert_eq!(y.symbol(-1), 1);
        assert_eq!(y.symbol(0), 0);
        assert_eq!(y.shift(-1), x);
    }

    #[test]
    fn distance_examples() {
        let b = SftBase::full_shift(2, 0.5).unwrap();
        let x = pt("(0)^inf|.|(0)^inf");
        assert_eq!(b.distance(&x, &x), 0.0);
        let y = pt("(0)^inf|.1|(0)^inf");
        assert_eq!(b.distance(&x, &y), 1.0);
        let z = pt("(0)^inf|.0001|(0)^inf");
        assert!((b.distance(&x, &z) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn local_product_splices() {
        let b = SftBase::full_shift(2, 0.5).unwrap();
        let x = pt("(0)^inf|.0|(1)^inf");
        let z = pt("(1)^inf|0.01|(0)^inf");
        let w = b.local_product(&x, &z).unwrap();
        assert_eq!(w, pt("(1)^inf|0.0|(1)^inf"));
        assert_eq!(b.local_product(&x, &x).unwrap(), x);
        assert!(b.local_product(&x, &pt("(1)^inf|.|(1)^inf")).is_err());
    }

    #[test]
    fn primitive_cycle_counts() {
        let b = SftBase::full_shift(2, 0.5).unwrap();
        let mut found = 0;
        let counts: Vec<usize> =
            (1..=3).map(|n| b.primitive_cycles(n, 100, &mut found).unwrap().len()).collect();
        assert_eq!(counts, vec![2, 1, 2]);
    }

    #[test]
    fn homoclinic_enumeration() {
        let full = SftBase::full_shift(2, 0.5).unwrap();
        let q = SymbolicPoint::periodic(&[0]);
        assert_eq!(full.homoclinic_points(&q, 0).unwrap(), vec![q.clone()]);
        assert_eq!(full.homoclinic_points(&q, 1).unwrap().len(), 8);
        let golden = SftBase::golden_mean(0.5).unwrap();
        let pts = golden.homoclinic_points(&q, 1).unwrap();
        assert_eq!(pts.len(), 5);
        assert!(pts.iter().all(|p| golden.is_admissible(p)));
    }

    #[test]
    fn closing_returns_word_closure() {
        let b = SftBase::full_shift(2, 0.5).unwrap();
        let x = pt("(0)^inf|.0110|(1)^inf");
        let (p, k) = b.close(&x, 3).unwrap();
        assert_eq!(p, SymbolicPoint::periodic(&[0, 1, 1]));
        assert!(k <= 1.0 + 1e-12);
        let per = SymbolicPoint::periodic(&[0, 1]);
        assert_eq!(b.close(&per, 2).unwrap(), (per.clone(), 0.0));
    }

    #[test]
    fn mixing_power_of_golden_mean() {
        assert_eq!(SftBase::golden_mean(0.5).unwrap().mixing_power(), 2);
        assert!(SftBase::new(vec![vec![0, 1], vec![1, 0]], 0.5).is_err());
    }
}
