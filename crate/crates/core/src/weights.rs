//! Cycle weights `alpha_j`, the normalizations `h_n` of weighted random
//! permutations, and exact sampling of their cycle lengths.
//!
//! A permutation of `n` elements with `r_j` cycles of length `j` has weight
//! `prod_j exp(-alpha_j r_j)`; `h_n` is the total weight divided by `n!`, so
//! that `h_0 = 1` and `n h_n = sum_{j=1}^n exp(-alpha_j) h_{n-j}`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{self, Bounded};

/// Overrides in the asymptotic regime live at `j <= MAX_OVERRIDE`.
pub const MAX_OVERRIDE: usize = 10_000;

/// Largest `n` accepted by the partition-sum oracles.
pub const BRUTE_FORCE_MAX: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum WeightRegime {
    /// `alpha_j = alpha` for all `j`.
    Constant { alpha: f64 },
    /// `alpha_j = alpha` except at finitely many overridden lengths.
    Asymptotic { alpha: f64, overrides: Vec<(usize, f64)> },
    /// `alpha_j = gamma log j`.
    Logarithmic { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleWeightModel {
    regime: WeightRegime,
}

impl CycleWeightModel {
    pub fn constant(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite, got {alpha}")));
        }
        Ok(Self { regime: WeightRegime::Constant { alpha } })
    }

    pub fn asymptotic(alpha: f64, mut overrides: Vec<(usize, f64)>) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite, got {alpha}")));
        }
        overrides.sort_by_key(|&(j, _)| j);
        for w in overrides.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Config(format!("duplicate override for j={}", w[0].0)));
            }
        }
        for &(j, a) in &overrides {
            if j == 0 || j > MAX_OVERRIDE {
                return Err(Error::Config(format!(
                    "override index {j} outside 1..={MAX_OVERRIDE}"
                )));
            }
            if a.is_nan() || a == f64::NEG_INFINITY {
                return Err(Error::Config(format!("override alpha_{j} = {a} is not allowed")));
            }
        }
        Ok(Self { regime: WeightRegime::Asymptotic { alpha, overrides } })
    }

    pub fn logarithmic(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { regime: WeightRegime::Logarithmic { gamma } })
    }

    pub fn regime(&self) -> &WeightRegime {
        &self.regime
    }

    /// `alpha_j` for `j >= 1`.
    pub fn alpha(&self, j: usize) -> f64 {
        debug_assert!(j >= 1);
        match &self.regime {
            WeightRegime::Constant { alpha } => *alpha,
            WeightRegime::Asymptotic { alpha, overrides } => overrides
                .binary_search_by_key(&j, |&(k, _)| k)
                .map(|i| overrides[i].1)
                .unwrap_or(*alpha),
            WeightRegime::Logarithmic { gamma } => gamma * (j as f64).ln(),
        }
    }

    /// `exp(-alpha_j)`.
    pub fn weight(&self, j: usize) -> f64 {
        (-self.alpha(j)).exp()
    }

    /// `theta = exp(-alpha)` of the limiting value; `None` in the logarithmic regime.
    pub fn theta(&self) -> Option<f64> {
        match &self.regime {
            WeightRegime::Constant { alpha } | WeightRegime::Asymptotic { alpha, .. } => {
                Some((-alpha).exp())
            }
            WeightRegime::Logarithmic { .. } => None,
        }
    }

    /// Largest index that differs from the limiting rule (0 if none).
    pub fn last_override(&self) -> usize {
        match &self.regime {
            WeightRegime::Asymptotic { overrides, .. } => overrides.last().map_or(0, |o| o.0),
            _ => 0,
        }
    }

    /// `sup_j exp(-alpha_j)`.
    pub fn sup_weight(&self) -> f64 {
        match &self.regime {
            WeightRegime::Constant { alpha } => (-alpha).exp(),
            WeightRegime::Asymptotic { alpha, overrides } => overrides
                .iter()
                .map(|&(_, a)| (-a).exp())
                .fold((-alpha).exp(), f64::max),
            WeightRegime::Logarithmic { .. } => 1.0,
        }
    }

    /// Deviation sum `sum_j |alpha_j - alpha|` when `alpha > 0`, and
    /// `sum_j |alpha_j - alpha| / j` otherwise. Zero outside the asymptotic regime.
    pub fn deviation_sum(&self) -> f64 {
        match &self.regime {
            WeightRegime::Asymptotic { alpha, overrides } => overrides
                .iter()
                .map(|&(j, a)| {
                    let d = (a - alpha).abs();
                    if *alpha > 0.0 { d } else { d / j as f64 }
                })
                .sum(),
            _ => 0.0,
        }
    }

    /// `sum_{j <= k} exp(-alpha_j)`: the expected number of points a large
    /// weighted permutation keeps in cycles of length at most `k`.
    pub fn small_cycle_mass(&self, k: usize) -> f64 {
        (1..=k).map(|j| self.weight(j)).sum()
    }

    /// `sum_{j >= 1} exp(-alpha_j) j^{-s}` with a certified remainder bound.
    pub fn dirichlet_series(&self, s: f64) -> Result<Bounded> {
        match &self.regime {
            WeightRegime::Constant { alpha } => {
                let z = numeric::zeta(s)?;
                let t = (-alpha).exp();
                Ok(Bounded { value: t * z.value, error: t * z.error })
            }
            WeightRegime::Asymptotic { alpha, overrides } => {
                let z = numeric::zeta(s)?;
                let t = (-alpha).exp();
                let corr: f64 = overrides
                    .iter()
                    .map(|&(j, a)| ((-a).exp() - t) * (j as f64).powf(-s))
                    .sum();
                Ok(Bounded { value: t * z.value + corr, error: t * z.error })
            }
            WeightRegime::Logarithmic { gamma } => numeric::zeta(s + gamma),
        }
    }

    /// `G(eps) = sum_{j >= 1} exp(-alpha_j) exp(-j eps)` for `eps > 0`.
    pub fn geometric_sum(&self, eps: f64) -> Result<Bounded> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("geometric sum needs eps > 0, got {eps}")));
        }
        let q = (-eps).exp();
        let base = q / -(-eps).exp_m1();
        match &self.regime {
            WeightRegime::Constant { alpha } => Ok(Bounded { value: (-alpha).exp() * base, error: 0.0 }),
            WeightRegime::Asymptotic { alpha, overrides } => {
                let t = (-alpha).exp();
                let corr: f64 = overrides
                    .iter()
                    .map(|&(j, a)| ((-a).exp() - t) * (-(j as f64) * eps).exp())
                    .sum();
                Ok(Bounded { value: t * base + corr, error: 0.0 })
            }
            WeightRegime::Logarithmic { gamma } => Ok(polylog_exp(*gamma, eps)),
        }
    }
}

/// `sum_{j >= 1} j^{-gamma} exp(-j eps)`: direct head plus a midpoint-rule
/// integral tail. The summand is completely monotone, so the midpoint error
/// is at most `|f'(J)| / 24`.
fn polylog_exp(gamma: f64, eps: f64) -> Bounded {
    const HEAD: usize = 10_000;
    let f = |x: f64| x.powf(-gamma) * (-eps * x).exp();
    let mut head = 0.0;
    let mut j_end = HEAD;
    for j in 1..=HEAD {
        let t = f(j as f64);
        head += t;
        if t < 1e-18 * head {
            j_end = j;
            break;
        }
    }
    let jf = j_end as f64;
    if j_end < HEAD {
        // remaining terms are geometric-dominated
        let q = (-eps).exp();
        let tail_bound = f(jf) * q / (1.0 - q);
        return Bounded { value: head, error: tail_bound };
    }
    let start = jf + 0.5;
    // x = start * e^u
    let g = |u: f64| {
        let x = start * u.exp();
        x * f(x)
    };
    let upper = (60.0 / (eps * start)).max(1.0).ln() + 2.0;
    let tail = numeric::integrate(&g, 0.0, upper, 1e-16 * head.max(1e-300))
        .map(|b| b.value)
        .unwrap_or(f64::NAN);
    let remainder = f(start * upper.exp()) / eps;
    let err = (gamma / jf + eps) * f(jf) / 24.0 + remainder;
    Bounded { value: head + tail, error: err }
}

/// Log-domain table of `h_0..h_{N}` for a weight sequence `w_j = exp(-alpha_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    log_w: Vec<f64>,
    log_h: Vec<f64>,
}

impl WeightTable {
    /// Build from `log w_j` for `j = 1..=N` (`log_w[j - 1]`).
    pub fn from_log_weights(log_w: Vec<f64>) -> Result<Self> {
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Numeric("log weight is NaN or +inf".into()));
        }
        let n_max = log_w.len();
        let mut log_h = Vec::with_capacity(n_max + 1);
        log_h.push(0.0);
        let mut buf = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            buf.clear();
            buf.extend((1..=n).map(|j| log_w[j - 1] + log_h[n - j]));
            let v = numeric::log_sum_exp(&buf) - (n as f64).ln();
            if v.is_nan() || v == f64::INFINITY {
                return Err(Error::Numeric(format!("log h_{n} is not finite")));
            }
            log_h.push(v);
        }
        Ok(Self { log_w, log_h })
    }

    pub fn n_max(&self) -> usize {
        self.log_h.len() - 1
    }

    pub fn log_h(&self, n: usize) -> f64 {
        self.log_h[n]
    }

    pub fn h(&self, n: usize) -> f64 {
        self.log_h[n].exp()
    }

    pub fn log_hs(&self) -> &[f64] {
        &self.log_h
    }

    /// `log w_j`, `j >= 1`.
    pub fn log_weight(&self, j: usize) -> f64 {
        self.log_w[j - 1]
    }

    /// Largest relative violation of `n h_n = sum_j w_j h_{n-j}` over the table.
    pub fn max_recursion_residual(&self) -> f64 {
        (1..=self.n_max())
            .map(|n| {
                let rhs: Vec<f64> = (1..=n).map(|j| self.log_w[j - 1] + self.log_h[n - j]).collect();
                let rhs = numeric::log_sum_exp(&rhs);
                let lhs = (n as f64).ln() + self.log_h[n];
                (rhs - lhs).exp_m1().abs()
            })
            .fold(0.0, f64::max)
    }

    /// Law of the length of the cycle containing a fixed element among `n`.
    pub fn first_cycle_law(&self, n: usize) -> Vec<f64> {
        assert!(n >= 1 && n <= self.n_max(), "table does not cover n={n}");
        let norm = (n as f64).ln() + self.log_h[n];
        (1..=n)
            .map(|j| (self.log_w[j - 1] + self.log_h[n - j] - norm).exp())
            .collect()
    }

    /// Exact draw of the cycle lengths of a weighted permutation of `n`
    /// elements, ordered by smallest element: the first length is drawn from
    /// [`Self::first_cycle_law`] at `n`, the next one at `n - l_1`, and so on.
    pub fn sample_cycle_lengths<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(n <= self.n_max(), "table does not cover n={n}");
        let mut out = Vec::new();
        let mut rest = n;
        while rest > 0 {
            let norm = (rest as f64).ln() + self.log_h[rest];
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = rest;
            for j in 1..=rest {
                acc += (self.log_w[j - 1] + self.log_h[rest - j] - norm).exp();
                if u < acc {
                    pick = j;
                    break;
                }
            }
            out.push(pick);
            rest -= pick;
        }
        out
    }

    /// Two-column text export: `n log_h_n` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (n, v) in self.log_h.iter().enumerate() {
            let _ = writeln!(s, "{n} {v}");
        }
        s
    }
}

/// Cycle-length sampler with the conditional laws tabulated for every
/// remaining size, so each cycle costs one binary search. Memory is
/// `n_max^2 / 2` floats.
#[derive(Debug, Clone)]
pub struct CycleLengthSampler {
    cdf: Vec<Vec<f64>>,
}

impl CycleLengthSampler {
    pub fn new(table: &WeightTable) -> Self {
        let mut cdf = Vec::with_capacity(table.n_max() + 1);
        cdf.push(Vec::new());
        for rest in 1..=table.n_max() {
            let norm = (rest as f64).ln() + table.log_h[rest];
            let mut acc = 0.0;
            let row: Vec<f64> = (1..=rest)
                .map(|j| {
                    acc += (table.log_w[j - 1] + table.log_h[rest - j] - norm).exp();
                    acc
                })
                .collect();
            cdf.push(row);
        }
        Self { cdf }
    }

    pub fn n_max(&self) -> usize {
        self.cdf.len() - 1
    }

    /// Same law and ordering as [`WeightTable::sample_cycle_lengths`].
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(n <= self.n_max(), "sampler does not cover n={n}");
        let mut out = Vec::new();
        let mut rest = n;
        while rest > 0 {
            let row = &self.cdf[rest];
            let u: f64 = rng.gen::<f64>() * row[rest - 1];
            let pick = row.partition_point(|&c| c <= u).min(rest - 1) + 1;
            out.push(pick);
            rest -= pick;
        }
        out
    }
}

/// `h_0..h_{n_max}` for a weight model.
pub fn compute_h(model: &CycleWeightModel, n_max: usize) -> Result<WeightTable> {
    let log_w = (1..=n_max).map(|j| -model.alpha(j)).collect();
    WeightTable::from_log_weights(log_w)
}

/// `alpha_j` for a model (convenience for callers holding only the model).
pub fn cycle_weight(model: &CycleWeightModel, j: usize) -> f64 {
    model.alpha(j)
}

/// All integer partitions of `n`, each given as cycle counts `r` with
/// `r[j - 1]` parts equal to `j`.
pub fn integer_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, max_part: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(counts.clone());
            return;
        }
        for part in (1..=max_part.min(rest)).rev() {
            counts[part - 1] += 1;
            rec(rest - part, part, counts, out);
            counts[part - 1] -= 1;
        }
    }
    let mut out = Vec::new();
    let mut counts = vec![0; n];
    rec(n, n, &mut counts, &mut out);
    out
}

/// `ln(r!)`.
pub(crate) fn ln_factorial(r: usize) -> f64 {
    (2..=r).map(|i| (i as f64).ln()).sum()
}

/// `h_n` as an explicit sum over cycle types:
/// `sum_r prod_j (w_j / j)^{r_j} / r_j!`.
pub fn brute_force_h(model: &CycleWeightModel, n: usize) -> Result<f64> {
    if n > BRUTE_FORCE_MAX {
        return Err(Error::Budget(format!(
            "partition sum refused for n={n} (limit {BRUTE_FORCE_MAX})"
        )));
    }
    if n == 0 {
        return Ok(1.0);
    }
    let terms: Vec<f64> = integer_partitions(n)
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| {
                    let j = i + 1;
                    c as f64 * (-model.alpha(j) - (j as f64).ln()) - ln_factorial(c)
                })
                .sum()
        })
        .collect();
    Ok(numeric::log_sum_exp(&terms).exp())
}

/// Law of the cycle containing a fixed element among `n`.
pub fn first_cycle_length_distribution(n: usize, table: &WeightTable) -> Vec<f64> {
    table.first_cycle_law(n)
}

/// Exact draw of cycle lengths of a weighted permutation of `n` elements.
pub fn sample_cycle_lengths<R: Rng + ?Sized>(n: usize, table: &WeightTable, rng: &mut R) -> Vec<usize> {
    table.sample_cycle_lengths(n, rng)
}

/// Empirical surrogates for the polynomial-growth and ratio assumptions on `h_n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    /// `max_{2<=n<=N} |log h_n| / log n`.
    pub kappa_hat: f64,
    /// `max h_m / h_n` over `n/s < m < s n`, both in `1..=N`.
    pub ratio_bound: f64,
    /// Least-squares slope of `log h_n` against `log n` on `[N/10, N]`.
    pub tail_slope: f64,
}

pub fn verify_regularity(model: &CycleWeightModel, n: usize, s: f64) -> Result<RegularityReport> {
    if n < 2 || !(s > 1.0) {
        return Err(Error::Config(format!("regularity check needs N >= 2 and s > 1 (N={n}, s={s})")));
    }
    let table = compute_h(model, n)?;
    Ok(regularity_of(&table, s))
}

pub fn regularity_of(table: &WeightTable, s: f64) -> RegularityReport {
    let n = table.n_max();
    let lh = table.log_hs();
    let kappa_hat = (2..=n)
        .map(|m| lh[m].abs() / (m as f64).ln())
        .fold(0.0, f64::max);

    // sliding-window maximum of log h over the open window (n/s, s n)
    let sparse = SparseMax::new(&lh[1..]);
    let mut ratio = f64::NEG_INFINITY;
    for m in 1..=n {
        let lo = ((m as f64 / s).floor() as usize + 1).max(1);
        let hi_f = (m as f64 * s).ceil() as usize - 1;
        let hi = hi_f.min(n);
        if lo > hi {
            continue;
        }
        let best = sparse.query(lo - 1, hi - 1);
        ratio = ratio.max(best - lh[m]);
    }

    let lo = (n / 10).max(1);
    let pts: Vec<(f64, f64)> = (lo..=n).map(|m| ((m as f64).ln(), lh[m])).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let tail_slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };

    RegularityReport { kappa_hat, ratio_bound: ratio.exp(), tail_slope }
}

struct SparseMax {
    levels: Vec<Vec<f64>>,
}

impl SparseMax {
    fn new(v: &[f64]) -> Self {
        let mut levels = vec![v.to_vec()];
        let mut width = 1;
        while 2 * width <= v.len() {
            let prev = levels.last().unwrap();
            let next: Vec<f64> = (0..=v.len() - 2 * width)
                .map(|i| prev[i].max(prev[i + width]))
                .collect();
            levels.push(next);
            width *= 2;
        }
        Self { levels }
    }

    fn query(&self, lo: usize, hi: usize) -> f64 {
        let len = hi - lo + 1;
        let level = usize::BITS as usize - 1 - len.leading_zeros() as usize;
        let row = &self.levels[level];
        row[lo].max(row[hi + 1 - (1 << level)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct sum over every permutation of `n` elements through cycle counting.
    fn h_by_permutations(model: &CycleWeightModel, n: usize) -> f64 {
        fn perms(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }
        let all = perms(n);
        let mut total = 0.0;
        for p in &all {
            let mut seen = vec![false; n];
            let mut e = 0.0;
            for s in 0..n {
                if seen[s] {
                    continue;
                }
                let mut len = 0;
                let mut x = s;
                while !seen[x] {
                    seen[x] = true;
                    x = p[x];
                    len += 1;
                }
                e += model.alpha(len);
            }
            total += (-e).exp();
        }
        total / all.len() as f64
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(CycleWeightModel::constant(0.0).unwrap().alpha(7), 0.0);
        let lg = CycleWeightModel::logarithmic(1.0).unwrap();
        assert!((lg.alpha(4) - 4f64.ln()).abs() < 1e-15);
        let a = CycleWeightModel::asymptotic(1.0, vec![(1, 0.5)]).unwrap();
        assert_eq!(a.alpha(1), 0.5);
        assert_eq!(a.alpha(2), 1.0);
    }

    #[test]
    fn model_validation() {
        assert!(CycleWeightModel::logarithmic(0.0).is_err());
        assert!(CycleWeightModel::asymptotic(0.0, vec![(0, 1.0)]).is_err());
        assert!(CycleWeightModel::asymptotic(0.0, vec![(MAX_OVERRIDE + 1, 1.0)]).is_err());
        assert!(CycleWeightModel::asymptotic(0.0, vec![(2, 1.0), (2, 0.0)]).is_err());
        let m = CycleWeightModel::asymptotic(1.0, vec![(3, 0.0), (1, 2.0)]).unwrap();
        assert_eq!(m.last_override(), 3);
        assert!((m.deviation_sum() - 2.0).abs() < 1e-15);
        let m = CycleWeightModel::asymptotic(-1.0, vec![(2, 0.0)]).unwrap();
        assert!((m.deviation_sum() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn h_values() {
        let t = compute_h(&CycleWeightModel::constant(0.0).unwrap(), 30).unwrap();
        for n in 0..=30 {
            assert!((t.h(n) - 1.0).abs() < 1e-13);
        }
        let t = compute_h(&CycleWeightModel::constant(-(2f64.ln())).unwrap(), 3).unwrap();
        assert!((t.h(2) - 3.0).abs() < 1e-13);
        assert!((t.h(3) - 4.0).abs() < 1e-13);
        let t = compute_h(&CycleWeightModel::logarithmic(1.0).unwrap(), 2).unwrap();
        assert!((t.h(2) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn brute_force_examples() {
        let m = CycleWeightModel::constant(-(2f64.ln())).unwrap();
        assert_eq!(brute_force_h(&m, 0).unwrap(), 1.0);
        assert!((brute_force_h(&m, 3).unwrap() - 4.0).abs() < 1e-13);
        let z = CycleWeightModel::constant(0.0).unwrap();
        assert!((brute_force_h(&z, 5).unwrap() - 1.0).abs() < 1e-13);
        assert!(matches!(brute_force_h(&z, BRUTE_FORCE_MAX + 1), Err(Error::Budget(_))));
    }

    #[test]
    fn partition_sum_matches_permutation_enumeration() {
        let models = [
            CycleWeightModel::constant(0.7).unwrap(),
            CycleWeightModel::asymptotic(-0.4, vec![(1, 1.0), (3, -0.2)]).unwrap(),
            CycleWeightModel::logarithmic(1.3).unwrap(),
        ];
        for m in &models {
            for n in 1..=6 {
                let a = brute_force_h(m, n).unwrap();
                let b = h_by_permutations(m, n);
                assert!((a - b).abs() <= 1e-12 * b, "{m:?} n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn recursion_identity_holds() {
        let m = CycleWeightModel::asymptotic(-1.5, vec![(2, 3.0), (5, -2.0)]).unwrap();
        let t = compute_h(&m, 500).unwrap();
        assert!(t.max_recursion_residual() < 1e-12);
    }

    #[test]
    fn first_cycle_examples() {
        let t = compute_h(&CycleWeightModel::constant(0.0).unwrap(), 4).unwrap();
        for p in t.first_cycle_law(4) {
            assert!((p - 0.25).abs() < 1e-14);
        }
        let t = compute_h(&CycleWeightModel::constant(-(2f64.ln())).unwrap(), 2).unwrap();
        let p = t.first_cycle_law(2);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-14 && (p[1] - 1.0 / 3.0).abs() < 1e-14);
        let t = compute_h(&CycleWeightModel::logarithmic(1.0).unwrap(), 2).unwrap();
        let p = t.first_cycle_law(2);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-14 && (p[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn first_cycle_law_sums_to_one() {
        let m = CycleWeightModel::logarithmic(2.0).unwrap();
        let t = compute_h(&m, 2000).unwrap();
        for n in [1, 7, 100, 2000] {
            let s: f64 = t.first_cycle_law(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampler_single_element() {
        let t = compute_h(&CycleWeightModel::constant(0.3).unwrap(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(t.sample_cycle_lengths(1, &mut rng), vec![1]);
        assert!(t.sample_cycle_lengths(0, &mut rng).is_empty());
    }

    #[test]
    fn sampler_uniform_three_cycle_frequency() {
        let t = compute_h(&CycleWeightModel::constant(0.0).unwrap(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut three = 0usize;
        let mut two_ones = 0usize;
        for _ in 0..draws {
            let c = t.sample_cycle_lengths(3, &mut rng);
            assert_eq!(c.iter().sum::<usize>(), 3);
            if c == [3] {
                three += 1;
            }
            if c.len() == 3 {
                two_ones += 1;
            }
        }
        let counts = [three as f64, two_ones as f64, (draws - three - two_ones) as f64];
        let expected = [1.0 / 3.0, 1.0 / 6.0, 0.5];
        let chi2: f64 = counts
            .iter()
            .zip(expected)
            .map(|(c, p)| (c - p * draws as f64).powi(2) / (p * draws as f64))
            .sum();
        assert!(numeric::chi_square_survival(chi2, 2.0) > 0.01, "chi2={chi2}");
    }

    #[test]
    fn sampler_theta_two() {
        let t = compute_h(&CycleWeightModel::constant(-(2f64.ln())).unwrap(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let ones = (0..draws).filter(|_| t.sample_cycle_lengths(2, &mut rng).len() == 2).count();
        let p = ones as f64 / draws as f64;
        let se = (2.0 / 9.0 / draws as f64).sqrt();
        assert!((p - 2.0 / 3.0).abs() < 4.0 * se, "p={p}");
    }

    #[test]
    fn generating_function_identity() {
        let m = CycleWeightModel::constant(0.4).unwrap();
        let n = 200;
        let t = compute_h(&m, n).unwrap();
        for g in [0.5, 1.0, 2.0] {
            let lhs: f64 = (0..=n).map(|k| (-g * k as f64 + t.log_h(k)).exp()).sum();
            let rhs: f64 = (1..=n).map(|j| (-g * j as f64 - m.alpha(j)).exp() / j as f64).sum::<f64>().exp();
            assert!((lhs - rhs).abs() < 1e-8 * rhs);
        }
    }

    #[test]
    fn regularity_uniform() {
        let r = verify_regularity(&CycleWeightModel::constant(0.0).unwrap(), 200, 2.0).unwrap();
        assert!(r.kappa_hat.abs() < 1e-12);
        assert!((r.ratio_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_slopes() {
        let r = verify_regularity(&CycleWeightModel::constant(-(2f64.ln())).unwrap(), 10_000, 2.0).unwrap();
        assert!(r.ratio_bound.is_finite());
        assert!((r.tail_slope - 1.0).abs() < 0.1, "slope {}", r.tail_slope);
        let r = verify_regularity(&CycleWeightModel::logarithmic(1.0).unwrap(), 10_000, 2.0).unwrap();
        assert!((r.tail_slope + 2.0).abs() < 0.2, "slope {}", r.tail_slope);
    }

    #[test]
    fn geometric_sum_closed_forms() {
        let m = CycleWeightModel::asymptotic(0.5, vec![(1, 0.0), (4, 2.0)]).unwrap();
        for eps in [0.01, 0.3, 2.0] {
            let direct: f64 = (1..20_000).map(|j| m.weight(j) * (-(j as f64) * eps).exp()).sum();
            let g = m.geometric_sum(eps).unwrap();
            assert!((g.value - direct).abs() < 1e-12 * direct);
        }
        let m = CycleWeightModel::logarithmic(0.7).unwrap();
        for eps in [1e-5, 1e-3, 0.5] {
            let direct: f64 = (1..20_000_000u64).map(|j| (j as f64).powf(-0.7) * (-(j as f64) * eps).exp()).sum();
            let g = m.geometric_sum(eps).unwrap();
            assert!((g.value - direct).abs() < 1e-9 * direct, "eps={eps}: {} vs {direct}", g.value);
        }
    }

    #[test]
    fn table_text_export() {
        let t = compute_h(&CycleWeightModel::constant(0.0).unwrap(), 2).unwrap();
        let text = t.to_text();
        let first: Vec<&str> = text.lines().collect();
        assert_eq!(first[0], "0 0");
        assert_eq!(first.len(), 3);
    }

    #[test]
    fn tabulated_sampler_matches_sequential() {
        use rand::SeedableRng;
        let model = CycleWeightModel::constant(-(2f64.ln())).unwrap();
        let table = compute_h(&model, 40).unwrap();
        let fast = CycleLengthSampler::new(&table);
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut same = 0;
        for _ in 0..2000 {
            let x = fast.sample(40, &mut a);
            let y = table.sample_cycle_lengths(40, &mut b);
            assert_eq!(x.iter().sum::<usize>(), 40);
            if x == y {
                same += 1;
            }
        }
        // identical streams up to rounding at cdf boundaries
        assert!(same >= 1990, "{same}");
    }
}
