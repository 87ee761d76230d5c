//! Fourier-mode representation of the torus model.
//!
//! After periodization the Gibbs measure factorizes over the dual lattice:
//! each mode `k` carries `n_k` particles with weight
//! `y_k(n) = exp(-eps(k) n) h_n`, and given the occupations the particles of
//! each mode form an independent weighted random permutation. This module
//! builds the partition functions of that product measure, samples it
//! exactly (mode-by-mode backward sampling, or cycle-first sampling for
//! large `N`) or by a transfer-move chain, and checks the concentration of
//! the zero mode.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::kernel::{lattice_shell_counts, BoxGeometry, JumpKernel};
use crate::numeric::{expm1_minus_x, log_sum_exp};
use crate::weights::{integer_partitions, ln_factorial, CycleLengthSampler, CycleWeightModel, WeightTable};

/// Modes with `eps(k)` above this are dropped by default.
pub const DEFAULT_EPS_CUT: f64 = 40.0;
/// Default cap on `K * N^2` log-domain operations for the table build.
pub const DEFAULT_OP_BUDGET: f64 = 1e9;
/// Default cap on the table memory.
pub const DEFAULT_MEMORY_CAP: usize = 2 << 30;
/// Larger mode sets keep only their shell structure.
pub const EXPLICIT_MODE_LIMIT: usize = 4_000_000;
/// Largest `N` accepted by [`cycle_count_marginal_exact`].
pub const MARGINAL_MAX: usize = 6;

/// Modes with a common `|k|` (and therefore a common `eps`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Shell {
    pub norm2: u64,
    pub count: u64,
    pub eps: f64,
}

/// Dual lattice `Z^d / L` truncated at `|k| <= k_max`, or an abstract list
/// of mode energies for small test systems.
#[derive(Debug, Clone)]
pub struct ModeSet {
    dim: usize,
    volume: f64,
    eps_cut: f64,
    // flat integer coordinates, `dim` per mode, lexicographic
    coords: Option<Vec<i32>>,
    eps: Vec<f64>,
    shell_of: Vec<u32>,
    zero: usize,
    shells: Vec<Shell>,
    shell_modes: Vec<Vec<u32>>,
}

impl ModeSet {
    /// All modes of the box, lexicographic in their integer coordinates.
    pub fn new(kernel: &JumpKernel, geom: &BoxGeometry) -> Result<Self> {
        if kernel.dim() != geom.dim() {
            return Err(Error::Config("dimension mismatch between kernel and box".into()));
        }
        let dim = geom.dim();
        let l = geom.side();
        let max2 = geom.max_norm2();
        let counts = lattice_shell_counts(dim, max2);
        let mut shell_index = vec![u32::MAX; counts.len()];
        let mut shells = Vec::new();
        for (m, &c) in counts.iter().enumerate() {
            if c > 0 {
                shell_index[m] = shells.len() as u32;
                let eps = kernel.dispersion_norm((m as f64).sqrt() / l)?;
                shells.push(Shell { norm2: m as u64, count: c, eps });
            }
        }
        let total: u64 = shells.iter().map(|s| s.count).sum();
        let eps_cut = kernel.dispersion_norm(geom.k_max())?;
        let mut set = Self {
            dim,
            volume: geom.volume(),
            eps_cut,
            coords: None,
            eps: Vec::new(),
            shell_of: Vec::new(),
            zero: 0,
            shells,
            shell_modes: Vec::new(),
        };
        if total as usize > EXPLICIT_MODE_LIMIT {
            return Ok(set);
        }
        let r = (max2 as f64).sqrt().floor() as i64;
        let mut coords = Vec::with_capacity(total as usize * dim);
        let mut v = vec![-r; dim];
        let mut shell_modes = vec![Vec::new(); set.shells.len()];
        loop {
            let n2: i64 = v.iter().map(|x| x * x).sum();
            if n2 as u64 <= max2 {
                let idx = set.eps.len();
                if n2 == 0 {
                    set.zero = idx;
                }
                let s = shell_index[n2 as usize];
                set.eps.push(set.shells[s as usize].eps);
                set.shell_of.push(s);
                shell_modes[s as usize].push(idx as u32);
                coords.extend(v.iter().map(|&x| x as i32));
            }
            // odometer with the last coordinate fastest
            let mut p = dim;
            loop {
                if p == 0 {
                    set.coords = Some(coords);
                    set.shell_modes = shell_modes;
                    return Ok(set);
                }
                p -= 1;
                if v[p] < r {
                    v[p] += 1;
                    for q in v.iter_mut().skip(p + 1) {
                        *q = -r;
                    }
                    break;
                }
            }
        }
    }

    /// Modes with `eps(k) <= eps_cut` in a box of side `side`.
    pub fn with_cutoff(kernel: &JumpKernel, side: f64, eps_cut: f64) -> Result<Self> {
        let geom = BoxGeometry::with_energy_cutoff(kernel, side, eps_cut)?;
        let mut set = Self::new(kernel, &geom)?;
        set.eps_cut = eps_cut;
        Ok(set)
    }

    /// Abstract system: the zero mode plus one mode per entry of `eps`, each
    /// forming its own shell. Used for small exactly solvable checks.
    pub fn from_energies(volume: f64, eps: &[f64]) -> Result<Self> {
        if eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::Domain("nonzero modes need finite eps > 0".into()));
        }
        let mut all = vec![0.0];
        all.extend_from_slice(eps);
        let shells = all
            .iter()
            .enumerate()
            .map(|(i, &e)| Shell { norm2: i as u64, count: 1, eps: e })
            .collect();
        Ok(Self {
            dim: 0,
            volume,
            eps_cut: eps.iter().copied().fold(0.0, f64::max),
            coords: None,
            shell_of: (0..all.len() as u32).collect(),
            shell_modes: (0..all.len() as u32).map(|i| vec![i]).collect(),
            eps: all,
            zero: 0,
            shells,
        })
    }

    pub fn is_explicit(&self) -> bool {
        !self.eps.is_empty()
    }

    fn require_explicit(&self) -> Result<()> {
        if self.is_explicit() {
            Ok(())
        } else {
            Err(Error::Budget(format!(
                "mode set has {} modes, above the explicit limit {EXPLICIT_MODE_LIMIT}; only shell sums are available",
                self.mode_count()
            )))
        }
    }

    pub fn mode_count(&self) -> usize {
        self.shells.iter().map(|s| s.count as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn zero_index(&self) -> usize {
        self.zero
    }

    pub fn eps(&self, mode: usize) -> f64 {
        self.eps[mode]
    }

    pub fn energies(&self) -> &[f64] {
        &self.eps
    }

    pub fn shells(&self) -> &[Shell] {
        &self.shells
    }

    pub fn shell_of(&self, mode: usize) -> usize {
        self.shell_of[mode] as usize
    }

    /// Integer coordinates `n` of the mode `k = n / L`; empty for abstract sets.
    pub fn coords(&self, mode: usize) -> &[i32] {
        match &self.coords {
            Some(c) => &c[mode * self.dim..(mode + 1) * self.dim],
            None => &[],
        }
    }

    /// Bound `K exp(-eps_cut)` on the occupancy weight of the dropped modes.
    pub fn cutoff_bound(&self) -> f64 {
        self.mode_count() as f64 * (-self.eps_cut).exp()
    }

    /// First mode (in enumeration order) of each of the `count` lowest nonzero shells.
    pub fn lowest_shell_representatives(&self, count: usize) -> Vec<usize> {
        self.shell_modes
            .iter()
            .skip(1)
            .filter_map(|m| m.first().map(|&i| i as usize))
            .take(count)
            .collect()
    }

    /// `S_j = sum_k exp(-j eps(k))` over all modes of the set.
    pub fn mode_sum(&self, j: usize) -> f64 {
        self.shells.iter().map(|s| s.count as f64 * (-(j as f64) * s.eps).exp()).sum()
    }

    /// `log S_j` for `j = 1..=n`.
    pub fn log_mode_sums(&self, n: usize) -> Vec<f64> {
        let logs: Vec<f64> = self.shells.iter().map(|s| (s.count as f64).ln()).collect();
        (1..=n)
            .map(|j| {
                let terms: Vec<f64> = self.shells.iter().zip(&logs).map(|(s, lc)| lc - j as f64 * s.eps).collect();
                log_sum_exp(&terms)
            })
            .collect()
    }

    /// `|box|^{-1} sum_{k != 0} G(eps(k))` over this mode set.
    pub fn critical_density(&self, weights: &CycleWeightModel) -> Result<f64> {
        let mut s = 0.0;
        for sh in self.shells.iter().filter(|s| s.eps > 0.0) {
            s += sh.count as f64 * weights.geometric_sum(sh.eps)?.value;
        }
        Ok(s / self.volume)
    }
}

/// Occupation numbers `n_k` with total `N`; zero entries are not stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupationState {
    counts: BTreeMap<usize, usize>,
    total: usize,
    equilibrated: bool,
}

impl OccupationState {
    /// All `n` particles on one mode.
    pub fn condensed(mode: usize, n: usize) -> Self {
        let mut counts = BTreeMap::new();
        if n > 0 {
            counts.insert(mode, n);
        }
        Self { counts, total: n, equilibrated: true }
    }

    pub fn from_dense(n: &[usize]) -> Self {
        let counts: BTreeMap<usize, usize> = n.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (i, c)).collect();
        let total = n.iter().sum();
        Self { counts, total, equilibrated: true }
    }

    pub fn get(&self, mode: usize) -> usize {
        self.counts.get(&mode).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// False for the untouched initial state of a zero-step chain.
    pub fn is_equilibrated(&self) -> bool {
        self.equilibrated
    }

    /// Occupied modes in increasing mode index.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.counts.iter().map(|(&k, &n)| (k, n))
    }

    pub fn to_dense(&self, modes: usize) -> Vec<usize> {
        let mut v = vec![0; modes];
        for (k, n) in self.iter() {
            v[k] = n;
        }
        v
    }

    fn add(&mut self, mode: usize, n: usize) {
        if n > 0 {
            *self.counts.entry(mode).or_insert(0) += n;
            self.total += n;
        }
    }

    /// One line-delimited record per occupied mode.
    pub fn mode_records(&self, modes: &ModeSet) -> Vec<serde_json::Value> {
        self.iter()
            .map(|(k, n)| json!({"mode": modes.coords(k), "index": k, "n": n}))
            .collect()
    }
}

/// Limits on the table build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildLimits {
    pub op_budget: f64,
    pub memory_cap: usize,
}

impl Default for BuildLimits {
    fn default() -> Self {
        Self { op_budget: DEFAULT_OP_BUDGET, memory_cap: DEFAULT_MEMORY_CAP }
    }
}

/// Log-domain partition functions of the occupation measure.
///
/// The convolution runs over the nonzero modes in enumeration order and
/// ends with the zero mode, so the second-to-last prefix is the
/// zero-mode-excluded partition function `Y̌` and the last one is `Y`.
#[derive(Debug, Clone)]
pub struct ModePartitionTables {
    n: usize,
    order: Vec<usize>,
    eps: Vec<f64>,
    log_h: Vec<f64>,
    prefix: Vec<Vec<f64>>,
}

/// `K (N + 1)^2 / 2`, the number of log-domain terms of a table build.
pub fn table_cost(modes: usize, n: usize) -> f64 {
    modes as f64 * (n as f64 + 1.0).powi(2) / 2.0
}

/// Tables for `Y(0..=N)` with default limits.
pub fn build_tables(modes: &ModeSet, table: &WeightTable, n: usize) -> Result<ModePartitionTables> {
    build_tables_with(modes, table, n, BuildLimits::default())
}

pub fn build_tables_with(
    modes: &ModeSet,
    table: &WeightTable,
    n: usize,
    limits: BuildLimits,
) -> Result<ModePartitionTables> {
    modes.require_explicit()?;
    if table.n_max() < n {
        return Err(Error::Config(format!("weight table covers n <= {}, need {n}", table.n_max())));
    }
    let k = modes.len();
    let ops = table_cost(k, n);
    if ops > limits.op_budget {
        return Err(Error::Budget(format!(
            "exact tables need ~{ops:.3e} operations for K={k} modes and N={n}, budget {:.3e}; use the cycle-first or MCMC sampler",
            limits.op_budget
        )));
    }
    let bytes = (k + 1) * (n + 1) * std::mem::size_of::<f64>();
    if bytes > limits.memory_cap {
        return Err(Error::Budget(format!(
            "exact tables need ~{bytes} bytes, cap {} bytes",
            limits.memory_cap
        )));
    }
    let mut order: Vec<usize> = (0..k).filter(|&i| i != modes.zero_index()).collect();
    order.push(modes.zero_index());
    let log_h: Vec<f64> = table.log_hs()[..=n].to_vec();
    let mut prefix = Vec::with_capacity(k + 1);
    let mut first = vec![f64::NEG_INFINITY; n + 1];
    first[0] = 0.0;
    prefix.push(first);
    let mut buf = Vec::with_capacity(n + 1);
    for &mode in &order {
        let e = modes.eps(mode);
        let row: Vec<f64> = (0..=n).map(|a| log_h[a] - e * a as f64).collect();
        let prev = prefix.last().expect("nonempty");
        let next: Vec<f64> = (0..=n)
            .map(|m| {
                buf.clear();
                buf.extend((0..=m).map(|a| row[a] + prev[m - a]));
                log_sum_exp(&buf)
            })
            .collect();
        prefix.push(next);
    }
    let eps = modes.energies().to_vec();
    Ok(ModePartitionTables { n, order, eps, log_h, prefix })
}

impl ModePartitionTables {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mode_count(&self) -> usize {
        self.order.len()
    }

    fn log_row(&self, mode: usize, a: usize) -> f64 {
        self.log_h[a] - self.eps[mode] * a as f64
    }

    /// `log Y(m)` for `m <= N`.
    pub fn log_y(&self, m: usize) -> f64 {
        self.prefix[self.order.len()][m]
    }

    /// `log Y̌(m)` for `m <= N`.
    pub fn log_y_check(&self, m: usize) -> f64 {
        self.prefix[self.order.len() - 1][m]
    }

    /// `log Z_m(n)` over the first `m` modes of the convolution order.
    pub fn log_prefix(&self, m: usize, n: usize) -> f64 {
        self.prefix[m][n]
    }

    /// Exact probability of an occupation vector under the product measure.
    pub fn log_probability(&self, state: &OccupationState) -> f64 {
        if state.total() != self.n {
            return f64::NEG_INFINITY;
        }
        let mut s = -self.log_y(self.n);
        for (k, a) in state.iter() {
            s += self.log_row(k, a);
        }
        for &k in &self.order {
            if state.get(k) == 0 {
                s += self.log_row(k, 0);
            }
        }
        s
    }

    /// Largest relative violation of `Y(m) = sum_j h_j Y̌(m - j)`, `m <= N`.
    pub fn identity_residual(&self) -> f64 {
        (0..=self.n)
            .map(|m| {
                let terms: Vec<f64> = (0..=m).map(|j| self.log_h[j] + self.log_y_check(m - j)).collect();
                (log_sum_exp(&terms) - self.log_y(m)).exp_m1().abs()
            })
            .fold(0.0, f64::max)
    }

    /// `E[n_0] / N` under the exact measure.
    pub fn mean_zero_fraction(&self) -> f64 {
        let zero = *self.order.last().expect("nonempty");
        let ly = self.log_y(self.n);
        let mut mean = 0.0;
        for a in 0..=self.n {
            let p = (self.log_row(zero, a) + self.log_y_check(self.n - a) - ly).exp();
            mean += a as f64 * p;
        }
        mean / self.n as f64
    }

    /// Exact law of `n_0`.
    pub fn zero_mode_law(&self) -> Vec<f64> {
        let zero = *self.order.last().expect("nonempty");
        let ly = self.log_y(self.n);
        (0..=self.n)
            .map(|a| (self.log_row(zero, a) + self.log_y_check(self.n - a) - ly).exp())
            .collect()
    }
}

/// Exact draw from the occupation measure by backward sampling through the
/// prefix convolutions.
pub fn sample_occupations_exact<R: Rng + ?Sized>(tables: &ModePartitionTables, rng: &mut R) -> OccupationState {
    let mut state = OccupationState::condensed(0, 0);
    let mut rest = tables.n;
    for m in (1..=tables.order.len()).rev() {
        if rest == 0 {
            break;
        }
        let mode = tables.order[m - 1];
        let pick = if m == 1 {
            rest
        } else {
            let norm = tables.prefix[m][rest];
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = rest;
            for a in 0..=rest {
                acc += (tables.log_row(mode, a) + tables.prefix[m - 1][rest - a] - norm).exp();
                if u < acc {
                    pick = a;
                    break;
                }
            }
            pick
        };
        state.add(mode, pick);
        rest -= pick;
    }
    state
}

/// Brute-force law of the occupation vectors (dense, in mode-index order).
pub fn occupation_law_exact(modes: &ModeSet, table: &WeightTable, n: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    modes.require_explicit()?;
    let k = modes.len();
    if k > 4 || n > 8 {
        return Err(Error::Budget(format!("enumeration refused for K={k}, N={n}")));
    }
    let mut out = Vec::new();
    let mut current = vec![0; k];
    fn rec(i: usize, rest: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == current.len() {
            current[i] = rest;
            out.push(current.clone());
            return;
        }
        for a in 0..=rest {
            current[i] = a;
            rec(i + 1, rest - a, current, out);
        }
    }
    let mut configs = Vec::new();
    rec(0, n, &mut current, &mut configs);
    let logs: Vec<f64> = configs
        .iter()
        .map(|c| c.iter().enumerate().map(|(i, &a)| table.log_h(a) - modes.eps(i) * a as f64).sum())
        .collect();
    let norm = log_sum_exp(&logs);
    for (c, l) in configs.into_iter().zip(logs) {
        out.push((c, (l - norm).exp()));
    }
    Ok(out)
}

/// A draw of the full Fourier representation: occupations and the cycle
/// lengths of every mode's permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierDraw {
    pub occupations: OccupationState,
    /// `(mode, cycle length)` pairs.
    pub cycles: Vec<(usize, usize)>,
}

impl FourierDraw {
    /// Cycle lengths in non-increasing order.
    pub fn lengths(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.cycles.iter().map(|&(_, l)| l).collect();
        l.sort_unstable_by(|a, b| b.cmp(a));
        l
    }
}

/// Exact sampler that draws the cycle lengths first, from the nonspatial
/// law with weights `w_j S_j`, and then places each `j`-cycle on mode `k`
/// with probability `exp(-j eps(k)) / S_j`. The induced occupations follow
/// the product measure. Build cost is `O(N^2 + N * shells)`, so it reaches
/// sizes where the mode-by-mode tables are over budget.
#[derive(Debug, Clone)]
pub struct CycleFirstSampler {
    n: usize,
    lengths: CycleLengthSampler,
    // per j: cumulative shell weights, truncated once the rest is negligible
    shell_cdf: Vec<Vec<f64>>,
    shell_modes: Vec<Vec<u32>>,
    table: WeightTable,
}

impl CycleFirstSampler {
    pub fn new(modes: &ModeSet, weights: &CycleWeightModel, n: usize) -> Result<Self> {
        modes.require_explicit()?;
        let log_s = modes.log_mode_sums(n);
        let log_w: Vec<f64> = (1..=n).map(|j| -weights.alpha(j) + log_s[j - 1]).collect();
        let table = WeightTable::from_log_weights(log_w)?;
        let lengths = CycleLengthSampler::new(&table);
        let shell_cdf = (1..=n)
            .map(|j| {
                let mut acc = 0.0;
                let mut row = Vec::new();
                for s in modes.shells() {
                    let p = (s.count as f64).ln() - j as f64 * s.eps - log_s[j - 1];
                    acc += p.exp();
                    row.push(acc);
                    if 1.0 - acc < 1e-17 {
                        break;
                    }
                }
                row
            })
            .collect();
        Ok(Self { n, lengths, shell_cdf, shell_modes: modes.shell_modes.clone(), table })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Table of the cycle-count marginal (weights `w_j S_j`).
    pub fn marginal_table(&self) -> &WeightTable {
        &self.table
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FourierDraw {
        let lengths = self.lengths.sample(self.n, rng);
        let mut occupations = OccupationState::condensed(0, 0);
        let mut cycles = Vec::with_capacity(lengths.len());
        for j in lengths {
            let row = &self.shell_cdf[j - 1];
            let u: f64 = rng.gen::<f64>() * row[row.len() - 1];
            let s = row.partition_point(|&c| c <= u).min(row.len() - 1);
            let members = &self.shell_modes[s];
            let mode = members[rng.gen_range(0..members.len())] as usize;
            occupations.add(mode, j);
            cycles.push((mode, j));
        }
        FourierDraw { occupations, cycles }
    }
}

/// Transfer-move chain on occupation vectors: pick modes `k`, `k'`
/// uniformly, move one particle from `k` to `k'`, accept with the ratio of
/// product weights.
#[derive(Debug, Clone)]
pub struct OccupationChain<'a> {
    eps: &'a [f64],
    table: &'a WeightTable,
    n: Vec<usize>,
    steps: u64,
    accepted: u64,
}

impl<'a> OccupationChain<'a> {
    /// Chain started with every particle on the zero mode.
    pub fn new(modes: &'a ModeSet, table: &'a WeightTable, n: usize) -> Result<Self> {
        modes.require_explicit()?;
        if n == 0 {
            return Err(Error::Domain("occupation chain needs N >= 1".into()));
        }
        if table.n_max() < n {
            return Err(Error::Config(format!("weight table covers n <= {}, need {n}", table.n_max())));
        }
        let mut occ = vec![0; modes.len()];
        occ[modes.zero_index()] = n;
        Ok(Self { eps: modes.energies(), table, n: occ, steps: 0, accepted: 0 })
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = rng.gen_range(0..self.n.len());
        let k2 = rng.gen_range(0..self.n.len());
        self.steps += 1;
        if self.n[k] == 0 {
            return;
        }
        if k == k2 {
            self.accepted += 1;
            return;
        }
        let a = self.n[k];
        let b = self.n[k2];
        let t = self.table;
        let log_ratio = -self.eps[k2] + self.eps[k] + t.log_h(b + 1) + t.log_h(a - 1) - t.log_h(b) - t.log_h(a);
        if log_ratio >= 0.0 || rng.gen::<f64>() < log_ratio.exp() {
            self.n[k] -= 1;
            self.n[k2] += 1;
            self.accepted += 1;
        }
    }

    pub fn run<R: Rng + ?Sized>(&mut self, steps: u64, rng: &mut R) {
        for _ in 0..steps {
            self.step(rng);
        }
    }

    pub fn occupations(&self) -> &[usize] {
        &self.n
    }

    pub fn state(&self) -> OccupationState {
        let mut s = OccupationState::from_dense(&self.n);
        s.equilibrated = self.steps > 0;
        s
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 { 0.0 } else { self.accepted as f64 / self.steps as f64 }
    }
}

/// State of a transfer-move chain after `steps` moves from the condensed start.
pub fn sample_occupations_mcmc<R: Rng + ?Sized>(
    modes: &ModeSet,
    table: &WeightTable,
    n: usize,
    steps: u64,
    rng: &mut R,
) -> Result<OccupationState> {
    let mut chain = OccupationChain::new(modes, table, n)?;
    chain.run(steps, rng);
    Ok(chain.state())
}

/// Independent nonspatial permutations per occupied mode; returns the
/// `(mode, length)` pairs.
pub fn sample_cycles_given_occupations<R: Rng + ?Sized>(
    state: &OccupationState,
    table: &WeightTable,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (k, n) in state.iter() {
        for l in table.sample_cycle_lengths(n, rng) {
            out.push((k, l));
        }
    }
    out
}

/// Aggregated cycle counts `r_j = sum_k r_j(pi_k)`, `r[j - 1]`.
pub fn sample_permutation_given_occupations<R: Rng + ?Sized>(
    state: &OccupationState,
    table: &WeightTable,
    rng: &mut R,
) -> Vec<usize> {
    let mut r = vec![0; state.total()];
    for (_, l) in sample_cycles_given_occupations(state, table, rng) {
        r[l - 1] += 1;
    }
    r
}

/// Exact law of the cycle counts `r` (as `r[j - 1]`) for tiny `N`:
/// `P(r) ∝ prod_j (w_j S_j / j)^{r_j} / r_j!`.
pub fn cycle_count_marginal_exact(modes: &ModeSet, weights: &CycleWeightModel, n: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    if n == 0 || n > MARGINAL_MAX {
        return Err(Error::Budget(format!("cycle-count enumeration needs 1 <= N <= {MARGINAL_MAX}, got {n}")));
    }
    let s: Vec<f64> = (1..=n).map(|j| modes.mode_sum(j)).collect();
    let parts = integer_partitions(n);
    let logs: Vec<f64> = parts
        .iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(i, &c)| {
                    let j = i + 1;
                    c as f64 * (-weights.alpha(j) + s[i].ln() - (j as f64).ln()) - ln_factorial(c)
                })
                .sum()
        })
        .collect();
    let norm = log_sum_exp(&logs);
    Ok(parts.into_iter().zip(logs).map(|(r, l)| (r, (l - norm).exp())).collect())
}

/// Parameters of the zero-mode events.
///
/// `A`: `|n_0 / N - nu| < eps`; `B`: the mass on `0 < |k| < delta` is below
/// `eps N`; `C`: the mass on modes with `|k| >= delta` and `n_k > m_large`
/// is below `eps N`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroModeParams {
    pub nu: f64,
    pub eps: f64,
    pub delta: f64,
    pub m_large: usize,
    pub tail_modes: Vec<usize>,
}

/// Tail envelope check for one mode: `log P(n_k >= j)` against the line
/// `-(1 - sigma) eps(k) j`, `sigma = 1/2`, with a three-sigma binomial slack.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheck {
    pub mode: usize,
    pub eps: f64,
    pub observed_max: usize,
    /// Largest excess of the empirical log-tail over the envelope (negative is good).
    pub worst_excess: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroModeReport {
    pub samples: usize,
    pub mean_zero_fraction: f64,
    pub sd_zero_fraction: f64,
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
    pub tails: Vec<TailCheck>,
}

/// Streaming accumulator behind [`zero_mode_statistics`].
#[derive(Debug, Clone)]
pub struct ZeroModeAccumulator<'a> {
    modes: &'a ModeSet,
    params: ZeroModeParams,
    samples: usize,
    sum: f64,
    sum2: f64,
    hits: [usize; 3],
    tail_hist: Vec<Vec<u64>>,
}

impl<'a> ZeroModeAccumulator<'a> {
    pub fn new(modes: &'a ModeSet, params: ZeroModeParams) -> Self {
        let tail_hist = vec![Vec::new(); params.tail_modes.len()];
        Self { modes, params, samples: 0, sum: 0.0, sum2: 0.0, hits: [0; 3], tail_hist }
    }

    fn knorm(&self, mode: usize) -> f64 {
        let l = self.modes.volume().powf(1.0 / self.modes.dim().max(1) as f64);
        (self.modes.shells()[self.modes.shell_of(mode)].norm2 as f64).sqrt() / l
    }

    pub fn push(&mut self, state: &OccupationState) {
        let n = state.total() as f64;
        let zero = self.modes.zero_index();
        let f = state.get(zero) as f64 / n;
        self.samples += 1;
        self.sum += f;
        self.sum2 += f * f;
        let p = &self.params;
        if (f - p.nu).abs() < p.eps {
            self.hits[0] += 1;
        }
        let mut small = 0usize;
        let mut large = 0usize;
        for (k, c) in state.iter() {
            if k == zero {
                continue;
            }
            if self.knorm(k) < p.delta {
                small += c;
            } else if c > p.m_large {
                large += c;
            }
        }
        if (small as f64) < p.eps * n {
            self.hits[1] += 1;
        }
        if (large as f64) < p.eps * n {
            self.hits[2] += 1;
        }
        for (i, &mode) in self.params.tail_modes.iter().enumerate() {
            let c = state.get(mode);
            let h = &mut self.tail_hist[i];
            if h.len() <= c {
                h.resize(c + 1, 0);
            }
            h[c] += 1;
        }
    }

    pub fn finish(self) -> Result<ZeroModeReport> {
        if self.samples == 0 {
            return Err(Error::Domain("zero-mode statistics need at least one sample".into()));
        }
        let m = self.samples as f64;
        let mean = self.sum / m;
        let var = (self.sum2 / m - mean * mean).max(0.0) * m / (m - 1.0).max(1.0);
        let sigma = 0.5;
        let tails = self
            .params
            .tail_modes
            .iter()
            .zip(&self.tail_hist)
            .map(|(&mode, hist)| {
                let eps = self.modes.eps(mode);
                let mut at_least = self.samples as u64;
                let mut worst = f64::NEG_INFINITY;
                let mut observed_max = 0;
                for (j, &count) in hist.iter().enumerate() {
                    if j > 0 {
                        if at_least < 10 {
                            break;
                        }
                        let p = at_least as f64 / m;
                        let slack = 3.0 * ((1.0 - p) / (p * m)).sqrt();
                        let excess = p.ln() + (1.0 - sigma) * eps * j as f64 - slack;
                        worst = worst.max(excess);
                        observed_max = j;
                    }
                    at_least -= count;
                }
                TailCheck { mode, eps, observed_max, worst_excess: worst, holds: worst <= 0.0 }
            })
            .collect();
        Ok(ZeroModeReport {
            samples: self.samples,
            mean_zero_fraction: mean,
            sd_zero_fraction: var.sqrt(),
            p_a: self.hits[0] as f64 / m,
            p_b: self.hits[1] as f64 / m,
            p_c: self.hits[2] as f64 / m,
            tails,
        })
    }
}

/// Event frequencies and tail envelopes over a collection of samples.
pub fn zero_mode_statistics(modes: &ModeSet, samples: &[OccupationState], params: ZeroModeParams) -> Result<ZeroModeReport> {
    let mut acc = ZeroModeAccumulator::new(modes, params);
    for s in samples {
        acc.push(s);
    }
    acc.finish()
}

/// `sum_j (w_j / j) q^j f(j)` truncated once the geometric envelope
/// `w_sup r^j / (1 - r)` is negligible.
fn cycle_series(weights: &CycleWeightModel, eps: f64, growth: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let rate = eps - growth;
    if !(rate > 0.0) {
        return Err(Error::Domain(format!("series diverges: eps={eps} <= {growth}")));
    }
    let wsup = weights.sup_weight();
    let r = (-rate).exp();
    let mut s = 0.0;
    let mut j = 1usize;
    loop {
        let jf = j as f64;
        s += weights.weight(j) / jf * (-jf * eps).exp() * f(jf);
        let envelope = wsup * r.powf(jf) / -(-rate).exp_m1();
        if envelope < 1e-17 * s.abs() || envelope < 1e-300 || j > 50_000_000 {
            break;
        }
        j += 1;
    }
    Ok(s)
}

/// `E[exp(lambda (X - rho_c(box)))]` for `X = N / |box|` under `mu_box`,
/// from the closed form
/// `exp(sum_j (w_j / j) sum_{k != 0} exp(-j eps)(exp(j lambda / V) - 1 - j lambda / V))`.
pub fn mu_lambda_laplace(modes: &ModeSet, weights: &CycleWeightModel, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(Error::Domain("lambda must be finite".into()));
    }
    let z = lambda / modes.volume();
    let eps_min = modes.shells().iter().filter(|s| s.eps > 0.0).map(|s| s.eps).fold(f64::INFINITY, f64::min);
    if !(eps_min > z) {
        return Err(Error::Domain(format!(
            "Laplace transform needs inf eps(k) > lambda / |box|: {eps_min} <= {z}"
        )));
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let mut exponent = 0.0;
    for sh in modes.shells().iter().filter(|s| s.eps > 0.0) {
        exponent += sh.count as f64 * cycle_series(weights, sh.eps, z.max(0.0), |j| expm1_minus_x(j * z))?;
    }
    Ok(exponent.exp())
}

/// The law of `Y̌(N) / Ž` as a measure on the densities `N / |box|`,
/// truncated at the table size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuLambda {
    pub volume: f64,
    pub rho_c: f64,
    pub probabilities: Vec<f64>,
    /// Mass of `N` beyond the table, `1 - sum_{N <= N_max} Y̌(N) / Ž`.
    pub residual: f64,
}

impl MuLambda {
    pub fn from_tables(tables: &ModePartitionTables, modes: &ModeSet, weights: &CycleWeightModel) -> Result<Self> {
        let mut log_z = 0.0;
        for sh in modes.shells().iter().filter(|s| s.eps > 0.0) {
            log_z += sh.count as f64 * cycle_series(weights, sh.eps, 0.0, |_| 1.0)?;
        }
        let probabilities: Vec<f64> = (0..=tables.n()).map(|m| (tables.log_y_check(m) - log_z).exp()).collect();
        let residual = 1.0 - probabilities.iter().sum::<f64>();
        Ok(Self { volume: modes.volume(), rho_c: modes.critical_density(weights)?, probabilities, residual })
    }

    /// Direct `sum_N mu(N) exp(lambda (N / V - rho_c))` over the table.
    pub fn laplace(&self, lambda: f64) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(m, p)| p * (lambda * (m as f64 / self.volume - self.rho_c)).exp())
            .sum()
    }

    pub fn mean_density(&self) -> f64 {
        let mass: f64 = self.probabilities.iter().sum();
        self.probabilities.iter().enumerate().map(|(m, p)| p * m as f64 / self.volume).sum::<f64>() / mass
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_gof;
    use crate::weights::compute_h;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ewens() -> CycleWeightModel {
        CycleWeightModel::constant(0.0).unwrap()
    }

    #[test]
    fn mode_set_enumeration() {
        let kern = JumpKernel::gaussian(3, 1.0 / (4.0 * PI)).unwrap();
        let modes = ModeSet::with_cutoff(&kern, 3.0, 40.0).unwrap();
        assert_eq!(modes.eps(modes.zero_index()), 0.0);
        assert_eq!(modes.coords(modes.zero_index()), &[0, 0, 0]);
        assert!(modes.energies().iter().enumerate().all(|(i, &e)| (i == modes.zero_index()) == (e == 0.0)));
        for i in 1..modes.len() {
            assert!(modes.coords(i - 1) < modes.coords(i));
        }
        assert!(modes.energies().iter().all(|&e| e <= 40.0 + 1e-12));
        assert_eq!(modes.len(), modes.mode_count());
        let again = ModeSet::with_cutoff(&kern, 3.0, 40.0).unwrap();
        assert_eq!(again.energies(), modes.energies());
    }

    #[test]
    fn single_mode_tables() {
        let modes = ModeSet::from_energies(1.0, &[]).unwrap();
        let table = compute_h(&CycleWeightModel::constant(0.3).unwrap(), 10).unwrap();
        let t = build_tables(&modes, &table, 10).unwrap();
        assert!((t.log_y(10) - table.log_h(10)).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_occupations_exact(&t, &mut rng).get(0), 10);
    }

    #[test]
    fn two_mode_masses() {
        let e1 = 0.7;
        let modes = ModeSet::from_energies(1.0, &[e1]).unwrap();
        let table = compute_h(&ewens(), 2).unwrap();
        let t = build_tables(&modes, &table, 2).unwrap();
        let y = 1.0 + (-e1).exp() + (-2.0 * e1).exp();
        assert!((t.log_y(2).exp() - y).abs() < 1e-14);
        let law = occupation_law_exact(&modes, &table, 2).unwrap();
        for (c, p) in law {
            let lp = t.log_probability(&OccupationState::from_dense(&c)).exp();
            assert!((lp - p).abs() < 1e-14);
        }
    }

    #[test]
    fn y_identity_random_modes() {
        let kern = JumpKernel::gaussian(2, 0.05).unwrap();
        let modes = ModeSet::with_cutoff(&kern, 1.7, 12.0).unwrap();
        let w = CycleWeightModel::asymptotic(0.2, vec![(1, -0.4), (3, 1.0)]).unwrap();
        let table = compute_h(&w, 50).unwrap();
        let t = build_tables(&modes, &table, 50).unwrap();
        assert!(t.identity_residual() < 1e-10);
    }

    #[test]
    fn budget_refusal_reports_estimate() {
        let modes = ModeSet::from_energies(1.0, &[1.0, 2.0]).unwrap();
        let table = compute_h(&ewens(), 100).unwrap();
        let limits = BuildLimits { op_budget: 10.0, memory_cap: DEFAULT_MEMORY_CAP };
        match build_tables_with(&modes, &table, 100, limits) {
            Err(Error::Budget(msg)) => assert!(msg.contains("operations")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cycle_first_matches_tables() {
        // occupation law of the cycle-first sampler vs the exact product measure
        let modes = ModeSet::from_energies(1.0, &[0.4, 1.1]).unwrap();
        let w = CycleWeightModel::constant(-(2f64.ln())).unwrap();
        let n = 4;
        let table = compute_h(&w, n).unwrap();
        let law = occupation_law_exact(&modes, &table, n).unwrap();
        let sampler = CycleFirstSampler::new(&modes, &w, n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0u64; law.len()];
        for _ in 0..100_000 {
            let d = sampler.sample(&mut rng);
            let dense = d.occupations.to_dense(3);
            let i = law.iter().position(|(c, _)| *c == dense).unwrap();
            counts[i] += 1;
        }
        let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
        let (_, p, _) = chi_square_gof(&counts, &probs);
        assert!(p > 1e-3, "p = {p}");
    }

    #[test]
    fn permutation_given_occupations_examples() {
        let table = compute_h(&ewens(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ones = OccupationState::from_dense(&[1, 1, 1, 0, 1]);
        assert_eq!(sample_permutation_given_occupations(&ones, &table, &mut rng), vec![4, 0, 0, 0]);
        let three = OccupationState::condensed(0, 3);
        let m = 60_000;
        let hits = (0..m).filter(|_| sample_permutation_given_occupations(&three, &table, &mut rng)[2] == 1).count();
        assert!((hits as f64 / m as f64 - 1.0 / 3.0).abs() < 3.0 * (2.0f64 / 9.0 / m as f64).sqrt() + 1e-9);
        let two_one = OccupationState::from_dense(&[2, 1]);
        let hits = (0..m).filter(|_| sample_permutation_given_occupations(&two_one, &table, &mut rng)[1] == 1).count();
        assert!((hits as f64 / m as f64 - 0.5).abs() < 3.0 * (0.25f64 / m as f64).sqrt());
    }

    #[test]
    fn marginal_small_cases() {
        let modes = ModeSet::from_energies(1.0, &[0.5, 0.9]).unwrap();
        let one = cycle_count_marginal_exact(&modes, &ewens(), 1).unwrap();
        assert_eq!(one, vec![(vec![1], 1.0)]);
        let two = cycle_count_marginal_exact(&modes, &ewens(), 2).unwrap();
        let s1 = modes.mode_sum(1);
        let s2 = modes.mode_sum(2);
        let expect = (s2 / 2.0) / (s1 * s1 / 2.0 + s2 / 2.0);
        let p = two.iter().find(|(r, _)| r[1] == 1).unwrap().1;
        assert!((p - expect).abs() < 1e-14);
        // brute force over (n, pi): occupation law times per-mode cycle laws
        let table = compute_h(&ewens(), 2).unwrap();
        let law = occupation_law_exact(&modes, &table, 2).unwrap();
        let brute: f64 = law
            .iter()
            .map(|(c, q)| if let Some(&two) = c.iter().find(|&&a| a == 2) { q * 0.5 * (two / 2) as f64 } else { 0.0 })
            .sum();
        assert!((brute - expect).abs() < 1e-14);
        assert!(cycle_count_marginal_exact(&modes, &ewens(), 7).is_err());
    }

    #[test]
    fn mcmc_examples() {
        let modes = ModeSet::from_energies(1.0, &[1.0]).unwrap();
        let table = compute_h(&ewens(), 1000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sample_occupations_mcmc(&modes, &table, 5, 0, &mut rng).unwrap();
        assert!(!s.is_equilibrated());
        assert_eq!(s.get(0), 5);
        let mut chain = OccupationChain::new(&modes, &table, 1000).unwrap();
        chain.run(1_000_000, &mut rng);
        assert_eq!(chain.occupations().iter().sum::<usize>(), 1000);
        assert!(chain.state().is_equilibrated());
    }

    #[test]
    fn zero_mode_trivial_events() {
        let modes = ModeSet::from_energies(1.0, &[0.3]).unwrap();
        let samples = vec![OccupationState::from_dense(&[3, 1]), OccupationState::from_dense(&[0, 4])];
        let params = ZeroModeParams { nu: 0.4, eps: 1.0, delta: 0.5, m_large: 2, tail_modes: vec![1] };
        let r = zero_mode_statistics(&modes, &samples, params.clone()).unwrap();
        assert_eq!(r.p_a, 1.0);
        assert!((r.mean_zero_fraction - 0.375).abs() < 1e-15);
        assert!(zero_mode_statistics(&modes, &[], params).is_err());
    }

    #[test]
    fn laplace_closed_form_vs_direct() {
        let modes = ModeSet::from_energies(2.0, &[0.8, 1.3]).unwrap();
        let w = CycleWeightModel::constant(0.0).unwrap();
        assert_eq!(mu_lambda_laplace(&modes, &w, 0.0).unwrap(), 1.0);
        let n = 400;
        let table = compute_h(&w, n).unwrap();
        let t = build_tables(&modes, &table, n).unwrap();
        let mu = MuLambda::from_tables(&t, &modes, &w).unwrap();
        assert!(mu.residual.abs() < 1e-12);
        for lambda in [-0.9, 0.3, 1.1] {
            let closed = mu_lambda_laplace(&modes, &w, lambda).unwrap();
            let direct = mu.laplace(lambda);
            assert!((closed - direct).abs() < 1e-10 * closed, "{closed} vs {direct}");
        }
        assert!(mu_lambda_laplace(&modes, &w, 2.0 * 0.8 + 0.1).is_err());
    }

}
