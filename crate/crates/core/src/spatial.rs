//! Real-space Metropolis chain for the torus model on `(x, pi)`:
//! `H = sum_i xi_box(x_i - x_{pi(i)}) + sum_l alpha_l r_l(pi)`.
//!
//! Two move types: displacement of one point, and composition of the
//! permutation with a transposition, `pi' = pi ∘ (i j)`. A transposition
//! either merges the two cycles through `i` and `j` or splits their common
//! cycle; the cycle registry is updated by relabeling the shorter side.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr_normal::standard_normal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{self, BoxGeometry, JumpKernel, KernelFamily};
use crate::stats::{CycleSpectrum, Estimate};
use crate::weights::CycleWeightModel;

/// Cycle weights at or above this are treated as forbidden cycle lengths.
pub const ALPHA_GUARD: f64 = 700.0;

mod rand_distr_normal {
    use rand::Rng;

    /// Standard normal by the polar method.
    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        loop {
            let u: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let v: f64 = 2.0 * rng.gen::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}

/// Kernel, weights and box with the per-edge energy precomputed for speed.
#[derive(Debug, Clone)]
pub struct SpatialModel {
    kernel: JumpKernel,
    geom: BoxGeometry,
    alphas: Vec<f64>,
    gauss: Option<(f64, i64, f64)>,
}

impl SpatialModel {
    pub fn new(kernel: &JumpKernel, weights: &CycleWeightModel, geom: &BoxGeometry, n: usize) -> Result<Self> {
        if kernel.dim() != geom.dim() {
            return Err(Error::Config("dimension mismatch between kernel and box".into()));
        }
        let alphas: Vec<f64> = (1..=n).map(|j| weights.alpha(j)).collect();
        if alphas.first().is_some_and(|&a| a >= ALPHA_GUARD) {
            return Err(Error::Config("alpha_1 is above the guard; the identity start state is forbidden".into()));
        }
        let gauss = match kernel.family() {
            KernelFamily::Gaussian { beta } => {
                let zmax = kernel::gaussian_image_count(beta, geom.side(), geom.dim())?;
                Some((beta, zmax, 0.5 * (4.0 * std::f64::consts::PI * beta).ln()))
            }
            KernelFamily::PowerLaw1d { .. } => {
                kernel::periodized_jump_weight(kernel, geom, &[0.0])?;
                None
            }
        };
        Ok(Self { kernel: kernel.clone(), geom: *geom, alphas, gauss })
    }

    pub fn n(&self) -> usize {
        self.alphas.len()
    }

    pub fn geometry(&self) -> &BoxGeometry {
        &self.geom
    }

    pub fn kernel(&self) -> &JumpKernel {
        &self.kernel
    }

    /// `alpha_j`, `j >= 1`.
    pub fn alpha(&self, j: usize) -> f64 {
        self.alphas[j - 1]
    }

    /// `xi_box(a - b)`.
    pub fn xi(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.gauss {
            Some((beta, zmax, log_norm)) => {
                let l = self.geom.side();
                let mut total = 0.0;
                for (p, q) in a.iter().zip(b) {
                    let r = self.geom.reduce(p - q);
                    let mut s = 0.0;
                    for z in -zmax..=zmax {
                        let d = r - l * z as f64;
                        s += (-d * d / (4.0 * beta)).exp();
                    }
                    total += log_norm - s.ln();
                }
                total
            }
            None => {
                let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
                kernel::periodized_xi(&self.kernel, &self.geom, &d).unwrap_or(f64::NAN)
            }
        }
    }
}

/// Points, permutation and cycle registry, with the cached energy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialConfig {
    dim: usize,
    x: Vec<f64>,
    target: Vec<usize>,
    inverse: Vec<usize>,
    cycle_id: Vec<usize>,
    cycle_len: Vec<usize>,
    free_ids: Vec<usize>,
    counts: Vec<usize>,
    energy: f64,
}

/// Outcome of a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoveOutcome {
    pub delta: f64,
    pub accepted: bool,
}

impl SpatialConfig {
    /// Given positions (flat, `dim` per point) and permutation targets.
    pub fn new(model: &SpatialModel, x: Vec<f64>, target: Vec<usize>) -> Result<Self> {
        let dim = model.geom.dim();
        let n = target.len();
        if x.len() != n * dim || n != model.n() {
            return Err(Error::Config(format!("configuration sizes do not match N={}", model.n())));
        }
        let mut inverse = vec![usize::MAX; n];
        for (i, &t) in target.iter().enumerate() {
            if t >= n || inverse[t] != usize::MAX {
                return Err(Error::Config("targets do not form a permutation".into()));
            }
            inverse[t] = i;
        }
        let l = model.geom.side();
        let x = x.iter().map(|v| v.rem_euclid(l)).collect();
        let mut c = Self {
            dim,
            x,
            target,
            inverse,
            cycle_id: vec![usize::MAX; n],
            cycle_len: Vec::new(),
            free_ids: Vec::new(),
            counts: vec![0; n],
            energy: 0.0,
        };
        c.rebuild_registry();
        c.energy = c.full_energy(model);
        Ok(c)
    }

    /// Points i.i.d. uniform on the torus, `pi = id`.
    pub fn uniform_identity<R: Rng + ?Sized>(model: &SpatialModel, rng: &mut R) -> Result<Self> {
        let n = model.n();
        let l = model.geom.side();
        let x = (0..n * model.geom.dim()).map(|_| rng.gen::<f64>() * l).collect();
        Self::new(model, x, (0..n).collect())
    }

    fn rebuild_registry(&mut self) {
        let n = self.target.len();
        self.cycle_id = vec![usize::MAX; n];
        self.cycle_len.clear();
        self.free_ids.clear();
        self.counts = vec![0; n];
        for s in 0..n {
            if self.cycle_id[s] != usize::MAX {
                continue;
            }
            let id = self.cycle_len.len();
            let mut len = 0;
            let mut v = s;
            loop {
                self.cycle_id[v] = id;
                len += 1;
                v = self.target[v];
                if v == s {
                    break;
                }
            }
            self.cycle_len.push(len);
            self.counts[len - 1] += 1;
        }
    }

    pub fn n(&self) -> usize {
        self.target.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    pub fn targets(&self) -> &[usize] {
        &self.target
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Cycle counts `r[j - 1]`.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spectrum(&self) -> CycleSpectrum {
        CycleSpectrum::from_counts(&self.counts)
    }

    /// Length of the cycle through `i`.
    pub fn cycle_length(&self, i: usize) -> usize {
        self.cycle_len[self.cycle_id[i]]
    }

    /// Energy from scratch.
    pub fn full_energy(&self, model: &SpatialModel) -> f64 {
        let mut h = 0.0;
        for i in 0..self.n() {
            h += model.xi(self.position(i), self.position(self.target[i]));
        }
        for (i, &r) in self.counts.iter().enumerate() {
            if r > 0 {
                h += model.alpha(i + 1) * r as f64;
            }
        }
        h
    }

    /// Checks bijectivity, registry and energy; returns `|H_cached - H_full|`.
    pub fn audit(&self, model: &SpatialModel) -> Result<f64> {
        for (i, &t) in self.target.iter().enumerate() {
            if self.inverse[t] != i {
                return Err(Error::Numeric(format!("inverse map broken at {i}")));
            }
        }
        let mut fresh = self.clone();
        fresh.rebuild_registry();
        if fresh.counts != self.counts {
            return Err(Error::Numeric("cycle counts diverged from recomputation".into()));
        }
        for i in 0..self.n() {
            if self.cycle_length(i) != fresh.cycle_length(i) || self.cycle_id[i] != self.cycle_id[self.target[i]] {
                return Err(Error::Numeric(format!("cycle registry inconsistent at {i}")));
            }
        }
        let full = self.full_energy(model);
        if !full.is_finite() {
            return Err(Error::Numeric(format!("non-finite energy; state {}", self.dump())));
        }
        Ok((self.energy - full).abs())
    }

    /// Compact JSON of positions and targets for error reports.
    pub fn dump(&self) -> String {
        serde_json::json!({"x": self.x, "target": self.target}).to_string()
    }

    /// `Delta H` of moving point `i` to `new_x`.
    pub fn position_delta(&self, model: &SpatialModel, i: usize, new_x: &[f64]) -> f64 {
        let next = self.target[i];
        let prev = self.inverse[i];
        if next == i {
            return 0.0;
        }
        let old = self.position(i);
        let before = model.xi(old, self.position(next)) + model.xi(self.position(prev), old);
        let after = model.xi(new_x, self.position(next)) + model.xi(self.position(prev), new_x);
        after - before
    }

    /// Metropolis step for a displacement proposal of point `i`.
    pub fn propose_position_move<R: Rng + ?Sized>(&mut self, model: &SpatialModel, i: usize, new_x: &[f64], rng: &mut R) -> MoveOutcome {
        let l = model.geom.side();
        let wrapped: Vec<f64> = new_x.iter().map(|v| v.rem_euclid(l)).collect();
        let delta = self.position_delta(model, i, &wrapped);
        let accepted = delta <= 0.0 || rng.gen::<f64>() < (-delta).exp();
        if accepted {
            self.x[i * self.dim..(i + 1) * self.dim].copy_from_slice(&wrapped);
            self.energy += delta;
        }
        MoveOutcome { delta, accepted }
    }

    /// Cycle lengths after `pi ∘ (i j)`: `(merged, None)` when `i` and `j`
    /// lie in different cycles, `(c_i, Some(c_j))` for a split, where `c_i`
    /// is the new cycle through `i`. Also returns the shorter side's start
    /// and length for the relabeling.
    fn swap_effect(&self, i: usize, j: usize) -> (usize, Option<usize>, usize, usize) {
        let a = self.cycle_length(i);
        if self.cycle_id[i] != self.cycle_id[j] {
            return (a + self.cycle_length(j), None, 0, 0);
        }
        // new cycles: j -> pi(i) -> ... -> j and i -> pi(j) -> ... -> i
        let mut p = self.target[i];
        let mut q = self.target[j];
        let mut steps = 1;
        loop {
            if p == j {
                // j's new cycle {pi(i), ..., j} has `steps` elements
                return (a - steps, Some(steps), self.target[i], steps);
            }
            if q == i {
                // i's new cycle {pi(j), ..., i}
                return (steps, Some(a - steps), self.target[j], steps);
            }
            p = self.target[p];
            q = self.target[q];
            steps += 1;
        }
    }

    /// `(Delta jump energy, Delta cycle weight)` of `pi ∘ (i j)`;
    /// the weight change is `+inf` when a forbidden length would appear.
    pub fn swap_delta(&self, model: &SpatialModel, i: usize, j: usize) -> (f64, f64) {
        let (pi, pj) = (self.target[i], self.target[j]);
        let (xi_, xj) = (self.position(i), self.position(j));
        let jump = model.xi(xi_, self.position(pj)) + model.xi(xj, self.position(pi))
            - model.xi(xi_, self.position(pi))
            - model.xi(xj, self.position(pj));
        let (c1, c2, _, _) = self.swap_effect(i, j);
        let weight = match c2 {
            None => {
                let (a, b) = (self.cycle_length(i), self.cycle_length(j));
                let new = model.alpha(c1);
                if new >= ALPHA_GUARD {
                    f64::INFINITY
                } else {
                    new - model.alpha(a) - model.alpha(b)
                }
            }
            Some(c2) => {
                let c = self.cycle_length(i);
                let (n1, n2) = (model.alpha(c1), model.alpha(c2));
                if n1 >= ALPHA_GUARD || n2 >= ALPHA_GUARD {
                    f64::INFINITY
                } else {
                    n1 + n2 - model.alpha(c)
                }
            }
        };
        (jump, weight)
    }

    /// Metropolis step for the transposition proposal `(i j)`, `i != j`.
    pub fn propose_swap_move<R: Rng + ?Sized>(&mut self, model: &SpatialModel, i: usize, j: usize, rng: &mut R) -> MoveOutcome {
        debug_assert_ne!(i, j);
        let (jump, weight) = self.swap_delta(model, i, j);
        if weight == f64::INFINITY {
            return MoveOutcome { delta: f64::INFINITY, accepted: false };
        }
        let delta = jump + weight;
        let accepted = delta <= 0.0 || rng.gen::<f64>() < (-delta).exp();
        if accepted {
            self.apply_swap(i, j);
            self.energy += delta;
        }
        MoveOutcome { delta, accepted }
    }

    /// Applies `pi ∘ (i j)` to the permutation and the registry.
    pub fn apply_swap(&mut self, i: usize, j: usize) {
        let (c1, c2, start, short) = self.swap_effect(i, j);
        let (pi, pj) = (self.target[i], self.target[j]);
        self.target[i] = pj;
        self.target[j] = pi;
        self.inverse[pj] = i;
        self.inverse[pi] = j;
        match c2 {
            None => {
                let (a, b) = (self.cycle_length(i), self.cycle_length(j));
                let (keep, gone) = if a >= b { (self.cycle_id[i], self.cycle_id[j]) } else { (self.cycle_id[j], self.cycle_id[i]) };
                let from = if a >= b { j } else { i };
                let mut v = from;
                loop {
                    self.cycle_id[v] = keep;
                    v = self.target[v];
                    if v == from {
                        break;
                    }
                }
                self.cycle_len[keep] = a + b;
                self.free_ids.push(gone);
                self.counts[a - 1] -= 1;
                self.counts[b - 1] -= 1;
                self.counts[a + b - 1] += 1;
            }
            Some(c2) => {
                let c = c1 + c2;
                let old = self.cycle_id[i];
                let id = match self.free_ids.pop() {
                    Some(id) => id,
                    None => {
                        self.cycle_len.push(0);
                        self.cycle_len.len() - 1
                    }
                };
                let mut v = start;
                for _ in 0..short {
                    self.cycle_id[v] = id;
                    v = self.target[v];
                }
                self.cycle_len[id] = short;
                self.cycle_len[old] = c - short;
                self.counts[c - 1] -= 1;
                self.counts[c1 - 1] += 1;
                self.counts[c2 - 1] += 1;
            }
        }
    }
}

/// Run parameters of the spatial chain. One sweep is `N` move attempts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainParams {
    /// Fraction of position moves, strictly between 0 and 1.
    pub p_pos: f64,
    /// Displacement standard deviation; defaults to `2 sqrt(beta)`.
    pub proposal_scale: Option<f64>,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Sweeps between full audits (0 disables periodic audits).
    pub audit_every: usize,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self { p_pos: 0.5, proposal_scale: None, sweeps: 10_000, burn_in: 1_000, thin: 10, seed: 1, audit_every: 1_000 }
    }
}

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_pos > 0.0 && self.p_pos < 1.0) {
            return Err(Error::Config(format!("p_pos must lie in (0, 1), got {}", self.p_pos)));
        }
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!("burn_in {} must be below sweeps {}", self.burn_in, self.sweeps)));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be positive".into()));
        }
        if let Some(s) = self.proposal_scale {
            if !(s > 0.0) {
                return Err(Error::Config(format!("proposal scale must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// A chain with its own generator and acceptance counters.
#[derive(Debug, Clone)]
pub struct SpatialChain<'a> {
    model: &'a SpatialModel,
    config: SpatialConfig,
    rng: ChaCha8Rng,
    scale: f64,
    pub position_moves: (u64, u64),
    pub swap_moves: (u64, u64),
}

impl<'a> SpatialChain<'a> {
    pub fn new(model: &'a SpatialModel, seed: u64, scale: Option<f64>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = SpatialConfig::uniform_identity(model, &mut rng)?;
        let scale = match (scale, model.kernel.beta()) {
            (Some(s), _) => s,
            (None, Some(beta)) => 2.0 * beta.sqrt(),
            (None, None) => 1.0,
        };
        Ok(Self { model, config, rng, scale, position_moves: (0, 0), swap_moves: (0, 0) })
    }

    pub fn from_config(model: &'a SpatialModel, config: SpatialConfig, seed: u64, scale: f64) -> Self {
        Self { model, config, rng: ChaCha8Rng::seed_from_u64(seed), scale, position_moves: (0, 0), swap_moves: (0, 0) }
    }

    pub fn config(&self) -> &SpatialConfig {
        &self.config
    }

    pub fn step_position(&mut self) -> MoveOutcome {
        let n = self.config.n();
        let i = self.rng.gen_range(0..n);
        let proposal: Vec<f64> = self.config.position(i).iter().map(|&v| v + self.scale * standard_normal(&mut self.rng)).collect();
        let out = self.config.propose_position_move(self.model, i, &proposal, &mut self.rng);
        self.position_moves.0 += 1;
        self.position_moves.1 += out.accepted as u64;
        out
    }

    /// Transposition move; a no-op for `N = 1`.
    pub fn step_swap(&mut self) -> MoveOutcome {
        let n = self.config.n();
        if n < 2 {
            return MoveOutcome { delta: 0.0, accepted: false };
        }
        let i = self.rng.gen_range(0..n);
        let mut j = self.rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let out = self.config.propose_swap_move(self.model, i, j, &mut self.rng);
        self.swap_moves.0 += 1;
        self.swap_moves.1 += out.accepted as u64;
        out
    }

    /// `N` moves, each a position move with probability `p_pos`.
    pub fn sweep(&mut self, p_pos: f64) {
        for _ in 0..self.config.n() {
            if self.rng.gen::<f64>() < p_pos {
                self.step_position();
            } else {
                self.step_swap();
            }
        }
    }

    /// Replaces the cached energy by a fresh evaluation after an audit.
    pub fn audit(&mut self) -> Result<f64> {
        let err = self.config.audit(self.model)?;
        self.config.energy = self.config.full_energy(self.model);
        Ok(err)
    }
}

/// One recorded sample of the chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainRecord {
    pub sweep: usize,
    pub lengths: Vec<usize>,
    pub energy: f64,
    pub position_accepted: u64,
    pub swap_accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub position_acceptance: f64,
    pub swap_acceptance: f64,
    pub energy_trace: Vec<f64>,
    /// Split test comparing the first 10% and the last 50% of the trace.
    pub geweke_z: f64,
    pub max_audit_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainOutput {
    pub records: Vec<ChainRecord>,
    pub diagnostics: ChainDiagnostics,
}

impl ChainOutput {
    pub fn spectra(&self) -> Vec<CycleSpectrum> {
        self.records.iter().map(|r| CycleSpectrum::new(r.lengths.clone()).expect("positive lengths")).collect()
    }
}

/// Runs the chain from the uniform-identity start, recording every `thin`-th
/// sweep after burn-in. Deterministic in `params.seed`.
pub fn run_chain(model: &SpatialModel, params: &ChainParams) -> Result<ChainOutput> {
    params.validate()?;
    let mut chain = SpatialChain::new(model, params.seed, params.proposal_scale)?;
    let mut records = Vec::new();
    let mut max_audit: f64 = 0.0;
    for sweep in 1..=params.sweeps {
        chain.sweep(params.p_pos);
        if !chain.config.energy.is_finite() {
            return Err(Error::Numeric(format!("non-finite energy at sweep {sweep}; state {}", chain.config.dump())));
        }
        if params.audit_every > 0 && sweep % params.audit_every == 0 {
            let err = chain.audit()?;
            let h = chain.config.energy;
            if err > 1e-10 * (1.0 + h.abs()) {
                return Err(Error::Numeric(format!("energy drift {err:e} at sweep {sweep}; state {}", chain.config.dump())));
            }
            max_audit = max_audit.max(err);
        }
        if sweep > params.burn_in && (sweep - params.burn_in) % params.thin == 0 {
            records.push(ChainRecord {
                sweep,
                lengths: chain.config.spectrum().lengths().to_vec(),
                energy: chain.config.energy,
                position_accepted: chain.position_moves.1,
                swap_accepted: chain.swap_moves.1,
            });
        }
    }
    let energy_trace: Vec<f64> = records.iter().map(|r| r.energy).collect();
    let rate = |m: (u64, u64)| if m.0 == 0 { 0.0 } else { m.1 as f64 / m.0 as f64 };
    let diagnostics = ChainDiagnostics {
        position_acceptance: rate(chain.position_moves),
        swap_acceptance: rate(chain.swap_moves),
        geweke_z: geweke_z(&energy_trace),
        energy_trace,
        max_audit_error: max_audit,
    };
    Ok(ChainOutput { records, diagnostics })
}

/// Mean and batch-means standard error of a correlated series.
pub fn batch_means(x: &[f64], batches: usize) -> Estimate {
    let m = x.len();
    let b = batches.min(m).max(1);
    let size = m / b;
    if size < 1 || b < 2 {
        return Estimate::from_samples(x);
    }
    let means: Vec<f64> = (0..b).map(|k| x[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let e = Estimate::from_samples(&means);
    let mean = x[..b * size].iter().sum::<f64>() / (b * size) as f64;
    Estimate { mean, stderr: e.stderr }
}

/// Geweke-style z-score of the early versus late part of a trace.
pub fn geweke_z(trace: &[f64]) -> f64 {
    let m = trace.len();
    if m < 40 {
        return f64::NAN;
    }
    let early = batch_means(&trace[..m / 10], 4);
    let late = batch_means(&trace[m / 2..], 10);
    (early.mean - late.mean) / (early.stderr.powi(2) + late.stderr.powi(2)).sqrt().max(1e-300)
}

/// One row of the `K` sweep of the long-cycle fraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuRow {
    pub k: usize,
    /// Mean of `(1/N) sum_{l > K} l`.
    pub raw: Estimate,
    /// `raw` plus `(1/N) sum_{j <= K} exp(-alpha_j)` on draws with a cycle longer than `K`.
    pub corrected: f64,
}

/// `K` sweep with the plateau estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NuReport {
    pub rows: Vec<NuRow>,
    pub plateau_k: usize,
    pub plateau: Estimate,
    pub raw_at_plateau: Estimate,
}

/// `nu_K`: mean fraction of points in cycles longer than `K`, with a
/// batch-means standard error.
pub fn estimate_nu(spectra: &[CycleSpectrum], k: usize) -> Result<Estimate> {
    if spectra.is_empty() {
        return Err(Error::Domain("nu estimate needs at least one spectrum".into()));
    }
    let x: Vec<f64> = spectra.iter().map(|s| s.long_fraction(k)).collect();
    Ok(batch_means(&x, 20))
}

/// Default plateau cutoff `ceil(N^{2/3})`.
pub fn default_plateau_k(n: usize) -> usize {
    let k = (n as f64).powf(2.0 / 3.0).ceil() as usize;
    // guard against powf rounding just above an exact cube
    if k > 1 && ((k - 1) as f64).powi(3) >= (n as f64).powi(2) { k - 1 } else { k }
}

/// `nu_K` over a grid of `K` plus the plateau value. Points of the
/// condensate's permutation that sit in short cycles are missed by the raw
/// estimator; once the condensate is much larger than `K` their expected
/// number is about `sum_{j <= K} exp(-alpha_j)`. The corrected value adds
/// that amount to every draw holding a cycle longer than `K`, so draws
/// without a macroscopic cycle are left alone.
pub fn nu_sweep(spectra: &[CycleSpectrum], weights: &CycleWeightModel, ks: &[usize], plateau_k: usize) -> Result<NuReport> {
    let n = spectra.first().map(|s| s.total()).unwrap_or(0);
    if n == 0 {
        return Err(Error::Domain("nu sweep needs nonempty spectra".into()));
    }
    let corrected = |k: usize| {
        let c = (1..=k.min(n)).map(|j| weights.weight(j)).sum::<f64>() / n as f64;
        let x: Vec<f64> = spectra
            .iter()
            .map(|s| {
                let f = s.long_fraction(k);
                if s.largest() > k { (f + c).min(1.0) } else { f }
            })
            .collect();
        batch_means(&x, 20)
    };
    let mut rows = Vec::new();
    for &k in ks {
        rows.push(NuRow { k, raw: estimate_nu(spectra, k)?, corrected: corrected(k).mean });
    }
    Ok(NuReport { rows, plateau_k, plateau: corrected(plateau_k), raw_at_plateau: estimate_nu(spectra, plateau_k)? })
}
