//! Batch driver behind the `spatperm` binary.
//!
//! Every command writes line-delimited JSON records, starting with a header
//! that carries the effective parameters, the seed, the crate version and a
//! digest of the configuration, plus an aligned text table for humans. With
//! `--out PATH` the records go to `PATH`, the table to stdout and the
//! wall-clock timestamps to `PATH.manifest.json`; otherwise records go to
//! stdout and the table to stderr. Output bytes depend only on the
//! configuration and the seed.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, SEED_ENV};
use crate::error::{Error, Result};
use crate::fourier::{
    build_tables, build_tables_with, occupation_law_exact, sample_cycles_given_occupations, sample_occupations_exact,
    BuildLimits, CycleFirstSampler, FourierDraw, ModeSet, MuLambda, OccupationChain, OccupationState,
    ZeroModeAccumulator, ZeroModeParams, mu_lambda_laplace,
};
use crate::kernel::{critical_density, finite_volume_critical_density, BoxGeometry, GrowthCertificate, JumpKernel};
use crate::spatial::{default_plateau_k, nu_sweep, run_chain, ChainOutput, ChainParams, NuReport, SpatialChain, SpatialModel};
use crate::stats::{giant_cycle_test, pd_fit_test, pd_sum_squares_reference, CycleSpectrum};
use crate::weights::{brute_force_h, compute_h, regularity_of, CycleLengthSampler, CycleWeightModel};

/// Largest `n` checked against the partition enumeration by `hn`.
const HN_ORACLE_MAX: usize = 12;

#[derive(Debug, Parser)]
#[command(name = "spatperm", version, about = "Spatial random permutations: critical densities, samplers and cycle statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// Config file of `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// RNG seed (overrides the config file and SPATPERM_SEED)
    #[arg(long)]
    seed: Option<u64>,
    /// Write records to this file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Critical density and its finite-box values over `l_grid`
    RhoC(Common),
    /// Table of h_n with an enumeration check
    Hn(Common),
    /// Draws from the Fourier-mode representation
    SampleFourier(Common),
    /// Real-space Metropolis chain
    SampleSpatial(Common),
    /// Poisson-Dirichlet fit of normalized cycle lengths
    VerifyPd(Common),
    /// Giant-cycle statistic for logarithmic weights
    GiantCycle(Common),
    /// Long-cycle fraction over a grid of densities
    ScanDensity(Common),
    /// Quick oracle and invariant checks
    Selftest(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::RhoC(c) => ("rho-c", c),
            Command::Hn(c) => ("hn", c),
            Command::SampleFourier(c) => ("sample-fourier", c),
            Command::SampleSpatial(c) => ("sample-spatial", c),
            Command::VerifyPd(c) => ("verify-pd", c),
            Command::GiantCycle(c) => ("giant-cycle", c),
            Command::ScanDensity(c) => ("scan-density", c),
            Command::Selftest(c) => ("selftest", c),
        }
    }
}

/// Provenance of one run. The header record holds everything but the
/// timestamps, which live in the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_unix: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_unix: Option<f64>,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Aligned plain-text table.
#[derive(Debug, Clone, Default)]
pub struct Table {
    title: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(title: &str, header: &[&str]) -> Self {
        Self { title: title.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn render(&self) -> String {
        let cols = self.header.len();
        let mut width: Vec<usize> = self.header.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (i, c) in r.iter().enumerate().take(cols) {
                width[i] = width[i].max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        let mut s = format!("# {}\n{}\n", self.title, line(&self.header));
        s.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&line(r));
            s.push('\n');
        }
        s
    }
}

fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if !x.is_finite() {
        format!("{x}")
    } else if (1e-3..1e6).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.4e}")
    }
}

/// Records and tables produced by one command.
#[derive(Debug, Default)]
struct Report {
    lines: Vec<String>,
    tables: Vec<Table>,
}

impl Report {
    fn record(&mut self, kind: &str, body: Value) {
        let mut obj = serde_json::Map::new();
        obj.insert("record".into(), Value::String(kind.into()));
        match body {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("value".into(), other);
            }
        }
        self.lines.push(Value::Object(obj).to_string());
    }

    fn serialized<T: Serialize>(&mut self, kind: &str, value: &T) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::Numeric(format!("serializing {kind}: {e}")))?;
        self.record(kind, v);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sampler {
    Nonspatial,
    FourierExact,
    FourierMcmc,
    FourierCycles,
    Spatial,
}

impl Sampler {
    fn parse(cfg: &Config) -> Result<Self> {
        Ok(match cfg.require("sampler")? {
            "nonspatial" => Sampler::Nonspatial,
            "fourier-exact" => Sampler::FourierExact,
            "fourier-mcmc" => Sampler::FourierMcmc,
            "fourier-cycles" => Sampler::FourierCycles,
            "spatial" => Sampler::Spatial,
            other => {
                return Err(Error::Config(format!(
                    "key `sampler`: unknown value `{other}` (nonspatial, fourier-exact, fourier-mcmc, fourier-cycles, spatial)"
                )))
            }
        })
    }

    fn is_fourier(self) -> bool {
        matches!(self, Sampler::FourierExact | Sampler::FourierMcmc | Sampler::FourierCycles)
    }
}

/// Independent stream `index` of the run seed.
fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn kernel_of(cfg: &Config) -> Result<JumpKernel> {
    match cfg.require("kernel")? {
        "gaussian" => JumpKernel::gaussian(cfg.usize("dim")?, cfg.f64("beta")?),
        "power_law_1d" => {
            let growth = match (cfg.opt_f64("growth_a")?, cfg.opt_f64("growth_eta")?) {
                (Some(a), Some(eta)) => Some(GrowthCertificate { a, eta }),
                (None, None) => None,
                _ => return Err(Error::Config("keys `growth_a` and `growth_eta` must be set together".into())),
            };
            JumpKernel::power_law_1d(cfg.f64("exponent")?, growth)
        }
        other => Err(Error::Config(format!("key `kernel`: unknown family `{other}` (gaussian, power_law_1d)"))),
    }
}

fn weights_of(cfg: &Config) -> Result<CycleWeightModel> {
    match cfg.require("weights")? {
        "constant" => CycleWeightModel::constant(cfg.f64("alpha")?),
        "asymptotic" => CycleWeightModel::asymptotic(cfg.f64("alpha")?, cfg.overrides()?),
        "logarithmic" => CycleWeightModel::logarithmic(cfg.f64("gamma")?),
        other => Err(Error::Config(format!("key `weights`: unknown regime `{other}` (constant, asymptotic, logarithmic)"))),
    }
}

/// Kernel, weights and the infinite-volume critical density of a run.
struct Physics {
    kernel: JumpKernel,
    weights: CycleWeightModel,
    rho_c: f64,
}

impl Physics {
    fn new(cfg: &Config) -> Result<Self> {
        let kernel = kernel_of(cfg)?;
        let weights = weights_of(cfg)?;
        let rho_c = critical_density(&kernel, &weights, cfg.f64("tol")?)?.value;
        Ok(Self { kernel, weights, rho_c })
    }

    /// Side of the box holding `n` points at density `rho`.
    fn side_for(&self, n: usize, rho: f64) -> Result<f64> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("density must be positive, got {rho}")));
        }
        Ok((n as f64 / rho).powf(1.0 / self.kernel.dim() as f64))
    }

    /// Box side from exactly one of `side`, `rho`, `rho_factor`.
    fn side(&self, cfg: &Config, n: usize) -> Result<f64> {
        let given = [cfg.opt_f64("side")?, cfg.opt_f64("rho")?, cfg.opt_f64("rho_factor")?];
        match given {
            [Some(l), None, None] => Ok(l),
            [None, Some(rho), None] => self.side_for(n, rho),
            [None, None, Some(f)] => self.side_for(n, f * self.rho_c),
            _ => Err(Error::Config("set exactly one of the keys `side`, `rho`, `rho_factor`".into())),
        }
    }

    fn nu_theory(&self, n: usize, side: f64) -> f64 {
        let rho = n as f64 / side.powi(self.kernel.dim() as i32);
        (1.0 - self.rho_c / rho).max(0.0)
    }
}

fn suggest_alternatives(e: Error) -> Error {
    match e {
        Error::Budget(msg) => Error::Budget(format!(
            "{msg}. The exact sampler is over budget: rerun with `--set sampler=fourier-mcmc` or `--set sampler=fourier-cycles`, or raise `op_budget`"
        )),
        other => other,
    }
}

/// Draws from the Fourier representation with one of the three samplers.
fn fourier_draws(
    cfg: &Config,
    ph: &Physics,
    n: usize,
    side: f64,
    sampler: Sampler,
    rng: &mut ChaCha8Rng,
) -> Result<(ModeSet, Vec<FourierDraw>)> {
    let modes = ModeSet::with_cutoff(&ph.kernel, side, cfg.f64("eps_cut")?)?;
    let draws = cfg.usize("draws")?;
    let out = match sampler {
        Sampler::FourierExact => {
            let table = compute_h(&ph.weights, n)?;
            let limits = BuildLimits { op_budget: cfg.f64("op_budget")?, ..BuildLimits::default() };
            let tables = build_tables_with(&modes, &table, n, limits).map_err(suggest_alternatives)?;
            (0..draws)
                .map(|_| {
                    let occupations = sample_occupations_exact(&tables, rng);
                    let cycles = sample_cycles_given_occupations(&occupations, &table, rng);
                    FourierDraw { occupations, cycles }
                })
                .collect()
        }
        Sampler::FourierMcmc => {
            let table = compute_h(&ph.weights, n)?;
            let steps = cfg.u64("mcmc_steps")?;
            let mut chain = OccupationChain::new(&modes, &table, n)?;
            chain.run(steps, rng);
            (0..draws)
                .map(|_| {
                    chain.run(steps, rng);
                    let occupations = chain.state();
                    let cycles = sample_cycles_given_occupations(&occupations, &table, rng);
                    FourierDraw { occupations, cycles }
                })
                .collect()
        }
        Sampler::FourierCycles => {
            let s = CycleFirstSampler::new(&modes, &ph.weights, n)?;
            (0..draws).map(|_| s.sample(rng)).collect()
        }
        other => unreachable!("{other:?} is not a Fourier sampler"),
    };
    Ok((modes, out))
}

fn spatial_chain(cfg: &Config, ph: &Physics, n: usize, side: f64, seed: u64) -> Result<ChainOutput> {
    let geom = BoxGeometry::with_energy_cutoff(&ph.kernel, side, cfg.f64("eps_cut")?)?;
    let model = SpatialModel::new(&ph.kernel, &ph.weights, &geom, n)?;
    let params = ChainParams {
        p_pos: cfg.f64("p_pos")?,
        proposal_scale: cfg.opt_f64("proposal_scale")?,
        sweeps: cfg.usize("sweeps")?,
        burn_in: cfg.usize("burn_in")?,
        thin: cfg.usize("thin")?,
        seed,
        audit_every: cfg.usize("audit_every")?,
    };
    run_chain(&model, &params)
}

fn nonspatial_spectra(cfg: &Config, weights: &CycleWeightModel, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<CycleSpectrum>> {
    let table = compute_h(weights, n)?;
    let sampler = CycleLengthSampler::new(&table);
    (0..cfg.usize("draws")?).map(|_| CycleSpectrum::new(sampler.sample(n, rng))).collect()
}

/// Cycle spectra from any sampler; `side` is ignored by the nonspatial one.
fn spectra_from(cfg: &Config, ph: &Physics, n: usize, side: f64, sampler: Sampler, seed: u64, index: u64) -> Result<Vec<CycleSpectrum>> {
    let mut rng = stream(seed, index);
    match sampler {
        Sampler::Nonspatial => nonspatial_spectra(cfg, &ph.weights, n, &mut rng),
        Sampler::Spatial => Ok(spatial_chain(cfg, ph, n, side, rng.gen())?.spectra()),
        s => fourier_draws(cfg, ph, n, side, s, &mut rng)?.1.iter().map(|d| CycleSpectrum::new(d.lengths())).collect(),
    }
}

fn nu_report(cfg: &Config, weights: &CycleWeightModel, spectra: &[CycleSpectrum]) -> Result<NuReport> {
    let n = spectra.first().map(|s| s.total()).unwrap_or(0);
    let plateau_k = cfg.opt_usize("nu_k")?.unwrap_or_else(|| default_plateau_k(n));
    let mut ks = match cfg.get("k_grid") {
        Some(_) => cfg.usize_list("k_grid")?,
        None => std::iter::successors(Some(1usize), |k| Some(k * 2)).take_while(|&k| k < n).collect(),
    };
    ks.push(plateau_k);
    ks.sort_unstable();
    ks.dedup();
    nu_sweep(spectra, weights, &ks, plateau_k)
}

fn nu_table(report: &NuReport) -> Table {
    let mut t = Table::new("long-cycle fraction over K", &["K", "raw", "stderr", "corrected"]);
    for r in &report.rows {
        t.row(vec![r.k.to_string(), num(r.raw.mean), num(r.raw.stderr), num(r.corrected)]);
    }
    t
}

fn top(lengths: &[usize], k: usize) -> Vec<usize> {
    lengths.iter().take(k).copied().collect()
}

fn cmd_rho_c(cfg: &Config, rep: &mut Report) -> Result<()> {
    let kernel = kernel_of(cfg)?;
    let weights = weights_of(cfg)?;
    let rc = critical_density(&kernel, &weights, cfg.f64("tol")?)?;
    rep.serialized("rho_c", &rc)?;
    let mut t = Table::new(&format!("critical density {} (residual {})", num(rc.value), num(rc.residual)), &[
        "L", "rho_c_box", "rel_error", "j_residual", "mode_residual",
    ]);
    for l in cfg.f64_list("l_grid")? {
        let geom = BoxGeometry::with_energy_cutoff(&kernel, l, cfg.f64("eps_cut")?)?;
        let fv = finite_volume_critical_density(&kernel, &weights, &geom, None)?;
        let rel = (fv.value - rc.value) / rc.value;
        rep.record("finite_volume", json!({"side": l, "value": fv.value, "rel_error": rel,
            "j_residual": fv.j_residual, "mode_residual": fv.mode_residual}));
        t.row(vec![num(l), num(fv.value), num(rel), num(fv.j_residual), num(fv.mode_residual)]);
    }
    rep.tables.push(t);
    Ok(())
}

fn cmd_hn(cfg: &Config, rep: &mut Report) -> Result<()> {
    let weights = weights_of(cfg)?;
    let n_max = cfg.usize("hn_max")?;
    let table = compute_h(&weights, n_max)?;
    let mut t = Table::new("h_n", &["n", "log_h", "brute", "rel_error"]);
    let mut worst = 0.0f64;
    for n in 0..=n_max {
        let lh = table.log_h(n);
        let (brute, rel) = if n <= HN_ORACLE_MAX {
            let b = brute_force_h(&weights, n)?;
            let rel = ((lh.exp() - b) / b).abs();
            worst = worst.max(rel);
            (Some(b), Some(rel))
        } else {
            (None, None)
        };
        rep.record("h", json!({"n": n, "log_h": lh, "brute": brute, "rel_error": rel}));
        t.row(vec![n.to_string(), num(lh), brute.map(num).unwrap_or_default(), rel.map(num).unwrap_or_default()]);
    }
    let recursion = table.max_recursion_residual();
    rep.record("recursion", json!({"max_relative_residual": recursion}));
    if n_max >= 2 {
        rep.serialized("regularity", &regularity_of(&table, 2.0))?;
    }
    let passed = worst <= 1e-12;
    rep.record("oracle", json!({"n_checked": n_max.min(HN_ORACLE_MAX), "max_rel_error": worst, "passed": passed}));
    rep.tables.push(t);
    if passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!("h_n disagrees with enumeration: relative error {worst:e}")))
    }
}

fn zero_params(cfg: &Config, modes: &ModeSet, nu: f64) -> Result<ZeroModeParams> {
    Ok(ZeroModeParams {
        nu,
        eps: cfg.f64("zero_eps")?,
        delta: cfg.f64("zero_delta")?,
        m_large: cfg.usize("zero_m")?,
        tail_modes: modes.lowest_shell_representatives(5),
    })
}

fn cmd_sample_fourier(cfg: &Config, seed: u64, rep: &mut Report) -> Result<()> {
    let sampler = Sampler::parse(cfg)?;
    if !sampler.is_fourier() {
        return Err(Error::Config("sample-fourier needs sampler = fourier-exact, fourier-mcmc or fourier-cycles".into()));
    }
    let ph = Physics::new(cfg)?;
    let n = cfg.usize("n")?;
    let side = ph.side(cfg, n)?;
    let (modes, draws) = fourier_draws(cfg, &ph, n, side, sampler, &mut stream(seed, 0))?;
    let with_modes = cfg.bool("mode_records")?;
    let nu_theory = ph.nu_theory(n, side);
    rep.record("system", json!({"n": n, "side": side, "modes": modes.len(), "rho_c": ph.rho_c, "nu_theory": nu_theory}));
    let mut acc = ZeroModeAccumulator::new(&modes, zero_params(cfg, &modes, nu_theory)?);
    let mut spectra = Vec::with_capacity(draws.len());
    for (i, d) in draws.iter().enumerate() {
        acc.push(&d.occupations);
        let s = CycleSpectrum::new(d.lengths())?;
        let mut body = json!({"index": i, "n0": d.occupations.get(modes.zero_index()), "cycles": s.lengths().len(),
            "largest": top(s.lengths(), 3)});
        if with_modes {
            body["occupations"] = Value::Array(d.occupations.mode_records(&modes));
        }
        rep.record("draw", body);
        spectra.push(s);
    }
    let zero = acc.finish()?;
    rep.serialized("zero_mode", &zero)?;
    let nu = nu_report(cfg, &ph.weights, &spectra)?;
    rep.serialized("nu", &nu)?;
    let mut t = Table::new("Fourier sampler summary", &["quantity", "value"]);
    for (k, v) in [
        ("side", side),
        ("modes", modes.len() as f64),
        ("mean n0/N", zero.mean_zero_fraction),
        ("sd n0/N", zero.sd_zero_fraction),
        ("P(A)", zero.p_a),
        ("P(B)", zero.p_b),
        ("P(C)", zero.p_c),
        ("nu plateau", nu.plateau.mean),
        ("nu stderr", nu.plateau.stderr),
        ("nu theory", nu_theory),
    ] {
        t.row(vec![k.into(), num(v)]);
    }
    rep.tables.push(t);
    let mut tails = Table::new("tail envelope", &["mode", "eps", "max n_k", "worst excess", "holds"]);
    for c in &zero.tails {
        tails.row(vec![c.mode.to_string(), num(c.eps), c.observed_max.to_string(), num(c.worst_excess), c.holds.to_string()]);
    }
    rep.tables.push(tails);
    rep.tables.push(nu_table(&nu));
    Ok(())
}

fn cmd_sample_spatial(cfg: &Config, seed: u64, rep: &mut Report) -> Result<()> {
    let ph = Physics::new(cfg)?;
    let n = cfg.usize("n")?;
    let side = ph.side(cfg, n)?;
    let out = spatial_chain(cfg, &ph, n, side, stream(seed, 0).gen())?;
    rep.record("system", json!({"n": n, "side": side, "rho_c": ph.rho_c, "nu_theory": ph.nu_theory(n, side)}));
    for r in &out.records {
        rep.record("sample", json!({"sweep": r.sweep, "energy": r.energy, "cycles": r.lengths.len(),
            "largest": top(&r.lengths, 3)}));
    }
    let d = &out.diagnostics;
    rep.record("diagnostics", json!({"position_acceptance": d.position_acceptance, "swap_acceptance": d.swap_acceptance,
        "geweke_z": d.geweke_z, "max_audit_error": d.max_audit_error}));
    let nu = nu_report(cfg, &ph.weights, &out.spectra())?;
    rep.serialized("nu", &nu)?;
    let mut t = Table::new("spatial chain summary", &["quantity", "value"]);
    for (k, v) in [
        ("side", side),
        ("samples", out.records.len() as f64),
        ("position acceptance", d.position_acceptance),
        ("swap acceptance", d.swap_acceptance),
        ("energy Geweke z", d.geweke_z),
        ("max audit error", d.max_audit_error),
        ("nu plateau", nu.plateau.mean),
        ("nu stderr", nu.plateau.stderr),
    ] {
        t.row(vec![k.into(), num(v)]);
    }
    rep.tables.push(t);
    rep.tables.push(nu_table(&nu));
    Ok(())
}

fn theta_of(cfg: &Config, weights: &CycleWeightModel) -> Result<f64> {
    match cfg.opt_f64("theta")? {
        Some(t) => Ok(t),
        None => weights
            .theta()
            .ok_or_else(|| Error::Config("key `theta` is required: the weights have no limiting Ewens parameter".into())),
    }
}

/// Spectra of one run plus the system it came from.
fn run_spectra(cfg: &Config, seed: u64) -> Result<(Physics, usize, Vec<CycleSpectrum>)> {
    let sampler = Sampler::parse(cfg)?;
    let n = cfg.usize("n")?;
    let weights = weights_of(cfg)?;
    if sampler == Sampler::Nonspatial {
        // the kernel plays no role; keep placeholders so Physics is uniform
        let kernel = JumpKernel::gaussian(1, 1.0)?;
        let spectra = nonspatial_spectra(cfg, &weights, n, &mut stream(seed, 0))?;
        return Ok((Physics { kernel, weights, rho_c: f64::NAN }, n, spectra));
    }
    let ph = Physics::new(cfg)?;
    let side = ph.side(cfg, n)?;
    let spectra = spectra_from(cfg, &ph, n, side, sampler, seed, 0)?;
    Ok((ph, n, spectra))
}

fn cmd_verify_pd(cfg: &Config, seed: u64, rep: &mut Report) -> Result<()> {
    let (ph, _, spectra) = run_spectra(cfg, seed)?;
    let theta = theta_of(cfg, &ph.weights)?;
    let nu = nu_report(cfg, &ph.weights, &spectra)?;
    rep.serialized("nu", &nu)?;
    let fit = pd_fit_test(&spectra, nu.plateau.mean, theta, cfg.usize("coordinates")?, cfg.usize("reference_draws")?, &mut stream(seed, 1))?;
    rep.serialized("pd_fit", &fit)?;
    let mut t = Table::new("Poisson-Dirichlet fit", &["test", "statistic", "p_value"]);
    for (i, c) in fit.coordinates.iter().enumerate() {
        t.row(vec![format!("KS coordinate {}", i + 1), num(c.distance), num(c.p_value)]);
    }
    t.row(vec!["sum of squares".into(), num(fit.sum_squares.mean), num(fit.sum_squares_p_value)]);
    t.row(vec!["reference sum of squares".into(), num(fit.reference_sum_squares.mean), String::new()]);
    t.row(vec!["nu plateau".into(), num(nu.plateau.mean), String::new()]);
    rep.tables.push(t);
    Ok(())
}

fn cmd_giant_cycle(cfg: &Config, seed: u64, rep: &mut Report) -> Result<()> {
    let (ph, _, spectra) = run_spectra(cfg, seed)?;
    let nu = nu_report(cfg, &ph.weights, &spectra)?;
    rep.serialized("nu", &nu)?;
    let g = giant_cycle_test(&spectra, nu.plateau.mean)?;
    rep.serialized("giant_cycle", &g)?;
    let mut t = Table::new("giant cycle", &["quantity", "value"]);
    t.row(vec!["nu plateau".into(), num(nu.plateau.mean)]);
    t.row(vec!["P(l1/(nu N) > 0.9)".into(), num(g.p_above_0_9)]);
    t.row(vec!["mean l1/(nu N)".into(), num(g.mean)]);
    for (q, v) in [0.1, 0.5, 0.9].iter().zip(&g.quantiles) {
        t.row(vec![format!("quantile {q}"), num(*v)]);
    }
    rep.tables.push(t);
    Ok(())
}

fn cmd_scan_density(cfg: &Config, seed: u64, rep: &mut Report) -> Result<()> {
    let sampler = Sampler::parse(cfg)?;
    if sampler == Sampler::Nonspatial {
        return Err(Error::Config("scan-density needs a spatial or Fourier sampler".into()));
    }
    let ph = Physics::new(cfg)?;
    let n = cfg.usize("n")?;
    let theta = cfg.opt_f64("theta")?.or_else(|| ph.weights.theta());
    let mut t = Table::new("density scan", &["rho/rho_c", "rho", "nu_hat", "stderr", "theory", "test", "value"]);
    for (i, f) in cfg.f64_list("rho_grid")?.into_iter().enumerate() {
        let rho = f * ph.rho_c;
        let side = ph.side_for(n, rho)?;
        let spectra = spectra_from(cfg, &ph, n, side, sampler, seed, 2 * i as u64)?;
        let nu = nu_report(cfg, &ph.weights, &spectra)?;
        let theory = ph.nu_theory(n, side);
        let mut row = json!({"rho_factor": f, "rho": rho, "side": side, "nu": nu.plateau.mean,
            "stderr": nu.plateau.stderr, "raw": nu.raw_at_plateau.mean, "theory": theory});
        let (test, value) = if f > 1.0 && nu.plateau.mean > 0.0 {
            let mut rng = stream(seed, 2 * i as u64 + 1);
            match theta {
                Some(th) => {
                    let fit = pd_fit_test(&spectra, nu.plateau.mean, th, cfg.usize("coordinates")?, cfg.usize("reference_draws")?, &mut rng)?;
                    let v = fit.sum_squares.mean;
                    row["pd_fit"] = serde_json::to_value(&fit).map_err(|e| Error::Numeric(e.to_string()))?;
                    ("sum of squares".to_string(), num(v))
                }
                None => {
                    let g = giant_cycle_test(&spectra, nu.plateau.mean)?;
                    row["giant_cycle"] = serde_json::to_value(&g).map_err(|e| Error::Numeric(e.to_string()))?;
                    ("P(giant)".to_string(), num(g.p_above_0_9))
                }
            }
        } else {
            (String::new(), String::new())
        };
        rep.record("density", row);
        t.row(vec![num(f), num(rho), num(nu.plateau.mean), num(nu.plateau.stderr), num(theory), test, value]);
    }
    rep.tables.push(t);
    Ok(())
}

fn cmd_selftest(seed: u64, rep: &mut Report) -> Result<()> {
    let mut checks: Vec<(&str, f64, bool)> = Vec::new();
    let models = [
        CycleWeightModel::constant(2f64.ln())?,
        CycleWeightModel::asymptotic(0.3, vec![(1, -0.5), (2, 1.0)])?,
        CycleWeightModel::logarithmic(1.0)?,
    ];
    let mut worst = 0.0f64;
    for m in &models {
        let t = compute_h(m, 8)?;
        for n in 1..=8 {
            let b = brute_force_h(m, n)?;
            worst = worst.max(((t.h(n) - b) / b).abs());
        }
    }
    checks.push(("h_n vs enumeration", worst, worst <= 1e-12));

    let ewens = CycleWeightModel::constant(0.0)?;
    let kern = JumpKernel::gaussian(3, 1.0 / (4.0 * std::f64::consts::PI))?;
    let rc = critical_density(&kern, &ewens, 1e-12)?.value;
    checks.push(("rho_c = zeta(3/2)", rc, (rc - 2.612_375_348_685_488).abs() < 1e-8));

    let modes = ModeSet::from_energies(1.0, &[0.3, 0.7])?;
    let table = compute_h(&ewens, 5)?;
    let tables = build_tables(&modes, &table, 5)?;
    let dp = occupation_law_exact(&modes, &table, 5)?
        .iter()
        .map(|(c, p)| (tables.log_probability(&OccupationState::from_dense(c)).exp() - p).abs())
        .fold(0.0, f64::max);
    checks.push(("DP vs enumeration", dp, dp <= 1e-12));
    checks.push(("generating identity", tables.identity_residual(), tables.identity_residual() <= 1e-10));

    let two = ModeSet::from_energies(2.0, &[0.8, 1.3])?;
    let big = compute_h(&ewens, 400)?;
    let mu = MuLambda::from_tables(&build_tables(&two, &big, 400)?, &two, &ewens)?;
    let closed = mu_lambda_laplace(&two, &ewens, 0.3)?;
    let lap = ((closed - mu.laplace(0.3)) / closed).abs();
    checks.push(("Laplace closed form", lap, lap <= 1e-10));

    let mut rng = stream(seed, 0);
    let r = pd_sum_squares_reference(1.0, 4000, 200, &mut rng)?;
    let z = (r.estimate.mean - 0.5) / r.estimate.stderr;
    checks.push(("PD sum of squares z", z, z.abs() < 4.0));

    let geom = BoxGeometry::new(3.0, 3, 1.0)?;
    let model = SpatialModel::new(&kern, &ewens, &geom, 12)?;
    let mut chain = SpatialChain::new(&model, rng.gen(), None)?;
    for _ in 0..200 {
        chain.sweep(0.5);
    }
    let audit = chain.audit()?;
    checks.push(("spatial energy audit", audit, audit <= 1e-10));

    let mut t = Table::new("selftest", &["check", "value", "passed"]);
    let mut failed = Vec::new();
    for (name, value, passed) in checks {
        rep.record("check", json!({"name": name, "value": value, "passed": passed}));
        t.row(vec![name.into(), num(value), passed.to_string()]);
        if !passed {
            failed.push(name);
        }
    }
    rep.tables.push(t);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("failed checks: {}", failed.join(", "))))
    }
}

/// Layers defaults, the config file, the seed variable and `--set`.
fn effective_config(common: &Common) -> Result<(Config, String)> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.merge_text(&text, &path.display().to_string())?;
    }
    if let Ok(v) = std::env::var(SEED_ENV) {
        cfg.set(&format!("seed={v}"), SEED_ENV)?;
    }
    for s in &common.set {
        cfg.set(s, "--set")?;
    }
    if let Some(s) = common.seed {
        cfg.set(&format!("seed={s}"), "--seed")?;
    }
    let seed = cfg.u64("seed")?.to_string();
    Ok((cfg, seed))
}

fn execute(name: &str, common: &Common, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let (cfg, _) = effective_config(common)?;
    if common.print_config {
        stdout.write_all(cfg.to_annotated_text().as_bytes())?;
        return Ok(());
    }
    let seed = cfg.u64("seed")?;
    let mut manifest = RunManifest {
        command: name.into(),
        params: cfg.as_map(),
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: cfg.digest(),
        started_unix: None,
        finished_unix: None,
    };
    let mut rep = Report::default();
    rep.serialized("header", &manifest)?;
    let started = unix_now();
    let result = match name {
        "rho-c" => cmd_rho_c(&cfg, &mut rep),
        "hn" => cmd_hn(&cfg, &mut rep),
        "sample-fourier" => cmd_sample_fourier(&cfg, seed, &mut rep),
        "sample-spatial" => cmd_sample_spatial(&cfg, seed, &mut rep),
        "verify-pd" => cmd_verify_pd(&cfg, seed, &mut rep),
        "giant-cycle" => cmd_giant_cycle(&cfg, seed, &mut rep),
        "scan-density" => cmd_scan_density(&cfg, seed, &mut rep),
        "selftest" => cmd_selftest(seed, &mut rep),
        _ => unreachable!(),
    };
    if let Err(e) = &result {
        rep.record("error", json!({"exit_code": e.exit_code(), "message": e.to_string()}));
    }
    let mut records = rep.lines.join("\n");
    records.push('\n');
    let tables: String = rep.tables.iter().map(|t| t.render() + "\n").collect();
    match &common.out {
        Some(path) => {
            std::fs::write(path, records)?;
            manifest.started_unix = Some(started);
            manifest.finished_unix = Some(unix_now());
            let mut side = path.clone().into_os_string();
            side.push(".manifest.json");
            let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numeric(e.to_string()))?;
            std::fs::write(PathBuf::from(side), body + "\n")?;
            stdout.write_all(tables.as_bytes())?;
        }
        None => {
            stdout.write_all(records.as_bytes())?;
            stderr.write_all(tables.as_bytes())?;
        }
    }
    result
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 i/o, 2 configuration or domain error,
/// 3 numeric failure, 4 budget refusal.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (name, common) = cli.command.parts();
    match execute(name, common, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "spatperm {name}: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("spatperm").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn rho_c_headline() {
        let (code, out, _) = call(&["rho-c", "--set", "beta=0.0795774715459477", "--set", "l_grid=8"]);
        assert_eq!(code, 0);
        let first: Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
        assert_eq!(first["record"], "header");
        let rc: Value = serde_json::from_str(out.lines().nth(1).unwrap()).unwrap();
        assert!((rc["value"].as_f64().unwrap() - 2.612375).abs() < 1e-6);
    }

    #[test]
    fn missing_beta_names_key() {
        let (code, _, err) = call(&["rho-c"]);
        assert_eq!(code, 2);
        assert!(err.contains("beta"), "{err}");
    }

    #[test]
    fn bad_flag_and_bad_key() {
        assert_eq!(call(&["rho-c", "--bogus"]).0, 2);
        let (code, _, err) = call(&["rho-c", "--set", "betta=1"]);
        assert_eq!(code, 2);
        assert!(err.contains("betta"));
    }

    #[test]
    fn budget_refusal_suggests_mcmc() {
        let (code, _, err) = call(&[
            "sample-fourier", "--set", "beta=0.0795774715459477", "--set", "n=400", "--set", "side=6",
            "--set", "op_budget=1e3", "--set", "draws=1",
        ]);
        assert_eq!(code, 4);
        assert!(err.contains("fourier-mcmc") && err.contains("operations"), "{err}");
    }

    #[test]
    fn print_config_shows_origins() {
        let (code, out, _) = call(&["hn", "--set", "hn_max=5", "--seed", "9", "--print-config"]);
        assert_eq!(code, 0);
        assert!(out.contains("hn_max = 5  # --set") && out.contains("seed = 9  # --seed"));
    }

    #[test]
    fn table_alignment() {
        let mut t = Table::new("x", &["a", "long"]);
        t.row(vec!["12345".into(), "1".into()]);
        let r = t.render();
        let lines: Vec<&str> = r.lines().collect();
        assert_eq!(lines[1].len(), lines[3].len());
    }
}
