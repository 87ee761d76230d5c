//! Flat `key = value` run configuration.
//!
//! Files hold one assignment per line; `#` starts a comment. Layers are
//! merged with later layers winning: defaults, then the file, then the
//! seed environment variable, then command-line assignments.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable overriding the seed.
pub const SEED_ENV: &str = "SPATPERM_SEED";

/// Every accepted key with its default (empty means no default).
pub const KEYS: &[(&str, &str)] = &[
    ("kernel", "gaussian"),
    ("dim", "3"),
    ("beta", ""),
    ("exponent", ""),
    ("growth_a", ""),
    ("growth_eta", ""),
    ("weights", "constant"),
    ("alpha", "0"),
    ("overrides", ""),
    ("gamma", ""),
    ("n", ""),
    ("rho", ""),
    ("rho_factor", ""),
    ("side", ""),
    ("l_grid", "8,16,32"),
    ("rho_grid", "0.5,2"),
    ("eps_cut", "40"),
    ("op_budget", "1e9"),
    ("sampler", "fourier-exact"),
    ("draws", "1000"),
    ("mcmc_steps", "1000000"),
    ("sweeps", "10000"),
    ("burn_in", "1000"),
    ("thin", "10"),
    ("p_pos", "0.5"),
    ("proposal_scale", ""),
    ("audit_every", "1000"),
    ("nu_k", ""),
    ("k_grid", ""),
    ("theta", ""),
    ("coordinates", "3"),
    ("reference_draws", "10000"),
    ("hn_max", "100"),
    ("mode_records", "false"),
    ("zero_eps", "0.1"),
    ("zero_delta", "0.25"),
    ("zero_m", "20"),
    ("tol", "1e-10"),
    ("seed", "1"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    value: String,
    origin: String,
}

/// Effective configuration with the origin of every value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl Default for Config {
    fn default() -> Self {
        let entries = KEYS
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.to_string(), Entry { value: v.to_string(), origin: "default".into() }))
            .collect();
        Self { entries }
    }
}

impl Config {
    /// Applies the assignments of a config file's text.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{origin}:{}: expected `key = value`, found `{}`", i + 1, raw.trim()))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !known(k) {
                return Err(Error::Config(format!("{origin}:{}: unknown key `{k}`", i + 1)));
            }
            self.entries.insert(k.to_string(), Entry { value: v.to_string(), origin: format!("{origin}:{}", i + 1) });
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, assignment: &str, origin: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}: expected key=value, found `{assignment}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !known(k) {
            return Err(Error::Config(format!("{origin}: unknown key `{k}`")));
        }
        self.entries.insert(k.to_string(), Entry { value: v.to_string(), origin: origin.to_string() });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        debug_assert!(known(key), "unregistered key {key}");
        self.entries.get(key).map(|e| e.value.as_str()).filter(|v| !v.is_empty())
    }

    fn origin(&self, key: &str) -> String {
        self.entries.get(key).map(|e| e.origin.clone()).unwrap_or_else(|| "unset".into())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Config(format!("key `{key}` ({}): cannot parse `{v}`", self.origin(key))))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key, self.require(key)?)
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|v| self.parse(key, v)).transpose()
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.require(key)?;
        // accept integral floats such as 1e6
        match v.parse::<usize>() {
            Ok(x) => Ok(x),
            Err(_) => {
                let f: f64 = self.parse(key, v)?;
                if f >= 0.0 && f.fract() == 0.0 && f < 1e18 {
                    Ok(f as usize)
                } else {
                    Err(Error::Config(format!("key `{key}` ({}): expected a nonnegative integer, found `{v}`", self.origin(key))))
                }
            }
        }
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        if self.get(key).is_some() { self.usize(key).map(Some) } else { Ok(None) }
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.parse(key, self.require(key)?)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key, self.require(key)?)
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.require(key)?.split(',').map(|s| self.parse(key, s.trim())).collect()
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.require(key)?.split(',').map(|s| self.parse(key, s.trim())).collect()
    }

    /// `j:alpha` pairs separated by commas.
    pub fn overrides(&self) -> Result<Vec<(usize, f64)>> {
        match self.get("overrides") {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|p| {
                    let (j, a) = p
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("key `overrides`: expected j:alpha, found `{p}`")))?;
                    Ok((self.parse("overrides", j.trim())?, self.parse("overrides", a.trim())?))
                })
                .collect(),
        }
    }

    /// Canonical `key = value` text of the effective configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, e) in &self.entries {
            if !e.value.is_empty() {
                let _ = writeln!(s, "{k} = {}", e.value);
            }
        }
        s
    }

    /// `key = value  # origin` lines for `--print-config`.
    pub fn to_annotated_text(&self) -> String {
        let mut s = String::new();
        for (k, e) in &self.entries {
            let _ = writeln!(s, "{k} = {}  # {}", e.value, e.origin);
        }
        s
    }

    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.entries.iter().filter(|(_, e)| !e.value.is_empty()).map(|(k, e)| (k.clone(), e.value.clone())).collect()
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.to_text().as_bytes());
        h.iter().map(|b| format!("{b:02x}")).collect()
    }
}
