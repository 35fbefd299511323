//! Run configuration shared by the pipeline and batch evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::margin::DEFAULT_SMOOTHING;
use crate::metrics::{DEFAULT_F_SCORE_TAU, DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLE_SEED};
use crate::surface_recon::{DEFAULT_RESOLUTION, DEFAULT_SIGMA};

pub const CONFIG_ENV: &str = "CROWNFORGE_CONFIG";
pub const CONFIG_KEYS: [&str; 7] = [
    "resolution",
    "sigma",
    "lambda",
    "f_score_tau",
    "sample_count",
    "seeds",
    "smoothing",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Poisson grid nodes per axis.
    pub resolution: usize,
    /// Gaussian low-pass width in cells.
    pub sigma: f64,
    /// Curvature weight exponent of the loss.
    pub lambda: f64,
    pub f_score_tau: f64,
    /// Surface samples per mesh for metrics.
    pub sample_count: usize,
    /// The first seed drives network parameters and surface sampling.
    pub seeds: Vec<u64>,
    pub smoothing: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            resolution: DEFAULT_RESOLUTION,
            sigma: DEFAULT_SIGMA,
            lambda: 1.0,
            f_score_tau: DEFAULT_F_SCORE_TAU,
            sample_count: DEFAULT_SAMPLE_COUNT,
            seeds: vec![DEFAULT_SAMPLE_SEED],
            smoothing: DEFAULT_SMOOTHING,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for `{key}`: `{value}`")))
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?)
    }

    /// Overrides one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "resolution" => self.resolution = parse_num(key, value)?,
            "sigma" => self.sigma = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "f_score_tau" => self.f_score_tau = parse_num(key, value)?,
            "sample_count" => self.sample_count = parse_num(key, value)?,
            "smoothing" => self.smoothing = parse_num(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|s| parse_num(key, s.trim()))
                    .collect::<Result<_>>()?;
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.resolution < 16 {
            return fail("resolution must be at least 16");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return fail("sigma must be a non-negative number");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("lambda must be a non-negative number");
        }
        if !(self.f_score_tau.is_finite() && self.f_score_tau > 0.0) {
            return fail("f_score_tau must be positive");
        }
        if self.sample_count == 0 {
            return fail("sample_count must be positive");
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return fail("smoothing must be a non-negative number");
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seeds[0]
    }

    /// Canonical `key=value` form, one line per key in a fixed order.
    pub fn to_text(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let mut s = String::new();
        writeln!(s, "resolution={}", self.resolution).unwrap();
        writeln!(s, "sigma={}", self.sigma).unwrap();
        writeln!(s, "lambda={}", self.lambda).unwrap();
        writeln!(s, "f_score_tau={}", self.f_score_tau).unwrap();
        writeln!(s, "sample_count={}", self.sample_count).unwrap();
        writeln!(s, "seeds={}", seeds.join(",")).unwrap();
        writeln!(s, "smoothing={}", self.smoothing).unwrap();
        s
    }

    /// SHA-256 of [`RunConfig::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .fold(String::new(), |mut s, b| {
                write!(s, "{b:02x}").unwrap();
                s
            })
    }

    /// Hash line plus the canonical config, each line prefixed with `prefix`.
    pub fn header(&self, prefix: &str) -> String {
        let mut s = format!("{prefix}config_hash={}\n", self.hash());
        for line in self.to_text().lines() {
            writeln!(s, "{prefix}{line}").unwrap();
        }
        s
    }
}
