//! Flat `key = value` configuration with `#` comments; unknown keys are
//! rejected. The same text, written canonically, is the config echo stored
//! in checkpoints.

use std::fmt::Write as _;
use std::str::FromStr;

use neurodegen_core::nets::ArchConfig;
use neurodegen_core::personalize::DEFAULT_ITERATIONS;
use neurodegen_core::svr::SvrParams;
use neurodegen_core::train::{AdamParams, TrainConfig};

use crate::error::{Error, Result};

/// Everything a pipeline run needs besides its data files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub dilation: usize,
    pub svr: SvrParams,
    pub personalize_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            dilation: 1,
            svr: SvrParams::default(),
            personalize_iters: DEFAULT_ITERATIONS,
        }
    }
}

/// Canonical key order of the echo.
pub const KEYS: [&str; 22] = [
    "grid",
    "latent",
    "bins",
    "base_channels",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "enable_p",
    "enable_c",
    "tau",
    "seed",
    "age_min",
    "age_max",
    "regions",
    "dilation",
    "svr_c",
    "svr_epsilon",
    "svr_gamma",
    "personalize_iters",
];

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Usage(format!("invalid value `{raw}` for config key `{key}`")))
}

impl PipelineConfig {
    /// Sets one key; unknown keys and malformed values are usage errors.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "grid" => t.arch.grid = parse_value(key, raw)?,
            "latent" => t.arch.latent = parse_value(key, raw)?,
            "bins" => t.arch.bins = parse_value(key, raw)?,
            "base_channels" => t.arch.base_channels = parse_value(key, raw)?,
            "epochs" => t.epochs = parse_value(key, raw)?,
            "batch_size" => t.batch_size = parse_value(key, raw)?,
            "lr" => t.adam.lr = parse_value(key, raw)?,
            "beta1" => t.adam.beta1 = parse_value(key, raw)?,
            "beta2" => t.adam.beta2 = parse_value(key, raw)?,
            "adam_eps" => t.adam.eps = parse_value(key, raw)?,
            "enable_p" => t.enable_p = parse_value(key, raw)?,
            "enable_c" => t.enable_c = parse_value(key, raw)?,
            "tau" => t.tau = parse_value(key, raw)?,
            "seed" => t.seed = parse_value(key, raw)?,
            "age_min" => t.age_min = parse_value(key, raw)?,
            "age_max" => t.age_max = parse_value(key, raw)?,
            "regions" => t.regions = parse_value(key, raw)?,
            "dilation" => self.dilation = parse_value(key, raw)?,
            "svr_c" => self.svr.c = parse_value(key, raw)?,
            "svr_epsilon" => self.svr.epsilon = parse_value(key, raw)?,
            "svr_gamma" => self.svr.gamma = parse_value(key, raw)?,
            "personalize_iters" => self.personalize_iters = parse_value(key, raw)?,
            _ => return Err(Error::Usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Overlays the lines of `text` on the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (key, value) in entries(text)? {
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.regions < 2 {
            return Err(Error::Usage("regions must be at least 2".into()));
        }
        Ok(())
    }

    /// Canonical text: every key in [`KEYS`] order, floats in shortest
    /// round-trip form.
    pub fn echo(&self) -> String {
        let t = &self.train;
        let ArchConfig {
            grid,
            latent,
            bins,
            base_channels,
        } = t.arch;
        let AdamParams { lr, beta1, beta2, eps } = t.adam;
        let values: [String; 22] = [
            grid.to_string(),
            latent.to_string(),
            bins.to_string(),
            base_channels.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            lr.to_string(),
            beta1.to_string(),
            beta2.to_string(),
            eps.to_string(),
            t.enable_p.to_string(),
            t.enable_c.to_string(),
            t.tau.to_string(),
            t.seed.to_string(),
            t.age_min.to_string(),
            t.age_max.to_string(),
            t.regions.to_string(),
            self.dilation.to_string(),
            self.svr.c.to_string(),
            self.svr.epsilon.to_string(),
            self.svr.gamma.to_string(),
            self.personalize_iters.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// `(key, value)` pairs of a config text, skipping blanks and comments.
pub fn entries(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected `key = value`, got `{line}`", n + 1)))?;
        out.push((k.trim(), v.trim()));
    }
    Ok(out)
}
