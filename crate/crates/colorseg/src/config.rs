//! Run configuration: defaults, `key=value` config files, and validation.
//!
//! Config files hold one `key=value` per line; `#` starts a comment and
//! blank lines are skipped. Unknown keys and unparseable values are
//! configuration errors. Command-line flags are applied after the file, so
//! flags win.

use std::path::Path;

use colorseg_core::loss::StructuringElement;
use colorseg_core::postprocess::{Connectivity, MergeMetric};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub colors: u8,
    pub margin: f64,
    pub mu: f64,
    pub background_weight: f64,
    pub element: StructuringElement,
    pub lr: f64,
    pub batch: usize,
    pub iters: u64,
    pub depth: usize,
    pub base_channels: usize,
    pub batchnorm: bool,
    pub augment: bool,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub tau: usize,
    pub rho: f64,
    pub merge_metric: MergeMetric,
    pub connectivity: Connectivity,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            colors: 9,
            margin: 21.0,
            mu: 7.0,
            background_weight: 1.0,
            element: StructuringElement::Disc,
            lr: 1e-3,
            batch: 8,
            iters: 2000,
            depth: 3,
            base_channels: 8,
            batchnorm: false,
            augment: false,
            seed: 0,
            checkpoint_every: 500,
            tau: 0,
            rho: 0.0,
            merge_metric: MergeMetric::MinSetDistance,
            connectivity: Connectivity::Four,
        }
    }
}

fn bad_value(key: &str, value: &str, want: &str) -> CliError {
    CliError::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad_value(key, value, "a finite number"))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse::<u64>()
        .map_err(|_| bad_value(key, value, "a non-negative integer"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(key, value, "true or false")),
    }
}

pub fn parse_merge_metric(value: &str) -> Result<MergeMetric> {
    match value {
        "minset" => Ok(MergeMetric::MinSetDistance),
        "hausdorff" => Ok(MergeMetric::Hausdorff),
        _ => Err(CliError::Config(format!(
            "merge metric must be `minset` or `hausdorff`, got `{value}`"
        ))),
    }
}

pub fn parse_connectivity(value: &str) -> Result<Connectivity> {
    match value {
        "4" => Ok(Connectivity::Four),
        "8" => Ok(Connectivity::Eight),
        _ => Err(CliError::Config(format!(
            "connectivity must be 4 or 8, got `{value}`"
        ))),
    }
}

fn parse_element(value: &str) -> Result<StructuringElement> {
    match value {
        "disc" => Ok(StructuringElement::Disc),
        "square" => Ok(StructuringElement::Square),
        _ => Err(CliError::Config(format!(
            "element must be `disc` or `square`, got `{value}`"
        ))),
    }
}

impl RunConfig {
    /// Applies one `key=value` pair. Unknown keys are errors.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "colors" => {
                self.colors = value
                    .parse::<u8>()
                    .map_err(|_| bad_value(key, value, "an integer in 2..=255"))?
            }
            "margin" => self.margin = parse_f64(key, value)?,
            "mu" => self.mu = parse_f64(key, value)?,
            "background_weight" => self.background_weight = parse_f64(key, value)?,
            "element" => self.element = parse_element(value)?,
            "lr" => self.lr = parse_f64(key, value)?,
            "batch" => self.batch = parse_u64(key, value)? as usize,
            "iters" => self.iters = parse_u64(key, value)?,
            "depth" => self.depth = parse_u64(key, value)? as usize,
            "base_channels" => self.base_channels = parse_u64(key, value)? as usize,
            "batchnorm" => self.batchnorm = parse_bool(key, value)?,
            "augment" => self.augment = parse_bool(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_u64(key, value)?,
            "tau" => self.tau = parse_u64(key, value)? as usize,
            "rho" => self.rho = parse_f64(key, value)?,
            "merge_metric" => self.merge_metric = parse_merge_metric(value)?,
            "connectivity" => self.connectivity = parse_connectivity(value)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parses a config file on top of `self` (later lines win over earlier).
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected key=value, got `{line}`",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors < 2 {
            return Err(CliError::Config("colors must be at least 2".into()));
        }
        if self.margin < 0.0 {
            return Err(CliError::Config("margin must be non-negative".into()));
        }
        if self.mu < 0.0 {
            return Err(CliError::Config("mu must be non-negative".into()));
        }
        if self.background_weight < 0.0 {
            return Err(CliError::Config(
                "background_weight must be non-negative".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(CliError::Config("lr must be positive".into()));
        }
        if self.batch == 0 {
            return Err(CliError::Config("batch must be at least 1".into()));
        }
        if self.depth == 0 {
            return Err(CliError::Config("depth must be at least 1".into()));
        }
        if self.base_channels == 0 {
            return Err(CliError::Config("base_channels must be at least 1".into()));
        }
        if self.rho < 0.0 {
            return Err(CliError::Config("rho must be non-negative".into()));
        }
        Ok(())
    }
}
