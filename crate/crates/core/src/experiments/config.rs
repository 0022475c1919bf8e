//! Experiment configuration: typed struct, per-kind defaults, and a flat
//! `key = value` text format for config files.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::InitScheme;
use crate::network::BiasMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Survival estimates over an `n x k` grid, with closed-form bounds.
    #[serde(rename = "grid")]
    Grid,
    /// Follow the width `n(k) = min_width(p, k)` that pins the lower bound
    /// at `p`, recording estimates and layerwise variance statistics.
    #[serde(rename = "path")]
    ConstantLbPath,
    /// Plain vs sign-flipped vs batch-centered living fractions.
    #[serde(rename = "init-comparison")]
    InitComparison,
    /// Survival estimates for conv stacks over channels x kernel x depth.
    #[serde(rename = "conv-grid")]
    ConvGrid,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Grid => "grid",
            ExperimentKind::ConstantLbPath => "path",
            ExperimentKind::InitComparison => "init-comparison",
            ExperimentKind::ConvGrid => "conv-grid",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(ExperimentKind::Grid),
            "path" => Ok(ExperimentKind::ConstantLbPath),
            "init-comparison" => Ok(ExperimentKind::InitComparison),
            "conv-grid" => Ok(ExperimentKind::ConvGrid),
            _ => Err(Error::invalid(format!(
                "unknown experiment kind '{s}' (grid, path, init-comparison, conv-grid)"
            ))),
        }
    }
}

fn doublings(max: u32) -> Vec<u32> {
    let mut v = Vec::new();
    let mut k = 1u32;
    while k <= max {
        v.push(k);
        k = k.saturating_mul(2);
    }
    v
}

/// Full description of one sweep. Fields irrelevant to a kind keep their
/// defaults and are ignored by its runner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n_values: Vec<u32>,
    pub k_values: Vec<u32>,
    /// Lower-bound level `p` tracked by the constant-bound path.
    pub target_lower_bound: f64,
    /// Depth cutoff for the path kind.
    pub max_depth: u32,
    pub scheme: InitScheme,
    pub bias_mode: BiasMode,
    /// Points per trial batch (`M`).
    pub points_per_trial: usize,
    pub trials: u64,
    pub base_seed: u64,
    pub output_dir: PathBuf,
    /// Channel counts for the conv grid.
    pub channels: Vec<u32>,
    /// Kernel sides for the conv grid (odd).
    pub kernel_sides: Vec<u32>,
    /// Image side `d` for the conv grid.
    pub spatial_side: u32,
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let common = ExperimentConfig {
            kind,
            n_values: (1..=15).collect(),
            k_values: doublings(256),
            target_lower_bound: 0.5,
            max_depth: 256,
            scheme: InitScheme::He,
            bias_mode: BiasMode::ZeroBias,
            points_per_trial: 1024,
            trials: 1024,
            base_seed: 0,
            output_dir: PathBuf::from(format!("results/{}", kind.as_str())),
            channels: (1..=4).collect(),
            kernel_sides: vec![1, 3],
            spatial_side: 8,
        };
        match kind {
            ExperimentKind::Grid => common,
            ExperimentKind::ConstantLbPath => common,
            ExperimentKind::InitComparison => ExperimentConfig {
                n_values: vec![1, 2, 4, 8],
                k_values: doublings(64),
                ..common
            },
            // conv forward passes cost far more per point, so the default
            // conv sweep uses smaller batches and fewer trials
            ExperimentKind::ConvGrid => ExperimentConfig {
                k_values: doublings(32),
                points_per_trial: 256,
                trials: 512,
                ..common
            },
        }
    }

    /// Applies one `key = value` override. Unknown keys are errors so typos
    /// in config files fail loudly.
    pub fn apply_key_value(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::malformed(format!("config value for '{what}'"), value);
        match key {
            "kind" => {
                let kind: ExperimentKind = value.parse()?;
                if kind != self.kind {
                    return Err(Error::invalid(format!(
                        "config kind '{kind}' does not match the requested experiment '{}'",
                        self.kind
                    )));
                }
            }
            "n_values" => self.n_values = parse_u32_list(value)?,
            "k_values" => self.k_values = parse_u32_list(value)?,
            "p" | "target_lower_bound" => {
                self.target_lower_bound = value.parse().map_err(|_| bad(key))?
            }
            "k_max" | "max_depth" => {
                self.max_depth = value.parse().map_err(|_| bad(key))?;
                self.k_values = doublings(self.max_depth);
            }
            "scheme" => self.scheme = value.parse()?,
            "bias_mode" => {
                self.bias_mode = match value {
                    "zero" => BiasMode::ZeroBias,
                    "free" => BiasMode::FreeBias,
                    _ => return Err(bad(key)),
                }
            }
            "M" | "points_per_trial" => {
                self.points_per_trial = value.parse().map_err(|_| bad(key))?
            }
            "trials" => self.trials = value.parse().map_err(|_| bad(key))?,
            "seed" | "base_seed" => self.base_seed = value.parse().map_err(|_| bad(key))?,
            "out" | "output_dir" => self.output_dir = PathBuf::from(value),
            "channels" => self.channels = parse_u32_list(value)?,
            "kernel_sides" => self.kernel_sides = parse_u32_list(value)?,
            "d" | "spatial_side" => self.spatial_side = value.parse().map_err(|_| bad(key))?,
            _ => {
                return Err(Error::malformed(
                    "config key",
                    format!("unknown key '{key}'"),
                ))
            }
        }
        Ok(())
    }

    /// Parses a flat config file: `key = value` lines, `#` comments.
    pub fn apply_config_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::malformed(
                    "config line",
                    format!("line {}: expected 'key = value', got '{raw}'", lineno + 1),
                ));
            };
            self.apply_key_value(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.points_per_trial == 0 {
            return Err(Error::invalid("points_per_trial (M) must be >= 1"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::invalid("output_dir must not be empty"));
        }
        // probe the scheme parameters once so bad values fail before any work
        self.scheme.resolved_variance(1)?;
        match self.kind {
            ExperimentKind::Grid | ExperimentKind::InitComparison => {
                if self.n_values.is_empty() || self.k_values.is_empty() {
                    return Err(Error::invalid("n_values and k_values must be non-empty"));
                }
                if self.n_values.contains(&0) || self.k_values.contains(&0) {
                    return Err(Error::invalid("n and k values must be >= 1"));
                }
            }
            ExperimentKind::ConstantLbPath => {
                if !(self.target_lower_bound > 0.0 && self.target_lower_bound < 1.0) {
                    return Err(Error::invalid(format!(
                        "p must lie strictly in (0, 1), got {}",
                        self.target_lower_bound
                    )));
                }
                if self.max_depth == 0 {
                    return Err(Error::invalid("k_max must be >= 1"));
                }
                if self.k_values.is_empty() || self.k_values.contains(&0) {
                    return Err(Error::invalid("k_values must be non-empty and >= 1"));
                }
            }
            ExperimentKind::ConvGrid => {
                if self.channels.is_empty() || self.kernel_sides.is_empty() || self.k_values.is_empty()
                {
                    return Err(Error::invalid(
                        "channels, kernel_sides and k_values must be non-empty",
                    ));
                }
                if self.channels.contains(&0) || self.k_values.contains(&0) {
                    return Err(Error::invalid("channels and k values must be >= 1"));
                }
                for &m in &self.kernel_sides {
                    if m % 2 == 0 || m > self.spatial_side {
                        return Err(Error::invalid(format!(
                            "kernel side {m} must be odd and at most d = {}",
                            self.spatial_side
                        )));
                    }
                }
                if self.spatial_side == 0 {
                    return Err(Error::invalid("spatial side d must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Comma-separated integers; `a-b` tokens expand to inclusive ranges
/// (`"1-4,8,16"` -> `[1,2,3,4,8,16]`).
fn parse_u32_list(value: &str) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for token in value.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if let Some((lo, hi)) = token.split_once('-') {
            let lo: u32 = lo
                .trim()
                .parse()
                .map_err(|_| Error::malformed("integer range", token))?;
            let hi: u32 = hi
                .trim()
                .parse()
                .map_err(|_| Error::malformed("integer range", token))?;
            if lo > hi {
                return Err(Error::malformed("integer range", token));
            }
            out.extend(lo..=hi);
        } else {
            out.push(
                token
                    .parse()
                    .map_err(|_| Error::malformed("integer list entry", token))?,
            );
        }
    }
    if out.is_empty() {
        return Err(Error::malformed("integer list", value));
    }
    Ok(out)
}
