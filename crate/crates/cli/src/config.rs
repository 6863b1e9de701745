use std::path::{Path, PathBuf};

use causal_ceo::{ChannelSet, JointMode, SourceModel, Unit};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Riccati,
    Fusion,
    Both,
}

impl ModeArg {
    pub fn modes(self) -> Vec<JointMode> {
        match self {
            ModeArg::Riccati => vec![JointMode::Riccati],
            ModeArg::Fusion => vec![JointMode::Fusion],
            ModeArg::Both => JointMode::ALL.to_vec(),
        }
    }
}

/// Flags shared by every subcommand. Each may also come from `--config`.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct Common {
    /// JSON document with any of these options; flags override it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Source coefficient.
    #[arg(long, allow_hyphen_values = true)]
    pub a: Option<f64>,
    /// Innovation variance σ_V².
    #[arg(long)]
    pub sigma_v2: Option<f64>,
    /// Observation noise variances, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma_w2: Option<Vec<f64>>,
    /// Single target distortion.
    #[arg(long)]
    pub d: Option<f64>,
    /// Distortion grid `min:max:count[:log]`.
    #[arg(long)]
    pub d_grid: Option<String>,
    /// Joint MMSE used for the lower end of the distortion window.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Report rates in bits instead of nats.
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub bits: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Overlays `flags` on `file`, field by field.
pub trait Overlay {
    fn overlay(self, file: Self) -> Self;
}

#[macro_export]
macro_rules! impl_overlay {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl $crate::config::Overlay for $ty {
            fn overlay(self, file: Self) -> Self {
                Self { $($field: self.$field.or(file.$field),)* }
            }
        }
    };
}

impl_overlay!(Common { config, a, sigma_v2, sigma_w2, d, d_grid, mode, bits, seed, out, format });

/// Reads `--config` (if any) and overlays the flags on it.
pub fn resolve<T: Overlay + DeserializeOwned + Default>(config: Option<&Path>, flags: T) -> Result<T, CliError> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    let file: T = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(flags.overlay(file))
}

impl Common {
    pub fn model(&self) -> Result<SourceModel, CliError> {
        let a = self.a.ok_or_else(|| CliError::Usage("missing --a".into()))?;
        Ok(SourceModel::new(a, self.sigma_v2.unwrap_or(1.0))?)
    }

    pub fn channels(&self) -> Result<ChannelSet, CliError> {
        let w = self.sigma_w2.clone().ok_or_else(|| CliError::Usage("missing --sigma-w2".into()))?;
        Ok(ChannelSet::new(w)?)
    }

    pub fn unit(&self) -> Unit {
        if self.bits.unwrap_or(false) {
            Unit::Bits
        } else {
            Unit::Nats
        }
    }

    pub fn mode(&self) -> ModeArg {
        self.mode.unwrap_or(ModeArg::Riccati)
    }

    pub fn single_mode(&self) -> Result<JointMode, CliError> {
        match self.mode() {
            ModeArg::Both => Err(CliError::Usage("this subcommand takes a single --mode".into())),
            m => Ok(m.modes()[0]),
        }
    }

    pub fn format(&self, default: Format) -> Format {
        self.format.unwrap_or(default)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn target(&self) -> Result<f64, CliError> {
        self.d.ok_or_else(|| CliError::Usage("missing --d".into()))
    }

    /// Grid points from `--d-grid`, or the single `--d`.
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        match (&self.d_grid, self.d) {
            (Some(g), _) => parse_grid(g),
            (None, Some(d)) => Ok(vec![d]),
            (None, None) => Err(CliError::Usage("missing --d-grid or --d".into())),
        }
    }
}

/// Parses `min:max:count[:log]` into evenly (or geometrically) spaced points.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = |why: &str| CliError::Usage(format!("bad --d-grid `{spec}`: {why}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if !(3..=4).contains(&parts.len()) {
        return Err(bad("expected min:max:count[:log]"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad("min is not a number"))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad("max is not a number"))?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad("count is not an integer"))?;
    let log = match parts.get(3).map(|s| s.trim()) {
        None | Some("lin") => false,
        Some("log") => true,
        Some(_) => return Err(bad("scale must be `log` or `lin`")),
    };
    if n < 2 {
        return Err(bad("count must be >= 2"));
    }
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(bad("need 0 < min < max"));
    }
    let step = |i: usize| i as f64 / (n - 1) as f64;
    Ok((0..n)
        .map(|i| if log { (lo.ln() + step(i) * (hi.ln() - lo.ln())).exp() } else { lo + step(i) * (hi - lo) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0.5:1:3").unwrap(), vec![0.5, 0.75, 1.0]);
        let g = parse_grid("0.1:10:3:log").unwrap();
        assert!((g[1] - 1.0).abs() < 1e-15);
        assert!(parse_grid("1:0.5:3").is_err());
        assert!(parse_grid("0.5:1:1").is_err());
        assert!(parse_grid("0.5:1").is_err());
    }

    #[test]
    fn flags_override_file() {
        let flags = Common { a: Some(0.5), ..Default::default() };
        let file = Common { a: Some(0.1), sigma_v2: Some(2.0), ..Default::default() };
        let c = flags.overlay(file);
        assert_eq!(c.a, Some(0.5));
        assert_eq!(c.sigma_v2, Some(2.0));
    }
}
