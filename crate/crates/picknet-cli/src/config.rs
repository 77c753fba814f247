//! Training configuration: defaults, then a TOML file, then `--set`
//! overrides, then explicit flags — later layers win. Unknown keys are
//! rejected at every layer.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use picknet_core::dsp::FeatureKind;
use picknet_core::train::{OptimizerKind, TrainConfig};
use serde::Deserialize;

use crate::{CliError, CliResult};

/// Keys accepted in the TOML file and in `--set key=value` overrides.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    pub learning_rate: Option<f64>,
    pub batch_frames: Option<usize>,
    pub epochs: Option<usize>,
    pub optimizer: Option<String>,
    pub seed: Option<u64>,
    pub feature_kind: Option<String>,
    pub data_manifest: Option<PathBuf>,
}

impl TrainFileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, pair: &str) -> CliResult<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set expects key=value, got `{pair}`")))?;
        let bad = |e: String| CliError::usage(format!("--set {key}: {e}"));
        match key {
            "learning_rate" => self.learning_rate = Some(value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?),
            "batch_frames" => self.batch_frames = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            "epochs" => self.epochs = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            "optimizer" => self.optimizer = Some(value.to_string()),
            "seed" => self.seed = Some(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?),
            "feature_kind" => self.feature_kind = Some(value.to_string()),
            "data_manifest" => self.data_manifest = Some(PathBuf::from(value)),
            other => {
                return Err(CliError::usage(format!(
                    "unknown config key `{other}` (known: learning_rate, batch_frames, epochs, \
                     optimizer, seed, feature_kind, data_manifest)"
                )))
            }
        }
        Ok(())
    }

    /// Fold this layer into a TrainConfig.
    pub fn apply(&self, cfg: &mut TrainConfig) -> CliResult<()> {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_frames {
            cfg.batch_frames = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = &self.optimizer {
            cfg.optimizer = OptimizerKind::from_str(v).map_err(|e| CliError::usage(e.to_string()))?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.feature_kind {
            cfg.feature_kind = FeatureKind::from_str(v).map_err(|e| CliError::usage(e.to_string()))?;
        }
        Ok(())
    }
}
