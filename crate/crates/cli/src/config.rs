use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stag_core::model::{Architecture, ModelDims};
use stag_core::synth::WorldSpec;
use stag_core::trainer::TrainConfig;

/// Everything a run needs. Loaded from JSON, then overridden by flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub variant: Architecture,
    pub dims: ModelDims,
    pub optimizer: TrainConfig,
    pub world: WorldSpec,
    pub n_pos: usize,
    pub n_neg: usize,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Architecture::default(),
            dims: ModelDims::default(),
            optimizer: TrainConfig::default(),
            world: WorldSpec::default(),
            n_pos: 100,
            n_neg: 300,
            data: None,
            eval_data: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Checks model sizes and optimizer settings.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut c = RunConfig {
            variant: Architecture::lstm_boxes(),
            data: Some("d".into()),
            ..RunConfig::default()
        };
        c.optimizer.epochs = 3;
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let again: RunConfig = serde_json::from_str(&back.to_json()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"optimizer": {"epochs": 2}, "dims": {"d": 16}}"#).unwrap();
        assert_eq!(c.optimizer.epochs, 2);
        assert_eq!(c.optimizer.lr, 0.01);
        assert_eq!(c.dims.d, 16);
        assert_eq!(c.dims.n, 6);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn default_ratio_is_one_to_three() {
        let c = RunConfig::default();
        assert_eq!(c.n_neg, 3 * c.n_pos);
    }

    #[test]
    fn invalid_optimizer_is_rejected() {
        let mut c = RunConfig::default();
        c.optimizer.momentum = 1.5;
        assert!(c.validate().is_err());
    }
}
