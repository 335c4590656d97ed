use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossComponents;

use super::optim::OptimizerConfig;
use super::schedule::ScheduleSpec;

pub const RECIPE_VERSION: u32 = 1;

/// Training hyperparameters, stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub version: u32,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleSpec,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Saliency loss components by name (`bce`, `ssim`, `iou`).
    #[serde(default = "default_loss")]
    pub loss: Vec<String>,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default)]
    pub seed: u64,
    /// Writes a checkpoint every this many epochs when an output directory is given.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Runs every kernel on one thread.
    #[serde(default)]
    pub strict_deterministic: bool,
}

fn default_loss() -> Vec<String> {
    LossComponents::HYBRID.names().iter().map(|s| s.to_string()).collect()
}

impl Recipe {
    /// Adam (0.9, 0.999, λ 1e-4), lr 0.001 with exponential decay 0.98,
    /// batch 8, 200 epochs, hybrid loss, augmentation on.
    pub fn sod_default() -> Self {
        Recipe {
            version: RECIPE_VERSION,
            optimizer: OptimizerConfig::adam(1e-4),
            schedule: ScheduleSpec::exponential(1e-3, 0.98),
            batch_size: 8,
            epochs: 200,
            max_steps: None,
            loss: default_loss(),
            augment: true,
            shuffle: true,
            seed: 0,
            checkpoint_every: Some(10),
            strict_deterministic: false,
        }
    }

    /// SGD momentum 0.9 (λ 5e-4), lr 0.1 reduced ×0.2 at epochs 60, 120,
    /// 160 and 200, batch 128, 240 epochs.
    pub fn classifier_default() -> Self {
        Recipe {
            version: RECIPE_VERSION,
            optimizer: OptimizerConfig::sgd(0.9, 5e-4),
            schedule: ScheduleSpec::multistep(0.1, vec![60, 120, 160, 200], 0.2),
            batch_size: 128,
            epochs: 240,
            max_steps: None,
            loss: Vec::new(),
            augment: true,
            shuffle: true,
            seed: 0,
            checkpoint_every: Some(20),
            strict_deterministic: false,
        }
    }

    pub fn loss_components(&self) -> Result<LossComponents> {
        let names: Vec<&str> = self.loss.iter().map(String::as_str).collect();
        LossComponents::from_names(&names)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != RECIPE_VERSION {
            return Err(Error::Config(format!("recipe version {} unsupported (expected {RECIPE_VERSION})", self.version)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be > 0".into()));
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Recipe = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("recipe serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
