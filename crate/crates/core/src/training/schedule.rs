use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    /// `base·rate^epoch`.
    Exponential { rate: f64 },
    /// `base·factor^k` where `k` counts milestones `<= epoch`.
    Multistep { milestones: Vec<usize>, factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    #[serde(flatten)]
    pub kind: ScheduleKind,
}

impl ScheduleSpec {
    pub fn exponential(base_lr: f64, rate: f64) -> Self {
        ScheduleSpec { base_lr, kind: ScheduleKind::Exponential { rate } }
    }

    pub fn multistep(base_lr: f64, milestones: Vec<usize>, factor: f64) -> Self {
        ScheduleSpec { base_lr, kind: ScheduleKind::Multistep { milestones, factor } }
    }

    pub fn constant(base_lr: f64) -> Self {
        ScheduleSpec { base_lr, kind: ScheduleKind::Constant }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be finite and > 0, got {}", self.base_lr)));
        }
        match &self.kind {
            ScheduleKind::Constant => {}
            ScheduleKind::Exponential { rate } => {
                if !(*rate > 0.0 && *rate < 1.0) {
                    return Err(Error::Config(format!("exponential rate must lie in (0, 1), got {rate}")));
                }
            }
            ScheduleKind::Multistep { milestones, factor } => {
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Config(format!("milestones must be strictly increasing, got {milestones:?}")));
                }
                if !(*factor > 0.0 && *factor < 1.0) {
                    return Err(Error::Config(format!("multistep factor must lie in (0, 1), got {factor}")));
                }
            }
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch.
pub fn schedule_lr(spec: &ScheduleSpec, epoch: usize) -> f64 {
    match &spec.kind {
        ScheduleKind::Constant => spec.base_lr,
        ScheduleKind::Exponential { rate } => spec.base_lr * rate.powi(epoch.min(i32::MAX as usize) as i32),
        ScheduleKind::Multistep { milestones, factor } => {
            let passed = milestones.iter().filter(|&&m| m <= epoch).count();
            spec.base_lr * factor.powi(passed as i32)
        }
    }
}
