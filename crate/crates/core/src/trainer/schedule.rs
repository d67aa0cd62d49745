use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warmup, cosine decay and constant tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub tail_steps: u64,
}

/// Steps per stage at full scale.
pub const FULL_SCALE_STAGE_STEPS: u64 = 35_000;
pub const FULL_SCALE_WARMUP_STEPS: u64 = 250;
pub const FULL_SCALE_TAIL_STEPS: u64 = 4_900;

impl LrSchedule {
    /// Learning-rate bounds of a model preset.
    pub fn for_preset(preset: &str, warmup_steps: u64, tail_steps: u64) -> Result<Self> {
        let (max_lr, min_lr) = match preset {
            "gpt-126m" => (6e-4, 6e-5),
            "gpt-356m" => (3e-4, 3e-5),
            "gpt-1.3b" => (2e-4, 2e-5),
            "nano" => (1e-3, 1e-4),
            other => return Err(Error::Config(format!("no learning-rate preset for model {other}"))),
        };
        Ok(Self {
            max_lr,
            min_lr,
            warmup_steps,
            tail_steps,
        })
    }
}

/// Training budget and schedule of one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub language: String,
    pub steps: u64,
    pub batch_size: usize,
    pub schedule: LrSchedule,
}

impl StageSpec {
    /// Full-length stage with the preset's learning rates.
    pub fn full_scale(language: &str, preset: &str, batch_size: usize) -> Result<Self> {
        Ok(Self {
            language: language.into(),
            steps: FULL_SCALE_STAGE_STEPS,
            batch_size,
            schedule: LrSchedule::for_preset(preset, FULL_SCALE_WARMUP_STEPS, FULL_SCALE_TAIL_STEPS)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.schedule;
        if self.batch_size == 0 {
            return Err(Error::Config(format!(
                "stage {}: batch_size must be positive",
                self.language
            )));
        }
        if s.warmup_steps + s.tail_steps > self.steps {
            return Err(Error::Config(format!(
                "stage {}: warmup ({}) + tail ({}) exceeds {} steps",
                self.language, s.warmup_steps, s.tail_steps, self.steps
            )));
        }
        if !(s.min_lr >= 0.0 && s.max_lr >= s.min_lr && s.max_lr.is_finite()) {
            return Err(Error::Config(format!(
                "stage {}: need 0 <= min_lr <= max_lr, got {} and {}",
                self.language, s.min_lr, s.max_lr
            )));
        }
        Ok(())
    }
}

/// Learning rate at a real-valued position `t` of the stage, defined on
/// `[0, steps]`. [`lr_at`] samples it at integer steps.
pub fn lr_at_continuous(t: f64, stage: &StageSpec) -> f64 {
    let s = &stage.schedule;
    let warmup = s.warmup_steps as f64;
    let decay_end = (stage.steps - s.tail_steps) as f64;
    if t < warmup {
        s.max_lr * t / warmup
    } else if t < decay_end {
        let progress = (t - warmup) / (decay_end - warmup);
        s.min_lr + 0.5 * (s.max_lr - s.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    } else {
        s.min_lr
    }
}

/// Learning rate used for optimizer step `step` (0-based) of `stage`.
pub fn lr_at(step: u64, stage: &StageSpec) -> Result<f64> {
    if step >= stage.steps {
        return Err(Error::Parameter(format!(
            "step {step} outside stage of {} steps",
            stage.steps
        )));
    }
    stage.validate()?;
    Ok(lr_at_continuous(step as f64, stage))
}
