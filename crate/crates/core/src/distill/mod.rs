//! SNR-routed multi-teacher distillation: band-specialist teacher
//! training, routing by training-example SNR, the combined teacher/clean
//! objective, student training, and inference/evaluation.

mod bank;
mod data;
mod infer;
mod loss;
mod train;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BandCheck, DatasetError};
use crate::metrics::MetricError;
use crate::signal::SignalError;
use crate::tensor::{AdamHyper, TensorError};
use crate::unet::{ArchConfig, CheckpointError, UnetError};

pub use bank::{route, select_teacher, Band, TeacherBank, TeacherEntry, TeacherMeta, TEACHER_META_FILE};
pub use data::{load_examples, Example, TrainSet};
pub use infer::{enhance, enhance_samples, evaluate, Enhancer};
pub use loss::distill_loss;
pub use train::{train_student, train_teacher, CurvePoint, StopReason, TrainCurves, TrainOutcome};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("invalid config: {field}: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("teacher bank is empty")]
    EmptyBank,
    #[error("teacher `{teacher}`: {reason}")]
    Teacher { teacher: String, reason: String },
    #[error("record `{id}` has SNR {snr_db} dB outside the declared band [{lo}, {hi}]")]
    OutsideBand { id: String, snr_db: f64, lo: f64, hi: f64 },
    #[error("no training examples")]
    NoTrainingData,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Step {
        epoch: usize,
        batch: usize,
        #[source]
        source: TensorError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Unet(#[from] UnetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl DistillError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

/// Which teacher wins when an out-of-band SNR is equidistant from two
/// band midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowerSnr,
    HigherSnr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the teacher term; `1 − alpha` weighs the clean target.
    pub alpha: f64,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Separation rule checked when a teacher bank is assembled.
    #[serde(default)]
    pub band_check: BandCheck,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            tie_break: TieBreak::LowerSnr,
            band_check: BandCheck::Hull,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DistillError::Config {
                field: "distill.alpha",
                reason: format!("must lie in [0, 1], got {}", self.alpha),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Optimizer, schedule and stopping rules for one training run.
///
/// The learning rate starts at `lr` and is multiplied by
/// `lr_decay_factor` every `lr_decay_every` epochs. Training stops after
/// `max_epochs` epochs, after `max_steps` optimizer steps, or when the
/// validation reconstruction loss has not improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr_decay_every: Option<usize>,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub max_steps: Option<usize>,
    pub patience: Option<usize>,
    /// Epochs between validation passes.
    pub val_every: usize,
    /// Training window length in samples.
    pub segment_len: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl TrainConfig {
    /// Teacher recipe: batch 16, constant learning rate 0.0002.
    pub fn paper_teacher() -> Self {
        Self {
            batch_size: 16,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_decay_every: None,
            lr_decay_factor: 1.0,
            max_epochs: 1000,
            max_steps: None,
            patience: Some(100),
            val_every: 10,
            segment_len: 16384,
            seed: 0,
            precision: Precision::F32,
        }
    }

    /// Student recipe: learning rate 0.002 halved every 300 epochs.
    pub fn paper_student() -> Self {
        Self {
            lr: 2e-3,
            lr_decay_every: Some(300),
            lr_decay_factor: 0.5,
            ..Self::paper_teacher()
        }
    }

    /// CPU-sized teacher run over the toy corpora.
    pub fn toy_teacher() -> Self {
        Self {
            batch_size: 4,
            lr: 2e-3,
            max_epochs: 60,
            patience: None,
            val_every: 10,
            segment_len: 4096,
            ..Self::paper_teacher()
        }
    }

    pub fn toy_student() -> Self {
        Self {
            lr_decay_every: Some(30),
            lr_decay_factor: 0.5,
            ..Self::toy_teacher()
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_every {
            Some(every) if every > 0 => self.lr * self.lr_decay_factor.powi(((epoch - 1) / every) as i32),
            _ => self.lr,
        }
    }

    pub fn validate(&self, arch: &ArchConfig) -> Result<(), DistillError> {
        let bad = |field, reason: String| Err(DistillError::Config { field, reason });
        if self.batch_size == 0 {
            return bad("train.batch_size", "must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("train.lr", format!("must be positive, got {}", self.lr));
        }
        for (field, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(field, format!("must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad("train.adam_eps", "must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("train.lr_decay_factor", "must be positive".into());
        }
        if self.val_every == 0 {
            return bad("train.val_every", "must be at least 1".into());
        }
        let d = arch.time_divisor();
        if self.segment_len == 0 || !self.segment_len.is_multiple_of(d) {
            return bad(
                "train.segment_len",
                format!("{} is not a positive multiple of {d}", self.segment_len),
            );
        }
        Ok(())
    }
}

/// Everything a training run needs, persisted as `config.json` in the run
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub distill: DistillConfig,
}

impl RunConfig {
    pub fn paper_teacher() -> Self {
        Self {
            arch: ArchConfig::paper(),
            train: TrainConfig::paper_teacher(),
            distill: DistillConfig::default(),
        }
    }

    /// The paper's teacher SNR sets interleave at their edges, so the bank
    /// is checked for set disjointness.
    pub fn paper_student() -> Self {
        Self {
            arch: ArchConfig::paper(),
            train: TrainConfig::paper_student(),
            distill: DistillConfig {
                band_check: BandCheck::SetDisjoint,
                ..DistillConfig::default()
            },
        }
    }

    pub fn toy_teacher() -> Self {
        Self {
            arch: ArchConfig::toy(),
            train: TrainConfig::toy_teacher(),
            distill: DistillConfig::default(),
        }
    }

    pub fn toy_student() -> Self {
        Self {
            arch: ArchConfig::toy(),
            train: TrainConfig::toy_student(),
            distill: DistillConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        self.arch.validate()?;
        self.train.validate(&self.arch)?;
        self.distill.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_presets() {
        let t = RunConfig::paper_teacher();
        assert_eq!(t.train.lr, 0.0002);
        assert_eq!(t.train.batch_size, 16);
        assert_eq!((t.train.beta1, t.train.beta2), (0.9, 0.999));
        assert_eq!(t.train.segment_len, 16384);
        let s = RunConfig::paper_student();
        assert_eq!(s.train.lr, 0.002);
        assert_eq!(s.distill.alpha, 0.5);
        for c in [t, s, RunConfig::toy_teacher(), RunConfig::toy_student()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn student_schedule_halves_every_300_epochs() {
        let s = TrainConfig::paper_student();
        assert_eq!(s.lr_at(1), 0.002);
        assert_eq!(s.lr_at(300), 0.002);
        assert_eq!(s.lr_at(301), 0.001);
        assert_eq!(s.lr_at(601), 0.0005);
        assert_eq!(TrainConfig::paper_teacher().lr_at(999), 0.0002);
    }

    #[test]
    fn validation_names_fields() {
        let mut c = RunConfig::toy_teacher();
        c.train.segment_len = 4095;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("train.segment_len"), "{msg}");
        let mut c = RunConfig::toy_student();
        c.distill.alpha = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("distill.alpha"));
        let mut c = RunConfig::toy_student();
        c.train.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn run_config_json_round_trip() {
        let c = RunConfig::paper_student();
        let json = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        assert!(json.contains("\"precision\": \"f32\""));
    }
}
