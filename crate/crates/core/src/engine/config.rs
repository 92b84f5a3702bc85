use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curriculum::ScheduleSpec;
use crate::error::{DcrError, Result};
use crate::objectives::{HeadInput, LossWeights};
use crate::reasoners::{Architecture, ReasonerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adamw,
    SgdMomentum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerConfig {
    pub fn adamw() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adamw,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            momentum: 0.0,
            weight_decay: 0.01,
        }
    }

    pub fn sgd_momentum() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Desk,
    PaperShape,
}

impl FromStr for Profile {
    type Err = DcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper-shape" => Ok(Profile::PaperShape),
            other => Err(DcrError::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Every knob of a pre-training plus training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub reasoner: ReasonerConfig,
    pub head_input: HeadInput,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,
    pub train_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub optimizer: OptimizerConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weights: LossWeights,
    /// Inverse-frequency class weights from the training labels; uniform
    /// weights otherwise.
    pub class_weighting: bool,
    pub schedule: ScheduleSpec,
    /// Gaussian bandwidth of the order pre-training soft labels.
    pub sigma: f64,
    pub temperature: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Evaluate on validation data every this many epochs (and always after
    /// the last); 0 evaluates only after the last epoch.
    pub eval_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Latent 128, 2 layers, 4 heads, batch 64, 40 epochs.
    pub fn desk(input_dim: usize) -> Self {
        TrainConfig {
            reasoner: ReasonerConfig::transformer(input_dim, 128, 2, 4),
            head_input: HeadInput::Reconstruction,
            pretrain_epochs: 20,
            pretrain_batch_size: 64,
            pretrain_lr: 1e-3,
            train_epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            warmup_epochs: 5,
            optimizer: OptimizerConfig::adamw(),
            grad_clip: Some(1.0),
            weights: LossWeights::default(),
            class_weighting: true,
            schedule: ScheduleSpec::default(),
            sigma: crate::order_pretrain::DEFAULT_SIGMA,
            temperature: crate::order_pretrain::DEFAULT_TEMPERATURE,
            seed: 0,
            precision: Precision::F32,
            eval_every: 0,
            checkpoint_path: None,
            metrics_path: None,
        }
    }

    /// The published transformer shape: latent 1024, 6 layers, 16 heads,
    /// 50 pre-training epochs at batch 512, 100 epochs at batch 128.
    pub fn paper_shape(input_dim: usize) -> Self {
        TrainConfig {
            reasoner: ReasonerConfig::transformer(input_dim, 1024, 6, 16),
            pretrain_epochs: 50,
            pretrain_batch_size: 512,
            pretrain_lr: 1e-4,
            train_epochs: 100,
            batch_size: 128,
            lr: 1e-4,
            ..Self::desk(input_dim)
        }
    }

    pub fn for_profile(profile: Profile, input_dim: usize) -> Self {
        match profile {
            Profile::Desk => Self::desk(input_dim),
            Profile::PaperShape => Self::paper_shape(input_dim),
        }
    }

    /// Switches to the LSTM reasoner with SGD and momentum.
    pub fn with_lstm(mut self) -> Self {
        let d = self.reasoner.input_dim;
        self.reasoner = ReasonerConfig::lstm(d, self.reasoner.latent_dim);
        self.optimizer = OptimizerConfig::sgd_momentum();
        self.lr = 1e-2;
        self.pretrain_epochs = 0;
        self.weights.lambda_cls = 1.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.reasoner.validate()?;
        self.weights.validate()?;
        self.schedule.validate()?;
        let bad = |m: String| Err(DcrError::Config(m));
        if self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.train_epochs == 0 {
            return bad("train_epochs must be at least 1".into());
        }
        if self.warmup_epochs >= self.train_epochs {
            return bad(format!(
                "warmup epochs {} must be fewer than train epochs {}",
                self.warmup_epochs, self.train_epochs
            ));
        }
        if !(self.lr > 0.0 && self.pretrain_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.sigma > 0.0 && self.temperature > 0.0) {
            return bad("sigma and temperature must be positive".into());
        }
        if self.pretrain_epochs > 0 && self.reasoner.architecture != Architecture::Transformer {
            return bad("order pre-training needs the transformer reasoner".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| DcrError::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_slice(&text).map_err(|e| DcrError::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| DcrError::json(path, e))?;
        fs::write(path, json).map_err(|e| DcrError::io(path, e))
    }
}
