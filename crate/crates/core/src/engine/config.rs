use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, LrSchedule};
use crate::error::{Error, Result};
use crate::model::{Activation, EncoderShape};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaGradMode {
    /// Gradients of the two stages summed at θ and θ′.
    #[default]
    FirstOrder,
    /// Differentiates through a plain gradient-descent inner step.
    Exact,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueUpdate {
    /// Enqueue once per iteration, with the meta-test keys.
    #[default]
    MetaTest,
    /// Also enqueue the meta-train keys between the two stages.
    PerStage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `ceil(smallest domain / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub warmup_start_lr: f64,
    pub weight_decay: f64,
    pub memory_momentum: f64,
    pub renormalize_memory: bool,
    pub temperature: f64,
    pub key_momentum: f64,
    pub queue_size: usize,
    pub repetition_rate: f64,
    pub max_len: usize,
    pub seed: u64,
    pub use_meta: bool,
    pub use_memory: bool,
    pub use_jury: bool,
    pub meta_grad: MetaGradMode,
    pub inner_optimizer: InnerOptimizer,
    pub queue_update: QueueUpdate,
    /// Pooled cross-entropy steps run before the memory is initialized.
    pub warm_start_steps: usize,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub activation: Activation,
    pub adam: AdamConfig,
    /// Relative finite-difference step for Hessian-vector products.
    pub hvp_step: f64,
    /// Examples encoded at once during memory init and evaluation.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 15,
            iterations_per_epoch: None,
            inner_lr: 1e-5,
            outer_lr: 1e-5,
            warmup_start_lr: 1e-6,
            weight_decay: 5e-4,
            memory_momentum: 0.2,
            renormalize_memory: true,
            temperature: 0.05,
            key_momentum: 0.999,
            queue_size: 64,
            repetition_rate: 0.32,
            max_len: 512,
            seed: 0,
            use_meta: true,
            use_memory: true,
            use_jury: true,
            meta_grad: MetaGradMode::FirstOrder,
            inner_optimizer: InnerOptimizer::Adam,
            queue_update: QueueUpdate::MetaTest,
            warm_start_steps: 0,
            emb_dim: 64,
            hidden_dim: 64,
            feature_dim: 32,
            activation: Activation::Tanh,
            adam: AdamConfig::default(),
            hvp_step: 1e-4,
            chunk_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("queue_size", self.queue_size),
            ("max_len", self.max_len),
            ("emb_dim", self.emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("chunk_size", self.chunk_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.iterations_per_epoch == Some(0) {
            return Err(Error::Config("iterations_per_epoch must be positive".into()));
        }
        let rates = [
            ("inner_lr", self.inner_lr),
            ("outer_lr", self.outer_lr),
            ("warmup_start_lr", self.warmup_start_lr),
            ("temperature", self.temperature),
            ("hvp_step", self.hvp_step),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 || self.repetition_rate.is_nan() || self.repetition_rate < 0.0 {
            return Err(Error::Config("weight_decay and repetition_rate must be non-negative".into()));
        }
        for (name, v) in [("memory_momentum", self.memory_momentum), ("key_momentum", self.key_momentum)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.meta_grad == MetaGradMode::Exact && self.inner_optimizer == InnerOptimizer::Adam {
            return Err(Error::Config(
                "exact meta-gradients need inner_optimizer = \"sgd\"; differentiating through Adam is not supported".into(),
            ));
        }
        Ok(())
    }

    pub fn encoder_shape(&self, vocab_size: usize) -> EncoderShape {
        EncoderShape {
            vocab_size,
            emb_dim: self.emb_dim,
            hidden_dim: self.hidden_dim,
            feature_dim: self.feature_dim,
        }
    }

    /// Iterations per epoch for domains of the given sizes.
    pub fn iterations_for(&self, domain_sizes: &[usize]) -> usize {
        self.iterations_per_epoch.unwrap_or_else(|| {
            let min = domain_sizes.iter().copied().min().unwrap_or(0);
            min.div_ceil(self.batch_size).max(1)
        })
    }

    pub fn outer_schedule(&self, warmup_steps: u64) -> LrSchedule {
        LrSchedule {
            start_lr: self.warmup_start_lr.min(self.outer_lr),
            target_lr: self.outer_lr,
            warmup_steps,
        }
    }

    pub fn inner_schedule(&self, warmup_steps: u64) -> LrSchedule {
        LrSchedule {
            start_lr: self.warmup_start_lr.min(self.inner_lr),
            target_lr: self.inner_lr,
            warmup_steps,
        }
    }

    /// Every auxiliary mechanism off: plain pooled cross-entropy.
    pub fn erm(mut self) -> Self {
        self.use_meta = false;
        self.use_memory = false;
        self.use_jury = false;
        self
    }
}
