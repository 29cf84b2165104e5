//! Episodic training: domain splits, the two-stage objective, the
//! meta-gradient, and evaluation.

mod config;
mod episode;
mod eval;
mod losses;
mod meta;
mod train;

pub use config::{InnerOptimizer, MetaGradMode, QueueUpdate, TrainConfig};
pub use episode::{sample_all, sample_domain_batch, split_domains, DomainBatch, Episode};
pub use eval::{classification_metrics, evaluate, predict, ClassMetrics, EvalMetrics};
pub use losses::{key_features, pooled_loss, stage_loss, LossContext, StageEval, Terms};
pub use meta::{hessian_vector, inner_update, meta_gradient, Evaluated, InnerStep, MetaOutcome};
pub use train::{expected_phases, MetricsRow, Phase, Trainer};
