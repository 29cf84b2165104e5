//! Tensors, a reverse-mode tape, and the optimizers that consume its gradients.

mod adam;
pub mod gradcheck;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use adam::{sgd_step, AdamConfig, AdamState};
pub use params::{add_grads, check_aligned, ParamSet, Parameters};
pub use schedule::LrSchedule;
pub use tape::{Gradients, OpKind, Tape, Var, NORM_EPS};
pub use tensor::{checksum_all, dot, l2_norm, log_sum_exp, softmax, Tensor};
