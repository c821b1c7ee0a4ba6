//! Training: loss, exact gradients, the per-head particle update and the
//! regularizer baselines it is compared against.

mod backward;
mod oracle;
mod regularizers;
mod train;

pub use backward::{backward, batch_objective, gradient_check, nll_loss, BatchLoss, Gradients};
pub use oracle::{finite_diff_oracle, DEFAULT_FD_STEP};
pub use regularizers::{
    cosine_param_regularizer, disagreement_regularizer, frobenius_regularizer, CosineVariant,
    RegularizerKind, RegularizerSpec,
};
pub use train::{clip_global_norm, train, train_from, train_step, EpochRecord, TrainConfig, TrainHistory, TrainOutcome, TrainState};
