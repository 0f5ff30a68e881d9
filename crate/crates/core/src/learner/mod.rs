//! Small dense learners with exact analytic gradients, AdamW training and
//! a finite-difference gradient checker.

mod checkpoint;
mod gradcheck;
mod loss;
mod model;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, GRAD_CHECK_STEP};
pub use loss::{loss_cross_entropy, loss_l2, LossKind, CE_EPSILON};
pub use model::{Activation, DenseModel, Head, ModelSpec};
pub use train::{fit, fit_set, FitOutcome, TrainConfig, TrainSet, TrainTargets};
