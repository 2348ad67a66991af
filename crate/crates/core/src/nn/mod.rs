//! Learnable routing model: reverse-mode differentiation, parameters,
//! training loop and checkpoints.

pub mod autodiff;
pub mod checkpoint;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use autodiff::{ParamGrads, Tape, Var};
pub use mask::make_mask;
pub use metrics::{auc_rank, classification_metrics, Metrics};
pub use model::{
    ForwardTrace, Inference, MaskMode, Model, ModelConfig, PrepareOptions, SubjectInputs,
};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::ParamStore;
pub use train::{
    evaluate, stratified_split, train, EpochRecord, Evaluation, Split, TrainConfig, TrainOutcome,
};
