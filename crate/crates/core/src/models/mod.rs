//! QNN and HQNN pipelines, training and evaluation.

mod eval;
mod forward;
mod spec;
mod train;

pub use eval::{evaluate_accuracy, predict_all};
pub use forward::{forward_full, forward_with_nonce, qnn_feature_gradient, sample_gradient, GradientPath, PredictionRecord, SampleGradient};
pub use spec::{cnn_preprocessor, head_network, Backend, ModelKind, ModelParams, ModelSpec, ParamGroup, ParamLayout, PreProcessor};
pub use train::{
    refine_on_device, run_plan, train, BatchEval, ModelObjective, Objective, Optimizer, OptimizerState, RefineConfig,
    RunPlan, RunReport, StopRule, TrainConfig,
};

use crate::datakit::DataError;
use crate::nn::NnError;
use crate::qsim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("flat parameter vector has {actual} entries, expected {expected}")]
    FlatLength { expected: usize, actual: usize },
    #[error("parameter shapes do not match the model spec")]
    ParamShape,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss or gradient at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("empty dataset")]
    EmptyData,
}
