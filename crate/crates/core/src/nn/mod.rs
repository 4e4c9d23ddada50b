//! Fixed-vocabulary feed-forward layers with hand-written reverse-mode gradients.

mod layers;
mod loss;

pub use layers::{ClassicalParams, ForwardCache, LayerParams, LayerSpec, Mode, Network, Tensor};
pub use loss::{softmax, softmax_cross_entropy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("layer {layer}: input shape {actual:?} incompatible, expected {expected}")]
    ShapeMismatch { layer: usize, expected: String, actual: Vec<usize> },
    #[error("dropout rate {0} outside [0, 1)")]
    BadDropout(f64),
    #[error("parameter set has {actual} layers, network has {expected}")]
    ParamLayout { expected: usize, actual: usize },
    #[error("backward called with a cache from a different network")]
    MissingCache,
    #[error("flat parameter vector has length {actual}, expected {expected}")]
    FlatLength { expected: usize, actual: usize },
}
