use rayon::prelude::*;

use super::forward::{forward_with_nonce, PredictionRecord};
use super::{ModelError, ModelParams, ModelSpec};
use crate::datakit::Image;

/// Labelled prediction records for every image, in order. `nonce` picks the shot stream.
pub fn predict_all(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &[Image],
    nonce: u64,
) -> Result<Vec<PredictionRecord>, ModelError> {
    data.par_iter()
        .map(|img| forward_with_nonce(spec, params, img, Some(img.label as usize), nonce))
        .collect()
}

/// Percentage of images whose argmax prediction equals the label.
pub fn evaluate_accuracy(spec: &ModelSpec, params: &ModelParams, data: &[Image]) -> Result<f64, ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let records = predict_all(spec, params, data, 0)?;
    Ok(accuracy_of(&records, data))
}

pub(crate) fn accuracy_of(records: &[PredictionRecord], data: &[Image]) -> f64 {
    let hits = records.iter().zip(data).filter(|(r, i)| r.predicted == i.label as usize).count();
    100.0 * hits as f64 / data.len() as f64
}
