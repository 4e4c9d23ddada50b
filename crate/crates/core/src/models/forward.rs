use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Backend, ModelError, ModelParams, ModelSpec, PreProcessor};
use crate::datakit::Image;
use crate::nn::{softmax_cross_entropy, ClassicalParams, ForwardCache, Mode, Network, Tensor};
use crate::qsim::{
    amplitude_encode, amplitude_encode_backward, angle_encode, angle_encode_backward, apply_ansatz, grad_exact,
    grad_parameter_shift_with, mix_seed, sample_z_expectations, z_expectations, ShotConfig, StateVector,
};

/// Everything an output-only observer of one inference could see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub measurement: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub loss: Option<f64>,
    pub predicted: usize,
}

/// How ansatz gradients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientPath {
    /// Reverse sweep on exact amplitudes (requires no shot noise).
    Adjoint,
    /// Shift rule, each shifted circuit estimated by the spec's backend.
    ParameterShift,
}

impl GradientPath {
    pub fn for_backend(backend: &Backend) -> Self {
        match backend {
            Backend::Noiseless => GradientPath::Adjoint,
            Backend::Shots(_) => GradientPath::ParameterShift,
        }
    }
}

/// Loss, true-label probability and full gradient for one labelled sample.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub loss: f64,
    pub confidence: f64,
    pub grad: ModelParams,
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i)
}

/// Identifies the shot stream for one circuit evaluation of one image.
fn shot_stream(cfg: &ShotConfig, image: &Image, nonce: u64, eval: u64) -> ShotConfig {
    cfg.fork(mix_seed(mix_seed(image.index as u64, nonce), eval))
}

/// Classical front end: returns the encoded state plus what the backward pass needs.
struct Encoded {
    state: StateVector,
    /// Raw encoder input (PCA features + bias, or RY angles).
    raw: Vec<f64>,
    pre_cache: Option<ForwardCache>,
}

fn encode(spec: &ModelSpec, pre_params: &ClassicalParams, image: &Image) -> Result<Encoded, ModelError> {
    let n = spec.n_qubits();
    match &spec.pre {
        PreProcessor::Pca(pca) => {
            let mut raw = pca.transform_image(image)?;
            raw.push(1.0);
            Ok(Encoded { state: amplitude_encode(&raw, n)?, raw, pre_cache: None })
        }
        PreProcessor::Network(net) => {
            let input = Tensor::new(net.input_shape.clone(), image.pixels.clone());
            let (out, cache) = net.forward(pre_params, &input, Mode::Eval, 0)?;
            Ok(Encoded { state: angle_encode(&out.data, n)?, raw: out.data, pre_cache: Some(cache) })
        }
    }
}

fn measure(spec: &ModelSpec, state: &StateVector, image: &Image, nonce: u64, eval: u64) -> Vec<f64> {
    match &spec.backend {
        Backend::Noiseless => z_expectations(state),
        Backend::Shots(cfg) => sample_z_expectations(state, &shot_stream(cfg, image, nonce, eval)),
    }
}

fn head_forward(head: &Network, params: &ClassicalParams, z: &[f64]) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    let (logits, cache) = head.forward(params, &Tensor::vector(z.to_vec()), Mode::Eval, 0)?;
    Ok((logits.data, cache))
}

/// Pre-process → encode → ansatz → Z expectations → dense head → softmax.
pub fn forward_full(
    spec: &ModelSpec,
    params: &ModelParams,
    image: &Image,
    label: Option<usize>,
) -> Result<PredictionRecord, ModelError> {
    forward_with_nonce(spec, params, image, label, 0)
}

/// As [`forward_full`]; `nonce` selects an independent shot stream on the sampling backend.
pub fn forward_with_nonce(
    spec: &ModelSpec,
    params: &ModelParams,
    image: &Image,
    label: Option<usize>,
    nonce: u64,
) -> Result<PredictionRecord, ModelError> {
    let enc = encode(spec, &params.pre, image)?;
    let evolved = apply_ansatz(enc.state, &spec.ansatz, &params.theta)?;
    let measurement = measure(spec, &evolved, image, nonce, u64::MAX);
    let (logits, _) = head_forward(&spec.head, &params.head, &measurement)?;
    let (probs, loss) = match label {
        Some(y) => {
            let (p, l) = softmax_cross_entropy(&logits, y);
            (p, Some(l))
        }
        None => (crate::nn::softmax(&logits), None),
    };
    let predicted = argmax(&probs);
    Ok(PredictionRecord { measurement, logits, probs, loss, predicted })
}

/// Per-sample loss gradient with respect to every trainable parameter.
pub fn sample_gradient(
    spec: &ModelSpec,
    params: &ModelParams,
    image: &Image,
    path: GradientPath,
    nonce: u64,
) -> Result<SampleGradient, ModelError> {
    let label = image.label as usize;
    let enc = encode(spec, &params.pre, image)?;
    let evolved = apply_ansatz(enc.state.clone(), &spec.ansatz, &params.theta)?;
    let z = match path {
        GradientPath::Adjoint => z_expectations(&evolved),
        GradientPath::ParameterShift => measure(spec, &evolved, image, nonce, u64::MAX),
    };
    let (logits, head_cache) = head_forward(&spec.head, &params.head, &z)?;
    let (probs, loss) = softmax_cross_entropy(&logits, label);
    let mut dlogits = probs.clone();
    dlogits[label] -= 1.0;
    let (head_grad, dz) = spec.head.backward(&params.head, &head_cache, &dlogits)?;
    let dz = dz.data;

    let (theta_grad, raw_grad) = match path {
        GradientPath::Adjoint => {
            let g = grad_exact(&spec.ansatz, &params.theta, &enc.state, &dz)?;
            let raw = match &spec.pre {
                PreProcessor::Pca(_) => None,
                PreProcessor::Network(_) => Some(angle_encode_backward(&enc.raw, &g.input)),
            };
            (g.theta, raw)
        }
        GradientPath::ParameterShift => {
            let estimate = |s: &StateVector, id: u64| measure(spec, s, image, nonce, id);
            let theta_grad = grad_parameter_shift_with(&spec.ansatz, &params.theta, &enc.state, &dz, estimate)?;
            let raw = match &spec.pre {
                PreProcessor::Pca(_) => None,
                PreProcessor::Network(_) => Some(angle_shift_gradient(spec, params, image, &enc.raw, &dz, nonce)?),
            };
            (theta_grad, raw)
        }
    };

    let pre_grad = match (&spec.pre, raw_grad, enc.pre_cache) {
        (PreProcessor::Network(net), Some(dphi), Some(cache)) => net.backward(&params.pre, &cache, &dphi)?.0,
        _ => params.pre.zeros_like(),
    };
    Ok(SampleGradient {
        loss,
        confidence: probs[label],
        grad: ModelParams { pre: pre_grad, theta: theta_grad, head: head_grad },
    })
}

/// Shift rule on the RY encoding angles (each is a Pauli rotation on |0⟩).
fn angle_shift_gradient(
    spec: &ModelSpec,
    params: &ModelParams,
    image: &Image,
    angles: &[f64],
    upstream: &[f64],
    nonce: u64,
) -> Result<Vec<f64>, ModelError> {
    let n = spec.n_qubits();
    let base = 2 * spec.ansatz.n_params() as u64;
    let mut shifted = angles.to_vec();
    let mut out = Vec::with_capacity(n);
    for q in 0..n {
        let mut eval = |delta: f64, id: u64| -> Result<Vec<f64>, ModelError> {
            shifted[q] = angles[q] + delta;
            let s = apply_ansatz(angle_encode(&shifted, n)?, &spec.ansatz, &params.theta)?;
            shifted[q] = angles[q];
            Ok(measure(spec, &s, image, nonce, id))
        };
        let plus = eval(std::f64::consts::FRAC_PI_2, base + 2 * q as u64)?;
        let minus = eval(-std::f64::consts::FRAC_PI_2, base + 2 * q as u64 + 1)?;
        out.push(upstream.iter().zip(plus.iter().zip(&minus)).map(|(u, (p, m))| u * (p - m) / 2.0).sum());
    }
    Ok(out)
}

/// Amplitude-encoding chain rule exposed for diagnostics: gradient of the loss with respect
/// to the PCA feature vector (bias entry included) of a QNN sample.
pub fn qnn_feature_gradient(spec: &ModelSpec, params: &ModelParams, image: &Image) -> Result<Vec<f64>, ModelError> {
    let enc = encode(spec, &params.pre, image)?;
    let evolved = apply_ansatz(enc.state.clone(), &spec.ansatz, &params.theta)?;
    let z = z_expectations(&evolved);
    let (logits, cache) = head_forward(&spec.head, &params.head, &z)?;
    let (mut d, _) = softmax_cross_entropy(&logits, image.label as usize);
    d[image.label as usize] -= 1.0;
    let (_, dz) = spec.head.backward(&params.head, &cache, &d)?;
    let g = grad_exact(&spec.ansatz, &params.theta, &enc.state, &dz.data)?;
    let amp: Vec<Complex64> = g.input[..enc.raw.len()].to_vec();
    Ok(amplitude_encode_backward(&enc.raw, &amp))
}
