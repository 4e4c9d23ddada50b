use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, NnError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Fully connected; accepts any input whose element count is `inputs`.
    Dense { inputs: usize, outputs: usize },
    /// 3×3 valid convolution, stride 1, over `[channels, h, w]` inputs.
    Conv3x3 { in_channels: usize, out_channels: usize },
    /// Non-overlapping 2×2 max pooling, floor on odd sizes.
    MaxPool2x2,
    Relu,
    Softmax,
    /// Inverted dropout: surviving units are divided by `1 - rate` in training mode.
    Dropout { rate: f64 },
}

impl LayerSpec {
    fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv3x3 { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Weights and bias of one layer; both empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalParams {
    pub layers: Vec<LayerParams>,
}

impl ClassicalParams {
    pub fn empty() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weights then bias, layer by layer.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        self.flatten_into(&mut v);
        v
    }

    /// Overwrites every value from `flat`, which must have exactly [`Self::len`] entries.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.len() {
            return Err(NnError::FlatLength { expected: self.len(), actual: flat.len() });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams { weights: vec![0.0; l.weights.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Per-layer state recorded by [`Network::forward`] and consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Tensor>,
    extras: Vec<Extra>,
}

#[derive(Debug, Clone)]
enum Extra {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<f64>),
    Output(Vec<f64>),
}

/// A validated stack of layers with its inferred per-layer shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

fn out_shape(idx: usize, layer: &LayerSpec, shape: &[usize]) -> Result<Vec<usize>, NnError> {
    let mismatch = |expected: String| NnError::ShapeMismatch { layer: idx, expected, actual: shape.to_vec() };
    match *layer {
        LayerSpec::Dense { inputs, outputs } => {
            if shape.iter().product::<usize>() != inputs {
                return Err(mismatch(format!("{inputs} elements")));
            }
            Ok(vec![outputs])
        }
        LayerSpec::Conv3x3 { in_channels, out_channels } => match *shape {
            [c, h, w] if c == in_channels && h >= 3 && w >= 3 => Ok(vec![out_channels, h - 2, w - 2]),
            _ => Err(mismatch(format!("[{in_channels}, h>=3, w>=3]"))),
        },
        LayerSpec::MaxPool2x2 => match *shape {
            [c, h, w] if h >= 2 && w >= 2 => Ok(vec![c, h / 2, w / 2]),
            _ => Err(mismatch("[c, h>=2, w>=2]".into())),
        },
        LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => Err(NnError::BadDropout(rate)),
        LayerSpec::Relu | LayerSpec::Softmax | LayerSpec::Dropout { .. } => Ok(shape.to_vec()),
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let net = Self { input_shape, layers };
        net.shapes()?;
        Ok(net)
    }

    /// Shape entering each layer, followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let next = out_shape(i, l, shapes.last().expect("non-empty"))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_len(&self) -> usize {
        self.shapes().map(|s| s.last().map_or(0, |s| s.iter().product())).unwrap_or(0)
    }

    /// Uniform Glorot initialization `U[−a, a]`, `a = √(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params(&self, rng: &mut impl Rng) -> ClassicalParams {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let (n_w, n_b, fan_in, fan_out) = match *l {
                    LayerSpec::Dense { inputs, outputs } => (inputs * outputs, outputs, inputs, outputs),
                    LayerSpec::Conv3x3 { in_channels, out_channels } => {
                        (out_channels * in_channels * 9, out_channels, in_channels * 9, out_channels * 9)
                    }
                    _ => (0, 0, 1, 1),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                LayerParams { weights: (0..n_w).map(|_| rng.gen_range(-a..=a)).collect(), bias: vec![0.0; n_b] }
            })
            .collect();
        ClassicalParams { layers }
    }

    fn check_params(&self, params: &ClassicalParams) -> Result<(), NnError> {
        if params.layers.len() != self.layers.len() {
            return Err(NnError::ParamLayout { expected: self.layers.len(), actual: params.layers.len() });
        }
        Ok(())
    }

    /// Runs the stack. Dropout masks are drawn from `seed` in [`Mode::Train`] only.
    pub fn forward(
        &self,
        params: &ClassicalParams,
        input: &Tensor,
        mode: Mode,
        seed: u64,
    ) -> Result<(Tensor, ForwardCache), NnError> {
        self.check_params(params)?;
        if input.shape.iter().product::<usize>() != self.input_shape.iter().product::<usize>() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: format!("{:?}", self.input_shape),
                actual: input.shape.clone(),
            });
        }
        let shapes = self.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::new(self.input_shape.clone(), input.data.clone());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut extras = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &params.layers[i];
            let out_shape = shapes[i + 1].clone();
            let (y, extra) = match *layer {
                LayerSpec::Dense { inputs: n_in, outputs } => (dense_forward(p, &x.data, n_in, outputs), Extra::None),
                LayerSpec::Conv3x3 { in_channels, out_channels } => {
                    (conv_forward(p, &x, in_channels, out_channels), Extra::None)
                }
                LayerSpec::MaxPool2x2 => {
                    let (y, arg) = pool_forward(&x);
                    (y, Extra::Argmax(arg))
                }
                LayerSpec::Relu => (x.data.iter().map(|v| v.max(0.0)).collect(), Extra::None),
                LayerSpec::Softmax => {
                    let s = softmax(&x.data);
                    (s.clone(), Extra::Output(s))
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Eval => (x.data.clone(), Extra::None),
                    Mode::Train => {
                        let keep = 1.0 - rate;
                        let mask: Vec<f64> =
                            (0..x.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                        (x.data.iter().zip(&mask).map(|(v, m)| v * m).collect(), Extra::Mask(mask))
                    }
                },
            };
            inputs.push(std::mem::replace(&mut x, Tensor::new(out_shape, y)));
            extras.push(extra);
        }
        Ok((x, ForwardCache { inputs, extras }))
    }

    /// Reverse pass: gradients of the loss with respect to every parameter and to the input.
    pub fn backward(
        &self,
        params: &ClassicalParams,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> Result<(ClassicalParams, Tensor), NnError> {
        self.check_params(params)?;
        if cache.inputs.len() != self.layers.len() {
            return Err(NnError::MissingCache);
        }
        let mut grads = params.zeros_like();
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            g = match (*layer, &cache.extras[i]) {
                (LayerSpec::Dense { inputs, outputs }, _) => {
                    dense_backward(&params.layers[i], &mut grads.layers[i], &x.data, &g, inputs, outputs)
                }
                (LayerSpec::Conv3x3 { in_channels, out_channels }, _) => {
                    conv_backward(&params.layers[i], &mut grads.layers[i], x, &g, in_channels, out_channels)
                }
                (LayerSpec::MaxPool2x2, Extra::Argmax(arg)) => {
                    let mut gi = vec![0.0; x.len()];
                    for (o, &src) in arg.iter().enumerate() {
                        gi[src] += g[o];
                    }
                    gi
                }
                (LayerSpec::Relu, _) => x.data.iter().zip(&g).map(|(v, gv)| if *v > 0.0 { *gv } else { 0.0 }).collect(),
                (LayerSpec::Softmax, Extra::Output(s)) => {
                    let dot: f64 = s.iter().zip(&g).map(|(a, b)| a * b).sum();
                    s.iter().zip(&g).map(|(si, gi)| si * (gi - dot)).collect()
                }
                (LayerSpec::Dropout { .. }, Extra::Mask(mask)) => g.iter().zip(mask).map(|(a, m)| a * m).collect(),
                (LayerSpec::Dropout { .. }, Extra::None) => g,
                _ => return Err(NnError::MissingCache),
            };
        }
        for (gl, l) in grads.layers.iter().zip(&self.layers) {
            debug_assert!(l.has_params() || gl.weights.is_empty());
        }
        Ok((grads, Tensor::new(self.input_shape.clone(), g)))
    }
}

fn dense_forward(p: &LayerParams, x: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    (0..n_out)
        .map(|o| p.bias[o] + p.weights[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

fn dense_backward(p: &LayerParams, gp: &mut LayerParams, x: &[f64], g: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    let mut gx = vec![0.0; n_in];
    for o in 0..n_out {
        let go = g[o];
        gp.bias[o] += go;
        let row = &p.weights[o * n_in..(o + 1) * n_in];
        let grow = &mut gp.weights[o * n_in..(o + 1) * n_in];
        for k in 0..n_in {
            grow[k] += go * x[k];
            gx[k] += go * row[k];
        }
    }
    gx
}

fn conv_forward(p: &LayerParams, x: &Tensor, cin: usize, cout: usize) -> Vec<f64> {
    let (h, w) = (x.shape[1], x.shape[2]);
    let (oh, ow) = (h - 2, w - 2);
    let mut y = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        let out = &mut y[o * oh * ow..(o + 1) * oh * ow];
        out.iter_mut().for_each(|v| *v = p.bias[o]);
        for c in 0..cin {
            let plane = &x.data[c * h * w..(c + 1) * h * w];
            let k = &p.weights[(o * cin + c) * 9..(o * cin + c + 1) * 9];
            for r in 0..oh {
                for (dr, krow) in k.chunks_exact(3).enumerate() {
                    let src = &plane[(r + dr) * w..(r + dr) * w + w];
                    let dst = &mut out[r * ow..(r + 1) * ow];
                    for (col, d) in dst.iter_mut().enumerate() {
                        *d += krow[0] * src[col] + krow[1] * src[col + 1] + krow[2] * src[col + 2];
                    }
                }
            }
        }
    }
    y
}

fn conv_backward(p: &LayerParams, gp: &mut LayerParams, x: &Tensor, g: &[f64], cin: usize, cout: usize) -> Vec<f64> {
    let (h, w) = (x.shape[1], x.shape[2]);
    let (oh, ow) = (h - 2, w - 2);
    let mut gx = vec![0.0; x.len()];
    for o in 0..cout {
        let go = &g[o * oh * ow..(o + 1) * oh * ow];
        gp.bias[o] += go.iter().sum::<f64>();
        for c in 0..cin {
            let plane = &x.data[c * h * w..(c + 1) * h * w];
            let gplane = &mut gx[c * h * w..(c + 1) * h * w];
            let base = (o * cin + c) * 9;
            for dr in 0..3 {
                for dc in 0..3 {
                    let kw = p.weights[base + dr * 3 + dc];
                    let mut acc = 0.0;
                    for r in 0..oh {
                        let grow = &go[r * ow..(r + 1) * ow];
                        let src = &plane[(r + dr) * w + dc..(r + dr) * w + dc + ow];
                        acc += grow.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        let dst = &mut gplane[(r + dr) * w + dc..(r + dr) * w + dc + ow];
                        for (d, gv) in dst.iter_mut().zip(grow) {
                            *d += kw * gv;
                        }
                    }
                    gp.weights[base + dr * 3 + dc] += acc;
                }
            }
        }
    }
    gx
}

fn pool_forward(x: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for r in 0..oh {
            for col in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0);
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let idx = ch * h * w + (2 * r + dr) * w + 2 * col + dc;
                    if x.data[idx] > best.0 {
                        best = (x.data[idx], idx);
                    }
                }
                y.push(best.0);
                arg.push(best.1);
            }
        }
    }
    (y, arg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dense(n: usize) -> (Network, ClassicalParams) {
        let net = Network::new(vec![n], vec![LayerSpec::Dense { inputs: n, outputs: n }]).unwrap();
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        (net, ClassicalParams { layers: vec![LayerParams { weights: w, bias: vec![0.0; n] }] })
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let (net, p) = identity_dense(4);
        let x = Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]);
        let (y, _) = net.forward(&p, &x, Mode::Eval, 0).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn dense_weight_gradient_is_outer_product() {
        let (net, p) = identity_dense(3);
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let (_, cache) = net.forward(&p, &x, Mode::Eval, 0).unwrap();
        let up = [0.5, -1.0, 2.0];
        let (g, _) = net.backward(&p, &cache, &up).unwrap();
        for o in 0..3 {
            for k in 0..3 {
                assert_eq!(g.layers[0].weights[o * 3 + k], up[o] * x.data[k]);
            }
        }
        assert_eq!(g.layers[0].bias, up.to_vec());
    }

    #[test]
    fn relu_values_and_gradient() {
        let net = Network::new(vec![2], vec![LayerSpec::Relu]).unwrap();
        let p = ClassicalParams { layers: vec![LayerParams { weights: vec![], bias: vec![] }] };
        let (y, cache) = net.forward(&p, &Tensor::vector(vec![-1.0, 2.0]), Mode::Eval, 0).unwrap();
        assert_eq!(y.data, vec![0.0, 2.0]);
        let (_, gx) = net.backward(&p, &cache, &[1.0, 1.0]).unwrap();
        assert_eq!(gx.data, vec![0.0, 1.0]);
    }

    #[test]
    fn maxpool_picks_block_maximum() {
        let net = Network::new(vec![1, 2, 2], vec![LayerSpec::MaxPool2x2]).unwrap();
        let p = ClassicalParams { layers: vec![LayerParams { weights: vec![], bias: vec![] }] };
        let (y, _) = net.forward(&p, &Tensor::new(vec![1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]), Mode::Eval, 0).unwrap();
        assert_eq!(y.data, vec![3.0]);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let net = Network::new(vec![5], vec![LayerSpec::Dropout { rate: 0.5 }]).unwrap();
        let p = ClassicalParams { layers: vec![LayerParams { weights: vec![], bias: vec![] }] };
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(net.forward(&p, &x, Mode::Eval, 9).unwrap().0.data, x.data);
        assert!(matches!(
            Network::new(vec![5], vec![LayerSpec::Dropout { rate: 1.0 }]),
            Err(NnError::BadDropout(_))
        ));
    }

    #[test]
    fn shape_errors_are_reported() {
        let err = Network::new(vec![1, 28, 28], vec![LayerSpec::Dense { inputs: 10, outputs: 2 }]).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { layer: 0, .. }));
        let hqnn = Network::new(
            vec![1, 28, 28],
            vec![
                LayerSpec::Conv3x3 { in_channels: 1, out_channels: 8 },
                LayerSpec::Relu,
                LayerSpec::MaxPool2x2,
                LayerSpec::Dense { inputs: 8 * 13 * 13, outputs: 10 },
            ],
        )
        .unwrap();
        assert_eq!(hqnn.output_len(), 10);
    }

    #[test]
    fn flat_roundtrip() {
        let net = Network::new(vec![3], vec![LayerSpec::Dense { inputs: 3, outputs: 2 }, LayerSpec::Relu]).unwrap();
        let p = net.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let mut q = p.zeros_like();
        q.assign_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.assign_flat(&[0.0]).is_err());
    }
}
