use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::datakit::{PcaModel, IMAGE_SIDE, NUM_CLASSES};
use crate::nn::{ClassicalParams, LayerSpec, Network};
use crate::qsim::{AnsatzSpec, ShotConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qnn,
    Hqnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Qnn => "QNN",
            ModelKind::Hqnn => "HQNN",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where Z expectations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    Noiseless,
    Shots(ShotConfig),
}

impl Backend {
    pub fn label(&self) -> String {
        match self {
            Backend::Noiseless => "noiseless".into(),
            Backend::Shots(c) => format!("shots:{}", c.shots),
        }
    }
}

/// Classical front end feeding the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PreProcessor {
    /// Fixed PCA projection, a constant 1.0 appended, then amplitude encoding.
    Pca(PcaModel),
    /// Trainable network whose outputs become RY angles, one per qubit.
    Network(Network),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub ansatz: AnsatzSpec,
    pub pre: PreProcessor,
    pub head: Network,
    pub backend: Backend,
}

/// Trainable state. Flattened order is `pre`, `theta`, `head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub pre: ClassicalParams,
    pub theta: Vec<f64>,
    pub head: ClassicalParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Pre,
    Theta,
    Head,
}

/// Offsets of each group inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub pre: usize,
    pub theta: usize,
    pub head: usize,
}

impl ParamLayout {
    pub fn total(&self) -> usize {
        self.pre + self.theta + self.head
    }

    pub fn range(&self, group: ParamGroup) -> std::ops::Range<usize> {
        match group {
            ParamGroup::Pre => 0..self.pre,
            ParamGroup::Theta => self.pre..self.pre + self.theta,
            ParamGroup::Head => self.pre + self.theta..self.total(),
        }
    }

    pub fn group_of(&self, index: usize) -> ParamGroup {
        if index < self.pre {
            ParamGroup::Pre
        } else if index < self.pre + self.theta {
            ParamGroup::Theta
        } else {
            ParamGroup::Head
        }
    }

    /// Mask selecting one group.
    pub fn mask(&self, group: ParamGroup) -> Vec<bool> {
        let r = self.range(group);
        (0..self.total()).map(|i| r.contains(&i)).collect()
    }
}

impl ModelParams {
    pub fn layout(&self) -> ParamLayout {
        ParamLayout { pre: self.pre.len(), theta: self.theta.len(), head: self.head.len() }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.layout().total());
        self.pre.flatten_into(&mut v);
        v.extend_from_slice(&self.theta);
        self.head.flatten_into(&mut v);
        v
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let layout = self.layout();
        if flat.len() != layout.total() {
            return Err(ModelError::FlatLength { expected: layout.total(), actual: flat.len() });
        }
        self.pre.assign_flat(&flat[layout.range(ParamGroup::Pre)])?;
        self.theta.copy_from_slice(&flat[layout.range(ParamGroup::Theta)]);
        self.head.assign_flat(&flat[layout.range(ParamGroup::Head)])?;
        Ok(())
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, ModelError> {
        let mut p = self.clone();
        p.assign_flat(flat)?;
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self { pre: self.pre.zeros_like(), theta: vec![0.0; self.theta.len()], head: self.head.zeros_like() }
    }

    pub fn all_finite(&self) -> bool {
        self.pre.all_finite() && self.head.all_finite() && self.theta.iter().all(|t| t.is_finite())
    }
}

/// Dense map from the `n_qubits` expectations to the ten class logits.
pub fn head_network(n_qubits: usize) -> Network {
    Network::new(vec![n_qubits], vec![LayerSpec::Dense { inputs: n_qubits, outputs: NUM_CLASSES }])
        .expect("dense head is always well formed")
}

/// conv3x3(1→channels) → relu → maxpool2x2 → dense(→ n_qubits).
pub fn cnn_preprocessor(channels: usize, n_qubits: usize) -> Network {
    let pooled = (IMAGE_SIDE - 2) / 2;
    Network::new(
        vec![1, IMAGE_SIDE, IMAGE_SIDE],
        vec![
            LayerSpec::Conv3x3 { in_channels: 1, out_channels: channels },
            LayerSpec::Relu,
            LayerSpec::MaxPool2x2,
            LayerSpec::Dense { inputs: channels * pooled * pooled, outputs: n_qubits },
        ],
    )
    .expect("HQNN front end is well formed")
}

impl ModelSpec {
    /// PCA features + bias → amplitude encoding → hardware-efficient ansatz → dense head.
    pub fn qnn(pca: PcaModel, n_qubits: usize, n_layers: usize) -> Result<Self, ModelError> {
        if pca.k + 1 > 1 << n_qubits {
            return Err(ModelError::Config(format!(
                "{} PCA features plus bias exceed {} amplitudes",
                pca.k,
                1usize << n_qubits
            )));
        }
        Ok(Self {
            kind: ModelKind::Qnn,
            ansatz: AnsatzSpec::hardware_efficient(n_qubits, n_layers),
            pre: PreProcessor::Pca(pca),
            head: head_network(n_qubits),
            backend: Backend::Noiseless,
        })
    }

    /// The 10-qubit, 5-layer QNN.
    pub fn standard_qnn(pca: PcaModel) -> Result<Self, ModelError> {
        Self::qnn(pca, 10, 5)
    }

    /// CNN front end → angle encoding → hardware-efficient ansatz → dense head.
    pub fn hqnn(n_qubits: usize, n_layers: usize, channels: usize) -> Self {
        Self {
            kind: ModelKind::Hqnn,
            ansatz: AnsatzSpec::hardware_efficient(n_qubits, n_layers),
            pre: PreProcessor::Network(cnn_preprocessor(channels, n_qubits)),
            head: head_network(n_qubits),
            backend: Backend::Noiseless,
        }
    }

    /// The 10-qubit, 10-layer HQNN with an 8-channel convolution.
    pub fn standard_hqnn() -> Self {
        Self::hqnn(10, 10, 8)
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn n_qubits(&self) -> usize {
        self.ansatz.n_qubits
    }

    /// Classical weights use Glorot-uniform; angles are uniform in `[−theta_scale, theta_scale]`.
    pub fn init_params(&self, seed: u64, theta_scale: f64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pre = match &self.pre {
            PreProcessor::Pca(_) => ClassicalParams::empty(),
            PreProcessor::Network(net) => net.init_params(&mut rng),
        };
        let theta = (0..self.ansatz.n_params())
            .map(|_| if theta_scale > 0.0 { rng.gen_range(-theta_scale..=theta_scale) } else { 0.0 })
            .collect();
        let head = self.head.init_params(&mut rng);
        ModelParams { pre, theta, head }
    }

    /// Checks that `params` has the shapes this spec expects.
    pub fn check_params(&self, params: &ModelParams) -> Result<(), ModelError> {
        let expect_pre = match &self.pre {
            PreProcessor::Pca(_) => ClassicalParams::empty(),
            PreProcessor::Network(net) => net.init_params(&mut ChaCha8Rng::seed_from_u64(0)),
        };
        let expect_head = self.head.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let same_shape = |a: &ClassicalParams, b: &ClassicalParams| {
            a.layers.len() == b.layers.len()
                && a.layers.iter().zip(&b.layers).all(|(x, y)| x.weights.len() == y.weights.len() && x.bias.len() == y.bias.len())
        };
        if !same_shape(&params.pre, &expect_pre)
            || params.theta.len() != self.ansatz.n_params()
            || !same_shape(&params.head, &expect_head)
        {
            return Err(ModelError::ParamShape);
        }
        Ok(())
    }
}
