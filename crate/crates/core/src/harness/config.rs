use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Method};
use crate::attack::{AttackFeatureKind, AttackModelSpec, Balance, FeatureOrder};
use crate::models::{ModelKind, Optimizer, StopRule, TrainConfig};
use crate::qsim::ShotConfig;
use crate::unlearn::{BetaFormula, SelectionDirection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    #[serde(default = "default_total")]
    pub total: usize,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    /// Fixed forget class; drawn per seed when absent.
    #[serde(default)]
    pub unlearn_class: Option<u8>,
}

fn default_total() -> usize {
    1000
}

fn default_train_frac() -> f64 {
    0.6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_qubits")]
    pub n_qubits: usize,
    /// Defaults to 5 for QNN and 10 for HQNN.
    #[serde(default)]
    pub n_layers: Option<usize>,
    /// Convolution channels of the HQNN front end.
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// PCA components feeding the QNN encoder.
    #[serde(default = "default_pca")]
    pub pca_components: usize,
    /// Initial angles are uniform in `[-theta_scale, theta_scale]`.
    #[serde(default = "default_theta_scale")]
    pub theta_scale: f64,
}

fn default_qubits() -> usize {
    10
}

fn default_channels() -> usize {
    8
}

fn default_pca() -> usize {
    100
}

fn default_theta_scale() -> f64 {
    0.3
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            n_qubits: default_qubits(),
            n_layers: None,
            channels: default_channels(),
            pca_components: default_pca(),
            theta_scale: default_theta_scale(),
        }
    }

    pub fn layers(&self) -> usize {
        self.n_layers.unwrap_or(match self.kind {
            ModelKind::Qnn => 5,
            ModelKind::Hqnn => 10,
        })
    }
}

/// Training hyperparameters; the seed is supplied per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { epochs: d.epochs, learning_rate: d.learning_rate, batch_size: d.batch_size, optimizer: d.optimizer }
    }
}

impl TrainSettings {
    /// Defaults used by the shipped configurations for each model family.
    pub fn for_kind(kind: ModelKind) -> Self {
        let base = Self::default();
        match kind {
            ModelKind::Qnn => Self { epochs: 30, learning_rate: 0.01, ..base },
            ModelKind::Hqnn => Self { epochs: 30, learning_rate: 0.003, ..base },
        }
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnSettings {
    /// Ascent step size.
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Ascent update rule.
    pub optimizer: Optimizer,
    pub stop: Option<StopRule>,
    /// Optimizer and step size of recovery epochs.
    pub recovery: TrainSettings,
    pub beta_formula: BetaFormula,
    pub selection_direction: SelectionDirection,
    /// Selection threshold α of Fisher-guided ascent.
    pub fg_alpha: f64,
    /// Step size of Fisher-guided ascent; `learning_rate` when absent.
    #[serde(default)]
    pub fg_learning_rate: Option<f64>,
}

impl Default for UnlearnSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            optimizer: Optimizer::Sgd,
            stop: Some(StopRule::default()),
            recovery: TrainSettings { optimizer: Optimizer::Sgd, ..TrainSettings::default() },
            beta_formula: BetaFormula::Dampening,
            selection_direction: SelectionDirection::Prose,
            fg_alpha: 1.0,
            fg_learning_rate: None,
        }
    }
}

impl UnlearnSettings {
    /// QNN ascent runs its full epoch budget. HQNN ascent stops once the forget set is
    /// misclassified, which at this step size happens after roughly 8.5 epochs.
    pub fn for_kind(kind: ModelKind) -> Self {
        let train = TrainSettings::for_kind(kind);
        let base = Self::default();
        match kind {
            ModelKind::Qnn => Self { learning_rate: 0.2, stop: None, recovery: train, ..base },
            ModelKind::Hqnn => Self {
                learning_rate: 0.007,
                recovery: train,
                fg_alpha: 30.0,
                fg_learning_rate: Some(2.0),
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSettings {
    pub features: Vec<AttackFeatureKind>,
    pub model: AttackModelSpec,
    pub balance: Balance,
    pub order: FeatureOrder,
    /// Upper bound on the number of forget-set images queried.
    pub queries: usize,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            features: AttackFeatureKind::ALL.to_vec(),
            model: AttackModelSpec::default(),
            balance: Balance::Downsample,
            order: FeatureOrder::default(),
            queries: 100,
        }
    }
}

/// `noiseless` or `shots:N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Noiseless,
    Shots(u32),
}

impl BackendChoice {
    pub fn label(&self) -> String {
        match self {
            BackendChoice::Noiseless => "noiseless".into(),
            BackendChoice::Shots(n) => format!("shots:{n}"),
        }
    }

    pub fn shot_config(&self, seed: u64) -> Option<ShotConfig> {
        match *self {
            BackendChoice::Noiseless => None,
            BackendChoice::Shots(n) => Some(ShotConfig { shots: n, seed }),
        }
    }
}

impl std::str::FromStr for BackendChoice {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || HarnessError::Config(format!("backend must be `noiseless` or `shots:N`, got {s:?}"));
        if s == "noiseless" {
            return Ok(BackendChoice::Noiseless);
        }
        let n: u32 = s.strip_prefix("shots:").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        Ok(BackendChoice::Shots(n))
    }
}

impl std::fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for BackendChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BackendChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Device emulation: after noiseless training, a few parameter-shift iterations on the shot
/// backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for DeviceSettings {
    fn default() -> Self {
        Self { iterations: 5, learning_rate: 0.01, batch_size: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub unlearn: UnlearnSettings,
    #[serde(default)]
    pub attack: AttackSettings,
    pub methods: Vec<Method>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_backend")]
    pub backend: BackendChoice,
    #[serde(default)]
    pub device: DeviceSettings,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

fn default_backend() -> BackendChoice {
    BackendChoice::Noiseless
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// A configuration with the defaults for `kind`, reading the corpus from `images`/`labels`.
    pub fn new(kind: ModelKind, images: PathBuf, labels: PathBuf) -> Self {
        Self {
            data: DataConfig {
                images,
                labels,
                total: default_total(),
                train_frac: default_train_frac(),
                unlearn_class: None,
            },
            model: ModelConfig::new(kind),
            train: TrainSettings::for_kind(kind),
            unlearn: UnlearnSettings::for_kind(kind),
            attack: AttackSettings::default(),
            methods: vec![Method::Original, Method::Target],
            seeds: default_seeds(),
            backend: BackendChoice::Noiseless,
            device: DeviceSettings::default(),
            out: default_out(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads a config file; relative data paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.data.images, &mut cfg.data.labels] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.data.train_frac > 0.0 && self.data.train_frac < 1.0) {
            return bad(format!("train_frac must lie in (0, 1), got {}", self.data.train_frac));
        }
        if let Some(c) = self.data.unlearn_class {
            if c > 9 {
                return bad(format!("unlearn_class must be 0..9, got {c}"));
            }
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return bad("training needs at least one epoch and a positive batch size".into());
        }
        if !(self.train.learning_rate > 0.0) {
            return bad("training learning rate must be positive".into());
        }
        if self.unlearn.fg_learning_rate.is_some_and(|lr| !(lr >= 0.0)) {
            return bad("fg_learning_rate must be non-negative".into());
        }
        if !(self.unlearn.fg_alpha > 0.0) {
            return bad("fg_alpha must be positive".into());
        }
        for m in &self.methods {
            if let Method::FisherSsd { lambda, alpha } = m {
                if !(*lambda > 0.0 && *alpha > 0.0) {
                    return bad(format!("{m}: λ and α must be positive"));
                }
            }
        }
        if self.attack.features.is_empty() {
            return bad("at least one attack feature kind is required".into());
        }
        if self.attack.queries == 0 {
            return bad("attack query count must be positive".into());
        }
        Ok(())
    }
}
