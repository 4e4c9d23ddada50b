use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::models::{ModelParams, ModelSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlatParams {
    #[serde(with = "crate::codec::f64_b64")]
    pre: Vec<f64>,
    #[serde(with = "crate::codec::f64_b64")]
    theta: Vec<f64>,
    #[serde(with = "crate::codec::f64_b64")]
    head: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    version: u32,
    spec: ModelSpec,
    seed: u64,
    epoch: usize,
    params: FlatParams,
    loss_history: Vec<f64>,
}

/// A saved model: spec, parameters and training provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub seed: u64,
    pub epoch: usize,
    pub loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        let env = Envelope {
            version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            seed: self.seed,
            epoch: self.epoch,
            params: FlatParams {
                pre: self.params.pre.to_flat(),
                theta: self.params.theta.clone(),
                head: self.params.head.to_flat(),
            },
            loss_history: self.loss_history.clone(),
        };
        Ok(serde_json::to_string(&env)?)
    }

    /// Parses a checkpoint; if `expected` is given, its ansatz and layer shapes must match.
    pub fn from_json(text: &str, expected: Option<&ModelSpec>) -> Result<Self, HarnessError> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| HarnessError::CorruptCheckpoint(e.to_string()))?;
        if env.version != CHECKPOINT_VERSION {
            return Err(HarnessError::CheckpointVersion { found: env.version, expected: CHECKPOINT_VERSION });
        }
        if let Some(want) = expected {
            if want.ansatz != env.spec.ansatz || want.kind != env.spec.kind || want.head != env.spec.head {
                return Err(HarnessError::CheckpointMismatch("model spec differs from the expected one".into()));
            }
        }
        let mut params = env.spec.init_params(0, 0.0);
        let shape_err = |what: &str| HarnessError::CheckpointMismatch(format!("{what} parameter count differs"));
        params.pre.assign_flat(&env.params.pre).map_err(|_| shape_err("pre-processor"))?;
        params.head.assign_flat(&env.params.head).map_err(|_| shape_err("head"))?;
        if env.params.theta.len() != params.theta.len() {
            return Err(shape_err("circuit"));
        }
        params.theta = env.params.theta;
        Ok(Self { spec: env.spec, params, seed: env.seed, epoch: env.epoch, loss_history: env.loss_history })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?).map_err(|e| HarnessError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path, expected: Option<&ModelSpec>) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text, expected)
    }
}

/// Saves and reloads `params`, returning what was read back.
pub fn checkpoint_roundtrip(spec: &ModelSpec, params: &ModelParams, path: &Path) -> Result<ModelParams, HarnessError> {
    let ck = Checkpoint { spec: spec.clone(), params: params.clone(), seed: 0, epoch: 0, loss_history: vec![] };
    ck.save(path)?;
    Ok(Checkpoint::load(path, Some(spec))?.params)
}
