//! Output-only membership inference: features, attack datasets and the shallow attack classifier.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::Image;
use crate::models::{
    predict_all, run_plan, BatchEval, ModelError, ModelParams, ModelSpec, Objective, Optimizer, PredictionRecord,
    RunPlan,
};
use crate::nn::{softmax_cross_entropy, ClassicalParams, LayerSpec, Mode, Network, NnError, Tensor};
use crate::qsim::mix_seed;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("loss features need labelled samples")]
    MissingLabel,
    #[error("attack set has no {0} rows")]
    EmptyClass(&'static str),
    #[error("feature row has dimension {actual}, expected {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("attack training diverged")]
    Divergence,
    #[error("empty query set")]
    EmptyQuery,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackFeatureKind {
    Loss,
    Logits,
    Softmax,
    Measurement,
}

impl AttackFeatureKind {
    pub const ALL: [AttackFeatureKind; 4] =
        [AttackFeatureKind::Loss, AttackFeatureKind::Logits, AttackFeatureKind::Softmax, AttackFeatureKind::Measurement];

    pub fn name(self) -> &'static str {
        match self {
            AttackFeatureKind::Loss => "loss",
            AttackFeatureKind::Logits => "logit",
            AttackFeatureKind::Softmax => "softmax",
            AttackFeatureKind::Measurement => "measurement",
        }
    }

    pub fn dim(self, n_qubits: usize) -> usize {
        match self {
            AttackFeatureKind::Loss => 1,
            AttackFeatureKind::Logits | AttackFeatureKind::Softmax => crate::datakit::NUM_CLASSES,
            AttackFeatureKind::Measurement => n_qubits,
        }
    }
}

/// Projects one prediction record onto the chosen feature kind.
pub fn record_features(rec: &PredictionRecord, kind: AttackFeatureKind) -> Result<Vec<f64>, AttackError> {
    Ok(match kind {
        AttackFeatureKind::Loss => vec![rec.loss.ok_or(AttackError::MissingLabel)?],
        AttackFeatureKind::Logits => rec.logits.clone(),
        AttackFeatureKind::Softmax => rec.probs.clone(),
        AttackFeatureKind::Measurement => rec.measurement.clone(),
    })
}

/// One feature vector per image. `nonce` selects the shot stream on a sampling backend.
pub fn extract_features(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &[Image],
    kind: AttackFeatureKind,
    nonce: u64,
) -> Result<Vec<Vec<f64>>, AttackError> {
    predict_all(spec, params, data, nonce)?.iter().map(|r| record_features(r, kind)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Balance {
    /// Randomly drop rows of the larger side until both sides match.
    #[default]
    Downsample,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub features: Vec<f64>,
    /// 1 = member, 0 = non-member.
    pub label: u8,
    /// Split the row came from, e.g. `dr` or `test`.
    pub source: String,
    /// Corpus index of the underlying image.
    pub image: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackDataset {
    pub dim: usize,
    pub rows: Vec<AttackRow>,
}

/// Rows of one split, tagged for provenance.
#[derive(Debug, Clone)]
pub struct TaggedRows<'a> {
    pub source: &'a str,
    pub images: &'a [Image],
    pub features: Vec<Vec<f64>>,
}

pub fn build_attack_set(
    members: TaggedRows<'_>,
    nonmembers: TaggedRows<'_>,
    balance: Balance,
    seed: u64,
) -> Result<AttackDataset, AttackError> {
    if members.features.is_empty() {
        return Err(AttackError::EmptyClass("member"));
    }
    if nonmembers.features.is_empty() {
        return Err(AttackError::EmptyClass("non-member"));
    }
    let dim = members.features[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut take = |t: &TaggedRows<'_>, label: u8, keep: usize| -> Result<Vec<AttackRow>, AttackError> {
        let mut idx: Vec<usize> = (0..t.features.len()).collect();
        if keep < idx.len() {
            idx.shuffle(&mut rng);
            idx.truncate(keep);
            idx.sort_unstable();
        }
        idx.into_iter()
            .map(|i| {
                let f = &t.features[i];
                if f.len() != dim {
                    return Err(AttackError::Dimension { expected: dim, actual: f.len() });
                }
                Ok(AttackRow { features: f.clone(), label, source: t.source.to_string(), image: t.images[i].index })
            })
            .collect()
    };
    let (nm, nn) = (members.features.len(), nonmembers.features.len());
    let (km, kn) = match balance {
        Balance::Downsample => (nm.min(nn), nm.min(nn)),
        Balance::None => (nm, nn),
    };
    let mut rows = take(&members, 1, km)?;
    rows.extend(take(&nonmembers, 0, kn)?);
    Ok(AttackDataset { dim, rows })
}

impl AttackDataset {
    pub fn count(&self, label: u8) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    /// CSV with columns `f0..f{d-1},label,source,image`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AttackError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..self.dim).map(|i| format!("f{i}")).collect();
        header.extend(["label".into(), "source".into(), "image".into()]);
        w.write_record(&header).map_err(csv_io)?;
        for r in &self.rows {
            let mut rec: Vec<String> = r.features.iter().map(|v| format!("{v:e}")).collect();
            rec.extend([r.label.to_string(), r.source.clone(), r.image.to_string()]);
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackModelSpec {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for AttackModelSpec {
    fn default() -> Self {
        Self { hidden: 64, dropout: 0.5, epochs: 200, learning_rate: 1e-3, batch_size: 64 }
    }
}

impl AttackModelSpec {
    /// dense(d→h) → relu → dropout → dense(h→2) → softmax.
    pub fn network(&self, dim: usize) -> Result<Network, AttackError> {
        Ok(Network::new(
            vec![dim],
            vec![
                LayerSpec::Dense { inputs: dim, outputs: self.hidden },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: self.dropout },
                LayerSpec::Dense { inputs: self.hidden, outputs: 2 },
                LayerSpec::Softmax,
            ],
        )?)
    }
}

/// A trained attack classifier, including the feature standardization it was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackModel {
    pub network: Network,
    pub params: ClassicalParams,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Per-feature 1st and 99th percentiles of the training rows. Queries are clamped into this
    /// range, so the sparse tails (often a single outlier) never decide far-away queries.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AttackModel {
    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter().zip(&self.mean).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    /// Probability that `features` came from a training member.
    pub fn member_probability(&self, features: &[f64]) -> Result<f64, AttackError> {
        if features.len() != self.mean.len() {
            return Err(AttackError::Dimension { expected: self.mean.len(), actual: features.len() });
        }
        let clamped: Vec<f64> =
            features.iter().zip(&self.lo).zip(&self.hi).map(|((x, lo), hi)| x.clamp(*lo, *hi)).collect();
        let x = Tensor::vector(self.standardize(&clamped));
        let (y, _) = self.network.forward(&self.params, &x, Mode::Eval, 0)?;
        Ok(y.data[1])
    }

    pub fn is_member(&self, features: &[f64]) -> Result<bool, AttackError> {
        Ok(self.member_probability(features)? > 0.5)
    }

    /// Percentage of rows labelled member.
    pub fn member_rate(&self, rows: &[Vec<f64>]) -> Result<f64, AttackError> {
        if rows.is_empty() {
            return Err(AttackError::EmptyQuery);
        }
        let mut hits = 0;
        for r in rows {
            hits += self.is_member(r)? as usize;
        }
        Ok(100.0 * hits as f64 / rows.len() as f64)
    }

    /// Fraction of labelled rows classified correctly, in percent.
    pub fn accuracy(&self, ds: &AttackDataset) -> Result<f64, AttackError> {
        let mut hits = 0;
        for r in &ds.rows {
            hits += (self.is_member(&r.features)? == (r.label == 1)) as usize;
        }
        Ok(100.0 * hits as f64 / ds.rows.len().max(1) as f64)
    }
}

struct AttackObjective<'a> {
    logits_net: Network,
    template: &'a ClassicalParams,
    xs: Vec<Tensor>,
    ys: Vec<usize>,
}

impl Objective for AttackObjective<'_> {
    fn n_samples(&self) -> usize {
        self.xs.len()
    }

    fn batch_eval(&self, params: &[f64], batch: &[usize], nonce: u64) -> Result<BatchEval, ModelError> {
        let mut p = self.template.clone();
        p.assign_flat(params)?;
        let p = ClassicalParams { layers: p.layers[..self.logits_net.layers.len()].to_vec() };
        let mut grad = vec![0.0; params.len()];
        let (mut loss, mut conf) = (0.0, 0.0);
        for &i in batch {
            let (z, cache) = self.logits_net.forward(&p, &self.xs[i], Mode::Train, mix_seed(nonce, i as u64))?;
            let (probs, l) = softmax_cross_entropy(&z.data, self.ys[i]);
            let mut d = probs.clone();
            d[self.ys[i]] -= 1.0;
            let (g, _) = self.logits_net.backward(&p, &cache, &d)?;
            for (a, b) in grad.iter_mut().zip(g.to_flat()) {
                *a += b;
            }
            loss += l;
            conf += probs[self.ys[i]];
        }
        let n = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(BatchEval { loss: loss / n, confidence: conf / n, grad })
    }
}

const CLAMP_QUANTILE: f64 = 0.01;

/// Fits the attack classifier with Adam on cross-entropy. Features are standardized with the
/// training rows' mean and standard deviation; queries are clamped to the central
/// training range.
pub fn train_attack_model(ds: &AttackDataset, spec: &AttackModelSpec, seed: u64) -> Result<AttackModel, AttackError> {
    if ds.count(1) == 0 {
        return Err(AttackError::EmptyClass("member"));
    }
    if ds.count(0) == 0 {
        return Err(AttackError::EmptyClass("non-member"));
    }
    let d = ds.dim;
    let n = ds.rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &ds.rows {
        if r.features.len() != d {
            return Err(AttackError::Dimension { expected: d, actual: r.features.len() });
        }
        for (m, x) in mean.iter_mut().zip(&r.features) {
            *m += x / n;
        }
    }
    let mut scale = vec![0.0; d];
    for r in &ds.rows {
        for ((s, x), m) in scale.iter_mut().zip(&r.features).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { s.sqrt() } else { 1.0 });
    let (mut lo, mut hi) = (Vec::with_capacity(d), Vec::with_capacity(d));
    for j in 0..d {
        let mut col: Vec<f64> = ds.rows.iter().map(|r| r.features[j]).collect();
        col.sort_by(|a, b| a.total_cmp(b));
        let at = |q: f64| col[((col.len() - 1) as f64 * q).round() as usize];
        lo.push(at(CLAMP_QUANTILE));
        hi.push(at(1.0 - CLAMP_QUANTILE));
    }

    let network = spec.network(d)?;
    let params = network.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut model = AttackModel { network, params, mean, scale, lo, hi };
    let logits_net = Network::new(vec![d], model.network.layers[..4].to_vec())?;
    let obj = AttackObjective {
        logits_net,
        template: &model.params,
        xs: ds.rows.iter().map(|r| Tensor::vector(model.standardize(&r.features))).collect(),
        ys: ds.rows.iter().map(|r| r.label as usize).collect(),
    };
    let mut flat = model.params.to_flat();
    let plan = RunPlan {
        epochs: spec.epochs as f64,
        batch_size: spec.batch_size,
        learning_rate: spec.learning_rate,
        optimizer: Optimizer::adam(),
        ascend: false,
        seed: mix_seed(seed, 1),
        mask: None,
        stop: None,
    };
    run_plan(&obj, &mut flat, &plan).map_err(|e| match e {
        ModelError::Divergence { .. } => AttackError::Divergence,
        other => other.into(),
    })?;
    drop(obj);
    model.params.assign_flat(&flat)?;
    Ok(model)
}

/// Percentage of `query` images the attack labels as members of the target's training set.
pub fn mia_success_rate(
    attack: &AttackModel,
    spec: &ModelSpec,
    params: &ModelParams,
    query: &[Image],
    kind: AttackFeatureKind,
    nonce: u64,
) -> Result<f64, AttackError> {
    if query.is_empty() {
        return Err(AttackError::EmptyQuery);
    }
    attack.member_rate(&extract_features(spec, params, query, kind, nonce)?)
}

/// How vector features are presented to the attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureOrder {
    /// Entries in class (or qubit) order.
    Raw,
    /// Entries sorted in descending order, which hides which class produced them.
    Sorted,
    /// The `k` largest entries in descending order. Low-ranked logits carry a per-class
    /// profile that the attack never sees for the forget class.
    Top(usize),
}

impl Default for FeatureOrder {
    fn default() -> Self {
        FeatureOrder::Top(3)
    }
}

impl FeatureOrder {
    pub fn apply(self, mut v: Vec<f64>) -> Vec<f64> {
        match self {
            FeatureOrder::Raw => {}
            FeatureOrder::Sorted => v.sort_by(|a, b| b.total_cmp(a)),
            FeatureOrder::Top(k) => {
                v.sort_by(|a, b| b.total_cmp(a));
                v.truncate(k.max(1));
            }
        }
        v
    }
}

/// Per-target protocol: members are `dr`, non-members are `test`, and the rate is measured on
/// `query` (drawn from the forget class and never used for attack training). Test images of
/// `forget_class` are left out of the non-member side so that the attack cannot key on class
/// identity, which the member side never shows it.
#[derive(Debug, Clone, Copy)]
pub struct MiaProtocol<'a> {
    pub dr: &'a [Image],
    pub test: &'a [Image],
    pub query: &'a [Image],
    pub forget_class: Option<u8>,
    pub balance: Balance,
    pub order: FeatureOrder,
    pub attack: AttackModelSpec,
    pub seed: u64,
}

/// MIA success rate of a freshly trained attack for each feature kind, in the order given.
pub fn evaluate_mia(
    spec: &ModelSpec,
    params: &ModelParams,
    protocol: &MiaProtocol<'_>,
    kinds: &[AttackFeatureKind],
) -> Result<Vec<f64>, AttackError> {
    let nonce = mix_seed(protocol.seed, 0x4D49);
    let records = |data: &[Image]| predict_all(spec, params, data, nonce);
    let test: Vec<Image> =
        protocol.test.iter().filter(|i| Some(i.label) != protocol.forget_class).cloned().collect();
    let (dr, test_rec, query) = (records(protocol.dr)?, records(&test)?, records(protocol.query)?);
    kinds
        .par_iter()
        .map(|&kind| {
            let feats = |rs: &[PredictionRecord]| {
                rs.iter().map(|r| record_features(r, kind).map(|f| protocol.order.apply(f))).collect::<Result<Vec<_>, _>>()
            };
            let ds = build_attack_set(
                TaggedRows { source: "dr", images: protocol.dr, features: feats(&dr)? },
                TaggedRows { source: "test", images: &test, features: feats(&test_rec)? },
                protocol.balance,
                protocol.seed,
            )?;
            let model = train_attack_model(&ds, &protocol.attack, mix_seed(protocol.seed, kind as u64))?;
            model.member_rate(&feats(&query)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imgs(n: usize) -> Vec<Image> {
        (0..n).map(|i| Image { index: i, pixels: vec![], label: 0 }).collect()
    }

    #[test]
    fn downsampling_balances_sides() {
        let (a, b) = (imgs(600), imgs(400));
        let ds = build_attack_set(
            TaggedRows { source: "dr", images: &a, features: vec![vec![1.0]; 600] },
            TaggedRows { source: "test", images: &b, features: vec![vec![0.0]; 400] },
            Balance::Downsample,
            3,
        )
        .unwrap();
        assert_eq!((ds.count(1), ds.count(0)), (400, 400));
        let full = build_attack_set(
            TaggedRows { source: "dr", images: &a, features: vec![vec![1.0]; 600] },
            TaggedRows { source: "test", images: &b, features: vec![vec![0.0]; 400] },
            Balance::None,
            3,
        )
        .unwrap();
        assert_eq!((full.count(1), full.count(0)), (600, 400));
        assert!(full.rows.iter().all(|r| (r.label == 1) == (r.source == "dr")));
    }

    #[test]
    fn empty_side_is_rejected() {
        let a = imgs(3);
        let err = build_attack_set(
            TaggedRows { source: "dr", images: &a, features: vec![vec![1.0]; 3] },
            TaggedRows { source: "test", images: &[], features: vec![] },
            Balance::Downsample,
            0,
        );
        assert!(matches!(err, Err(AttackError::EmptyClass(_))));
    }

    #[test]
    fn csv_export_has_provenance() {
        let a = imgs(2);
        let ds = build_attack_set(
            TaggedRows { source: "dr", images: &a, features: vec![vec![0.5, 1.0]; 2] },
            TaggedRows { source: "test", images: &a, features: vec![vec![0.0, 2.0]; 2] },
            Balance::None,
            0,
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("f0,f1,label,source,image"));
        assert_eq!(lines.count(), 4);
        assert!(text.contains(",1,dr,0"));
    }
}
