use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::report::{CellFailure, MetricsReport, MetricsRow, PhaseTimes};
use super::{BackendChoice, Checkpoint, ExperimentConfig, HarnessError, Method};
use crate::attack::{evaluate_mia, AttackFeatureKind, MiaProtocol};
use crate::datakit::{fit_pca, load_mnist_idx, sample_experiment_set, split_unlearn, DatasetSplit, Image};
use crate::models::{
    evaluate_accuracy, refine_on_device, train, Backend, ModelKind, ModelParams, ModelSpec, RefineConfig,
};
use crate::qsim::mix_seed;
use crate::unlearn::{run_unlearning, AscentConfig, UnlearnConfig, UnlearnMethod};

/// A trained model together with the spec it is evaluated under.
#[derive(Debug, Clone)]
pub struct Trained {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub history: Vec<f64>,
    pub train_s: f64,
}

/// Everything one seed's cells share: the split, the original model and (lazily) the target.
pub struct SeedContext {
    pub seed: u64,
    pub split: DatasetSplit,
    pub query: Vec<Image>,
    pub original: Trained,
    target: Option<Trained>,
}

pub fn load_corpus(cfg: &ExperimentConfig) -> Result<Vec<Image>, HarnessError> {
    Ok(load_mnist_idx(&cfg.data.images, &cfg.data.labels)?)
}

/// Forget class for a seed: the configured one, or a seeded draw.
pub fn unlearn_class_for(cfg: &ExperimentConfig, seed: u64) -> u8 {
    cfg.data.unlearn_class.unwrap_or_else(|| ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xC1A55)).gen_range(0..10))
}

fn build_spec(cfg: &ExperimentConfig, fit_on: &[Image]) -> Result<ModelSpec, HarnessError> {
    let m = &cfg.model;
    Ok(match m.kind {
        ModelKind::Qnn => ModelSpec::qnn(fit_pca(fit_on, m.pca_components)?, m.n_qubits, m.layers())?,
        ModelKind::Hqnn => ModelSpec::hqnn(m.n_qubits, m.layers(), m.channels),
    })
}

fn device_backend(cfg: &ExperimentConfig, seed: u64) -> Backend {
    match cfg.backend.shot_config(mix_seed(seed, 0x5107)) {
        Some(sc) => Backend::Shots(sc),
        None => Backend::Noiseless,
    }
}

/// Noiseless training, then device refinement when a shot backend is selected.
fn train_model(cfg: &ExperimentConfig, seed: u64, data: &[Image], fit_on: &[Image]) -> Result<Trained, HarnessError> {
    let start = Instant::now();
    let spec = build_spec(cfg, fit_on)?;
    let init = spec.init_params(seed, cfg.model.theta_scale);
    let (mut params, history) = train(&spec, &init, data, &cfg.train.with_seed(seed))?;
    let backend = device_backend(cfg, seed);
    if let Backend::Shots(_) = backend {
        let refine = RefineConfig {
            iterations: cfg.device.iterations,
            learning_rate: cfg.device.learning_rate,
            batch_size: cfg.device.batch_size,
            backend,
            seed: mix_seed(seed, 0xDE71CE),
        };
        params = refine_on_device(&spec, &params, data, &refine)?;
    }
    Ok(Trained { spec: spec.with_backend(backend), params, history, train_s: start.elapsed().as_secs_f64() })
}

impl SeedContext {
    pub fn build(cfg: &ExperimentConfig, corpus: &[Image], seed: u64) -> Result<Self, HarnessError> {
        let split = sample_experiment_set(corpus, cfg.data.total, cfg.data.train_frac, seed)?;
        let split = split_unlearn(split, unlearn_class_for(cfg, seed))?;
        if split.du.is_empty() {
            return Err(HarnessError::EmptyForgetSet(split.unlearn_class.unwrap_or(0)));
        }
        let mut query = split.du.clone();
        query.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x9E)));
        query.truncate(cfg.attack.queries);
        let original = train_model(cfg, seed, &split.train, &split.train)?;
        Ok(Self { seed, split, query, original, target: None })
    }

    /// The model retrained from the same initialization on the retained set only.
    pub fn target(&mut self, cfg: &ExperimentConfig) -> Result<&Trained, HarnessError> {
        if self.target.is_none() {
            self.target = Some(train_model(cfg, self.seed, &self.split.dr, &self.split.dr)?);
        }
        Ok(self.target.as_ref().expect("just set"))
    }
}

/// Maps a method name onto the unlearning configuration it denotes.
pub fn unlearn_config(cfg: &ExperimentConfig, method: &Method, seed: u64) -> Option<UnlearnConfig> {
    let u = &cfg.unlearn;
    let ascent = |epochs: f64, learning_rate: f64| AscentConfig {
        epochs,
        learning_rate,
        batch_size: u.batch_size,
        optimizer: u.optimizer,
        stop: u.stop,
        seed: mix_seed(seed, 0xA5CE),
    };
    let recovery = u.recovery.with_seed(mix_seed(seed, 0x2EC0));
    let (method, ascent_epochs, recovery_epochs) = match *method {
        Method::Original | Method::Target => return None,
        Method::GradientR(k) => (UnlearnMethod::GradientAscent, 0.0, k),
        Method::GradientU { ascent, recovery } => (UnlearnMethod::GradientAscent, ascent, recovery.unwrap_or(0)),
        Method::FisherSsd { lambda, alpha } => {
            (UnlearnMethod::FisherSsd { lambda, alpha, beta_formula: u.beta_formula }, 0.0, 0)
        }
        Method::FgU { ascent, recovery } => (
            UnlearnMethod::FisherGuided { alpha: u.fg_alpha, selection_direction: u.selection_direction },
            ascent,
            recovery.unwrap_or(0),
        ),
    };
    let lr = match method {
        UnlearnMethod::FisherGuided { .. } => u.fg_learning_rate.unwrap_or(u.learning_rate),
        _ => u.learning_rate,
    };
    Some(UnlearnConfig { method, ascent: ascent(ascent_epochs, lr), recovery_epochs, recovery })
}

/// Accuracy and attack metrics of one model, timed as the attack phase.
fn measure(
    cfg: &ExperimentConfig,
    ctx: &SeedContext,
    spec: &ModelSpec,
    params: &ModelParams,
) -> Result<(f64, f64, f64, BTreeMap<AttackFeatureKind, f64>, f64), HarnessError> {
    let s = &ctx.split;
    let acc_u = evaluate_accuracy(spec, params, &s.du)?;
    let acc_r = evaluate_accuracy(spec, params, &s.dr)?;
    let acc_test = evaluate_accuracy(spec, params, &s.test)?;
    let start = Instant::now();
    let protocol = MiaProtocol {
        dr: &s.dr,
        test: &s.test,
        query: &ctx.query,
        forget_class: s.unlearn_class,
        balance: cfg.attack.balance,
        order: cfg.attack.order,
        attack: cfg.attack.model,
        seed: ctx.seed,
    };
    let rates = evaluate_mia(spec, params, &protocol, &cfg.attack.features)?;
    let mia = cfg.attack.features.iter().copied().zip(rates).collect();
    Ok((acc_u, acc_r, acc_test, mia, start.elapsed().as_secs_f64()))
}

/// Output of one cell: the metrics row and the parameters it was measured on.
pub struct CellResult {
    pub row: MetricsRow,
    pub spec: ModelSpec,
    pub params: ModelParams,
    /// Per-epoch loss of the run that produced `params`: training for the baselines, the
    /// ascent phase for unlearning methods.
    pub history: Vec<f64>,
}

/// Runs one (method, seed) cell against a prepared seed context.
pub fn run_cell_in(cfg: &ExperimentConfig, ctx: &mut SeedContext, method: &Method) -> Result<CellResult, HarnessError> {
    let mut phases = PhaseTimes::default();
    let mut effective_epochs = None;
    let (spec, params, wall, history) = match method {
        Method::Original => {
            let o = &ctx.original;
            phases.train_s = o.train_s;
            (o.spec.clone(), o.params.clone(), o.train_s, o.history.clone())
        }
        Method::Target => {
            let t = ctx.target(cfg)?.clone();
            phases.train_s = t.train_s;
            (t.spec, t.params, t.train_s, t.history)
        }
        m => {
            let ucfg = unlearn_config(cfg, m, ctx.seed).expect("unlearning method");
            let o = &ctx.original;
            phases.train_s = o.train_s;
            let out = run_unlearning(&o.spec, &o.params, &ctx.split.du, &ctx.split.dr, &ucfg)?;
            effective_epochs = out.ascent.as_ref().map(|r| r.effective_epochs());
            phases.unlearn_s = out.timings.total();
            let history = out.ascent.map(|r| r.epoch_losses).unwrap_or_default();
            (o.spec.clone(), out.params, out.timings.total(), history)
        }
    };
    let (acc_u, acc_r, acc_test, mia, attack_s) = measure(cfg, ctx, &spec, &params)?;
    phases.attack_s = attack_s;
    let row = MetricsRow {
        model: cfg.model.kind.name().to_string(),
        method: method.to_string(),
        backend: cfg.backend.label(),
        seed: ctx.seed,
        unlearn_class: ctx.split.unlearn_class.unwrap_or(0),
        acc_u,
        acc_r,
        acc_test,
        mia_loss: mia.get(&AttackFeatureKind::Loss).copied(),
        mia_logit: mia.get(&AttackFeatureKind::Logits).copied(),
        mia_softmax: mia.get(&AttackFeatureKind::Softmax).copied(),
        mia_measurement: mia.get(&AttackFeatureKind::Measurement).copied(),
        wall_s: wall.max(f64::MIN_POSITIVE),
        phases,
        effective_ascent_epochs: effective_epochs,
    };
    Ok(CellResult { row, spec, params, history })
}

/// Self-contained cell: loads the corpus, trains what is needed and evaluates one method.
pub fn run_cell(cfg: &ExperimentConfig, method: &Method, seed: u64) -> Result<MetricsRow, HarnessError> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let mut ctx = SeedContext::build(cfg, &corpus, seed)?;
    Ok(run_cell_in(cfg, &mut ctx, method)?.row)
}

fn file_stem(row_model: &str, method: &Method, backend: &BackendChoice, seed: u64) -> String {
    let m: String = method
        .to_string()
        .chars()
        .map(|c| match c {
            'a'..='z' | 'A'..='Z' | '0'..='9' | '-' | '.' => c,
            _ => '_',
        })
        .collect();
    let b = backend.label().replace(':', "");
    format!("{row_model}_{m}_{b}_seed{seed}")
}

/// Where a sweep persists its cells and models.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub out: PathBuf,
    /// Reuse finished cell files found under `out`.
    pub resume: bool,
    pub save_checkpoints: bool,
}

impl SweepOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into(), resume: true, save_checkpoints: true }
    }

    fn cells_dir(&self) -> PathBuf {
        self.out.join("cells")
    }

    fn checkpoints_dir(&self) -> PathBuf {
        self.out.join("checkpoints")
    }
}

fn read_cell(path: &Path) -> Option<MetricsRow> {
    serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
}

fn write_atomic(path: &Path, text: &str) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

/// Every configured method over every seed. Each finished cell is written to its own file
/// before the next starts; failed cells are recorded and the sweep continues.
pub fn run_sweep(cfg: &ExperimentConfig, seeds: &[u64], opts: &SweepOptions) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(HarnessError::Config("at least one seed is required".into()));
    }
    let corpus = load_corpus(cfg)?;
    let cells = opts.cells_dir();
    fs::create_dir_all(&cells).map_err(|e| HarnessError::io(&cells, e))?;
    if opts.save_checkpoints {
        let ck = opts.checkpoints_dir();
        fs::create_dir_all(&ck).map_err(|e| HarnessError::io(&ck, e))?;
    }
    let model = cfg.model.kind.name();
    let mut report = MetricsReport::default();
    for &seed in seeds {
        let mut ctx: Option<SeedContext> = None;
        for method in &cfg.methods {
            let stem = file_stem(model, method, &cfg.backend, seed);
            let cell_path = cells.join(format!("{stem}.json"));
            if opts.resume {
                if let Some(row) = read_cell(&cell_path) {
                    report.rows.push(row);
                    continue;
                }
            }
            let result = (|| -> Result<CellResult, HarnessError> {
                if ctx.is_none() {
                    ctx = Some(SeedContext::build(cfg, &corpus, seed)?);
                }
                run_cell_in(cfg, ctx.as_mut().expect("built"), method)
            })();
            match result {
                Ok(cell) => {
                    if opts.save_checkpoints {
                        let ck = Checkpoint {
                            spec: cell.spec,
                            params: cell.params,
                            seed,
                            epoch: cfg.train.epochs,
                            loss_history: cell.history,
                        };
                        ck.save(&opts.checkpoints_dir().join(format!("{stem}.json")))?;
                    }
                    write_atomic(&cell_path, &serde_json::to_string_pretty(&cell.row)?)?;
                    report.rows.push(cell.row);
                }
                Err(e) => report.failures.push(CellFailure {
                    model: model.to_string(),
                    method: method.to_string(),
                    backend: cfg.backend.label(),
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok(report)
}

/// Collects every finished cell file under a sweep's output directory, ordered by
/// model, backend, method and seed.
pub fn load_cells(out: &Path) -> Result<MetricsReport, HarnessError> {
    let dir = out.join("cells");
    let entries = fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut rows = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            rows.push(serde_json::from_str::<MetricsRow>(&text)?);
        }
    }
    rows.sort_by(|a, b| {
        (&a.model, &a.backend, &a.method, a.seed).cmp(&(&b.model, &b.backend, &b.method, b.seed))
    });
    Ok(MetricsReport { rows, failures: vec![] })
}
