use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{forward_with_nonce, sample_gradient, GradientPath};
use super::{Backend, ModelError, ModelParams, ModelSpec, ParamGroup};
use crate::datakit::Image;
use crate::qsim::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 30, learning_rate: 0.01, batch_size: 32, optimizer: Optimizer::adam(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean loss, mean true-label confidence and mean gradient over a batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub loss: f64,
    pub confidence: f64,
    pub grad: Vec<f64>,
}

/// A differentiable per-sample loss over a fixed dataset, in flat-parameter form.
pub trait Objective: Sync {
    fn n_samples(&self) -> usize;
    fn batch_eval(&self, params: &[f64], batch: &[usize], nonce: u64) -> Result<BatchEval, ModelError>;
    /// Mean loss and confidence over the whole dataset without gradients.
    fn evaluate(&self, params: &[f64]) -> Result<(f64, f64), ModelError> {
        let all: Vec<usize> = (0..self.n_samples()).collect();
        self.batch_eval(params, &all, 0).map(|b| (b.loss, b.confidence))
    }
}

/// Cross-entropy of a model over labelled images.
pub struct ModelObjective<'a> {
    pub spec: &'a ModelSpec,
    pub template: &'a ModelParams,
    pub data: &'a [Image],
    pub path: GradientPath,
}

impl<'a> ModelObjective<'a> {
    pub fn new(spec: &'a ModelSpec, template: &'a ModelParams, data: &'a [Image]) -> Self {
        Self { spec, template, data, path: GradientPath::for_backend(&spec.backend) }
    }
}

impl Objective for ModelObjective<'_> {
    fn n_samples(&self) -> usize {
        self.data.len()
    }

    fn batch_eval(&self, params: &[f64], batch: &[usize], nonce: u64) -> Result<BatchEval, ModelError> {
        let p = self.template.with_flat(params)?;
        let per_sample: Vec<Result<(f64, f64, Vec<f64>), ModelError>> = batch
            .par_iter()
            .map(|&i| {
                let g = sample_gradient(self.spec, &p, &self.data[i], self.path, nonce)?;
                Ok((g.loss, g.confidence, g.grad.to_flat()))
            })
            .collect();
        let n = batch.len() as f64;
        let mut grad = vec![0.0; params.len()];
        let (mut loss, mut conf) = (0.0, 0.0);
        for r in per_sample {
            let (l, c, g) = r?;
            loss += l;
            conf += c;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(BatchEval { loss: loss / n, confidence: conf / n, grad })
    }

    fn evaluate(&self, params: &[f64]) -> Result<(f64, f64), ModelError> {
        let p = self.template.with_flat(params)?;
        let rows: Vec<Result<(f64, f64), ModelError>> = self
            .data
            .par_iter()
            .map(|img| {
                let r = forward_with_nonce(self.spec, &p, img, Some(img.label as usize), 0)?;
                Ok((r.loss.unwrap_or(f64::NAN), r.probs[img.label as usize]))
            })
            .collect();
        let n = self.data.len() as f64;
        let (mut l, mut c) = (0.0, 0.0);
        for r in rows {
            let (a, b) = r?;
            l += a;
            c += b;
        }
        Ok((l / n, c / n))
    }
}

/// First-order update state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl OptimizerState {
    pub fn new(kind: Optimizer, n: usize) -> Self {
        Self { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// Applies `params -= lr * step(grad)`, or `+=` when `ascend`. Entries where `mask` is
    /// false are never written.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, ascend: bool, mask: Option<&[bool]>) {
        let sign = if ascend { 1.0 } else { -1.0 };
        self.t += 1;
        let active = |i: usize| mask.is_none_or(|m| m[i]);
        match self.kind {
            Optimizer::Sgd => {
                for i in 0..params.len() {
                    if active(i) {
                        params[i] += sign * lr * grad[i];
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    if !active(i) {
                        continue;
                    }
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] += sign * lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Early-stop rule for ascent: stop once the mean loss exceeds `loss_threshold` or the mean
/// true-label probability drops below `confidence_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub loss_threshold: f64,
    pub confidence_floor: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { loss_threshold: 4.0, confidence_floor: 0.15 }
    }
}

impl StopRule {
    pub fn triggered(&self, loss: f64, confidence: f64) -> bool {
        loss > self.loss_threshold || confidence < self.confidence_floor
    }
}

/// One optimization run over an [`Objective`].
#[derive(Debug, Clone)]
pub struct RunPlan<'m> {
    /// Epoch budget; fractional values translate to `round(epochs * steps_per_epoch)` steps.
    pub epochs: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub ascend: bool,
    pub seed: u64,
    pub mask: Option<&'m [bool]>,
    pub stop: Option<StopRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: usize,
    pub steps_per_epoch: usize,
    /// Mean batch loss per (possibly partial) epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl RunReport {
    pub fn effective_epochs(&self) -> f64 {
        if self.steps_per_epoch == 0 {
            0.0
        } else {
            self.steps as f64 / self.steps_per_epoch as f64
        }
    }
}

/// Mini-batch loop shared by training, recovery and ascent.
pub fn run_plan<O: Objective>(obj: &O, params: &mut [f64], plan: &RunPlan<'_>) -> Result<RunReport, ModelError> {
    let n = obj.n_samples();
    if n == 0 {
        return Err(ModelError::EmptyData);
    }
    let bs = plan.batch_size.max(1).min(n);
    let steps_per_epoch = n.div_ceil(bs);
    let budget = (plan.epochs * steps_per_epoch as f64).round().max(0.0) as usize;
    let mut report = RunReport { steps_per_epoch, ..Default::default() };
    if budget == 0 {
        return Ok(report);
    }
    if let Some(stop) = plan.stop {
        let (loss, conf) = obj.evaluate(params)?;
        if stop.triggered(loss, conf) {
            report.stopped_early = true;
            return Ok(report);
        }
    }
    let mut opt = OptimizerState::new(plan.optimizer, params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0u64;
    'outer: while report.steps < budget {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(plan.seed, epoch));
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in order.chunks(bs) {
            if report.steps == budget {
                break;
            }
            let nonce = mix_seed(plan.seed ^ 0xA5A5, report.steps as u64);
            let eval = obj.batch_eval(params, batch, nonce)?;
            if !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite()) {
                return Err(ModelError::Divergence { epoch: epoch as usize, step: report.steps });
            }
            sum += eval.loss;
            count += 1;
            opt.step(params, &eval.grad, plan.learning_rate, plan.ascend, plan.mask);
            report.steps += 1;
            if let Some(stop) = plan.stop {
                let (loss, conf) = obj.evaluate(params)?;
                if !loss.is_finite() {
                    return Err(ModelError::Divergence { epoch: epoch as usize, step: report.steps });
                }
                if stop.triggered(loss, conf) {
                    report.stopped_early = true;
                    report.epoch_losses.push(sum / count as f64);
                    break 'outer;
                }
            }
        }
        report.epoch_losses.push(sum / count.max(1) as f64);
        epoch += 1;
    }
    Ok(report)
}

/// Descent on the cross-entropy over `data` for `cfg.epochs` epochs. Returns the trained
/// parameters and the mean loss of each epoch.
pub fn train(
    spec: &ModelSpec,
    initial: &ModelParams,
    data: &[Image],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>), ModelError> {
    cfg.validate()?;
    spec.check_params(initial)?;
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    let obj = ModelObjective::new(spec, initial, data);
    let mut flat = initial.to_flat();
    let plan = RunPlan {
        epochs: cfg.epochs as f64,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        ascend: false,
        seed: cfg.seed,
        mask: None,
        stop: None,
    };
    let report = run_plan(&obj, &mut flat, &plan)?;
    Ok((initial.with_flat(&flat)?, report.epoch_losses))
}

/// Parameter-shift fine-tuning of the ansatz angles on `backend`. Each iteration draws one
/// mini-batch; classical weights stay frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub backend: Backend,
    pub seed: u64,
}

pub fn refine_on_device(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &[Image],
    cfg: &RefineConfig,
) -> Result<ModelParams, ModelError> {
    spec.check_params(params)?;
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if cfg.iterations == 0 {
        return Ok(params.clone());
    }
    let device = spec.clone().with_backend(cfg.backend);
    let mut obj = ModelObjective::new(&device, params, data);
    obj.path = GradientPath::ParameterShift;
    let mask = params.layout().mask(ParamGroup::Theta);
    let mut flat = params.to_flat();
    let mut opt = OptimizerState::new(Optimizer::Sgd, flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let bs = cfg.batch_size.clamp(1, data.len());
    for it in 0..cfg.iterations {
        order.shuffle(&mut rng);
        let eval = obj.batch_eval(&flat, &order[..bs], mix_seed(cfg.seed, it as u64))?;
        if !eval.loss.is_finite() {
            return Err(ModelError::Divergence { epoch: 0, step: it });
        }
        opt.step(&mut flat, &eval.grad, cfg.learning_rate, false, Some(&mask));
    }
    params.with_flat(&flat)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// L(θ) = Σ (θ_i − 1)², one "sample".
    struct Quadratic;

    impl Objective for Quadratic {
        fn n_samples(&self) -> usize {
            1
        }
        fn batch_eval(&self, p: &[f64], _: &[usize], _: u64) -> Result<BatchEval, ModelError> {
            Ok(BatchEval {
                loss: p.iter().map(|t| (t - 1.0).powi(2)).sum(),
                confidence: 1.0,
                grad: p.iter().map(|t| 2.0 * (t - 1.0)).collect(),
            })
        }
    }

    fn plan(epochs: f64, ascend: bool) -> RunPlan<'static> {
        RunPlan {
            epochs,
            batch_size: 1,
            learning_rate: 0.1,
            optimizer: Optimizer::Sgd,
            ascend,
            seed: 0,
            mask: None,
            stop: None,
        }
    }

    #[test]
    fn ascent_on_quadratic_moves_away_from_minimum() {
        let mut p = vec![0.0];
        run_plan(&Quadratic, &mut p, &plan(1.0, true)).unwrap();
        assert!((p[0] + 0.2).abs() < 1e-15);
        assert!((Quadratic.evaluate(&p).unwrap().0 - 1.44).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_is_identity() {
        let mut p = vec![0.3, -0.7];
        let r = run_plan(&Quadratic, &mut p, &plan(0.0, true)).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(r.steps, 0);
    }

    #[test]
    fn masked_entries_are_untouched() {
        let mut p = vec![0.3, -0.7];
        let mask = [true, false];
        let mut pl = plan(5.0, true);
        pl.mask = Some(&mask);
        pl.optimizer = Optimizer::adam();
        run_plan(&Quadratic, &mut p, &pl).unwrap();
        assert_eq!(p[1].to_bits(), (-0.7f64).to_bits());
        assert!(p[0] < 0.3);
    }

    #[test]
    fn stop_rule_halts_ascent() {
        let mut p = vec![0.0];
        let mut pl = plan(100.0, true);
        pl.stop = Some(StopRule { loss_threshold: 4.0, confidence_floor: 0.0 });
        let r = run_plan(&Quadratic, &mut p, &pl).unwrap();
        assert!(r.stopped_early);
        assert!(r.steps < 100);
        assert!(Quadratic.evaluate(&p).unwrap().0 > 4.0);
    }

    #[test]
    fn fractional_budget_counts_steps() {
        struct Many;
        impl Objective for Many {
            fn n_samples(&self) -> usize {
                10
            }
            fn batch_eval(&self, p: &[f64], _: &[usize], _: u64) -> Result<BatchEval, ModelError> {
                Quadratic.batch_eval(p, &[0], 0)
            }
        }
        let mut p = vec![0.0];
        let mut pl = plan(2.4, false);
        pl.batch_size = 2;
        let r = run_plan(&Many, &mut p, &pl).unwrap();
        assert_eq!(r.steps, 12);
        assert!((r.effective_epochs() - 2.4).abs() < 1e-12);
    }
}
