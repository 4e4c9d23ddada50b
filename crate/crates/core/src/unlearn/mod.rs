//! Class-wise unlearning: gradient ascent, Fisher-based dampening and Fisher-guided ascent.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datakit::Image;
use crate::models::{
    run_plan, train, Backend, ModelError, ModelObjective, ModelParams, ModelSpec, Objective, Optimizer, RunPlan,
    RunReport, StopRule, TrainConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum UnlearnError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Fisher diagonal has {actual} entries, parameters have {expected}")]
    FisherShape { expected: usize, actual: usize },
    #[error("non-finite gradient while estimating the Fisher diagonal")]
    NonFiniteFisher,
    #[error("invalid unlearning configuration: {0}")]
    Config(String),
}

/// Per-parameter mean of squared per-sample loss gradients, in flat parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherDiagonal {
    #[serde(with = "crate::codec::f64_b64")]
    pub values: Vec<f64>,
}

impl FisherDiagonal {
    pub fn from_sample_gradients<G: AsRef<[f64]>>(grads: &[G]) -> Result<Self, UnlearnError> {
        let Some(first) = grads.first() else {
            return Err(ModelError::EmptyData.into());
        };
        let mut values = vec![0.0; first.as_ref().len()];
        for g in grads {
            let g = g.as_ref();
            if g.len() != values.len() {
                return Err(UnlearnError::FisherShape { expected: values.len(), actual: g.len() });
            }
            for (v, x) in values.iter_mut().zip(g) {
                *v += x * x;
            }
        }
        let n = grads.len() as f64;
        values.iter_mut().for_each(|v| *v /= n);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(UnlearnError::NonFiniteFisher);
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Fisher diagonal of any per-sample objective at `params`.
pub fn fisher_of<O: Objective>(obj: &O, params: &[f64]) -> Result<FisherDiagonal, UnlearnError> {
    if obj.n_samples() == 0 {
        return Err(ModelError::EmptyData.into());
    }
    let grads: Vec<Result<Vec<f64>, ModelError>> =
        (0..obj.n_samples()).into_par_iter().map(|i| obj.batch_eval(params, &[i], 0).map(|b| b.grad)).collect();
    let grads = grads.into_iter().collect::<Result<Vec<_>, _>>()?;
    FisherDiagonal::from_sample_gradients(&grads)
}

/// Empirical Fisher diagonal of the cross-entropy over `data`, always on exact gradients.
pub fn fisher_diagonal(spec: &ModelSpec, params: &ModelParams, data: &[Image]) -> Result<FisherDiagonal, UnlearnError> {
    spec.check_params(params)?;
    let exact = spec.clone().with_backend(Backend::Noiseless);
    let obj = ModelObjective::new(&exact, params, data);
    fisher_of(&obj, &params.to_flat())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaFormula {
    /// β = min(λ·F_Dr / F_Du, 1).
    #[default]
    Dampening,
    /// β = min(λ·F_Du / F_Dr, 1), which is 1 on every selected parameter once λ > 1.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionDirection {
    /// Parameters more important to the forget set: F_Du > α·F_Dr.
    #[default]
    Prose,
    /// The complement: F_Du ≤ α·F_Dr.
    Literal,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub fisher_s: f64,
    pub update_s: f64,
    pub recovery_s: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.fisher_s + self.update_s + self.recovery_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnOutcome {
    pub params: ModelParams,
    /// Parameters the method was allowed to change (all of them for plain ascent).
    pub selected_mask: Vec<bool>,
    /// Parameters whose value actually differs from the input.
    pub touched_mask: Vec<bool>,
    pub ascent: Option<RunReport>,
    pub timings: Timings,
}

fn diff_mask(a: &[f64], b: &[f64]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| x.to_bits() != y.to_bits()).collect()
}

impl UnlearnOutcome {
    fn new(before: &ModelParams, params: ModelParams, selected_mask: Vec<bool>) -> Self {
        let touched_mask = diff_mask(&before.to_flat(), &params.to_flat());
        Self { params, selected_mask, touched_mask, ascent: None, timings: Timings::default() }
    }
}

fn check_fisher(n: usize, f: &FisherDiagonal) -> Result<(), UnlearnError> {
    if f.len() != n {
        return Err(UnlearnError::FisherShape { expected: n, actual: f.len() });
    }
    Ok(())
}

/// Multiplier the dampening step applies to one selected parameter.
pub fn ssd_beta(f_du: f64, f_dr: f64, lambda: f64, formula: BetaFormula) -> f64 {
    let ratio = match formula {
        BetaFormula::Dampening if f_du == 0.0 => return 1.0,
        BetaFormula::Dampening => lambda * f_dr / f_du,
        BetaFormula::Literal => lambda * f_du / f_dr,
    };
    ratio.min(1.0)
}

/// Flat form of [`ssd_dampen`]: returns the new values and the selection mask.
pub fn ssd_dampen_flat(
    theta: &[f64],
    f_du: &[f64],
    f_dr: &[f64],
    alpha: f64,
    lambda: f64,
    formula: BetaFormula,
) -> (Vec<f64>, Vec<bool>) {
    let mut out = theta.to_vec();
    let mut selected = vec![false; theta.len()];
    for i in 0..theta.len() {
        if f_du[i] > alpha * f_dr[i] {
            selected[i] = true;
            out[i] = theta[i] * ssd_beta(f_du[i], f_dr[i], lambda, formula);
        }
    }
    (out, selected)
}

/// Scales every parameter with F_Du > α·F_Dr by β; the rest are copied untouched.
pub fn ssd_dampen(
    params: &ModelParams,
    f_du: &FisherDiagonal,
    f_dr: &FisherDiagonal,
    alpha: f64,
    lambda: f64,
    formula: BetaFormula,
) -> Result<UnlearnOutcome, UnlearnError> {
    check_ssd_args(alpha, lambda)?;
    let flat = params.to_flat();
    check_fisher(flat.len(), f_du)?;
    check_fisher(flat.len(), f_dr)?;
    let t = Instant::now();
    let (new, selected) = ssd_dampen_flat(&flat, &f_du.values, &f_dr.values, alpha, lambda, formula);
    let mut out = UnlearnOutcome::new(params, params.with_flat(&new)?, selected);
    out.timings.update_s = t.elapsed().as_secs_f64();
    Ok(out)
}

fn check_ssd_args(alpha: f64, lambda: f64) -> Result<(), UnlearnError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(UnlearnError::Config(format!("alpha must be positive, got {alpha}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(UnlearnError::Config(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Selection mask for Fisher-guided ascent.
pub fn fg_selection(f_du: &[f64], f_dr: &[f64], alpha: f64, direction: SelectionDirection) -> Vec<bool> {
    f_du.iter()
        .zip(f_dr)
        .map(|(u, r)| match direction {
            SelectionDirection::Prose => *u > alpha * r,
            SelectionDirection::Literal => *u <= alpha * r,
        })
        .collect()
}

/// Settings shared by every ascent phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentConfig {
    /// Epoch budget over the forget set; fractional budgets are allowed.
    pub epochs: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Update rule applied to the sign-flipped gradient; plain SGD by default.
    pub optimizer: Optimizer,
    pub stop: Option<StopRule>,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            epochs: 3.0,
            learning_rate: 0.05,
            batch_size: 32,
            optimizer: Optimizer::Sgd,
            stop: Some(StopRule::default()),
            seed: 0,
        }
    }
}

impl AscentConfig {
    fn plan<'m>(&self, mask: Option<&'m [bool]>) -> RunPlan<'m> {
        RunPlan {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            ascend: true,
            seed: self.seed,
            mask,
            stop: self.stop,
        }
    }
}

/// Plain gradient ascent over an objective, optionally restricted to `mask`.
pub fn ascend_objective<O: Objective>(
    obj: &O,
    params: &mut [f64],
    cfg: &AscentConfig,
    mask: Option<&[bool]>,
) -> Result<RunReport, UnlearnError> {
    if !(cfg.epochs >= 0.0 && cfg.epochs.is_finite()) {
        return Err(UnlearnError::Config(format!("ascent epochs must be non-negative, got {}", cfg.epochs)));
    }
    Ok(run_plan(obj, params, &cfg.plan(mask))?)
}

/// θ ← θ + η∇L over `du`, stopping early once the stop rule fires.
pub fn gradient_ascent_unlearn(
    spec: &ModelSpec,
    params: &ModelParams,
    du: &[Image],
    cfg: &AscentConfig,
) -> Result<UnlearnOutcome, UnlearnError> {
    spec.check_params(params)?;
    let t = Instant::now();
    let obj = ModelObjective::new(spec, params, du);
    let mut flat = params.to_flat();
    let report = ascend_objective(&obj, &mut flat, cfg, None)?;
    let mut out = UnlearnOutcome::new(params, params.with_flat(&flat)?, vec![true; flat.len()]);
    out.ascent = Some(report);
    out.timings.update_s = t.elapsed().as_secs_f64();
    Ok(out)
}

/// Gradient ascent on `du` confined to the Fisher-selected parameters.
#[allow(clippy::too_many_arguments)]
pub fn fg_relative_ascent(
    spec: &ModelSpec,
    params: &ModelParams,
    du: &[Image],
    f_du: &FisherDiagonal,
    f_dr: &FisherDiagonal,
    alpha: f64,
    direction: SelectionDirection,
    cfg: &AscentConfig,
) -> Result<UnlearnOutcome, UnlearnError> {
    spec.check_params(params)?;
    let mut flat = params.to_flat();
    check_fisher(flat.len(), f_du)?;
    check_fisher(flat.len(), f_dr)?;
    let t = Instant::now();
    let mask = fg_selection(&f_du.values, &f_dr.values, alpha, direction);
    let report = if mask.iter().any(|m| *m) {
        let obj = ModelObjective::new(spec, params, du);
        Some(ascend_objective(&obj, &mut flat, cfg, Some(&mask))?)
    } else {
        None
    };
    let mut out = UnlearnOutcome::new(params, params.with_flat(&flat)?, mask);
    out.ascent = report;
    out.timings.update_s = t.elapsed().as_secs_f64();
    Ok(out)
}

/// `epochs` epochs of ordinary descent on the retained set.
pub fn recovery_train(
    spec: &ModelSpec,
    params: &ModelParams,
    dr: &[Image],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<ModelParams, UnlearnError> {
    if epochs == 0 {
        return Ok(params.clone());
    }
    let cfg = TrainConfig { epochs, ..*cfg };
    Ok(train(spec, params, dr, &cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnlearnMethod {
    /// Ascent on D_u for `ascent.epochs`, then recovery.
    GradientAscent,
    /// One-shot dampening from the two Fisher diagonals, then recovery.
    FisherSsd { lambda: f64, alpha: f64, beta_formula: BetaFormula },
    /// Masked ascent on D_u, then recovery.
    FisherGuided { alpha: f64, selection_direction: SelectionDirection },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: UnlearnMethod,
    pub ascent: AscentConfig,
    pub recovery_epochs: usize,
    pub recovery: TrainConfig,
}

impl UnlearnConfig {
    pub fn validate(&self) -> Result<(), UnlearnError> {
        match self.method {
            UnlearnMethod::FisherSsd { lambda, alpha, .. } => check_ssd_args(alpha, lambda)?,
            UnlearnMethod::FisherGuided { alpha, .. } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(UnlearnError::Config(format!("alpha must be positive, got {alpha}")))
            }
            _ => {}
        }
        if !(self.ascent.epochs >= 0.0) {
            return Err(UnlearnError::Config("ascent epochs must be non-negative".into()));
        }
        Ok(())
    }
}

/// Full method: the selected unlearning step followed by `recovery_epochs` of descent on `dr`.
pub fn run_unlearning(
    spec: &ModelSpec,
    params: &ModelParams,
    du: &[Image],
    dr: &[Image],
    cfg: &UnlearnConfig,
) -> Result<UnlearnOutcome, UnlearnError> {
    cfg.validate()?;
    let fishers = |t: &mut Timings| -> Result<(FisherDiagonal, FisherDiagonal), UnlearnError> {
        let start = Instant::now();
        let f = (fisher_diagonal(spec, params, du)?, fisher_diagonal(spec, params, dr)?);
        t.fisher_s = start.elapsed().as_secs_f64();
        Ok(f)
    };
    let mut timings = Timings::default();
    let mut out = match cfg.method {
        UnlearnMethod::GradientAscent => {
            if cfg.ascent.epochs > 0.0 {
                gradient_ascent_unlearn(spec, params, du, &cfg.ascent)?
            } else {
                UnlearnOutcome::new(params, params.clone(), vec![true; params.layout().total()])
            }
        }
        UnlearnMethod::FisherSsd { lambda, alpha, beta_formula } => {
            let (fu, fr) = fishers(&mut timings)?;
            ssd_dampen(params, &fu, &fr, alpha, lambda, beta_formula)?
        }
        UnlearnMethod::FisherGuided { alpha, selection_direction } => {
            let (fu, fr) = fishers(&mut timings)?;
            fg_relative_ascent(spec, params, du, &fu, &fr, alpha, selection_direction, &cfg.ascent)?
        }
    };
    timings.update_s = out.timings.update_s;
    if cfg.recovery_epochs > 0 {
        let start = Instant::now();
        out.params = recovery_train(spec, &out.params, dr, cfg.recovery_epochs, &cfg.recovery)?;
        timings.recovery_s = start.elapsed().as_secs_f64();
        out.touched_mask = diff_mask(&params.to_flat(), &out.params.to_flat());
    }
    out.timings = timings;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::BatchEval;

    #[test]
    fn fisher_of_scalar_gradients() {
        let f = FisherDiagonal::from_sample_gradients(&[[1.0], [2.0], [3.0]]).unwrap();
        assert!((f.values[0] - 14.0 / 3.0).abs() < 1e-12);
        let c = FisherDiagonal::from_sample_gradients(&[[0.5, -2.0], [0.5, -2.0]]).unwrap();
        assert_eq!(c.values, vec![0.25, 4.0]);
    }

    #[test]
    fn ssd_documented_fixture() {
        let (d, sel) = ssd_dampen_flat(&[2.0], &[4.0], &[1.0], 0.5, 2.0, BetaFormula::Dampening);
        assert!(sel[0]);
        assert!((d[0] - 1.0).abs() < 1e-15);
        let (l, sel) = ssd_dampen_flat(&[2.0], &[4.0], &[1.0], 0.5, 2.0, BetaFormula::Literal);
        assert!(sel[0]);
        assert_eq!(l[0].to_bits(), 2.0f64.to_bits());
    }

    #[test]
    fn beta_guard_on_zero_forget_importance() {
        assert_eq!(ssd_beta(0.0, 0.0, 10.0, BetaFormula::Dampening), 1.0);
        assert_eq!(ssd_beta(1.0, 0.0, 10.0, BetaFormula::Literal), 1.0);
    }

    #[test]
    fn fg_selection_directions_are_complements() {
        let fu = [3.0, 0.1, 1.0];
        let fr = [1.0, 1.0, 10.0];
        let p = fg_selection(&fu, &fr, 0.1, SelectionDirection::Prose);
        let l = fg_selection(&fu, &fr, 0.1, SelectionDirection::Literal);
        assert_eq!(p, vec![true, false, false]);
        assert!(p.iter().zip(&l).all(|(a, b)| a != b));
    }

    struct Toy;

    impl Objective for Toy {
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

    #[test]
    fn toy_ascent_step() {
        let cfg = AscentConfig { epochs: 1.0, learning_rate: 0.1, batch_size: 1, optimizer: Optimizer::Sgd, stop: None, seed: 0 };
        let mut p = [0.0];
        ascend_objective(&Toy, &mut p, &cfg, None).unwrap();
        assert!((p[0] + 0.2).abs() < 1e-15);
        let mut q = [0.0];
        ascend_objective(&Toy, &mut q, &AscentConfig { epochs: 0.0, ..cfg }, None).unwrap();
        assert_eq!(q, [0.0]);
    }

    #[test]
    fn masked_toy_ascent_leaves_unselected_bits() {
        let cfg = AscentConfig { epochs: 7.0, learning_rate: 0.1, batch_size: 1, optimizer: Optimizer::Sgd, stop: None, seed: 0 };
        let start = [0.25, 0.3];
        let mut p = start;
        let mask = [true, false];
        ascend_objective(&Toy, &mut p, &cfg, Some(&mask)).unwrap();
        assert_eq!(p[1].to_bits(), start[1].to_bits());
        assert!(p[0] < start[0]);
    }
}
