//! Fast property suite behind the `selftest` command.

use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{run_sweep, ExperimentConfig, Method, SweepOptions};
use crate::attack::AttackFeatureKind;
use crate::datakit::{write_mnist_idx, Image, IMAGE_SIDE};
use crate::models::{BatchEval, Optimizer, ModelError, ModelKind, ModelObjective, ModelSpec, Objective};
use crate::nn::{LayerSpec, Mode, Network, Tensor};
use crate::qsim::{
    apply_ansatz, apply_gate, grad_exact, grad_parameter_shift, sample_z_expectations, z_expectations, AnsatzSpec, Gate,
    Rotation, ShotConfig, StateVector,
};
use crate::unlearn::{
    ascend_objective, fg_selection, fisher_of, ssd_beta, ssd_dampen_flat, AscentConfig, BetaFormula,
    SelectionDirection,
};

#[derive(Debug, Clone)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn run(id: u32, name: &'static str, f: impl FnOnce() -> Result<String, String>) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    Check { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Runs every property check; each returns pass/fail with a one-line detail.
pub fn run_all() -> Vec<Check> {
    vec![
        run(8, "gradient oracle agreement", gradient_oracle),
        run(9, "state norm preservation", norm_preservation),
        run(10, "classical layer gradients", layer_gradients),
        run(11, "SSD mask and dampening", ssd_properties),
        run(12, "FG mask integrity", fg_mask),
        run(13, "Fisher mean of squares", fisher_oracle),
        run(14, "shot estimator convergence", shot_convergence),
        run(15, "noiseless determinism", determinism),
    ]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-9
}

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> StateVector {
    let amps: Vec<Complex64> =
        (0..1 << n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    StateVector::from_amplitudes(amps.into_iter().map(|a| a / norm).collect()).expect("power of two")
}

fn random_ansatz(rng: &mut ChaCha8Rng) -> AnsatzSpec {
    let n = rng.gen_range(1..=4);
    let layers = rng.gen_range(1..=3);
    let all = [Rotation::Rx, Rotation::Ry, Rotation::Rz];
    let mut rotations: Vec<Rotation> = all.iter().copied().filter(|_| rng.gen_bool(0.6)).collect();
    if rotations.is_empty() {
        rotations.push(all[rng.gen_range(0..3)]);
    }
    let mut entanglers = Vec::new();
    if n > 1 {
        for _ in 0..rng.gen_range(0..=n) {
            let a = rng.gen_range(0..n);
            let mut b = rng.gen_range(0..n);
            while b == a {
                b = rng.gen_range(0..n);
            }
            entanglers.push((a, b));
        }
    }
    AnsatzSpec { n_qubits: n, n_layers: layers, rotations, entanglers }
}

fn gradient_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let spec = random_ansatz(&mut rng);
        let theta: Vec<f64> = (0..spec.n_params()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let input = random_state(&mut rng, spec.n_qubits);
        let up: Vec<f64> = (0..spec.n_qubits).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = grad_exact(&spec, &theta, &input, &up).map_err(|e| e.to_string())?.theta;
        let shift = grad_parameter_shift(&spec, &theta, &input, &up).map_err(|e| e.to_string())?;
        let loss = |t: &[f64]| -> f64 {
            let z = z_expectations(&apply_ansatz(input.clone(), &spec, t).expect("valid"));
            z.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        for i in 0..theta.len() {
            let h = 1e-5;
            let mut t = theta.clone();
            t[i] += h;
            let plus = loss(&t);
            t[i] -= 2.0 * h;
            let fd = (plus - loss(&t)) / (2.0 * h);
            if !close(exact[i], shift[i], 1e-5) || !close(exact[i], fd, 1e-5) {
                return Err(format!("case {case} param {i}: adjoint {} shift {} fd {fd}", exact[i], shift[i]));
            }
            worst = worst.max((exact[i] - fd).abs());
        }
    }
    Ok(format!("20 circuits, max |adjoint - fd| = {worst:.2e}"))
}

fn random_gate(rng: &mut ChaCha8Rng, n: usize) -> Gate {
    let q = rng.gen_range(0..n);
    let other = |rng: &mut ChaCha8Rng| loop {
        let b = rng.gen_range(0..n);
        if b != q {
            break b;
        }
    };
    match rng.gen_range(0..if n > 1 { 5 } else { 3 }) {
        0 => Gate::Rot([Rotation::Rx, Rotation::Ry, Rotation::Rz][rng.gen_range(0..3)], q, rng.gen_range(-6.3..6.3)),
        1 => Gate::H(q),
        2 => Gate::X(q),
        3 => Gate::Cnot { control: q, target: other(rng) },
        _ => Gate::Cz(q, other(rng)),
    }
}

fn norm_preservation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let mut s = random_state(&mut rng, n);
        for _ in 0..50 {
            apply_gate(&mut s, random_gate(&mut rng, n));
        }
        worst = worst.max((s.norm_sqr() - 1.0).abs());
    }
    if worst <= 1e-10 {
        Ok(format!("100 sequences of 50 gates, max drift {worst:.1e}"))
    } else {
        Err(format!("norm drift {worst:.3e}"))
    }
}

/// Checks `net` gradients against central differences of `Σ w·y` at random points.
fn check_network(net: &Network, mode: Mode, rng: &mut ChaCha8Rng, input_ok: impl Fn(&[f64]) -> bool) -> Result<(), String> {
    let n_in: usize = net.input_shape.iter().product();
    let x = loop {
        let x: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if input_ok(&x) {
            break x;
        }
    };
    let mut params = net.init_params(rng);
    for l in &mut params.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let seed = rng.gen();
    let input = Tensor::new(net.input_shape.clone(), x.clone());
    let (y, cache) = net.forward(&params, &input, mode, seed).map_err(|e| e.to_string())?;
    let w: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (gp, gx) = net.backward(&params, &cache, &w).map_err(|e| e.to_string())?;
    let h = 1e-4;
    let f = |p: &crate::nn::ClassicalParams, x: &[f64]| -> f64 {
        let (y, _) = net.forward(p, &Tensor::new(net.input_shape.clone(), x.to_vec()), mode, seed).expect("shapes");
        y.data.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    for i in 0..n_in {
        let mut xp = x.clone();
        xp[i] += h;
        let mut xm = x.clone();
        xm[i] -= h;
        let fd = (f(&params, &xp) - f(&params, &xm)) / (2.0 * h);
        if !close(gx.data[i], fd, 1e-5) {
            return Err(format!("{:?}: input {i} analytic {} fd {fd}", net.layers, gx.data[i]));
        }
    }
    let flat = params.to_flat();
    let g = gp.to_flat();
    for i in 0..flat.len() {
        let mut p = params.clone();
        let mut v = flat.clone();
        v[i] += h;
        p.assign_flat(&v).expect("len");
        let plus = f(&p, &x);
        v[i] -= 2.0 * h;
        p.assign_flat(&v).expect("len");
        let fd = (plus - f(&p, &x)) / (2.0 * h);
        if !close(g[i], fd, 1e-5) {
            return Err(format!("{:?}: param {i} analytic {} fd {fd}", net.layers, g[i]));
        }
    }
    Ok(())
}

fn away_from_zero(x: &[f64]) -> bool {
    x.iter().all(|v| v.abs() > 1e-2)
}

/// Every 2×2 pooling window has a unique maximum by a clear margin.
fn distinct_windows(side: usize) -> impl Fn(&[f64]) -> bool {
    move |x: &[f64]| {
        let planes = x.len() / (side * side);
        (0..planes).all(|c| {
            (0..side / 2).all(|r| {
                (0..side / 2).all(|col| {
                    let mut w: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|(dr, dc)| x[c * side * side + (2 * r + dr) * side + 2 * col + dc])
                        .collect();
                    w.sort_by(|a, b| b.total_cmp(a));
                    w[0] - w[1] > 1e-2
                })
            })
        })
    }
}

fn layer_gradients() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let any = |_: &[f64]| true;
    for _ in 0..20 {
        let (i, o) = (rng.gen_range(1..6), rng.gen_range(1..6));
        check_network(&Network::new(vec![i], vec![LayerSpec::Dense { inputs: i, outputs: o }]).unwrap(), Mode::Eval, &mut rng, any)?;
        let (ci, co, side) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(3..7));
        let conv = Network::new(vec![ci, side, side], vec![LayerSpec::Conv3x3 { in_channels: ci, out_channels: co }]).unwrap();
        check_network(&conv, Mode::Eval, &mut rng, any)?;
        let pside = 2 * rng.gen_range(1..4);
        let pool = Network::new(vec![rng.gen_range(1..3), pside, pside], vec![LayerSpec::MaxPool2x2]).unwrap();
        check_network(&pool, Mode::Eval, &mut rng, distinct_windows(pside))?;
        let n = rng.gen_range(1..8);
        check_network(&Network::new(vec![n], vec![LayerSpec::Relu]).unwrap(), Mode::Eval, &mut rng, away_from_zero)?;
        check_network(&Network::new(vec![n], vec![LayerSpec::Softmax]).unwrap(), Mode::Eval, &mut rng, any)?;
        let drop = Network::new(vec![n], vec![LayerSpec::Dropout { rate: 0.5 }]).unwrap();
        check_network(&drop, Mode::Train, &mut rng, any)?;
    }
    Ok("20 fixtures each of dense, conv3x3, maxpool2x2, relu, softmax, dropout".into())
}

fn ssd_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = 64;
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0f64).powi(3)).collect();
        let fr: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-6..2.0f64).powi(3)).collect();
        let (alpha, lambda) = (rng.gen_range(0.05..2.0), rng.gen_range(0.5..20.0));
        let (out, sel) = ssd_dampen_flat(&theta, &fu, &fr, alpha, lambda, BetaFormula::Dampening);
        for i in 0..n {
            let should = fu[i] > alpha * fr[i];
            if sel[i] != should {
                return Err(format!("selection mismatch at {i}"));
            }
            if !should && out[i].to_bits() != theta[i].to_bits() {
                return Err(format!("unselected parameter {i} changed"));
            }
            if should {
                let beta = ssd_beta(fu[i], fr[i], lambda, BetaFormula::Dampening);
                if !(beta > 0.0 && beta <= 1.0) || out[i].abs() > theta[i].abs() {
                    return Err(format!("β = {beta} at {i}"));
                }
            }
        }
    }
    let (lit, _) = ssd_dampen_flat(&[2.0], &[4.0], &[1.0], 0.5, 2.0, BetaFormula::Literal);
    if lit[0].to_bits() != 2.0f64.to_bits() {
        return Err(format!("literal formula changed the fixture to {}", lit[0]));
    }
    let (damp, _) = ssd_dampen_flat(&[2.0], &[4.0], &[1.0], 0.5, 2.0, BetaFormula::Dampening);
    if (damp[0] - 1.0).abs() > 1e-15 {
        return Err(format!("dampening fixture gave {}", damp[0]));
    }
    Ok("50 random draws; literal λ=2 fixture unchanged; dampening fixture 2 → 1".into())
}

fn synthetic_images(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 10) as u8;
            let (r0, c0) = (2 + 2 * (label as usize / 5) * 5, 2 + (label as usize % 5) * 5);
            let mut pixels = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
            for r in 0..IMAGE_SIDE {
                for c in 0..IMAGE_SIDE {
                    let inside = (r0..r0 + 8).contains(&r) && (c0..c0 + 6).contains(&c);
                    let base = if inside { 0.8 } else { 0.0 };
                    pixels[r * IMAGE_SIDE + c] = (base + rng.gen_range(0.0..0.2f64)).min(1.0);
                }
            }
            Image { index: i, pixels, label }
        })
        .collect()
}

fn fg_mask() -> Result<String, String> {
    let data = synthetic_images(12, 12);
    let spec = ModelSpec::hqnn(3, 1, 1);
    let params = spec.init_params(12, 1.0);
    let obj = ModelObjective::new(&spec, &params, &data);
    let flat = params.to_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fu: Vec<f64> = (0..flat.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let fr: Vec<f64> = (0..flat.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cfg = AscentConfig { epochs: 3.0, learning_rate: 0.1, batch_size: 4, optimizer: Optimizer::Sgd, stop: None, seed: 1 };
    let mut counts = Vec::new();
    for dir in [SelectionDirection::Prose, SelectionDirection::Literal] {
        let mask = fg_selection(&fu, &fr, 0.7, dir);
        let mut p = flat.clone();
        ascend_objective(&obj, &mut p, &cfg, Some(&mask)).map_err(|e| e.to_string())?;
        let mut moved = 0;
        for i in 0..p.len() {
            if !mask[i] && p[i].to_bits() != flat[i].to_bits() {
                return Err(format!("{dir:?}: unselected parameter {i} changed"));
            }
            moved += (p[i] != flat[i]) as usize;
        }
        if moved == 0 {
            return Err(format!("{dir:?}: ascent moved nothing"));
        }
        counts.push(mask.iter().filter(|m| **m).count());
    }
    Ok(format!("selected {} (prose) / {} (literal) of {}, others bit-identical", counts[0], counts[1], flat.len()))
}

/// `L_i(θ) = a_i·θ`, so each per-sample gradient is the constant `a_i`.
struct Linear(Vec<f64>);

impl Objective for Linear {
    fn n_samples(&self) -> usize {
        self.0.len()
    }

    fn batch_eval(&self, params: &[f64], batch: &[usize], _: u64) -> Result<BatchEval, ModelError> {
        let n = batch.len() as f64;
        let g: f64 = batch.iter().map(|&i| self.0[i]).sum::<f64>() / n;
        Ok(BatchEval { loss: g * params[0], confidence: 1.0, grad: vec![g] })
    }
}

fn fisher_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut fixtures = vec![vec![1.0, 2.0, 3.0]];
    for _ in 0..20 {
        fixtures.push((0..3).map(|_| rng.gen_range(-5.0..5.0)).collect());
    }
    for a in &fixtures {
        let f = fisher_of(&Linear(a.clone()), &[0.3]).map_err(|e| e.to_string())?;
        let hand = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]) / 3.0;
        if (f.values[0] - hand).abs() > 1e-12 {
            return Err(format!("{a:?}: {} vs {hand}", f.values[0]));
        }
    }
    Ok(format!("{} three-sample fixtures match to 1e-12 (1,2,3 → 14/3)", fixtures.len()))
}

fn shot_convergence() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let state = random_state(&mut rng, 3);
    let exact = z_expectations(&state);
    let mut mean_errs = Vec::new();
    let mut summary = Vec::new();
    for shots in [100u32, 1600, 25600] {
        let bound = 4.0 / (shots as f64).sqrt();
        let (mut within, mut total, mut err_sum) = (0usize, 0usize, 0.0);
        for rep in 0..100u64 {
            let est = sample_z_expectations(&state, &ShotConfig { shots, seed: rep * 7919 + shots as u64 });
            for (e, x) in est.iter().zip(&exact) {
                let err = (e - x).abs();
                within += (err <= bound) as usize;
                total += 1;
                err_sum += err;
            }
        }
        let rate = within as f64 / total as f64;
        if rate < 0.99 {
            return Err(format!("shots {shots}: only {:.1}% within 4/√shots", 100.0 * rate));
        }
        mean_errs.push(err_sum / total as f64);
        summary.push(format!("{shots}: {:.4}", err_sum / total as f64));
    }
    if !(mean_errs[0] > mean_errs[1] && mean_errs[1] > mean_errs[2]) {
        return Err(format!("mean error does not shrink: {mean_errs:?}"));
    }
    Ok(format!("mean |error| {}", summary.join(", ")))
}

/// Writes a small synthetic corpus and returns a matching tiny experiment config.
pub fn tiny_experiment(dir: &std::path::Path) -> Result<ExperimentConfig, String> {
    let images = synthetic_images(300, 15);
    let records: Vec<Vec<u8>> =
        images.iter().map(|im| im.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()).collect();
    let labels: Vec<u8> = images.iter().map(|im| im.label).collect();
    std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    let (ip, lp) = (dir.join("images-idx3-ubyte"), dir.join("labels-idx1-ubyte"));
    write_mnist_idx(&ip, &lp, &records, &labels).map_err(|e| e.to_string())?;
    let mut cfg = ExperimentConfig::new(ModelKind::Hqnn, ip, lp);
    cfg.data.total = 200;
    cfg.model.n_qubits = 4;
    cfg.model.n_layers = Some(1);
    cfg.model.channels = 1;
    cfg.train.epochs = 2;
    cfg.attack.model.epochs = 10;
    cfg.attack.features = vec![AttackFeatureKind::Loss, AttackFeatureKind::Softmax];
    cfg.methods = vec![
        Method::Original,
        Method::FisherSsd { alpha: 10.0, lambda: 0.1 },
        Method::GradientU { ascent: 1.0, recovery: Some(1) },
    ];
    cfg.seeds = vec![0];
    Ok(cfg)
}

fn determinism() -> Result<String, String> {
    let base = std::env::temp_dir().join(format!("qmu-selftest-{}", std::process::id()));
    let cfg = tiny_experiment(&base.join("data"))?;
    let sweep = |name: &str| {
        let opts = SweepOptions { out: base.join(name), resume: false, save_checkpoints: false };
        run_sweep(&cfg, &cfg.seeds, &opts).map_err(|e| e.to_string())
    };
    let (a, b) = (sweep("a")?, sweep("b")?);
    let _ = std::fs::remove_dir_all(&base);
    if !a.failures.is_empty() {
        return Err(format!("cells failed: {:?}", a.failures));
    }
    if a.rows.len() != b.rows.len() || !a.rows.iter().zip(&b.rows).all(|(x, y)| x.same_metrics(y)) {
        return Err("rows differ between identical runs".into());
    }
    Ok(format!("{} rows reproduced bit-identically", a.rows.len()))
}
