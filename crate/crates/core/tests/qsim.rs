mod common;

use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use proptest::prelude::*;
use qmu::qsim::{
    amplitude_encode, apply_ansatz, apply_gate, grad_exact, grad_parameter_shift, sample_z_expectations, z_expectations,
    AnsatzSpec, Gate, Op, Rotation, ShotConfig, SimError, StateVector,
};

type Mat = Vec<Vec<Complex64>>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn rotation(axis: Rotation, t: f64) -> [[Complex64; 2]; 2] {
    let (s, co) = (t / 2.0).sin_cos();
    match axis {
        Rotation::Rx => [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]],
        Rotation::Ry => [[c(co, 0.0), c(-s, 0.0)], [c(s, 0.0), c(co, 0.0)]],
        Rotation::Rz => [[c(co, -s), c(0.0, 0.0)], [c(0.0, 0.0), c(co, s)]],
    }
}

/// Dense 2^n unitary of a single-qubit gate on qubit `q`; qubit q is bit q of the index.
fn lift(n: usize, q: usize, g: [[Complex64; 2]; 2]) -> Mat {
    let dim = 1 << n;
    let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
    for (row, m_row) in m.iter_mut().enumerate() {
        for (col, entry) in m_row.iter_mut().enumerate() {
            if row & !(1 << q) == col & !(1 << q) {
                *entry = g[row >> q & 1][col >> q & 1];
            }
        }
    }
    m
}

fn cnot(n: usize, ctl: usize, tgt: usize) -> Mat {
    let dim = 1 << n;
    let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
    for col in 0..dim {
        let row = if col >> ctl & 1 == 1 { col ^ (1 << tgt) } else { col };
        m[row][col] = c(1.0, 0.0);
    }
    m
}

fn apply(m: &Mat, v: &[Complex64]) -> Vec<Complex64> {
    m.iter().map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn dense_ansatz(spec: &AnsatzSpec, theta: &[f64], input: &[Complex64]) -> Vec<Complex64> {
    let n = spec.n_qubits;
    spec.ops().fold(input.to_vec(), |v, op| match op {
        Op::Rot { axis, qubit, param } => apply(&lift(n, qubit, rotation(axis, theta[param])), &v),
        Op::Cnot { control, target } => apply(&cnot(n, control, target), &v),
    })
}

fn random_state(n: usize, seed: u64) -> StateVector {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..1 << n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    amplitude_encode(&v, n).unwrap()
}

fn angles() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-std::f64::consts::PI..std::f64::consts::PI, 12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ansatz_matches_dense_unitary(theta in angles(), seed in 0u64..1000) {
        let spec = AnsatzSpec::hardware_efficient(3, 2);
        let input = random_state(3, seed);
        let fast = apply_ansatz(input.clone(), &spec, &theta).unwrap();
        let dense = dense_ansatz(&spec, &theta, input.amplitudes());
        for (a, b) in fast.amplitudes().iter().zip(&dense) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        prop_assert!((fast.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adjoint_and_parameter_shift_agree(theta in angles(), w in proptest::collection::vec(-1.0..1.0f64, 3)) {
        let spec = AnsatzSpec::hardware_efficient(3, 2);
        let input = random_state(3, 7);
        let adj = grad_exact(&spec, &theta, &input, &w).unwrap().theta;
        let ps = grad_parameter_shift(&spec, &theta, &input, &w).unwrap();
        for (a, b) in adj.iter().zip(&ps) {
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn z_expectations_lie_in_unit_interval(seed in 0u64..1000) {
        let s = random_state(4, seed);
        prop_assert!(z_expectations(&s).iter().all(|z| (-1.0..=1.0).contains(z)));
    }
}

#[test]
fn gradient_matches_finite_differences_of_weighted_z() {
    let spec = AnsatzSpec::hardware_efficient(3, 2);
    let input = random_state(3, 1);
    let theta: Vec<f64> = (0..spec.n_params()).map(|i| 0.3 * i as f64 - 1.0).collect();
    let w = [0.5, -1.0, 0.25];
    let mut f = |t: &[f64]| {
        let z = z_expectations(&apply_ansatz(input.clone(), &spec, t).unwrap());
        z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let g = grad_exact(&spec, &theta, &input, &w).unwrap();
    for i in 0..theta.len() {
        assert_abs_diff_eq!(g.theta[i], common::central_diff(&mut f, &theta, i, 1e-6), epsilon = 1e-8);
    }
}

#[test]
fn ghz_preparation() {
    let mut s = StateVector::zero(3).unwrap();
    apply_gate(&mut s, Gate::H(0));
    apply_gate(&mut s, Gate::Cnot { control: 0, target: 1 });
    apply_gate(&mut s, Gate::Cnot { control: 1, target: 2 });
    let p = s.probabilities();
    assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(p[7], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(z_expectations(&s).iter().sum::<f64>(), 0.0, epsilon = 1e-12);
}

#[test]
fn shot_estimates_converge_and_repeat() {
    let s = random_state(3, 2);
    let exact = z_expectations(&s);
    let cfg = ShotConfig::new(200_000, 3).unwrap();
    let a = sample_z_expectations(&s, &cfg);
    assert_eq!(a, sample_z_expectations(&s, &cfg));
    assert_ne!(a, sample_z_expectations(&s, &cfg.fork(1)));
    for (x, e) in a.iter().zip(&exact) {
        assert!((x - e).abs() < 0.01, "{x} vs {e}");
    }
    let counts = sample_z_expectations(&s, &ShotConfig::new(8, 0).unwrap());
    assert!(counts.iter().all(|z| (z * 8.0).fract() == 0.0));
}

#[test]
fn invalid_inputs() {
    assert_eq!(ShotConfig::new(0, 1), Err(SimError::ZeroShots));
    assert!(matches!(StateVector::zero(0), Err(SimError::QubitCount(0))));
    assert!(matches!(amplitude_encode(&[0.0; 4], 2), Err(SimError::ZeroInput)));
    assert!(matches!(amplitude_encode(&[1.0; 5], 2), Err(SimError::InputTooLong { .. })));
    assert!(StateVector::from_amplitudes(vec![c(1.0, 0.0); 3]).is_err());
    let spec = AnsatzSpec::hardware_efficient(2, 1);
    assert!(apply_ansatz(StateVector::zero(2).unwrap(), &spec, &[0.0; 3]).is_err());
    assert!(apply_ansatz(StateVector::zero(3).unwrap(), &spec, &[0.0; 4]).is_err());
    let bad = AnsatzSpec { entanglers: vec![(1, 1)], ..spec };
    assert!(bad.validate().is_err());
}
