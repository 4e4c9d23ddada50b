use serde::{Deserialize, Serialize};

use super::gates::{apply_cnot, apply_rotation, Rotation};
use super::{SimError, StateVector};

/// Layered hardware-efficient circuit: each layer applies `rotations` (in order) to every
/// qubit, then CNOTs over `entanglers` as (control, target) pairs.
///
/// Angle `θ[(layer * n_qubits + qubit) * rotations.len() + r]` drives rotation `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzSpec {
    pub n_qubits: usize,
    pub n_layers: usize,
    pub rotations: Vec<Rotation>,
    pub entanglers: Vec<(usize, usize)>,
}

/// One step of the flattened circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    Rot { axis: Rotation, qubit: usize, param: usize },
    Cnot { control: usize, target: usize },
}

impl AnsatzSpec {
    /// RY then RZ on every qubit followed by a CNOT ring `q -> q+1 mod n`.
    pub fn hardware_efficient(n_qubits: usize, n_layers: usize) -> Self {
        Self {
            n_qubits,
            n_layers,
            rotations: vec![Rotation::Ry, Rotation::Rz],
            entanglers: ring(n_qubits),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_layers * self.n_qubits * self.rotations.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_qubits == 0 || self.n_qubits > super::MAX_QUBITS {
            return Err(SimError::QubitCount(self.n_qubits));
        }
        for &(c, t) in &self.entanglers {
            if c == t || c >= self.n_qubits || t >= self.n_qubits {
                return Err(SimError::InvalidEntangler(c, t));
            }
        }
        Ok(())
    }

    pub fn ops(&self) -> impl Iterator<Item = Op> + '_ {
        let n = self.n_qubits;
        let r = self.rotations.len();
        (0..self.n_layers).flat_map(move |layer| {
            let rots = (0..n).flat_map(move |qubit| {
                self.rotations.iter().enumerate().map(move |(k, &axis)| Op::Rot {
                    axis,
                    qubit,
                    param: (layer * n + qubit) * r + k,
                })
            });
            let ents = self.entanglers.iter().map(|&(control, target)| Op::Cnot { control, target });
            rots.chain(ents)
        })
    }

    pub(crate) fn check(&self, state: &StateVector, theta: &[f64]) -> Result<(), SimError> {
        self.validate()?;
        if theta.len() != self.n_params() {
            return Err(SimError::ParamCount { expected: self.n_params(), actual: theta.len() });
        }
        if state.n_qubits() != self.n_qubits {
            return Err(SimError::LengthMismatch { expected: self.n_qubits, actual: state.n_qubits() });
        }
        Ok(())
    }
}

pub fn ring(n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    (0..n).map(|q| (q, (q + 1) % n)).collect()
}

pub(crate) fn apply_op(state: &mut StateVector, op: Op, theta: &[f64]) {
    match op {
        Op::Rot { axis, qubit, param } => apply_rotation(state, axis, qubit, theta[param]),
        Op::Cnot { control, target } => apply_cnot(state, control, target),
    }
}

pub(crate) fn apply_op_inverse(state: &mut StateVector, op: Op, theta: &[f64]) {
    match op {
        Op::Rot { axis, qubit, param } => apply_rotation(state, axis, qubit, -theta[param]),
        Op::Cnot { control, target } => apply_cnot(state, control, target),
    }
}

/// Evolves `state` under U(θ).
pub fn apply_ansatz(mut state: StateVector, spec: &AnsatzSpec, theta: &[f64]) -> Result<StateVector, SimError> {
    spec.check(&state, theta)?;
    for op in spec.ops() {
        apply_op(&mut state, op, theta);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::z_expectations;
    use num_complex::Complex64;

    #[test]
    fn parameter_count_and_layout() {
        let spec = AnsatzSpec::hardware_efficient(10, 5);
        assert_eq!(spec.n_params(), 100);
        assert_eq!(AnsatzSpec::hardware_efficient(10, 10).n_params(), 200);
        let params: Vec<usize> = spec
            .ops()
            .filter_map(|op| match op {
                Op::Rot { param, .. } => Some(param),
                _ => None,
            })
            .collect();
        assert_eq!(params, (0..100).collect::<Vec<_>>());
        assert_eq!(spec.ops().filter(|op| matches!(op, Op::Cnot { .. })).count(), 50);
    }

    #[test]
    fn single_qubit_ry_gives_cosine() {
        let spec = AnsatzSpec { n_qubits: 1, n_layers: 1, rotations: vec![Rotation::Ry], entanglers: vec![] };
        for theta in [0.0, 0.4, 1.9, -2.5] {
            let out = apply_ansatz(StateVector::zero(1).unwrap(), &spec, &[theta]).unwrap();
            assert!((z_expectations(&out)[0] - theta.cos()).abs() < 1e-12);
        }
    }

    fn kron(a: &[[Complex64; 2]; 2], b: &[[Complex64; 2]; 2]) -> [[Complex64; 4]; 4] {
        // qubit 1 is the high bit: index = 2*b1 + b0, so U = a(q1) ⊗ b(q0)
        let mut m = [[Complex64::new(0.0, 0.0); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = a[r >> 1][c >> 1] * b[r & 1][c & 1];
            }
        }
        m
    }

    fn matmul(a: &[[Complex64; 4]; 4], b: &[[Complex64; 4]; 4]) -> [[Complex64; 4]; 4] {
        let mut m = [[Complex64::new(0.0, 0.0); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = (0..4).map(|k| a[r][k] * b[k][c]).sum();
            }
        }
        m
    }

    #[test]
    fn two_qubit_circuit_matches_dense_product() {
        let spec = AnsatzSpec::hardware_efficient(2, 2);
        let theta: Vec<f64> = (0..spec.n_params()).map(|i| 0.3 * i as f64 - 0.7).collect();
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let ry = |t: f64| {
            let (s, c) = (t / 2.0).sin_cos();
            [[one * c, -one * s], [one * s, one * c]]
        };
        let rz = |t: f64| [[(-i * t / 2.0).exp(), zero], [zero, (i * t / 2.0).exp()]];
        let id = [[one, zero], [zero, one]];
        let perm = |f: &dyn Fn(usize) -> usize| {
            let mut m = [[zero; 4]; 4];
            for c in 0..4 {
                m[f(c)][c] = one;
            }
            m
        };
        let cnot01 = perm(&|x| if x & 1 == 1 { x ^ 2 } else { x });
        let cnot10 = perm(&|x| if x & 2 == 2 { x ^ 1 } else { x });
        let mut u = kron(&id, &id);
        for layer in 0..2 {
            let p = |q: usize, k: usize| theta[(layer * 2 + q) * 2 + k];
            for q in 0..2 {
                let (g_ry, g_rz) = (ry(p(q, 0)), rz(p(q, 1)));
                let (a, b) = if q == 0 { (id, g_ry) } else { (g_ry, id) };
                u = matmul(&kron(&a, &b), &u);
                let (a, b) = if q == 0 { (id, g_rz) } else { (g_rz, id) };
                u = matmul(&kron(&a, &b), &u);
            }
            u = matmul(&cnot01, &u);
            u = matmul(&cnot10, &u);
        }
        let input = vec![Complex64::new(0.5, 0.1), Complex64::new(-0.3, 0.2), Complex64::new(0.4, -0.6), Complex64::new(0.1, 0.25)];
        let norm = input.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let input: Vec<Complex64> = input.iter().map(|a| a / norm).collect();
        let out = apply_ansatz(StateVector::from_amplitudes(input.clone()).unwrap(), &spec, &theta).unwrap();
        for r in 0..4 {
            let expect: Complex64 = (0..4).map(|c| u[r][c] * input[c]).sum();
            assert!((out.amplitudes()[r] - expect).norm() < 1e-12);
        }
        // θ = 0 leaves only the entanglers
        let zeros = vec![0.0; spec.n_params()];
        let ent = apply_ansatz(StateVector::from_amplitudes(input.clone()).unwrap(), &spec, &zeros).unwrap();
        let e = matmul(&matmul(&cnot10, &cnot01), &matmul(&cnot10, &cnot01));
        for r in 0..4 {
            let expect: Complex64 = (0..4).map(|c| e[r][c] * input[c]).sum();
            assert!((ent.amplitudes()[r] - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn rejects_mismatched_parameters() {
        let spec = AnsatzSpec::hardware_efficient(3, 2);
        let err = apply_ansatz(StateVector::zero(3).unwrap(), &spec, &[0.0; 5]).unwrap_err();
        assert!(matches!(err, SimError::ParamCount { expected: 12, actual: 5 }));
        let bad = AnsatzSpec { entanglers: vec![(1, 1)], ..spec };
        assert!(matches!(bad.validate(), Err(SimError::InvalidEntangler(1, 1))));
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = AnsatzSpec::hardware_efficient(10, 5);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<AnsatzSpec>(&json).unwrap(), spec);
    }
}
