//! Gradients of `L = Σ_q upstream_q ⟨Z_q⟩` with respect to ansatz angles (and input amplitudes).

use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;

use super::ansatz::{apply_op, apply_op_inverse, Op};
use super::gates::apply_pauli_into;
use super::measure::weighted_z_apply;
use super::{apply_ansatz, z_expectations, AnsatzSpec, SimError, StateVector};

/// Output of the reverse sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactGradient {
    pub theta: Vec<f64>,
    /// `∂L/∂Re ψ_i + i ∂L/∂Im ψ_i` for every input amplitude.
    pub input: Vec<Complex64>,
}

/// Reverse (adjoint) sweep: one forward pass, then gates are undone one at a time while the
/// co-state `λ = U_{>k}† M ψ` is carried back. For `G = exp(-iθP/2)`,
/// `∂L/∂θ = Im ⟨λ|P|ψ_k⟩`.
pub fn grad_exact(
    spec: &AnsatzSpec,
    theta: &[f64],
    input: &StateVector,
    upstream: &[f64],
) -> Result<ExactGradient, SimError> {
    spec.check(input, theta)?;
    if upstream.len() != spec.n_qubits {
        return Err(SimError::LengthMismatch { expected: spec.n_qubits, actual: upstream.len() });
    }
    let mut psi = apply_ansatz(input.clone(), spec, theta)?;
    let mut lambda = StateVector::from_amplitudes(weighted_z_apply(&psi, upstream))?;
    let ops: Vec<Op> = spec.ops().collect();
    let mut grad = vec![0.0; spec.n_params()];
    let mut scratch = vec![Complex64::new(0.0, 0.0); psi.amplitudes().len()];
    for &op in ops.iter().rev() {
        if let Op::Rot { axis, qubit, param } = op {
            apply_pauli_into(axis, qubit, psi.amplitudes(), &mut scratch);
            let z: Complex64 = lambda.amplitudes().iter().zip(&scratch).map(|(l, p)| l.conj() * p).sum();
            grad[param] = z.im;
        }
        apply_op_inverse(&mut psi, op, theta);
        apply_op_inverse(&mut lambda, op, theta);
    }
    let input_grad = lambda.amplitudes().iter().map(|l| l * 2.0).collect();
    Ok(ExactGradient { theta: grad, input: input_grad })
}

/// Two-term shift rule with shift π/2, using `estimate` to obtain ⟨Z⟩ for every shifted
/// circuit. `estimate` receives the evolved state and a distinct evaluation id
/// (`2·i` for +π/2, `2·i + 1` for −π/2).
///
/// Every rotation in the gate vocabulary is generated by a Pauli operator, so the rule is
/// exact for all circuits an [`AnsatzSpec`] can describe.
pub fn grad_parameter_shift_with<F>(
    spec: &AnsatzSpec,
    theta: &[f64],
    input: &StateVector,
    upstream: &[f64],
    mut estimate: F,
) -> Result<Vec<f64>, SimError>
where
    F: FnMut(&StateVector, u64) -> Vec<f64>,
{
    spec.check(input, theta)?;
    if upstream.len() != spec.n_qubits {
        return Err(SimError::LengthMismatch { expected: spec.n_qubits, actual: upstream.len() });
    }
    let ops: Vec<Op> = spec.ops().collect();
    let mut shifted = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        if upstream.iter().all(|&u| u == 0.0) {
            break;
        }
        // Reuse the prefix: the state just before the gate driven by θ_i is shared.
        let pos = ops
            .iter()
            .position(|op| matches!(op, Op::Rot { param, .. } if *param == i))
            .expect("every angle drives one gate");
        let mut prefix = input.clone();
        for &op in &ops[..pos] {
            apply_op(&mut prefix, op, theta);
        }
        let mut eval = |delta: f64, id: u64| {
            shifted[i] = theta[i] + delta;
            let mut s = prefix.clone();
            for &op in &ops[pos..] {
                apply_op(&mut s, op, &shifted);
            }
            shifted[i] = theta[i];
            estimate(&s, id)
        };
        let plus = eval(FRAC_PI_2, 2 * i as u64);
        let minus = eval(-FRAC_PI_2, 2 * i as u64 + 1);
        grad[i] = upstream.iter().zip(plus.iter().zip(&minus)).map(|(u, (p, m))| u * (p - m) / 2.0).sum();
    }
    Ok(grad)
}

/// Shift-rule gradient with exact expectations.
pub fn grad_parameter_shift(
    spec: &AnsatzSpec,
    theta: &[f64],
    input: &StateVector,
    upstream: &[f64],
) -> Result<Vec<f64>, SimError> {
    grad_parameter_shift_with(spec, theta, input, upstream, |s, _| z_expectations(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::gates::Rotation;

    #[test]
    fn ry_shift_gradient_is_minus_sine() {
        let spec = AnsatzSpec { n_qubits: 1, n_layers: 1, rotations: vec![Rotation::Ry], entanglers: vec![] };
        let theta = [std::f64::consts::FRAC_PI_3];
        let g = grad_parameter_shift(&spec, &theta, &StateVector::zero(1).unwrap(), &[1.0]).unwrap();
        assert!((g[0] + (std::f64::consts::FRAC_PI_3).sin()).abs() < 1e-10);
        let e = grad_exact(&spec, &theta, &StateVector::zero(1).unwrap(), &[1.0]).unwrap();
        assert!((e.theta[0] - g[0]).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let spec = AnsatzSpec::hardware_efficient(3, 2);
        let theta: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let input = StateVector::zero(3).unwrap();
        assert!(grad_parameter_shift(&spec, &theta, &input, &[0.0; 3]).unwrap().iter().all(|&g| g == 0.0));
        let e = grad_exact(&spec, &theta, &input, &[0.0; 3]).unwrap();
        assert!(e.theta.iter().all(|&g| g == 0.0));
        assert!(e.input.iter().all(|g| g.norm() == 0.0));
    }
}
