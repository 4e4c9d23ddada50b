use num_complex::Complex64;

use super::SimError;

pub const MAX_QUBITS: usize = 20;

/// Pure state over `n_qubits`; basis index bit `q` is the value of qubit `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// |0…0⟩.
    pub fn zero(n_qubits: usize) -> Result<Self, SimError> {
        check_qubits(n_qubits)?;
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    /// Wraps raw amplitudes without renormalizing. Length must be a power of two.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self, SimError> {
        let len = amps.len();
        if len == 0 || !len.is_power_of_two() {
            return Err(SimError::NotPowerOfTwo(len));
        }
        let n_qubits = len.trailing_zeros() as usize;
        check_qubits(n_qubits)?;
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(Complex64::norm_sqr).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(Complex64::norm_sqr).collect()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum()
    }
}

fn check_qubits(n: usize) -> Result<(), SimError> {
    if n == 0 || n > MAX_QUBITS {
        Err(SimError::QubitCount(n))
    } else {
        Ok(())
    }
}

/// Zero-pads `v` to `2^n` entries and divides by its Euclidean norm.
///
/// The map is undefined for the zero vector; callers that need a total map append a
/// constant entry first (the QNN pipeline appends 1.0).
pub fn amplitude_encode(v: &[f64], n_qubits: usize) -> Result<StateVector, SimError> {
    check_qubits(n_qubits)?;
    let dim = 1usize << n_qubits;
    if v.len() > dim {
        return Err(SimError::InputTooLong { len: v.len(), capacity: dim });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(SimError::ZeroInput);
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); dim];
    for (a, x) in amps.iter_mut().zip(v) {
        *a = Complex64::new(x / norm, 0.0);
    }
    Ok(StateVector { n_qubits, amps })
}

/// Chain rule through [`amplitude_encode`]: maps the gradient with respect to the (real parts
/// of the) encoded amplitudes back onto the raw vector `v`.
pub fn amplitude_encode_backward(v: &[f64], amp_grad: &[Complex64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let a: Vec<f64> = v.iter().map(|x| x / norm).collect();
    let proj: f64 = a.iter().zip(amp_grad).map(|(ai, g)| ai * g.re).sum();
    a.iter().zip(amp_grad).map(|(ai, g)| (g.re - ai * proj) / norm).collect()
}

/// ⊗_q RY(features_q)|0⟩.
pub fn angle_encode(features: &[f64], n_qubits: usize) -> Result<StateVector, SimError> {
    check_qubits(n_qubits)?;
    if features.len() != n_qubits {
        return Err(SimError::LengthMismatch { expected: n_qubits, actual: features.len() });
    }
    let halves: Vec<(f64, f64)> = features.iter().map(|f| ((f / 2.0).cos(), (f / 2.0).sin())).collect();
    Ok(StateVector { n_qubits, amps: product_state(&halves, None) })
}

/// Gradient of a loss with respect to the encoding angles, given the gradient with respect to
/// the real parts of the encoded amplitudes.
pub fn angle_encode_backward(features: &[f64], amp_grad: &[Complex64]) -> Vec<f64> {
    let halves: Vec<(f64, f64)> = features.iter().map(|f| ((f / 2.0).cos(), (f / 2.0).sin())).collect();
    (0..features.len())
        .map(|q| {
            let d = product_state(&halves, Some(q));
            d.iter().zip(amp_grad).map(|(di, g)| di.re * g.re).sum()
        })
        .collect()
}

/// Product of per-qubit (|0⟩, |1⟩) weights; with `deriv = Some(q)` qubit `q` uses the
/// derivative of (cos φ/2, sin φ/2) instead.
fn product_state(halves: &[(f64, f64)], deriv: Option<usize>) -> Vec<Complex64> {
    let mut amps = vec![1.0f64];
    for (q, &(c, s)) in halves.iter().enumerate() {
        let (w0, w1) = if deriv == Some(q) { (-s / 2.0, c / 2.0) } else { (c, s) };
        let mut next = Vec::with_capacity(amps.len() * 2);
        next.extend(amps.iter().map(|a| a * w0));
        next.extend(amps.iter().map(|a| a * w1));
        amps = next;
    }
    amps.into_iter().map(|a| Complex64::new(a, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::z_expectations;
    use std::f64::consts::PI;

    #[test]
    fn one_hot_is_a_basis_state() {
        let mut v = vec![0.0; 5];
        v[0] = 1.0;
        let s = amplitude_encode(&v, 10).unwrap();
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert!(s.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));
    }

    #[test]
    fn normalizes_three_four() {
        let s = amplitude_encode(&[3.0, 4.0, 0.0], 2).unwrap();
        assert!((s.amplitudes()[0].re - 0.6).abs() < 1e-15);
        assert!((s.amplitudes()[1].re - 0.8).abs() < 1e-15);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn amplitude_guards() {
        assert!(matches!(amplitude_encode(&[0.0, 0.0], 1), Err(SimError::ZeroInput)));
        assert!(matches!(amplitude_encode(&[1.0; 5], 2), Err(SimError::InputTooLong { .. })));
    }

    #[test]
    fn angle_encoding_cases() {
        let s = angle_encode(&[0.0; 4], 4).unwrap();
        assert!((s.amplitudes()[0].re - 1.0).abs() < 1e-15);
        let z = z_expectations(&angle_encode(&[PI], 1).unwrap());
        assert!((z[0] + 1.0).abs() < 1e-12);
        let z = z_expectations(&angle_encode(&[PI / 2.0], 1).unwrap());
        assert!(z[0].abs() < 1e-12);
        assert!(matches!(angle_encode(&[0.0; 3], 4), Err(SimError::LengthMismatch { .. })));
    }

    #[test]
    fn angle_backward_matches_finite_difference() {
        let feats = [0.3, -1.2, 2.0];
        let weights: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = |x: &[f64]| -> f64 {
            let s = angle_encode(x, 3).unwrap();
            s.amplitudes().iter().zip(&weights).map(|(a, w)| a.re * w).sum()
        };
        let g: Vec<Complex64> = weights.iter().map(|&w| Complex64::new(w, 0.0)).collect();
        let analytic = angle_encode_backward(&feats, &g);
        for q in 0..3 {
            let (mut p, mut m) = (feats, feats);
            p[q] += 1e-6;
            m[q] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - analytic[q]).abs() < 1e-8);
        }
    }
}
