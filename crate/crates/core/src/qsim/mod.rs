//! Statevector simulation of layered rotation/CNOT circuits.
//!
//! Amplitudes are stored little-endian: bit `q` of a basis index is qubit `q`. Gates update
//! the vector in place; no `2^n × 2^n` operator is ever formed.

mod ansatz;
mod gates;
mod grad;
mod measure;
mod state;

pub use ansatz::{apply_ansatz, ring, AnsatzSpec, Op};
pub use gates::{apply_cnot, apply_cz, apply_gate, apply_rotation, Gate, Rotation};
pub use grad::{grad_exact, grad_parameter_shift, grad_parameter_shift_with, ExactGradient};
pub use measure::{mix_seed, sample_z_expectations, z_expectations, ShotConfig};
pub use state::{
    amplitude_encode, amplitude_encode_backward, angle_encode, angle_encode_backward, StateVector, MAX_QUBITS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("qubit count {0} outside 1..={MAX_QUBITS}")]
    QubitCount(usize),
    #[error("amplitude vector length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("input of length {len} does not fit in {capacity} amplitudes")]
    InputTooLong { len: usize, capacity: usize },
    #[error("cannot amplitude-encode a zero vector")]
    ZeroInput,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("ansatz expects {expected} angles, got {actual}")]
    ParamCount { expected: usize, actual: usize },
    #[error("invalid entangler pair ({0}, {1})")]
    InvalidEntangler(usize, usize),
    #[error("shot count must be at least 1")]
    ZeroShots,
}
