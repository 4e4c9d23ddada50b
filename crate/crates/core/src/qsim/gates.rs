//! In-place gate kernels. Single-qubit gates walk amplitude pairs `(i, i | 1 << q)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::StateVector;

/// Single-qubit rotation `exp(-i θ P / 2)` about Pauli axis `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    Rx,
    Ry,
    Rz,
}

/// Gate vocabulary accepted by [`apply_gate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Rot(Rotation, usize, f64),
    Cnot { control: usize, target: usize },
    Cz(usize, usize),
    H(usize),
    X(usize),
}

#[inline]
fn for_each_pair(amps: &mut [Complex64], q: usize, mut f: impl FnMut(&mut Complex64, &mut Complex64)) {
    let stride = 1usize << q;
    for block in amps.chunks_exact_mut(stride << 1) {
        let (lo, hi) = block.split_at_mut(stride);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            f(a, b);
        }
    }
}

pub fn apply_rotation(state: &mut StateVector, axis: Rotation, q: usize, theta: f64) {
    let (s, c) = (theta / 2.0).sin_cos();
    let amps = state.amplitudes_mut();
    match axis {
        Rotation::Ry => for_each_pair(amps, q, |a, b| {
            let (x, y) = (*a, *b);
            *a = x * c - y * s;
            *b = x * s + y * c;
        }),
        Rotation::Rx => {
            let mis = Complex64::new(0.0, -s);
            for_each_pair(amps, q, |a, b| {
                let (x, y) = (*a, *b);
                *a = x * c + y * mis;
                *b = x * mis + y * c;
            })
        }
        Rotation::Rz => {
            let (p0, p1) = (Complex64::new(c, -s), Complex64::new(c, s));
            for_each_pair(amps, q, |a, b| {
                *a *= p0;
                *b *= p1;
            })
        }
    }
}

pub fn apply_cnot(state: &mut StateVector, control: usize, target: usize) {
    let cmask = 1usize << control;
    let tmask = 1usize << target;
    let amps = state.amplitudes_mut();
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

pub fn apply_cz(state: &mut StateVector, a: usize, b: usize) {
    let mask = (1usize << a) | (1usize << b);
    for (i, amp) in state.amplitudes_mut().iter_mut().enumerate() {
        if i & mask == mask {
            *amp = -*amp;
        }
    }
}

pub fn apply_gate(state: &mut StateVector, gate: Gate) {
    match gate {
        Gate::Rot(axis, q, theta) => apply_rotation(state, axis, q, theta),
        Gate::Cnot { control, target } => apply_cnot(state, control, target),
        Gate::Cz(a, b) => apply_cz(state, a, b),
        Gate::H(q) => {
            let r = std::f64::consts::FRAC_1_SQRT_2;
            for_each_pair(state.amplitudes_mut(), q, |a, b| {
                let (x, y) = (*a, *b);
                *a = (x + y) * r;
                *b = (x - y) * r;
            })
        }
        Gate::X(q) => for_each_pair(state.amplitudes_mut(), q, std::mem::swap),
    }
}

/// Writes `P_q ψ` into `out` for the rotation's Pauli axis.
pub(crate) fn apply_pauli_into(axis: Rotation, q: usize, psi: &[Complex64], out: &mut [Complex64]) {
    let stride = 1usize << q;
    let i_unit = Complex64::new(0.0, 1.0);
    for (blk_in, blk_out) in psi.chunks_exact(stride << 1).zip(out.chunks_exact_mut(stride << 1)) {
        let (lo, hi) = blk_in.split_at(stride);
        let (olo, ohi) = blk_out.split_at_mut(stride);
        for k in 0..stride {
            let (x, y) = (lo[k], hi[k]);
            match axis {
                Rotation::Rx => {
                    olo[k] = y;
                    ohi[k] = x;
                }
                Rotation::Ry => {
                    olo[k] = -i_unit * y;
                    ohi[k] = i_unit * x;
                }
                Rotation::Rz => {
                    olo[k] = x;
                    ohi[k] = -y;
                }
            }
        }
    }
}
