use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimError, StateVector};

/// Finite-shot sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotConfig {
    pub shots: u32,
    pub seed: u64,
}

impl ShotConfig {
    pub fn new(shots: u32, seed: u64) -> Result<Self, SimError> {
        if shots == 0 {
            return Err(SimError::ZeroShots);
        }
        Ok(Self { shots, seed })
    }

    /// Same shot count, seed mixed with `stream` so independent evaluations draw
    /// independent samples.
    pub fn fork(&self, stream: u64) -> Self {
        Self { shots: self.shots, seed: mix_seed(self.seed, stream) }
    }
}

/// SplitMix64-style mixing of two words.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exact ⟨Z_q⟩ for every qubit.
pub fn z_expectations(state: &StateVector) -> Vec<f64> {
    let n = state.n_qubits();
    let mut z = vec![0.0; n];
    for (i, a) in state.amplitudes().iter().enumerate() {
        let p = a.norm_sqr();
        for (q, zq) in z.iter_mut().enumerate() {
            if i >> q & 1 == 0 {
                *zq += p;
            } else {
                *zq -= p;
            }
        }
    }
    z
}

/// Weighted sum Σ_q w_q ⟨Z_q⟩ as a diagonal observable applied to `state`: returns M|ψ⟩.
pub(crate) fn weighted_z_apply(state: &StateVector, weights: &[f64]) -> Vec<num_complex::Complex64> {
    state
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let d: f64 = weights.iter().enumerate().map(|(q, w)| if i >> q & 1 == 0 { *w } else { -*w }).sum();
            a * d
        })
        .collect()
}

/// Draws `cfg.shots` computational-basis outcomes and returns per-qubit `(n0 - n1) / shots`.
pub fn sample_z_expectations(state: &StateVector, cfg: &ShotConfig) -> Vec<f64> {
    let probs = state.probabilities();
    let mut cdf = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = vec![0u32; probs.len()];
    for _ in 0..cfg.shots {
        let u = rng.gen::<f64>() * total;
        let idx = cdf.partition_point(|&c| c <= u).min(probs.len() - 1);
        counts[idx] += 1;
    }
    let n = state.n_qubits();
    let mut ones = vec![0u64; n];
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        for (q, o) in ones.iter_mut().enumerate() {
            if i >> q & 1 == 1 {
                *o += u64::from(c);
            }
        }
    }
    let shots = f64::from(cfg.shots);
    ones.iter().map(|&o| (shots - 2.0 * o as f64) / shots).collect()
}
