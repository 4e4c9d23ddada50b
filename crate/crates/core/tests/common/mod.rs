#![allow(dead_code)]

use std::path::PathBuf;

use qmu::datakit::{load_mnist_idx, Image};

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn corpus() -> Vec<Image> {
    let d = data_dir();
    load_mnist_idx(&d.join("mnist-2k-images-idx3-ubyte"), &d.join("mnist-2k-labels-idx1-ubyte")).expect("bundled corpus")
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut y = x.to_vec();
    y[i] = x[i] + h;
    let plus = f(&y);
    y[i] = x[i] - h;
    let minus = f(&y);
    (plus - minus) / (2.0 * h)
}
