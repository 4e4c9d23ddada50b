use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{DataError, Image, IMAGE_PIXELS};

/// Principal directions of a fitted pixel matrix, stored row-major (`k` rows of 784).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub k: usize,
    #[serde(with = "crate::codec::f64_b64")]
    pub mean: Vec<f64>,
    #[serde(with = "crate::codec::f64_b64")]
    pub components: Vec<f64>,
    /// Variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    /// `components · (x − mean)`.
    pub fn transform(&self, pixels: &[f64]) -> Result<Vec<f64>, DataError> {
        if pixels.len() != self.dim() {
            return Err(DataError::ShapeMismatch { expected: self.dim(), actual: pixels.len() });
        }
        Ok((0..self.k)
            .map(|i| {
                self.component(i)
                    .iter()
                    .zip(pixels.iter().zip(&self.mean))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum()
            })
            .collect())
    }

    pub fn transform_image(&self, image: &Image) -> Result<Vec<f64>, DataError> {
        self.transform(&image.pixels)
    }

    /// Maps a feature vector back to pixel space.
    pub fn reconstruct(&self, features: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (i, f) in features.iter().enumerate().take(self.k) {
            for (o, c) in out.iter_mut().zip(self.component(i)) {
                *o += f * c;
            }
        }
        out
    }
}

pub fn pca_transform(model: &PcaModel, image: &Image) -> Result<Vec<f64>, DataError> {
    model.transform_image(image)
}

/// Fits PCA on raw rows (each of equal length) via the symmetric eigendecomposition of the
/// sample covariance.
pub fn fit_pca_rows(rows: &[&[f64]], k: usize) -> Result<PcaModel, DataError> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    if n < 2 || k == 0 || k > n.min(d) {
        return Err(DataError::BadComponentCount { k, samples: n });
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        if r.len() != d {
            return Err(DataError::ShapeMismatch { expected: d, actual: r.len() });
        }
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    if cov.diagonal().iter().all(|&v| v <= f64::EPSILON) {
        return Err(DataError::DegenerateInput);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let col = eig.eigenvectors.column(idx);
        // Sign convention: largest-magnitude entry positive, so fits are reproducible.
        let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v));
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaModel { k, mean, components, explained_variance })
}

/// Fits `k` principal components on the pixels of `train`.
pub fn fit_pca(train: &[Image], k: usize) -> Result<PcaModel, DataError> {
    let rows: Vec<&[f64]> = train.iter().map(|i| i.pixels.as_slice()).collect();
    if k > train.len().min(IMAGE_PIXELS) {
        return Err(DataError::BadComponentCount { k, samples: train.len() });
    }
    fit_pca_rows(&rows, k)
}
