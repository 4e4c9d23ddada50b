//! MNIST ingestion, experiment sampling, class-wise unlearning splits and PCA.

mod idx;
mod pca;

pub use idx::{
    decode, encode_images, encode_labels, load_mnist_idx, parse_images, parse_labels, write_mnist_idx,
    IMAGE_MAGIC, LABEL_MAGIC,
};
pub use pca::{fit_pca, fit_pca_rows, pca_transform, PcaModel};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{what}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { what: &'static str, expected: u32, found: u32 },
    #[error("{what} truncated: need {expected} bytes, file has {actual}")]
    Truncated { what: &'static str, expected: usize, actual: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("expected 28x28 images, header says {rows}x{cols}")]
    BadDimensions { rows: usize, cols: usize },
    #[error("label {0} outside 0..=9")]
    BadLabel(u8),
    #[error("requested {requested} samples but the corpus only has {available}")]
    NotEnoughSamples { requested: usize, available: usize },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadTrainFraction(f64),
    #[error("PCA with k={k} needs k <= min(samples={samples}, 784) and at least 2 samples")]
    BadComponentCount { k: usize, samples: usize },
    #[error("PCA input has zero variance")]
    DegenerateInput,
    #[error("feature vector has length {actual}, expected {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("split manifest references index {0} outside the corpus")]
    BadManifestIndex(usize),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, #[source] source: std::io::Error },
}

/// One grayscale digit. `index` is the position in the source corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub index: usize,
    pub pixels: Vec<f64>,
    pub label: u8,
}

/// Members (`train`), non-members (`test`) and, once a class is chosen,
/// the forget set `du` and retained set `dr` partitioning `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<Image>,
    pub test: Vec<Image>,
    pub unlearn_class: Option<u8>,
    pub du: Vec<Image>,
    pub dr: Vec<Image>,
}

/// Index-level description of a split, enough to replay it against the same corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub unlearn_class: Option<u8>,
}

impl DatasetSplit {
    /// True when the chosen class has no training members.
    pub fn is_vacuous(&self) -> bool {
        self.unlearn_class.is_some() && self.du.is_empty()
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            train_indices: self.train.iter().map(|i| i.index).collect(),
            test_indices: self.test.iter().map(|i| i.index).collect(),
            unlearn_class: self.unlearn_class,
        }
    }

    pub fn from_manifest(all: &[Image], manifest: &SplitManifest) -> Result<Self, DataError> {
        let pick = |ids: &[usize]| -> Result<Vec<Image>, DataError> {
            ids.iter()
                .map(|&i| all.get(i).cloned().ok_or(DataError::BadManifestIndex(i)))
                .collect()
        };
        let split = DatasetSplit {
            seed: manifest.seed,
            train: pick(&manifest.train_indices)?,
            test: pick(&manifest.test_indices)?,
            unlearn_class: None,
            du: Vec::new(),
            dr: Vec::new(),
        };
        match manifest.unlearn_class {
            Some(class) => split_unlearn(split, class),
            None => Ok(split),
        }
    }
}

/// Draws `total` images and splits them into `floor(total * train_frac)` members and the
/// remainder as non-members. Classes are interleaved round-robin so every digit that the
/// corpus contains appears in both halves whenever the counts allow it.
pub fn sample_experiment_set(
    all: &[Image],
    total: usize,
    train_frac: f64,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if total > all.len() {
        return Err(DataError::NotEnoughSamples { requested: total, available: all.len() });
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::BadTrainFraction(train_frac));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (pos, img) in all.iter().enumerate() {
        buckets[img.label as usize].push(pos);
    }
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    let mut class_order: Vec<usize> = (0..NUM_CLASSES).collect();
    let mut chosen = Vec::with_capacity(total);
    let mut depth = 0;
    while chosen.len() < total {
        class_order.shuffle(&mut rng);
        for &c in &class_order {
            if chosen.len() == total {
                break;
            }
            if let Some(&pos) = buckets[c].get(depth) {
                chosen.push(pos);
            }
        }
        depth += 1;
    }
    let n_train = (total as f64 * train_frac).floor() as usize;
    let mut train: Vec<Image> = chosen[..n_train].iter().map(|&p| all[p].clone()).collect();
    let mut test: Vec<Image> = chosen[n_train..].iter().map(|&p| all[p].clone()).collect();
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok(DatasetSplit { seed, train, test, unlearn_class: None, du: Vec::new(), dr: Vec::new() })
}

/// Moves every training image of `unlearn_class` into `du`; the rest of `train` becomes `dr`.
/// An absent class yields an empty `du` (see [`DatasetSplit::is_vacuous`]).
pub fn split_unlearn(mut split: DatasetSplit, unlearn_class: u8) -> Result<DatasetSplit, DataError> {
    if unlearn_class as usize >= NUM_CLASSES {
        return Err(DataError::BadLabel(unlearn_class));
    }
    let (du, dr) = split.train.iter().cloned().partition(|img| img.label == unlearn_class);
    split.du = du;
    split.dr = dr;
    split.unlearn_class = Some(unlearn_class);
    Ok(split)
}
