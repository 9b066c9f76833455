//! Datasets: splits of inputs and targets, batching and augmentation.

use std::path::Path;

use packed_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Class labels or real-valued regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes { labels, .. } => Some(labels),
            Targets::Values(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Targets::Values(v) => Some(v),
            Targets::Classes { .. } => None,
        }
    }

    fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes { labels, num_classes } => Targets::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Inputs `[N, ...]` with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Split {
    pub fn new(inputs: Tensor, targets: Targets) -> Result<Self> {
        if inputs.ndim() < 2 || inputs.shape()[0] != targets.len() {
            return Err(HarnessError::Data(format!(
                "{} targets for inputs of shape {:?}",
                targets.len(),
                inputs.shape()
            )));
        }
        if let Targets::Classes { labels, num_classes } = &targets {
            if let Some(bad) = labels.iter().find(|&&l| l >= *num_classes) {
                return Err(HarnessError::Data(format!("label {bad} outside 0..{num_classes}")));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shape of one sample.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    /// Rows `idx`, in order.
    pub fn gather(&self, idx: &[usize]) -> Split {
        let row = self.inputs.len() / self.len().max(1);
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.inputs.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = idx.len();
        Split {
            inputs: Tensor::new(shape, data).expect("gathered rows match shape"),
            targets: self.targets.gather(idx),
        }
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Idx { images: String, labels: String },
    Csv { path: String },
    Synthetic { generator: String, seed: u64 },
}

/// Disjoint train / validation / test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub train: Split,
    pub val: Split,
    pub test: Split,
    pub source: Source,
}

impl DatasetHandle {
    /// Shuffles `all` with `seed` and cuts it into train / val / test by the given fractions.
    pub fn from_split(all: Split, val_frac: f64, test_frac: f64, seed: u64, source: Source) -> Result<Self> {
        let n = all.len();
        let n_val = (n as f64 * val_frac).round() as usize;
        let n_test = (n as f64 * test_frac).round() as usize;
        if n_val + n_test >= n || n_val == 0 || n_test == 0 {
            return Err(HarnessError::Data(format!(
                "cannot split {n} samples into non-empty train/val/test parts"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::rng(seed));
        let (test, rest) = idx.split_at(n_test);
        let (val, train) = rest.split_at(n_val);
        Ok(Self {
            train: all.gather(train),
            val: all.gather(val),
            test: all.gather(test),
            source,
        })
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.train.targets {
            Targets::Classes { num_classes, .. } => Some(*num_classes),
            Targets::Values(_) => None,
        }
    }
}

/// Per-feature affine rescaling fitted on a training split (regression only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count().max(1) as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    // constant columns are left unscaled
    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
}

impl Standardizer {
    pub fn fit(train: &Split) -> Result<Self> {
        let y = train
            .targets
            .values()
            .ok_or_else(|| HarnessError::Data("standardization needs real-valued targets".into()))?;
        let f = train.inputs.len() / train.len().max(1);
        let (x_mean, x_std) = (0..f)
            .map(|j| mean_std(train.inputs.data().iter().skip(j).step_by(f).copied()))
            .unzip();
        let (y_mean, y_std) = mean_std(y.iter().copied());
        Ok(Self { x_mean, x_std, y_mean, y_std })
    }

    pub fn inputs(&self, x: &Tensor) -> Tensor {
        let f = self.x_mean.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = (*v - self.x_mean[i % f]) / self.x_std[i % f];
        }
        out
    }

    pub fn apply(&self, split: &Split) -> Split {
        let targets = match &split.targets {
            Targets::Values(y) => Targets::Values(y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()),
            other => other.clone(),
        };
        Split {
            inputs: self.inputs(&split.inputs),
            targets,
        }
    }
}

/// Numeric CSV whose last column is the target. A first line that does not parse is
/// taken as a header.
pub fn load_csv(path: impl AsRef<Path>, seed: u64) -> Result<DatasetHandle> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
    let (mut x, mut y, mut width) = (Vec::new(), Vec::new(), None);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if line == 0 => continue,
            Err(_) => {
                return Err(HarnessError::Data(format!("{}: non-numeric value on line {}", path.display(), line + 1)))
            }
        };
        if row.len() < 2 || *width.get_or_insert(row.len()) != row.len() {
            return Err(HarnessError::Data(format!("{}: ragged or single-column row on line {}", path.display(), line + 1)));
        }
        y.push(row[row.len() - 1]);
        x.extend_from_slice(&row[..row.len() - 1]);
    }
    let f = width.unwrap_or(1) - 1;
    let all = Split::new(Tensor::new(vec![y.len(), f.max(1)], x)?, Targets::Values(y))?;
    let source = Source::Csv {
        path: path.display().to_string(),
    };
    DatasetHandle::from_split(all, 0.1, 0.2, seed, source)
}

/// Mirrors every image `[B, C, H, W]` left-right with probability ½.
pub fn random_hflip<R: Rng + ?Sized>(batch: &mut Tensor, rng: &mut R) {
    if batch.ndim() != 4 {
        return;
    }
    let s = batch.shape().to_vec();
    let (w, plane) = (s[3], s[2] * s[3]);
    let per_sample = s[1] * plane;
    for b in 0..s[0] {
        if rng.gen::<bool>() {
            let img = &mut batch.data_mut()[b * per_sample..(b + 1) * per_sample];
            for row in img.chunks_mut(w) {
                row.reverse();
            }
        }
    }
}

/// A shuffled permutation of `0..n` cut into batches of at most `size`.
pub fn batch_order<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}
