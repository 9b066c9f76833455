//! Training runs: data loading, the epoch loop and best-validation checkpoints.

use std::path::Path;

use packed_core::metrics::PredictionBatch;
use packed_core::nn::InitScheme;
use packed_core::packed::{MemberInit, PackedNetwork, Style};
use packed_core::regression::gaussian_nll_batch;
use packed_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::{build_arch, DatasetSpec, ExperimentConfig, Task};
use crate::data::{batch_order, load_csv, random_hflip, DatasetHandle, Split, Standardizer};
use crate::error::{HarnessError, Result};
use crate::eval::predict;
use crate::synth::{synth_classification, synth_cubic};
use crate::{idx, rng};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Trained ensemble plus what is needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// Epoch (0-based) whose weights these are.
    pub epoch: usize,
    /// Shape of one input sample.
    pub input_shape: Vec<usize>,
    /// Input/target rescaling of regression runs.
    pub scaling: Option<Standardizer>,
    pub network: PackedNetwork,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|e| HarnessError::Report(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(HarnessError::Report(format!(
                "{}: checkpoint schema {} is not {CHECKPOINT_SCHEMA_VERSION}",
                path.display(),
                ckpt.schema_version
            )));
        }
        Ok(ckpt)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-member training loss.
    pub loss: f64,
    pub lr: f64,
    /// Ensemble accuracy (classification) on the validation split.
    pub val_acc: Option<f64>,
    /// Ensemble NLL on the validation split.
    pub val_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Weights after the last epoch.
    pub last: PackedNetwork,
    pub log: Vec<EpochLog>,
}

/// Builds the dataset a configuration names, with its OOD set when it has one.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(DatasetHandle, Option<Tensor>)> {
    Ok(match &cfg.dataset {
        DatasetSpec::Synthetic(regime) => {
            let (d, ood) = synth_classification(cfg.data_seed, cfg.samples, *regime)?;
            (d, Some(ood))
        }
        DatasetSpec::Cubic => (synth_cubic(cfg.data_seed, cfg.samples)?, None),
        DatasetSpec::Idx { images, labels } => {
            let all = idx::load_idx(images, labels)?;
            let source = crate::data::Source::Idx {
                images: images.display().to_string(),
                labels: labels.display().to_string(),
            };
            (DatasetHandle::from_split(all, 0.1, 0.2, cfg.data_seed, source)?, None)
        }
        DatasetSpec::Csv(path) => (load_csv(path, cfg.data_seed)?, None),
    })
}

/// Loads the configured dataset and trains on it.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (data, _) = load_dataset(cfg)?;
    train_on(cfg, &data)
}

fn stream_seed(seed: u64, epoch: usize, stream: usize, salt: u64) -> u64 {
    seed ^ salt
        ^ (epoch as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F)
        ^ (stream as u64 + 1).wrapping_mul(0xE703_7ED1_A0B4_28DB)
}

/// Mean ensemble NLL and (for classification) accuracy on a split.
fn validate(net: &PackedNetwork, split: &Split, ckpt: &Checkpoint) -> Result<(Option<f64>, f64)> {
    match split.targets.labels() {
        Some(labels) => {
            let p = predict(net, &split.inputs)?;
            let batch = PredictionBatch::new(p.member_probs, Some(labels.to_vec()))?;
            Ok((Some(batch.accuracy()?), batch.nll()?))
        }
        None => {
            let mut probe = ckpt.clone();
            probe.network = net.clone();
            let r = crate::eval::run_eval_regression(&probe, split)?;
            Ok((None, r.nll))
        }
    }
}

/// Trains `cfg` on `data`. The checkpoint keeps the epoch with the best validation ensemble
/// accuracy (classification) or NLL (regression); earlier epochs win ties.
pub fn train_on(cfg: &ExperimentConfig, data: &DatasetHandle) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task_matches = match cfg.task {
        Task::Classify => data.num_classes().is_some(),
        Task::Regress => data.num_classes().is_none(),
    };
    if !task_matches {
        return Err(HarnessError::Config("task does not match the dataset's targets".into()));
    }
    let outputs = data.num_classes().unwrap_or(2);
    let scaling = match cfg.task {
        Task::Regress => Some(Standardizer::fit(&data.train)?),
        Task::Classify => None,
    };
    let train = match &scaling {
        Some(s) => s.apply(&data.train),
        None => data.train.clone(),
    };
    let base = build_arch(&cfg.arch, train.sample_shape(), outputs)?;
    let init = MemberInit {
        seed: cfg.train.seed,
        distinct: cfg.stochasticity.distinct_init,
        scheme: InitScheme::HeNormal,
    };
    let mut net = PackedNetwork::new(&base, cfg.packed, cfg.style, outputs, init)?;
    let m = net.num_members();
    let streams = if cfg.stochasticity.distinct_batches && cfg.style == Style::Sequential { m } else { 1 };

    let mut best = Checkpoint {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.train.seed,
        epoch: 0,
        input_shape: train.sample_shape().to_vec(),
        scaling,
        network: net.clone(),
    };
    let mut best_score = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.train.max_epochs);
    for epoch in 0..cfg.train.max_epochs {
        let orders: Vec<Vec<Vec<usize>>> = (0..streams)
            .map(|s| batch_order(train.len(), cfg.train.batch_size, &mut rng(stream_seed(cfg.train.seed, epoch, s, 0))))
            .collect();
        let mut flips: Vec<_> = (0..streams)
            .map(|s| rng(stream_seed(cfg.train.seed, epoch, s, 0xF11B)))
            .collect();
        let mut total = 0.0;
        for b in 0..orders[0].len() {
            let batches: Vec<Split> = orders.iter().map(|o| train.gather(&o[b])).collect();
            let mut inputs: Vec<Tensor> = batches.iter().map(|s| s.inputs.clone()).collect();
            if cfg.train.hflip {
                for (x, r) in inputs.iter_mut().zip(&mut flips) {
                    random_hflip(x, r);
                }
            }
            let loss = match cfg.task {
                Task::Classify => {
                    let labels: Vec<&[usize]> = batches.iter().map(|s| s.targets.labels().expect("labels")).collect();
                    net.train_step(&inputs, &labels, &cfg.train, epoch)?
                }
                Task::Regress => {
                    let targets: Vec<&[f64]> = batches.iter().map(|s| s.targets.values().expect("values")).collect();
                    net.train_step_with(&inputs, &cfg.train, epoch, |j, out| {
                        let (l, g, _) = gaussian_nll_batch(out, targets[if targets.len() == 1 { 0 } else { j }])?;
                        Ok((l, g))
                    })?
                }
            };
            total += loss * batches[0].len() as f64;
        }
        let (val_acc, val_nll) = validate(&net, &data.val, &best)?;
        log.push(EpochLog {
            epoch,
            loss: total / (train.len() * m) as f64,
            lr: cfg.train.lr_at(epoch),
            val_acc,
            val_nll,
        });
        let score = val_acc.unwrap_or(-val_nll);
        if score > best_score {
            best_score = score;
            best.epoch = epoch;
            best.network = net.clone();
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        last: net,
        log,
    })
}
