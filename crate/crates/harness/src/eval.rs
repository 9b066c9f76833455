//! Ensemble inference over whole splits and the reports built from it.

use packed_core::metrics::{MetricsReport, PredictionBatch, Provenance};
use packed_core::packed::PackedNetwork;
use packed_core::regression::{gaussian_nll, mixture_aggregate, GaussianPrediction};
use packed_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::{Split, Targets};
use crate::error::{HarnessError, Result};
use crate::train::Checkpoint;

/// Samples per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 500;

/// Member outputs for a whole input tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `[M, N, K]` raw outputs.
    pub member_logits: Tensor,
    /// `[M, N, K]` per-member softmax.
    pub member_probs: Tensor,
}

/// Runs the ensemble over `inputs` in chunks of [`EVAL_CHUNK`] samples.
pub fn predict(net: &PackedNetwork, inputs: &Tensor) -> Result<Predictions> {
    let n = inputs.shape()[0];
    let m = net.num_members();
    let k = net.outputs_per_member();
    let (mut logits, mut probs) = (vec![Vec::with_capacity(n * k); m], vec![Vec::with_capacity(n * k); m]);
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let out = net.ensemble_forward(&inputs.slice_axis0(start, end)?)?;
        let rows = (end - start) * k;
        for j in 0..m {
            logits[j].extend_from_slice(&out.member_logits.data()[j * rows..(j + 1) * rows]);
            probs[j].extend_from_slice(&out.member_probs.data()[j * rows..(j + 1) * rows]);
        }
        start = end;
    }
    Ok(Predictions {
        member_logits: Tensor::new(vec![m, n, k], logits.concat())?,
        member_probs: Tensor::new(vec![m, n, k], probs.concat())?,
    })
}

/// Ensemble accuracy of `net` on a labelled split.
pub fn ensemble_accuracy(net: &PackedNetwork, split: &Split) -> Result<f64> {
    let labels = split
        .targets
        .labels()
        .ok_or_else(|| HarnessError::Data("accuracy needs class labels".into()))?;
    let p = predict(net, &split.inputs)?;
    Ok(PredictionBatch::new(p.member_probs, Some(labels.to_vec()))?.accuracy()?)
}

fn check_inputs(ckpt: &Checkpoint, inputs: &Tensor, what: &str) -> Result<()> {
    if inputs.shape()[1..] != ckpt.input_shape[..] {
        return Err(HarnessError::Data(format!(
            "{what} samples have shape {:?} but the checkpoint expects {:?}",
            &inputs.shape()[1..],
            ckpt.input_shape
        )));
    }
    Ok(())
}

/// Accuracy, NLL, ECE and MI on `split`; detection scores under every criterion when an
/// OOD set is given.
pub fn run_eval(ckpt: &Checkpoint, split: &Split, ood: Option<&Tensor>) -> Result<MetricsReport> {
    check_inputs(ckpt, &split.inputs, "evaluation")?;
    let labels = match &split.targets {
        Targets::Classes { labels, num_classes } if *num_classes <= ckpt.network.outputs_per_member() => labels,
        Targets::Classes { num_classes, .. } => {
            return Err(HarnessError::Data(format!(
                "dataset has {num_classes} classes, the checkpoint predicts {}",
                ckpt.network.outputs_per_member()
            )))
        }
        Targets::Values(_) => return Err(HarnessError::Data("classification report on a regression split".into())),
    };
    let provenance = Provenance {
        seed: ckpt.seed,
        config_hash: ckpt.config_hash.clone(),
    };
    let id = predict(&ckpt.network, &split.inputs)?;
    let id_batch = PredictionBatch::new(id.member_probs, Some(labels.clone()))?;
    let report = match ood {
        Some(x) => {
            check_inputs(ckpt, x, "OOD")?;
            let o = predict(&ckpt.network, x)?;
            let o_batch = PredictionBatch::new(o.member_probs, None)?;
            MetricsReport::compute(&id_batch, &id.member_logits, Some((&o_batch, &o.member_logits)), provenance)?
        }
        None => MetricsReport::compute(&id_batch, &id.member_logits, None, provenance)?,
    };
    Ok(report)
}

pub const REGRESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionReport {
    pub schema_version: u32,
    /// Mean Gaussian NLL of the aggregated mixture, in target units.
    pub nll: f64,
    pub rmse: f64,
    pub provenance: Provenance,
}

/// Aggregated Gaussian predictions in the original target units.
pub fn predict_gaussian(ckpt: &Checkpoint, inputs: &Tensor) -> Result<Vec<GaussianPrediction>> {
    let scaling = ckpt
        .scaling
        .as_ref()
        .ok_or_else(|| HarnessError::Data("checkpoint has no regression head".into()))?;
    let p = predict(&ckpt.network, &scaling.inputs(inputs))?;
    let (m, n, _) = (p.member_logits.shape()[0], p.member_logits.shape()[1], 2);
    let raw = p.member_logits.data();
    (0..n)
        .map(|i| {
            let members: Vec<GaussianPrediction> = (0..m)
                .map(|j| {
                    let g = GaussianPrediction::from_raw(raw[(j * n + i) * 2], raw[(j * n + i) * 2 + 1]);
                    GaussianPrediction {
                        mu: g.mu * scaling.y_std + scaling.y_mean,
                        var: g.var * scaling.y_std * scaling.y_std,
                    }
                })
                .collect();
            Ok(mixture_aggregate(&members)?)
        })
        .collect()
}

pub fn run_eval_regression(ckpt: &Checkpoint, split: &Split) -> Result<RegressionReport> {
    check_inputs(ckpt, &split.inputs, "evaluation")?;
    let y = split
        .targets
        .values()
        .ok_or_else(|| HarnessError::Data("regression report on a labelled split".into()))?;
    let preds = predict_gaussian(ckpt, &split.inputs)?;
    let n = y.len() as f64;
    Ok(RegressionReport {
        schema_version: REGRESSION_SCHEMA_VERSION,
        nll: preds.iter().zip(y).map(|(p, &t)| gaussian_nll(*p, t).loss).sum::<f64>() / n,
        rmse: (preds.iter().zip(y).map(|(p, t)| (p.mu - t).powi(2)).sum::<f64>() / n).sqrt(),
        provenance: Provenance {
            seed: ckpt.seed,
            config_hash: ckpt.config_hash.clone(),
        },
    })
}
