//! Classification, calibration and out-of-distribution detection metrics.

mod detection;
mod uncertainty;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input_err, Result};
use crate::tensor::Tensor;

pub use detection::{aupr, aupr_with, auroc, fpr_at_95_tpr, BinaryDetection};
pub use uncertainty::{entropy, max_logit, msp, mutual_information, variation_ratio, Criterion};

/// Default number of equal-width calibration bins.
pub const ECE_BINS: usize = 15;
/// Probabilities are clamped here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-member class probabilities `[M, N, C]` with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    member_probs: Tensor,
    mean_probs: Tensor,
    labels: Option<Vec<usize>>,
}

impl PredictionBatch {
    pub fn new(member_probs: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let [m, n, c] = member_probs.shape() else {
            return dim_err(format!("member probabilities must be [M, N, C], got {:?}", member_probs.shape()));
        };
        let (m, n, c) = (*m, *n, *c);
        for (i, row) in member_probs.data().chunks(c).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (s - 1.0).abs() > 1e-6 {
                return input_err(format!("row {} of member {} is not a distribution", i % n, i / n));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return input_err(format!("{} labels for {n} samples", l.len()));
            }
            if let Some(bad) = l.iter().find(|&&y| y >= c) {
                return input_err(format!("label {bad} out of range for {c} classes"));
            }
        }
        let mean_probs = member_mean(&member_probs, m, n * c)?;
        Ok(Self {
            member_probs,
            mean_probs,
            labels,
        })
    }

    /// A single model's probabilities `[N, C]`.
    pub fn single(probs: Tensor, labels: Option<Vec<usize>>) -> Result<Self> {
        let (n, c) = probs.dims2()?;
        Self::new(probs.into_reshaped(&[1, n, c])?, labels)
    }

    pub fn member_probs(&self) -> &Tensor {
        &self.member_probs
    }

    /// `[N, C]` average over members.
    pub fn mean_probs(&self) -> &Tensor {
        &self.mean_probs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_members(&self) -> usize {
        self.member_probs.shape()[0]
    }

    pub fn num_samples(&self) -> usize {
        self.member_probs.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.member_probs.shape()[2]
    }

    fn require_labels(&self) -> Result<&[usize]> {
        match &self.labels {
            Some(l) if !l.is_empty() => Ok(l),
            _ => input_err("metric needs a non-empty labelled batch"),
        }
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(&self.mean_probs, self.require_labels()?)
    }

    pub fn nll(&self) -> Result<f64> {
        nll(&self.mean_probs, self.require_labels()?)
    }

    pub fn ece(&self, n_bins: usize) -> Result<f64> {
        ece(&self.mean_probs, self.require_labels()?, n_bins)
    }
}

/// Elementwise mean over the leading axis; entries equal across members are returned
/// bit-exactly so that identical members have zero disagreement.
pub(crate) fn member_mean(t: &Tensor, m: usize, stride: usize) -> Result<Tensor> {
    let d = t.data();
    let shape = t.shape()[1..].to_vec();
    let out = (0..stride)
        .map(|i| {
            let first = d[i];
            if (1..m).all(|k| d[k * stride + i] == first) {
                first
            } else {
                (0..m).map(|k| d[k * stride + i]).sum::<f64>() / m as f64
            }
        })
        .collect();
    Tensor::new(shape, out)
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn rows<'a>(probs: &'a Tensor, labels: &[usize]) -> Result<std::slice::Chunks<'a, f64>> {
    let (n, c) = probs.dims2()?;
    if n == 0 || labels.is_empty() {
        return input_err("empty batch");
    }
    if labels.len() != n {
        return input_err(format!("{} labels for {n} samples", labels.len()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= c) {
        return input_err(format!("label {bad} out of range for {c} classes"));
    }
    Ok(probs.data().chunks(c))
}

/// Fraction of samples whose arg-max class equals the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let hits = rows(probs, labels)?.zip(labels).filter(|(r, &y)| argmax(r) == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean of `−ln p(label)` with probabilities clamped at [`PROB_FLOOR`].
pub fn nll(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let total: f64 = rows(probs, labels)?
        .zip(labels)
        .map(|(r, &y)| -r[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Expected calibration error with `n_bins` equal-width confidence bins on `(0, 1]`.
pub fn ece(probs: &Tensor, labels: &[usize], n_bins: usize) -> Result<f64> {
    let (conf, correct): (Vec<f64>, Vec<bool>) = rows(probs, labels)?
        .zip(labels)
        .map(|(r, &y)| {
            let k = argmax(r);
            (r[k], k == y)
        })
        .unzip();
    ece_binned(&conf, &correct, n_bins, 0.0, 1.0)
}

/// ECE over raw confidences with bins `(lo + b·w, lo + (b+1)·w]`, `w = (hi − lo)/n_bins`.
/// Confidences at or below `lo` fall in the first bin.
pub fn ece_binned(confidence: &[f64], correct: &[bool], n_bins: usize, lo: f64, hi: f64) -> Result<f64> {
    if n_bins == 0 || !(hi > lo) {
        return input_err(format!("need at least one bin over a non-empty range, got {n_bins} over ({lo}, {hi}]"));
    }
    if confidence.is_empty() || confidence.len() != correct.len() {
        return input_err("confidences and correctness flags must be non-empty and aligned");
    }
    let width = (hi - lo) / n_bins as f64;
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hit = vec![0usize; n_bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let b = (((c - lo) / width).ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize;
        count[b] += 1;
        conf_sum[b] += c;
        hit[b] += usize::from(ok);
    }
    let n = confidence.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let k = count[b] as f64;
            (k / n) * (hit[b] as f64 / k - conf_sum[b] / k).abs()
        })
        .sum())
}

/// Scores of one OOD criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodScores {
    pub criterion: String,
    pub auc: f64,
    pub aupr: f64,
    pub fpr95: f64,
}

/// Seed and configuration fingerprint of the run that produced a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Everything one evaluation run computes. The top-level `aupr`/`auc`/`fpr95`
/// are the MSP scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub acc: f64,
    pub nll: f64,
    pub ece: f64,
    pub mutual_information: f64,
    pub aupr: Option<f64>,
    pub auc: Option<f64>,
    pub fpr95: Option<f64>,
    pub ood: Vec<OodScores>,
    pub provenance: Provenance,
}

impl MetricsReport {
    /// Accuracy, NLL, ECE and mean MI on `id`; detection scores for every criterion when
    /// `ood` is given. `*_logits` are `[M, N, C]` and feed the max-logit criterion.
    pub fn compute(
        id: &PredictionBatch,
        id_logits: &Tensor,
        ood: Option<(&PredictionBatch, &Tensor)>,
        provenance: Provenance,
    ) -> Result<Self> {
        let mi = mutual_information(id)?;
        let mut report = Self {
            schema_version: REPORT_SCHEMA_VERSION,
            acc: id.accuracy()?,
            nll: id.nll()?,
            ece: id.ece(ECE_BINS)?,
            mutual_information: mi.iter().sum::<f64>() / mi.len() as f64,
            aupr: None,
            auc: None,
            fpr95: None,
            ood: Vec::new(),
            provenance,
        };
        if let Some((ood, ood_logits)) = ood {
            for crit in Criterion::ALL {
                let mut scores = crit.id_scores(id, id_logits)?;
                let n_id = scores.len();
                scores.extend(crit.id_scores(ood, ood_logits)?);
                let is_id: Vec<bool> = (0..scores.len()).map(|i| i < n_id).collect();
                let det = BinaryDetection::new(scores, is_id)?;
                report.ood.push(OodScores {
                    criterion: crit.name().to_string(),
                    auc: auroc(&det)?,
                    aupr: aupr(&det)?,
                    fpr95: fpr_at_95_tpr(&det)?,
                });
            }
            let msp_row = &report.ood[0];
            report.auc = Some(msp_row.auc);
            report.aupr = Some(msp_row.aupr);
            report.fpr95 = Some(msp_row.fpr95);
        }
        Ok(report)
    }
}
