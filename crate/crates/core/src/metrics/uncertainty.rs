use super::{argmax, member_mean, PredictionBatch};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

fn entropy_of(row: &[f64]) -> f64 {
    -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Maximum softmax probability of the mean prediction.
pub fn msp(pred: &PredictionBatch) -> Vec<f64> {
    let c = pred.num_classes();
    pred.mean_probs()
        .data()
        .chunks(c)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Maximum over classes of the member-averaged logits `[M, N, C]`.
pub fn max_logit(member_logits: &Tensor) -> Result<Vec<f64>> {
    let [m, n, c] = member_logits.shape() else {
        return dim_err(format!("member logits must be [M, N, C], got {:?}", member_logits.shape()));
    };
    let mean = member_mean(member_logits, *m, n * c)?;
    Ok(mean
        .data()
        .chunks(*c)
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Entropy (nats) of the mean prediction.
pub fn entropy(pred: &PredictionBatch) -> Vec<f64> {
    pred.mean_probs().data().chunks(pred.num_classes()).map(entropy_of).collect()
}

/// Entropy of the mean minus the mean member entropy, computed as the average
/// KL divergence of each member from the mean (exactly 0 for identical members).
pub fn mutual_information(pred: &PredictionBatch) -> Result<Vec<f64>> {
    let (m, n, c) = (pred.num_members(), pred.num_samples(), pred.num_classes());
    let members = pred.member_probs().data();
    let mean = pred.mean_probs().data();
    Ok((0..n)
        .map(|i| {
            let q = &mean[i * c..(i + 1) * c];
            let kl: f64 = (0..m)
                .map(|k| {
                    let p = &members[(k * n + i) * c..(k * n + i + 1) * c];
                    p.iter()
                        .zip(q)
                        .filter(|(&pj, _)| pj > 0.0)
                        .map(|(&pj, &qj)| pj * (pj / qj).ln())
                        .sum::<f64>()
                })
                .sum();
            (kl / m as f64).max(0.0)
        })
        .collect())
}

/// `1 − f/M`, where `f` counts members voting for the modal class.
pub fn variation_ratio(pred: &PredictionBatch) -> Vec<f64> {
    let (m, n, c) = (pred.num_members(), pred.num_samples(), pred.num_classes());
    let members = pred.member_probs().data();
    (0..n)
        .map(|i| {
            let mut votes = vec![0usize; c];
            for k in 0..m {
                votes[argmax(&members[(k * n + i) * c..(k * n + i + 1) * c])] += 1;
            }
            1.0 - *votes.iter().max().unwrap() as f64 / m as f64
        })
        .collect()
}

/// OOD scoring rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Msp,
    MaxLogit,
    Entropy,
    MutualInformation,
    VariationRatio,
}

impl Criterion {
    pub const ALL: [Criterion; 5] = [
        Criterion::Msp,
        Criterion::MaxLogit,
        Criterion::Entropy,
        Criterion::MutualInformation,
        Criterion::VariationRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Msp => "msp",
            Criterion::MaxLogit => "ml",
            Criterion::Entropy => "ent",
            Criterion::MutualInformation => "mi",
            Criterion::VariationRatio => "v",
        }
    }

    /// Per-sample scores where higher means more in-distribution: MSP and ML as is,
    /// the uncertainty measures negated.
    pub fn id_scores(self, pred: &PredictionBatch, member_logits: &Tensor) -> Result<Vec<f64>> {
        let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect();
        Ok(match self {
            Criterion::Msp => msp(pred),
            Criterion::MaxLogit => max_logit(member_logits)?,
            Criterion::Entropy => neg(entropy(pred)),
            Criterion::MutualInformation => neg(mutual_information(pred)?),
            Criterion::VariationRatio => neg(variation_ratio(pred)),
        })
    }
}
