//! Heteroscedastic Gaussian regression heads: the Gaussian NLL and mixture aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, input_err, Result};
use crate::tensor::Tensor;

/// Smallest variance a head can emit.
pub const VAR_FLOOR: f64 = 1e-6;

/// `ln(1 + eˣ)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mu: f64,
    pub var: f64,
}

impl GaussianPrediction {
    pub fn new(mu: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !mu.is_finite() {
            return input_err(format!("invalid Gaussian (mu {mu}, var {var})"));
        }
        Ok(Self { mu, var })
    }

    /// Maps the two raw head outputs to `(μ, softplus(raw) + floor)`.
    pub fn from_raw(mu: f64, raw_var: f64) -> Self {
        Self {
            mu,
            var: softplus(raw_var) + VAR_FLOOR,
        }
    }
}

/// Loss and its gradients with respect to `μ` and `σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllTerms {
    pub loss: f64,
    pub d_mu: f64,
    pub d_var: f64,
    /// The variance was below [`VAR_FLOOR`] and was raised to it.
    pub clamped: bool,
}

/// `(y − μ)²/(2σ²) + ½ ln σ² + ½ ln 2π`.
pub fn gaussian_nll(pred: GaussianPrediction, y: f64) -> NllTerms {
    let clamped = !(pred.var >= VAR_FLOOR);
    let var = if clamped { VAR_FLOOR } else { pred.var };
    let r = y - pred.mu;
    NllTerms {
        loss: r * r / (2.0 * var) + 0.5 * var.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln(),
        d_mu: -r / var,
        d_var: if clamped { 0.0 } else { 0.5 / var - r * r / (2.0 * var * var) },
        clamped,
    }
}

/// Mean NLL over a batch of raw head outputs `[B, 2]` and its gradient with respect
/// to those outputs (through the softplus). Also returns how many variances were clamped.
pub fn gaussian_nll_batch(outputs: &Tensor, targets: &[f64]) -> Result<(f64, Tensor, usize)> {
    let (b, k) = outputs.dims2()?;
    if k != 2 || b != targets.len() || b == 0 {
        return dim_err(format!(
            "Gaussian head outputs {:?} do not match {} targets",
            outputs.shape(),
            targets.len()
        ));
    }
    let mut grad = vec![0.0; 2 * b];
    let (mut total, mut clamped) = (0.0, 0);
    for (i, (row, &y)) in outputs.data().chunks(2).zip(targets).enumerate() {
        let t = gaussian_nll(GaussianPrediction::from_raw(row[0], row[1]), y);
        total += t.loss;
        clamped += usize::from(t.clamped);
        grad[2 * i] = t.d_mu / b as f64;
        grad[2 * i + 1] = t.d_var * sigmoid(row[1]) / b as f64;
    }
    Ok((total / b as f64, Tensor::new(vec![b, 2], grad)?, clamped))
}

/// Mixture of equally weighted Gaussians collapsed to its mean and variance:
/// `μ̄ = mean μ_m`, `σ̄² = mean(σ²_m + μ²_m) − μ̄²`, evaluated in the equivalent
/// form `mean σ²_m + mean (μ_m − μ̄)²` for numerical stability.
pub fn mixture_aggregate(preds: &[GaussianPrediction]) -> Result<GaussianPrediction> {
    if preds.is_empty() {
        return input_err("cannot aggregate an empty set of predictions");
    }
    let m = preds.len() as f64;
    let mu = preds.iter().map(|p| p.mu).sum::<f64>() / m;
    let mean_var = preds.iter().map(|p| p.var).sum::<f64>() / m;
    let spread = preds.iter().map(|p| (p.mu - mu).powi(2)).sum::<f64>() / m;
    Ok(GaussianPrediction { mu, var: mean_var + spread })
}

/// Mean NLL of aggregated predictions.
pub fn mean_nll(preds: &[GaussianPrediction], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return input_err(format!("{} predictions for {} targets", preds.len(), targets.len()));
    }
    Ok(preds.iter().zip(targets).map(|(p, &y)| gaussian_nll(*p, y).loss).sum::<f64>() / preds.len() as f64)
}
