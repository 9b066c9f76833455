use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{config_err, dim_err, Result};
use crate::tensor::Tensor;

/// Optimizer and schedule settings, named after the usual image-classification table
/// (`max_epochs`, `batch_size`, `lr`, `momentum`, `weight_decay`, `lr_gamma`, `milestones`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_gamma: f64,
    pub milestones: Vec<usize>,
    pub hflip: bool,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    /// CIFAR-10 / ResNet-18 schedule.
    fn default() -> Self {
        Self {
            max_epochs: 75,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_gamma: 0.1,
            milestones: vec![25, 50],
            hflip: true,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return config_err(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config_err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.weight_decay < 0.0 || self.lr_gamma <= 0.0 {
            return config_err("weight_decay must be >= 0 and lr_gamma > 0");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return config_err("batch_size and max_epochs must be positive");
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return config_err(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        Ok(())
    }

    /// `lr · lr_gamma^(number of milestones ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_gamma.powi(passed as i32)
    }
}

/// One momentum-SGD update:
/// `v ← momentum·v + g + weight_decay·p`, `p ← p − lr(epoch)·v`.
///
/// Running statistics (no gradient) are left untouched; decay applies to weights only.
pub fn sgd_step(params: &mut ParamStore, grads: &[Option<Tensor>], config: &TrainConfig, epoch: usize) -> Result<()> {
    if grads.len() != params.len() {
        return dim_err(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            params.len()
        ));
    }
    let lr = config.lr_at(epoch);
    for (p, g) in params.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        if !p.kind.trainable() {
            continue;
        }
        if g.shape() != p.value.shape() {
            return dim_err(format!(
                "gradient for {} has shape {:?}, parameter is {:?}",
                p.name,
                g.shape(),
                p.value.shape()
            ));
        }
        let wd = if p.kind.decays() { config.weight_decay } else { 0.0 };
        let v = p.velocity.data_mut();
        let w = p.value.data_mut();
        for ((vi, wi), gi) in v.iter_mut().zip(w.iter_mut()).zip(g.data()) {
            *vi = config.momentum * *vi + gi + wd * *wi;
            *wi -= lr * *vi;
        }
    }
    Ok(())
}
