use serde::{Deserialize, Serialize};

use super::config::Style;
use super::network::PackedNetwork;
use crate::nn::{layer_slots, LayerSpec, ParamKind};

/// Trainable parameters owned by one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: usize,
    pub kind: String,
    pub total: usize,
    /// Conv/linear weights only (biases and batch norm excluded).
    pub weights: usize,
}

/// Parameter count with per-layer breakdown. Running statistics are never counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub weights: usize,
    pub layers: Vec<LayerCount>,
}

impl ParamCount {
    pub fn get(&self, weights_only: bool) -> usize {
        if weights_only {
            self.weights
        } else {
            self.total
        }
    }

    fn scaled(mut self, k: usize) -> Self {
        self.total *= k;
        self.weights *= k;
        for l in &mut self.layers {
            l.total *= k;
            l.weights *= k;
        }
        self
    }
}

fn kind_name(layer: &LayerSpec) -> &'static str {
    match layer {
        LayerSpec::Conv(_) => "conv",
        LayerSpec::Linear(_) => "linear",
        LayerSpec::BatchNorm { .. } => "bn",
        LayerSpec::ResidualEnd { .. } => "shortcut",
        _ => "other",
    }
}

/// Counts the trainable parameters of an architecture.
pub fn count_params(layers: &[LayerSpec]) -> ParamCount {
    let mut out = ParamCount {
        total: 0,
        weights: 0,
        layers: Vec::new(),
    };
    for (j, layer) in layers.iter().enumerate() {
        let slots = layer_slots(j, layer);
        if slots.is_empty() {
            continue;
        }
        let size = |k: &dyn Fn(ParamKind) -> bool| {
            slots
                .iter()
                .filter(|s| k(s.kind))
                .map(|s| s.shape.iter().product::<usize>())
                .sum::<usize>()
        };
        let total = size(&|k| k.trainable());
        let weights = size(&|k| k == ParamKind::Weight);
        out.total += total;
        out.weights += weights;
        out.layers.push(LayerCount {
            layer: j,
            kind: kind_name(layer).to_string(),
            total,
            weights,
        });
    }
    out
}

/// Counts a packed network; style (a) holds `M` copies of the member architecture.
pub fn count_packed(net: &PackedNetwork) -> ParamCount {
    let count = count_params(&net.layout().packed);
    match net.style() {
        Style::Sequential => count.scaled(net.num_members()),
        _ => count,
    }
}
