use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{ConvSpec, LayerSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Weight decay touches conv/linear weights only.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub velocity: Tensor,
}

/// Ordered named tensors of a network together with their momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.value.len())
            .sum()
    }

    /// Clears every momentum buffer.
    pub fn reset_velocity(&mut self) {
        for p in &mut self.params {
            p.velocity = Tensor::zeros(p.value.shape());
        }
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum InitScheme {
    /// `N(0, 2 / fan_in)` for conv/linear weights, with `fan_in = (C_in / groups)·s²`.
    #[default]
    HeNormal,
    /// Every conv/linear weight set to one value (useful for hand-built tests).
    Constant(f64),
}

/// One parameter slot of a layer before values are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Fan-in used for weight initialization (weights only).
    pub fan_in: usize,
}

fn conv_slots(prefix: &str, c: &ConvSpec, out: &mut Vec<ParamSlot>) {
    let fan_in = c.in_channels / c.groups * c.kernel * c.kernel;
    out.push(ParamSlot {
        name: format!("{prefix}.weight"),
        kind: ParamKind::Weight,
        shape: c.shape().weight_shape().to_vec(),
        fan_in,
    });
    if c.bias {
        out.push(ParamSlot {
            name: format!("{prefix}.bias"),
            kind: ParamKind::Bias,
            shape: vec![c.out_channels],
            fan_in,
        });
    }
}

fn bn_slots(prefix: &str, channels: usize, out: &mut Vec<ParamSlot>) {
    for (suffix, kind) in [
        ("scale", ParamKind::BnScale),
        ("shift", ParamKind::BnShift),
        ("running_mean", ParamKind::RunningMean),
        ("running_var", ParamKind::RunningVar),
    ] {
        out.push(ParamSlot {
            name: format!("{prefix}.{suffix}"),
            kind,
            shape: vec![channels],
            fan_in: 0,
        });
    }
}

/// Parameter slots of one layer, in storage order.
pub fn layer_slots(index: usize, layer: &LayerSpec) -> Vec<ParamSlot> {
    let mut out = Vec::new();
    let prefix = index.to_string();
    match layer {
        LayerSpec::Conv(c) => conv_slots(&prefix, c, &mut out),
        LayerSpec::Linear(l) => conv_slots(&prefix, &l.as_conv(), &mut out),
        LayerSpec::BatchNorm { channels } => bn_slots(&prefix, *channels, &mut out),
        LayerSpec::ResidualEnd { shortcut: Some(sc) } => {
            conv_slots(&format!("{prefix}.proj"), &sc.as_conv(), &mut out);
            bn_slots(&format!("{prefix}.proj_bn"), sc.out_channels, &mut out);
        }
        _ => {}
    }
    out
}

/// All parameter slots of a network, in storage order.
pub fn network_slots(layers: &[LayerSpec]) -> Vec<ParamSlot> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(j, l)| layer_slots(j, l))
        .collect()
}

/// Deterministically initializes every parameter of `layers` from `seed`.
pub fn init_params(layers: &[LayerSpec], seed: u64, scheme: InitScheme) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = network_slots(layers)
        .into_iter()
        .map(|slot| {
            let value = match slot.kind {
                ParamKind::Weight => match scheme {
                    InitScheme::HeNormal => {
                        Tensor::randn(&slot.shape, (2.0 / slot.fan_in as f64).sqrt(), &mut rng)
                    }
                    InitScheme::Constant(v) => Tensor::full(&slot.shape, v),
                },
                ParamKind::BnScale | ParamKind::RunningVar => Tensor::ones(&slot.shape),
                ParamKind::Bias | ParamKind::BnShift | ParamKind::RunningMean => Tensor::zeros(&slot.shape),
            };
            Param {
                velocity: Tensor::zeros(&slot.shape),
                name: slot.name,
                kind: slot.kind,
                value,
            }
        })
        .collect();
    ParamStore::new(params)
}
