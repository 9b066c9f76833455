//! Layers, reverse-mode gradients and the momentum-SGD training step.

pub mod gradcheck;
mod loss;
mod network;
mod optim;
mod params;
mod spec;

pub use loss::{cross_entropy_with_softmax, softmax_rows};
pub use network::{Gradients, Network, Tape, BN_EPS, BN_MOMENTUM};
pub use optim::{sgd_step, TrainConfig};
pub use params::{init_params, layer_slots, network_slots, InitScheme, Param, ParamKind, ParamSlot, ParamStore};
pub use spec::{format_arch, infer_shapes, parse_arch, ConvSpec, FeatureShape, LayerSpec, LinearSpec, Shortcut};
