//! Packed-Ensembles: `M` subnetworks packed into one grouped network.

mod archs;
mod config;
mod count;
mod network;
mod transform;

pub use archs::{mlp_spec, resnet18_spec, resnet_spec, small_cnn_spec};
pub use config::{PackedConfig, Style, SubgroupPolicy};
pub use count::{count_packed, count_params, LayerCount, ParamCount};
pub use network::{repeat_and_rearrange, split_members, Body, EnsembleOutput, MemberInit, PackedNetwork};
pub use transform::{packify_layers, PackedLayout, SubgroupChoice, WidthAdjustment};
