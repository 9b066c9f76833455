//! Rewrites a single-network layer list into its packed form.
//!
//! Every hidden width `C` becomes `alpha·C` (rounded up to a multiple of `M·gamma`)
//! and every hidden conv/linear layer gets `M·gamma` groups, so that subnetwork `m`
//! owns the contiguous channel block `[m·W/M, (m+1)·W/M)` of each feature map.
//! Raw input channels are never widened. The first parameterized layer and the
//! classifier never receive subgroups; the classifier emits `M·N` outputs in `M` groups.

use serde::{Deserialize, Serialize};

use super::config::{PackedConfig, Style, SubgroupPolicy};
use crate::error::{config_err, Error, Result};
use crate::nn::{ConvSpec, LayerSpec, LinearSpec, Shortcut};

/// Nominal (`alpha·C`) against realized width of one widened layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthAdjustment {
    pub layer: usize,
    pub nominal: usize,
    pub actual: usize,
}

/// Subgroup count realized for one hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupChoice {
    pub layer: usize,
    pub gamma: usize,
}

/// Architecture of one subnetwork and of the packed network for a given style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedLayout {
    /// The unpacked architecture this layout was derived from.
    pub base: Vec<LayerSpec>,
    pub member: Vec<LayerSpec>,
    /// For [`Style::Sequential`] this equals `member` (it is run `M` times).
    pub packed: Vec<LayerSpec>,
    pub widths: Vec<WidthAdjustment>,
    pub subgroups: Vec<SubgroupChoice>,
}

#[derive(Clone, Copy)]
enum Role {
    First,
    Hidden,
    Last,
    /// A network with a single parameterized layer.
    Only,
}

struct Walker<'a> {
    cfg: &'a PackedConfig,
    style: Style,
    outputs_per_member: usize,
    widths: Vec<WidthAdjustment>,
    subgroups: Vec<SubgroupChoice>,
}

impl Walker<'_> {
    fn m(&self) -> usize {
        self.cfg.num_estimators
    }

    /// Picks the subgroup count for a hidden layer with `packed_in`/`packed_out` channels.
    fn choose_gamma(&mut self, j: usize, packed_in: usize, packed_out: usize, wants_subgroups: bool) -> Result<usize> {
        let m = self.m();
        let min = self.cfg.min_channels_per_group;
        let top = if wants_subgroups { self.cfg.gamma } else { 1 };
        let fits = |g: usize| packed_in % (m * g) == 0 && packed_out % (m * g) == 0 && packed_in / (m * g) >= min;
        let chosen = match self.cfg.policy {
            SubgroupPolicy::Strict => {
                if !fits(top) {
                    return config_err(format!(
                        "layer {j}: {packed_in} channels in {} groups leaves {} per group, below the minimum {min}",
                        m * top,
                        packed_in / (m * top)
                    ));
                }
                top
            }
            // Falls back to one group per member even if that stays below the minimum.
            SubgroupPolicy::Reduce => match (1..=top).rev().find(|&g| fits(g)) {
                Some(g) => g,
                None if packed_in % m == 0 && packed_out % m == 0 => 1,
                None => return config_err(format!("layer {j}: {packed_in} channels do not split over {m} members")),
            },
        };
        if wants_subgroups {
            self.subgroups.push(SubgroupChoice { layer: j, gamma: chosen });
        }
        Ok(chosen)
    }

    /// Returns `(packed, member)` specs of one conv-like layer.
    fn conv_like(
        &mut self,
        j: usize,
        c: &ConvSpec,
        role: Role,
        packed_in: usize,
        raw_in: usize,
    ) -> Result<(ConvSpec, ConvSpec)> {
        let m = self.m();
        if c.groups != 1 {
            return config_err(format!("layer {j}: base layers must be ungrouped, found groups={}", c.groups));
        }
        let cfg = self.cfg;
        let hidden_out = || {
            let actual = cfg.packed_width(c.out_channels);
            (actual, WidthAdjustment { layer: j, nominal: cfg.alpha * c.out_channels, actual })
        };
        let (packed_in, packed_out, packed_groups, member_in, member_out, member_groups) = match role {
            Role::First | Role::Only => {
                let out = if matches!(role, Role::Only) {
                    m * self.outputs_per_member
                } else {
                    let (actual, adj) = hidden_out();
                    self.widths.push(adj);
                    actual
                };
                match self.style {
                    Style::Rearrange => (m * raw_in, out, m, raw_in, out / m, 1),
                    Style::FullFirstConv | Style::Sequential => (raw_in, out, 1, raw_in, out / m, 1),
                }
            }
            Role::Hidden => {
                let (out, adj) = hidden_out();
                self.widths.push(adj);
                let g = self.choose_gamma(j, packed_in, out, c.subgroups)?;
                (packed_in, out, m * g, packed_in / m, out / m, g)
            }
            Role::Last => {
                let out = m * self.outputs_per_member;
                let short = packed_in / m < self.cfg.min_channels_per_group && self.cfg.policy == SubgroupPolicy::Strict;
                if packed_in % m != 0 || short {
                    return config_err(format!(
                        "layer {j}: classifier input of {packed_in} channels cannot give {} per member",
                        self.cfg.min_channels_per_group
                    ));
                }
                (packed_in, out, m, packed_in / m, self.outputs_per_member, 1)
            }
        };
        let packed = ConvSpec {
            in_channels: packed_in,
            out_channels: packed_out,
            groups: packed_groups,
            ..*c
        };
        let member = ConvSpec {
            in_channels: member_in,
            out_channels: member_out,
            groups: member_groups,
            ..*c
        };
        Ok((packed, member))
    }
}

fn to_linear(c: ConvSpec) -> LayerSpec {
    LayerSpec::Linear(LinearSpec {
        in_features: c.in_channels,
        out_features: c.out_channels,
        groups: c.groups,
        bias: c.bias,
        subgroups: c.subgroups,
    })
}


fn out_width(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Conv(c) => c.out_channels,
        LayerSpec::Linear(l) => l.out_features,
        _ => unreachable!("not a parameterized layer"),
    }
}

/// Builds the member and packed architectures of `base` for `config` and `style`.
///
/// `outputs_per_member` is the output width of one subnetwork (classes, or 2 for a
/// Gaussian regression head). Base layers must be ungrouped.
pub fn packify_layers(
    base: &[LayerSpec],
    config: &PackedConfig,
    style: Style,
    outputs_per_member: usize,
) -> Result<PackedLayout> {
    config.validate()?;
    let param_layers: Vec<usize> = base
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, LayerSpec::Conv(_) | LayerSpec::Linear(_)))
        .map(|(j, _)| j)
        .collect();
    let (first, last) = match (param_layers.first(), param_layers.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => return config_err("base architecture has no conv or linear layer"),
    };
    if out_width(&base[last]) != outputs_per_member {
        return config_err(format!(
            "base classifier emits {} outputs, expected {outputs_per_member}",
            out_width(&base[last])
        ));
    }

    let m = config.num_estimators;
    let mut w = Walker {
        cfg: config,
        style,
        outputs_per_member,
        widths: Vec::new(),
        subgroups: Vec::new(),
    };
    let mut member = Vec::with_capacity(base.len());
    let mut packed = Vec::with_capacity(base.len() + 1);
    if style == Style::Rearrange {
        packed.push(LayerSpec::Repeat { copies: m });
    }

    // (base, packed) channel counts of the current activation; None before the first layer.
    let mut ch: Option<(usize, usize)> = None;
    // Channel counts just before a flatten, used to rescale the next linear layer.
    let mut flat_from: Option<(usize, usize)> = None;
    let mut skips: Vec<usize> = Vec::new();

    for (j, layer) in base.iter().enumerate() {
        match layer {
            LayerSpec::Conv(_) | LayerSpec::Linear(_) => {
                let (c, is_linear) = match layer {
                    LayerSpec::Conv(c) => (*c, false),
                    LayerSpec::Linear(l) => (l.as_conv(), true),
                    _ => unreachable!(),
                };
                let role = match (j == first, j == last) {
                    (true, true) => Role::Only,
                    (true, false) => Role::First,
                    (false, true) => Role::Last,
                    _ => Role::Hidden,
                };
                let packed_in = match (ch, flat_from.take()) {
                    (None, _) => c.in_channels,
                    (Some(_), Some((b, p))) if is_linear => {
                        if c.in_channels % b != 0 {
                            return config_err(format!(
                                "layer {j}: {} flattened features are not a multiple of {b} channels",
                                c.in_channels
                            ));
                        }
                        p * (c.in_channels / b)
                    }
                    (Some((b, p)), _) => {
                        if b != c.in_channels {
                            return config_err(format!(
                                "layer {j}: expects {} inputs, previous layer gives {b}",
                                c.in_channels
                            ));
                        }
                        p
                    }
                };
                let (p, mspec) = w.conv_like(j, &c, role, packed_in, c.in_channels)?;
                ch = Some((c.out_channels, p.out_channels));
                if is_linear {
                    packed.push(to_linear(p));
                    member.push(to_linear(mspec));
                } else {
                    packed.push(LayerSpec::Conv(p));
                    member.push(LayerSpec::Conv(mspec));
                }
            }
            LayerSpec::BatchNorm { channels } => {
                let Some((b, p)) = ch else {
                    return config_err(format!("layer {j}: batch norm before the first layer cannot be packed"));
                };
                if b != *channels {
                    return config_err(format!("layer {j}: batch norm over {channels} channels after {b}"));
                }
                packed.push(LayerSpec::BatchNorm { channels: p });
                member.push(LayerSpec::BatchNorm { channels: p / m });
            }
            LayerSpec::Flatten => {
                flat_from = ch;
                packed.push(*layer);
                member.push(*layer);
            }
            LayerSpec::ResidualStart => {
                let Some((_, p)) = ch else {
                    return config_err(format!("layer {j}: residual block before the first layer cannot be packed"));
                };
                skips.push(p);
                packed.push(*layer);
                member.push(*layer);
            }
            LayerSpec::ResidualEnd { shortcut } => {
                let skip = skips
                    .pop()
                    .ok_or_else(|| Error::Config(format!("layer {j}: residual end without start")))?;
                match shortcut {
                    None => {
                        packed.push(*layer);
                        member.push(*layer);
                    }
                    Some(sc) => {
                        if sc.groups != 1 {
                            return config_err(format!("layer {j}: base shortcut must be ungrouped"));
                        }
                        let out = config.packed_width(sc.out_channels);
                        w.widths.push(WidthAdjustment { layer: j, nominal: config.alpha * sc.out_channels, actual: out });
                        let g = w.choose_gamma(j, skip, out, sc.subgroups)?;
                        packed.push(LayerSpec::ResidualEnd {
                            shortcut: Some(Shortcut { in_channels: skip, out_channels: out, groups: m * g, ..*sc }),
                        });
                        member.push(LayerSpec::ResidualEnd {
                            shortcut: Some(Shortcut { in_channels: skip / m, out_channels: out / m, groups: g, ..*sc }),
                        });
                    }
                }
            }
            LayerSpec::Repeat { .. } => {
                return config_err(format!("layer {j}: base architectures may not contain repeat layers"));
            }
            LayerSpec::ReLU | LayerSpec::MaxPool { .. } | LayerSpec::AvgPool { .. } | LayerSpec::GlobalAvgPool => {
                packed.push(*layer);
                member.push(*layer);
            }
        }
    }
    if style == Style::Sequential {
        packed = member.clone();
    }
    Ok(PackedLayout {
        base: base.to_vec(),
        member,
        packed,
        widths: w.widths,
        subgroups: w.subgroups,
    })
}
