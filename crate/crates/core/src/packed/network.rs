use serde::{Deserialize, Serialize};

use super::config::{PackedConfig, Style};
use super::transform::{packify_layers, PackedLayout};
use crate::error::{dim_err, input_err, Error, Result};
use crate::nn::{
    cross_entropy_with_softmax, network_slots, sgd_step, softmax_rows, InitScheme, LayerSpec, Network, Param,
    ParamStore, TrainConfig,
};
use crate::tensor::Tensor;

/// How member weights are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberInit {
    pub seed: u64,
    /// Each member draws from its own seed stream; otherwise all members start identical.
    pub distinct: bool,
    pub scheme: InitScheme,
}

impl MemberInit {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            distinct: true,
            scheme: InitScheme::HeNormal,
        }
    }

    pub fn member_seed(&self, m: usize) -> u64 {
        if self.distinct {
            self.seed.wrapping_add((m as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        } else {
            self.seed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Body {
    /// Style (a): one network per member.
    Sequential(Vec<Network>),
    /// Styles (b) and (c): a single grouped network.
    Packed(Network),
}

/// Outputs of one ensemble forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    /// `[M, B, N]` raw member outputs.
    pub member_logits: Tensor,
    /// `[M, B, N]` per-member softmax.
    pub member_probs: Tensor,
    /// `[B, N]` average of the member softmaxes.
    pub mean_probs: Tensor,
}

impl EnsembleOutput {
    pub fn num_members(&self) -> usize {
        self.member_probs.shape()[0]
    }

    /// `[B, N]` slice of member `m`.
    pub fn member(&self, m: usize) -> Result<Tensor> {
        let s = self.member_probs.shape();
        self.member_probs.slice_axis0(m, m + 1)?.into_reshaped(&[s[1], s[2]])
    }

    pub fn member_logit(&self, m: usize) -> Result<Tensor> {
        let s = self.member_logits.shape();
        self.member_logits.slice_axis0(m, m + 1)?.into_reshaped(&[s[1], s[2]])
    }
}

/// Stacks `copies` replicas of every sample's channels: `[B, C, ...] → [B, M·C, ...]`.
pub fn repeat_and_rearrange(batch: &Tensor, copies: usize) -> Result<Tensor> {
    if copies == 0 {
        return input_err("repeat count must be positive");
    }
    Tensor::concat_axis1(&vec![batch.clone(); copies])
}

/// Splits `[B, M·C, ...]` into `M` contiguous channel blocks.
pub fn split_members(x: &Tensor, parts: usize) -> Result<Vec<Tensor>> {
    if x.ndim() < 2 || parts == 0 || x.shape()[1] % parts != 0 {
        return dim_err(format!("cannot split shape {:?} into {parts} channel blocks", x.shape()));
    }
    let c = x.shape()[1] / parts;
    (0..parts).map(|m| x.slice_axis1(m * c, (m + 1) * c)).collect()
}

/// Stacks `[B, N]` tensors into `[M, B, N]`.
fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let shape = parts[0].shape().to_vec();
    let mut data = Vec::with_capacity(parts.len() * parts[0].len());
    for p in parts {
        if p.shape() != shape.as_slice() {
            return dim_err(format!("cannot stack {:?} with {:?}", p.shape(), shape));
        }
        data.extend_from_slice(p.data());
    }
    let mut full = vec![parts.len()];
    full.extend(shape);
    Tensor::new(full, data)
}

fn rows_of(t: &Tensor) -> usize {
    t.shape()[0]
}

/// Packed-Ensembles network for any of the three equivalent styles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedNetwork {
    config: PackedConfig,
    style: Style,
    outputs_per_member: usize,
    layout: PackedLayout,
    body: Body,
}

impl PackedNetwork {
    /// Packs `base`, initializes each member independently and installs it.
    ///
    /// Member weights depend only on `init`, never on `style`, so the three styles
    /// built from the same arguments compute the same function.
    pub fn new(
        base: &[LayerSpec],
        config: PackedConfig,
        style: Style,
        outputs_per_member: usize,
        init: MemberInit,
    ) -> Result<Self> {
        let layout = packify_layers(base, &config, style, outputs_per_member)?;
        let members = (0..config.num_estimators)
            .map(|m| Network::init(layout.member.clone(), init.member_seed(m), init.scheme))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(layout, config, style, outputs_per_member, members)
    }

    /// Builds the network from explicit member networks (each with `layout.member` architecture).
    pub fn from_members(
        layout: PackedLayout,
        config: PackedConfig,
        style: Style,
        outputs_per_member: usize,
        members: Vec<Network>,
    ) -> Result<Self> {
        if members.len() != config.num_estimators {
            return Err(Error::Config(format!(
                "{} member networks for M = {}",
                members.len(),
                config.num_estimators
            )));
        }
        for (m, net) in members.iter().enumerate() {
            if net.layers() != layout.member.as_slice() {
                return Err(Error::Config(format!("member {m} does not have the member architecture")));
            }
        }
        let body = match style {
            Style::Sequential => Body::Sequential(members),
            _ => Body::Packed(pack_members(&layout.packed, &members)?),
        };
        Ok(Self {
            config,
            style,
            outputs_per_member,
            layout,
            body,
        })
    }

    pub fn config(&self) -> &PackedConfig {
        &self.config
    }

    pub fn style(&self) -> Style {
        self.style
    }

    pub fn outputs_per_member(&self) -> usize {
        self.outputs_per_member
    }

    pub fn layout(&self) -> &PackedLayout {
        &self.layout
    }

    pub fn body(&self) -> &Body {
        &self.body
    }

    pub fn num_members(&self) -> usize {
        self.config.num_estimators
    }

    /// Total stored scalars (including running statistics).
    pub fn num_scalars(&self) -> usize {
        let count = |n: &Network| n.params().iter().map(|p| p.value.len()).sum::<usize>();
        match &self.body {
            Body::Sequential(v) => v.iter().map(count).sum(),
            Body::Packed(n) => count(n),
        }
    }

    /// Raw per-member outputs `[B, N]`, in eval mode.
    pub fn member_outputs(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        match &self.body {
            Body::Sequential(nets) => nets.iter().map(|n| n.predict(input)).collect(),
            Body::Packed(net) => split_members(&net.predict(input)?, self.num_members()),
        }
    }

    /// Eval-mode ensemble inference: per-member softmax and their mean.
    pub fn ensemble_forward(&self, input: &Tensor) -> Result<EnsembleOutput> {
        let logits = self.member_outputs(input)?;
        let probs = logits.iter().map(softmax_rows).collect::<Result<Vec<_>>>()?;
        let mut mean = probs[0].clone();
        for p in &probs[1..] {
            mean.add_assign(p)?;
        }
        let mean = mean.scale(1.0 / probs.len() as f64);
        Ok(EnsembleOutput {
            member_logits: stack(&logits)?,
            member_probs: stack(&probs)?,
            mean_probs: mean,
        })
    }

    /// Member `m` as a standalone dense network.
    pub fn extract_subnetwork(&self, m: usize) -> Result<Network> {
        let big_m = self.num_members();
        if m >= big_m {
            return input_err(format!("member index {m} out of range for M = {big_m}"));
        }
        match &self.body {
            Body::Sequential(nets) => Ok(nets[m].clone()),
            Body::Packed(net) => {
                let slots = network_slots(&self.layout.member);
                let params = slots
                    .into_iter()
                    .zip(net.params().iter())
                    .map(|(slot, p)| {
                        let rows = rows_of(&p.value) / big_m;
                        Ok(Param {
                            name: slot.name,
                            kind: slot.kind,
                            value: p.value.slice_axis0(m * rows, (m + 1) * rows)?,
                            velocity: p.velocity.slice_axis0(m * rows, (m + 1) * rows)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Network::new(self.layout.member.clone(), ParamStore::new(params))
            }
        }
    }

    /// Overwrites member `m` with `member` (which must have the member architecture).
    pub fn insert_member(&mut self, m: usize, member: &Network) -> Result<()> {
        let big_m = self.num_members();
        if m >= big_m {
            return input_err(format!("member index {m} out of range for M = {big_m}"));
        }
        if member.layers() != self.layout.member.as_slice() {
            return Err(Error::Config("inserted network does not have the member architecture".into()));
        }
        match &mut self.body {
            Body::Sequential(nets) => nets[m] = member.clone(),
            Body::Packed(net) => {
                for (dst, src) in net.params_mut().iter_mut().zip(member.params().iter()) {
                    let rows = rows_of(&src.value);
                    dst.value.assign_axis0(m * rows, &src.value)?;
                    dst.velocity.assign_axis0(m * rows, &src.velocity)?;
                }
            }
        }
        Ok(())
    }

    /// Re-realizes the same members under another style.
    pub fn to_style(&self, style: Style) -> Result<Self> {
        let layout = packify_layers(&self.layout.base, &self.config, style, self.outputs_per_member)?;
        let members = (0..self.num_members())
            .map(|m| self.extract_subnetwork(m))
            .collect::<Result<Vec<_>>>()?;
        Self::from_members(layout, self.config, style, self.outputs_per_member, members)
    }

    /// One optimization step with a user-supplied per-member loss.
    ///
    /// `inputs` holds either one shared batch or, for style (a) only, one batch per member.
    /// `loss(m, outputs)` returns member `m`'s loss and its gradient with respect to
    /// `outputs` (`[B, N]`). The step minimizes the sum of member losses, which is returned.
    pub fn train_step_with(
        &mut self,
        inputs: &[Tensor],
        config: &TrainConfig,
        epoch: usize,
        mut loss: impl FnMut(usize, &Tensor) -> Result<(f64, Tensor)>,
    ) -> Result<f64> {
        let big_m = self.num_members();
        let distinct = match inputs.len() {
            1 => false,
            n if n == big_m && self.style == Style::Sequential => true,
            n => {
                return input_err(format!(
                    "{n} input batches given; expected 1{}",
                    if self.style == Style::Sequential { format!(" or {big_m}") } else { String::new() }
                ))
            }
        };
        let mut total = 0.0;
        match &mut self.body {
            Body::Sequential(nets) => {
                for (m, net) in nets.iter_mut().enumerate() {
                    let x = &inputs[if distinct { m } else { 0 }];
                    let (out, tape) = net.forward(x, true)?;
                    let (l, g) = loss(m, &out)?;
                    total += l;
                    let grads = net.backward(&tape, &g)?;
                    sgd_step(net.params_mut(), &grads.params, config, epoch)?;
                    net.update_running_stats(&tape);
                }
            }
            Body::Packed(net) => {
                let (out, tape) = net.forward(&inputs[0], true)?;
                let mut grads = Vec::with_capacity(big_m);
                for (m, slice) in split_members(&out, big_m)?.iter().enumerate() {
                    let (l, g) = loss(m, slice)?;
                    total += l;
                    grads.push(g);
                }
                let g = Tensor::concat_axis1(&grads)?;
                let grads = net.backward(&tape, &g)?;
                sgd_step(net.params_mut(), &grads.params, config, epoch)?;
                net.update_running_stats(&tape);
            }
        }
        Ok(total)
    }

    /// Cross-entropy step; `labels` is one slice per input batch.
    pub fn train_step(
        &mut self,
        inputs: &[Tensor],
        labels: &[&[usize]],
        config: &TrainConfig,
        epoch: usize,
    ) -> Result<f64> {
        if labels.len() != inputs.len() {
            return input_err(format!("{} label sets for {} batches", labels.len(), inputs.len()));
        }
        let shared = labels.len() == 1;
        self.train_step_with(inputs, config, epoch, |m, out| {
            cross_entropy_with_softmax(out, labels[if shared { 0 } else { m }])
        })
    }
}

/// Concatenates member parameters along axis 0 into the packed architecture's store.
fn pack_members(packed: &[LayerSpec], members: &[Network]) -> Result<Network> {
    let slots = network_slots(packed);
    let mut params = Vec::with_capacity(slots.len());
    for (i, slot) in slots.into_iter().enumerate() {
        let mut value = Vec::new();
        let mut velocity = Vec::new();
        for net in members {
            let p = net.params().get(i);
            value.extend_from_slice(p.value.data());
            velocity.extend_from_slice(p.velocity.data());
        }
        params.push(Param {
            value: Tensor::new(slot.shape.clone(), value)?,
            velocity: Tensor::new(slot.shape.clone(), velocity)?,
            name: slot.name,
            kind: slot.kind,
        });
    }
    Network::new(packed.to_vec(), ParamStore::new(params))
}
