//! Forward evaluation with an activation tape, and reverse-mode gradients.

use serde::{Deserialize, Serialize};

use super::params::{init_params, network_slots, InitScheme, ParamKind, ParamStore};
use super::spec::{infer_shapes, ConvSpec, FeatureShape, LayerSpec};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{grouped_conv2d, grouped_conv2d_backward, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// A layer list bound to its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkRepr", try_from = "NetworkRepr")]
pub struct Network {
    layers: Vec<LayerSpec>,
    params: ParamStore,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRepr {
    layers: Vec<LayerSpec>,
    params: ParamStore,
}

impl From<Network> for NetworkRepr {
    fn from(n: Network) -> Self {
        Self { layers: n.layers, params: n.params }
    }
}

impl TryFrom<NetworkRepr> for Network {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        Network::new(r.layers, r.params)
    }
}

#[derive(Debug, Clone)]
struct BnRecord {
    normalized: Tensor,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
    training: bool,
}

#[derive(Debug, Clone)]
enum Record {
    Conv { input: Tensor },
    BatchNorm(BnRecord),
    ReLU { input: Tensor },
    MaxPool { argmax: Vec<usize>, in_shape: Vec<usize> },
    AvgPool { in_shape: Vec<usize> },
    GlobalAvgPool { in_shape: Vec<usize> },
    Reshape { in_shape: Vec<usize> },
    ResidualStart,
    ResidualEnd { skip_input: Option<Tensor>, bn: Option<BnRecord> },
    Repeat { channels: usize },
}

/// What `backward` needs from a training-mode forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    records: Vec<Record>,
    output_shape: Vec<usize>,
}

impl Tape {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Parameter gradients aligned with the [`ParamStore`] (`None` for running statistics),
/// plus the gradient with respect to the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Option<Tensor>>,
    pub input: Tensor,
}

fn bn_forward(
    x: &Tensor,
    scale: &[f64],
    shift: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    training: bool,
) -> Result<(Tensor, BnRecord)> {
    let (b, c, h, w) = x.dims4()?;
    if scale.len() != c {
        return dim_err(format!("batch norm over {} channels applied to {c} channels", scale.len()));
    }
    let hw = h * w;
    let n = (b * hw) as f64;
    let xs = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    let mut unbiased = vec![0.0; c];
    if training {
        for ch in 0..c {
            let mut s = 0.0;
            for i in 0..b {
                s += xs[(i * c + ch) * hw..][..hw].iter().sum::<f64>();
            }
            let m = s / n;
            let mut ss = 0.0;
            for i in 0..b {
                ss += xs[(i * c + ch) * hw..][..hw].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = ss / n;
            unbiased[ch] = if n > 1.0 { ss / (n - 1.0) } else { ss };
        }
    } else {
        mean.copy_from_slice(running_mean);
        var.copy_from_slice(running_var);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for i in 0..b {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for k in base..base + hw {
                let z = (xs[k] - mean[ch]) * inv_std[ch];
                normalized[k] = z;
                out[k] = scale[ch] * z + shift[ch];
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnRecord {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
            batch_mean: mean,
            batch_var_unbiased: unbiased,
            training,
        },
    ))
}

/// Returns `(d input, d scale, d shift)`.
fn bn_backward(rec: &BnRecord, dy: &Tensor, scale: &[f64]) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let n = (b * hw) as f64;
    let g = dy.data();
    let xh = rec.normalized.data();
    let mut dscale = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    for i in 0..b {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for k in base..base + hw {
                dshift[ch] += g[k];
                dscale[ch] += g[k] * xh[k];
            }
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for i in 0..b {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            let a = scale[ch] * rec.inv_std[ch];
            for k in base..base + hw {
                dx[k] = if rec.training {
                    a * (g[k] - dshift[ch] / n - xh[k] * dscale[ch] / n)
                } else {
                    a * g[k]
                };
            }
        }
    }
    Ok((
        Tensor::new(dy.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dscale)?,
        Tensor::new(vec![c], dshift)?,
    ))
}

fn add_bias(y: &mut Tensor, bias: &[f64]) -> Result<()> {
    let (b, c, h, w) = y.dims4()?;
    let hw = h * w;
    let d = y.data_mut();
    for i in 0..b {
        for ch in 0..c {
            for v in &mut d[(i * c + ch) * hw..][..hw] {
                *v += bias[ch];
            }
        }
    }
    Ok(())
}

fn bias_grad(dy: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = dy.dims4()?;
    let hw = h * w;
    let mut g = vec![0.0; c];
    for i in 0..b {
        for (ch, gc) in g.iter_mut().enumerate() {
            *gc += dy.data()[(i * c + ch) * hw..][..hw].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![c], g)
}

fn pool_forward(x: &Tensor, k: usize, s: usize, max: bool) -> Result<(Tensor, Vec<usize>)> {
    let (b, c, h, w) = x.dims4()?;
    if h < k || w < k {
        return dim_err(format!("pool window {k} larger than {h}x{w}"));
    }
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let xs = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::new();
    let inv = 1.0 / (k * k) as f64;
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        let idx = base + (oy * s + i) * w + ox * s + j;
                        let v = xs[idx];
                        acc += v;
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                if max {
                    out.push(best);
                    argmax.push(best_idx);
                } else {
                    out.push(acc * inv);
                }
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, argmax))
}

fn avgpool_backward(dy: &Tensor, in_shape: &[usize], k: usize, s: usize) -> Result<Tensor> {
    let (b, c, oh, ow) = dy.dims4()?;
    let (h, w) = (in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    let g = dy.data();
    let inv = 1.0 / (k * k) as f64;
    for plane in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let v = g[(plane * oh + oy) * ow + ox] * inv;
                for i in 0..k {
                    for j in 0..k {
                        d[plane * h * w + (oy * s + i) * w + ox * s + j] += v;
                    }
                }
            }
        }
    }
    Ok(dx)
}

fn as_rank4(input: &Tensor) -> Result<Tensor> {
    match input.shape() {
        [_, _, _, _] => Ok(input.clone()),
        [b, f] => input.reshape(&[*b, *f, 1, 1]),
        other => dim_err(format!("network input must be rank 2 or 4, got shape {other:?}")),
    }
}

fn flatten_rank2(t: Tensor) -> Result<Tensor> {
    let b = t.shape()[0];
    let f = t.len() / b;
    t.into_reshaped(&[b, f])
}

impl Network {
    pub fn new(layers: Vec<LayerSpec>, params: ParamStore) -> Result<Self> {
        let slots = network_slots(&layers);
        if slots.len() != params.len() {
            return Err(Error::Config(format!(
                "architecture needs {} parameter tensors, store has {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.iter().zip(params.iter()) {
            if slot.shape != p.value.shape() || slot.kind != p.kind {
                return Err(Error::Config(format!(
                    "parameter {} expected {:?} {:?}, found {:?} {:?}",
                    slot.name,
                    slot.kind,
                    slot.shape,
                    p.kind,
                    p.value.shape()
                )));
            }
        }
        let mut net = Self {
            layers,
            params,
            offsets: Vec::new(),
        };
        net.rebuild_offsets();
        Ok(net)
    }

    pub fn init(layers: Vec<LayerSpec>, seed: u64, scheme: InitScheme) -> Result<Self> {
        let params = init_params(&layers, seed, scheme);
        Self::new(layers, params)
    }

    fn rebuild_offsets(&mut self) {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut next = 0;
        for (j, l) in self.layers.iter().enumerate() {
            offsets.push(next);
            next += super::params::layer_slots(j, l).len();
        }
        self.offsets = offsets;
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Index of the first parameter tensor owned by layer `j`.
    pub fn param_offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    fn p(&self, j: usize, k: usize) -> &[f64] {
        self.params.value(self.offsets[j] + k).data()
    }

    fn conv_forward(&self, x: &Tensor, c: &ConvSpec, first: usize) -> Result<Tensor> {
        let w = self.params.value(first);
        let mut y = grouped_conv2d(x, w, c.groups, c.stride, c.padding)?;
        if c.bias {
            add_bias(&mut y, self.params.value(first + 1).data())?;
        }
        Ok(y)
    }

    fn bn_at(&self, first: usize, x: &Tensor, training: bool) -> Result<(Tensor, BnRecord)> {
        bn_forward(
            x,
            self.params.value(first).data(),
            self.params.value(first + 1).data(),
            self.params.value(first + 2).data(),
            self.params.value(first + 3).data(),
            training,
        )
    }

    /// Runs the network. With `training`, batch norm uses batch statistics and the
    /// returned tape can be passed to [`Network::backward`]; otherwise the tape is empty.
    pub fn forward(&self, input: &Tensor, training: bool) -> Result<(Tensor, Tape)> {
        let mut x = as_rank4(input)?;
        let (_, c, h, w) = x.dims4()?;
        infer_shapes(&self.layers, FeatureShape::new(c, h, w))?;

        let mut records = Vec::with_capacity(if training { self.layers.len() } else { 0 });
        let mut stack: Vec<Tensor> = Vec::new();
        for (j, layer) in self.layers.iter().enumerate() {
            let at = |e: Error| match e {
                Error::Dimension(m) => Error::Dimension(format!("layer {j}: {m}")),
                other => other,
            };
            let first = self.offsets[j];
            let (y, rec) = match layer {
                LayerSpec::Conv(c) => (self.conv_forward(&x, c, first).map_err(at)?, Record::Conv { input: x }),
                LayerSpec::Linear(l) => {
                    (self.conv_forward(&x, &l.as_conv(), first).map_err(at)?, Record::Conv { input: x })
                }
                LayerSpec::BatchNorm { .. } => {
                    let (y, r) = self.bn_at(first, &x, training).map_err(at)?;
                    (y, Record::BatchNorm(r))
                }
                LayerSpec::ReLU => (x.map(|v| v.max(0.0)), Record::ReLU { input: x }),
                LayerSpec::MaxPool { kernel, stride } => {
                    let (y, argmax) = pool_forward(&x, *kernel, *stride, true).map_err(at)?;
                    (y, Record::MaxPool { argmax, in_shape: x.shape().to_vec() })
                }
                LayerSpec::AvgPool { kernel, stride } => {
                    let (y, _) = pool_forward(&x, *kernel, *stride, false).map_err(at)?;
                    (y, Record::AvgPool { in_shape: x.shape().to_vec() })
                }
                LayerSpec::GlobalAvgPool => {
                    let (b, c, h, w) = x.dims4()?;
                    let hw = h * w;
                    let data = (0..b * c)
                        .map(|i| x.data()[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64)
                        .collect();
                    (
                        Tensor::new(vec![b, c, 1, 1], data)?,
                        Record::GlobalAvgPool { in_shape: x.shape().to_vec() },
                    )
                }
                LayerSpec::Flatten => {
                    let in_shape = x.shape().to_vec();
                    let b = in_shape[0];
                    let f = x.len() / b;
                    (x.into_reshaped(&[b, f, 1, 1])?, Record::Reshape { in_shape })
                }
                LayerSpec::ResidualStart => {
                    stack.push(x.clone());
                    (x, Record::ResidualStart)
                }
                LayerSpec::ResidualEnd { shortcut } => {
                    let skip = stack
                        .pop()
                        .ok_or_else(|| Error::State(format!("layer {j}: residual end without start")))?;
                    match shortcut {
                        None => (x.add(&skip).map_err(at)?, Record::ResidualEnd { skip_input: None, bn: None }),
                        Some(sc) => {
                            let proj = self.conv_forward(&skip, &sc.as_conv(), first).map_err(at)?;
                            let (proj, bn) = self.bn_at(first + 1, &proj, training).map_err(at)?;
                            (
                                x.add(&proj).map_err(at)?,
                                Record::ResidualEnd { skip_input: Some(skip), bn: Some(bn) },
                            )
                        }
                    }
                }
                LayerSpec::Repeat { copies } => {
                    let (_, c, _, _) = x.dims4()?;
                    let parts = vec![x; *copies];
                    (Tensor::concat_axis1(&parts)?, Record::Repeat { channels: c })
                }
            };
            if training {
                records.push(rec);
            }
            x = y;
        }
        let output_shape = x.shape().to_vec();
        Ok((flatten_rank2(x)?, Tape { records, output_shape }))
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input, false)?.0)
    }

    /// Back-propagates `grad_output` (shaped like the forward output) through the tape.
    pub fn backward(&self, tape: &Tape, grad_output: &Tensor) -> Result<Gradients> {
        if tape.records.len() != self.layers.len() || self.layers.is_empty() {
            return Err(Error::State(
                "backward needs the tape of a training-mode forward pass".into(),
            ));
        }
        let expected: usize = tape.output_shape.iter().product();
        if grad_output.len() != expected || grad_output.shape()[0] != tape.output_shape[0] {
            return dim_err(format!(
                "output gradient shape {:?} does not match forward output {:?}",
                grad_output.shape(),
                tape.output_shape
            ));
        }
        let mut grads: Vec<Option<Tensor>> = self
            .params
            .iter()
            .map(|p| p.kind.trainable().then(|| Tensor::zeros(p.value.shape())))
            .collect();
        let mut g = grad_output.reshape(&tape.output_shape)?;
        let mut skip_grads: Vec<Tensor> = Vec::new();

        for j in (0..self.layers.len()).rev() {
            let first = self.offsets[j];
            g = match (&self.layers[j], &tape.records[j]) {
                (LayerSpec::Conv(c), Record::Conv { input }) => self.conv_backward(c, first, input, &g, &mut grads)?,
                (LayerSpec::Linear(l), Record::Conv { input }) => {
                    self.conv_backward(&l.as_conv(), first, input, &g, &mut grads)?
                }
                (LayerSpec::BatchNorm { .. }, Record::BatchNorm(rec)) => {
                    let (dx, ds, db) = bn_backward(rec, &g, self.p(j, 0))?;
                    grads[first] = Some(ds);
                    grads[first + 1] = Some(db);
                    dx
                }
                (LayerSpec::ReLU, Record::ReLU { input }) => {
                    input.zip_with(&g, "relu backward", |x, d| if x > 0.0 { d } else { 0.0 })?
                }
                (LayerSpec::MaxPool { .. }, Record::MaxPool { argmax, in_shape }) => {
                    let mut dx = Tensor::zeros(in_shape);
                    let d = dx.data_mut();
                    for (&idx, &v) in argmax.iter().zip(g.data()) {
                        d[idx] += v;
                    }
                    dx
                }
                (LayerSpec::AvgPool { kernel, stride }, Record::AvgPool { in_shape }) => {
                    avgpool_backward(&g, in_shape, *kernel, *stride)?
                }
                (LayerSpec::GlobalAvgPool, Record::GlobalAvgPool { in_shape }) => {
                    let hw = in_shape[2] * in_shape[3];
                    let inv = 1.0 / hw as f64;
                    let gd = g.data();
                    Tensor::from_fn(in_shape, |i| gd[i / hw] * inv)
                }
                (LayerSpec::Flatten, Record::Reshape { in_shape }) => g.into_reshaped(in_shape)?,
                (LayerSpec::ResidualEnd { shortcut }, Record::ResidualEnd { skip_input, bn }) => {
                    let skip_grad = match (shortcut, skip_input, bn) {
                        (None, _, _) => g.clone(),
                        (Some(sc), Some(skip_in), Some(bn_rec)) => {
                            let bn_first = first + 1;
                            let (dproj, ds, db) = bn_backward(bn_rec, &g, self.params.value(bn_first).data())?;
                            grads[bn_first] = Some(ds);
                            grads[bn_first + 1] = Some(db);
                            self.conv_backward(&sc.as_conv(), first, skip_in, &dproj, &mut grads)?
                        }
                        _ => return Err(Error::State(format!("layer {j}: corrupt residual record"))),
                    };
                    skip_grads.push(skip_grad);
                    g
                }
                (LayerSpec::ResidualStart, Record::ResidualStart) => {
                    let skip = skip_grads
                        .pop()
                        .ok_or_else(|| Error::State(format!("layer {j}: unmatched residual start")))?;
                    g.add(&skip)?
                }
                (LayerSpec::Repeat { copies }, Record::Repeat { channels }) => {
                    let mut acc = g.slice_axis1(0, *channels)?;
                    for k in 1..*copies {
                        acc.add_assign(&g.slice_axis1(k * channels, (k + 1) * channels)?)?;
                    }
                    acc
                }
                _ => return Err(Error::State(format!("layer {j}: tape does not match the network"))),
            };
        }
        Ok(Gradients { params: grads, input: g })
    }

    fn conv_backward(
        &self,
        c: &ConvSpec,
        first: usize,
        input: &Tensor,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<Tensor> {
        let cg = grouped_conv2d_backward(input, self.params.value(first), dy, c.groups, c.stride, c.padding)?;
        grads[first] = Some(cg.weight);
        if c.bias {
            grads[first + 1] = Some(bias_grad(dy)?);
        }
        Ok(cg.input)
    }

    /// Folds the batch statistics recorded in a training tape into the running averages.
    pub fn update_running_stats(&mut self, tape: &Tape) {
        let mut updates = Vec::new();
        for (j, rec) in tape.records.iter().enumerate() {
            let (first, bn) = match (&self.layers[j], rec) {
                (LayerSpec::BatchNorm { .. }, Record::BatchNorm(bn)) => (self.offsets[j], bn),
                (LayerSpec::ResidualEnd { shortcut: Some(_) }, Record::ResidualEnd { bn: Some(bn), .. }) => {
                    (self.offsets[j] + 1, bn)
                }
                _ => continue,
            };
            if bn.training {
                updates.push((first, bn.batch_mean.clone(), bn.batch_var_unbiased.clone()));
            }
        }
        for (first, mean, var) in updates {
            for (slot, batch) in [(first + 2, mean), (first + 3, var)] {
                let p = self.params.get_mut(slot);
                debug_assert!(matches!(p.kind, ParamKind::RunningMean | ParamKind::RunningVar));
                for (r, b) in p.value.data_mut().iter_mut().zip(batch) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
                }
            }
        }
    }
}
