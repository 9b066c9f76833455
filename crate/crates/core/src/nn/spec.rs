//! Declarative layer lists and their line-oriented text form.
//!
//! One layer per line, `#` starts a comment:
//!
//! ```text
//! conv in=3 out=64 k=3 s=1 p=1 g=1
//! bn c=64
//! relu
//! res_start
//! conv in=64 out=64 k=3 s=1 p=1 g=1 sg=0
//! bn c=64
//! relu
//! conv in=64 out=64 k=3 s=1 p=1 g=1
//! bn c=64
//! res_end
//! relu
//! gap
//! flatten
//! linear in=64 out=10 g=1 bias=1
//! ```
//!
//! `sg=0` marks a layer that keeps only the member grouping when packed (no subgroups).
//! `res_end in=64 out=128 s=2 g=1` closes a block with a 1x1 conv + batch-norm projection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::ConvShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
    /// Whether packing may split this layer further into subgroups.
    pub subgroups: bool,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups: 1,
            bias: false,
            subgroups: true,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn shape(&self) -> ConvShape {
        ConvShape {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
            groups: self.groups,
        }
    }
}

/// Dense layer, executed as a 1x1 convolution on `[B, F, 1, 1]` activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub in_features: usize,
    pub out_features: usize,
    pub groups: usize,
    pub bias: bool,
    pub subgroups: bool,
}

impl LinearSpec {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            groups: 1,
            bias: true,
            subgroups: true,
        }
    }

    pub fn as_conv(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_features,
            out_channels: self.out_features,
            kernel: 1,
            stride: 1,
            padding: 0,
            groups: self.groups,
            bias: self.bias,
            subgroups: self.subgroups,
        }
    }
}

/// Projection on the skip path of a residual block: 1x1 conv followed by batch norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortcut {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub groups: usize,
    pub subgroups: bool,
}

impl Shortcut {
    pub fn as_conv(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: 1,
            stride: self.stride,
            padding: 0,
            groups: self.groups,
            bias: false,
            subgroups: self.subgroups,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Linear(LinearSpec),
    BatchNorm { channels: usize },
    ReLU,
    MaxPool { kernel: usize, stride: usize },
    AvgPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    ResidualStart,
    ResidualEnd { shortcut: Option<Shortcut> },
    /// Stacks `copies` replicas of the input along the channel axis.
    Repeat { copies: usize },
}

/// Channel/spatial size of an activation `[C, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(features: usize) -> Self {
        Self::new(features, 1, 1)
    }
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec::Conv(ConvSpec::new(in_channels, out_channels, kernel, stride, padding))
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec::Linear(LinearSpec::new(in_features, out_features))
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm { channels }
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv(_) => "conv",
            LayerSpec::Linear(_) => "linear",
            LayerSpec::BatchNorm { .. } => "bn",
            LayerSpec::ReLU => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::GlobalAvgPool => "gap",
            LayerSpec::Flatten => "flatten",
            LayerSpec::ResidualStart => "res_start",
            LayerSpec::ResidualEnd { .. } => "res_end",
            LayerSpec::Repeat { .. } => "repeat",
        }
    }
}

fn pool_out(n: usize, k: usize, s: usize) -> Option<usize> {
    (k >= 1 && s >= 1 && n >= k).then(|| (n - k) / s + 1)
}

/// Propagates the input shape through `layers`, checking every layer's bookkeeping.
///
/// Returns the shape after each layer. Errors name the offending layer index.
pub fn infer_shapes(layers: &[LayerSpec], input: FeatureShape) -> Result<Vec<FeatureShape>> {
    let mut shapes = Vec::with_capacity(layers.len());
    let mut cur = input;
    let mut stack: Vec<FeatureShape> = Vec::new();
    for (j, layer) in layers.iter().enumerate() {
        let fail = |msg: String| Error::Dimension(format!("layer {j} ({}): {msg}", layer.kind()));
        cur = match layer {
            LayerSpec::Conv(c) => {
                c.shape().validate().map_err(|e| fail(e.to_string()))?;
                if cur.channels != c.in_channels {
                    return Err(fail(format!("expects {} input channels, got {}", c.in_channels, cur.channels)));
                }
                let (h, w) = c.shape().output_hw(cur.height, cur.width).map_err(|e| fail(e.to_string()))?;
                FeatureShape::new(c.out_channels, h, w)
            }
            LayerSpec::Linear(l) => {
                l.as_conv().shape().validate().map_err(|e| fail(e.to_string()))?;
                if cur.height != 1 || cur.width != 1 || cur.channels != l.in_features {
                    return Err(fail(format!(
                        "expects {} flat features, got [{}, {}, {}]",
                        l.in_features, cur.channels, cur.height, cur.width
                    )));
                }
                FeatureShape::flat(l.out_features)
            }
            LayerSpec::BatchNorm { channels } => {
                if cur.channels != *channels {
                    return Err(fail(format!("expects {channels} channels, got {}", cur.channels)));
                }
                cur
            }
            LayerSpec::ReLU => cur,
            LayerSpec::MaxPool { kernel, stride } | LayerSpec::AvgPool { kernel, stride } => {
                let h = pool_out(cur.height, *kernel, *stride);
                let w = pool_out(cur.width, *kernel, *stride);
                match (h, w) {
                    (Some(h), Some(w)) => FeatureShape::new(cur.channels, h, w),
                    _ => return Err(fail(format!("window {kernel} does not fit {}x{}", cur.height, cur.width))),
                }
            }
            LayerSpec::GlobalAvgPool => FeatureShape::new(cur.channels, 1, 1),
            LayerSpec::Flatten => FeatureShape::flat(cur.channels * cur.height * cur.width),
            LayerSpec::ResidualStart => {
                stack.push(cur);
                cur
            }
            LayerSpec::ResidualEnd { shortcut } => {
                let skip = stack.pop().ok_or_else(|| fail("no matching res_start".into()))?;
                let skip = match shortcut {
                    None => skip,
                    Some(sc) => {
                        let c = sc.as_conv();
                        c.shape().validate().map_err(|e| fail(e.to_string()))?;
                        if skip.channels != sc.in_channels {
                            return Err(fail(format!(
                                "shortcut expects {} channels, skip path has {}",
                                sc.in_channels, skip.channels
                            )));
                        }
                        let (h, w) = c.shape().output_hw(skip.height, skip.width).map_err(|e| fail(e.to_string()))?;
                        FeatureShape::new(sc.out_channels, h, w)
                    }
                };
                if skip != cur {
                    return Err(fail(format!(
                        "skip path {:?} does not match main path {:?}",
                        skip, cur
                    )));
                }
                cur
            }
            LayerSpec::Repeat { copies } => {
                if *copies == 0 {
                    return Err(fail("copies must be positive".into()));
                }
                FeatureShape::new(cur.channels * copies, cur.height, cur.width)
            }
        };
        shapes.push(cur);
    }
    if !stack.is_empty() {
        return config_err(format!("{} residual block(s) left open", stack.len()));
    }
    Ok(shapes)
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv(c) => {
                write!(
                    f,
                    "conv in={} out={} k={} s={} p={} g={}",
                    c.in_channels, c.out_channels, c.kernel, c.stride, c.padding, c.groups
                )?;
                if c.bias {
                    write!(f, " bias=1")?;
                }
                if !c.subgroups {
                    write!(f, " sg=0")?;
                }
                Ok(())
            }
            LayerSpec::Linear(l) => {
                write!(
                    f,
                    "linear in={} out={} g={} bias={}",
                    l.in_features,
                    l.out_features,
                    l.groups,
                    flag(l.bias)
                )?;
                if !l.subgroups {
                    write!(f, " sg=0")?;
                }
                Ok(())
            }
            LayerSpec::BatchNorm { channels } => write!(f, "bn c={channels}"),
            LayerSpec::ReLU => write!(f, "relu"),
            LayerSpec::MaxPool { kernel, stride } => write!(f, "maxpool k={kernel} s={stride}"),
            LayerSpec::AvgPool { kernel, stride } => write!(f, "avgpool k={kernel} s={stride}"),
            LayerSpec::GlobalAvgPool => write!(f, "gap"),
            LayerSpec::Flatten => write!(f, "flatten"),
            LayerSpec::ResidualStart => write!(f, "res_start"),
            LayerSpec::ResidualEnd { shortcut: None } => write!(f, "res_end"),
            LayerSpec::ResidualEnd { shortcut: Some(sc) } => {
                write!(
                    f,
                    "res_end in={} out={} s={} g={}",
                    sc.in_channels, sc.out_channels, sc.stride, sc.groups
                )?;
                if !sc.subgroups {
                    write!(f, " sg=0")?;
                }
                Ok(())
            }
            LayerSpec::Repeat { copies } => write!(f, "repeat n={copies}"),
        }
    }
}

struct Fields<'a> {
    line: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: &'a str, tokens: &[&'a str]) -> Result<Self> {
        let mut pairs = Vec::new();
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("`{line}`: expected key=value, found `{tok}`")))?;
            if pairs.iter().any(|(seen, _)| *seen == k) {
                return Err(Error::Input(format!("`{line}`: duplicate key `{k}`")));
            }
            pairs.push((k, v));
        }
        Ok(Self { line, pairs })
    }

    fn opt(&self, key: &str) -> Result<Option<usize>> {
        match self.pairs.iter().find(|(k, _)| *k == key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Input(format!("`{}`: `{key}={v}` is not a non-negative integer", self.line))),
        }
    }

    fn req(&self, key: &str) -> Result<usize> {
        self.opt(key)?
            .ok_or_else(|| Error::Input(format!("`{}`: missing `{key}=`", self.line)))
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        Ok(match self.opt(key)? {
            None => default,
            Some(0) => false,
            Some(1) => true,
            Some(v) => return Err(Error::Input(format!("`{}`: `{key}` must be 0 or 1, got {v}", self.line))),
        })
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, _) in &self.pairs {
            if !allowed.contains(k) {
                return Err(Error::Input(format!("`{}`: unknown key `{k}`", self.line)));
            }
        }
        Ok(())
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (&kind, rest) = tokens
            .split_first()
            .ok_or_else(|| Error::Input("empty layer line".into()))?;
        let f = Fields::parse(line, rest)?;
        let layer = match kind {
            "conv" => {
                f.check_keys(&["in", "out", "k", "s", "p", "g", "bias", "sg"])?;
                LayerSpec::Conv(ConvSpec {
                    in_channels: f.req("in")?,
                    out_channels: f.req("out")?,
                    kernel: f.req("k")?,
                    stride: f.opt("s")?.unwrap_or(1),
                    padding: f.opt("p")?.unwrap_or(0),
                    groups: f.opt("g")?.unwrap_or(1),
                    bias: f.flag("bias", false)?,
                    subgroups: f.flag("sg", true)?,
                })
            }
            "linear" => {
                f.check_keys(&["in", "out", "g", "bias", "sg"])?;
                LayerSpec::Linear(LinearSpec {
                    in_features: f.req("in")?,
                    out_features: f.req("out")?,
                    groups: f.opt("g")?.unwrap_or(1),
                    bias: f.flag("bias", true)?,
                    subgroups: f.flag("sg", true)?,
                })
            }
            "bn" => {
                f.check_keys(&["c"])?;
                LayerSpec::BatchNorm { channels: f.req("c")? }
            }
            "relu" | "gap" | "flatten" | "res_start" => {
                f.check_keys(&[])?;
                match kind {
                    "relu" => LayerSpec::ReLU,
                    "gap" => LayerSpec::GlobalAvgPool,
                    "flatten" => LayerSpec::Flatten,
                    _ => LayerSpec::ResidualStart,
                }
            }
            "maxpool" | "avgpool" => {
                f.check_keys(&["k", "s"])?;
                let kernel = f.req("k")?;
                let stride = f.opt("s")?.unwrap_or(kernel);
                if kind == "maxpool" {
                    LayerSpec::MaxPool { kernel, stride }
                } else {
                    LayerSpec::AvgPool { kernel, stride }
                }
            }
            "res_end" => {
                f.check_keys(&["in", "out", "s", "g", "sg"])?;
                let shortcut = match (f.opt("in")?, f.opt("out")?) {
                    (None, None) => None,
                    (Some(i), Some(o)) => Some(Shortcut {
                        in_channels: i,
                        out_channels: o,
                        stride: f.opt("s")?.unwrap_or(1),
                        groups: f.opt("g")?.unwrap_or(1),
                        subgroups: f.flag("sg", true)?,
                    }),
                    _ => return Err(Error::Input(format!("`{line}`: shortcut needs both in= and out="))),
                };
                LayerSpec::ResidualEnd { shortcut }
            }
            "repeat" => {
                f.check_keys(&["n"])?;
                LayerSpec::Repeat { copies: f.req("n")? }
            }
            other => return Err(Error::Input(format!("unknown layer kind `{other}`"))),
        };
        Ok(layer)
    }
}

/// Parses a whole architecture file, skipping blank lines and `#` comments.
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let line = raw.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then_some((i, line))
        })
        .map(|(i, line)| {
            line.parse::<LayerSpec>()
                .map_err(|e| Error::Input(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn format_arch(layers: &[LayerSpec]) -> String {
    let mut s = String::new();
    for l in layers {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    s
}
