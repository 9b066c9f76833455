//! Experiment configuration: sectioned `key = value` text (TOML syntax).
//!
//! ```text
//! [experiment]
//! task = "classify"              # or "regress"
//! dataset = "synthetic:digits"   # synthetic:{gaussians-2d,rings,digits,cubic}, idx:IMAGES,LABELS, csv:PATH
//! samples = 10000
//! arch = "small-cnn:16"
//!
//! [packed]
//! alpha = 2
//! num_estimators = 4
//! gamma = 1
//! style = "b"
//!
//! [train]
//! max_epochs = 10
//! batch_size = 64
//! lr = 0.05
//! momentum = 0.9
//! weight_decay = 5e-4
//! lr_gamma = 0.1
//! milestones = [5, 8]
//!
//! [stochasticity]
//! distinct_init = true
//! distinct_batches = false
//! deterministic = true
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use packed_core::nn::{parse_arch, LayerSpec, TrainConfig};
use packed_core::packed::{mlp_spec, resnet_spec, small_cnn_spec, PackedConfig, Style, SubgroupPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::synth::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Classify,
    Regress,
}

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSpec {
    Synthetic(Regime),
    Cubic,
    Idx { images: PathBuf, labels: PathBuf },
    Csv(PathBuf),
}

impl FromStr for DatasetSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| HarnessError::Config(format!("dataset '{s}' has no 'kind:' prefix")))?;
        match kind {
            "synthetic" if rest == "cubic" => Ok(DatasetSpec::Cubic),
            "synthetic" => Ok(DatasetSpec::Synthetic(rest.parse()?)),
            "idx" => match rest.split_once(',') {
                Some((i, l)) => Ok(DatasetSpec::Idx {
                    images: i.into(),
                    labels: l.into(),
                }),
                None => Err(HarnessError::Config(format!("idx dataset needs 'IMAGES,LABELS', got '{rest}'"))),
            },
            "csv" => Ok(DatasetSpec::Csv(rest.into())),
            other => Err(HarnessError::Config(format!("unknown dataset kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetSpec::Synthetic(r) => write!(f, "synthetic:{r}"),
            DatasetSpec::Cubic => f.write_str("synthetic:cubic"),
            DatasetSpec::Idx { images, labels } => write!(f, "idx:{},{}", images.display(), labels.display()),
            DatasetSpec::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

/// Run-to-run variation sources that can be switched off individually.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stochasticity {
    /// Each member is initialized from its own seed stream.
    pub distinct_init: bool,
    /// Each member sees its own sample ordering (sequential style only).
    pub distinct_batches: bool,
    pub deterministic: bool,
}

impl Default for Stochasticity {
    fn default() -> Self {
        Self {
            distinct_init: true,
            distinct_batches: false,
            deterministic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetSpec,
    pub samples: usize,
    pub data_seed: u64,
    pub arch: String,
    pub packed: PackedConfig,
    pub style: Style,
    pub train: TrainConfig,
    pub stochasticity: Stochasticity,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Classify,
            dataset: DatasetSpec::Synthetic(Regime::Gaussians2d),
            samples: 2000,
            data_seed: 0,
            arch: "mlp:32,32".into(),
            packed: PackedConfig::new(2, 4, 1),
            style: Style::Rearrange,
            train: TrainConfig {
                max_epochs: 20,
                batch_size: 64,
                lr: 0.05,
                momentum: 0.9,
                weight_decay: 5e-4,
                lr_gamma: 0.1,
                milestones: vec![10, 15],
                hflip: false,
                seed: 0,
                deterministic: true,
            },
            stochasticity: Stochasticity::default(),
            output: None,
        }
    }
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    packed: RawPacked,
    #[serde(default)]
    train: RawTrain,
    #[serde(default)]
    stochasticity: Option<Stochasticity>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    task: Option<String>,
    dataset: Option<String>,
    samples: Option<usize>,
    data_seed: Option<u64>,
    arch: Option<String>,
    output: Option<PathBuf>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawPacked {
    alpha: Option<usize>,
    num_estimators: Option<usize>,
    gamma: Option<usize>,
    min_channels_per_group: Option<usize>,
    policy: Option<String>,
    style: Option<String>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    max_epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    momentum: Option<f64>,
    weight_decay: Option<f64>,
    lr_gamma: Option<f64>,
    milestones: Option<Vec<usize>>,
    hflip: Option<bool>,
    seed: Option<u64>,
}

fn style_name(s: Style) -> &'static str {
    match s {
        Style::Sequential => "a",
        Style::Rearrange => "b",
        Style::FullFirstConv => "c",
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| HarnessError::Config(one_line(&e.to_string())))?;
        let d = Self::default();
        let e = raw.experiment;
        let task = match e.task.as_deref() {
            None | Some("classify") => Task::Classify,
            Some("regress") => Task::Regress,
            Some(other) => return Err(HarnessError::Config(format!("unknown task '{other}'"))),
        };
        let p = raw.packed;
        let policy = match p.policy.as_deref() {
            None | Some("strict") => SubgroupPolicy::Strict,
            Some("reduce") => SubgroupPolicy::Reduce,
            Some(other) => return Err(HarnessError::Config(format!("unknown subgroup policy '{other}'"))),
        };
        let t = raw.train;
        let stochasticity = raw.stochasticity.unwrap_or_default();
        let cfg = Self {
            task,
            dataset: match e.dataset {
                Some(s) => s.parse()?,
                None => d.dataset,
            },
            samples: e.samples.unwrap_or(d.samples),
            data_seed: e.data_seed.unwrap_or(d.data_seed),
            arch: e.arch.unwrap_or(d.arch),
            packed: PackedConfig {
                alpha: p.alpha.unwrap_or(d.packed.alpha),
                num_estimators: p.num_estimators.unwrap_or(d.packed.num_estimators),
                gamma: p.gamma.unwrap_or(d.packed.gamma),
                min_channels_per_group: p.min_channels_per_group.unwrap_or(1),
                policy,
            },
            style: match p.style {
                Some(s) => s.parse()?,
                None => d.style,
            },
            train: TrainConfig {
                max_epochs: t.max_epochs.unwrap_or(d.train.max_epochs),
                batch_size: t.batch_size.unwrap_or(d.train.batch_size),
                lr: t.lr.unwrap_or(d.train.lr),
                momentum: t.momentum.unwrap_or(d.train.momentum),
                weight_decay: t.weight_decay.unwrap_or(d.train.weight_decay),
                lr_gamma: t.lr_gamma.unwrap_or(d.train.lr_gamma),
                milestones: t.milestones.unwrap_or(d.train.milestones),
                hflip: t.hflip.unwrap_or(d.train.hflip),
                seed: t.seed.unwrap_or(d.train.seed),
                deterministic: stochasticity.deterministic,
            },
            stochasticity,
            output: e.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let raw = RawFile {
            experiment: RawExperiment {
                task: Some(match self.task {
                    Task::Classify => "classify".into(),
                    Task::Regress => "regress".into(),
                }),
                dataset: Some(self.dataset.to_string()),
                samples: Some(self.samples),
                data_seed: Some(self.data_seed),
                arch: Some(self.arch.clone()),
                output: self.output.clone(),
            },
            packed: RawPacked {
                alpha: Some(self.packed.alpha),
                num_estimators: Some(self.packed.num_estimators),
                gamma: Some(self.packed.gamma),
                min_channels_per_group: Some(self.packed.min_channels_per_group),
                policy: Some(match self.packed.policy {
                    SubgroupPolicy::Strict => "strict".into(),
                    SubgroupPolicy::Reduce => "reduce".into(),
                }),
                style: Some(style_name(self.style).into()),
            },
            train: RawTrain {
                max_epochs: Some(self.train.max_epochs),
                batch_size: Some(self.train.batch_size),
                lr: Some(self.train.lr),
                momentum: Some(self.train.momentum),
                weight_decay: Some(self.train.weight_decay),
                lr_gamma: Some(self.train.lr_gamma),
                milestones: Some(self.train.milestones.clone()),
                hflip: Some(self.train.hflip),
                seed: Some(self.train.seed),
            },
            stochasticity: Some(self.stochasticity),
        };
        toml::to_string(&raw).expect("configuration serializes")
    }

    /// Hex SHA-256 of the canonical text, excluding the output path.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        Sha256::digest(c.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
    }

    pub fn set_deterministic(&mut self, on: bool) {
        self.stochasticity.deterministic = on;
        self.train.deterministic = on;
    }

    /// Cross-field checks, run before any data is touched.
    pub fn validate(&self) -> Result<()> {
        self.packed.validate()?;
        self.train.validate()?;
        if self.stochasticity.distinct_batches && self.style != Style::Sequential && self.packed.num_estimators > 1 {
            return Err(HarnessError::Config(
                "distinct_batches needs style a: packed styles share one batch across members".into(),
            ));
        }
        let regression_data = self.dataset == DatasetSpec::Cubic || matches!(self.dataset, DatasetSpec::Csv(_));
        match (self.task, regression_data) {
            (Task::Classify, true) => {
                return Err(HarnessError::Config(format!("dataset {} is a regression dataset", self.dataset)))
            }
            (Task::Regress, false) => {
                return Err(HarnessError::Config(format!("dataset {} has class labels", self.dataset)))
            }
            _ => {}
        }
        if self.samples < 10 && !matches!(self.dataset, DatasetSpec::Idx { .. } | DatasetSpec::Csv(_)) {
            return Err(HarnessError::Config(format!("samples = {} is too small to split", self.samples)));
        }
        Ok(())
    }
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad width '{w}' in architecture")))
        })
        .collect()
}

/// Base architecture for `name` on samples of shape `input` with `outputs` outputs.
///
/// Names: `small-cnn[:WIDTH]`, `mlp:H1,H2,...`, `resnet18`, `resnet:WIDTH[:BLOCKS,...]`,
/// `file:PATH` (architecture text).
pub fn build_arch(name: &str, input: &[usize], outputs: usize) -> Result<Vec<LayerSpec>> {
    let (kind, arg) = name.split_once(':').unwrap_or((name, ""));
    let image = || match input {
        [c, h, w] if h == w => Ok((*c, *h)),
        _ => Err(HarnessError::Config(format!("{kind} needs square image inputs, got {input:?}"))),
    };
    Ok(match kind {
        "small-cnn" => {
            let (c, s) = image()?;
            let width = if arg.is_empty() { 16 } else { parse_widths(arg)?[0] };
            small_cnn_spec(c, width, s, outputs)
        }
        "mlp" => {
            let mut widths = vec![input.iter().product()];
            if !arg.is_empty() {
                widths.extend(parse_widths(arg)?);
            }
            widths.push(outputs);
            let mut layers = Vec::new();
            if input.len() > 1 {
                layers.push(LayerSpec::Flatten);
            }
            layers.extend(mlp_spec(&widths));
            layers
        }
        "resnet18" => resnet_spec(image()?.0, 64, &[2, 2, 2, 2], outputs),
        "resnet" => {
            let (width, blocks) = arg.split_once(':').unwrap_or((arg, "1,1"));
            resnet_spec(image()?.0, parse_widths(width)?[0], &parse_widths(blocks)?, outputs)
        }
        "file" => {
            let text = std::fs::read_to_string(arg).map_err(|e| HarnessError::io(arg, e))?;
            parse_arch(&text)?
        }
        other => return Err(HarnessError::Config(format!("unknown architecture '{other}'"))),
    })
}
