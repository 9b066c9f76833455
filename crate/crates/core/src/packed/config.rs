use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// What to do when a layer would end up with fewer than `min_channels_per_group`
/// input channels per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SubgroupPolicy {
    /// Reject the whole construction.
    #[default]
    Strict,
    /// Lower that layer's subgroup count (never below one group per member).
    Reduce,
}

/// Packed-Ensembles hyperparameters `(alpha, M, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackedConfig {
    /// Width multiplier applied to every hidden layer.
    pub alpha: usize,
    /// Number of subnetworks `M`.
    pub num_estimators: usize,
    /// Subgroups per subnetwork.
    pub gamma: usize,
    pub min_channels_per_group: usize,
    pub policy: SubgroupPolicy,
}

impl PackedConfig {
    pub fn new(alpha: usize, num_estimators: usize, gamma: usize) -> Self {
        Self {
            alpha,
            num_estimators,
            gamma,
            min_channels_per_group: 1,
            policy: SubgroupPolicy::Strict,
        }
    }

    /// Large-scale preset: at least 64 input channels per group, subgroups lowered
    /// layer by layer where that is not reachable.
    pub fn large_scale(alpha: usize, num_estimators: usize, gamma: usize) -> Self {
        Self {
            min_channels_per_group: 64,
            policy: SubgroupPolicy::Reduce,
            ..Self::new(alpha, num_estimators, gamma)
        }
    }

    /// The unpacked single model.
    pub fn single() -> Self {
        Self::new(1, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha == 0 || self.num_estimators == 0 || self.gamma == 0 || self.min_channels_per_group == 0 {
            return config_err(format!("alpha, M, gamma and min_channels_per_group must be positive: {self}"));
        }
        Ok(())
    }

    /// Hidden width for a base width `c`: `alpha·c` rounded up to a multiple of `M·gamma`.
    pub fn packed_width(&self, c: usize) -> usize {
        let q = self.num_estimators * self.gamma;
        (self.alpha * c).div_ceil(q) * q
    }
}

impl fmt::Display for PackedConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PE-({},{},{})", self.alpha, self.num_estimators, self.gamma)
    }
}

/// Which of the three equivalent realizations to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    /// (a) `M` separate subnetworks run one after another.
    Sequential,
    /// (b) input repeated `M` times along channels, then grouped layers throughout.
    Rearrange,
    /// (c) a full first convolution in place of repeat + first grouped convolution.
    FullFirstConv,
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "sequential" => Ok(Style::Sequential),
            "b" | "rearrange" => Ok(Style::Rearrange),
            "c" | "full-first-conv" => Ok(Style::FullFirstConv),
            other => Err(Error::Input(format!("unknown style `{other}` (expected a, b or c)"))),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::Sequential => "a",
            Style::Rearrange => "b",
            Style::FullFirstConv => "c",
        })
    }
}
