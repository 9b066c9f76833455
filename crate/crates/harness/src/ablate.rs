//! `(alpha, M, gamma)` sweeps in the layout of the usual ablation table.

use packed_core::packed::{count_packed, MemberInit, PackedNetwork};
use packed_core::Error as CoreError;
use packed_core::Tensor;

use crate::config::{build_arch, ExperimentConfig};
use crate::data::DatasetHandle;
use crate::error::{HarnessError, Result};
use crate::eval::run_eval;
use crate::train::train_on;

/// Scores of one trained configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CellScores {
    pub params: usize,
    pub acc: f64,
    pub ece: f64,
    pub aupr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub alpha: usize,
    pub num_estimators: usize,
    pub gamma: usize,
    /// `None` when the combination cannot be built (printed as `/`).
    pub scores: Option<CellScores>,
}

/// Whether `(alpha, M, gamma)` yields a buildable network for `cfg`'s architecture.
fn buildable(cfg: &ExperimentConfig, data: &DatasetHandle) -> Result<bool> {
    let outputs = data.num_classes().unwrap_or(2);
    let base = build_arch(&cfg.arch, data.train.sample_shape(), outputs)?;
    match PackedNetwork::new(&base, cfg.packed, cfg.style, outputs, MemberInit::new(0)) {
        Ok(_) => Ok(true),
        Err(CoreError::Config(_)) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

/// Trains and evaluates every grid cell on `data`, row-major in `alphas`, then `ms`, then `gammas`.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    data: &DatasetHandle,
    ood: Option<&Tensor>,
    alphas: &[usize],
    ms: &[usize],
    gammas: &[usize],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &m in ms {
            for &gamma in gammas {
                let mut c = cfg.clone();
                c.packed.alpha = alpha;
                c.packed.num_estimators = m;
                c.packed.gamma = gamma;
                let scores = if c.validate().is_ok() && buildable(&c, data)? {
                    let out = train_on(&c, data)?;
                    let report = run_eval(&out.checkpoint, &data.test, ood)?;
                    Some(CellScores {
                        params: count_packed(&out.checkpoint.network).get(false),
                        acc: report.acc,
                        ece: report.ece,
                        aupr: report.aupr,
                    })
                } else {
                    None
                };
                rows.push(AblationRow {
                    alpha,
                    num_estimators: m,
                    gamma,
                    scores,
                });
            }
        }
    }
    Ok(rows)
}

/// `alpha,M,gamma,params,acc,ece,aupr`, one line per row; unbuildable cells read `/`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("alpha,M,gamma,params,acc,ece,aupr\n");
    for r in rows {
        s.push_str(&format!("{},{},{},", r.alpha, r.num_estimators, r.gamma));
        match &r.scores {
            Some(c) => {
                let aupr = c.aupr.map_or("/".to_string(), |v| v.to_string());
                s.push_str(&format!("{},{},{},{}\n", c.params, c.acc, c.ece, aupr));
            }
            None => s.push_str("/,/,/,/\n"),
        }
    }
    s
}

/// Parses `1,2,4`.
pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("bad list entry '{v}' in '{s}'")))
        })
        .collect()
}
