//! JSON report files with a schema version; unknown keys are rejected on read.

use std::path::Path;

use packed_core::metrics::{MetricsReport, REPORT_SCHEMA_VERSION};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::eval::{RegressionReport, REGRESSION_SCHEMA_VERSION};

pub fn emit_report<T: Serialize>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(report).map_err(|e| HarnessError::Report(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Report(format!("{}: {e}", path.display())))
}

fn check_version(found: u32, want: u32, path: &Path) -> Result<()> {
    if found != want {
        return Err(HarnessError::Report(format!(
            "{}: schema_version {found}, expected {want}",
            path.display()
        )));
    }
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let r: MetricsReport = read_json(path)?;
    check_version(r.schema_version, REPORT_SCHEMA_VERSION, path)?;
    Ok(r)
}

pub fn read_regression_report(path: impl AsRef<Path>) -> Result<RegressionReport> {
    let path = path.as_ref();
    let r: RegressionReport = read_json(path)?;
    check_version(r.schema_version, REGRESSION_SCHEMA_VERSION, path)?;
    Ok(r)
}
