//! Machine-readable report documents written next to the human tables.

use std::path::Path;

use gpf_core::benchmark::{CompareReport, NamedShift};
use gpf_core::trainer::{CalibrationReport, TimingReport, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateDoc {
    pub report: String,
    pub version: u32,
    pub variant: Variant,
    pub model_seed: u64,
    pub model_path: String,
    pub data_path: String,
    pub bins: usize,
    pub result: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub eval_set: String,
    pub accuracy: f64,
    pub ece: f64,
    pub r10_at_1: Option<f64>,
    pub map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDoc {
    pub report: String,
    pub version: u32,
    /// Human description of where train and test data came from.
    pub data: String,
    pub shifts: Vec<NamedShift>,
    pub config: TrainConfig,
    pub bins: usize,
    pub result: CompareReport,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingDoc {
    pub report: String,
    pub version: u32,
    pub config: TrainConfig,
    pub result: TimingReport,
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(doc).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
