use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetKind};
use crate::error::{invalid, Result};
use crate::linalg::{derive_seed, DenseVector};
use crate::metrics::{binary_ece, ranking_metrics, GroupScores, RankingResult, ReliabilityBins};

use super::TrainedModel;

/// Calibration and ranking quality of one model on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub examples: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub reliability: ReliabilityBins,
    /// Present for ranking datasets.
    pub ranking: Option<RankingResult>,
}

impl CalibrationReport {
    pub fn r10_at_1(&self) -> Option<f64> {
        self.ranking.as_ref().map(|r| r.r10_at_1)
    }

    pub fn map(&self) -> Option<f64> {
        self.ranking.as_ref().map(|r| r.map)
    }
}

/// Per-example stochastic-inference seed, keyed on the features themselves so
/// that scores do not depend on dataset order.
fn example_seed(model_seed: u64, x: &DenseVector) -> u64 {
    x.iter().fold(derive_seed(model_seed, 0xE7A1), |acc, v| {
        derive_seed(acc, v.to_bits())
    })
}

/// Predictive probability for every example, in dataset order.
pub fn score_dataset(model: &TrainedModel, data: &Dataset) -> Result<Vec<f64>> {
    data.examples
        .iter()
        .map(|e| model.predict(&e.features, example_seed(model.seed, &e.features)))
        .collect()
}

pub fn report_from_probs(probs: &[f64], data: &Dataset, bins: usize) -> Result<CalibrationReport> {
    if data.is_empty() {
        return invalid("empty evaluation set");
    }
    let labels = data.labels();
    let reliability = binary_ece(probs, &labels, bins)?;
    let correct = probs
        .iter()
        .zip(&labels)
        .filter(|(&p, &y)| u8::from(p > 0.5) == y)
        .count();
    let ranking = if data.kind == DatasetKind::Ranking {
        let groups = data
            .group_indices()?
            .into_iter()
            .map(|(_, idx)| {
                let scores = idx.iter().map(|&i| probs[i]).collect();
                let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                GroupScores::from_labels(scores, &y)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(ranking_metrics(&groups)?)
    } else {
        None
    };
    Ok(CalibrationReport {
        examples: probs.len(),
        accuracy: correct as f64 / probs.len() as f64,
        ece: reliability.ece,
        reliability,
        ranking,
    })
}

/// Scores every pair and computes ECE, R10@1, and MAP.
pub fn evaluate(model: &TrainedModel, data: &Dataset, bins: usize) -> Result<CalibrationReport> {
    if data.is_empty() {
        return invalid("empty evaluation set");
    }
    model.validate()?;
    let probs = score_dataset(model, data)?;
    report_from_probs(&probs, data, bins)
}
