use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Result};

use super::{score_dataset, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub label: String,
    pub params: usize,
    pub trainable_params: usize,
    pub median_seconds: f64,
    pub seconds: Vec<f64>,
    /// Median time relative to the first entry.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub repetitions: usize,
    pub examples: usize,
    pub entries: Vec<TimingEntry>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median wall time of a full scoring pass per model. The first model is the
/// reference for the relative column. Models are timed round-robin so that
/// slow drifts in machine load hit every entry alike.
pub fn timing_benchmark(
    models: &[(String, &TrainedModel)],
    data: &Dataset,
    repetitions: usize,
) -> Result<TimingReport> {
    if repetitions < 3 {
        return invalid("timing needs at least 3 repetitions");
    }
    if models.is_empty() {
        return invalid("no models to time");
    }
    if data.is_empty() {
        return invalid("empty evaluation set");
    }
    // warm-up pass
    for (_, m) in models {
        std::hint::black_box(score_dataset(m, data)?);
    }
    let mut times = vec![Vec::with_capacity(repetitions); models.len()];
    for _ in 0..repetitions {
        for (k, (_, m)) in models.iter().enumerate() {
            let start = Instant::now();
            std::hint::black_box(score_dataset(m, data)?);
            times[k].push(start.elapsed().as_secs_f64());
        }
    }
    let base = median(&times[0]);
    let entries = models
        .iter()
        .zip(times)
        .map(|((label, m), seconds)| {
            let med = median(&seconds);
            TimingEntry {
                label: label.clone(),
                params: m.param_count(),
                trainable_params: m.trainable_param_count(),
                median_seconds: med,
                seconds,
                relative: if base > 0.0 { med / base } else { f64::NAN },
            }
        })
        .collect();
    Ok(TimingReport {
        repetitions,
        examples: data.len(),
        entries,
    })
}
