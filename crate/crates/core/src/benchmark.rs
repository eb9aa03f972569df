//! Cross-variant, multi-seed comparison on in-domain and shifted evaluation sets.

use serde::{Deserialize, Serialize};

use crate::data::{apply_shift, gen_classification, gen_retrieval_groups, Dataset, ShiftSpec};
use crate::error::{invalid, Result};
use crate::linalg::derive_seed;
use crate::metrics::{aggregate_runs, MetricSummary};
use crate::trainer::{evaluate, train, CalibrationReport, TrainConfig, Variant};

pub const IN_DOMAIN: &str = "in_domain";
pub const SHIFTED: &str = "shifted";

/// Defaults of the standard retrieval benchmark.
pub const TRAIN_GROUPS: usize = 2000;
pub const TEST_GROUPS: usize = 500;
pub const DIM: usize = 16;
pub const SIGNAL: f64 = 2.0;
/// L2 norm of the translation applied to the shifted test set. At this size
/// the deterministic baseline loses about a tenth of its R10@1 and becomes
/// clearly overconfident.
pub const SHIFT_TRANSLATION: f64 = 8.0;
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Backbone width and depth for timing runs. Inference cost there is
/// dominated by the featurizer, as it is for a transformer backbone; at the
/// training default of 64 wide the head's random-feature projection and
/// covariance product alone outweigh the backbone.
pub const TIMING_HIDDEN: usize = 256;
pub const TIMING_DEPTH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Fresh train/test retrieval groups per seed.
    Retrieval {
        train_groups: usize,
        test_groups: usize,
        dim: usize,
        k_negatives: usize,
        signal: f64,
    },
    /// Fresh two-cluster train/test sets per seed.
    Classification {
        train_n: usize,
        test_n: usize,
        dim: usize,
        separation: f64,
    },
    /// The same train/test files for every seed.
    Fixed { train: Dataset, test: Dataset },
}

impl DataSource {
    pub fn dim(&self) -> usize {
        match self {
            DataSource::Retrieval { dim, .. } | DataSource::Classification { dim, .. } => *dim,
            DataSource::Fixed { train, .. } => train.dim,
        }
    }

    /// `(train, test)` for one seed.
    pub fn materialize(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DataSource::Retrieval {
                train_groups,
                test_groups,
                dim,
                k_negatives,
                signal,
            } => {
                let tr = gen_retrieval_groups(
                    *train_groups,
                    *dim,
                    *k_negatives,
                    *signal,
                    derive_seed(seed, 11),
                )?;
                let te = gen_retrieval_groups(
                    *test_groups,
                    *dim,
                    *k_negatives,
                    *signal,
                    derive_seed(seed, 12),
                )?;
                Ok((Dataset::from_groups(&tr)?, Dataset::from_groups(&te)?))
            }
            DataSource::Classification {
                train_n,
                test_n,
                dim,
                separation,
            } => Ok((
                gen_classification(*train_n, *dim, *separation, derive_seed(seed, 11))?,
                gen_classification(*test_n, *dim, *separation, derive_seed(seed, 12))?,
            )),
            DataSource::Fixed { train, test } => {
                if train.dim != test.dim {
                    return invalid("train and test files have different dimensions");
                }
                Ok((train.clone(), test.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedShift {
    pub name: String,
    pub spec: ShiftSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSpec {
    pub source: DataSource,
    pub shifts: Vec<NamedShift>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub config: TrainConfig,
    pub bins: usize,
}

impl CompareSpec {
    /// The standard retrieval benchmark: in-domain test plus one translated test set.
    pub fn standard(variants: Vec<Variant>, seeds: Vec<u64>) -> Self {
        Self {
            source: DataSource::Retrieval {
                train_groups: TRAIN_GROUPS,
                test_groups: TEST_GROUPS,
                dim: DIM,
                k_negatives: crate::data::DEFAULT_NEGATIVES,
                signal: SIGNAL,
            },
            shifts: vec![NamedShift {
                name: SHIFTED.to_string(),
                spec: ShiftSpec::uniform_translation(DIM, SHIFT_TRANSLATION),
            }],
            variants,
            seeds,
            config: TrainConfig::default(),
            bins: crate::metrics::DEFAULT_BINS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return invalid("no variants to compare");
        }
        if self.seeds.is_empty() {
            return invalid("no seeds");
        }
        for s in &self.shifts {
            if s.spec.translation.len() != self.source.dim() {
                return invalid(format!(
                    "shift {:?} does not match the data dimension",
                    s.name
                ));
            }
            if s.name == IN_DOMAIN {
                return invalid("shift name collides with the in-domain set");
            }
        }
        let mut cfg = self.config.clone();
        for &v in &self.variants {
            cfg.variant = v;
            cfg.validate()?;
        }
        Ok(())
    }

    pub fn eval_sets(&self) -> Vec<String> {
        std::iter::once(IN_DOMAIN.to_string())
            .chain(self.shifts.iter().map(|s| s.name.clone()))
            .collect()
    }

    /// Every (variant, seed) training job, in report order.
    pub fn jobs(&self) -> Vec<(Variant, u64)> {
        self.variants
            .iter()
            .flat_map(|&v| self.seeds.iter().map(move |&s| (v, s)))
            .collect()
    }
}

/// Trains one variant on one seed and evaluates it on every evaluation set.
pub fn run_job(spec: &CompareSpec, variant: Variant, seed: u64) -> Result<Vec<CalibrationReport>> {
    let (train_set, test_set) = spec.source.materialize(seed)?;
    let cfg = TrainConfig {
        variant,
        ..spec.config.clone()
    };
    let model = train(&cfg, &train_set, seed)?;
    let mut out = vec![evaluate(&model, &test_set, spec.bins)?];
    for (k, s) in spec.shifts.iter().enumerate() {
        let shifted = apply_shift(&test_set, &s.spec, derive_seed(seed, 200 + k as u64))?;
        out.push(evaluate(&model, &shifted, spec.bins)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub eval_set: String,
    pub ece: MetricSummary,
    pub accuracy: MetricSummary,
    pub r10_at_1: Option<MetricSummary>,
    pub map: Option<MetricSummary>,
    /// Raw per-seed ECE values, in seed order.
    pub ece_runs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seeds: Vec<u64>,
    pub eval_sets: Vec<String>,
    pub rows: Vec<VariantRow>,
}

impl CompareReport {
    pub fn cell(&self, variant: Variant, eval_set: &str) -> Option<&Cell> {
        self.rows
            .iter()
            .find(|r| r.variant == variant)?
            .cells
            .iter()
            .find(|c| c.eval_set == eval_set)
    }
}

fn summarize(values: &[Option<f64>]) -> Result<Option<MetricSummary>> {
    let present: Option<Vec<f64>> = values.iter().copied().collect();
    present.map(|v| aggregate_runs(&v)).transpose()
}

/// Aggregates job results (in `spec.jobs()` order) into per-variant mean and stderr.
pub fn assemble(spec: &CompareSpec, results: Vec<Vec<CalibrationReport>>) -> Result<CompareReport> {
    let jobs = spec.jobs();
    if results.len() != jobs.len() {
        return invalid("job results do not match the job list");
    }
    let eval_sets = spec.eval_sets();
    let per_variant = spec.seeds.len();
    let rows = spec
        .variants
        .iter()
        .enumerate()
        .map(|(vi, &variant)| {
            let runs = &results[vi * per_variant..(vi + 1) * per_variant];
            let cells = eval_sets
                .iter()
                .enumerate()
                .map(|(ei, name)| {
                    let reports: Vec<&CalibrationReport> = runs.iter().map(|r| &r[ei]).collect();
                    let ece_runs: Vec<f64> = reports.iter().map(|r| r.ece).collect();
                    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
                    Ok(Cell {
                        eval_set: name.clone(),
                        ece: aggregate_runs(&ece_runs)?,
                        accuracy: aggregate_runs(&acc)?,
                        r10_at_1: summarize(
                            &reports.iter().map(|r| r.r10_at_1()).collect::<Vec<_>>(),
                        )?,
                        map: summarize(&reports.iter().map(|r| r.map()).collect::<Vec<_>>())?,
                        ece_runs,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(VariantRow { variant, cells })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport {
        seeds: spec.seeds.clone(),
        eval_sets,
        rows,
    })
}

/// Runs every job sequentially.
pub fn run_comparison(spec: &CompareSpec) -> Result<CompareReport> {
    spec.validate()?;
    let results = spec
        .jobs()
        .into_iter()
        .map(|(v, s)| run_job(spec, v, s))
        .collect::<Result<Vec<_>>>()?;
    assemble(spec, results)
}
