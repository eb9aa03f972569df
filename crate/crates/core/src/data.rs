//! Synthetic benchmarks, distribution-shift transforms, the embedding file
//! format, and seeded batching.
//!
//! Embedding files are line-oriented UTF-8 text:
//!
//! ```text
//! dim=<d> kind=<classification|ranking>
//! <group_id>\t<label>\t<f1>,<f2>,...,<fd>
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. Classification rows
//! carry `-` in the group column.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{derive_seed, random_orthogonal, rng, DenseMatrix, DenseVector};

pub const DEFAULT_NEGATIVES: usize = 9;

/// Seed of the fixed mixing matrix shared by every retrieval dataset, so that
/// train and test splits drawn with different seeds live in the same space.
const MIXING_SEED: u64 = 0x5E_ED0F_F1CE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Classification,
    Ranking,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Classification => "classification",
            DatasetKind::Ranking => "ranking",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(DatasetKind::Classification),
            "ranking" => Ok(DatasetKind::Ranking),
            other => invalid(format!("unknown dataset kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(with = "crate::checkpoint::vector")]
    pub features: DenseVector,
    pub label: u8,
    pub group_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingGroup {
    pub group_id: u64,
    pub positive: LabeledExample,
    pub negatives: Vec<LabeledExample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub kind: DatasetKind,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Flattens groups positive-first.
    pub fn from_groups(groups: &[RankingGroup]) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::InvalidInput("no ranking groups".into()))?;
        let dim = first.positive.features.len();
        let mut examples = Vec::with_capacity(groups.len() * (first.negatives.len() + 1));
        for g in groups {
            examples.push(g.positive.clone());
            examples.extend(g.negatives.iter().cloned());
        }
        Ok(Self {
            dim,
            kind: DatasetKind::Ranking,
            examples,
        })
    }

    /// Index lists per group, in order of first appearance.
    pub fn group_indices(&self) -> Result<Vec<(u64, Vec<usize>)>> {
        let mut order: Vec<(u64, Vec<usize>)> = Vec::new();
        let mut slot: HashMap<u64, usize> = HashMap::new();
        for (i, e) in self.examples.iter().enumerate() {
            let gid = e
                .group_id
                .ok_or_else(|| Error::InvalidInput(format!("example {i} has no group id")))?;
            let k = *slot.entry(gid).or_insert_with(|| {
                order.push((gid, Vec::new()));
                order.len() - 1
            });
            order[k].1.push(i);
        }
        for (gid, members) in &order {
            let positives = members
                .iter()
                .filter(|&&i| self.examples[i].label == 1)
                .count();
            if positives != 1 {
                return invalid(format!(
                    "group {gid} has {positives} positives (expected exactly one)"
                ));
            }
            if members.len() < 2 {
                return invalid(format!("group {gid} has no negatives"));
            }
        }
        Ok(order)
    }

    pub fn groups(&self) -> Result<Vec<RankingGroup>> {
        self.group_indices()?
            .into_iter()
            .map(|(gid, members)| {
                let mut positive = None;
                let mut negatives = Vec::with_capacity(members.len() - 1);
                for i in members {
                    let e = self.examples[i].clone();
                    if e.label == 1 {
                        positive = Some(e);
                    } else {
                        negatives.push(e);
                    }
                }
                Ok(RankingGroup {
                    group_id: gid,
                    positive: positive.expect("validated above"),
                    negatives,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples.is_empty() {
            return invalid("no examples");
        }
        for (i, e) in self.examples.iter().enumerate() {
            check_dim("example features", self.dim, e.features.len())?;
            if e.label > 1 {
                return invalid(format!("example {i} has label {}", e.label));
            }
            if e.features.iter().any(|v| !v.is_finite()) {
                return invalid(format!("example {i} has non-finite features"));
            }
        }
        if self.kind == DatasetKind::Ranking {
            self.group_indices()?;
        }
        Ok(())
    }
}

/// Two unit-covariance Gaussian clusters at `+-(separation / 2) e1`, labels alternating.
pub fn gen_classification(n: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || dim < 2 {
        return invalid(format!(
            "classification needs n >= 2 and dim >= 2 (got {n}, {dim})"
        ));
    }
    if !separation.is_finite() || separation < 0.0 {
        return invalid("class separation must be finite and >= 0");
    }
    let mut r = rng(seed);
    let examples = (0..n)
        .map(|i| {
            let label = (i % 2) as u8;
            let mut features = DenseVector::from_fn(dim, |_, _| StandardNormal.sample(&mut r));
            features[0] += if label == 1 {
                separation / 2.0
            } else {
                -separation / 2.0
            };
            LabeledExample {
                features,
                label,
                group_id: None,
            }
        })
        .collect();
    Ok(Dataset {
        dim,
        kind: DatasetKind::Classification,
        examples,
    })
}

/// Spread of the per-group query around the shared relevance direction.
const QUERY_SPREAD: f64 = 0.5;

/// Ranking groups of one relevant and `k_negatives` irrelevant candidates.
///
/// Candidates are drawn in a latent space and pushed through a fixed
/// orthogonal mixing matrix. Each group has a latent query
/// `q = e1 + 0.5 xi`, `xi ~ N(0, I)`. The relevant candidate is `s q + n`
/// with `s = relevance_signal` and `n ~ N(0, I)`; irrelevant candidates are
/// independent `N(0, I)` draws. At `s = 0` every candidate has the same
/// distribution.
pub fn gen_retrieval_groups(
    n_groups: usize,
    dim: usize,
    k_negatives: usize,
    relevance_signal: f64,
    seed: u64,
) -> Result<Vec<RankingGroup>> {
    if n_groups == 0 {
        return invalid("need at least one ranking group");
    }
    if dim < 2 {
        return invalid("retrieval features need dim >= 2");
    }
    if k_negatives == 0 {
        return invalid("need at least one negative per group");
    }
    if !relevance_signal.is_finite() || relevance_signal < 0.0 {
        return invalid("relevance signal must be finite and >= 0");
    }
    let mixing = random_orthogonal(dim, &mut rng(MIXING_SEED ^ dim as u64));
    let mut r = rng(seed);
    let mut draw = || DenseVector::from_fn(dim, |_, _| StandardNormal.sample(&mut r));

    let mut groups = Vec::with_capacity(n_groups);
    for g in 0..n_groups as u64 {
        let candidate = |latent: DenseVector, label: u8| LabeledExample {
            features: &mixing * latent,
            label,
            group_id: Some(g),
        };
        let mut q = draw() * QUERY_SPREAD;
        q[0] += 1.0;
        let positive = candidate(draw() + q * relevance_signal, 1);
        let negatives = (0..k_negatives).map(|_| candidate(draw(), 0)).collect();
        groups.push(RankingGroup {
            group_id: g,
            positive,
            negatives,
        });
    }
    Ok(groups)
}

/// `x <- R x + t + noise`; the identity spec leaves a dataset untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    #[serde(with = "crate::checkpoint::vector")]
    pub translation: DenseVector,
    pub rotation_seed: Option<u64>,
    pub noise_scale: f64,
}

impl ShiftSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            translation: DenseVector::zeros(dim),
            rotation_seed: None,
            noise_scale: 0.0,
        }
    }

    /// Translation of total length `magnitude` spread evenly over every axis.
    pub fn uniform_translation(dim: usize, magnitude: f64) -> Self {
        Self {
            translation: DenseVector::from_element(dim, magnitude / (dim as f64).sqrt()),
            ..Self::identity(dim)
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_seed.is_none()
            && self.noise_scale == 0.0
            && self.translation.iter().all(|&t| t == 0.0)
    }
}

pub fn apply_shift(dataset: &Dataset, spec: &ShiftSpec, seed: u64) -> Result<Dataset> {
    check_dim("shift translation", dataset.dim, spec.translation.len())?;
    if !(spec.noise_scale >= 0.0) || !spec.noise_scale.is_finite() {
        return invalid("shift noise scale must be finite and >= 0");
    }
    if spec.is_identity() {
        return Ok(dataset.clone());
    }
    let rotation: Option<DenseMatrix> = spec
        .rotation_seed
        .map(|s| random_orthogonal(dataset.dim, &mut rng(s)));
    let noise = Normal::new(0.0, spec.noise_scale).expect("finite scale");
    let mut r = rng(derive_seed(seed, 0x5A1F7));
    let translate = spec.translation.iter().any(|&t| t != 0.0);

    let examples = dataset
        .examples
        .iter()
        .map(|e| {
            let mut x = match &rotation {
                Some(rot) => rot * &e.features,
                None => e.features.clone(),
            };
            if translate {
                x += &spec.translation;
            }
            if spec.noise_scale > 0.0 {
                x.apply(|v| *v += noise.sample(&mut r));
            }
            LabeledExample {
                features: x,
                label: e.label,
                group_id: e.group_id,
            }
        })
        .collect();
    Ok(Dataset {
        dim: dataset.dim,
        kind: dataset.kind,
        examples,
    })
}

pub fn write_embeddings(dataset: &Dataset) -> String {
    let mut out = format!("dim={} kind={}\n", dataset.dim, dataset.kind.as_str());
    for e in &dataset.examples {
        match e.group_id {
            Some(g) => {
                let _ = write!(out, "{g}");
            }
            None => out.push('-'),
        }
        let _ = write!(out, "\t{}\t", e.label);
        for (j, v) in e.features.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, write_embeddings(dataset))?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<Dataset> {
    parse_embeddings(&fs::read_to_string(path)?)
}

fn parse_header(line: &str, lineno: usize) -> Result<(usize, DatasetKind)> {
    let perr = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let mut dim = None;
    let mut kind = None;
    for tok in line.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => {
                dim = Some(
                    v.parse::<usize>()
                        .map_err(|e| perr(format!("bad dim {v:?}: {e}")))?,
                )
            }
            Some(("kind", v)) => {
                kind = Some(v.parse::<DatasetKind>().map_err(|e| perr(e.to_string()))?)
            }
            _ => return Err(perr(format!("unexpected header token {tok:?}"))),
        }
    }
    match (dim, kind) {
        (Some(0), _) => Err(perr("dim must be >= 1".into())),
        (Some(d), Some(k)) => Ok((d, k)),
        _ => Err(perr(
            "header must be `dim=<d> kind=<classification|ranking>`".into(),
        )),
    }
}

pub fn parse_embeddings(text: &str) -> Result<Dataset> {
    let mut header = None;
    let mut examples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((dim, kind)) = header else {
            header = Some(parse_header(line, lineno)?);
            continue;
        };
        let perr = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(perr(format!(
                "expected 3 tab-separated fields, found {}",
                cols.len()
            )));
        }
        let group_id = match cols[0] {
            "-" | "" => None,
            g => Some(
                g.parse::<u64>()
                    .map_err(|e| perr(format!("bad group id {g:?}: {e}")))?,
            ),
        };
        if kind == DatasetKind::Ranking && group_id.is_none() {
            return Err(perr("ranking rows need a group id".into()));
        }
        let label = match cols[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(perr(format!("label must be 0 or 1, got {other:?}"))),
        };
        let features = cols[2]
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| perr(format!("bad feature {v:?}: {e}")))
                    .and_then(|x| {
                        if x.is_finite() {
                            Ok(x)
                        } else {
                            Err(perr(format!("non-finite feature {v:?}")))
                        }
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        if features.len() != dim {
            return Err(perr(format!(
                "expected {dim} features, found {}",
                features.len()
            )));
        }
        examples.push(LabeledExample {
            features: DenseVector::from_vec(features),
            label,
            group_id,
        });
    }
    let Some((dim, kind)) = header else {
        return invalid("no examples");
    };
    if examples.is_empty() {
        return invalid("no examples");
    }
    let ds = Dataset {
        dim,
        kind,
        examples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Seeded shuffle of `0..n` cut into contiguous batches; the last may be short.
pub fn batch_iter(n: usize, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return invalid("batch size must be >= 1");
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(shuffle_seed));
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
