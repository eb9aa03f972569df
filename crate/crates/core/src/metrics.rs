//! Expected calibration error with reliability bins, R10@1, MAP, and
//! multi-run aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBins {
    pub bins: Vec<ReliabilityBin>,
    pub total: usize,
    pub ece: f64,
}

impl ReliabilityBins {
    /// One row per bin: `lower,upper,count,mean_confidence,mean_accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower,upper,count,mean_confidence,mean_accuracy\n");
        for b in &self.bins {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                b.lower, b.upper, b.count, b.mean_confidence, b.mean_accuracy
            );
        }
        out
    }
}

fn bin_edge(i: usize, m: usize) -> f64 {
    i as f64 / m as f64
}

/// Index of the bin `((i)/m, (i+1)/m]` holding `c`; zero goes to the first bin.
pub fn bin_index(c: f64, m: usize) -> usize {
    let mut i = ((c * m as f64).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
    // correct for rounding in c * m so the edges agree with bin_edge
    while i > 0 && c <= bin_edge(i, m) {
        i -= 1;
    }
    while i + 1 < m && c > bin_edge(i + 1, m) {
        i += 1;
    }
    i
}

/// Binary-classifier confidence and correctness: confidence is `max(p, 1-p)`
/// and the prediction is positive only when `p > 0.5`.
pub fn confidence_and_correct(prob: f64, label: u8) -> (f64, bool) {
    let predicted = u8::from(prob > 0.5);
    (prob.max(1.0 - prob), predicted == label)
}

pub fn ece(confidences: &[f64], correct: &[bool], m: usize) -> Result<ReliabilityBins> {
    check_dim("ece inputs", confidences.len(), correct.len())?;
    if confidences.is_empty() {
        return invalid("ECE of an empty prediction set");
    }
    if m == 0 {
        return invalid("ECE needs at least one bin");
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return invalid(format!("confidence {c} outside [0, 1]"));
    }

    let mut counts = vec![0usize; m];
    let mut conf_sum = vec![0.0; m];
    let mut acc_sum = vec![0.0; m];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let i = bin_index(c, m);
        counts[i] += 1;
        conf_sum[i] += c;
        acc_sum[i] += f64::from(u8::from(ok));
    }

    let n = confidences.len() as f64;
    let mut total = 0.0;
    let bins = (0..m)
        .map(|i| {
            let (mean_confidence, mean_accuracy) = if counts[i] > 0 {
                let k = counts[i] as f64;
                (conf_sum[i] / k, acc_sum[i] / k)
            } else {
                (0.0, 0.0)
            };
            total += counts[i] as f64 / n * (mean_accuracy - mean_confidence).abs();
            ReliabilityBin {
                lower: bin_edge(i, m),
                upper: bin_edge(i + 1, m),
                count: counts[i],
                mean_confidence,
                mean_accuracy,
            }
        })
        .collect();

    Ok(ReliabilityBins {
        bins,
        total: confidences.len(),
        ece: total,
    })
}

/// ECE over binary probabilities and labels using max-class confidence.
pub fn binary_ece(probs: &[f64], labels: &[u8], m: usize) -> Result<ReliabilityBins> {
    check_dim("binary ece inputs", probs.len(), labels.len())?;
    let (conf, correct): (Vec<f64>, Vec<bool>) = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| confidence_and_correct(p, y))
        .unzip();
    ece(&conf, &correct, m)
}

/// Candidate scores for one ranking group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub scores: Vec<f64>,
    pub positive: usize,
}

impl GroupScores {
    /// Builds from per-candidate labels; exactly one label must be 1.
    pub fn from_labels(scores: Vec<f64>, labels: &[u8]) -> Result<Self> {
        check_dim("group scores", labels.len(), scores.len())?;
        let positives: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1)
            .map(|(i, _)| i)
            .collect();
        if positives.len() != 1 {
            return invalid(format!(
                "ranking group must have exactly one positive, found {}",
                positives.len()
            ));
        }
        Ok(Self {
            scores,
            positive: positives[0],
        })
    }

    /// 1-based rank of the positive; equal-scored negatives rank ahead of it.
    pub fn positive_rank(&self) -> Result<(usize, bool)> {
        if self.positive >= self.scores.len() {
            return invalid("positive index out of range");
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return invalid("non-finite ranking score");
        }
        let p = self.scores[self.positive];
        let mut ahead = 0;
        let mut tied = false;
        for (i, &s) in self.scores.iter().enumerate() {
            if i == self.positive {
                continue;
            }
            if s > p {
                ahead += 1;
            } else if s == p {
                ahead += 1;
                tied = true;
            }
        }
        Ok((ahead + 1, tied))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub r10_at_1: f64,
    pub map: f64,
    pub groups: usize,
    /// Groups where the positive shared its score with a negative.
    pub ties: usize,
}

pub fn ranking_metrics(groups: &[GroupScores]) -> Result<RankingResult> {
    if groups.is_empty() {
        return invalid("no ranking groups");
    }
    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut ties = 0usize;
    for g in groups {
        let (rank, tied) = g.positive_rank()?;
        if rank == 1 {
            hits += 1;
        }
        ties += usize::from(tied);
        ap += 1.0 / rank as f64;
    }
    let n = groups.len() as f64;
    Ok(RankingResult {
        r10_at_1: hits as f64 / n,
        map: ap / n,
        groups: groups.len(),
        ties,
    })
}

/// Fraction of groups whose positive scores strictly above every negative.
pub fn recall_at_1(groups: &[GroupScores]) -> Result<f64> {
    Ok(ranking_metrics(groups)?.r10_at_1)
}

/// Mean over groups of `1 / rank(positive)`.
pub fn mean_average_precision(groups: &[GroupScores]) -> Result<f64> {
    Ok(ranking_metrics(groups)?.map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(runs)`; absent for a single run.
    pub stderr: Option<f64>,
    pub runs: usize,
}

pub fn aggregate_runs(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return invalid("cannot aggregate zero runs");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = (values.len() >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(MetricSummary {
        mean,
        stderr,
        runs: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent binning: scan edges linearly.
    fn brute_force_ece(conf: &[f64], correct: &[bool], m: usize) -> f64 {
        let n = conf.len() as f64;
        let mut total = 0.0;
        for i in 0..m {
            let lo = i as f64 / m as f64;
            let hi = (i + 1) as f64 / m as f64;
            let members: Vec<usize> = (0..conf.len())
                .filter(|&k| (conf[k] > lo || (i == 0 && conf[k] == 0.0)) && conf[k] <= hi)
                .collect();
            if members.is_empty() {
                continue;
            }
            let k = members.len() as f64;
            let c = members.iter().map(|&j| conf[j]).sum::<f64>() / k;
            let a = members.iter().filter(|&&j| correct[j]).count() as f64 / k;
            total += k / n * (a - c).abs();
        }
        total
    }

    #[test]
    fn perfect_predictions() {
        let r = ece(&[1.0; 5], &[true; 5], 10).unwrap();
        assert_eq!(r.ece, 0.0);
        assert_eq!(r.bins.iter().map(|b| b.count).sum::<usize>(), 5);
    }

    #[test]
    fn hand_case() {
        let r = ece(&[0.95, 0.95, 0.65], &[true, false, true], 10).unwrap();
        let expected = 2.0 / 3.0 * (0.5f64 - 0.95).abs() + 1.0 / 3.0 * (1.0f64 - 0.65).abs();
        assert!((r.ece - expected).abs() < 1e-12);
        assert!((r.ece - 0.416_666_666_666_666_7).abs() < 1e-9);
    }

    #[test]
    fn edge_confidences_go_left() {
        for k in 0..=10 {
            let c = k as f64 / 10.0;
            let i = bin_index(c, 10);
            if k == 0 {
                assert_eq!(i, 0);
            } else {
                assert_eq!(i, k - 1, "c={c}");
            }
        }
        let conf = [0.9, 0.9, 0.3, 0.0, 0.7, 0.2, 0.6];
        let correct = [true, false, true, false, true, true, false];
        let r = ece(&conf, &correct, 10).unwrap();
        assert_eq!(r.bins[8].count, 2);
        assert!((r.ece - brute_force_ece(&conf, &correct, 10)).abs() < 1e-12);
    }

    #[test]
    fn ece_rejects_bad_input() {
        assert!(ece(&[], &[], 10).is_err());
        assert!(ece(&[0.5], &[true, false], 10).is_err());
        assert!(ece(&[1.5], &[true], 10).is_err());
    }

    #[test]
    fn csv_has_one_row_per_bin() {
        let r = ece(&[0.55, 0.8], &[true, false], 10).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 11);
        assert!(csv.starts_with("lower,upper,count"));
    }

    #[test]
    fn binary_confidence_tie_goes_negative() {
        assert_eq!(confidence_and_correct(0.5, 0), (0.5, true));
        assert_eq!(confidence_and_correct(0.5, 1), (0.5, false));
        assert_eq!(confidence_and_correct(0.2, 0), (0.8, true));
    }

    fn group_with_rank(rank: usize) -> GroupScores {
        // positive at index 0 with `rank - 1` negatives above it
        let mut scores = vec![0.5];
        for i in 0..9 {
            scores.push(if i < rank - 1 { 0.9 } else { 0.1 });
        }
        GroupScores {
            scores,
            positive: 0,
        }
    }

    #[test]
    fn ranking_cases() {
        let all_top: Vec<_> = (0..3).map(|_| group_with_rank(1)).collect();
        assert_eq!(recall_at_1(&all_top).unwrap(), 1.0);
        assert_eq!(mean_average_precision(&all_top).unwrap(), 1.0);

        let tie = GroupScores {
            scores: vec![0.7, 0.7, 0.1],
            positive: 0,
        };
        let r = ranking_metrics(&[tie]).unwrap();
        assert_eq!(r.r10_at_1, 0.0);
        assert_eq!(r.ties, 1);

        let mixed: Vec<_> = [1, 3, 1, 2].iter().map(|&k| group_with_rank(k)).collect();
        assert_eq!(recall_at_1(&mixed).unwrap(), 0.5);

        assert!((mean_average_precision(&[group_with_rank(3)]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let two = [group_with_rank(1), group_with_rank(2)];
        assert_eq!(mean_average_precision(&two).unwrap(), 0.75);
    }

    #[test]
    fn group_validation() {
        assert!(GroupScores::from_labels(vec![0.1, 0.2], &[1, 1]).is_err());
        assert!(GroupScores::from_labels(vec![0.1, 0.2], &[0, 0]).is_err());
        let g = GroupScores::from_labels(vec![0.1, 0.2], &[0, 1]).unwrap();
        assert_eq!(g.positive, 1);
        assert!(ranking_metrics(&[]).is_err());
    }

    #[test]
    fn aggregation() {
        let one = aggregate_runs(&[0.3]).unwrap();
        assert_eq!(one.mean, 0.3);
        assert_eq!(one.stderr, None);
        let flat = aggregate_runs(&[0.1, 0.1, 0.1]).unwrap();
        assert!((flat.mean - 0.1).abs() < 1e-15);
        assert!(flat.stderr.unwrap().abs() < 1e-15);
        let two = aggregate_runs(&[0.2, 0.4]).unwrap();
        assert!((two.mean - 0.3).abs() < 1e-15);
        assert!((two.stderr.unwrap() - 0.1).abs() < 1e-12);
        assert!(aggregate_runs(&[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ece_bounded_and_permutation_invariant(
                items in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
                rot in 0usize..60,
            ) {
                let conf: Vec<f64> = items.iter().map(|x| x.0).collect();
                let ok: Vec<bool> = items.iter().map(|x| x.1).collect();
                let r = ece(&conf, &ok, 10).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.ece));
                prop_assert!((r.ece - brute_force_ece(&conf, &ok, 10)).abs() < 1e-12);

                let k = rot % conf.len();
                let mut c2 = conf.clone();
                let mut o2 = ok.clone();
                c2.rotate_left(k);
                o2.rotate_left(k);
                c2.reverse();
                o2.reverse();
                let r2 = ece(&c2, &o2, 10).unwrap();
                prop_assert!((r.ece - r2.ece).abs() < 1e-12);
            }

            #[test]
            fn recall_bounded_by_map_and_monotone_invariant(
                groups in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 10), 0usize..10), 1..30)
            ) {
                let gs: Vec<GroupScores> = groups
                    .iter()
                    .map(|(s, p)| GroupScores { scores: s.clone(), positive: *p })
                    .collect();
                let r = ranking_metrics(&gs).unwrap();
                prop_assert!(r.r10_at_1 <= r.map + 1e-15);

                let transformed: Vec<GroupScores> = gs
                    .iter()
                    .map(|g| GroupScores {
                        scores: g.scores.iter().map(|s| 3.0 * s.powi(3) + 1.0).collect(),
                        positive: g.positive,
                    })
                    .collect();
                let t = ranking_metrics(&transformed).unwrap();
                prop_assert_eq!(r.r10_at_1, t.r10_at_1);
                prop_assert!((r.map - t.map).abs() < 1e-15);
            }
        }
    }
}
