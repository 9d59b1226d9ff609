//! Classification metrics and the convergence-variance statistic.
//!
//! Scores are probabilities of class 1. AuPR uses average-precision step
//! interpolation; the negative-class AuPR inverts scores and labels; the
//! harmonic mean of the two is the headline number for imbalanced data.
//! `mstd` quantifies convergence stability: the population standard
//! deviation of a metric curve's residual after median filtering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("label {0} is not 0 or 1")]
    BadLabel(usize),
    #[error("metric undefined: only class {0} present")]
    SingleClass(usize),
    #[error("mstd needs a curve of length >= 2, got {0}")]
    CurveTooShort(usize),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Scored binary predictions: probability of class 1 per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPredictions {
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ScoredPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricError::Empty);
        }
        for &s in &scores {
            if !(0.0..=1.0).contains(&s) {
                return Err(MetricError::ScoreOutOfRange(s));
            }
        }
        for &l in &labels {
            if l > 1 {
                return Err(MetricError::BadLabel(l));
            }
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn require_both_classes(&self) -> Result<()> {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        if pos == 0 {
            return Err(MetricError::SingleClass(0));
        }
        if pos == self.len() {
            return Err(MetricError::SingleClass(1));
        }
        Ok(())
    }

    /// Flips the problem: class 0 becomes the positive class.
    fn inverted(&self) -> Self {
        Self {
            scores: self.scores.iter().map(|s| 1.0 - s).collect(),
            labels: self.labels.iter().map(|l| 1 - l).collect(),
        }
    }
}

/// One metric observed once per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub name: String,
    pub values: Vec<f64>,
}

impl MetricCurve {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

/// Fraction misclassified at `threshold`; ties predict class 1.
pub fn error_rate(p: &ScoredPredictions, threshold: f64) -> Result<f64> {
    if p.is_empty() {
        return Err(MetricError::Empty);
    }
    let wrong = p
        .scores
        .iter()
        .zip(&p.labels)
        .filter(|&(&s, &l)| usize::from(s >= threshold) != l)
        .count();
    Ok(wrong as f64 / p.len() as f64)
}

pub fn accuracy(p: &ScoredPredictions, threshold: f64) -> Result<f64> {
    Ok(1.0 - error_rate(p, threshold)?)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half (the Mann-Whitney formulation, computed via average
/// ranks).
pub fn auroc(p: &ScoredPredictions) -> Result<f64> {
    p.require_both_classes()?;
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p.scores[a].partial_cmp(&p.scores[b]).expect("scores are finite"));
    // Average ranks over tie groups (1-based ranks).
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && p.scores[order[j]] == p.scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            rank[idx] = avg;
        }
        i = j;
    }
    let pos = p.labels.iter().filter(|&&l| l == 1).count() as f64;
    let neg = n as f64 - pos;
    let rank_sum: f64 = (0..n).filter(|&i| p.labels[i] == 1).map(|i| rank[i]).sum();
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Area under the precision-recall curve in average-precision form:
/// sum of (R_i - R_{i-1}) * P_i over descending distinct score thresholds.
pub fn average_precision(p: &ScoredPredictions) -> Result<f64> {
    p.require_both_classes()?;
    let n = p.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        p.scores[b]
            .partial_cmp(&p.scores[a])
            .expect("scores are finite")
    });
    let total_pos = p.labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < n {
        // Consume a whole tie group before emitting a threshold point.
        let mut j = i;
        while j < n && p.scores[order[j]] == p.scores[order[i]] {
            tp += usize::from(p.labels[order[j]] == 1);
            seen += 1;
            j += 1;
        }
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / total_pos;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Harmonic mean of the positive-class and negative-class AuPRs.
pub fn aupr_harmonic(p: &ScoredPredictions) -> Result<f64> {
    let pos = average_precision(p)?;
    let neg = average_precision(&p.inverted())?;
    if pos + neg == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * pos * neg / (pos + neg))
}

/// Precision, recall and F1 for one class at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Threshold-0.5 precision/recall/F1 for `class` (ties predict class 1).
pub fn precision_recall_f1(p: &ScoredPredictions, class: usize, threshold: f64) -> Result<PrfScores> {
    if p.is_empty() {
        return Err(MetricError::Empty);
    }
    if class > 1 {
        return Err(MetricError::BadLabel(class));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in p.scores.iter().zip(&p.labels) {
        let predicted = usize::from(s >= threshold);
        if predicted == class && l == class {
            tp += 1;
        } else if predicted == class {
            fp += 1;
        } else if l == class {
            fn_ += 1;
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrfScores { precision, recall, f1 })
}

/// Median filter with window `2w + 1` and replicate padding at the
/// boundaries. `w = 0` is the identity.
pub fn median_filter(x: &MetricCurve, w: usize) -> MetricCurve {
    let n = x.values.len();
    let mut out = Vec::with_capacity(n);
    let mut window = Vec::with_capacity(2 * w + 1);
    for i in 0..n {
        window.clear();
        for offset in -(w as isize)..=(w as isize) {
            let idx = (i as isize + offset).clamp(0, n as isize - 1) as usize;
            window.push(x.values[idx]);
        }
        window.sort_by(|a, b| a.partial_cmp(b).expect("curve values are finite"));
        out.push(window[w]);
    }
    MetricCurve::new(format!("medfilt{w}({})", x.name), out)
}

/// Convergence variance: population standard deviation of
/// `x - median_filter(x, w)`. Window default is w = 5.
pub const MSTD_DEFAULT_W: usize = 5;

pub fn mstd(x: &MetricCurve, w: usize) -> Result<f64> {
    let n = x.values.len();
    if n < 2 {
        return Err(MetricError::CurveTooShort(n));
    }
    let filtered = median_filter(x, w);
    let residual: Vec<f64> = x
        .values
        .iter()
        .zip(&filtered.values)
        .map(|(a, b)| a - b)
        .collect();
    let mean = residual.iter().sum::<f64>() / n as f64;
    let var = residual.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n as f64;
    Ok(var.sqrt())
}

pub fn mstd_default(x: &MetricCurve) -> Result<f64> {
    mstd(x, MSTD_DEFAULT_W)
}

/// Mean and population standard deviation of a sample.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn preds(scores: &[f64], labels: &[usize]) -> ScoredPredictions {
        ScoredPredictions::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    // Brute-force oracles, kept deliberately naive and separate from the
    // fast implementations above.

    fn auroc_pair_oracle(p: &ScoredPredictions) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..p.len() {
            if p.labels[i] != 1 {
                continue;
            }
            for j in 0..p.len() {
                if p.labels[j] != 0 {
                    continue;
                }
                pairs += 1.0;
                if p.scores[i] > p.scores[j] {
                    wins += 1.0;
                } else if p.scores[i] == p.scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    fn ap_threshold_sweep_oracle(p: &ScoredPredictions) -> f64 {
        let mut thresholds: Vec<f64> = p.scores.clone();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let total_pos = p.labels.iter().filter(|&&l| l == 1).count() as f64;
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for &t in &thresholds {
            let predicted_pos: Vec<usize> = (0..p.len()).filter(|&i| p.scores[i] >= t).collect();
            let tp = predicted_pos.iter().filter(|&&i| p.labels[i] == 1).count() as f64;
            let precision = tp / predicted_pos.len() as f64;
            let recall = tp / total_pos;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        ap
    }

    fn aupr_harmonic_oracle(p: &ScoredPredictions) -> f64 {
        let a = ap_threshold_sweep_oracle(p);
        let b = ap_threshold_sweep_oracle(&p.inverted());
        if a + b == 0.0 {
            0.0
        } else {
            2.0 * a * b / (a + b)
        }
    }

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(&preds(&[0.9, 0.1], &[1, 0]), 0.5).unwrap(), 0.0);
        assert_eq!(error_rate(&preds(&[0.9, 0.1], &[0, 1]), 0.5).unwrap(), 1.0);
        // [0.6 -> 1 ok, 0.6 -> 1 wrong, 0.4 -> 0 ok] gives 1/3.
        let p = preds(&[0.6, 0.6, 0.4], &[1, 0, 0]);
        let er = error_rate(&p, 0.5).unwrap();
        assert!((er - 1.0 / 3.0).abs() < 1e-15);
        // Same count when the ties sit exactly on the threshold: ties
        // predict class 1.
        let er_tie = error_rate(&p, 0.6).unwrap();
        assert!((er_tie - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&p, 0.5).unwrap(), 1.0 - er);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&preds(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&preds(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0])).unwrap(), 0.5);
        assert!(matches!(
            auroc(&preds(&[0.5, 0.4], &[1, 1])),
            Err(MetricError::SingleClass(1))
        ));
    }

    #[test]
    fn auroc_matches_pair_oracle_on_random_sets() {
        let mut rng = StdRng::seed_from_u64(2024);
        for _ in 0..300 {
            let n = rng.gen_range(2..21);
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..=10) as f64) / 10.0).collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 1;
            labels[n - 1] = 0;
            let p = preds(&scores, &labels);
            let fast = auroc(&p).unwrap();
            let brute = auroc_pair_oracle(&p);
            assert!((fast - brute).abs() < 1e-12, "{scores:?} {labels:?}");
        }
    }

    #[test]
    fn aupr_perfect_cases() {
        let p = preds(&[0.9, 0.8, 0.3, 0.2], &[1, 1, 0, 0]);
        assert_eq!(average_precision(&p).unwrap(), 1.0);
        assert_eq!(aupr_harmonic(&p).unwrap(), 1.0);
    }

    #[test]
    fn aupr_exhaustive_small_inputs() {
        // Every labeling and 9-point-grid score assignment for lengths <= 4.
        let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        for len in 2usize..=4 {
            let mut score_idx = vec![0usize; len];
            loop {
                for label_bits in 0..(1u32 << len) {
                    let labels: Vec<usize> =
                        (0..len).map(|i| ((label_bits >> i) & 1) as usize).collect();
                    let pos = labels.iter().sum::<usize>();
                    if pos == 0 || pos == len {
                        continue;
                    }
                    let scores: Vec<f64> = score_idx.iter().map(|&i| grid[i]).collect();
                    let p = preds(&scores, &labels);
                    let fast = aupr_harmonic(&p).unwrap();
                    let brute = aupr_harmonic_oracle(&p);
                    assert!(
                        (fast - brute).abs() < 1e-12,
                        "scores {scores:?} labels {labels:?}: {fast} vs {brute}"
                    );
                    let fast_roc = auroc(&p).unwrap();
                    let brute_roc = auroc_pair_oracle(&p);
                    assert!((fast_roc - brute_roc).abs() < 1e-12);
                }
                // Next grid assignment.
                let mut carry = 0;
                loop {
                    score_idx[carry] += 1;
                    if score_idx[carry] < grid.len() {
                        break;
                    }
                    score_idx[carry] = 0;
                    carry += 1;
                    if carry == len {
                        break;
                    }
                }
                if carry == len {
                    break;
                }
            }
        }
    }

    #[test]
    fn aupr_random_lengths_5_to_12_match_oracle() {
        let mut rng = StdRng::seed_from_u64(515);
        for len in 5usize..=12 {
            for _ in 0..200 {
                let scores: Vec<f64> =
                    (0..len).map(|_| rng.gen_range(1..=9) as f64 / 10.0).collect();
                let mut labels: Vec<usize> = (0..len).map(|_| rng.gen_range(0..2)).collect();
                labels[0] = 1;
                labels[len - 1] = 0;
                let p = preds(&scores, &labels);
                let fast = aupr_harmonic(&p).unwrap();
                let brute = aupr_harmonic_oracle(&p);
                assert!((fast - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn median_filter_examples() {
        let constant = MetricCurve::new("c", vec![3.5; 7]);
        assert_eq!(median_filter(&constant, 2).values, vec![3.5; 7]);

        // Spike case with w = 1 and replicate padding, windows by hand:
        // [0,0,100] -> 0, [0,100,0] -> 0, [100,0,0] -> 0, [0,0,0] -> 0 x2.
        let spike = MetricCurve::new("s", vec![0.0, 100.0, 0.0, 0.0, 0.0]);
        assert_eq!(median_filter(&spike, 1).values, vec![0.0; 5]);

        let any = MetricCurve::new("a", vec![4.0, -2.0, 9.0]);
        assert_eq!(median_filter(&any, 0).values, any.values);
    }

    #[test]
    fn mstd_contract() {
        let constant = MetricCurve::new("c", vec![0.25; 40]);
        assert_eq!(mstd_default(&constant).unwrap(), 0.0);

        // Spike residual [0,100,0,0,0]: mean 20, population variance
        // (400 + 6400 + 3*400)/5 = 1600, std 40.
        let spike = MetricCurve::new("s", vec![0.0, 100.0, 0.0, 0.0, 0.0]);
        assert!((mstd(&spike, 1).unwrap() - 40.0).abs() < 1e-12);

        assert!(matches!(
            mstd(&MetricCurve::new("x", vec![1.0]), 5),
            Err(MetricError::CurveTooShort(1))
        ));
    }

    #[test]
    fn mstd_shift_invariance_exact() {
        // Dyadic values and an integer shift: each sum is exact, so the
        // invariance holds bit-for-bit.
        let values = vec![0.5, 1.5, 0.25, 8.0, 0.75, 3.5, 2.0, 0.5, 1.25, 6.0];
        let x = MetricCurve::new("x", values.clone());
        let shifted = MetricCurve::new("x+c", values.iter().map(|v| v + 7.0).collect());
        assert_eq!(mstd_default(&x).unwrap(), mstd_default(&shifted).unwrap());
        assert_eq!(mstd(&x, 1).unwrap(), mstd(&shifted, 1).unwrap());
    }

    #[test]
    fn mstd_zero_iff_equal_to_own_filtering() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..50 {
            let n = rng.gen_range(2..30);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let x = MetricCurve::new("x", values);
            let m = mstd(&x, 2).unwrap();
            let filtered = median_filter(&x, 2);
            let equal = x.values == filtered.values;
            assert!(m >= 0.0);
            assert_eq!(m == 0.0, equal, "mstd == 0 iff curve equals its filtering");
        }
    }

    #[test]
    fn precision_recall_f1_basics() {
        let p = preds(&[0.9, 0.8, 0.4, 0.3], &[1, 0, 1, 0]);
        let pos = precision_recall_f1(&p, 1, 0.5).unwrap();
        assert!((pos.precision - 0.5).abs() < 1e-15);
        assert!((pos.recall - 0.5).abs() < 1e-15);
        assert!((pos.f1 - 0.5).abs() < 1e-15);
        let neg = precision_recall_f1(&p, 0, 0.5).unwrap();
        assert!((neg.precision - 0.5).abs() < 1e-15);
    }

    #[test]
    fn validation_errors() {
        assert!(matches!(
            ScoredPredictions::new(vec![], vec![]),
            Err(MetricError::Empty)
        ));
        assert!(matches!(
            ScoredPredictions::new(vec![0.5], vec![0, 1]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ScoredPredictions::new(vec![1.5], vec![0]),
            Err(MetricError::ScoreOutOfRange(_))
        ));
        assert!(matches!(
            ScoredPredictions::new(vec![0.5], vec![2]),
            Err(MetricError::BadLabel(2))
        ));
    }

    proptest! {
        #[test]
        fn mstd_nonnegative_and_shift_invariant_for_integers(
            values in prop::collection::vec(-50i32..50, 2..40),
            shift in -20i32..20,
        ) {
            let x = MetricCurve::new("x", values.iter().map(|&v| v as f64).collect());
            let y = MetricCurve::new("y", values.iter().map(|&v| (v + shift) as f64).collect());
            let mx = mstd_default(&x).unwrap();
            let my = mstd_default(&y).unwrap();
            prop_assert!(mx >= 0.0);
            prop_assert_eq!(mx, my);
        }

        #[test]
        fn error_rate_is_one_minus_accuracy(
            scores in prop::collection::vec(0.0f64..=1.0, 1..30),
        ) {
            let labels: Vec<usize> = scores.iter().map(|&s| usize::from(s > 0.4)).collect();
            let p = ScoredPredictions::new(scores, labels).unwrap();
            let er = error_rate(&p, 0.5).unwrap();
            let acc = accuracy(&p, 0.5).unwrap();
            prop_assert!((er + acc - 1.0).abs() < 1e-15);
        }
    }
}
