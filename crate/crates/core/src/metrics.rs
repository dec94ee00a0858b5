//! Calibration, coverage, discrimination and uncertainty metrics.
//!
//! All entropies use the natural logarithm, with `0·ln 0 = 0`.

use serde::{Deserialize, Serialize};

use crate::conformal::{PredictionSet, ProbVector};
use crate::error::{check_open_unit, Error, Result};
use crate::significance::mid_ranks;

/// Number of set-size bins used for coverage diagnostics by default.
pub const DEFAULT_SIZE_BINS: usize = 75;

/// Default number of confidence bins for [`ece`].
pub const DEFAULT_ECE_BINS: usize = 10;

/// One bin of a reliability or set-size diagram. `target` is the bin
/// accuracy for [`ece`] and the bin coverage for [`coverage_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_value: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub value: f64,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    /// Mean set size as a fraction of the vocabulary.
    pub width: f64,
    /// Size-stratified coverage: the worst coverage over non-empty bins.
    pub ssc: f64,
    /// Expected coverage gap: size-weighted undercoverage relative to `1−α`.
    pub ecg: f64,
    pub bins: Vec<Bin>,
}

fn check_lengths(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::EmptySample);
    }
    Ok(())
}

fn check_confidences(confidences: &[f64]) -> Result<()> {
    match confidences
        .iter()
        .enumerate()
        .find(|(_, c)| !(0.0..=1.0).contains(*c))
    {
        Some((index, &value)) => Err(Error::param(
            "confidences",
            format!("confidence {value} at position {index} is not in [0, 1]"),
        )),
        None => Ok(()),
    }
}

/// Equal-width bin index over `[0, upper]`; the right edge joins the last bin.
fn bin_index(value: f64, upper: f64, num_bins: usize) -> usize {
    ((value / upper * num_bins as f64).floor() as usize).min(num_bins - 1)
}

/// Accumulates `(value, target)` pairs into equal-width bins, returning
/// only the non-empty ones.
fn fill_bins(values: impl Iterator<Item = (f64, f64)>, upper: f64, num_bins: usize) -> Vec<Bin> {
    let mut sums = vec![(0usize, 0.0, 0.0); num_bins];
    for (value, target) in values {
        let slot = &mut sums[bin_index(value, upper, num_bins)];
        slot.0 += 1;
        slot.1 += value;
        slot.2 += target;
    }
    let width = upper / num_bins as f64;
    sums.into_iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(m, (count, value, target))| Bin {
            lower: m as f64 * width,
            upper: (m + 1) as f64 * width,
            count,
            mean_value: value / count as f64,
            target: target / count as f64,
        })
        .collect()
}

/// Expected calibration error over `num_bins` equal-width confidence bins.
pub fn ece(confidences: &[f64], correct: &[bool], num_bins: usize) -> Result<BinReport> {
    check_lengths(confidences.len(), correct.len())?;
    check_confidences(confidences)?;
    if num_bins == 0 {
        return Err(Error::param("num_bins", "need at least one bin"));
    }
    let n = confidences.len() as f64;
    let pairs = confidences
        .iter()
        .zip(correct)
        .map(|(&c, &ok)| (c, f64::from(u8::from(ok))));
    let bins = fill_bins(pairs, 1.0, num_bins);
    let value = bins
        .iter()
        .map(|b| b.count as f64 / n * (b.target - b.mean_value).abs())
        .sum();
    Ok(BinReport { value, bins })
}

/// Coverage diagnostics for prediction sets over a vocabulary of size `vocab`.
pub fn coverage_report(
    sets: &[PredictionSet],
    labels: &[usize],
    alpha: f64,
    num_size_bins: usize,
    vocab: usize,
) -> Result<CoverageReport> {
    check_lengths(sets.len(), labels.len())?;
    let sizes: Vec<usize> = sets.iter().map(PredictionSet::len).collect();
    let covered: Vec<bool> = sets
        .iter()
        .zip(labels)
        .map(|(s, &y)| s.contains(y))
        .collect();
    coverage_from_sizes(&sizes, &covered, alpha, num_size_bins, vocab)
}

/// [`coverage_report`] on precomputed set sizes and coverage flags.
pub fn coverage_from_sizes(
    sizes: &[usize],
    covered: &[bool],
    alpha: f64,
    num_size_bins: usize,
    vocab: usize,
) -> Result<CoverageReport> {
    check_lengths(sizes.len(), covered.len())?;
    check_open_unit("alpha", alpha)?;
    if num_size_bins == 0 {
        return Err(Error::param("num_size_bins", "need at least one bin"));
    }
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if vocab == 0 || largest > vocab {
        return Err(Error::param(
            "vocab",
            format!("vocabulary size {vocab} is smaller than the largest set ({largest})"),
        ));
    }
    let n = sizes.len() as f64;
    let hits = covered.iter().filter(|&&c| c).count() as f64;
    let width = sizes.iter().sum::<usize>() as f64 / (n * vocab as f64);
    let pairs = sizes
        .iter()
        .zip(covered)
        .map(|(&s, &c)| (s as f64, f64::from(u8::from(c))));
    let bins = fill_bins(pairs, vocab as f64, num_size_bins);
    let ssc = bins.iter().map(|b| b.target).fold(f64::INFINITY, f64::min);
    let ecg = bins
        .iter()
        .map(|b| b.count as f64 / n * (1.0 - alpha - b.target).max(0.0))
        .sum();
    Ok(CoverageReport {
        coverage: hits / n,
        width,
        ssc,
        ecg,
        bins,
    })
}

/// Mean squared difference between confidence and correctness.
pub fn brier(confidences: &[f64], correct: &[bool]) -> Result<f64> {
    check_lengths(confidences.len(), correct.len())?;
    check_confidences(confidences)?;
    let total: f64 = confidences
        .iter()
        .zip(correct)
        .map(|(&c, &ok)| {
            let d = c - f64::from(u8::from(ok));
            d * d
        })
        .sum();
    Ok(total / confidences.len() as f64)
}

fn check_scores(scores: &[f64]) -> Result<()> {
    match scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        Some((index, &value)) => Err(Error::NonFinite { index, value }),
        None => Ok(()),
    }
}

fn class_counts(labels: &[bool]) -> Result<(usize, usize)> {
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Undefined("labels contain a single class".into()));
    }
    Ok((positives, negatives))
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    mid_ranks(values).0
}

/// Area under the ROC curve; higher scores indicate the positive class and
/// tied scores count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    check_scores(scores)?;
    let (pos, neg) = class_counts(labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Area under the precision-recall curve as step-wise average precision:
/// `Σ (R_t − R_{t−1})·P_t` over descending distinct score thresholds.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    check_scores(scores)?;
    let (pos, _) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut recall_prev, mut area) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            tp += usize::from(labels[order[i]]);
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / pos as f64;
        area += (recall - recall_prev) * (tp as f64 / seen as f64);
        recall_prev = recall;
    }
    Ok(area)
}

/// Kendall's tau-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    check_scores(x)?;
    check_scores(y)?;
    let n = x.len();
    if n < 2 {
        return Err(Error::Undefined(
            "kendall tau needs at least two pairs".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let x_ties = tied_pairs(&run_lengths(&order, |a, b| x[a] == x[b]));
    let joint_ties = tied_pairs(&run_lengths(&order, |a, b| x[a] == x[b] && y[a] == y[b]));

    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let swaps = merge_sort_swaps(&mut ys);
    let y_ties = tied_pairs(&run_lengths(&(0..n).collect::<Vec<_>>(), |a, b| {
        ys[a] == ys[b]
    }));

    let total = (n as u64) * (n as u64 - 1) / 2;
    let denom = ((total - x_ties) as f64 * (total - y_ties) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::Undefined("kendall tau with a constant input".into()));
    }
    let numerator =
        total as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    Ok(numerator / denom)
}

fn tied_pairs(runs: &[u64]) -> u64 {
    runs.iter().map(|t| t * (t - 1) / 2).sum()
}

fn run_lengths(order: &[usize], same: impl Fn(usize, usize) -> bool) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || !same(order[i - 1], order[i]) {
            runs.push((i - start) as u64);
            start = i;
        }
    }
    runs
}

/// Sorts ascending and returns the number of strictly inverted pairs.
fn merge_sort_swaps(values: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_swaps(&mut values[..mid]) + merge_sort_swaps(&mut values[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if values[j] < values[i] {
            swaps += (mid - i) as u64;
            merged.push(values[j]);
            j += 1;
        } else {
            merged.push(values[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&values[i..mid]);
    merged.extend_from_slice(&values[j..n]);
    values.copy_from_slice(&merged);
    swaps
}

/// Largest class probability. The matching uncertainty is `1 − max_prob`.
pub fn max_prob(p: &ProbVector) -> f64 {
    p.probs().iter().copied().fold(0.0, f64::max)
}

/// Shannon entropy in nats.
pub fn predictive_entropy(p: &ProbVector) -> f64 {
    entropy(p.probs())
}

fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum::<f64>()
}

/// Difference between the two largest probabilities.
pub fn softmax_gap(p: &ProbVector) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &q in p.probs() {
        if q > first {
            second = first;
            first = q;
        } else if q > second {
            second = q;
        }
    }
    first - second
}

/// `K / (K + Σ exp z_k)` over raw logits.
pub fn dempster_shafer(logits: &[f64]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::param(
            "logits",
            format!("need at least 2 classes, got {}", logits.len()),
        ));
    }
    check_scores(logits)?;
    let k = logits.len() as f64;
    let evidence: f64 = logits.iter().map(|z| z.exp()).sum();
    Ok(k / (k + evidence))
}

/// `1 − (frequency of the modal label) / B`.
pub fn variation_ratio(predicted: &[usize]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = predicted.to_vec();
    sorted.sort_unstable();
    let mode = run_lengths(&sorted, |a, b| a == b)
        .into_iter()
        .max()
        .unwrap_or(0);
    Ok(1.0 - mode as f64 / predicted.len() as f64)
}

fn check_matrix(rows: &[ProbVector]) -> Result<usize> {
    let first = rows.first().ok_or(Error::EmptySample)?;
    let k = first.len();
    if let Some(row) = rows.iter().find(|r| r.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: row.len(),
        });
    }
    Ok(k)
}

fn mean_row(rows: &[ProbVector], k: usize) -> Vec<f64> {
    let b = rows.len() as f64;
    (0..k)
        .map(|c| rows.iter().map(|r| r.probs()[c]).sum::<f64>() / b)
        .collect()
}

/// Class-averaged population variance of the predicted probabilities
/// across `B` stochastic forward passes.
pub fn class_variance(rows: &[ProbVector]) -> Result<f64> {
    let k = check_matrix(rows)?;
    let b = rows.len() as f64;
    let means = mean_row(rows, k);
    let total: f64 = (0..k)
        .map(|c| {
            rows.iter()
                .map(|r| (r.probs()[c] - means[c]).powi(2))
                .sum::<f64>()
                / b
        })
        .sum();
    Ok(total / k as f64)
}

/// `H[mean row] − mean H[row]`: mutual information between the prediction
/// and the sampled parameters under Bayesian model averaging.
pub fn bma_mutual_information(rows: &[ProbVector]) -> Result<f64> {
    let k = check_matrix(rows)?;
    let mean_entropy = rows.iter().map(predictive_entropy).sum::<f64>() / rows.len() as f64;
    Ok(entropy(&mean_row(rows, k)) - mean_entropy)
}

/// How step-wise uncertainties are pooled into a sequence-level value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
}

pub fn aggregate(values: &[f64], how: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    check_scores(values)?;
    Ok(match how {
        Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
        Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
