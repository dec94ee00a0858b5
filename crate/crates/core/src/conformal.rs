//! Non-conformity scores, split and weighted conformal quantiles,
//! prediction-set construction and the temperature hill-climbing search.
//!
//! Classes are always ranked by a stable descending sort of their
//! probabilities, so equal masses are ordered by ascending class id.

use std::fmt;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::datastore::{Datastore, Metric};
use crate::error::{check_open_unit, Error, Result};

/// Tolerance on the total mass of a [`ProbVector`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Largest magnitude passed to `exp` when computing kernel weights.
pub const MAX_EXPONENT: f64 = 700.0;

/// A categorical distribution over `V >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidProbabilities(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidProbabilities(format!(
                "entry {i} = {p} is not in [0, 1]"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProbabilities(format!(
                "entries sum to {total}"
            )));
        }
        Ok(ProbVector { probs })
    }

    /// `softmax(logits / temperature)`, computed with the max-shift trick.
    pub fn softmax(logits: &[f64], temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::param(
                "temperature",
                format!("{temperature} must be positive"),
            ));
        }
        if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits
            .iter()
            .map(|&z| ((z - max) / temperature).exp())
            .collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        ProbVector::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    /// Always false; a valid vector has at least two classes.
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Class ids ordered by descending probability, ties by ascending id.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.probs.len()).collect();
        order.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]));
        order
    }

    pub fn argmax(&self) -> usize {
        self.ranking()[0]
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.probs.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: self.probs.len(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        ProbVector::new(probs)
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            probs: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        ProbVector::new(raw.probs).map_err(de::Error::custom)
    }
}

/// A calibrated quantile, or the sentinel for "not enough calibration mass".
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Qhat {
    Value(f64),
    /// Every class is kept. Serialised as the string `"FULL"`.
    Full,
}

impl Qhat {
    pub fn value(self) -> Option<f64> {
        match self {
            Qhat::Value(q) => Some(q),
            Qhat::Full => None,
        }
    }

    pub fn is_full(self) -> bool {
        matches!(self, Qhat::Full)
    }
}

impl fmt::Display for Qhat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Qhat::Value(q) => write!(f, "{q}"),
            Qhat::Full => f.write_str("FULL"),
        }
    }
}

impl Serialize for Qhat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Qhat::Value(q) => serializer.serialize_f64(*q),
            Qhat::Full => serializer.serialize_str("FULL"),
        }
    }
}

impl<'de> Deserialize<'de> for Qhat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Number(q) => Ok(Qhat::Value(q)),
            Repr::Text(s) if s == "FULL" => Ok(Qhat::Full),
            Repr::Text(s) => Err(de::Error::custom(format!(
                "expected a number or \"FULL\", got {s:?}"
            ))),
        }
    }
}

/// Classes retained at a calibrated quantile, in descending probability order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub indices: Vec<usize>,
    pub q_hat: Qhat,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, label: usize) -> bool {
        self.indices.contains(&label)
    }
}

/// Calibration scores paired with non-negative relevance weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedCalibration {
    scores: Vec<f64>,
    weights: Vec<f64>,
}

impl WeightedCalibration {
    pub fn new(scores: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if scores.len() != weights.len() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: weights.len(),
            });
        }
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(Error::param(
                "scores",
                format!("score {value} at position {index} is not in [0, 1]"),
            ));
        }
        if let Some((index, &value)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(Error::param(
                "weights",
                format!("weight {value} at position {index} is not finite and >= 0"),
            ));
        }
        Ok(WeightedCalibration { scores, weights })
    }

    /// Unit weights: the exchangeable special case.
    pub fn unweighted(scores: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; scores.len()];
        WeightedCalibration::new(scores, weights)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Which non-conformity score to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `1 − p[label]`
    Simple,
    /// Cumulative sorted mass up to and including the label.
    Adaptive,
}

impl ScoreKind {
    pub fn score(self, p: &ProbVector, label: usize) -> Result<f64> {
        match self {
            ScoreKind::Simple => score_simple(p, label),
            ScoreKind::Adaptive => score_adaptive(p, label),
        }
    }
}

/// `1 − p[label]`.
pub fn score_simple(p: &ProbVector, label: usize) -> Result<f64> {
    p.check_label(label)?;
    Ok(1.0 - p.probs[label])
}

/// Mass of every class ranked at or above `label`, capped at 1.
pub fn score_adaptive(p: &ProbVector, label: usize) -> Result<f64> {
    p.check_label(label)?;
    let mut cumulative = 0.0;
    for class in p.ranking() {
        cumulative += p.probs[class];
        if class == label {
            break;
        }
    }
    // Rounding can push the full mass a hair above 1.
    Ok(cumulative.min(1.0))
}

/// The `⌈(N+1)(1−α)⌉`-th smallest score, or [`Qhat::Full`] when that rank
/// exceeds `N`.
pub fn split_quantile(scores: &[f64], alpha: f64) -> Result<Qhat> {
    check_open_unit("alpha", alpha)?;
    if scores.is_empty() {
        return Err(Error::EmptySample);
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let n = scores.len();
    let rank = ((n + 1) as f64 * (1.0 - alpha)).ceil() as usize;
    if rank > n {
        return Ok(Qhat::Full);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Qhat::Value(sorted[rank.max(1) - 1]))
}

/// Smallest score whose normalised cumulative weight `Σ wᵢ/(1+Σw)` reaches
/// `1−α`, or [`Qhat::Full`] if the total normalised mass stays below it.
///
/// The comparison is done on raw weights against `(1−α)(1+Σw)`, so unit
/// weights reproduce [`split_quantile`] bit for bit.
pub fn weighted_quantile(cal: &WeightedCalibration, alpha: f64) -> Result<Qhat> {
    check_open_unit("alpha", alpha)?;
    let total: f64 = cal.weights.iter().sum();
    let target = (1.0 + total) * (1.0 - alpha);
    let mut order: Vec<usize> = (0..cal.len()).collect();
    order.sort_by(|&a, &b| cal.scores[a].total_cmp(&cal.scores[b]));
    let mut cumulative = 0.0;
    for i in order {
        cumulative += cal.weights[i];
        if cumulative >= target {
            return Ok(Qhat::Value(cal.scores[i]));
        }
    }
    Ok(Qhat::Full)
}

/// Kernel weights from neighbour keys: `exp(−d/τ)` for squared distances,
/// `exp(s/τ)` for similarities. Exponents are clamped to ±[`MAX_EXPONENT`].
pub fn rbf_weights(keys: &[f64], tau: f64, metric: Metric) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param(
            "tau",
            format!("{tau} must be positive and finite"),
        ));
    }
    let sign = if metric.is_similarity() { 1.0 } else { -1.0 };
    Ok(keys
        .iter()
        .map(|&d| (sign * d / tau).clamp(-MAX_EXPONENT, MAX_EXPONENT).exp())
        .collect())
}

/// Top-`ĉ` classes with `ĉ = sup{c' : Σ_{j≤c'} p₍ⱼ₎ < q̂} + 1` and
/// `sup ∅ = 0`. Quantiles above 1 are capped at 1.
///
/// A label with zero probability that is tied in cumulative mass with the
/// class before it can fall outside the set built from its own score.
pub fn build_set_adaptive(p: &ProbVector, q_hat: Qhat) -> Result<PredictionSet> {
    let ranking = p.ranking();
    let size = match q_hat {
        Qhat::Full => ranking.len(),
        Qhat::Value(q) => {
            let q = check_qhat(q)?.min(1.0);
            let mut below = 0;
            let mut cumulative = 0.0;
            for &class in &ranking {
                cumulative += p.probs[class];
                if cumulative < q {
                    below += 1;
                } else {
                    break;
                }
            }
            (below + 1).min(ranking.len())
        }
    };
    Ok(PredictionSet {
        indices: ranking[..size].to_vec(),
        q_hat,
    })
}

/// `{k : p_k ≥ 1 − q̂}`, in ranking order. Unlike adaptive sets this may be
/// empty.
pub fn build_set_threshold(p: &ProbVector, q_hat: Qhat) -> Result<PredictionSet> {
    let indices = match q_hat {
        Qhat::Full => p.ranking(),
        Qhat::Value(q) => {
            let threshold = 1.0 - check_qhat(q)?.min(1.0);
            p.ranking()
                .into_iter()
                .filter(|&k| p.probs[k] >= threshold)
                .collect()
        }
    };
    Ok(PredictionSet { indices, q_hat })
}

fn check_qhat(q: f64) -> Result<f64> {
    if q >= 0.0 {
        Ok(q)
    } else {
        Err(Error::param(
            "q_hat",
            format!("{q} is not a valid quantile"),
        ))
    }
}

/// One non-exchangeable conformal step: retrieve `k` neighbours of
/// `latent`, weight them with the RBF kernel, take the weighted quantile of
/// their scores and build the adaptive set for `p`. A `k` above the store
/// size uses the whole store.
pub fn conformal_generate_step(
    store: &Datastore,
    latent: &[f32],
    p: &ProbVector,
    alpha: f64,
    k: usize,
    tau: f64,
    metric: Metric,
) -> Result<PredictionSet> {
    if k == 0 {
        return Err(Error::param("k", "need at least one neighbour"));
    }
    if k > store.len() && !store.is_empty() {
        warn!(
            "k = {k} exceeds datastore size {}, using all records",
            store.len()
        );
    }
    let neighbors = store.query(latent, k, metric)?;
    let keys: Vec<f64> = neighbors.iter().map(|n| n.key).collect();
    let weights = rbf_weights(&keys, tau, metric)?;
    let scores = neighbors.iter().map(|n| n.score).collect();
    let q_hat = weighted_quantile(&WeightedCalibration::new(scores, weights)?, alpha)?;
    build_set_adaptive(p, q_hat)
}

/// Stochastic hill climbing over the kernel temperature.
///
/// `τ₀ ~ U[τ_min, τ_max]`, then `τ_{t+1} = τ_t + η·|ε|·sign(1−α−Cov(τ_t))`
/// with `ε ~ N(0, τ_max − τ_min)` (standard deviation) and candidates
/// clamped to the bounds. Among visited candidates, gaps within
/// `tolerance` of the smallest coverage gap count as ties, and the
/// smallest tied `τ` (the most local weighting) wins. A sensible
/// tolerance is the standard error of the coverage estimate.
///
/// The update assumes coverage grows with `τ`. Kernels where it shrinks
/// instead (squared-distance RBF weights) set `coverage_increases` to
/// false, which flips the step direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSearch {
    pub tau_min: f64,
    pub tau_max: f64,
    pub eta: f64,
    pub steps: usize,
    pub coverage_increases: bool,
    pub tolerance: f64,
}

impl TemperatureSearch {
    pub fn new(tau_min: f64, tau_max: f64) -> Self {
        TemperatureSearch {
            tau_min,
            tau_max,
            eta: 0.1,
            steps: 20,
            coverage_increases: true,
            tolerance: 0.0,
        }
    }

    pub fn run<F, R>(&self, alpha: f64, mut coverage: F, rng: &mut R) -> Result<f64>
    where
        F: FnMut(f64) -> f64,
        R: Rng + ?Sized,
    {
        check_open_unit("alpha", alpha)?;
        let (lo, hi) = (self.tau_min, self.tau_max);
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::param(
                "tau_min",
                format!("bounds [{lo}, {hi}] are not an increasing finite pair"),
            ));
        }
        if self.steps == 0 {
            return Err(Error::param("steps", "need at least one step"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::param(
                "eta",
                format!("{} must be positive", self.eta),
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::param(
                "tolerance",
                format!("{} must be finite and >= 0", self.tolerance),
            ));
        }
        let target = 1.0 - alpha;
        let mut evaluate = |tau: f64| -> Result<f64> {
            let c = coverage(tau);
            if c.is_finite() {
                Ok(c)
            } else {
                Err(Error::NonFinite { index: 0, value: c })
            }
        };
        let noise = Normal::new(0.0, hi - lo).expect("positive spread");

        let mut tau = rng.random_range(lo..=hi);
        let mut cov = evaluate(tau)?;
        let mut visited = vec![(tau, (cov - target).abs())];
        for _ in 0..self.steps {
            if visited.iter().any(|v| v.1 == 0.0) {
                break;
            }
            let mut direction = if cov < target { 1.0 } else { -1.0 };
            if !self.coverage_increases {
                direction = -direction;
            }
            let eps: f64 = noise.sample(rng);
            tau = (tau + self.eta * eps.abs() * direction).clamp(lo, hi);
            cov = evaluate(tau)?;
            visited.push((tau, (cov - target).abs()));
        }
        let best_gap = visited.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        Ok(visited
            .iter()
            .filter(|v| v.1 <= best_gap + self.tolerance)
            .map(|v| v.0)
            .fold(f64::INFINITY, f64::min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::new(p.to_vec()).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn random_probs(rng: &mut impl Rng, v: usize) -> ProbVector {
        let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        pv(&raw.iter().map(|x| x / total).collect::<Vec<_>>())
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5 + 1e-10]).is_ok());
        let p = ProbVector::softmax(&[1.0, 2.0, 3.0], 1.0).unwrap();
        assert!(close(p.probs().iter().sum(), 1.0));
        assert_eq!(p.ranking(), vec![2, 1, 0]);
    }

    #[test]
    fn ranking_breaks_ties_by_class_id() {
        assert_eq!(pv(&[0.25, 0.25, 0.25, 0.25]).ranking(), vec![0, 1, 2, 3]);
        assert_eq!(pv(&[0.2, 0.4, 0.4]).ranking(), vec![1, 2, 0]);
    }

    #[test]
    fn simple_score_examples() {
        assert_eq!(score_simple(&pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        assert_eq!(score_simple(&pv(&[0.25; 4]), 2).unwrap(), 0.75);
        assert!(close(score_simple(&pv(&[0.6, 0.3, 0.1]), 1).unwrap(), 0.7));
        assert!(matches!(
            score_simple(&pv(&[0.5, 0.5]), 2),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn adaptive_score_examples() {
        let p = pv(&[0.3, 0.5, 0.2]);
        assert_eq!(score_adaptive(&p, 1).unwrap(), 0.5);
        assert!(close(score_adaptive(&p, 0).unwrap(), 0.8));
        assert!(close(score_adaptive(&pv(&[0.2; 5]), 4).unwrap(), 1.0));
        assert!(score_adaptive(&p, 3).is_err());
    }

    #[test]
    fn split_quantile_examples() {
        let nine: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(split_quantile(&nine, 0.1).unwrap(), Qhat::Value(0.9));
        let nineteen: Vec<f64> = (1..=19).map(|i| i as f64).collect();
        assert_eq!(split_quantile(&nineteen, 0.1).unwrap(), Qhat::Value(18.0));
        assert_eq!(
            split_quantile(&[0.1, 0.2, 0.3, 0.4], 0.1).unwrap(),
            Qhat::Full
        );
        assert!(split_quantile(&[], 0.1).is_err());
        assert!(split_quantile(&[0.1], 0.0).is_err());
    }

    #[test]
    fn weighted_quantile_examples() {
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(
            weighted_quantile(
                &WeightedCalibration::unweighted(scores.clone()).unwrap(),
                0.1
            )
            .unwrap(),
            Qhat::Value(0.9)
        );
        let zero = WeightedCalibration::new(scores, vec![0.0; 9]).unwrap();
        assert_eq!(weighted_quantile(&zero, 0.1).unwrap(), Qhat::Full);
        let single = WeightedCalibration::new(vec![0.4], vec![99.0]).unwrap();
        assert_eq!(weighted_quantile(&single, 0.1).unwrap(), Qhat::Value(0.4));
        assert!(WeightedCalibration::new(vec![0.1, 0.2], vec![1.0]).is_err());
        assert!(WeightedCalibration::new(vec![0.1], vec![f64::INFINITY]).is_err());
        assert!(WeightedCalibration::new(vec![0.1], vec![-1.0]).is_err());
    }

    #[test]
    fn rbf_examples() {
        assert_eq!(rbf_weights(&[0.0], 2.0, Metric::L2).unwrap(), vec![1.0]);
        assert!(close(
            rbf_weights(&[2.0], 2.0, Metric::L2).unwrap()[0],
            (-1.0f64).exp()
        ));
        assert_eq!(rbf_weights(&[0.0], 0.5, Metric::Cosine).unwrap(), vec![1.0]);
        assert!(close(
            rbf_weights(&[1.0], 1.0, Metric::InnerProduct).unwrap()[0],
            1.0f64.exp()
        ));
        let extreme = rbf_weights(&[1e9, -1e9], 1e-3, Metric::Cosine).unwrap();
        assert!(extreme.iter().all(|w| w.is_finite() && *w > 0.0));
        assert!(rbf_weights(&[0.0], 0.0, Metric::L2).is_err());
    }

    #[test]
    fn adaptive_set_examples() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(
            build_set_adaptive(&p, Qhat::Value(0.75)).unwrap().indices,
            vec![0, 1]
        );
        assert_eq!(
            build_set_adaptive(&p, Qhat::Value(0.5)).unwrap().indices,
            vec![0]
        );
        assert_eq!(
            build_set_adaptive(&p, Qhat::Full).unwrap().indices,
            vec![0, 1, 2]
        );
        assert_eq!(build_set_adaptive(&p, Qhat::Value(7.0)).unwrap().len(), 3);
        assert!(build_set_adaptive(&p, Qhat::Value(f64::NAN)).is_err());
    }

    #[test]
    fn threshold_set_examples() {
        let p = pv(&[0.6, 0.3, 0.1]);
        assert_eq!(build_set_threshold(&p, Qhat::Value(1.0)).unwrap().len(), 3);
        assert!(build_set_threshold(&p, Qhat::Value(0.0))
            .unwrap()
            .is_empty());
        assert_eq!(
            build_set_threshold(&pv(&[1.0, 0.0]), Qhat::Value(0.0))
                .unwrap()
                .indices,
            vec![0]
        );
        assert_eq!(
            build_set_threshold(&p, Qhat::Value(0.75)).unwrap().indices,
            vec![0, 1]
        );
    }

    #[test]
    fn adaptive_set_matches_exhaustive_scan() {
        let mut rng = rng_from_seed(21);
        for _ in 0..200 {
            let p = random_probs(&mut rng, 50);
            let q: f64 = rng.random();
            let ranking = p.ranking();
            // sup over every prefix length, not just the leading run.
            let mut sup = 0;
            for c in 1..=50 {
                let mass: f64 = ranking[..c].iter().map(|&k| p.probs()[k]).sum();
                if mass < q {
                    sup = sup.max(c);
                }
            }
            let expected = (sup + 1).min(50);
            assert_eq!(
                build_set_adaptive(&p, Qhat::Value(q)).unwrap().len(),
                expected
            );
        }
    }

    #[test]
    fn generate_step_examples() {
        let mut store = Datastore::new(3).unwrap();
        store.push(&[0.5, -0.5, 1.0], 0.3).unwrap();
        let p = pv(&[0.5, 0.3, 0.2]);
        let set = conformal_generate_step(&store, &[0.5, -0.5, 1.0], &p, 0.1, 1, 7.0, Metric::L2)
            .unwrap();
        assert_eq!(set.q_hat, Qhat::Full);
        assert_eq!(set.len(), 3);

        let mut rng = rng_from_seed(22);
        let mut constant = Datastore::new(4).unwrap();
        for _ in 0..10_000 {
            let latent: Vec<f32> = (0..4).map(|_| rng.random()).collect();
            constant.push(&latent, 0.2).unwrap();
        }
        let set = conformal_generate_step(
            &constant,
            &[0.1, 0.9, 0.3, 0.4],
            &p,
            0.1,
            100,
            1.0,
            Metric::L2,
        )
        .unwrap();
        assert_eq!(set.q_hat, Qhat::Value(0.2));
        assert_eq!(set.indices, vec![0]);

        assert!(matches!(
            conformal_generate_step(&constant, &[0.1, 0.2], &p, 0.1, 5, 1.0, Metric::L2),
            Err(Error::DimensionMismatch { .. })
        ));
        let all =
            conformal_generate_step(&store, &[0.0; 3], &p, 0.5, 10, 1.0, Metric::Cosine).unwrap();
        assert_eq!(all.q_hat, Qhat::Value(0.3));
    }

    #[test]
    fn qhat_serialization() {
        assert_eq!(serde_json::to_string(&Qhat::Full).unwrap(), "\"FULL\"");
        assert_eq!(serde_json::to_string(&Qhat::Value(0.25)).unwrap(), "0.25");
        assert_eq!(
            serde_json::from_str::<Qhat>("\"FULL\"").unwrap(),
            Qhat::Full
        );
        assert_eq!(
            serde_json::from_str::<Qhat>("0.5").unwrap(),
            Qhat::Value(0.5)
        );
        assert!(serde_json::from_str::<Qhat>("\"ALL\"").is_err());
    }

    #[test]
    fn temperature_search_constant_coverage_returns_initial() {
        let search = TemperatureSearch::new(0.5, 3.0);
        let mut first = None;
        let tau = search
            .run(
                0.1,
                |t| {
                    first.get_or_insert(t);
                    0.9
                },
                &mut rng_from_seed(1),
            )
            .unwrap();
        assert_eq!(Some(tau), first);
    }

    #[test]
    fn temperature_search_finds_target_of_identity_curve() {
        let search = TemperatureSearch::new(0.0, 1.0);
        let hits = (0..100)
            .filter(|&seed| {
                let tau = search
                    .run(0.1, |t| t.clamp(0.0, 1.0), &mut rng_from_seed(seed))
                    .unwrap();
                (tau - 0.9).abs() <= 0.15
            })
            .count();
        assert!(hits >= 90, "{hits} of 100 runs landed near 0.9");
    }

    #[test]
    fn temperature_search_follows_decreasing_curves() {
        let search = TemperatureSearch {
            coverage_increases: false,
            ..TemperatureSearch::new(0.0, 1.0)
        };
        let hits = (0..100)
            .filter(|&seed| {
                let tau = search
                    .run(0.1, |t| 1.0 - t, &mut rng_from_seed(seed))
                    .unwrap();
                (tau - 0.1).abs() <= 0.15
            })
            .count();
        assert!(hits >= 90, "{hits} of 100 runs landed near 0.1");
    }

    #[test]
    fn temperature_search_breaks_near_ties_toward_small_tau() {
        // Target 0.9 is unreachable; every gap lies within 0.01 of the best.
        let search = TemperatureSearch {
            tolerance: 0.02,
            ..TemperatureSearch::new(0.0, 1.0)
        };
        for seed in 0..20 {
            let mut visited = Vec::new();
            let tau = search
                .run(
                    0.1,
                    |t| {
                        visited.push(t);
                        1.0 - 0.01 * t
                    },
                    &mut rng_from_seed(seed),
                )
                .unwrap();
            assert_eq!(tau, visited.iter().copied().fold(f64::INFINITY, f64::min));
        }
        let strict = TemperatureSearch::new(0.0, 1.0);
        let tau = strict
            .run(0.1, |t| 1.0 - 0.01 * t, &mut rng_from_seed(3))
            .unwrap();
        assert!(
            tau > 0.5,
            "without tolerance the largest visited tau should win, got {tau}"
        );
    }

    #[test]
    fn temperature_search_single_step_keeps_the_better_candidate() {
        let search = TemperatureSearch {
            steps: 1,
            ..TemperatureSearch::new(0.0, 1.0)
        };
        for seed in 0..20 {
            let mut visited = Vec::new();
            let tau = search
                .run(
                    0.2,
                    |t| {
                        visited.push(t);
                        t * t
                    },
                    &mut rng_from_seed(seed),
                )
                .unwrap();
            assert_eq!(visited.len(), 2);
            let gap = |t: f64| (t * t - 0.8).abs();
            let better = if gap(visited[1]) < gap(visited[0]) {
                visited[1]
            } else {
                visited[0]
            };
            assert_eq!(tau, better);
        }
    }

    #[test]
    fn temperature_search_rejects_bad_input() {
        let search = TemperatureSearch::new(1.0, 1.0);
        assert!(search.run(0.1, |_| 0.5, &mut rng_from_seed(0)).is_err());
        let search = TemperatureSearch::new(0.0, 1.0);
        assert!(search
            .run(0.1, |_| f64::NAN, &mut rng_from_seed(0))
            .is_err());
    }

    #[test]
    fn split_conformal_covers_exchangeable_data() {
        // Scores and test labels drawn from the same generator.
        let mut rng = rng_from_seed(23);
        let draw = |rng: &mut crate::seed::StreamRng| {
            let p = random_probs(rng, 10);
            let mut u: f64 = rng.random();
            let mut label = 9;
            for (k, &pk) in p.probs().iter().enumerate() {
                if u < pk {
                    label = k;
                    break;
                }
                u -= pk;
            }
            (p, label)
        };
        let alpha = 0.1;
        let scores: Vec<f64> = (0..2000)
            .map(|_| {
                let (p, y) = draw(&mut rng);
                score_adaptive(&p, y).unwrap()
            })
            .collect();
        let q = split_quantile(&scores, alpha).unwrap();
        let covered = (0..2000)
            .filter(|_| {
                let (p, y) = draw(&mut rng);
                build_set_adaptive(&p, q).unwrap().contains(y)
            })
            .count() as f64
            / 2000.0;
        let se = (alpha * (1.0 - alpha) / 2000.0).sqrt();
        assert!(covered >= 1.0 - alpha - 3.0 * se, "coverage {covered}");
    }

    proptest! {
        #[test]
        fn unit_weights_reduce_to_split(scores in prop::collection::vec(0.0f64..=1.0, 1..200), alpha in 0.001f64..0.999) {
            let split = split_quantile(&scores, alpha).unwrap();
            let weighted = weighted_quantile(&WeightedCalibration::unweighted(scores).unwrap(), alpha).unwrap();
            prop_assert_eq!(split, weighted);
        }

        #[test]
        fn adaptive_sets_are_nested_and_nonempty(seed in any::<u64>(), v in 2usize..30, q1 in 0.0f64..1.2, q2 in 0.0f64..1.2) {
            let p = random_probs(&mut rng_from_seed(seed), v);
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let small = build_set_adaptive(&p, Qhat::Value(lo)).unwrap();
            let large = build_set_adaptive(&p, Qhat::Value(hi)).unwrap();
            prop_assert!(!small.is_empty());
            prop_assert!(small.indices.iter().all(|k| large.contains(*k)));
            prop_assert_eq!(build_set_threshold(&p, Qhat::Value(1.0)).unwrap().len(), v);
        }

        #[test]
        fn set_from_own_score_contains_label(seed in any::<u64>(), v in 2usize..30, label in 0usize..30) {
            let p = random_probs(&mut rng_from_seed(seed), v);
            let y = label % v;
            let s = score_adaptive(&p, y).unwrap();
            prop_assert!(build_set_adaptive(&p, Qhat::Value(s)).unwrap().contains(y));
        }

        #[test]
        fn larger_weights_never_raise_the_quantile(
            pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..5.0), 1..60),
            alpha in 0.01f64..0.99,
            c1 in 0.01f64..100.0,
            c2 in 0.01f64..100.0,
        ) {
            let (lo, hi) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let scores: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let q = |c: f64| {
                let weights = pairs.iter().map(|p| p.1 * c).collect();
                weighted_quantile(&WeightedCalibration::new(scores.clone(), weights).unwrap(), alpha).unwrap()
            };
            match (q(lo), q(hi)) {
                (_, Qhat::Full) => prop_assert!(q(lo).is_full()),
                (Qhat::Full, _) => {}
                (Qhat::Value(a), Qhat::Value(b)) => prop_assert!(b <= a),
            }
        }
    }
}
