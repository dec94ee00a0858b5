//! Seeded synthetic sequence model for conformal-generation experiments.
//!
//! The latent state follows `z_{t+1} = tanh(M z_t) + ξ_t` with Gaussian
//! `ξ_t`; each step emits `softmax(E ẑ_t / T)`, where `ẑ_t` is `z_t` scaled
//! to unit RMS, and a gold token drawn from it. Because the gold token is an exact draw from the emitted
//! distribution, calibration and test steps from the same model are
//! exchangeable in distribution.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{
    build_set_adaptive, conformal_generate_step, split_quantile, weighted_quantile, ProbVector,
    Qhat, ScoreKind, TemperatureSearch, WeightedCalibration,
};
use crate::datastore::{Datastore, Metric};
use crate::error::{check_open_unit, Error, Result};
use crate::seed::rng_from_seed;

/// Default per-step latent noise standard deviation.
pub const DEFAULT_LATENT_NOISE: f64 = 0.02;
/// Default softmax temperature.
pub const DEFAULT_TEMPERATURE: f64 = 2.0;
/// Default gain of the mixing matrix. Gains above 1 give chaotic latent
/// dynamics that stay on a low-dimensional attractor.
pub const DEFAULT_MIXING_GAIN: f64 = 2.0;
/// Lower end of the default kernel temperature search range.
pub const MIN_SEARCH_TAU: f64 = 1e-3;
/// Steps discarded before a generated stream is returned.
pub const BURN_IN: usize = 50;
/// Neighbours retrieved per step by default.
pub const DEFAULT_NEIGHBORS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    vocab: usize,
    dim: usize,
    /// Row-major `V × d`.
    emission: Vec<f64>,
    /// Row-major `d × d`.
    mixing: Vec<f64>,
    latent_noise: f64,
    temperature: f64,
}

/// One generation step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTriple {
    pub latent: Vec<f64>,
    pub probs: ProbVector,
    pub gold: usize,
}

impl SynthModel {
    /// Emission entries `N(0, 1)`, mixing entries `N(0, g²/d)` with the
    /// default gain `g`, default noise and temperature.
    pub fn new(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::with_gain(vocab, dim, DEFAULT_MIXING_GAIN, seed)
    }

    /// Like [`SynthModel::new`] with mixing entries `N(0, gain²/d)`.
    pub fn with_gain(vocab: usize, dim: usize, gain: f64, seed: u64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::param(
                "gain",
                format!("{gain} must be finite and > 0"),
            ));
        }
        if vocab < 2 {
            return Err(Error::param(
                "vocab",
                format!("need at least 2 tokens, got {vocab}"),
            ));
        }
        if dim < 2 {
            return Err(Error::param(
                "dim",
                format!("need a latent dimension of at least 2, got {dim}"),
            ));
        }
        let mut rng = rng_from_seed(seed);
        let emission = (0..vocab * dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let scale = gain / (dim as f64).sqrt();
        let mixing = (0..dim * dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(SynthModel {
            vocab,
            dim,
            emission,
            mixing,
            latent_noise: DEFAULT_LATENT_NOISE,
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::param(
                "temperature",
                format!("{temperature} must be positive"),
            ));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn with_latent_noise(mut self, std: f64) -> Result<Self> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(Error::param(
                "latent_noise",
                format!("{std} must be finite and >= 0"),
            ));
        }
        self.latent_noise = std;
        Ok(self)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Token distribution emitted from `latent`. The latent is scaled to unit
    /// RMS before the emission matrix, like the final normalisation layer
    /// of a transformer, so perturbations change its direction only.
    pub fn probs_at(&self, latent: &[f64]) -> Result<ProbVector> {
        if latent.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: latent.len(),
            });
        }
        let rms = (latent.iter().map(|z| z * z).sum::<f64>() / self.dim as f64).sqrt();
        let norm = if rms > 0.0 { 1.0 / rms } else { 1.0 };
        let logits: Vec<f64> = self
            .emission
            .chunks_exact(self.dim)
            .map(|row| norm * row.iter().zip(latent).map(|(e, z)| e * z).sum::<f64>())
            .collect();
        ProbVector::softmax(&logits, self.temperature)
    }

    /// Emits from a fixed latent and samples the gold token.
    pub fn step_at<R: Rng + ?Sized>(&self, latent: &[f64], rng: &mut R) -> Result<StepTriple> {
        let probs = self.probs_at(latent)?;
        let gold = sample_token(&probs, rng);
        Ok(StepTriple {
            latent: latent.to_vec(),
            probs,
            gold,
        })
    }

    fn advance<R: Rng + ?Sized>(&self, z: &[f64], rng: &mut R) -> Vec<f64> {
        self.mixing
            .chunks_exact(self.dim)
            .map(|row| {
                let pre: f64 = row.iter().zip(z).map(|(m, x)| m * x).sum();
                pre.tanh() + self.latent_noise * rng.sample::<f64, _>(StandardNormal)
            })
            .collect()
    }

    /// `num_steps` consecutive steps after [`BURN_IN`] discarded ones.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        num_steps: usize,
        rng: &mut R,
    ) -> Result<Vec<StepTriple>> {
        let mut z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..BURN_IN {
            z = self.advance(&z, rng);
        }
        let mut steps = Vec::with_capacity(num_steps);
        for _ in 0..num_steps {
            steps.push(self.step_at(&z, rng)?);
            z = self.advance(&z, rng);
        }
        Ok(steps)
    }

    /// Teacher-forced calibration data: one `(latent, score)` record per step.
    pub fn build_calibration_store<R: Rng + ?Sized>(
        &self,
        num_steps: usize,
        kind: ScoreKind,
        rng: &mut R,
    ) -> Result<Datastore> {
        let steps = self.generate(num_steps, rng)?;
        store_from_steps(&steps, kind)
    }
}

/// Inverse-CDF draw from `probs`.
pub fn sample_token<R: Rng + ?Sized>(probs: &ProbVector, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (k, &p) in probs.probs().iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return k;
        }
    }
    // Rounding left `u` above the total mass: take the last non-zero class.
    probs.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Adds i.i.d. `N(0, σ²)` noise to every coordinate.
pub fn inject_noise<R: Rng + ?Sized>(latent: &[f64], sigma: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param(
            "sigma",
            format!("{sigma} must be finite and >= 0"),
        ));
    }
    let noise = Normal::new(0.0, sigma).expect("valid std");
    Ok(latent.iter().map(|&z| z + noise.sample(rng)).collect())
}

pub fn to_f32(latent: &[f64]) -> Vec<f32> {
    latent.iter().map(|&z| z as f32).collect()
}

pub fn store_from_steps(steps: &[StepTriple], kind: ScoreKind) -> Result<Datastore> {
    let dim = steps.first().map_or(2, |s| s.latent.len());
    let mut store = Datastore::with_capacity(dim, steps.len())?;
    for step in steps {
        store.push(&to_f32(&step.latent), kind.score(&step.probs, step.gold)?)?;
    }
    Ok(store)
}

/// Pooled standard deviation of every latent coordinate.
pub fn latent_std(steps: &[StepTriple]) -> f64 {
    let values: Vec<f64> = steps
        .iter()
        .flat_map(|s| s.latent.iter().copied())
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Shifted copies of `steps`: the latent is perturbed by `sigma · ξ` for a
/// fixed direction `ξ` per step, the emitted distribution is recomputed
/// from the perturbed latent and the gold token is kept.
///
/// Reusing the same `directions` across noise levels gives common random
/// numbers, so conditions differ only in the noise scale.
pub fn shift_steps(
    model: &SynthModel,
    steps: &[StepTriple],
    directions: &[Vec<f64>],
    sigma: f64,
) -> Result<Vec<StepTriple>> {
    if directions.len() != steps.len() {
        return Err(Error::LengthMismatch {
            left: steps.len(),
            right: directions.len(),
        });
    }
    steps
        .iter()
        .zip(directions)
        .map(|(step, xi)| {
            let latent: Vec<f64> = step
                .latent
                .iter()
                .zip(xi)
                .map(|(z, e)| z + sigma * e)
                .collect();
            Ok(StepTriple {
                probs: model.probs_at(&latent)?,
                latent,
                gold: step.gold,
            })
        })
        .collect()
}

/// Standard-normal directions for [`shift_steps`].
pub fn noise_directions<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// How the quantile for each test step is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// One split-conformal quantile over the whole store.
    Split,
    /// Weighted quantile over the whole store with every weight equal to 1.
    UnitWeights,
    /// Nearest-neighbour retrieval with RBF weights.
    Knn { k: usize, tau: f64, metric: Metric },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Split => "split",
            Method::UnitWeights => "unit-weights",
            Method::Knn { .. } => "knn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepOutcome {
    pub size: usize,
    pub covered: bool,
    pub q_hat: Qhat,
}

/// Builds an adaptive prediction set for every test step.
pub fn evaluate(
    store: &Datastore,
    test: &[StepTriple],
    method: Method,
    alpha: f64,
) -> Result<Vec<StepOutcome>> {
    check_open_unit("alpha", alpha)?;
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let global = match method {
        Method::Split => Some(split_quantile(store.scores(), alpha)?),
        Method::UnitWeights => Some(weighted_quantile(
            &WeightedCalibration::unweighted(store.scores().to_vec())?,
            alpha,
        )?),
        Method::Knn { .. } => None,
    };
    test.par_iter()
        .map(|step| {
            let set = match (global, method) {
                (Some(q), _) => build_set_adaptive(&step.probs, q)?,
                (None, Method::Knn { k, tau, metric }) => conformal_generate_step(
                    store,
                    &to_f32(&step.latent),
                    &step.probs,
                    alpha,
                    k,
                    tau,
                    metric,
                )?,
                (None, _) => unreachable!("global quantile methods always resolve"),
            };
            Ok(StepOutcome {
                size: set.len(),
                covered: set.contains(step.gold),
                q_hat: set.q_hat,
            })
        })
        .collect()
}

pub fn coverage(outcomes: &[StepOutcome]) -> f64 {
    outcomes.iter().filter(|o| o.covered).count() as f64 / outcomes.len() as f64
}

pub fn mean_size(outcomes: &[StepOutcome]) -> f64 {
    outcomes.iter().map(|o| o.size as f64).sum::<f64>() / outcomes.len() as f64
}

/// Default temperature search for a store: `[MIN_SEARCH_TAU, 20 m]` where
/// `m` is the median magnitude of the `k`-th neighbour key over up to 200
/// stored records.
pub fn default_search(store: &Datastore, k: usize, metric: Metric) -> Result<TemperatureSearch> {
    let probes = store.len().min(200);
    let mut keys = Vec::with_capacity(probes);
    for i in 0..probes {
        let found = store.query(store.latent(i), (k + 1).min(store.len()), metric)?;
        keys.push(found.last().map_or(0.0, |n| n.key.abs()));
    }
    keys.sort_by(f64::total_cmp);
    let median = keys.get(keys.len() / 2).copied().unwrap_or(0.0);
    Ok(TemperatureSearch::new(
        MIN_SEARCH_TAU,
        (20.0 * median).max(2.0 * MIN_SEARCH_TAU),
    ))
}

/// Tunes the kernel temperature of [`Method::Knn`] by hill climbing on the
/// coverage of `tuning` steps, which should be disjoint from the store.
/// The step direction follows the kernel: squared-distance weights lose
/// coverage as `τ` grows, similarity weights gain it. Coverage gaps within
/// one binomial standard error `sqrt(α(1−α)/n)` of the best are ties.
#[allow(clippy::too_many_arguments)]
pub fn tune_temperature<R: Rng + ?Sized>(
    store: &Datastore,
    tuning: &[StepTriple],
    k: usize,
    metric: Metric,
    alpha: f64,
    search: &TemperatureSearch,
    rng: &mut R,
) -> Result<f64> {
    if tuning.is_empty() {
        return Err(Error::param("tuning", "need at least one tuning step"));
    }
    let search = TemperatureSearch {
        coverage_increases: metric.is_similarity(),
        tolerance: search
            .tolerance
            .max((alpha * (1.0 - alpha) / tuning.len() as f64).sqrt()),
        ..*search
    };
    let mut failure = None;
    let tau = search.run(
        alpha,
        |tau| match evaluate(store, tuning, Method::Knn { k, tau, metric }, alpha) {
            Ok(outcomes) => coverage(&outcomes),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        rng,
    );
    match failure {
        Some(e) => Err(e),
        None => tau,
    }
}
