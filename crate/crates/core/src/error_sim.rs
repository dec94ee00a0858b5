//! Distribution samplers and the Type I / Type II error-rate harness.
//!
//! Each trial draws fresh samples from its own RNG stream, derived from the
//! master seed and the trial index, so reports are bit-identical for any
//! worker count and earlier trials do not change when more are added.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::empirical::Sample;
use crate::error::{Error, Result};
use crate::seed;
use crate::significance::{aso, classic_test, AsoConfig, ClassicTest};

/// A score distribution used in the simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistSpec {
    Normal {
        mean: f64,
        std: f64,
    },
    /// Components given as `(mean, std)` pairs with matching weights.
    NormalMixture {
        components: Vec<(f64, f64)>,
        weights: Vec<f64>,
    },
    Laplace {
        location: f64,
        scale: f64,
    },
    Rayleigh {
        scale: f64,
    },
}

impl DistSpec {
    /// `0.75·N(0, 1.5²) + 0.25·N(−0.5, 0.25²)`.
    pub fn default_mixture() -> Self {
        DistSpec::NormalMixture {
            components: vec![(0.0, 1.5), (-0.5, 0.25)],
            weights: vec![0.75, 0.25],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(
                    name,
                    format!("{v} must be positive and finite"),
                ))
            }
        };
        let finite = |name: &'static str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be finite")))
            }
        };
        match self {
            DistSpec::Normal { mean, std } => {
                finite("mean", *mean)?;
                positive("std", *std)
            }
            DistSpec::NormalMixture {
                components,
                weights,
            } => {
                if components.is_empty() || components.len() != weights.len() {
                    return Err(Error::param(
                        "weights",
                        format!(
                            "{} weights for {} components",
                            weights.len(),
                            components.len()
                        ),
                    ));
                }
                for &(mean, std) in components {
                    finite("mean", mean)?;
                    positive("std", std)?;
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::param("weights", "weights must be non-negative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::param(
                        "weights",
                        format!("weights sum to {total}, not 1"),
                    ));
                }
                Ok(())
            }
            DistSpec::Laplace { location, scale } => {
                finite("location", *location)?;
                positive("scale", *scale)
            }
            DistSpec::Rayleigh { scale } => positive("scale", *scale),
        }
    }

    /// Short label used in reports, e.g. `normal:0:1.5`.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DistSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistSpec::Normal { mean, std } => write!(f, "normal:{mean}:{std}"),
            DistSpec::NormalMixture {
                components,
                weights,
            } => {
                write!(f, "mixture")?;
                for (w, (m, s)) in weights.iter().zip(components) {
                    write!(f, ":{w}:{m}:{s}")?;
                }
                Ok(())
            }
            DistSpec::Laplace { location, scale } => write!(f, "laplace:{location}:{scale}"),
            DistSpec::Rayleigh { scale } => write!(f, "rayleigh:{scale}"),
        }
    }
}

/// Parses `normal:MEAN:STD`, `laplace:LOC:SCALE`, `rayleigh:SCALE`,
/// `mixture` (the default two-component mixture) or
/// `mixture:W1:MEAN1:STD1:W2:MEAN2:STD2…`.
impl FromStr for DistSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let nums: Vec<f64> = parts
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::param("dist", format!("bad number {p:?} in {s:?}")))
            })
            .collect::<Result<_>>()?;
        let arity = |n: usize| {
            if nums.len() == n {
                Ok(())
            } else {
                Err(Error::param(
                    "dist",
                    format!("{kind} expects {n} parameters, got {}", nums.len()),
                ))
            }
        };
        let spec = match kind.as_str() {
            "normal" => {
                arity(2)?;
                DistSpec::Normal {
                    mean: nums[0],
                    std: nums[1],
                }
            }
            "laplace" => {
                arity(2)?;
                DistSpec::Laplace {
                    location: nums[0],
                    scale: nums[1],
                }
            }
            "rayleigh" => {
                arity(1)?;
                DistSpec::Rayleigh { scale: nums[0] }
            }
            "mixture" if nums.is_empty() => DistSpec::default_mixture(),
            "mixture" => {
                if !nums.len().is_multiple_of(3) {
                    return Err(Error::param(
                        "dist",
                        "mixture expects weight:mean:std triples",
                    ));
                }
                let weights = nums.chunks(3).map(|c| c[0]).collect();
                let components = nums.chunks(3).map(|c| (c[1], c[2])).collect();
                DistSpec::NormalMixture {
                    components,
                    weights,
                }
            }
            other => {
                return Err(Error::param(
                    "dist",
                    format!("unknown distribution {other:?}"),
                ))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

fn draw<R: Rng + ?Sized>(spec: &DistSpec, rng: &mut R) -> f64 {
    match spec {
        DistSpec::Normal { mean, std } => {
            mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal)
        }
        DistSpec::NormalMixture {
            components,
            weights,
        } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = components.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            let (mean, std) = components[chosen];
            mean + std * rng.sample::<f64, _>(rand_distr::StandardNormal)
        }
        DistSpec::Laplace { location, scale } => {
            // Inverse CDF on u ∈ (−1/2, 1/2).
            let u: f64 = rng.sample::<f64, _>(rand_distr::Open01) - 0.5;
            location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }
        DistSpec::Rayleigh { scale } => {
            let u: f64 = rng.random();
            scale * (-2.0 * (1.0 - u).ln()).sqrt()
        }
    }
}

/// Draws `n` i.i.d. values from `spec`.
pub fn sample_dist<R: Rng + ?Sized>(spec: &DistSpec, n: usize, rng: &mut R) -> Result<Sample> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::param("n", "sample size must be at least 1"));
    }
    Sample::new((0..n).map(|_| draw(spec, rng)).collect())
}

/// Which test a simulation runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "kebab-case")]
pub enum SimTest {
    Aso(AsoConfig),
    Classic { kind: ClassicTest, resamples: usize },
}

impl SimTest {
    pub fn aso() -> Self {
        SimTest::Aso(AsoConfig::default())
    }

    pub fn classic(kind: ClassicTest) -> Self {
        SimTest::Classic {
            kind,
            resamples: 1000,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SimTest::Aso(_) => "aso",
            SimTest::Classic { kind, .. } => kind.name(),
        }
    }

    /// The decision score of one comparison: `eps_min` for ASO, the
    /// p-value otherwise. Lower means "reject".
    pub fn score<R: Rng + ?Sized>(&self, a: &Sample, b: &Sample, rng: &mut R) -> Result<f64> {
        match self {
            SimTest::Aso(config) => Ok(aso(a, b, config, rng)?.eps_min),
            SimTest::Classic { kind, resamples } => {
                Ok(classic_test(*kind, a, b, *resamples, rng)?.p_value)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorKind {
    TypeI,
    TypeII,
}

/// One cell of an error-rate table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub test: String,
    pub error: ErrorKind,
    pub dist_a: DistSpec,
    pub dist_b: DistSpec,
    pub n: usize,
    pub trials: usize,
    pub threshold: f64,
    pub rate: f64,
    /// Binomial standard error `sqrt(rate (1 − rate) / trials)`.
    pub se: f64,
}

/// Simulation settings shared by the Type I and Type II harnesses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `0` uses the global rayon pool.
    pub threads: usize,
}

/// Per-trial decision scores (`eps_min` or p-value), in trial order.
pub fn simulate_scores(
    test: &SimTest,
    dist_a: &DistSpec,
    dist_b: &DistSpec,
    config: &SimConfig,
) -> Result<Vec<f64>> {
    dist_a.validate()?;
    dist_b.validate()?;
    if config.trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if config.n == 0 {
        return Err(Error::param("n", "sample size must be at least 1"));
    }
    let run = || {
        (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = seed::stream(config.seed, trial as u64);
                let a = sample_dist(dist_a, config.n, &mut rng)?;
                let b = sample_dist(dist_b, config.n, &mut rng)?;
                test.score(&a, &b, &mut rng)
            })
            .collect::<Result<Vec<f64>>>()
    };
    if config.threads == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| Error::param("threads", e.to_string()))?
            .install(run)
    }
}

fn report(
    test: &SimTest,
    error: ErrorKind,
    dist_a: &DistSpec,
    dist_b: &DistSpec,
    config: &SimConfig,
    scores: &[f64],
    threshold: f64,
) -> ErrorRateReport {
    let rejections = scores.iter().filter(|&&s| s < threshold).count();
    let errors = match error {
        ErrorKind::TypeI => rejections,
        ErrorKind::TypeII => scores.len() - rejections,
    };
    let trials = scores.len();
    let rate = errors as f64 / trials as f64;
    ErrorRateReport {
        test: test.name().to_string(),
        error,
        dist_a: dist_a.clone(),
        dist_b: dist_b.clone(),
        n: config.n,
        trials,
        threshold,
        rate,
        se: (rate * (1.0 - rate) / trials as f64).sqrt(),
    }
}

/// Type I error rates at several thresholds from one set of trials in
/// which both samples come from `dist`.
pub fn type1_rates(
    test: &SimTest,
    dist: &DistSpec,
    config: &SimConfig,
    thresholds: &[f64],
) -> Result<Vec<ErrorRateReport>> {
    let scores = simulate_scores(test, dist, dist, config)?;
    Ok(thresholds
        .iter()
        .map(|&t| report(test, ErrorKind::TypeI, dist, dist, config, &scores, t))
        .collect())
}

/// Type II error rates at several thresholds; `dist_a` is the system that
/// is truly better.
pub fn type2_rates(
    test: &SimTest,
    dist_a: &DistSpec,
    dist_b: &DistSpec,
    config: &SimConfig,
    thresholds: &[f64],
) -> Result<Vec<ErrorRateReport>> {
    let scores = simulate_scores(test, dist_a, dist_b, config)?;
    Ok(thresholds
        .iter()
        .map(|&t| report(test, ErrorKind::TypeII, dist_a, dist_b, config, &scores, t))
        .collect())
}

/// Fraction of trials that reject although both samples share `dist`.
pub fn type1_rate(
    test: &SimTest,
    dist: &DistSpec,
    config: &SimConfig,
    threshold: f64,
) -> Result<ErrorRateReport> {
    Ok(type1_rates(test, dist, config, &[threshold])?.remove(0))
}

/// Fraction of trials that fail to reject although `dist_a` dominates `dist_b`.
pub fn type2_rate(
    test: &SimTest,
    dist_a: &DistSpec,
    dist_b: &DistSpec,
    config: &SimConfig,
    threshold: f64,
) -> Result<ErrorRateReport> {
    Ok(type2_rates(test, dist_a, dist_b, config, &[threshold])?.remove(0))
}

/// Normal draws with a fixed std, used by tests and the CLI.
pub fn normal(mean: f64, std: f64) -> DistSpec {
    DistSpec::Normal { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    fn moments(spec: &DistSpec, n: usize, seed: u64) -> (f64, f64) {
        let x = sample_dist(spec, n, &mut rng_from_seed(seed)).unwrap();
        let mean = x.mean();
        let var = x.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, var)
    }

    #[test]
    fn rayleigh_mean() {
        let (mean, _) = moments(&DistSpec::Rayleigh { scale: 1.0 }, 1_000_000, 1);
        assert!(
            (mean - (std::f64::consts::PI / 2.0).sqrt()).abs() < 0.01,
            "{mean}"
        );
    }

    #[test]
    fn laplace_variance() {
        let (mean, var) = moments(
            &DistSpec::Laplace {
                location: 0.0,
                scale: 1.5,
            },
            1_000_000,
            2,
        );
        assert!((var - 4.5).abs() < 0.1, "{var}");
        assert!(mean.abs() < 0.01);
    }

    #[test]
    fn mixture_mean() {
        let (mean, _) = moments(&DistSpec::default_mixture(), 1_000_000, 3);
        assert!((mean + 0.125).abs() < 0.01, "{mean}");
    }

    #[test]
    fn normal_moments() {
        let (mean, var) = moments(&normal(0.5, 1.5), 200_000, 4);
        assert!((mean - 0.5).abs() < 0.02);
        assert!((var - 2.25).abs() < 0.05);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(sample_dist(&normal(0.0, 0.0), 3, &mut rng).is_err());
        assert!(sample_dist(&normal(0.0, 1.0), 0, &mut rng).is_err());
        let bad = DistSpec::NormalMixture {
            components: vec![(0.0, 1.0), (1.0, 1.0)],
            weights: vec![0.5, 0.6],
        };
        assert!(bad.validate().is_err());
        assert!(DistSpec::Rayleigh { scale: -1.0 }.validate().is_err());
    }

    #[test]
    fn parse_and_display_round_trip() {
        for text in [
            "normal:0:1.5",
            "laplace:0:1.5",
            "rayleigh:1",
            "mixture:0.75:0:1.5:0.25:-0.5:0.25",
        ] {
            let spec: DistSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!(
            "mixture".parse::<DistSpec>().unwrap(),
            DistSpec::default_mixture()
        );
        assert!("normal:0".parse::<DistSpec>().is_err());
        assert!("cauchy:0:1".parse::<DistSpec>().is_err());
        assert!("normal:x:1".parse::<DistSpec>().is_err());
    }

    #[test]
    fn reports_are_deterministic_and_worker_independent() {
        let test = SimTest::classic(ClassicTest::Permutation);
        let dist = normal(0.0, 1.5);
        let serial = SimConfig {
            n: 8,
            trials: 64,
            seed: 5,
            threads: 1,
        };
        let parallel = SimConfig {
            threads: 4,
            ..serial
        };
        let a = type1_rates(&test, &dist, &serial, &[0.05, 0.1]).unwrap();
        let b = type1_rates(&test, &dist, &parallel, &[0.05, 0.1]).unwrap();
        let c = type1_rates(&test, &dist, &serial, &[0.05, 0.1]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a[0].rate <= a[1].rate);
    }

    #[test]
    fn single_trial_rate_is_binary() {
        let config = SimConfig {
            n: 5,
            trials: 1,
            seed: 9,
            threads: 1,
        };
        let r = type1_rate(
            &SimTest::classic(ClassicTest::StudentT),
            &normal(0.0, 1.5),
            &config,
            0.05,
        )
        .unwrap();
        assert!(r.rate == 0.0 || r.rate == 1.0);
        assert_eq!(r.se, 0.0);
    }

    #[test]
    fn huge_mean_gap_gives_no_type_two_errors() {
        let config = SimConfig {
            n: 10,
            trials: 50,
            seed: 1,
            threads: 0,
        };
        for test in [
            SimTest::classic(ClassicTest::StudentT),
            SimTest::classic(ClassicTest::MannWhitney),
        ] {
            let r =
                type2_rate(&test, &normal(100.0, 1.5), &normal(0.0, 1.5), &config, 0.05).unwrap();
            assert_eq!(r.rate, 0.0);
        }
        let aso = SimTest::Aso(AsoConfig {
            num_bootstrap: 200,
            ..AsoConfig::default()
        });
        let r = type2_rate(&aso, &normal(100.0, 1.5), &normal(0.0, 1.5), &config, 0.2).unwrap();
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn t_test_rate_within_three_standard_errors_of_nominal() {
        let config = SimConfig {
            n: 15,
            trials: 2000,
            seed: 77,
            threads: 0,
        };
        let r = type1_rate(
            &SimTest::classic(ClassicTest::StudentT),
            &normal(0.0, 1.5),
            &config,
            0.05,
        )
        .unwrap();
        let se = (0.05f64 * 0.95 / 2000.0).sqrt();
        assert!((r.rate - 0.05).abs() <= 3.0 * se, "rate {}", r.rate);
    }
}
