//! Empirical distribution primitives: CDF, quantile function and
//! inverse-transform bootstrap resampling.
//!
//! The quantile rule is the order-statistic lookup `sorted[ceil(n·p) − 1]`
//! (clamped to the valid index range), not an interpolating estimator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-empty collection of finite observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Sample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Sorted copy, ready for repeated quantile/CDF evaluation.
    pub fn to_quantile_fn(&self) -> QuantileFn {
        QuantileFn::from_unsorted(self.0.clone())
    }
}

impl TryFrom<Vec<f64>> for Sample {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Sample::new(values)
    }
}

impl From<Sample> for Vec<f64> {
    fn from(sample: Sample) -> Self {
        sample.0
    }
}

impl AsRef<[f64]> for Sample {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Empirical quantile function over a sorted copy of a sample.
#[derive(Debug, Clone)]
pub struct QuantileFn {
    sorted: Vec<f64>,
}

impl QuantileFn {
    /// `values` must be non-empty and finite (guaranteed when built from a [`Sample`]).
    pub(crate) fn from_unsorted(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        QuantileFn { sorted: values }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Quantile lookup without range validation; `p` outside (0, 1) clamps
    /// to the extreme order statistics.
    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        let n = self.sorted.len();
        let index = (n as f64 * p).ceil() as i64 - 1;
        let index = index.clamp(0, n as i64 - 1) as usize;
        self.sorted[index]
    }

    /// Fraction of observations `<= t`.
    pub fn cdf(&self, t: f64) -> f64 {
        let count = self.sorted.partition_point(|&x| x <= t);
        count as f64 / self.sorted.len() as f64
    }
}

/// `(1/n) · #{x_i <= t}`.
pub fn empirical_cdf(sample: &Sample, t: f64) -> f64 {
    let count = sample.values().iter().filter(|&&x| x <= t).count();
    count as f64 / sample.len() as f64
}

/// Order-statistic quantile `sorted[clamp(ceil(n·p) − 1, 0, n − 1)]`.
pub fn empirical_quantile(sample: &Sample, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::QuantileLevel(p));
    }
    Ok(sample.to_quantile_fn().eval(p))
}

/// Draws `m` values by inverse-transform sampling: `p ~ U(0, 1)` pushed
/// through the empirical quantile function.
pub fn bootstrap_resample<R: Rng + ?Sized>(
    sample: &Sample,
    m: usize,
    rng: &mut R,
) -> Result<Sample> {
    if m == 0 {
        return Err(Error::param("m", "resample size must be at least 1"));
    }
    let quantiles = sample.to_quantile_fn();
    Ok(Sample(resample_from(&quantiles, m, rng)))
}

/// Inverse-transform resampling from an already sorted quantile function.
pub(crate) fn resample_from<R: Rng + ?Sized>(
    quantiles: &QuantileFn,
    m: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..m)
        .map(|_| quantiles.eval(rng.random::<f64>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;

    fn s(values: &[f64]) -> Sample {
        Sample::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cdf_examples() {
        let x = s(&[1.0, 2.0, 3.0]);
        assert_eq!(empirical_cdf(&x, 2.0), 2.0 / 3.0);
        assert_eq!(empirical_cdf(&x, 0.5), 0.0);
        assert_eq!(empirical_cdf(&x, 3.0), 1.0);
    }

    #[test]
    fn quantile_examples() {
        let x = s(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(empirical_quantile(&x, 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&x, 0.99).unwrap(), 4.0);
        for p in [0.01, 0.3, 0.5, 0.999] {
            assert_eq!(empirical_quantile(&s(&[5.0]), p).unwrap(), 5.0);
        }
    }

    #[test]
    fn quantile_rejects_levels_outside_open_interval() {
        let x = s(&[1.0, 2.0]);
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            let err = empirical_quantile(&x, p).unwrap_err();
            assert!(err.to_string().contains("quantile level out of range"));
        }
    }

    #[test]
    fn sample_validation() {
        assert_eq!(Sample::new(vec![]).unwrap_err().to_string(), "empty sample");
        assert!(matches!(
            Sample::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1, .. })
        ));
        assert!(Sample::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn resample_of_singleton_is_constant() {
        let mut rng = rng_from_seed(1);
        let out = bootstrap_resample(&s(&[5.0]), 10, &mut rng).unwrap();
        assert_eq!(out.values(), &[5.0; 10]);
    }

    #[test]
    fn resample_is_deterministic_given_seed() {
        let x = s(&[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0]);
        let a = bootstrap_resample(&x, 50, &mut rng_from_seed(42)).unwrap();
        let b = bootstrap_resample(&x, 50, &mut rng_from_seed(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resample_mean_matches_sample_mean() {
        let x = s(&(0..10).map(f64::from).collect::<Vec<_>>());
        let out = bootstrap_resample(&x, 100_000, &mut rng_from_seed(3)).unwrap();
        assert!((out.mean() - 4.5).abs() < 0.1, "mean {}", out.mean());
    }

    #[test]
    fn resample_rejects_zero_size() {
        assert!(bootstrap_resample(&s(&[1.0]), 0, &mut rng_from_seed(0)).is_err());
    }

    proptest! {
        #[test]
        fn cdf_is_a_step_function(values in prop::collection::vec(-100.0f64..100.0, 1..40), t in -120.0f64..120.0) {
            let x = s(&values);
            let n = x.len() as f64;
            let c = empirical_cdf(&x, t);
            prop_assert!((c * n - (c * n).round()).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(c, x.to_quantile_fn().cdf(t));
        }

        #[test]
        fn cdf_at_quantile_reaches_level(values in prop::collection::vec(-100.0f64..100.0, 1..40), p in 0.001f64..0.999) {
            let x = s(&values);
            let q = empirical_quantile(&x, p).unwrap();
            prop_assert!(empirical_cdf(&x, q) >= p);
        }

        #[test]
        fn resample_elements_come_from_input(values in prop::collection::vec(-100.0f64..100.0, 1..20), seed in any::<u64>()) {
            let x = s(&values);
            let out = bootstrap_resample(&x, 30, &mut rng_from_seed(seed)).unwrap();
            prop_assert!(out.values().iter().all(|v| values.contains(v)));
        }
    }
}
