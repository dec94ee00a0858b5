//! Almost Stochastic Order (ASO) and classical two-sample significance tests.
//!
//! ASO quantifies how far score distribution `a` is from being
//! stochastically larger than `b` through the *violation ratio*: the share of
//! the squared 2-Wasserstein distance between the two quantile functions
//! that lies where `F⁻¹(t) < G⁻¹(t)`. A bootstrap estimate of its spread
//! turns it into the bound `eps_min`; `a` is declared almost stochastically
//! dominant over `b` when `eps_min < τ`.
//!
//! All classical tests report one-sided p-values for the alternative
//! "`a` tends to be larger than `b`".

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::empirical::{resample_from, QuantileFn, Sample};
use crate::error::{check_open_unit, Error, Result};

/// Default integration step for the violation ratio.
pub const DEFAULT_DT: f64 = 0.005;
/// Default number of bootstrap iterations for ASO.
pub const DEFAULT_NUM_BOOTSTRAP: usize = 1000;
/// Default rejection threshold for `eps_min`.
pub const DEFAULT_TAU: f64 = 0.2;
/// Sample sizes up to this value use exact rank-test null distributions.
pub const EXACT_RANK_LIMIT: usize = 12;

/// Outcome of an ASO comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsoResult {
    /// Upper confidence bound on the violation ratio, clamped to `[0, 1]`.
    pub eps_min: f64,
    pub violation_ratio: f64,
    /// Bootstrap standard deviation of the rescaled violation ratio.
    pub sigma_hat: f64,
}

impl AsoResult {
    /// `a` is almost stochastically dominant over `b` at threshold `tau`.
    pub fn rejects(&self, tau: f64) -> bool {
        self.eps_min < tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsoConfig {
    /// Confidence parameter passed to the inverse normal CDF.
    pub alpha: f64,
    pub num_bootstrap: usize,
    pub dt: f64,
}

impl Default for AsoConfig {
    fn default() -> Self {
        AsoConfig {
            alpha: 0.05,
            num_bootstrap: DEFAULT_NUM_BOOTSTRAP,
            dt: DEFAULT_DT,
        }
    }
}

/// Result of a classical significance test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    /// One-sided p-value in `[0, 1]`.
    pub p_value: f64,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64) -> Self {
        TestResult {
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassicTest {
    /// Pooled-variance two-sample Student's t.
    StudentT,
    /// Mean-difference bootstrap with both samples shifted to the pooled mean.
    Bootstrap,
    /// Permutation-randomization test on the mean difference.
    Permutation,
    /// Paired Wilcoxon signed-rank test.
    Wilcoxon,
    MannWhitney,
}

impl ClassicTest {
    pub const ALL: [ClassicTest; 5] = [
        ClassicTest::StudentT,
        ClassicTest::Bootstrap,
        ClassicTest::Permutation,
        ClassicTest::Wilcoxon,
        ClassicTest::MannWhitney,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClassicTest::StudentT => "student-t",
            ClassicTest::Bootstrap => "bootstrap",
            ClassicTest::Permutation => "permutation",
            ClassicTest::Wilcoxon => "wilcoxon",
            ClassicTest::MannWhitney => "mann-whitney",
        }
    }
}

/// Integration grid `dt, 2dt, …` strictly inside `(0, 1)`.
fn integration_grid(dt: f64) -> impl Iterator<Item = f64> {
    (0..)
        .map(move |i| dt + i as f64 * dt)
        .take_while(|&t| t < 1.0 - 1e-12)
}

fn check_dt(dt: f64) -> Result<()> {
    check_open_unit("dt", dt)
}

pub(crate) fn violation_ratio_sorted(a: &QuantileFn, b: &QuantileFn, dt: f64) -> f64 {
    let mut violation = 0.0;
    let mut total = 0.0;
    for t in integration_grid(dt) {
        let f = a.eval(t);
        let g = b.eval(t);
        let sq = (g - f) * (g - f) * dt;
        total += sq;
        if f < g {
            violation += sq;
        }
    }
    if total == 0.0 {
        0.5
    } else {
        violation / total
    }
}

/// Violation ratio `ε_W2(a, b)` integrated on a grid of step `dt`.
///
/// Returns 0.5 when the two quantile functions coincide on the grid.
pub fn violation_ratio(a: &Sample, b: &Sample, dt: f64) -> Result<f64> {
    check_dt(dt)?;
    Ok(violation_ratio_sorted(
        &a.to_quantile_fn(),
        &b.to_quantile_fn(),
        dt,
    ))
}

/// Runs the ASO test of `a` against `b`.
pub fn aso<R: Rng + ?Sized>(
    a: &Sample,
    b: &Sample,
    config: &AsoConfig,
    rng: &mut R,
) -> Result<AsoResult> {
    check_open_unit("alpha", config.alpha)?;
    check_dt(config.dt)?;
    if config.num_bootstrap == 0 {
        return Err(Error::param("num_bootstrap", "must be at least 1"));
    }
    let qa = a.to_quantile_fn();
    let qb = b.to_quantile_fn();
    let (n, m) = (a.len() as f64, b.len() as f64);
    let eps = violation_ratio_sorted(&qa, &qb, config.dt);

    let scale = (n * m / (n + m)).sqrt();
    let rescaled: Vec<f64> = (0..config.num_bootstrap)
        .map(|_| {
            let ra = QuantileFn::from_unsorted(resample_from(&qa, a.len(), rng));
            let rb = QuantileFn::from_unsorted(resample_from(&qb, b.len(), rng));
            scale * (violation_ratio_sorted(&ra, &rb, config.dt) - eps)
        })
        .collect();
    let mean = rescaled.iter().sum::<f64>() / rescaled.len() as f64;
    let variance = rescaled
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / rescaled.len() as f64;
    let sigma_hat = variance.sqrt();

    let eps_min = eps - ((n + m) / (n * m)).sqrt() * sigma_hat * inverse_normal_cdf(config.alpha);
    Ok(AsoResult {
        eps_min: eps_min.clamp(0.0, 1.0),
        violation_ratio: eps,
        sigma_hat,
    })
}

/// Standard normal quantile via Acklam's rational approximation
/// (absolute error below 1.2e-9 on (0, 1)).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Runs one of the classical tests. `resamples` is only used by the
/// bootstrap and permutation tests.
pub fn classic_test<R: Rng + ?Sized>(
    kind: ClassicTest,
    a: &Sample,
    b: &Sample,
    resamples: usize,
    rng: &mut R,
) -> Result<TestResult> {
    match kind {
        ClassicTest::StudentT => student_t(a, b),
        ClassicTest::Bootstrap => bootstrap_test(a, b, resamples, rng),
        ClassicTest::Permutation => permutation_test(a, b, resamples, rng),
        ClassicTest::Wilcoxon => wilcoxon_signed_rank(a, b),
        ClassicTest::MannWhitney => mann_whitney_u(a, b),
    }
}

/// Bonferroni-adjusted significance level.
pub fn bonferroni(alpha: f64, num_comparisons: usize) -> Result<f64> {
    check_open_unit("alpha", alpha)?;
    if num_comparisons == 0 {
        return Err(Error::param("num_comparisons", "must be at least 1"));
    }
    Ok(alpha / num_comparisons as f64)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sum_sq_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m) * (x - m)).sum()
}

fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

pub fn student_t(a: &Sample, b: &Sample) -> Result<TestResult> {
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let df = n1 + n2 - 2.0;
    if df < 1.0 {
        return Err(Error::DegenerateVariance);
    }
    let pooled = (sum_sq_dev(a.values()) + sum_sq_dev(b.values())) / df;
    if pooled <= 0.0 || !pooled.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let t = (a.mean() - b.mean()) / (pooled * (1.0 / n1 + 1.0 / n2)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::param("df", e.to_string()))?;
    Ok(TestResult::new(t, dist.sf(t)))
}

fn check_resamples(resamples: usize) -> Result<()> {
    if resamples == 0 {
        Err(Error::param("resamples", "must be at least 1"))
    } else {
        Ok(())
    }
}

/// Tolerance so that re-summing the same numbers in another order still
/// counts as reaching the observed statistic.
fn reaches(stat: f64, observed: f64) -> bool {
    stat >= observed - 1e-12 * (1.0 + observed.abs())
}

pub fn bootstrap_test<R: Rng + ?Sized>(
    a: &Sample,
    b: &Sample,
    resamples: usize,
    rng: &mut R,
) -> Result<TestResult> {
    check_resamples(resamples)?;
    let (ma, mb) = (a.mean(), b.mean());
    let observed = ma - mb;
    let pooled = (a.values().iter().sum::<f64>() + b.values().iter().sum::<f64>())
        / (a.len() + b.len()) as f64;
    let shifted_a: Vec<f64> = a.values().iter().map(|x| x - ma + pooled).collect();
    let shifted_b: Vec<f64> = b.values().iter().map(|x| x - mb + pooled).collect();

    let resampled_mean = |values: &[f64], rng: &mut R| {
        let n = values.len();
        (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64
    };
    let mut hits = 0usize;
    for _ in 0..resamples {
        let stat = resampled_mean(&shifted_a, rng) - resampled_mean(&shifted_b, rng);
        if reaches(stat, observed) {
            hits += 1;
        }
    }
    Ok(TestResult::new(
        observed,
        (hits + 1) as f64 / (resamples + 1) as f64,
    ))
}

pub fn permutation_test<R: Rng + ?Sized>(
    a: &Sample,
    b: &Sample,
    resamples: usize,
    rng: &mut R,
) -> Result<TestResult> {
    check_resamples(resamples)?;
    let observed = a.mean() - b.mean();
    let mut pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    let n1 = a.len();
    let mut hits = 0usize;
    for _ in 0..resamples {
        pooled.shuffle(rng);
        let (left, right) = pooled.split_at(n1);
        if reaches(mean(left) - mean(right), observed) {
            hits += 1;
        }
    }
    Ok(TestResult::new(
        observed,
        (hits + 1) as f64 / (resamples + 1) as f64,
    ))
}

/// Mid-ranks (1-based) of `values`, plus the sizes of all tie groups.
pub(crate) fn mid_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

/// Mid-ranks are multiples of 1/2, so doubling makes them exact integers.
fn doubled(rank: f64) -> usize {
    (2.0 * rank).round() as usize
}

pub fn wilcoxon_signed_rank(a: &Sample, b: &Sample) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let diffs: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(TestResult::new(0.0, 1.0));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = mid_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();

    let p = if n <= EXACT_RANK_LIMIT {
        // Null distribution of the doubled positive-rank sum over all 2^n sign patterns.
        let weights: Vec<usize> = ranks.iter().map(|&r| doubled(r)).collect();
        let total: usize = weights.iter().sum();
        let mut counts = vec![0.0f64; total + 1];
        counts[0] = 1.0;
        for &w in &weights {
            for s in (w..=total).rev() {
                counts[s] += counts[s - w];
            }
        }
        let observed = doubled(w_plus);
        let tail: f64 = counts[observed..].iter().sum();
        tail / 2f64.powi(n as i32)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            normal_sf((w_plus - mean - 0.5) / var.sqrt())
        }
    };
    Ok(TestResult::new(w_plus, p))
}

pub fn mann_whitney_u(a: &Sample, b: &Sample) -> Result<TestResult> {
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.values().iter().chain(b.values()).copied().collect();
    let (ranks, ties) = mid_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;

    let p = if n1.max(n2) <= EXACT_RANK_LIMIT {
        // counts[k][s]: subsets of size k whose doubled rank sum is s.
        let weights: Vec<usize> = ranks.iter().map(|&r| doubled(r)).collect();
        let total: usize = weights.iter().sum();
        let mut counts = vec![vec![0.0f64; total + 1]; n1 + 1];
        counts[0][0] = 1.0;
        for &w in &weights {
            for k in (1..=n1).rev() {
                let (lower, upper) = counts.split_at_mut(k);
                let (prev, cur) = (&lower[k - 1], &mut upper[0]);
                for s in (w..=total).rev() {
                    cur[s] += prev[s - w];
                }
            }
        }
        let observed = doubled(rank_sum_a);
        let all: f64 = counts[n1].iter().sum();
        counts[n1][observed..].iter().sum::<f64>() / all
    } else {
        let (f1, f2) = (n1 as f64, n2 as f64);
        let n = f1 + f2;
        let mean = f1 * f2 / 2.0;
        let var = f1 * f2 / 12.0 * ((n + 1.0) - tie_term(&ties) / (n * (n - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            normal_sf((u - mean - 0.5) / var.sqrt())
        }
    };
    Ok(TestResult::new(u, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn s(values: &[f64]) -> Sample {
        Sample::new(values.to_vec()).unwrap()
    }

    /// Exact integral of the squared quantile difference over the violation
    /// set, computed piecewise between the jump points k/n and k/m.
    fn exact_violation_ratio(a: &[f64], b: &[f64]) -> f64 {
        let mut sa = a.to_vec();
        sa.sort_by(f64::total_cmp);
        let mut sb = b.to_vec();
        sb.sort_by(f64::total_cmp);
        let mut cuts: Vec<f64> = (0..=sa.len())
            .map(|k| k as f64 / sa.len() as f64)
            .chain((0..=sb.len()).map(|k| k as f64 / sb.len() as f64))
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let (mut violation, mut total) = (0.0, 0.0);
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            // Inside (k/n, (k+1)/n) the quantile is the (k+1)-th order statistic.
            let f = sa[(mid * sa.len() as f64).floor() as usize];
            let g = sb[(mid * sb.len() as f64).floor() as usize];
            let area = (g - f) * (g - f) * (w[1] - w[0]);
            total += area;
            if f < g {
                violation += area;
            }
        }
        violation / total
    }

    fn fine_grid_violation_ratio(a: &[f64], b: &[f64], dt: f64) -> f64 {
        let q = |sorted: &[f64], t: f64| {
            let n = sorted.len();
            let idx = ((n as f64 * t).ceil() as usize).clamp(1, n) - 1;
            sorted[idx]
        };
        let mut sa = a.to_vec();
        sa.sort_by(f64::total_cmp);
        let mut sb = b.to_vec();
        sb.sort_by(f64::total_cmp);
        let steps = (1.0 / dt).round() as usize;
        let (mut v, mut w) = (0.0, 0.0);
        for i in 1..steps {
            let t = i as f64 / steps as f64;
            let (f, g) = (q(&sa, t), q(&sb, t));
            w += (g - f).powi(2);
            if f < g {
                v += (g - f).powi(2);
            }
        }
        v / w
    }

    #[test]
    fn violation_ratio_examples() {
        let low = s(&[1.0, 2.0, 3.0]);
        let high = s(&[11.0, 12.0, 13.0]);
        assert_eq!(violation_ratio(&high, &low, DEFAULT_DT).unwrap(), 0.0);
        assert_eq!(violation_ratio(&low, &high, DEFAULT_DT).unwrap(), 1.0);
        assert_eq!(violation_ratio(&low, &low, DEFAULT_DT).unwrap(), 0.5);
    }

    #[test]
    fn violation_ratio_rejects_bad_dt() {
        let x = s(&[1.0]);
        for dt in [0.0, 1.0, -0.5, 2.0] {
            assert!(violation_ratio(&x, &x, dt).is_err());
        }
    }

    #[test]
    fn violation_ratio_matches_integration_oracles() {
        let mut rng = rng_from_seed(2024);
        let a: Vec<f64> = NormalDist::new(0.3, 1.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(50)
            .collect();
        let b: Vec<f64> = NormalDist::new(0.0, 1.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(50)
            .collect();
        let got = violation_ratio(&s(&a), &s(&b), DEFAULT_DT).unwrap();
        let exact = exact_violation_ratio(&a, &b);
        let fine = fine_grid_violation_ratio(&a, &b, 1e-5);
        assert!((got - fine).abs() < 1e-2, "{got} vs fine grid {fine}");
        assert!(
            (exact - fine).abs() < 1e-3,
            "oracles disagree: {exact} vs {fine}"
        );
    }

    #[test]
    fn aso_rejects_total_dominance() {
        let mut a: Vec<f64> = (101..=120).map(f64::from).collect();
        a.shuffle(&mut rng_from_seed(5));
        let b: Vec<f64> = (1..=20).map(f64::from).collect();
        let res = aso(
            &s(&a),
            &s(&b),
            &AsoConfig::default(),
            &mut rng_from_seed(11),
        )
        .unwrap();
        assert_eq!(res.violation_ratio, 0.0);
        assert!(res.eps_min < 0.2);
        assert!(res.rejects(DEFAULT_TAU));
    }

    #[test]
    fn aso_rarely_rejects_identical_samples() {
        let mut data_rng = rng_from_seed(99);
        let normal = NormalDist::new(0.0, 1.5).unwrap();
        let x: Vec<f64> = normal.sample_iter(&mut data_rng).take(20).collect();
        let sample = s(&x);
        let config = AsoConfig {
            num_bootstrap: 200,
            ..AsoConfig::default()
        };
        let kept = (0..500)
            .filter(|&trial| {
                let res = aso(&sample, &sample, &config, &mut rng_from_seed(trial)).unwrap();
                res.eps_min >= 0.2
            })
            .count();
        assert!(kept as f64 >= 0.95 * 500.0, "kept {kept}");
    }

    #[test]
    fn aso_eps_min_monotone_in_alpha() {
        let mut rng = rng_from_seed(8);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = normal.sample_iter(&mut rng).take(15).collect();
        let b: Vec<f64> = normal.sample_iter(&mut rng).take(12).collect();
        let mut prev = f64::INFINITY;
        for alpha in [0.01, 0.05, 0.1, 0.25] {
            let config = AsoConfig {
                alpha,
                num_bootstrap: 300,
                ..AsoConfig::default()
            };
            let res = aso(&s(&a), &s(&b), &config, &mut rng_from_seed(77)).unwrap();
            assert!(res.eps_min <= prev);
            assert!((0.0..=1.0).contains(&res.eps_min));
            prev = res.eps_min;
        }
    }

    #[test]
    fn aso_validates_config() {
        let x = s(&[1.0, 2.0]);
        let mut rng = rng_from_seed(0);
        let bad_b = AsoConfig {
            num_bootstrap: 0,
            ..AsoConfig::default()
        };
        assert!(aso(&x, &x, &bad_b, &mut rng).is_err());
        let bad_alpha = AsoConfig {
            alpha: 1.0,
            ..AsoConfig::default()
        };
        assert!(aso(&x, &x, &bad_alpha, &mut rng).is_err());
    }

    #[test]
    fn inverse_normal_matches_reference() {
        let reference = Normal::standard();
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let err = (inverse_normal_cdf(p) - reference.inverse_cdf(p)).abs();
            assert!(err < 1.5e-7, "p={p} err={err}");
        }
        for p in [1e-10, 1e-6, 0.001, 0.999, 1.0 - 1e-6] {
            assert!((inverse_normal_cdf(p) - reference.inverse_cdf(p)).abs() < 1.5e-7);
        }
        assert!((inverse_normal_cdf(0.05) + 1.644_853_626_951_472).abs() < 1e-8);
    }

    /// One-sided Mann-Whitney p-value by enumerating every split of the
    /// pooled ranks into groups of size n1.
    fn enumerate_mann_whitney(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let rank_of = |v: f64| {
            let less = pooled.iter().filter(|&&x| x < v).count() as f64;
            let equal = pooled.iter().filter(|&&x| x == v).count() as f64;
            less + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = pooled.iter().map(|&v| rank_of(v)).collect();
        let observed: f64 = ranks[..a.len()].iter().sum();
        let (mut hits, mut total) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            total += 1;
            let sum: f64 = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| ranks[i])
                .sum();
            if sum >= observed - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / total as f64
    }

    #[test]
    fn mann_whitney_exact_example() {
        let res = mann_whitney_u(&s(&[4.0, 5.0, 6.0]), &s(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(res.statistic, 9.0);
        assert!((res.p_value - 0.05).abs() < 1e-15);
        assert!(
            (res.p_value - enumerate_mann_whitney(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0])).abs()
                < 1e-15
        );
    }

    #[test]
    fn permutation_detects_large_shift() {
        let mut rng = rng_from_seed(4);
        let b: Vec<f64> = NormalDist::new(0.0, 1.0)
            .unwrap()
            .sample_iter(&mut rng)
            .take(10)
            .collect();
        let a: Vec<f64> = b.iter().map(|x| x + 100.0).collect();
        let res = permutation_test(&s(&a), &s(&b), 1000, &mut rng).unwrap();
        assert!(res.p_value < 0.01);
    }

    #[test]
    fn student_t_type_one_rate_is_nominal() {
        let normal = NormalDist::new(0.0, 1.5).unwrap();
        let rejections = (0..1000)
            .filter(|&trial| {
                let mut rng = rng_from_seed(trial);
                let a: Vec<f64> = normal.sample_iter(&mut rng).take(20).collect();
                let b: Vec<f64> = normal.sample_iter(&mut rng).take(20).collect();
                student_t(&s(&a), &s(&b)).unwrap().p_value < 0.05
            })
            .count();
        let rate = rejections as f64 / 1000.0;
        assert!((rate - 0.05).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn student_t_known_value() {
        // t = -1 on 4 degrees of freedom.
        let res = student_t(&s(&[1.0, 2.0, 3.0]), &s(&[2.0, 3.0, 4.0])).unwrap();
        assert!((res.statistic + 1.224_744_871_391_589).abs() < 1e-12);
        let reference = StudentsT::new(0.0, 1.0, 4.0).unwrap().sf(res.statistic);
        assert!((res.p_value - reference).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_mismatched_inputs() {
        let c = s(&[2.0, 2.0, 2.0]);
        assert_eq!(
            student_t(&c, &c).unwrap_err().to_string(),
            "degenerate variance"
        );
        assert!(wilcoxon_signed_rank(&s(&[1.0, 2.0]), &s(&[1.0])).is_err());
        let mut rng = rng_from_seed(0);
        assert!(bootstrap_test(&c, &c, 0, &mut rng).is_err());
        assert!(permutation_test(&c, &c, 0, &mut rng).is_err());
    }

    #[test]
    fn wilcoxon_exact_small_case() {
        // All four differences positive: only one of 16 sign patterns reaches W+ = 10.
        let res =
            wilcoxon_signed_rank(&s(&[2.0, 4.0, 6.0, 8.0]), &s(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(res.statistic, 10.0);
        assert!((res.p_value - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(0.05, 1).unwrap(), 0.05);
        assert!((bonferroni(0.05, 5).unwrap() - 0.01).abs() < 1e-15);
        assert!((bonferroni(0.10, 4).unwrap() - 0.025).abs() < 1e-15);
        assert!(bonferroni(0.05, 0).is_err());
    }

    proptest! {
        #[test]
        fn violation_ratio_is_antisymmetric(
            a in prop::collection::vec(-10.0f64..10.0, 2..30),
            b in prop::collection::vec(-10.0f64..10.0, 2..30),
        ) {
            let (sa, sb) = (s(&a), s(&b));
            let ab = violation_ratio(&sa, &sb, DEFAULT_DT).unwrap();
            let ba = violation_ratio(&sb, &sa, DEFAULT_DT).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assume!(ab != 0.5 || ba != 0.5);
            prop_assert!((ab + ba - 1.0).abs() < 0.05);
        }

        #[test]
        fn mann_whitney_matches_enumeration(
            a in prop::collection::vec(0u8..8, 1..6),
            b in prop::collection::vec(0u8..8, 1..6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let got = mann_whitney_u(&s(&a), &s(&b)).unwrap().p_value;
            prop_assert!((got - enumerate_mann_whitney(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn rank_tests_invariant_to_affine_maps(
            pairs in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..30),
            scale in 0.1f64..10.0,
            shift in -100.0f64..100.0,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0.round()).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1.round()).collect();
            let map = |v: &[f64]| v.iter().map(|x| x * scale.round().max(1.0) + shift.round()).collect::<Vec<_>>();
            let (ta, tb) = (map(&a), map(&b));
            prop_assert_eq!(
                wilcoxon_signed_rank(&s(&a), &s(&b)).unwrap().p_value,
                wilcoxon_signed_rank(&s(&ta), &s(&tb)).unwrap().p_value
            );
            prop_assert_eq!(
                mann_whitney_u(&s(&a), &s(&b)).unwrap().p_value,
                mann_whitney_u(&s(&ta), &s(&tb)).unwrap().p_value
            );
        }
    }
}
