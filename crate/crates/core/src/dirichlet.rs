//! Closed-form quantities of Dirichlet distributions and Monte Carlo
//! estimates to check them against.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::conformal::ProbVector;
use crate::error::{Error, Result};

/// Smallest accepted concentration; below it the digamma recurrence loses
/// accuracy.
pub const MIN_CONCENTRATION: f64 = 1e-3;

/// Digamma function `ψ(x)` for `x > 0`.
///
/// Shifts the argument above 10 with `ψ(x) = ψ(x+1) − 1/x`, then applies
/// the asymptotic expansion truncated after the `x⁻¹⁴` term.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli-number coefficients B_{2k} / (2k).
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    shift + x.ln() - 0.5 / x - series
}

/// `log B(α) = Σ log Γ(α_k) − log Γ(α₀)`.
pub fn log_beta(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}

/// Concentration parameters of a Dirichlet distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirichletParams {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl DirichletParams {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 {
            return Err(Error::param(
                "alpha",
                format!("need at least 2 components, got {}", alpha.len()),
            ));
        }
        if let Some((i, a)) = alpha
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && **a >= MIN_CONCENTRATION))
        {
            return Err(Error::param(
                "alpha",
                format!("component {i} = {a} must be finite and at least {MIN_CONCENTRATION}"),
            ));
        }
        let alpha0 = alpha.iter().sum();
        Ok(DirichletParams { alpha, alpha0 })
    }

    /// All-ones concentration: the uniform distribution on the simplex.
    pub fn uniform(k: usize) -> Result<Self> {
        DirichletParams::new(vec![1.0; k])
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    /// `E[π_k] = α_k / α₀`.
    pub fn mean(&self) -> Result<ProbVector> {
        ProbVector::new(self.mean_vec())
    }

    fn mean_vec(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.alpha0).collect()
    }

    /// `E[log π_k] = ψ(α_k) − ψ(α₀)`.
    pub fn log_expectation(&self, k: usize) -> Result<f64> {
        let a = self.alpha.get(k).ok_or(Error::LabelOutOfRange {
            label: k,
            classes: self.alpha.len(),
        })?;
        Ok(digamma(*a) - digamma(self.alpha0))
    }

    /// Differential entropy `log B(α) + (α₀ − K)ψ(α₀) − Σ (α_k − 1)ψ(α_k)`.
    pub fn entropy(&self) -> f64 {
        let k = self.alpha.len() as f64;
        log_beta(&self.alpha) + (self.alpha0 - k) * digamma(self.alpha0)
            - self
                .alpha
                .iter()
                .map(|&a| (a - 1.0) * digamma(a))
                .sum::<f64>()
    }

    /// `E[H(π)] = −Σ (α_k/α₀)(ψ(α_k + 1) − ψ(α₀ + 1))`.
    pub fn expected_entropy(&self) -> f64 {
        let tail = digamma(self.alpha0 + 1.0);
        -self
            .alpha
            .iter()
            .map(|&a| a / self.alpha0 * (digamma(a + 1.0) - tail))
            .sum::<f64>()
    }

    /// `KL(self ‖ reference)`.
    pub fn kl(&self, reference: &DirichletParams) -> Result<f64> {
        if reference.alpha.len() != self.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: self.alpha.len(),
                actual: reference.alpha.len(),
            });
        }
        let psi0 = digamma(self.alpha0);
        let cross: f64 = self
            .alpha
            .iter()
            .zip(&reference.alpha)
            .map(|(&a, &b)| (a - b) * (digamma(a) - psi0))
            .sum();
        Ok(log_beta(&reference.alpha) - log_beta(&self.alpha) + cross)
    }

    /// KL divergence to the uniform Dirichlet with the same `K`.
    pub fn kl_uniform(&self) -> f64 {
        let uniform = DirichletParams::uniform(self.alpha.len()).expect("K >= 2");
        self.kl(&uniform).expect("same dimension")
    }

    /// `−Σ (α_k/α₀)(log(α_k/α₀) − ψ(α_k + 1) + ψ(α₀ + 1))`.
    pub fn mutual_information(&self) -> f64 {
        let tail = digamma(self.alpha0 + 1.0);
        -self
            .alpha
            .iter()
            .map(|&a| {
                let m = a / self.alpha0;
                m * (m.ln() - digamma(a + 1.0) + tail)
            })
            .sum::<f64>()
    }

    /// Log density at a point of the open simplex.
    pub fn log_density(&self, pi: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(pi)
            .map(|(&a, &p)| (a - 1.0) * p.ln())
            .sum::<f64>()
            - log_beta(&self.alpha)
    }

    /// One draw via normalised Gamma variates.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut draw: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let total: f64 = draw.iter().sum();
        draw.iter_mut().for_each(|x| *x /= total);
        draw
    }
}

/// A closed form next to its Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McComparison {
    pub quantity: String,
    pub closed_form: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `(estimate − closed_form) / std_error`.
    pub z: f64,
}

/// Running mean and variance (Welford).
#[derive(Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn std_error(&self) -> f64 {
        (self.m2 / (self.n - 1.0)).sqrt() / self.n.sqrt()
    }
}

fn entropy_of(pi: &[f64]) -> f64 {
    -pi.iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

fn compare(quantity: String, closed_form: f64, estimate: f64, std_error: f64) -> McComparison {
    McComparison {
        quantity,
        closed_form,
        estimate,
        std_error,
        z: (estimate - closed_form) / std_error,
    }
}

/// Checks every closed form of `d` against `samples` Monte Carlo draws.
///
/// The mutual-information estimate `H(π̄) − mean H(π)` gets its standard
/// error from the linearisation `H(π̄) ≈ H(m) + ∇H(m)·(π̄ − m)`.
pub fn monte_carlo_check<R: Rng + ?Sized>(
    d: &DirichletParams,
    reference: &DirichletParams,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<McComparison>> {
    if samples < 2 {
        return Err(Error::param(
            "samples",
            "need at least two Monte Carlo draws",
        ));
    }
    if reference.num_classes() != d.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: d.num_classes(),
            actual: reference.num_classes(),
        });
    }
    let k = d.num_classes();
    let draws: Vec<Vec<f64>> = (0..samples).map(|_| d.sample(rng)).collect();

    let mut mean = (0..k).map(|_| Moments::default()).collect::<Vec<_>>();
    let mut log_mean = (0..k).map(|_| Moments::default()).collect::<Vec<_>>();
    let (mut neg_log_density, mut entropy, mut kl) =
        (Moments::default(), Moments::default(), Moments::default());
    for pi in &draws {
        for c in 0..k {
            mean[c].push(pi[c]);
            log_mean[c].push(pi[c].ln());
        }
        let log_p = d.log_density(pi);
        neg_log_density.push(-log_p);
        entropy.push(entropy_of(pi));
        kl.push(log_p - reference.log_density(pi));
    }

    let pi_bar: Vec<f64> = mean.iter().map(|m| m.mean).collect();
    let gradient: Vec<f64> = pi_bar.iter().map(|&m| -(m.ln() + 1.0)).collect();
    let mut mi = Moments::default();
    for pi in &draws {
        let linear: f64 = gradient.iter().zip(pi).map(|(g, p)| g * p).sum();
        mi.push(linear - entropy_of(pi));
    }
    let mi_estimate = entropy_of(&pi_bar) - entropy.mean;

    let closed_mean = d.mean_vec();
    let mut out = Vec::with_capacity(2 * k + 4);
    for c in 0..k {
        out.push(compare(
            format!("mean[{c}]"),
            closed_mean[c],
            mean[c].mean,
            mean[c].std_error(),
        ));
    }
    for (c, m) in log_mean.iter().enumerate() {
        out.push(compare(
            format!("log_expectation[{c}]"),
            d.log_expectation(c)?,
            m.mean,
            m.std_error(),
        ));
    }
    out.push(compare(
        "entropy".into(),
        d.entropy(),
        neg_log_density.mean,
        neg_log_density.std_error(),
    ));
    out.push(compare(
        "expected_entropy".into(),
        d.expected_entropy(),
        entropy.mean,
        entropy.std_error(),
    ));
    out.push(compare(
        "kl".into(),
        d.kl(reference)?,
        kl.mean,
        kl.std_error(),
    ));
    out.push(compare(
        "mutual_information".into(),
        d.mutual_information(),
        mi_estimate,
        mi.std_error(),
    ));
    Ok(out)
}
