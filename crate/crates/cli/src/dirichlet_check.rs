//! `dirichlet-check`: closed-form Dirichlet quantities against Monte Carlo.

use std::path::Path;

use clap::Args;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use uqkit::dirichlet::{monte_carlo_check, DirichletParams, McComparison};
use uqkit::metrics::predictive_entropy;
use uqkit::seed::stream;

use crate::error::{CliError, CliResult};
use crate::output::{emit, to_json};
use crate::plot::bar_chart;

pub const SCHEMA: &str = "uqkit.dirichlet-check/v1";

#[derive(Debug, Args)]
pub struct DirichletCheckArgs {
    /// Check a single concentration vector, e.g. `1,1,1`.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Number of random concentration vectors when `--alpha` is absent.
    #[arg(long, default_value_t = 20)]
    pub num_alphas: usize,
    #[arg(long, default_value_t = 8)]
    pub max_classes: usize,
    #[arg(long, default_value_t = 0.2)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub alpha_max: f64,
    /// Monte Carlo draws per concentration vector.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

#[derive(Debug, Serialize)]
pub struct CaseReport {
    pub alpha: Vec<f64>,
    pub kl_uniform: f64,
    pub entropy: f64,
    pub expected_entropy: f64,
    pub mutual_information: f64,
    /// `|H[E π] − (E[H[π]] + MI)|`.
    pub decomposition_error: f64,
    pub max_abs_z: f64,
    pub comparisons: Vec<McComparison>,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub schema: &'static str,
    pub seed: u64,
    pub samples: usize,
    pub max_abs_z: f64,
    pub max_decomposition_error: f64,
    pub cases: Vec<CaseReport>,
}

fn random_alphas(args: &DirichletCheckArgs, seed: u64) -> CliResult<Vec<Vec<f64>>> {
    if args.max_classes < 2 {
        return Err(CliError::Usage("max-classes must be at least 2".into()));
    }
    if !(args.alpha_min > 0.0 && args.alpha_min <= args.alpha_max && args.alpha_max.is_finite()) {
        return Err(CliError::Usage("need 0 < alpha-min <= alpha-max".into()));
    }
    Ok((0..args.num_alphas)
        .map(|i| {
            let mut rng = stream(seed, 2 * i as u64);
            let k = rng.random_range(2..=args.max_classes);
            (0..k)
                .map(|_| rng.random_range(args.alpha_min..=args.alpha_max))
                .collect()
        })
        .collect())
}

fn check_case(alpha: Vec<f64>, index: usize, samples: usize, seed: u64) -> CliResult<CaseReport> {
    let d = DirichletParams::new(alpha)?;
    let reference = DirichletParams::uniform(d.num_classes())?;
    let comparisons = monte_carlo_check(
        &d,
        &reference,
        samples,
        &mut stream(seed, 2 * index as u64 + 1),
    )?;
    let max_abs_z = comparisons.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let total = predictive_entropy(&d.mean()?);
    Ok(CaseReport {
        alpha: d.alpha().to_vec(),
        kl_uniform: d.kl_uniform(),
        entropy: d.entropy(),
        expected_entropy: d.expected_entropy(),
        mutual_information: d.mutual_information(),
        decomposition_error: (total - d.expected_entropy() - d.mutual_information()).abs(),
        max_abs_z,
        comparisons,
    })
}

pub fn run_check(args: &DirichletCheckArgs, seed: u64) -> CliResult<CheckReport> {
    let alphas = match &args.alpha {
        Some(a) => vec![a.clone()],
        None => random_alphas(args, seed)?,
    };
    let cases = alphas
        .into_par_iter()
        .enumerate()
        .map(|(i, a)| check_case(a, i, args.samples, seed))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(CheckReport {
        schema: SCHEMA,
        seed,
        samples: args.samples,
        max_abs_z: cases.iter().map(|c| c.max_abs_z).fold(0.0, f64::max),
        max_decomposition_error: cases
            .iter()
            .map(|c| c.decomposition_error)
            .fold(0.0, f64::max),
        cases,
    })
}

pub fn run(
    args: &DirichletCheckArgs,
    seed: u64,
    output: Option<&Path>,
    plot_path: Option<&Path>,
) -> CliResult<()> {
    let report = run_check(args, seed)?;
    eprintln!(
        "max |z| = {:.4} over {} cases",
        report.max_abs_z,
        report.cases.len()
    );
    emit(output, &to_json(&report)?)?;
    if let Some(p) = plot_path {
        let bars: Vec<(String, f64)> = report
            .cases
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("case {i}"), c.max_abs_z))
            .collect();
        emit(
            Some(p),
            &bar_chart("Largest |z| per case", "case", "|z|", &bars),
        )?;
    }
    Ok(())
}
