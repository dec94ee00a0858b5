//! `aso-sim`: Type I / Type II error-rate grids.

use std::fmt::Write;
use std::path::Path;

use clap::Args;
use uqkit::error_sim::{type1_rates, type2_rates, DistSpec, ErrorRateReport, SimConfig, SimTest};
use uqkit::significance::{AsoConfig, ClassicTest, DEFAULT_DT, DEFAULT_NUM_BOOTSTRAP};

use crate::error::{CliError, CliResult};
use crate::output::emit;
use crate::plot::{line_chart, Series};

pub const SCHEMA: &str = "uqkit.aso-sim/v1";
pub const COLUMNS: &str = "test,dist,n,threshold,trials,rate,se,seed";

#[derive(Debug, Args)]
pub struct AsoSimArgs {
    /// Score distribution, e.g. `normal:0:1.5`, `laplace:0:1`, `rayleigh:1`, `mixture`.
    #[arg(long, default_value = "normal:0:1.5")]
    pub dist: String,
    /// Distribution of the worse system. When given, Type II rates are
    /// reported with `--dist` as the truly better system.
    #[arg(long)]
    pub dist_b: Option<String>,
    /// Sample sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![5])]
    pub n: Vec<usize>,
    /// Tests: aso, student-t, bootstrap, permutation, wilcoxon, mann-whitney.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["aso".to_string()])]
    pub test: Vec<String>,
    /// ASO rejection thresholds on `eps_min`.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2])]
    pub tau: Vec<f64>,
    /// p-value threshold for the classical tests.
    #[arg(long, default_value_t = 0.05)]
    pub p_threshold: f64,
    /// Confidence level of the ASO bound.
    #[arg(long, default_value_t = 0.05)]
    pub aso_alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    #[arg(long, default_value_t = DEFAULT_DT)]
    pub dt: f64,
    /// ASO bootstrap iterations.
    #[arg(long, default_value_t = DEFAULT_NUM_BOOTSTRAP)]
    pub bootstrap: usize,
    /// Resamples for the bootstrap and permutation tests.
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

fn parse_test(name: &str, args: &AsoSimArgs) -> CliResult<SimTest> {
    if name == "aso" {
        return Ok(SimTest::Aso(AsoConfig {
            alpha: args.aso_alpha,
            num_bootstrap: args.bootstrap,
            dt: args.dt,
        }));
    }
    ClassicTest::ALL
        .into_iter()
        .find(|t| t.name() == name)
        .map(|kind| SimTest::Classic {
            kind,
            resamples: args.resamples,
        })
        .ok_or_else(|| CliError::Usage(format!("unknown test {name:?}")))
}

/// Runs the grid and returns rows in canonical order: test name, then
/// sample size, then threshold.
pub fn run_grid(args: &AsoSimArgs, seed: u64) -> CliResult<Vec<ErrorRateReport>> {
    let dist_a: DistSpec = args.dist.parse()?;
    let dist_b: Option<DistSpec> = args.dist_b.as_deref().map(str::parse).transpose()?;
    if args.n.is_empty() || args.test.is_empty() {
        return Err(CliError::Usage(
            "need at least one sample size and one test".into(),
        ));
    }
    let mut names = args.test.clone();
    names.sort();
    names.dedup();
    let mut sizes = args.n.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut taus = args.tau.clone();
    taus.sort_by(f64::total_cmp);
    taus.dedup();

    let mut rows = Vec::new();
    for name in &names {
        let test = parse_test(name, args)?;
        let thresholds = match test {
            SimTest::Aso(_) => taus.clone(),
            SimTest::Classic { .. } => vec![args.p_threshold],
        };
        for &n in &sizes {
            let config = SimConfig {
                n,
                trials: args.trials,
                seed,
                threads: 0,
            };
            let cell = match &dist_b {
                None => type1_rates(&test, &dist_a, &config, &thresholds)?,
                Some(b) => type2_rates(&test, &dist_a, b, &config, &thresholds)?,
            };
            rows.extend(cell);
        }
    }
    Ok(rows)
}

fn dist_label(row: &ErrorRateReport) -> String {
    if row.dist_a == row.dist_b {
        row.dist_a.label()
    } else {
        format!("{} vs {}", row.dist_a.label(), row.dist_b.label())
    }
}

pub fn to_csv(rows: &[ErrorRateReport], seed: u64) -> String {
    let mut out = format!("# schema={SCHEMA}\n{COLUMNS}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.test,
            dist_label(r),
            r.n,
            r.threshold,
            r.trials,
            r.rate,
            r.se,
            seed
        );
    }
    out
}

fn plot(rows: &[ErrorRateReport]) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in rows {
        let label = format!("{} @ {}", r.test, r.threshold);
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((r.n as f64, r.rate)),
            None => series.push(Series {
                label,
                points: vec![(r.n as f64, r.rate)],
            }),
        }
    }
    line_chart("Error rate by sample size", "n", "rate", &series)
}

pub fn run(
    args: &AsoSimArgs,
    seed: u64,
    output: Option<&Path>,
    plot_path: Option<&Path>,
) -> CliResult<()> {
    let rows = run_grid(args, seed)?;
    emit(output, &to_csv(&rows, seed))?;
    if let Some(p) = plot_path {
        emit(Some(p), &plot(&rows))?;
    }
    Ok(())
}
