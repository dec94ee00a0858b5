//! `conformal-eval`: split versus kNN-weighted conformal generation on the
//! synthetic model, under a sweep of latent noise levels.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use uqkit::conformal::{Qhat, ScoreKind, TemperatureSearch};
use uqkit::datastore::{Datastore, Metric};
use uqkit::metrics::{coverage_from_sizes, DEFAULT_SIZE_BINS};
use uqkit::seed::stream;
use uqkit::synthetic::{
    default_search, evaluate, noise_directions, shift_steps, store_from_steps, tune_temperature,
    Method, StepOutcome, SynthModel, DEFAULT_LATENT_NOISE, DEFAULT_MIXING_GAIN, DEFAULT_NEIGHBORS,
    DEFAULT_TEMPERATURE,
};

use crate::error::{CliError, CliResult};
use crate::output::{emit, to_json};
use crate::plot::{line_chart, Series};

pub const SCHEMA: &str = "uqkit.conformal-eval/v1";

const STREAM_CALIBRATION: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_TUNING: u64 = 3;
const STREAM_SEARCH: u64 = 4;
const STREAM_NOISE: u64 = 8;

#[derive(Debug, Args)]
pub struct ConformalEvalArgs {
    #[arg(long, default_value_t = 100)]
    pub vocab: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_cal: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_test: usize,
    /// Steps in the separate stream used for temperature search.
    #[arg(long, default_value_t = 500)]
    pub n_tune: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Neighbours retrieved per step.
    #[arg(long, default_value_t = DEFAULT_NEIGHBORS)]
    pub k: usize,
    /// Methods: split, unit-weights, knn.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["split".to_string(), "knn".to_string()])]
    pub methods: Vec<String>,
    /// Retrieval metrics for knn: l2, ip, cos.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["l2".to_string()])]
    pub metric: Vec<String>,
    /// Fixed kernel temperature; searched on the tuning stream when absent.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Test-time latent noise levels as multiples of the calibration latent std.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0])]
    pub noise: Vec<f64>,
    /// Set-size bins for SSC and ECG.
    #[arg(long, default_value_t = DEFAULT_SIZE_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = DEFAULT_LATENT_NOISE)]
    pub latent_noise: f64,
    #[arg(long, default_value_t = DEFAULT_MIXING_GAIN)]
    pub gain: f64,
    /// Evaluate every test step under both `+ξ` and `−ξ` (antithetic noise
    /// pairs), which cancels the first-order effect of the noise draw.
    #[arg(long)]
    pub antithetic: bool,
    /// Use this UQDS file as the calibration store instead of generating one.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Write the generated calibration store to this UQDS file.
    #[arg(long)]
    pub save_store: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionRecord {
    pub method: String,
    pub metric: Option<String>,
    pub tau: Option<f64>,
    pub alpha: f64,
    /// Noise level as a multiple of the calibration latent std.
    pub noise: f64,
    /// Absolute noise standard deviation.
    pub sigma: f64,
    pub coverage: f64,
    pub width: f64,
    pub mean_size: f64,
    pub ssc: f64,
    pub ecg: f64,
    pub full_fraction: f64,
    /// FNV-1a hash of the per-step `q̂` stream.
    pub qhat_digest: String,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub schema: &'static str,
    pub seed: u64,
    pub vocab: usize,
    pub dim: usize,
    pub n_cal: usize,
    pub n_test: usize,
    pub latent_std: f64,
    pub records: Vec<ConditionRecord>,
}

fn qhat_digest(outcomes: &[StepOutcome]) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for o in outcomes {
        let bits = match o.q_hat {
            Qhat::Value(q) => q.to_bits(),
            Qhat::Full => u64::MAX,
        };
        for byte in bits.to_le_bytes() {
            hash ^= u64::from(byte);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{hash:016x}")
}

/// Pooled standard deviation of every latent coordinate in the store.
fn store_latent_std(store: &Datastore) -> f64 {
    let values: Vec<f64> = (0..store.len())
        .flat_map(|i| store.latent(i).iter().map(|&v| f64::from(v)))
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum MethodKind {
    Split,
    UnitWeights,
    Knn,
}

fn parse_methods(names: &[String]) -> CliResult<Vec<MethodKind>> {
    let mut out = names
        .iter()
        .map(|n| match n.as_str() {
            "split" => Ok(MethodKind::Split),
            "unit-weights" => Ok(MethodKind::UnitWeights),
            "knn" => Ok(MethodKind::Knn),
            other => Err(CliError::Usage(format!("unknown method {other:?}"))),
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn parse_metrics(names: &[String]) -> CliResult<Vec<Metric>> {
    let requested = names
        .iter()
        .map(|n| {
            n.parse::<Metric>()
                .map_err(|_| CliError::Usage(format!("unknown metric {n:?}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Metric::ALL
        .into_iter()
        .filter(|m| requested.contains(m))
        .collect())
}

fn search_bounds(
    args: &ConformalEvalArgs,
    store: &Datastore,
    metric: Metric,
) -> CliResult<TemperatureSearch> {
    let default = default_search(store, args.k, metric)?;
    let search = TemperatureSearch::new(
        args.tau_min.unwrap_or(default.tau_min),
        args.tau_max.unwrap_or(default.tau_max),
    );
    if !(search.tau_min > 0.0 && search.tau_min < search.tau_max) {
        return Err(CliError::Usage(format!(
            "need 0 < tau-min < tau-max, got [{}, {}]",
            search.tau_min, search.tau_max
        )));
    }
    Ok(search)
}

pub fn run_eval(args: &ConformalEvalArgs, seed: u64) -> CliResult<EvalReport> {
    let methods = parse_methods(&args.methods)?;
    let metrics = parse_metrics(&args.metric)?;
    if methods.contains(&MethodKind::Knn) && metrics.is_empty() {
        return Err(CliError::Usage("knn needs at least one metric".into()));
    }
    if args.noise.iter().any(|&f| !(f.is_finite() && f >= 0.0)) {
        return Err(CliError::Usage(
            "noise levels must be finite and >= 0".into(),
        ));
    }
    if args.n_test == 0 || args.n_tune == 0 {
        return Err(CliError::Usage(
            "n-test and n-tune must be at least 1".into(),
        ));
    }
    let mut noise = args.noise.clone();
    noise.sort_by(f64::total_cmp);
    noise.dedup();

    let model = SynthModel::with_gain(args.vocab, args.dim, args.gain, seed)?
        .with_temperature(args.temperature)?
        .with_latent_noise(args.latent_noise)?;
    let store = match &args.store {
        Some(path) => {
            let store = Datastore::load(path)?;
            if store.dim() != args.dim {
                return Err(uqkit::Error::DimensionMismatch {
                    expected: args.dim,
                    actual: store.dim(),
                }
                .into());
            }
            store
        }
        None => {
            let cal = model.generate(args.n_cal, &mut stream(seed, STREAM_CALIBRATION))?;
            store_from_steps(&cal, ScoreKind::Adaptive)?
        }
    };
    if store.is_empty() {
        return Err(uqkit::Error::EmptyStore.into());
    }
    if let Some(path) = &args.save_store {
        store.save(path)?;
    }
    let test = model.generate(args.n_test, &mut stream(seed, STREAM_TEST))?;
    let s = store_latent_std(&store);

    let mut knn_methods = Vec::new();
    if methods.contains(&MethodKind::Knn) {
        let tuning = model.generate(args.n_tune, &mut stream(seed, STREAM_TUNING))?;
        for metric in &metrics {
            let tau = match args.tau {
                Some(t) => t,
                None => {
                    let index = Metric::ALL.iter().position(|m| m == metric).unwrap_or(0) as u64;
                    let search = search_bounds(args, &store, *metric)?;
                    let tau = tune_temperature(
                        &store,
                        &tuning,
                        args.k,
                        *metric,
                        args.alpha,
                        &search,
                        &mut stream(seed, STREAM_SEARCH + index),
                    )?;
                    log::info!("tuned tau for {} = {tau}", metric.name());
                    tau
                }
            };
            knn_methods.push(Method::Knn {
                k: args.k,
                tau,
                metric: *metric,
            });
        }
    }

    let mut directions = noise_directions(test.len(), args.dim, &mut stream(seed, STREAM_NOISE));
    let test = if args.antithetic {
        let negated: Vec<Vec<f64>> = directions
            .iter()
            .map(|d| d.iter().map(|v| -v).collect())
            .collect();
        directions.extend(negated);
        test.iter().chain(&test).cloned().collect()
    } else {
        test
    };
    let mut records = Vec::new();
    for &level in &noise {
        let sigma = level * s;
        let shifted = shift_steps(&model, &test, &directions, sigma)?;
        let mut conditions = Vec::new();
        for kind in &methods {
            match kind {
                MethodKind::Split => conditions.push(Method::Split),
                MethodKind::UnitWeights => conditions.push(Method::UnitWeights),
                MethodKind::Knn => conditions.extend(knn_methods.iter().copied()),
            }
        }
        for method in conditions {
            let outcomes = evaluate(&store, &shifted, method, args.alpha)?;
            let sizes: Vec<usize> = outcomes.iter().map(|o| o.size).collect();
            let covered: Vec<bool> = outcomes.iter().map(|o| o.covered).collect();
            let report = coverage_from_sizes(&sizes, &covered, args.alpha, args.bins, args.vocab)?;
            let (metric, tau) = match method {
                Method::Knn { tau, metric, .. } => (Some(metric.name().to_string()), Some(tau)),
                _ => (None, None),
            };
            records.push(ConditionRecord {
                method: method.name().to_string(),
                metric,
                tau,
                alpha: args.alpha,
                noise: level,
                sigma,
                coverage: report.coverage,
                width: report.width,
                mean_size: sizes.iter().sum::<usize>() as f64 / sizes.len() as f64,
                ssc: report.ssc,
                ecg: report.ecg,
                full_fraction: outcomes.iter().filter(|o| o.q_hat.is_full()).count() as f64
                    / outcomes.len() as f64,
                qhat_digest: qhat_digest(&outcomes),
                seed,
            });
        }
    }
    Ok(EvalReport {
        schema: SCHEMA,
        seed,
        vocab: args.vocab,
        dim: args.dim,
        n_cal: store.len(),
        n_test: args.n_test,
        latent_std: s,
        records,
    })
}

fn plot(report: &EvalReport) -> String {
    let mut series: Vec<Series> = Vec::new();
    for r in &report.records {
        let label = match &r.metric {
            Some(m) => format!("{} ({m})", r.method),
            None => r.method.clone(),
        };
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((r.noise, r.coverage)),
            None => series.push(Series {
                label,
                points: vec![(r.noise, r.coverage)],
            }),
        }
    }
    line_chart(
        "Coverage by latent noise",
        "noise / latent std",
        "coverage",
        &series,
    )
}

pub fn run(
    args: &ConformalEvalArgs,
    seed: u64,
    output: Option<&Path>,
    plot_path: Option<&Path>,
) -> CliResult<()> {
    let report = run_eval(args, seed)?;
    emit(output, &to_json(&report)?)?;
    if let Some(p) = plot_path {
        emit(Some(p), &plot(&report))?;
    }
    Ok(())
}
