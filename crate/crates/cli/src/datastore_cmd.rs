//! `datastore`: inspect and convert UQDS files.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use serde::Serialize;
use uqkit::datastore::Datastore;

use crate::error::{CliError, CliResult};
use crate::output::{emit, to_json};

pub const INFO_SCHEMA: &str = "uqkit.datastore-info/v1";
pub const DUMP_SCHEMA: &str = "uqkit.datastore-dump/v1";

#[derive(Debug, Args)]
pub struct DatastoreArgs {
    #[command(subcommand)]
    pub command: DatastoreCommand,
}

#[derive(Debug, Subcommand)]
pub enum DatastoreCommand {
    /// Record count, dimension and score summary as JSON.
    Info { path: PathBuf },
    /// Every record as one CSV row.
    Dump {
        path: PathBuf,
        /// Emit CSV (the only dump format).
        #[arg(long, required = true)]
        csv: bool,
    },
    /// Rebuild a UQDS file from a CSV dump; the file is written to `--output`.
    BuildFromCsv { csv: PathBuf },
}

#[derive(Debug, Serialize)]
pub struct StoreInfo {
    pub schema: &'static str,
    pub count: usize,
    pub dim: usize,
    pub file_bytes: u64,
    pub score_min: Option<f64>,
    pub score_max: Option<f64>,
    pub score_mean: Option<f64>,
}

pub fn info(path: &Path) -> CliResult<StoreInfo> {
    let store = Datastore::load(path)?;
    let scores = store.scores();
    let (min, max, mean) = if scores.is_empty() {
        (None, None, None)
    } else {
        (
            Some(scores.iter().copied().fold(f64::INFINITY, f64::min)),
            Some(scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
            Some(scores.iter().sum::<f64>() / scores.len() as f64),
        )
    };
    Ok(StoreInfo {
        schema: INFO_SCHEMA,
        count: store.len(),
        dim: store.dim(),
        file_bytes: fs::metadata(path)?.len(),
        score_min: min,
        score_max: max,
        score_mean: mean,
    })
}

/// CSV with a schema line carrying the dimension, then `index,score,z0,…`.
/// Floats use shortest round-trip formatting, so a rebuild is exact.
pub fn dump_csv(store: &Datastore) -> String {
    let mut out = format!("# schema={DUMP_SCHEMA} dim={}\nindex,score", store.dim());
    for j in 0..store.dim() {
        let _ = write!(out, ",z{j}");
    }
    out.push('\n');
    for i in 0..store.len() {
        let _ = write!(out, "{i},{}", store.score(i));
        for v in store.latent(i) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> CliResult<Datastore> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| CliError::Data(format!("line {}: {msg}", line + 1));
    let (_, schema) = lines
        .next()
        .ok_or_else(|| CliError::Data("empty CSV".into()))?;
    let rest = schema
        .strip_prefix(&format!("# schema={DUMP_SCHEMA} dim="))
        .ok_or_else(|| bad(0, format!("expected a {DUMP_SCHEMA} schema line")))?;
    let dim: usize = rest
        .trim()
        .parse()
        .map_err(|_| bad(0, format!("bad dimension {rest:?}")))?;
    lines
        .next()
        .ok_or_else(|| bad(1, "missing column header".into()))?;
    let mut store = Datastore::new(dim)?;
    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(bad(
                line,
                format!("expected {} fields, found {}", dim + 2, fields.len()),
            ));
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| bad(line, format!("bad score {:?}", fields[1])))?;
        let latent = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|_| bad(line, format!("bad latent value {f:?}")))
            })
            .collect::<CliResult<Vec<f32>>>()?;
        store
            .push(&latent, score)
            .map_err(|e| bad(line, e.to_string()))?;
    }
    Ok(store)
}

pub fn run(args: &DatastoreArgs, output: Option<&Path>) -> CliResult<()> {
    match &args.command {
        DatastoreCommand::Info { path } => emit(output, &to_json(&info(path)?)?),
        DatastoreCommand::Dump { path, .. } => emit(output, &dump_csv(&Datastore::load(path)?)),
        DatastoreCommand::BuildFromCsv { csv } => {
            let out =
                output.ok_or_else(|| CliError::Usage("build-from-csv needs --output".into()))?;
            let store = parse_csv(&fs::read_to_string(csv)?)?;
            store.save(out)?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut store = Datastore::new(3).unwrap();
        store
            .push(&[0.1, -2.5e-8, 3.0], 0.123_456_789_012_345_6)
            .unwrap();
        store
            .push(&[f32::MIN_POSITIVE, 1.0 / 3.0, -0.0], 1.0)
            .unwrap();
        let rebuilt = parse_csv(&dump_csv(&store)).unwrap();
        assert_eq!(rebuilt.to_bytes(), store.to_bytes());
    }

    #[test]
    fn empty_store_round_trips() {
        let store = Datastore::new(4).unwrap();
        let rebuilt = parse_csv(&dump_csv(&store)).unwrap();
        assert_eq!(rebuilt.dim(), 4);
        assert!(rebuilt.is_empty());
    }

    #[test]
    fn malformed_rows_are_data_errors() {
        let text = format!("# schema={DUMP_SCHEMA} dim=2\nindex,score,z0,z1\n0,0.5,1.0\n");
        assert!(matches!(parse_csv(&text), Err(CliError::Data(_))));
        assert!(matches!(parse_csv("garbage"), Err(CliError::Data(_))));
    }
}
