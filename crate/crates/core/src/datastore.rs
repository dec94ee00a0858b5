//! Persistent store of (latent vector, non-conformity score) records with
//! exact k-nearest-neighbour search and an optional inverted-file index.
//!
//! On-disk layout (`UQDS`, little-endian):
//!
//! ```text
//! magic    4 bytes  "UQDS"
//! version  u32      1
//! dim      u32
//! count    u64
//! records  count × (dim × f32 latent, f64 score)
//! ```

use std::cmp::Ordering;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UQDS";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 8;

/// Number of Lloyd iterations used when training the coarse quantizer.
pub const KMEANS_ITERATIONS: usize = 25;

/// Distance or similarity used to rank neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Squared Euclidean distance, smaller is closer.
    L2,
    /// Inner product divided by `sqrt(dim)`, larger is closer.
    #[serde(rename = "ip")]
    InnerProduct,
    /// Cosine similarity, larger is closer.
    #[serde(rename = "cos")]
    Cosine,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::L2, Metric::InnerProduct, Metric::Cosine];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L2 => "l2",
            Metric::InnerProduct => "ip",
            Metric::Cosine => "cos",
        }
    }

    /// True when larger keys mean closer neighbours.
    pub fn is_similarity(self) -> bool {
        !matches!(self, Metric::L2)
    }

    /// Ranking key between two vectors of equal length.
    pub fn key(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::L2 => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum(),
            Metric::InnerProduct => dot(a, b) / (a.len() as f64).sqrt(),
            Metric::Cosine => {
                let denom = (dot(a, a) * dot(b, b)).sqrt();
                if denom > 0.0 {
                    dot(a, b) / denom
                } else {
                    0.0
                }
            }
        }
    }

    /// Best-first comparison of two keys.
    fn compare(self, a: f64, b: f64) -> Ordering {
        if self.is_similarity() {
            b.total_cmp(&a)
        } else {
            a.total_cmp(&b)
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" | "euclidean" => Ok(Metric::L2),
            "ip" | "inner" | "inner-product" => Ok(Metric::InnerProduct),
            "cos" | "cosine" => Ok(Metric::Cosine),
            other => Err(Error::param(
                "metric",
                format!("unknown metric `{other}` (expected l2, ip or cos)"),
            )),
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// A stored latent vector with its non-conformity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub latent: Vec<f32>,
    pub score: f64,
}

impl CalibrationRecord {
    pub fn new(latent: Vec<f32>, score: f64) -> Self {
        CalibrationRecord { latent, score }
    }
}

/// One query result. `key` is a squared distance for [`Metric::L2`] and a
/// similarity otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub index: usize,
    pub key: f64,
    pub score: f64,
}

/// Flat in-memory store; latents are kept contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    latents: Vec<f32>,
    scores: Vec<f64>,
}

impl Datastore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::param(
                "dim",
                format!("{dim} is not a valid latent dimension"),
            ));
        }
        Ok(Datastore {
            dim,
            latents: Vec::new(),
            scores: Vec::new(),
        })
    }

    pub fn with_capacity(dim: usize, capacity: usize) -> Result<Self> {
        let mut store = Datastore::new(dim)?;
        store.latents.reserve(capacity * dim);
        store.scores.reserve(capacity);
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn add(&mut self, record: CalibrationRecord) -> Result<()> {
        self.push(&record.latent, record.score)
    }

    /// Appends a record without taking ownership of the latent.
    pub fn push(&mut self, latent: &[f32], score: f64) -> Result<()> {
        self.check_dim(latent.len())?;
        if !score.is_finite() {
            return Err(Error::NonFinite {
                index: self.len(),
                value: score,
            });
        }
        self.latents.extend_from_slice(latent);
        self.scores.push(score);
        Ok(())
    }

    pub fn latent(&self, index: usize) -> &[f32] {
        &self.latents[index * self.dim..(index + 1) * self.dim]
    }

    pub fn score(&self, index: usize) -> f64 {
        self.scores[index]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn record(&self, index: usize) -> CalibrationRecord {
        CalibrationRecord::new(self.latent(index).to_vec(), self.scores[index])
    }

    pub fn records(&self) -> impl Iterator<Item = CalibrationRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual,
            });
        }
        Ok(())
    }

    /// Exact search: the `min(k, len)` best records, best first. Ties are
    /// broken by insertion order.
    pub fn query(&self, latent: &[f32], k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
        self.check_dim(latent.len())?;
        if self.is_empty() {
            return Err(Error::EmptyStore);
        }
        Ok(self.rank(latent, 0..self.len(), k, metric))
    }

    fn rank(
        &self,
        latent: &[f32],
        candidates: impl Iterator<Item = usize>,
        k: usize,
        metric: Metric,
    ) -> Vec<Neighbor> {
        let mut hits: Vec<Neighbor> = candidates
            .map(|index| Neighbor {
                index,
                key: metric.key(latent, self.latent(index)),
                score: self.scores[index],
            })
            .collect();
        let order =
            |a: &Neighbor, b: &Neighbor| metric.compare(a.key, b.key).then(a.index.cmp(&b.index));
        let k = k.min(hits.len());
        if k == 0 {
            return Vec::new();
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        hits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN as usize + self.len() * (self.dim * 4 + 8));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            for v in self.latent(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&self.scores[i].to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let actual = bytes.len() as u64;
        if actual < HEADER_LEN {
            if actual >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(Error::Truncated {
                expected: HEADER_LEN,
                actual,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let mut store = Datastore::new(dim)?;

        let record_len = dim as u64 * 4 + 8;
        let expected = count
            .checked_mul(record_len)
            .and_then(|body| body.checked_add(HEADER_LEN))
            .ok_or_else(|| {
                Error::param("count", format!("{count} records overflow the file size"))
            })?;
        if actual < expected {
            return Err(Error::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(Error::TrailingBytes(actual - expected));
        }

        let count = count as usize;
        store.latents.reserve(count * dim);
        store.scores.reserve(count);
        for record in bytes[HEADER_LEN as usize..].chunks_exact(record_len as usize) {
            let (latent, score) = record.split_at(dim * 4);
            store.latents.extend(
                latent
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
            );
            store
                .scores
                .push(f64::from_le_bytes(score.try_into().unwrap()));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Datastore::from_bytes(&fs::read(path)?)
    }
}

/// Inverted-file index: records are bucketed by their nearest k-means
/// centroid and a query only scans the buckets of the `nprobe` closest
/// centroids. Bucketing always uses squared Euclidean distance; the final
/// ranking inside the probed buckets uses the requested metric.
#[derive(Debug, Clone)]
pub struct IvfIndex {
    dim: usize,
    centroids: Vec<f64>,
    lists: Vec<Vec<usize>>,
}

impl IvfIndex {
    /// Trains the coarse quantizer with [`KMEANS_ITERATIONS`] Lloyd steps,
    /// initialised from `num_clusters` distinct records. Empty clusters keep
    /// their previous centroid.
    pub fn build<R: Rng + ?Sized>(
        store: &Datastore,
        num_clusters: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if num_clusters == 0 {
            return Err(Error::param("num_clusters", "need at least one cluster"));
        }
        if store.len() < num_clusters {
            return Err(Error::param(
                "num_clusters",
                format!(
                    "{num_clusters} clusters need at least as many records, store has {}",
                    store.len()
                ),
            ));
        }
        let dim = store.dim();
        let mut centroids: Vec<f64> = sample_indices(rng, store.len(), num_clusters)
            .into_iter()
            .flat_map(|i| store.latent(i).iter().map(|&v| v as f64))
            .collect();

        let mut assignment = vec![0usize; store.len()];
        for _ in 0..KMEANS_ITERATIONS {
            for (i, slot) in assignment.iter_mut().enumerate() {
                *slot = nearest_centroid(&centroids, dim, store.latent(i));
            }
            let mut sums = vec![0.0; centroids.len()];
            let mut counts = vec![0usize; num_clusters];
            for (i, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(store.latent(i)) {
                    *s += v as f64;
                }
            }
            for (c, &count) in counts.iter().enumerate().filter(|(_, &n)| n > 0) {
                for j in c * dim..(c + 1) * dim {
                    centroids[j] = sums[j] / count as f64;
                }
            }
        }

        let mut lists = vec![Vec::new(); num_clusters];
        for i in 0..store.len() {
            lists[nearest_centroid(&centroids, dim, store.latent(i))].push(i);
        }
        Ok(IvfIndex {
            dim,
            centroids,
            lists,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(Vec::len).collect()
    }

    /// Approximate search over the `nprobe` closest buckets. With
    /// `nprobe >= num_clusters` the result equals [`Datastore::query`].
    pub fn query(
        &self,
        store: &Datastore,
        latent: &[f32],
        k: usize,
        metric: Metric,
        nprobe: usize,
    ) -> Result<Vec<Neighbor>> {
        store.check_dim(latent.len())?;
        if store.is_empty() {
            return Err(Error::EmptyStore);
        }
        if self.dim != store.dim() {
            return Err(Error::DimensionMismatch {
                expected: store.dim(),
                actual: self.dim,
            });
        }
        let mut order: Vec<(f64, usize)> = (0..self.num_clusters())
            .map(|c| {
                (
                    centroid_distance(&self.centroids[c * self.dim..(c + 1) * self.dim], latent),
                    c,
                )
            })
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut candidates: Vec<usize> = order
            .iter()
            .take(nprobe.max(1))
            .flat_map(|&(_, c)| self.lists[c].iter().copied())
            .collect();
        candidates.sort_unstable();
        Ok(store.rank(latent, candidates.into_iter(), k, metric))
    }
}

fn centroid_distance(centroid: &[f64], latent: &[f32]) -> f64 {
    centroid
        .iter()
        .zip(latent)
        .map(|(&c, &v)| {
            let d = c - v as f64;
            d * d
        })
        .sum()
}

fn nearest_centroid(centroids: &[f64], dim: usize, latent: &[f32]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = centroid_distance(centroid, latent);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}
