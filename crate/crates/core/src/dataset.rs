//! Point datasets: validation, the `fvecs` file format and synthetic generators.
//!
//! Coordinates are held as `f64` in memory. The on-disk format is the standard
//! SIFT-corpus `fvecs` layout: every record is a little-endian `i32` dimension
//! followed by that many little-endian `f32` values. Point ids are implicit
//! storage indices and are never written to disk.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identifier of a point: its position in storage order.
pub type PointId = u32;

/// A borrowed view of one stored point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<'a> {
    pub id: PointId,
    pub coords: &'a [f64],
}

/// An immutable, row-major collection of `n` points of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    coords: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major coordinates, checking every invariant.
    pub fn new(name: impl Into<String>, dim: usize, coords: Vec<f64>) -> Result<Self> {
        let ds = Dataset {
            name: name.into(),
            dim,
            coords,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn from_rows<R: AsRef<[f64]>>(name: impl Into<String>, rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidDataset("no rows given".into()))?;
        let mut coords = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    record: i,
                    expected: dim,
                    found: row.len(),
                });
            }
            coords.extend_from_slice(row);
        }
        Dataset::new(name, dim, coords)
    }

    /// Checks the point and dataset invariants: positive dimension, whole
    /// rows, finite coordinates.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDataset("dimension must be positive".into()));
        }
        if !self.coords.len().is_multiple_of(self.dim) {
            return Err(Error::InvalidDataset(format!(
                "{} coordinates do not form whole rows of dimension {}",
                self.coords.len(),
                self.dim
            )));
        }
        if self.coords.len() / self.dim > PointId::MAX as usize {
            return Err(Error::InvalidDataset("too many points".into()));
        }
        if let Some(pos) = self.coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "point {} has a non-finite coordinate",
                pos / self.dim
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Row-major coordinate storage.
    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// Coordinates of point `id`. Panics if `id` is out of range.
    pub fn point(&self, id: PointId) -> &[f64] {
        let start = id as usize * self.dim;
        &self.coords[start..start + self.dim]
    }

    pub fn get(&self, id: PointId) -> Option<Point<'_>> {
        ((id as usize) < self.len()).then(|| Point {
            id,
            coords: self.point(id),
        })
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = Point<'_>> + '_ {
        self.coords
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, coords)| Point {
                id: i as PointId,
                coords,
            })
    }

    /// Content hash over dimension and coordinate bits; the name is excluded.
    pub fn checksum(&self) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update((self.dim as u64).to_le_bytes());
        hasher.update((self.len() as u64).to_le_bytes());
        for v in &self.coords {
            hasher.update(v.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    /// Copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Dataset> {
        Dataset::new(
            self.name.clone(),
            self.dim,
            self.coords.iter().map(|v| v * factor).collect(),
        )
    }

    /// Splits off the last `tail` points as a second dataset, e.g. held-out queries.
    pub fn split_tail(mut self, tail: usize) -> Result<(Dataset, Dataset)> {
        if tail == 0 || tail >= self.len() {
            return Err(Error::param(format!(
                "cannot hold out {tail} of {} points",
                self.len()
            )));
        }
        let at = (self.len() - tail) * self.dim;
        let rest = self.coords.split_off(at);
        let queries = Dataset::new(format!("{}-queries", self.name), self.dim, rest)?;
        Ok((self, queries))
    }

    /// Factor that brings the sampled mean nearest-neighbor distance to `target`.
    pub fn nn_scale_factor(&self, target: f64, sample: usize, seed: u64) -> Result<f64> {
        if !(target > 0.0 && target.is_finite()) {
            return Err(Error::param(format!(
                "rescale target must be positive, got {target}"
            )));
        }
        let nn = self.mean_nn_distance(sample, seed)?;
        if nn <= 0.0 {
            return Err(Error::InvalidDataset(
                "sampled points all have exact duplicates; cannot rescale".into(),
            ));
        }
        Ok(target / nn)
    }

    /// Mean distance from a sample of points to their nearest other point.
    ///
    /// Used to rescale data so that the first search radius of 1 is meaningful.
    pub fn mean_nn_distance(&self, sample: usize, seed: u64) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::InvalidDataset(
                "nearest-neighbor scale needs at least two points".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample = sample.clamp(1, self.len());
        let mut total = 0.0;
        for _ in 0..sample {
            let id = rng.random_range(0..self.len()) as PointId;
            let q = self.point(id);
            let nn = self
                .points()
                .filter(|p| p.id != id)
                .map(|p| euclidean(q, p.coords))
                .fold(f64::INFINITY, f64::min);
            total += nn;
        }
        Ok(total / sample as f64)
    }
}

/// Default mean nearest-neighbor distance after rescaling. Above the usual
/// approximation ratios, so the first search radius of 1 sits below the
/// typical nearest-neighbor distance and the radius schedule does the work.
pub const DEFAULT_NN_TARGET: f64 = 4.0;

/// Exact Euclidean distance.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Parses an in-memory `fvecs` image.
pub fn parse_fvecs(bytes: &[u8], name: &str) -> Result<Dataset> {
    if bytes.is_empty() {
        return Err(Error::Format {
            offset: 0,
            message: "file contains no records".into(),
        });
    }
    let mut offset = 0usize;
    let mut dim = 0usize;
    let mut record = 0usize;
    let mut coords = Vec::new();
    while offset < bytes.len() {
        let header = bytes.get(offset..offset + 4).ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!("truncated dimension header of record {record}"),
        })?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(Error::Format {
                offset: offset as u64,
                message: format!("record {record} declares non-positive dimension {d}"),
            });
        }
        let d = d as usize;
        if record == 0 {
            dim = d;
            coords.reserve(bytes.len() / (4 + 4 * d) * d);
        } else if d != dim {
            return Err(Error::DimensionMismatch {
                record,
                expected: dim,
                found: d,
            });
        }
        let body_start = offset + 4;
        let body = bytes
            .get(body_start..body_start + 4 * d)
            .ok_or_else(|| Error::Format {
                offset: body_start as u64,
                message: format!(
                    "record {record} truncated: {} of {} payload bytes present",
                    bytes.len() - body_start,
                    4 * d
                ),
            })?;
        for (j, chunk) in body.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::Format {
                    offset: (body_start + 4 * j) as u64,
                    message: format!("record {record} has a non-finite coordinate"),
                });
            }
            coords.push(f64::from(v));
        }
        offset = body_start + 4 * d;
        record += 1;
    }
    Dataset::new(name, dim, coords)
}

/// Serializes a dataset to the `fvecs` layout, narrowing to `f32`.
pub fn encode_fvecs(ds: &Dataset) -> Vec<u8> {
    let d = ds.dim();
    let mut out = Vec::with_capacity(ds.len() * (4 + 4 * d));
    for p in ds.points() {
        out.extend_from_slice(&(d as i32).to_le_bytes());
        for &v in p.coords {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_fvecs(&bytes, &name)
}

pub fn write_fvecs(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fvecs(ds)).map_err(|e| Error::io(path, e))
}

/// Point distributions for [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Independent uniform coordinates in `[0, 1)`.
    UniformCube,
    /// `clusters` centers drawn uniformly in the unit cube; each point picks a
    /// center uniformly and adds isotropic Gaussian noise with std-dev `spread`.
    GaussianClusters { clusters: usize, spread: f64 },
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::UniformCube => f.write_str("uniform"),
            Distribution::GaussianClusters { clusters, spread } => {
                write!(f, "clusters:{clusters},{spread}")
            }
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// Accepts `uniform` or `clusters:<k>,<spread>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(Distribution::UniformCube);
        }
        let args = s.strip_prefix("clusters:").ok_or_else(|| {
            Error::param(format!(
                "unknown distribution {s:?} (expected `uniform` or `clusters:<k>,<spread>`)"
            ))
        })?;
        let (k, spread) = args
            .split_once(',')
            .ok_or_else(|| Error::param(format!("expected `clusters:<k>,<spread>`, got {s:?}")))?;
        let clusters: usize = k
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("bad cluster count {k:?}")))?;
        let spread: f64 = spread
            .trim()
            .parse()
            .map_err(|_| Error::param(format!("bad cluster spread {spread:?}")))?;
        if clusters == 0 || !(spread.is_finite() && spread >= 0.0) {
            return Err(Error::param(
                "cluster count must be positive and spread non-negative",
            ));
        }
        Ok(Distribution::GaussianClusters { clusters, spread })
    }
}

/// Deterministic synthetic dataset. The same `(n, d, distribution, seed)`
/// always yields the same coordinates.
pub fn generate_synthetic(
    n: usize,
    d: usize,
    distribution: Distribution,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    if d == 0 {
        return Err(Error::param("d must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * d);
    match distribution {
        Distribution::UniformCube => {
            coords.extend((0..n * d).map(|_| rng.random::<f64>()));
        }
        Distribution::GaussianClusters { clusters, spread } => {
            if clusters == 0 {
                return Err(Error::param("cluster count must be positive"));
            }
            let centers: Vec<f64> = (0..clusters * d).map(|_| rng.random::<f64>()).collect();
            for _ in 0..n {
                let c = rng.random_range(0..clusters);
                let center = &centers[c * d..(c + 1) * d];
                for &m in center {
                    let z: f64 = rng.sample(StandardNormal);
                    coords.push(m + spread * z);
                }
            }
        }
    }
    Dataset::new(
        format!("synthetic-{distribution}-n{n}-d{d}-s{seed}"),
        d,
        coords,
    )
}
