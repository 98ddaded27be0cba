//! The `(K, L)` index: `L` projected copies of the dataset, each in its own
//! packed R-tree, plus a versioned binary file format.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{ByteReader, ByteWriter};
use crate::dataset::{Dataset, PointId};
use crate::error::{Error, Result};
use crate::lsh::{BudgetMode, HashFamily, IndexParams, ParamMode};
use crate::spatial::ProjectedTable;

const MAGIC: &[u8; 8] = b"DBLSHIDX";
pub const FORMAT_VERSION: u32 = 1;

/// Timings and provenance of a build. Not persisted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub seed: u64,
    pub family_secs: f64,
    pub tables_secs: f64,
    pub total_secs: f64,
    /// True when the index came from a file rather than a build.
    pub loaded: bool,
}

#[derive(Debug, Clone)]
pub struct DbLshIndex {
    params: IndexParams,
    family: HashFamily,
    tables: Vec<ProjectedTable>,
    dataset: Arc<Dataset>,
    data_lo: Vec<f64>,
    data_hi: Vec<f64>,
    build_meta: BuildMeta,
}

impl DbLshIndex {
    /// Draws the hash family from `params.seed` and indexes every point.
    pub fn build(dataset: Arc<Dataset>, params: IndexParams) -> Result<Self> {
        let start = Instant::now();
        params.validate_for(dataset.len())?;
        if dataset.is_empty() {
            return Err(Error::InvalidDataset(
                "cannot index an empty dataset".into(),
            ));
        }
        let family = HashFamily::generate(params.seed, params.l, params.k, dataset.dim())?;
        let family_secs = start.elapsed().as_secs_f64();
        let mut idx = Self::build_with_family(dataset, params, family)?;
        idx.build_meta.family_secs = family_secs;
        idx.build_meta.total_secs = start.elapsed().as_secs_f64();
        Ok(idx)
    }

    /// Indexes the dataset under an explicit hash family, e.g. a hand-built
    /// one. `params.k`, `params.l` must match the family's shape.
    pub fn build_with_family(
        dataset: Arc<Dataset>,
        params: IndexParams,
        family: HashFamily,
    ) -> Result<Self> {
        let start = Instant::now();
        params.validate()?;
        dataset.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidDataset(
                "cannot index an empty dataset".into(),
            ));
        }
        check_family(&params, &family, dataset.dim())?;
        let tables = (0..params.l)
            .into_par_iter()
            .map(|table| build_table(&dataset, &family, table, params.scale, params.fanout))
            .collect::<Result<Vec<_>>>()?;
        let (data_lo, data_hi) = bounding_box(&dataset);
        let tables_secs = start.elapsed().as_secs_f64();
        log::info!(
            "indexed {} points into {} tables of {} functions in {tables_secs:.3}s",
            dataset.len(),
            params.l,
            params.k
        );
        Ok(DbLshIndex {
            params,
            family,
            tables,
            dataset,
            data_lo,
            data_hi,
            build_meta: BuildMeta {
                seed: params.seed,
                family_secs: 0.0,
                tables_secs,
                total_secs: tables_secs,
                loaded: false,
            },
        })
    }

    /// Same tables with a different candidate multiplier `t`. Practical mode
    /// only, since theoretical `K` and `L` depend on `t`.
    pub fn with_candidate_multiplier(mut self, t: usize) -> Result<Self> {
        if self.params.mode == ParamMode::Theoretical {
            return Err(Error::param(
                "t is fixed by the derivation in theoretical mode",
            ));
        }
        self.params.t = t;
        self.params.validate()?;
        Ok(self)
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn tables(&self) -> &[ProjectedTable] {
        &self.tables
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn build_meta(&self) -> &BuildMeta {
        &self.build_meta
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    /// Per-coordinate bounding box of the original data.
    pub fn data_bounds(&self) -> (&[f64], &[f64]) {
        (&self.data_lo, &self.data_hi)
    }

    /// `scale * G_table(o)` as used for indexing.
    pub fn project_scaled(&self, table: usize, o: &[f64], out: &mut [f64]) {
        self.family.project_table_into(table, o, out);
        if self.params.scale != 1.0 {
            for v in out.iter_mut() {
                *v *= self.params.scale;
            }
        }
    }

    /// The projection of `id` as stored in `table`.
    pub fn stored_projection(&self, table: usize, id: PointId) -> Option<&[f64]> {
        self.tables.get(table)?.find(id)
    }

    /// Recomputes the stored projections of about `sample` evenly spaced
    /// points in every table and checks they match bit for bit.
    pub fn audit_projections(&self, sample: usize) -> Result<()> {
        let step = (self.len() / sample.max(1)).max(1);
        let mut expect = vec![0.0; self.params.k];
        for (t, table) in self.tables.iter().enumerate() {
            for (id, stored) in table
                .entries()
                .filter(|(id, _)| (*id as usize).is_multiple_of(step))
            {
                self.project_scaled(t, self.dataset.point(id), &mut expect);
                if stored != expect.as_slice() {
                    return Err(Error::Build(format!(
                        "stored projection of point {id} in table {t} does not match"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Approximate in-memory footprint of the tables and hash family.
    pub fn size_bytes(&self) -> usize {
        let k = self.params.k;
        let tables: usize = self
            .tables
            .iter()
            .map(|t| t.len() * (4 + 8 * k) + t.node_count() * (13 + 16 * k))
            .sum();
        tables + 8 * (self.family.directions().len() + self.family.offset_fractions().len())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        encode_params(&mut w, &self.params);
        match self.family.seed() {
            Some(seed) => {
                w.u8(1);
                w.u64(seed);
            }
            None => {
                w.u8(0);
                w.u64(0);
            }
        }
        w.u64(self.family.dim() as u64);
        w.u64(self.family.directions().len() as u64);
        w.f64s(self.family.directions());
        w.u64(self.family.offset_fractions().len() as u64);
        w.f64s(self.family.offset_fractions());
        w.u64(self.dataset.len() as u64);
        w.u64(self.dataset.dim() as u64);
        w.u64(self.dataset.checksum());
        w.u64(self.tables.len() as u64);
        for t in &self.tables {
            t.encode(&mut w);
        }
        w.into_inner()
    }

    /// Reads an index written by [`DbLshIndex::to_bytes`] and binds it to
    /// `dataset`, which must be the one it was built from.
    pub fn from_bytes(bytes: &[u8], dataset: Arc<Dataset>) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::Version("not an index file (bad magic)".into()));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let params = decode_params(&mut r)?;
        params
            .validate()
            .map_err(|e| r.format_error(e.to_string()))?;
        let has_seed = r.u8("family seed flag")? == 1;
        let seed = r.u64("family seed")?;
        let fam_dim = r.u64("family dimension")? as usize;
        let dir_len = r.len_prefix(8, "direction count")?;
        let directions = r.f64s(dir_len, "directions")?;
        let frac_len = r.len_prefix(8, "offset count")?;
        let fractions = r.f64s(frac_len, "offsets")?;
        let family = HashFamily::from_parts(params.l, params.k, fam_dim, directions, fractions)
            .map_err(|e| r.format_error(format!("bad hash family: {e}")))?;
        let family = if has_seed {
            family.with_seed(seed)
        } else {
            family
        };

        let n = r.u64("dataset size")? as usize;
        let dim = r.u64("dataset dimension")? as usize;
        let checksum = r.u64("dataset checksum")?;
        if n != dataset.len() || dim != dataset.dim() {
            return Err(Error::Checksum(format!(
                "index was built over {n} points of dimension {dim}, dataset has {} of dimension {}",
                dataset.len(),
                dataset.dim()
            )));
        }
        if checksum != dataset.checksum() {
            return Err(Error::Checksum(format!(
                "dataset checksum {:016x} differs from recorded {checksum:016x}",
                dataset.checksum()
            )));
        }
        let table_count = r.u64("table count")? as usize;
        if table_count != params.l {
            return Err(r.format_error(format!(
                "{table_count} tables recorded for L = {}",
                params.l
            )));
        }
        let mut tables = Vec::with_capacity(table_count);
        for i in 0..table_count {
            let t = ProjectedTable::decode(&mut r)?;
            if t.table_id() != i || t.dim() != params.k || t.len() != n {
                return Err(r.format_error(format!("table {i} has the wrong shape")));
            }
            tables.push(t);
        }
        if !r.is_empty() {
            return Err(r.format_error("trailing bytes after the last table"));
        }
        let (data_lo, data_hi) = bounding_box(&dataset);
        let idx = DbLshIndex {
            params,
            family,
            tables,
            dataset,
            data_lo,
            data_hi,
            build_meta: BuildMeta {
                seed: params.seed,
                loaded: true,
                ..BuildMeta::default()
            },
        };
        idx.audit_projections(16)?;
        Ok(idx)
    }
}

pub fn save_index(idx: &DbLshIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, idx.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>, dataset: Arc<Dataset>) -> Result<DbLshIndex> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    DbLshIndex::from_bytes(&bytes, dataset)
}

fn check_family(params: &IndexParams, family: &HashFamily, dim: usize) -> Result<()> {
    if family.l() != params.l || family.k() != params.k || family.dim() != dim {
        return Err(Error::param(format!(
            "hash family is {}x{} over dimension {}, expected {}x{} over {dim}",
            family.l(),
            family.k(),
            family.dim(),
            params.l,
            params.k
        )));
    }
    Ok(())
}

fn build_table(
    ds: &Dataset,
    family: &HashFamily,
    table: usize,
    scale: f64,
    fanout: usize,
) -> Result<ProjectedTable> {
    let k = family.k();
    let mut coords = vec![0.0; ds.len() * k];
    for (p, out) in ds.points().zip(coords.chunks_exact_mut(k)) {
        family.project_table_into(table, p.coords, out);
        if scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= scale);
        }
    }
    let ids = (0..ds.len() as PointId).collect();
    ProjectedTable::bulk_build(table, k, ids, coords, fanout)
}

fn bounding_box(ds: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; ds.dim()];
    let mut hi = vec![f64::NEG_INFINITY; ds.dim()];
    for p in ds.points() {
        for (j, &v) in p.coords.iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

fn encode_params(w: &mut ByteWriter, p: &IndexParams) {
    w.f64(p.c);
    w.f64(p.w0);
    w.u64(p.t as u64);
    w.u64(p.k as u64);
    w.u64(p.l as u64);
    w.u8(match p.mode {
        ParamMode::Theoretical => 0,
        ParamMode::Practical => 1,
    });
    w.u64(p.seed);
    w.u64(p.fanout as u64);
    w.u8(match p.budget {
        BudgetMode::Cumulative => 0,
        BudgetMode::PerRound => 1,
    });
    w.f64(p.scale);
}

fn decode_params(r: &mut ByteReader<'_>) -> Result<IndexParams> {
    let c = r.f64("c")?;
    let w0 = r.f64("w0")?;
    let t = r.u64("t")? as usize;
    let k = r.u64("K")? as usize;
    let l = r.u64("L")? as usize;
    let mode = match r.u8("parameter mode")? {
        0 => ParamMode::Theoretical,
        1 => ParamMode::Practical,
        other => return Err(r.format_error(format!("unknown parameter mode {other}"))),
    };
    let seed = r.u64("seed")?;
    let fanout = r.u64("fanout")? as usize;
    let budget = match r.u8("budget mode")? {
        0 => BudgetMode::Cumulative,
        1 => BudgetMode::PerRound,
        other => return Err(r.format_error(format!("unknown budget mode {other}"))),
    };
    let scale = r.f64("scale")?;
    Ok(IndexParams {
        c,
        w0,
        t,
        k,
        l,
        mode,
        seed,
        fanout,
        budget,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Distribution};

    fn small() -> (Arc<Dataset>, IndexParams) {
        let ds = generate_synthetic(500, 8, Distribution::UniformCube, 4).unwrap();
        let params = IndexParams::practical(1.5, 4.0, 2, 3, 4, 21)
            .unwrap()
            .with_fanout(8);
        (Arc::new(ds), params)
    }

    #[test]
    fn stored_projection_matches_recomputation() {
        let (ds, params) = small();
        let idx = DbLshIndex::build(ds.clone(), params).unwrap();
        assert_eq!(idx.tables().len(), 4);
        assert!(idx.tables().iter().all(|t| t.dim() == 3));
        let g = idx.family().project(ds.point(0)).unwrap();
        assert_eq!(idx.stored_projection(0, 0).unwrap(), g[0].as_slice());
        idx.audit_projections(50).unwrap();
    }

    #[test]
    fn scale_multiplies_projections() {
        let (ds, params) = small();
        let idx = DbLshIndex::build(ds.clone(), params.with_scale(2.5)).unwrap();
        let g = idx.family().project(ds.point(3)).unwrap();
        let stored = idx.stored_projection(1, 3).unwrap();
        for (s, v) in stored.iter().zip(&g[1]) {
            assert_eq!(*s, v * 2.5);
        }
    }

    #[test]
    fn rebuild_gives_identical_bytes() {
        let (ds, params) = small();
        let a = DbLshIndex::build(ds.clone(), params).unwrap().to_bytes();
        let b = DbLshIndex::build(ds.clone(), params).unwrap().to_bytes();
        assert_eq!(a, b);
        let c = DbLshIndex::build(ds, params.with_seed(22))
            .unwrap()
            .to_bytes();
        assert_ne!(a, c);
    }

    #[test]
    fn bytes_round_trip() {
        let (ds, params) = small();
        let idx = DbLshIndex::build(ds.clone(), params).unwrap();
        let bytes = idx.to_bytes();
        let back = DbLshIndex::from_bytes(&bytes, ds).unwrap();
        assert_eq!(back.params(), idx.params());
        assert_eq!(back.family(), idx.family());
        assert_eq!(back.tables(), idx.tables());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn load_rejects_other_dataset() {
        let (ds, params) = small();
        let bytes = DbLshIndex::build(ds, params).unwrap().to_bytes();
        let other = Arc::new(generate_synthetic(500, 8, Distribution::UniformCube, 5).unwrap());
        assert!(matches!(
            DbLshIndex::from_bytes(&bytes, other),
            Err(Error::Checksum(_))
        ));
        let shorter = Arc::new(generate_synthetic(499, 8, Distribution::UniformCube, 4).unwrap());
        assert!(matches!(
            DbLshIndex::from_bytes(&bytes, shorter),
            Err(Error::Checksum(_))
        ));
    }

    #[test]
    fn load_rejects_bad_header_and_truncation() {
        let (ds, params) = small();
        let mut bytes = DbLshIndex::build(ds.clone(), params).unwrap().to_bytes();
        let cut = bytes.len() - 100;
        match DbLshIndex::from_bytes(&bytes[..cut], ds.clone()) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0 && offset <= cut as u64),
            other => panic!("expected format error, got {other:?}"),
        }
        bytes[8] = 9;
        assert!(matches!(
            DbLshIndex::from_bytes(&bytes, ds.clone()),
            Err(Error::Version(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            DbLshIndex::from_bytes(&bytes, ds),
            Err(Error::Version(_))
        ));
    }

    #[test]
    fn retuning_t_keeps_tables() {
        let (ds, params) = small();
        let idx = DbLshIndex::build(ds.clone(), params).unwrap();
        let tables = idx.tables().to_vec();
        let idx = idx.with_candidate_multiplier(40).unwrap();
        assert_eq!(idx.params().t, 40);
        assert_eq!(idx.tables(), tables.as_slice());
        assert!(idx.with_candidate_multiplier(0).is_err());
        let theory = IndexParams::theoretical(500, 10, 2.0, 1.0, 1).unwrap();
        let idx = DbLshIndex::build(ds, theory).unwrap();
        assert!(idx.with_candidate_multiplier(20).is_err());
    }

    #[test]
    fn family_shape_must_match_params() {
        let (ds, params) = small();
        let fam = HashFamily::generate(1, 2, 3, 8).unwrap();
        assert!(DbLshIndex::build_with_family(ds, params, fam).is_err());
    }
}
