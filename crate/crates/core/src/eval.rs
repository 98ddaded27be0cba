//! Exact k-NN oracle, quality metrics and the benchmark runner.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{euclidean, Dataset, PointId};
use crate::error::{Error, Result};
use crate::index::DbLshIndex;
use crate::lsh::{BudgetMode, IndexParams, ParamMode, DEFAULT_FANOUT};
use crate::neighbor::Neighbor;
use crate::query::{Bucketing, QueryOutcome, Termination};

/// Exact `k` nearest neighbors of `q` by full scan, ties by ascending id.
pub fn brute_force_knn(ds: &Dataset, q: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 || k > ds.len() {
        return Err(Error::param(format!(
            "k must be between 1 and n = {}, got {k}",
            ds.len()
        )));
    }
    if q.len() != ds.dim() {
        return Err(Error::DimensionMismatch {
            record: 0,
            expected: ds.dim(),
            found: q.len(),
        });
    }
    let mut all: Vec<Neighbor> = ds
        .points()
        .map(|p| Neighbor::new(p.id, euclidean(q, p.coords)))
        .collect();
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, Neighbor::rank_cmp);
        all.truncate(k);
    }
    all.sort_by(Neighbor::rank_cmp);
    Ok(all)
}

/// Exact neighbors of every query, one row per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub k: usize,
    pub dataset_checksum: u64,
    pub query_checksum: u64,
    pub rows: Vec<Vec<Neighbor>>,
}

impl GroundTruth {
    pub fn compute(ds: &Dataset, queries: &Dataset, k: usize) -> Result<Self> {
        if queries.dim() != ds.dim() {
            return Err(Error::DimensionMismatch {
                record: 0,
                expected: ds.dim(),
                found: queries.dim(),
            });
        }
        let rows = (0..queries.len())
            .into_par_iter()
            .map(|i| brute_force_knn(ds, queries.point(i as PointId), k))
            .collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth {
            k,
            dataset_checksum: ds.checksum(),
            query_checksum: queries.checksum(),
            rows,
        })
    }

    /// Cache file name for this `(dataset, queries, k)` triple.
    pub fn cache_path(dir: &Path, ds: &Dataset, queries: &Dataset, k: usize) -> PathBuf {
        dir.join(format!(
            "truth-{:016x}-{:016x}-k{k}.json",
            ds.checksum(),
            queries.checksum()
        ))
    }

    /// Reads the cached truth if present and consistent, otherwise computes
    /// and writes it.
    pub fn load_or_compute(dir: &Path, ds: &Dataset, queries: &Dataset, k: usize) -> Result<Self> {
        let path = Self::cache_path(dir, ds, queries, k);
        if let Ok(bytes) = std::fs::read(&path) {
            match serde_json::from_slice::<GroundTruth>(&bytes) {
                Ok(gt)
                    if gt.k == k
                        && gt.dataset_checksum == ds.checksum()
                        && gt.query_checksum == queries.checksum()
                        && gt.rows.len() == queries.len() =>
                {
                    return Ok(gt)
                }
                _ => log::warn!("ignoring stale ground-truth cache {}", path.display()),
            }
        }
        let gt = Self::compute(ds, queries, k)?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_vec(&gt).expect("ground truth serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(gt)
    }
}

/// Mean of position-wise distance ratios `result_i / truth_i`.
///
/// A `0 / 0` position counts as 1. A positive distance over a true distance
/// of 0 makes the ratio infinite.
pub fn overall_ratio(result: &[Neighbor], truth: &[Neighbor]) -> Result<f64> {
    if result.len() != truth.len() || truth.is_empty() {
        return Err(Error::param(format!(
            "overall ratio needs equal, non-empty lists (got {} results for {} true neighbors)",
            result.len(),
            truth.len()
        )));
    }
    let mut sum = 0.0;
    for (r, t) in result.iter().zip(truth) {
        sum += if t.distance == 0.0 {
            if r.distance == 0.0 {
                1.0
            } else {
                log::warn!(
                    "true neighbor {} at distance 0, result at {}",
                    t.id,
                    r.distance
                );
                f64::INFINITY
            }
        } else {
            r.distance / t.distance
        };
    }
    Ok(sum / truth.len() as f64)
}

/// `|result ∩ truth| / k` over point ids, `k = truth.len()`.
pub fn recall(result: &[Neighbor], truth: &[Neighbor]) -> Result<f64> {
    if result.len() > truth.len() || truth.is_empty() {
        return Err(Error::param(format!(
            "recall needs at most {} results, got {}",
            truth.len(),
            result.len()
        )));
    }
    let mut want: Vec<PointId> = truth.iter().map(|n| n.id).collect();
    want.sort_unstable();
    let hits = result
        .iter()
        .filter(|n| want.binary_search(&n.id).is_ok())
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "db-lsh")]
    DbLsh,
    #[serde(rename = "fb-lsh")]
    FbLsh,
    /// The brute-force oracle run as if it were an index.
    #[serde(rename = "exact")]
    Exact,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::DbLsh => "db-lsh",
            Algorithm::FbLsh => "fb-lsh",
            Algorithm::Exact => "exact",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "db-lsh" => Ok(Algorithm::DbLsh),
            "fb-lsh" => Ok(Algorithm::FbLsh),
            "exact" => Ok(Algorithm::Exact),
            other => Err(Error::param(format!(
                "unknown algorithm {other:?} (expected db-lsh, fb-lsh or exact)"
            ))),
        }
    }
}

/// Parameter grid; the cells are the cartesian product of every list.
/// In theoretical mode `k_funcs` and `l` are ignored and derived per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub c: Vec<f64>,
    pub w0: Vec<f64>,
    pub t: Vec<usize>,
    pub k_funcs: Vec<usize>,
    pub l: Vec<usize>,
    pub seeds: Vec<u64>,
    pub mode: ParamMode,
    pub fanout: usize,
    pub budget: BudgetMode,
    pub scale: f64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        BenchGrid {
            c: vec![1.5],
            w0: vec![9.0],
            t: vec![50],
            k_funcs: vec![10],
            l: vec![5],
            seeds: vec![1],
            mode: ParamMode::Practical,
            fanout: DEFAULT_FANOUT,
            budget: BudgetMode::Cumulative,
            scale: 1.0,
        }
    }
}

/// One `(c, w0, t, K, L, seed)` combination before `K, L` derivation.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    c: f64,
    w0: f64,
    t: usize,
    k_funcs: usize,
    l: usize,
    seed: u64,
}

impl BenchGrid {
    fn cells(&self) -> Vec<Cell> {
        let (ks, ls) = match self.mode {
            ParamMode::Theoretical => (vec![0], vec![0]),
            ParamMode::Practical => (self.k_funcs.clone(), self.l.clone()),
        };
        let mut cells = Vec::new();
        for &c in &self.c {
            for &w0 in &self.w0 {
                for &t in &self.t {
                    for &k_funcs in &ks {
                        for &l in &ls {
                            for &seed in &self.seeds {
                                cells.push(Cell {
                                    c,
                                    w0,
                                    t,
                                    k_funcs,
                                    l,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        cells
    }

    fn params(&self, cell: Cell, n: usize) -> Result<IndexParams> {
        let p = match self.mode {
            ParamMode::Theoretical => {
                IndexParams::theoretical(n, cell.t, cell.c, cell.w0, cell.seed)?
            }
            ParamMode::Practical => {
                IndexParams::practical(cell.c, cell.w0, cell.t, cell.k_funcs, cell.l, cell.seed)?
            }
        };
        let p = p
            .with_fanout(self.fanout)
            .with_budget(self.budget)
            .with_scale(self.scale);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub algorithms: Vec<Algorithm>,
    pub grid: BenchGrid,
    /// Neighbors per query.
    pub k: usize,
    pub repetitions: usize,
    /// Worker threads for running queries; `None` uses the global pool.
    /// Results do not depend on it.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            algorithms: vec![Algorithm::DbLsh, Algorithm::FbLsh],
            grid: BenchGrid::default(),
            k: 50,
            repetitions: 1,
            threads: None,
        }
    }
}

/// One benchmark cell. Index parameters are empty for the exact oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub c: Option<f64>,
    pub w0: Option<f64>,
    pub t: Option<usize>,
    #[serde(rename = "K")]
    pub k_funcs: Option<usize>,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub seed: Option<u64>,
    pub k: usize,
    pub queries: usize,
    pub repetitions: usize,
    pub mean_query_ms: f64,
    pub overall_ratio: f64,
    pub recall: f64,
    pub mean_candidates: f64,
    pub build_secs: f64,
    pub index_bytes: usize,
    /// Queries that returned fewer than `k` neighbors; excluded from the ratio.
    pub incomplete: usize,
    /// Queries that stopped on budget exhaustion rather than a found answer.
    pub budget_stops: usize,
    /// Whether every repetition returned the same neighbors.
    pub repeatable: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub algorithm: Algorithm,
    pub c: f64,
    pub w0: f64,
    pub t: usize,
    #[serde(rename = "K")]
    pub k_funcs: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub seed: u64,
    pub mean_query_ms: f64,
    pub recall: f64,
    pub overall_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub curve: Vec<CurvePoint>,
}

impl BenchReport {
    pub fn failed_cells(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.failed_cells() == self.rows.len()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.rows)
    }

    pub fn write_curve_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path.as_ref(), &self.curve)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(self).expect("report serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let to_io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_io)?;
    for row in rows {
        w.serialize(row).map_err(to_io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Quality and cost of one pass over the queries.
#[derive(Debug, Clone, PartialEq)]
pub struct PassSummary {
    pub outcomes: Vec<QueryOutcome>,
    pub mean_query_ms: f64,
    pub recall: f64,
    pub overall_ratio: f64,
    pub mean_candidates: f64,
    pub incomplete: usize,
    pub budget_stops: usize,
}

/// Runs every query once against `idx` and scores it against `truth`.
pub fn evaluate_index(
    idx: &DbLshIndex,
    queries: &Dataset,
    truth: &GroundTruth,
    bucketing: Bucketing,
) -> Result<PassSummary> {
    let k = truth.k;
    check_truth(idx.dataset(), queries, truth)?;
    let outcomes = (0..queries.len())
        .into_par_iter()
        .map(|i| idx.search(queries.point(i as PointId), k, bucketing))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<&[Neighbor]> = outcomes.iter().map(|o| o.neighbors.as_slice()).collect();
    let times: Vec<f64> = outcomes.iter().map(|o| o.timings.total_secs).collect();
    let mut summary = summarize(&results, &times, truth)?;
    summary.mean_candidates = mean(outcomes.iter().map(|o| o.candidates_verified as f64));
    summary.budget_stops = outcomes
        .iter()
        .filter(|o| o.termination == Termination::BudgetExhausted)
        .count();
    summary.outcomes = outcomes;
    Ok(summary)
}

fn evaluate_exact(ds: &Dataset, queries: &Dataset, truth: &GroundTruth) -> Result<PassSummary> {
    check_truth(ds, queries, truth)?;
    let timed = (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let start = Instant::now();
            let r = brute_force_knn(ds, queries.point(i as PointId), truth.k)?;
            Ok((r, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<&[Neighbor]> = timed.iter().map(|(r, _)| r.as_slice()).collect();
    let times: Vec<f64> = timed.iter().map(|(_, t)| *t).collect();
    let mut summary = summarize(&results, &times, truth)?;
    summary.mean_candidates = ds.len() as f64;
    Ok(summary)
}

fn summarize(results: &[&[Neighbor]], times: &[f64], truth: &GroundTruth) -> Result<PassSummary> {
    let mut recalls = Vec::with_capacity(results.len());
    let mut ratios = Vec::with_capacity(results.len());
    let mut incomplete = 0;
    for (result, want) in results.iter().zip(&truth.rows) {
        recalls.push(recall(result, want)?);
        if result.len() == want.len() {
            ratios.push(overall_ratio(result, want)?);
        } else {
            incomplete += 1;
        }
    }
    Ok(PassSummary {
        outcomes: Vec::new(),
        mean_query_ms: 1e3 * mean(times.iter().copied()),
        recall: mean(recalls.into_iter()),
        overall_ratio: mean(ratios.into_iter()),
        mean_candidates: 0.0,
        incomplete,
        budget_stops: 0,
    })
}

fn check_truth(ds: &Dataset, queries: &Dataset, truth: &GroundTruth) -> Result<()> {
    if truth.rows.len() != queries.len()
        || truth.dataset_checksum != ds.checksum()
        || truth.query_checksum != queries.checksum()
    {
        return Err(Error::Checksum(
            "ground truth was computed for different data or queries".into(),
        ));
    }
    Ok(())
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Runs every algorithm on every grid cell, `repetitions` times each.
///
/// An index is built once per cell and shared by the LSH algorithms, so
/// dynamic and fixed bucketing see the same tables and the same budget.
/// A cell that fails is recorded with its error and the run continues.
pub fn run_benchmark(
    ds: Arc<Dataset>,
    queries: &Dataset,
    truth: &GroundTruth,
    config: &BenchConfig,
) -> Result<BenchReport> {
    if config.repetitions == 0 {
        return Err(Error::param("repetitions must be at least 1"));
    }
    if config.k != truth.k {
        return Err(Error::param(format!(
            "ground truth has k = {}, benchmark asks for {}",
            truth.k, config.k
        )));
    }
    check_truth(&ds, queries, truth)?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::param(format!("cannot start {n} threads: {e}")))?
            .install(|| benchmark_cells(ds, queries, truth, config)),
        None => benchmark_cells(ds, queries, truth, config),
    }
}

fn benchmark_cells(
    ds: Arc<Dataset>,
    queries: &Dataset,
    truth: &GroundTruth,
    config: &BenchConfig,
) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    let blank = |algorithm| BenchRow {
        algorithm,
        c: None,
        w0: None,
        t: None,
        k_funcs: None,
        l: None,
        seed: None,
        k: config.k,
        queries: queries.len(),
        repetitions: config.repetitions,
        mean_query_ms: f64::NAN,
        overall_ratio: f64::NAN,
        recall: f64::NAN,
        mean_candidates: f64::NAN,
        build_secs: 0.0,
        index_bytes: 0,
        incomplete: 0,
        budget_stops: 0,
        repeatable: true,
        error: None,
    };

    if config.algorithms.contains(&Algorithm::Exact) {
        let mut row = blank(Algorithm::Exact);
        match repeat(config.repetitions, || evaluate_exact(&ds, queries, truth)) {
            Ok((summary, ms, repeatable)) => fill(&mut row, &summary, ms, repeatable),
            Err(e) => row.error = Some(e.to_string()),
        }
        report.rows.push(row);
    }

    let lsh: Vec<Algorithm> = config
        .algorithms
        .iter()
        .copied()
        .filter(|a| *a != Algorithm::Exact)
        .collect();
    if lsh.is_empty() {
        return Ok(report);
    }
    let cells = config.grid.cells();
    let total = cells.len();
    for (i, cell) in cells.into_iter().enumerate() {
        log::info!("cell {}/{total}: {cell:?}", i + 1);
        let built = config
            .grid
            .params(cell, ds.len())
            .and_then(|p| DbLshIndex::build(ds.clone(), p));
        for &alg in &lsh {
            let mut row = blank(alg);
            row.c = Some(cell.c);
            row.w0 = Some(cell.w0);
            row.t = Some(cell.t);
            row.seed = Some(cell.seed);
            let idx = match &built {
                Ok(idx) => idx,
                Err(e) => {
                    log::warn!("cell {cell:?} failed to build: {e}");
                    row.error = Some(e.to_string());
                    report.rows.push(row);
                    continue;
                }
            };
            row.k_funcs = Some(idx.params().k);
            row.l = Some(idx.params().l);
            row.build_secs = idx.build_meta().total_secs;
            row.index_bytes = idx.size_bytes();
            let bucketing = match alg {
                Algorithm::FbLsh => Bucketing::Fixed,
                _ => Bucketing::Dynamic,
            };
            match repeat(config.repetitions, || {
                evaluate_index(idx, queries, truth, bucketing)
            }) {
                Ok((summary, ms, repeatable)) => {
                    fill(&mut row, &summary, ms, repeatable);
                    report.curve.push(CurvePoint {
                        algorithm: alg,
                        c: cell.c,
                        w0: cell.w0,
                        t: cell.t,
                        k_funcs: idx.params().k,
                        l: idx.params().l,
                        seed: cell.seed,
                        mean_query_ms: ms,
                        recall: summary.recall,
                        overall_ratio: summary.overall_ratio,
                    });
                }
                Err(e) => {
                    log::warn!("cell {cell:?} failed for {alg}: {e}");
                    row.error = Some(e.to_string());
                }
            }
            report.rows.push(row);
        }
    }
    Ok(report)
}

/// First pass's quality, mean time over all passes, and whether every pass
/// agreed on recall, ratio and candidates.
fn repeat(
    repetitions: usize,
    mut pass: impl FnMut() -> Result<PassSummary>,
) -> Result<(PassSummary, f64, bool)> {
    let first = pass()?;
    let mut total_ms = first.mean_query_ms;
    let mut repeatable = true;
    for _ in 1..repetitions {
        let again = pass()?;
        total_ms += again.mean_query_ms;
        let same_outcomes = first.outcomes.len() == again.outcomes.len()
            && first
                .outcomes
                .iter()
                .zip(&again.outcomes)
                .all(|(a, b)| a.same_answer(b));
        repeatable &= same_outcomes
            && same_metric(first.recall, again.recall)
            && same_metric(first.overall_ratio, again.overall_ratio);
    }
    Ok((first, total_ms / repetitions as f64, repeatable))
}

fn same_metric(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

fn fill(row: &mut BenchRow, s: &PassSummary, ms: f64, repeatable: bool) {
    row.mean_query_ms = ms;
    row.recall = s.recall;
    row.overall_ratio = s.overall_ratio;
    row.mean_candidates = s.mean_candidates;
    row.incomplete = s.incomplete;
    row.budget_stops = s.budget_stops;
    row.repeatable = repeatable;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, Distribution};
    use proptest::prelude::*;
    use std::collections::BinaryHeap;

    /// Independent oracle: bounded max-heap keyed on (distance bits, id).
    fn heap_knn(ds: &Dataset, q: &[f64], k: usize) -> Vec<Neighbor> {
        let mut heap: BinaryHeap<(u64, PointId)> = BinaryHeap::new();
        for p in ds.points() {
            // non-negative floats order like their bit patterns
            let key = (euclidean(q, p.coords).to_bits(), p.id);
            heap.push(key);
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut out: Vec<Neighbor> = heap
            .into_iter()
            .map(|(bits, id)| Neighbor::new(id, f64::from_bits(bits)))
            .collect();
        out.sort_by(Neighbor::rank_cmp);
        out
    }

    fn n(id: PointId, d: f64) -> Neighbor {
        Neighbor::new(id, d)
    }

    #[test]
    fn query_on_a_point_comes_first() {
        let ds = generate_synthetic(200, 4, Distribution::UniformCube, 1).unwrap();
        let knn = brute_force_knn(&ds, ds.point(33), 3).unwrap();
        assert_eq!(knn[0], n(33, 0.0));
        let all = brute_force_knn(&ds, ds.point(33), 200).unwrap();
        assert_eq!(all.len(), 200);
        assert!(all.windows(2).all(|w| w[0].rank_cmp(&w[1]).is_lt()));
        assert!(brute_force_knn(&ds, ds.point(0), 201).is_err());
        assert!(brute_force_knn(&ds, ds.point(0), 0).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let ds = Dataset::from_rows("ties", &[[1.0], [-1.0], [1.0], [0.5]]).unwrap();
        let knn = brute_force_knn(&ds, &[0.0], 3).unwrap();
        let ids: Vec<PointId> = knn.iter().map(|x| x.id).collect();
        assert_eq!(ids, vec![3, 0, 1]);
    }

    #[test]
    fn hand_metrics() {
        let truth = vec![n(1, 1.0), n(2, 4.0)];
        assert_eq!(overall_ratio(&truth, &truth).unwrap(), 1.0);
        assert_eq!(recall(&truth, &truth).unwrap(), 1.0);
        let result = vec![n(7, 2.0), n(2, 4.0)];
        assert_eq!(overall_ratio(&result, &truth).unwrap(), 1.5);
        assert_eq!(recall(&result, &truth).unwrap(), 0.5);
        assert_eq!(recall(&[n(8, 1.0), n(9, 1.0)], &truth).unwrap(), 0.0);
        assert_eq!(recall(&truth[..1], &truth).unwrap(), 0.5);
    }

    #[test]
    fn zero_true_distance_convention() {
        let truth = vec![n(1, 0.0), n(2, 2.0)];
        assert_eq!(overall_ratio(&[n(1, 0.0), n(2, 2.0)], &truth).unwrap(), 1.0);
        assert_eq!(
            overall_ratio(&[n(5, 0.5), n(2, 2.0)], &truth).unwrap(),
            f64::INFINITY
        );
        assert!(overall_ratio(&truth[..1], &truth).is_err());
        assert!(recall(&[n(1, 0.0), n(2, 2.0), n(3, 3.0)], &truth).is_err());
    }

    #[test]
    fn truth_ignores_storage_order() {
        let ds = generate_synthetic(300, 5, Distribution::UniformCube, 8).unwrap();
        let q = [0.4, 0.5, 0.1, 0.9, 0.3];
        let base = brute_force_knn(&ds, &q, 10).unwrap();
        // reverse the storage order and map ids back
        let rows: Vec<Vec<f64>> = (0..300).rev().map(|i| ds.point(i).to_vec()).collect();
        let rev = Dataset::from_rows("rev", &rows).unwrap();
        let mut mapped: Vec<Neighbor> = brute_force_knn(&rev, &q, 10)
            .unwrap()
            .into_iter()
            .map(|x| n(299 - x.id, x.distance))
            .collect();
        mapped.sort_by(Neighbor::rank_cmp);
        assert_eq!(base, mapped);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_synthetic(100, 3, Distribution::UniformCube, 2).unwrap();
        let qs = generate_synthetic(5, 3, Distribution::UniformCube, 3).unwrap();
        let a = GroundTruth::load_or_compute(dir.path(), &ds, &qs, 4).unwrap();
        assert!(GroundTruth::cache_path(dir.path(), &ds, &qs, 4).exists());
        let b = GroundTruth::load_or_compute(dir.path(), &ds, &qs, 4).unwrap();
        assert_eq!(a, b);
        let other = generate_synthetic(5, 3, Distribution::UniformCube, 4).unwrap();
        let c = GroundTruth::load_or_compute(dir.path(), &ds, &other, 4).unwrap();
        assert_ne!(c.query_checksum, a.query_checksum);
    }

    fn bench_fixture() -> (Arc<Dataset>, Dataset, GroundTruth) {
        let all = generate_synthetic(
            1020,
            8,
            Distribution::GaussianClusters {
                clusters: 5,
                spread: 0.05,
            },
            6,
        )
        .unwrap();
        let (ds, qs) = all.split_tail(20).unwrap();
        let gt = GroundTruth::compute(&ds, &qs, 5).unwrap();
        (Arc::new(ds), qs, gt)
    }

    #[test]
    fn exact_cell_is_perfect() {
        let (ds, qs, gt) = bench_fixture();
        let config = BenchConfig {
            algorithms: vec![Algorithm::Exact],
            k: 5,
            ..BenchConfig::default()
        };
        let report = run_benchmark(ds, &qs, &gt, &config).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].recall, 1.0);
        assert_eq!(report.rows[0].overall_ratio, 1.0);
    }

    #[test]
    fn repetitions_agree_and_failures_are_recorded() {
        let (ds, qs, gt) = bench_fixture();
        let nn = ds.mean_nn_distance(50, 1).unwrap();
        let config = BenchConfig {
            algorithms: vec![Algorithm::DbLsh, Algorithm::FbLsh],
            grid: BenchGrid {
                c: vec![1.5, 0.5],
                w0: vec![4.0],
                t: vec![10],
                k_funcs: vec![4],
                l: vec![3],
                seeds: vec![1, 2],
                scale: 1.0 / nn,
                ..BenchGrid::default()
            },
            k: 5,
            repetitions: 2,
            threads: Some(2),
        };
        let report = run_benchmark(ds, &qs, &gt, &config).unwrap();
        assert_eq!(report.rows.len(), 8);
        assert_eq!(report.failed_cells(), 4);
        assert!(!report.all_failed());
        for row in report.rows.iter().filter(|r| r.error.is_none()) {
            assert!(row.repeatable);
            assert!((0.0..=1.0).contains(&row.recall));
            assert!(row.overall_ratio >= 1.0 - 1e-9);
        }
        assert_eq!(report.curve.len(), 4);

        let dir = tempfile::tempdir().unwrap();
        report.write_csv(dir.path().join("r.csv")).unwrap();
        report.write_curve_csv(dir.path().join("c.csv")).unwrap();
        report.write_json(dir.path().join("r.json")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
        assert!(text.starts_with("algorithm,c,w0,t,K,L,seed"));
        assert!(text.contains("db-lsh") && text.contains("fb-lsh"));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (ds, qs, gt) = bench_fixture();
        let idx = DbLshIndex::build(
            ds,
            IndexParams::practical(1.5, 4.0, 5, 4, 3, 9)
                .unwrap()
                .with_scale(10.0),
        )
        .unwrap();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        let a = one
            .install(|| evaluate_index(&idx, &qs, &gt, Bucketing::Dynamic))
            .unwrap();
        let b = four
            .install(|| evaluate_index(&idx, &qs, &gt, Bucketing::Dynamic))
            .unwrap();
        assert!(a
            .outcomes
            .iter()
            .zip(&b.outcomes)
            .all(|(x, y)| x.same_answer(y)));
        assert_eq!(a.recall, b.recall);
    }

    proptest! {
        #[test]
        fn partial_sort_matches_heap(seed in 0u64..1000, k in 1usize..40) {
            let ds = generate_synthetic(120, 3, Distribution::UniformCube, seed).unwrap();
            // coarse coordinates make distance ties common
            let rounded: Vec<f64> = ds.as_flat().iter().map(|v| (v * 4.0).round()).collect();
            let ds = Dataset::new("grid", 3, rounded).unwrap();
            let q = [2.0, 1.0, 3.0];
            prop_assert_eq!(brute_force_knn(&ds, &q, k).unwrap(), heap_knn(&ds, &q, k));
        }

        #[test]
        fn ratio_at_least_one_and_scale_free(seed in 0u64..500, s in 0.01f64..100.0) {
            let ds = generate_synthetic(80, 4, Distribution::UniformCube, seed).unwrap();
            let q = [0.5, 0.5, 0.5, 0.5];
            let truth = brute_force_knn(&ds, &q, 6).unwrap();
            let picks: Vec<Neighbor> = {
                let mut v: Vec<Neighbor> = (0..6)
                    .map(|i| {
                        let id = ((seed as usize * 7 + i * 13) % 80) as PointId;
                        n(id, euclidean(&q, ds.point(id)))
                    })
                    .collect();
                v.sort_by(Neighbor::rank_cmp);
                v.dedup_by_key(|x| x.id);
                v
            };
            prop_assume!(picks.len() == 6);
            let r = overall_ratio(&picks, &truth).unwrap();
            prop_assert!(r >= 1.0 - 1e-9);

            let scaled = ds.scaled(s).unwrap();
            let sq: Vec<f64> = q.iter().map(|v| v * s).collect();
            let truth_s = brute_force_knn(&scaled, &sq, 6).unwrap();
            prop_assert_eq!(recall(&truth_s, &truth).unwrap(), 1.0);
            let picks_s: Vec<Neighbor> = picks
                .iter()
                .map(|x| n(x.id, euclidean(&sq, scaled.point(x.id))))
                .collect();
            let rs = overall_ratio(&picks_s, &truth_s).unwrap();
            prop_assert!((rs - r).abs() <= 1e-9 * r);
        }
    }
}
