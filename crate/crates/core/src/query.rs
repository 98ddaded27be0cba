//! Query answering: `(r, c)`-NN rounds over growing radii, for dynamic window
//! buckets and for the fixed-bucket baseline over the same tables.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{euclidean, PointId};
use crate::error::{Error, Result};
use crate::index::DbLshIndex;
use crate::lsh::{radius_schedule, static_bucket, BudgetMode};
use crate::neighbor::{Neighbor, TopK};
use crate::spatial::{Region, WindowRegion};

/// How a table turns the query's projection into a bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bucketing {
    /// A window of width `w0 * r` centered on the projected query.
    #[default]
    Dynamic,
    /// The query's static cell `floor((a · q + b) / (w0 * r))` on every axis.
    Fixed,
}

impl fmt::Display for Bucketing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucketing::Dynamic => "dynamic",
            Bucketing::Fixed => "fixed",
        })
    }
}

impl FromStr for Bucketing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dynamic" => Ok(Bucketing::Dynamic),
            "fixed" => Ok(Bucketing::Fixed),
            other => Err(Error::param(format!("unknown bucketing {other:?}"))),
        }
    }
}

/// Answer of a single `(r, c)`-NN round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RcNnResult {
    /// The `k`-th best verified point lies within `c * r`.
    Found(Neighbor),
    /// The candidate budget ran out; carries the best point verified so far.
    BudgetExhausted(Neighbor),
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Found,
    BudgetExhausted,
    /// Every radius up to the cap was tried. Only reachable when no table can
    /// cover the data with a single bucket.
    ScheduleExhausted,
}

/// Query-local mutable state carried across rounds.
#[derive(Debug, Clone)]
pub struct SearchState {
    visited: HashSet<PointId>,
    top: TopK,
    budget: usize,
    mode: BudgetMode,
    round_accesses: usize,
}

impl SearchState {
    pub fn new(k: usize, budget: usize, mode: BudgetMode) -> Self {
        SearchState {
            visited: HashSet::with_capacity(budget.min(1 << 16)),
            top: TopK::new(k.max(1)),
            budget,
            mode,
            round_accesses: 0,
        }
    }

    /// State for a `k`-NN query under the index's own budget rule.
    pub fn for_index(idx: &DbLshIndex, k: usize) -> Self {
        let p = idx.params();
        Self::new(k, p.candidate_budget(k), p.budget)
    }

    /// Distinct points whose exact distance has been computed.
    pub fn verified(&self) -> usize {
        self.visited.len()
    }

    pub fn has_verified(&self, id: PointId) -> bool {
        self.visited.contains(&id)
    }

    pub fn top(&self) -> &TopK {
        &self.top
    }

    fn exhausted(&self) -> bool {
        match self.mode {
            BudgetMode::Cumulative => self.visited.len() >= self.budget,
            BudgetMode::PerRound => self.round_accesses >= self.budget,
        }
    }
}

/// What one round did, for `--explain` style output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub radius: f64,
    pub window_width: f64,
    /// Points each visited table yielded this round, in table order. Tables
    /// after the one where the round stopped are absent.
    pub per_table: Vec<usize>,
    pub newly_verified: usize,
    pub nodes_visited: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryTimings {
    pub hash_secs: f64,
    pub search_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    /// Ascending by distance, ties by id.
    pub neighbors: Vec<Neighbor>,
    pub terminating_radius: f64,
    pub termination: Termination,
    pub candidates_verified: usize,
    pub rounds: usize,
    pub trace: Vec<RoundTrace>,
    pub timings: QueryTimings,
}

impl QueryOutcome {
    /// Equality on everything except timings.
    pub fn same_answer(&self, other: &QueryOutcome) -> bool {
        self.neighbors == other.neighbors
            && self.terminating_radius == other.terminating_radius
            && self.termination == other.termination
            && self.candidates_verified == other.candidates_verified
            && self.rounds == other.rounds
            && self.trace == other.trace
    }
}

/// The static cell of a projected query: entries whose bucket index matches
/// on every axis. Bucket indices are monotone in the coordinate, so a box can
/// hold a match only if its corners' buckets bracket the query's.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRegion {
    cells: Vec<i64>,
    offsets: Vec<f64>,
    width: f64,
}

impl CellRegion {
    pub fn new(projection: &[f64], offsets: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::param(format!(
                "cell width must be positive, got {width}"
            )));
        }
        if projection.len() != offsets.len() || projection.is_empty() {
            return Err(Error::param("cell needs one offset per projected axis"));
        }
        let cells = projection
            .iter()
            .zip(&offsets)
            .map(|(&g, &b)| static_bucket(g, b, width))
            .collect();
        Ok(CellRegion {
            cells,
            offsets,
            width,
        })
    }

    pub fn cells(&self) -> &[i64] {
        &self.cells
    }
}

impl Region for CellRegion {
    fn dim(&self) -> usize {
        self.cells.len()
    }

    fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.offsets.iter().zip(&self.cells))
            .all(|(&x, (&b, &h))| static_bucket(x, b, self.width) == h)
    }

    fn intersects(&self, lo: &[f64], hi: &[f64]) -> bool {
        (0..self.cells.len()).all(|j| {
            let (b, h) = (self.offsets[j], self.cells[j]);
            static_bucket(lo[j], b, self.width) <= h && h <= static_bucket(hi[j], b, self.width)
        })
    }

    fn contains_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        (0..self.cells.len()).all(|j| {
            let (b, h) = (self.offsets[j], self.cells[j]);
            static_bucket(lo[j], b, self.width) == h && static_bucket(hi[j], b, self.width) == h
        })
    }
}

/// A query point with its projections into every table.
struct Prepared<'q> {
    point: &'q [f64],
    /// `L * K`, table-major, already multiplied by the index scale.
    projections: Vec<f64>,
}

impl DbLshIndex {
    fn prepare<'q>(&self, q: &'q [f64]) -> Result<Prepared<'q>> {
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                record: 0,
                expected: self.dim(),
                found: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("query coordinates must be finite"));
        }
        let k = self.params().k;
        let mut projections = vec![0.0; self.params().l * k];
        for (table, out) in projections.chunks_exact_mut(k).enumerate() {
            self.project_scaled(table, q, out);
        }
        Ok(Prepared {
            point: q,
            projections,
        })
    }

    /// One `(r, c)`-NN round with dynamic windows. `state` carries the
    /// visited set and budget across calls.
    pub fn rc_nn(&self, q: &[f64], r: f64, state: &mut SearchState) -> Result<RcNnResult> {
        let prepared = self.prepare(q)?;
        check_radius(r)?;
        Ok(self.round(&prepared, r, Bucketing::Dynamic, state).0)
    }

    /// [`DbLshIndex::rc_nn`] with static cells instead of windows.
    pub fn fb_rc_nn(&self, q: &[f64], r: f64, state: &mut SearchState) -> Result<RcNnResult> {
        let prepared = self.prepare(q)?;
        check_radius(r)?;
        Ok(self.round(&prepared, r, Bucketing::Fixed, state).0)
    }

    pub fn c_ann(&self, q: &[f64]) -> Result<QueryOutcome> {
        self.search(q, 1, Bucketing::Dynamic)
    }

    pub fn ck_ann(&self, q: &[f64], k: usize) -> Result<QueryOutcome> {
        self.search(q, k, Bucketing::Dynamic)
    }

    pub fn fb_c_ann(&self, q: &[f64]) -> Result<QueryOutcome> {
        self.search(q, 1, Bucketing::Fixed)
    }

    pub fn fb_ck_ann(&self, q: &[f64], k: usize) -> Result<QueryOutcome> {
        self.search(q, k, Bucketing::Fixed)
    }

    /// Runs rounds at radii `1, c, c^2, ...` until one terminates.
    pub fn search(&self, q: &[f64], k: usize, bucketing: Bucketing) -> Result<QueryOutcome> {
        let start = Instant::now();
        if k == 0 || k > self.len() {
            return Err(Error::param(format!(
                "k must be between 1 and n = {}, got {k}",
                self.len()
            )));
        }
        let prepared = self.prepare(q)?;
        let hash_secs = start.elapsed().as_secs_f64();

        let r_max = self.radius_cap(&prepared, bucketing);
        let schedule = radius_schedule(self.params().c, r_max)?;
        let mut state = SearchState::for_index(self, k);
        let mut trace = Vec::new();
        let mut termination = Termination::ScheduleExhausted;
        let mut terminating_radius = *schedule.last().expect("schedule is never empty");
        for &r in &schedule {
            let (result, round) = self.round(&prepared, r, bucketing, &mut state);
            trace.push(round);
            match result {
                RcNnResult::NotFound => continue,
                RcNnResult::Found(_) => termination = Termination::Found,
                RcNnResult::BudgetExhausted(_) => termination = Termination::BudgetExhausted,
            }
            terminating_radius = r;
            break;
        }
        if termination == Termination::ScheduleExhausted {
            log::debug!("radius schedule exhausted at r = {terminating_radius}");
        }
        let total_secs = start.elapsed().as_secs_f64();
        Ok(QueryOutcome {
            neighbors: state.top.to_sorted_vec(),
            terminating_radius,
            termination,
            candidates_verified: state.verified(),
            rounds: trace.len(),
            trace,
            timings: QueryTimings {
                hash_secs,
                search_secs: total_secs - hash_secs,
                total_secs,
            },
        })
    }

    fn round(
        &self,
        q: &Prepared<'_>,
        r: f64,
        bucketing: Bucketing,
        state: &mut SearchState,
    ) -> (RcNnResult, RoundTrace) {
        let params = self.params();
        let (k, scale) = (params.k, params.scale);
        let width = params.w0 * r;
        let cr = params.c * r;
        let mut trace = RoundTrace {
            radius: r,
            window_width: width,
            per_table: Vec::with_capacity(params.l),
            newly_verified: 0,
            nodes_visited: 0,
        };
        state.round_accesses = 0;
        let within = |n: Neighbor| n.distance * scale <= cr;
        if let Some(kth) = state.top.kth().filter(|&n| within(n)) {
            return (RcNnResult::Found(kth), trace);
        }

        for (t, table) in self.tables().iter().enumerate() {
            let g = &q.projections[t * k..(t + 1) * k];
            let mut yielded = 0;
            let mut visit = |id: PointId, state: &mut SearchState| -> Option<RcNnResult> {
                yielded += 1;
                state.round_accesses += 1;
                if state.visited.insert(id) {
                    trace.newly_verified += 1;
                    let d = euclidean(q.point, self.dataset().point(id));
                    state.top.push(Neighbor::new(id, d));
                    if let Some(kth) = state.top.kth().filter(|&n| within(n)) {
                        return Some(RcNnResult::Found(kth));
                    }
                }
                if state.exhausted() {
                    let best = state
                        .top
                        .best()
                        .expect("budget is spent on verified points");
                    return Some(RcNnResult::BudgetExhausted(best));
                }
                None
            };
            // The region constructors cannot fail here: widths and centers
            // are finite and positive by construction.
            let (stop, nodes) = match bucketing {
                Bucketing::Dynamic => {
                    let window = WindowRegion::new(g.to_vec(), width).expect("valid window");
                    drain(
                        table.query(window).expect("region matches table"),
                        state,
                        &mut visit,
                    )
                }
                Bucketing::Fixed => {
                    let offsets = (0..k).map(|j| self.family().offset(t, j, width)).collect();
                    let cell = CellRegion::new(g, offsets, width).expect("valid cell");
                    drain(
                        table.query(cell).expect("region matches table"),
                        state,
                        &mut visit,
                    )
                }
            };
            trace.per_table.push(yielded);
            trace.nodes_visited += nodes;
            if let Some(result) = stop {
                return (result, trace);
            }
        }
        (RcNnResult::NotFound, trace)
    }

    /// A radius at which the search is sure to stop: every point lies within
    /// `c * r` of the query, and at least one table returns all points in a
    /// single bucket. Scaled by a hair to absorb rounding.
    fn radius_cap(&self, q: &Prepared<'_>, bucketing: Bucketing) -> f64 {
        let (lo, hi) = self.data_bounds();
        let farthest = q
            .point
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&x, (&l, &h))| {
                let e = (x - l).abs().max((h - x).abs());
                e * e
            })
            .sum::<f64>()
            .sqrt();
        let params = self.params();
        let k = params.k;
        let by_distance = farthest * params.scale / params.c;

        let window_cover = {
            let (tlo, thi) = self.tables()[0].bounds();
            let ext = q.projections[..k]
                .iter()
                .zip(tlo.iter().zip(thi))
                .map(|(&g, (&l, &h))| (g - l).abs().max((h - g).abs()))
                .fold(0.0, f64::max);
            2.0 * ext / params.w0
        };
        let cover = match bucketing {
            Bucketing::Dynamic => window_cover,
            Bucketing::Fixed => (0..params.l)
                .filter_map(|t| {
                    let (tlo, thi) = self.tables()[t].bounds();
                    let g = &q.projections[t * k..(t + 1) * k];
                    let fracs = &self.family().offset_fractions()[t * k..(t + 1) * k];
                    cell_cover_width(g, tlo, thi, fracs)
                })
                .fold(None, |acc: Option<f64>, w| {
                    Some(acc.map_or(w, |a| a.min(w)))
                })
                .map(|w| w / params.w0)
                .unwrap_or(window_cover),
        };
        1f64.max(by_distance).max(cover) * (1.0 + 1e-9)
    }
}

fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::param(format!("radius must be positive, got {r}")));
    }
    Ok(())
}

fn drain<'a, R: Region>(
    mut iter: crate::spatial::RegionIter<'a, R>,
    state: &mut SearchState,
    visit: &mut impl FnMut(PointId, &mut SearchState) -> Option<RcNnResult>,
) -> (Option<RcNnResult>, usize) {
    for (id, _) in iter.by_ref() {
        if let Some(result) = visit(id, state) {
            return (Some(result), iter.nodes_visited());
        }
    }
    (None, iter.nodes_visited())
}

/// Smallest cell width at which bucket 0 (or -1, with a zero offset) holds
/// the query and every stored coordinate on all axes, if any width does.
fn cell_cover_width(g: &[f64], lo: &[f64], hi: &[f64], fracs: &[f64]) -> Option<f64> {
    let mut width: f64 = 0.0;
    for j in 0..g.len() {
        let a = lo[j].min(g[j]);
        let b = hi[j].max(g[j]);
        let f = fracs[j];
        let need = if f > 0.0 {
            // x + f w in [0, w) for every x in [a, b]
            (-a / f).max(b / (1.0 - f))
        } else if a >= 0.0 {
            b
        } else if b < 0.0 {
            -a
        } else {
            return None;
        };
        width = width.max(need);
    }
    // the upper face is open, so step strictly past it
    Some(width * (1.0 + 1e-6) + f64::MIN_POSITIVE)
}
