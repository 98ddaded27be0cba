//! Approximate nearest-neighbor search in Euclidean space by locality-sensitive
//! hashing with query-centric dynamic bucketing.
//!
//! Points are projected by `L` independent groups of `K` Gaussian hash
//! functions. Each `K`-dimensional projection is indexed by a bulk-loaded
//! R-tree, and a query at radius `r` retrieves candidates with a hypercube
//! window of width `w0 * r` centered on the query's own projection. Radii grow
//! geometrically by the approximation ratio `c` until a close-enough point is
//! verified or the candidate budget `2tL + k` is spent.

mod codec;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod index;
pub mod lsh;
pub mod neighbor;
pub mod query;
pub mod spatial;

pub use dataset::{Dataset, Distribution, Point, PointId};
pub use error::{Error, Result};
pub use eval::{brute_force_knn, overall_ratio, recall, GroundTruth};
pub use index::{load_index, save_index, DbLshIndex};
pub use lsh::{BudgetMode, HashFamily, IndexParams, ParamMode};
pub use neighbor::Neighbor;
pub use query::{Bucketing, QueryOutcome, RcNnResult, SearchState, Termination};
pub use spatial::{ProjectedTable, Region, WindowRegion};
