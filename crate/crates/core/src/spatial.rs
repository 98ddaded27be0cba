//! Packed R-tree over one projected table, bulk-loaded by sort-tile-recursive
//! partitioning and queried through lazily enumerated regions.
//!
//! Node boxes are exact coordinate minima and maxima of their entries, never
//! widened. Together with monotone floating-point rounding this lets every
//! pruning test below be exact: a node is skipped only when no entry inside it
//! can satisfy the region's point predicate as that predicate evaluates it.

use crate::codec::{ByteReader, ByteWriter};
use crate::dataset::PointId;
use crate::error::{Error, Result};

/// Minimum children per node, root excepted.
pub const MIN_FANOUT: usize = 2;

/// A query region over `K`-dimensional projected coordinates.
pub trait Region {
    fn dim(&self) -> usize;

    /// Whether `point` belongs to the region.
    fn contains(&self, point: &[f64]) -> bool;

    /// Must return `true` whenever some point of the box `[lo, hi]` that
    /// [`Region::contains`] would accept could exist.
    fn intersects(&self, lo: &[f64], hi: &[f64]) -> bool;

    /// May return `true` only if every point in `[lo, hi]` is contained.
    fn contains_box(&self, _lo: &[f64], _hi: &[f64]) -> bool {
        false
    }
}

/// Axis-aligned hypercube `[center_j - width/2, center_j + width/2]`, closed on
/// every face.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRegion {
    center: Vec<f64>,
    width: f64,
    half: f64,
}

impl WindowRegion {
    pub fn new(center: Vec<f64>, width: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::param(format!(
                "window width must be positive, got {width}"
            )));
        }
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(
                "window center must be a finite, non-empty vector",
            ));
        }
        Ok(WindowRegion {
            center,
            width,
            half: width / 2.0,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }
}

impl Region for WindowRegion {
    fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(&self.center)
            .all(|(p, c)| (p - c).abs() <= self.half)
    }

    fn intersects(&self, lo: &[f64], hi: &[f64]) -> bool {
        self.center
            .iter()
            .zip(lo.iter().zip(hi))
            .all(|(&c, (&l, &h))| {
                if c < l {
                    l - c <= self.half
                } else if c > h {
                    c - h <= self.half
                } else {
                    true
                }
            })
    }

    fn contains_box(&self, lo: &[f64], hi: &[f64]) -> bool {
        self.center
            .iter()
            .zip(lo.iter().zip(hi))
            .all(|(&c, (&l, &h))| (l - c).abs() <= self.half && (h - c).abs() <= self.half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Node {
    leaf: bool,
    /// Entry range for leaves, child node range otherwise.
    start: u32,
    end: u32,
    /// Entries in the subtree.
    count: u32,
}

/// One projected copy of the dataset and its packed R-tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedTable {
    table_id: usize,
    dim: usize,
    fanout: usize,
    ids: Vec<PointId>,
    coords: Vec<f64>,
    nodes: Vec<Node>,
    node_lo: Vec<f64>,
    node_hi: Vec<f64>,
}

impl ProjectedTable {
    /// Builds from `(point_id, coordinates)` pairs.
    pub fn from_entries(
        table_id: usize,
        entries: Vec<(PointId, Vec<f64>)>,
        fanout: usize,
    ) -> Result<Self> {
        let dim = entries
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Build("no entries to index".into()))?;
        let mut ids = Vec::with_capacity(entries.len());
        let mut coords = Vec::with_capacity(entries.len() * dim);
        for (i, (id, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    record: i,
                    expected: dim,
                    found: v.len(),
                });
            }
            ids.push(id);
            coords.extend(v);
        }
        Self::bulk_build(table_id, dim, ids, coords, fanout)
    }

    /// Sort-tile-recursive bulk load over row-major `coords`.
    ///
    /// Entries are sorted on axis 0 and cut into slabs, each slab is sorted on
    /// axis 1 and cut again, and so on; the final ordering is packed into
    /// leaves of `fanout` entries. Upper levels repeat the procedure on node
    /// box centers. Slab sizes are multiples of `fanout`, so the leaf count is
    /// exactly `ceil(n / fanout)`.
    pub fn bulk_build(
        table_id: usize,
        dim: usize,
        ids: Vec<PointId>,
        coords: Vec<f64>,
        fanout: usize,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Build("no entries to index".into()));
        }
        if dim == 0 {
            return Err(Error::Build("projected dimension must be positive".into()));
        }
        if fanout <= MIN_FANOUT {
            return Err(Error::Build(format!(
                "fanout must exceed the minimum fill of {MIN_FANOUT}, got {fanout}"
            )));
        }
        if coords.len() != ids.len() * dim {
            return Err(Error::Build(format!(
                "{} coordinates for {} entries of dimension {dim}",
                coords.len(),
                ids.len()
            )));
        }
        if ids.len() > u32::MAX as usize {
            return Err(Error::Build("too many entries".into()));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::Build("projected coordinates must be finite".into()));
        }

        let n = ids.len();
        let mut order: Vec<usize> = (0..n).collect();
        str_sort(&mut order, dim, 0, fanout, &|i, axis| {
            coords[i * dim + axis]
        });
        let ids: Vec<PointId> = order.iter().map(|&i| ids[i]).collect();
        let coords: Vec<f64> = order
            .iter()
            .flat_map(|&i| coords[i * dim..(i + 1) * dim].iter().copied())
            .collect();

        let mut table = ProjectedTable {
            table_id,
            dim,
            fanout,
            ids,
            coords,
            nodes: Vec::new(),
            node_lo: Vec::new(),
            node_hi: Vec::new(),
        };

        // leaves
        let mut level: Vec<Pending> = Vec::new();
        let mut start = 0;
        for size in chunk_sizes(n, fanout) {
            let end = start + size;
            let (lo, hi) = table.entry_bounds(start, end);
            level.push(Pending {
                node: Node {
                    leaf: true,
                    start: start as u32,
                    end: end as u32,
                    count: size as u32,
                },
                lo,
                hi,
            });
            start = end;
        }

        loop {
            if level.len() > 1 {
                let centers: Vec<f64> = level
                    .iter()
                    .flat_map(|p| p.lo.iter().zip(&p.hi).map(|(l, h)| 0.5 * (l + h)))
                    .collect();
                let mut order: Vec<usize> = (0..level.len()).collect();
                str_sort(&mut order, dim, 0, fanout, &|i, axis| {
                    centers[i * dim + axis]
                });
                let mut slots: Vec<Option<Pending>> = level.into_iter().map(Some).collect();
                level = order.iter().map(|&i| slots[i].take().unwrap()).collect();
            }
            let base = table.nodes.len();
            let count = level.len();
            for p in &level {
                table.nodes.push(p.node);
                table.node_lo.extend_from_slice(&p.lo);
                table.node_hi.extend_from_slice(&p.hi);
            }
            if count == 1 {
                break;
            }
            let mut parents = Vec::new();
            let mut start = 0;
            for size in chunk_sizes(count, fanout) {
                let end = start + size;
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                let mut entries = 0u32;
                for child in &level[start..end] {
                    for j in 0..dim {
                        lo[j] = lo[j].min(child.lo[j]);
                        hi[j] = hi[j].max(child.hi[j]);
                    }
                    entries += child.node.count;
                }
                parents.push(Pending {
                    node: Node {
                        leaf: false,
                        start: (base + start) as u32,
                        end: (base + end) as u32,
                        count: entries,
                    },
                    lo,
                    hi,
                });
                start = end;
            }
            level = parents;
        }
        Ok(table)
    }

    fn entry_bounds(&self, start: usize, end: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for e in start..end {
            for (j, &v) in self.entry_coords(e).iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        (lo, hi)
    }

    pub fn table_id(&self) -> usize {
        self.table_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn entry_coords(&self, e: usize) -> &[f64] {
        &self.coords[e * self.dim..(e + 1) * self.dim]
    }

    fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    fn node_box(&self, node: usize) -> (&[f64], &[f64]) {
        let r = node * self.dim..(node + 1) * self.dim;
        (&self.node_lo[r.clone()], &self.node_hi[r])
    }

    /// Bounding box of all entries.
    pub fn bounds(&self) -> (&[f64], &[f64]) {
        self.node_box(self.root())
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.leaf).count()
    }

    /// Number of levels, leaves included.
    pub fn height(&self) -> usize {
        let mut node = self.root();
        let mut h = 1;
        while !self.nodes[node].leaf {
            node = self.nodes[node].start as usize;
            h += 1;
        }
        h
    }

    /// All `(point_id, coordinates)` pairs in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (PointId, &[f64])> + '_ {
        self.ids
            .iter()
            .copied()
            .zip(self.coords.chunks_exact(self.dim))
    }

    /// Coordinates stored for `id`, by linear search.
    pub fn find(&self, id: PointId) -> Option<&[f64]> {
        self.entries().find(|(i, _)| *i == id).map(|(_, c)| c)
    }

    fn check_region<R: Region>(&self, region: &R) -> Result<()> {
        if region.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                record: self.table_id,
                expected: self.dim,
                found: region.dim(),
            });
        }
        Ok(())
    }

    /// Lazily enumerates the entries inside `region`, depth-first in
    /// construction order. Nothing is materialized ahead of the consumer.
    pub fn query<R: Region>(&self, region: R) -> Result<RegionIter<'_, R>> {
        self.check_region(&region)?;
        let mut stack = Vec::new();
        let (lo, hi) = self.node_box(self.root());
        if region.intersects(lo, hi) {
            stack.push(self.root() as u32);
        }
        Ok(RegionIter {
            table: self,
            region,
            stack,
            leaf_pos: 0,
            leaf_end: 0,
            nodes_visited: 0,
        })
    }

    pub fn window_query(&self, window: WindowRegion) -> Result<RegionIter<'_, WindowRegion>> {
        self.query(window)
    }

    /// Size of the region's result without enumerating fully-covered subtrees.
    pub fn count_in<R: Region>(&self, region: &R) -> Result<usize> {
        self.check_region(region)?;
        Ok(self.count_node(region, self.root()))
    }

    pub fn count_in_window(&self, window: &WindowRegion) -> Result<usize> {
        self.count_in(window)
    }

    fn count_node<R: Region>(&self, region: &R, node: usize) -> usize {
        let (lo, hi) = self.node_box(node);
        if !region.intersects(lo, hi) {
            return 0;
        }
        let n = self.nodes[node];
        if region.contains_box(lo, hi) {
            return n.count as usize;
        }
        if n.leaf {
            (n.start as usize..n.end as usize)
                .filter(|&e| region.contains(self.entry_coords(e)))
                .count()
        } else {
            (n.start as usize..n.end as usize)
                .map(|child| self.count_node(region, child))
                .sum()
        }
    }

    /// Number of nodes whose box the region intersects.
    pub fn intersecting_nodes<R: Region>(&self, region: &R) -> usize {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let (lo, hi) = self.node_box(*i);
                region.intersects(lo, hi)
            })
            .count()
    }

    /// Structural audit: tight boxes, fanout bounds, each entry reachable once.
    #[allow(clippy::needless_range_loop)]
    pub fn audit(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Build(format!("table {}: {msg}", self.table_id)));
        if self.nodes.is_empty() || self.ids.is_empty() {
            return fail("empty tree".into());
        }
        let root = self.root();
        let mut seen = vec![false; self.ids.len()];
        let mut stack = vec![root];
        let mut reached_nodes = 0;
        while let Some(node) = stack.pop() {
            reached_nodes += 1;
            let n = self.nodes[node];
            let size = (n.end - n.start) as usize;
            if node != root && !(MIN_FANOUT..=self.fanout).contains(&size) {
                return fail(format!("node {node} has {size} children"));
            }
            if size == 0 || size > self.fanout {
                return fail(format!("node {node} has {size} children"));
            }
            let (lo, hi) = self.node_box(node);
            let mut tight_lo = vec![f64::INFINITY; self.dim];
            let mut tight_hi = vec![f64::NEG_INFINITY; self.dim];
            let mut count = 0u32;
            if n.leaf {
                if n.end as usize > self.ids.len() {
                    return fail(format!("leaf {node} points past the entries"));
                }
                for e in n.start as usize..n.end as usize {
                    if std::mem::replace(&mut seen[e], true) {
                        return fail(format!("entry {e} reachable twice"));
                    }
                    for (j, &v) in self.entry_coords(e).iter().enumerate() {
                        tight_lo[j] = tight_lo[j].min(v);
                        tight_hi[j] = tight_hi[j].max(v);
                    }
                    count += 1;
                }
            } else {
                if n.end as usize > node {
                    return fail(format!("node {node} has children at or after itself"));
                }
                for child in n.start as usize..n.end as usize {
                    let (clo, chi) = self.node_box(child);
                    for j in 0..self.dim {
                        tight_lo[j] = tight_lo[j].min(clo[j]);
                        tight_hi[j] = tight_hi[j].max(chi[j]);
                    }
                    count += self.nodes[child].count;
                    stack.push(child);
                }
            }
            if lo != tight_lo.as_slice() || hi != tight_hi.as_slice() {
                return fail(format!(
                    "node {node} box is not the tight hull of its children"
                ));
            }
            if count != n.count {
                return fail(format!("node {node} entry count {} != {count}", n.count));
            }
        }
        if reached_nodes != self.nodes.len() {
            return fail(format!(
                "{} of {} nodes reachable",
                reached_nodes,
                self.nodes.len()
            ));
        }
        if let Some(e) = seen.iter().position(|s| !s) {
            return fail(format!("entry {e} unreachable"));
        }
        let mut ids = self.ids.clone();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return fail("duplicate point id".into());
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut ByteWriter) {
        w.u64(self.table_id as u64);
        w.u32(self.dim as u32);
        w.u32(self.fanout as u32);
        w.u64(self.ids.len() as u64);
        w.u32s(&self.ids);
        w.f64s(&self.coords);
        w.u64(self.nodes.len() as u64);
        for n in &self.nodes {
            w.u8(n.leaf as u8);
            w.u32(n.start);
            w.u32(n.end);
            w.u32(n.count);
        }
        w.f64s(&self.node_lo);
        w.f64s(&self.node_hi);
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let table_id = r.u64("table id")? as usize;
        let dim = r.u32("table dimension")? as usize;
        let fanout = r.u32("table fanout")? as usize;
        if dim == 0 {
            return Err(r.format_error("table dimension is zero"));
        }
        let n = r.len_prefix(4 + 8 * dim, "entry count")?;
        let ids = r.u32s(n, "entry ids")?;
        let coords = r.f64s(n * dim, "entry coordinates")?;
        let node_count = r.len_prefix(13 + 16 * dim, "node count")?;
        let mut nodes = Vec::with_capacity(node_count);
        for _ in 0..node_count {
            let leaf = match r.u8("node kind")? {
                0 => false,
                1 => true,
                other => return Err(r.format_error(format!("bad node kind {other}"))),
            };
            nodes.push(Node {
                leaf,
                start: r.u32("node start")?,
                end: r.u32("node end")?,
                count: r.u32("node count")?,
            });
        }
        let node_lo = r.f64s(node_count * dim, "node lower bounds")?;
        let node_hi = r.f64s(node_count * dim, "node upper bounds")?;
        let table = ProjectedTable {
            table_id,
            dim,
            fanout,
            ids,
            coords,
            nodes,
            node_lo,
            node_hi,
        };
        table
            .audit()
            .map_err(|e| r.format_error(format!("corrupt table: {e}")))?;
        Ok(table)
    }
}

struct Pending {
    node: Node,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Sort-tile-recursive ordering of `items` starting at `axis`.
fn str_sort<F: Fn(usize, usize) -> f64>(
    items: &mut [usize],
    dim: usize,
    axis: usize,
    fanout: usize,
    key: &F,
) {
    items.sort_unstable_by(|&a, &b| {
        key(a, axis)
            .total_cmp(&key(b, axis))
            .then_with(|| a.cmp(&b))
    });
    let n = items.len();
    if axis + 1 >= dim || n <= fanout {
        return;
    }
    let pages = n.div_ceil(fanout);
    let remaining_axes = (dim - axis) as f64;
    let slabs = ((pages as f64).powf(1.0 / remaining_axes).ceil() as usize).max(1);
    let slab_len = fanout * pages.div_ceil(slabs);
    for slab in items.chunks_mut(slab_len) {
        str_sort(slab, dim, axis + 1, fanout, key);
    }
}

/// Splits `n` items into `ceil(n / fanout)` consecutive groups of at most
/// `fanout`, keeping every group at [`MIN_FANOUT`] or more when `n` allows.
fn chunk_sizes(n: usize, fanout: usize) -> Vec<usize> {
    let mut sizes = vec![fanout; n / fanout];
    let rem = n % fanout;
    if rem > 0 {
        sizes.push(rem);
    }
    let len = sizes.len();
    if len >= 2 && rem > 0 && rem < MIN_FANOUT {
        let need = MIN_FANOUT - rem;
        sizes[len - 2] -= need;
        sizes[len - 1] += need;
    }
    sizes
}

/// Lazy depth-first enumeration of a region's entries.
pub struct RegionIter<'a, R: Region> {
    table: &'a ProjectedTable,
    region: R,
    stack: Vec<u32>,
    leaf_pos: usize,
    leaf_end: usize,
    nodes_visited: usize,
}

impl<R: Region> RegionIter<'_, R> {
    /// Nodes expanded so far; only nodes whose box intersects the region are
    /// ever expanded.
    pub fn nodes_visited(&self) -> usize {
        self.nodes_visited
    }

    pub fn region(&self) -> &R {
        &self.region
    }
}

impl<'a, R: Region> Iterator for RegionIter<'a, R> {
    type Item = (PointId, &'a [f64]);

    fn next(&mut self) -> Option<Self::Item> {
        let table = self.table;
        loop {
            while self.leaf_pos < self.leaf_end {
                let e = self.leaf_pos;
                self.leaf_pos += 1;
                let coords = table.entry_coords(e);
                if self.region.contains(coords) {
                    return Some((table.ids[e], coords));
                }
            }
            let node = self.stack.pop()? as usize;
            self.nodes_visited += 1;
            let n = table.nodes[node];
            if n.leaf {
                self.leaf_pos = n.start as usize;
                self.leaf_end = n.end as usize;
            } else {
                for child in (n.start..n.end).rev() {
                    let (lo, hi) = table.node_box(child as usize);
                    if self.region.intersects(lo, hi) {
                        self.stack.push(child);
                    }
                }
            }
        }
    }
}
