use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::dataset::PointId;

/// A point id with its exact distance to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: PointId,
    pub distance: f64,
}

impl Neighbor {
    pub fn new(id: PointId, distance: f64) -> Self {
        Neighbor { id, distance }
    }

    /// Ascending distance, ties broken by ascending id.
    pub fn rank_cmp(&self, other: &Neighbor) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// The `k` best neighbors seen so far (max-heap on rank).
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.heap.len() >= self.k
    }

    pub fn push(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(Ranked(n));
        } else if let Some(worst) = self.heap.peek() {
            if n.rank_cmp(&worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Ranked(n));
            }
        }
    }

    /// The `k`-th best neighbor, once `k` have been seen.
    pub fn kth(&self) -> Option<Neighbor> {
        if self.is_full() {
            self.heap.peek().map(|r| r.0)
        } else {
            None
        }
    }

    /// The best neighbor seen so far.
    pub fn best(&self) -> Option<Neighbor> {
        self.heap.iter().map(|r| r.0).min_by(Neighbor::rank_cmp)
    }

    pub fn to_sorted_vec(&self) -> Vec<Neighbor> {
        let mut v: Vec<Neighbor> = self.heap.iter().map(|r| r.0).collect();
        v.sort_by(Neighbor::rank_cmp);
        v
    }
}
