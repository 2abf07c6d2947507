//! Exact k-nearest-neighbor search with L2 distance, and the retrieval
//! distribution over the neighbors' next tokens.

use rayon::prelude::*;

use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::lm::TokenDistribution;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position of the entry in the datastore.
    pub index: usize,
    /// Euclidean (not squared) distance to the query.
    pub distance: f64,
    pub value: TokenId,
}

/// Neighbors sorted by ascending distance, ties by ascending entry index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborSet {
    pub k: usize,
    pub items: Vec<Neighbor>,
}

impl NeighborSet {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Value of the nearest neighbor, if any.
    pub fn top1(&self) -> Option<TokenId> {
        self.items.first().map(|n| n.value)
    }

    /// The `k` nearest of these neighbors. Since the order is total, this
    /// equals a fresh search with the smaller `k`.
    pub fn truncated(&self, k: usize) -> NeighborSet {
        NeighborSet {
            k,
            items: self.items.iter().take(k).copied().collect(),
        }
    }
}

/// Squared L2 distance, accumulated in f64 in index order.
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

/// Squared distances of four consecutive rows at once. Each row keeps the
/// same index-order accumulation as [`squared_l2`]; interleaving only breaks
/// the dependency chain between rows.
fn squared_l2_x4(query: &[f32], rows: &[f32]) -> [f64; 4] {
    let dim = query.len();
    let (r0, rest) = rows.split_at(dim);
    let (r1, rest) = rest.split_at(dim);
    let (r2, r3) = rest.split_at(dim);
    let mut acc = [0.0f64; 4];
    for i in 0..dim {
        let q = query[i] as f64;
        let d0 = q - r0[i] as f64;
        let d1 = q - r1[i] as f64;
        let d2 = q - r2[i] as f64;
        let d3 = q - r3[i] as f64;
        acc[0] += d0 * d0;
        acc[1] += d1 * d1;
        acc[2] += d2 * d2;
        acc[3] += d3 * d3;
    }
    acc
}

/// Bounded selection of the `k` smallest `(squared distance, index)` pairs.
/// Squared distances are non-negative, so their bit patterns order like the
/// values themselves.
struct TopK {
    k: usize,
    heap: std::collections::BinaryHeap<(u64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            heap: std::collections::BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, sq: f64, index: usize) {
        let key = (sq.to_bits(), index);
        if self.heap.len() < self.k {
            self.heap.push(key);
        } else if let Some(&worst) = self.heap.peek() {
            if key < worst {
                self.heap.pop();
                self.heap.push(key);
            }
        }
    }

    fn merge(mut self, other: TopK) -> TopK {
        for (bits, index) in other.heap {
            self.offer(f64::from_bits(bits), index);
        }
        self
    }

    fn into_sorted(self) -> Vec<(f64, usize)> {
        let mut v: Vec<_> = self.heap.into_vec();
        v.sort_unstable();
        v.into_iter().map(|(b, i)| (f64::from_bits(b), i)).collect()
    }
}

/// Exact search over a datastore's keys. Immutable; safe to share.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    store: Datastore,
    partitions: usize,
}

impl RetrievalIndex {
    pub fn new(store: Datastore) -> Self {
        let partitions = rayon::current_num_threads().max(1);
        RetrievalIndex { store, partitions }
    }

    /// Splits the scan into `partitions` contiguous ranges searched in
    /// parallel. Results do not depend on the partition count.
    pub fn with_partitions(store: Datastore, partitions: usize) -> Self {
        RetrievalIndex {
            store,
            partitions: partitions.max(1),
        }
    }

    pub fn store(&self) -> &Datastore {
        &self.store
    }

    pub fn dim(&self) -> usize {
        self.store.dim()
    }

    fn scan(&self, query: &[f32], range: std::ops::Range<usize>, k: usize) -> TopK {
        let dim = self.store.dim();
        let keys = self.store.keys();
        let mut top = TopK::new(k);
        let mut i = range.start;
        while i + 4 <= range.end {
            let d = squared_l2_x4(query, &keys[i * dim..(i + 4) * dim]);
            for (j, sq) in d.into_iter().enumerate() {
                top.offer(sq, i + j);
            }
            i += 4;
        }
        while i < range.end {
            top.offer(squared_l2(query, self.store.key(i)), i);
            i += 1;
        }
        top
    }

    pub fn search(&self, query: &[f32], k: usize) -> Result<NeighborSet> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        let n = self.store.len();
        let top = if self.partitions <= 1 || n < 4096 {
            self.scan(query, 0..n, k)
        } else {
            let chunk = n.div_ceil(self.partitions);
            (0..self.partitions)
                .into_par_iter()
                .map(|p| self.scan(query, (p * chunk).min(n)..((p + 1) * chunk).min(n), k))
                .reduce(|| TopK::new(k), TopK::merge)
        };
        let items = top
            .into_sorted()
            .into_iter()
            .map(|(sq, index)| Neighbor {
                index,
                distance: sq.sqrt(),
                value: self.store.value(index),
            })
            .collect();
        Ok(NeighborSet { k, items })
    }
}

/// Softmax over negative distances, with mass summed per token value.
///
/// Tokens that are not among the neighbors get zero. Distances are shifted by
/// their minimum before exponentiation, which leaves the normalized result
/// unchanged; no temperature is applied. Returns `None` for an empty set,
/// which callers treat as "no retrieval evidence". Values outside
/// `vocab_size` are ignored.
pub fn knm_distribution(neighbors: &NeighborSet, vocab_size: usize) -> Option<TokenDistribution> {
    let min = neighbors.items.iter().map(|n| n.distance).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    let mut weights = vec![0.0f64; vocab_size];
    for n in &neighbors.items {
        if let Some(w) = weights.get_mut(n.value.index()) {
            *w += (-(n.distance - min)).exp();
        }
    }
    TokenDistribution::from_weights(weights).ok()
}
