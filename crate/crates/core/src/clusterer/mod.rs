//! Agglomerative clustering engines and flat-partition extraction.
//!
//! Three engines are provided:
//!
//! * [`cluster_naive`]: repeatedly scans all active pairs for the global
//!   minimum. `O(n^3)`; it serves as the reference the other engines are
//!   checked against.
//! * [`cluster_nn_chain`]: nearest-neighbour chain with recurrence updates,
//!   `O(n^2)` for all three (reducible) linkages.
//! * [`cluster_mst_single`]: single linkage from a Prim minimum spanning tree,
//!   `O(n^2)`.
//!
//! Engines work on a dense `n x n` mirror of the condensed matrix. The
//! naive engine stops as soon as the stopping rule fires, so its dendrogram
//! may be partial; the other two always build the full tree and then cut it.
//!
//! Cluster ids follow the usual convention: `0..n` are leaves and merge `k`
//! creates id `n + k`.

mod mst;
mod naive;
mod nn_chain;

use std::fmt;
use std::str::FromStr;

use crate::error::{AtcError, Result};
use crate::geometry::{pairwise_distances, CondensedDistanceMatrix, FeatureMatrix};
use crate::linkage::LinkageKind;

pub use mst::{cluster_mst_single, mst_single_linkage};
pub use naive::cluster_naive;
pub use nn_chain::{cluster_nn_chain, nn_chain_linkage};

/// One agglomeration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    /// Number of leaves in the cluster created by this merge.
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    merges: Vec<Merge>,
    n_leaves: usize,
}

impl Dendrogram {
    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn is_complete(&self) -> bool {
        self.merges.len() + 1 == self.n_leaves
    }

    pub fn heights(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.merges.iter().map(|m| m.height)
    }

    /// Builds a dendrogram from merges expressed as pairs of leaf
    /// representatives `(a, b, height)`. With `sort`, steps are stably
    /// reordered by height first.
    pub(crate) fn from_leaf_steps(n_leaves: usize, mut steps: Vec<(usize, usize, f64)>, sort: bool) -> Self {
        if sort {
            steps.sort_by(|x, y| x.2.total_cmp(&y.2));
        }
        let mut sets = UnionFind::new(n_leaves);
        // Cluster id and size currently held by each union-find root.
        let mut id: Vec<usize> = (0..n_leaves).collect();
        let mut size = vec![1usize; n_leaves];
        let mut merges = Vec::with_capacity(steps.len());
        for (k, (a, b, height)) in steps.into_iter().enumerate() {
            let (ra, rb) = (sets.find(a), sets.find(b));
            debug_assert_ne!(ra, rb, "step merges a cluster with itself");
            let (ia, ib) = (id[ra], id[rb]);
            let new_size = size[ra] + size[rb];
            let root = sets.union(ra, rb);
            id[root] = n_leaves + k;
            size[root] = new_size;
            merges.push(Merge {
                left: ia.min(ib),
                right: ia.max(ib),
                height,
                size: new_size,
            });
        }
        Dendrogram { merges, n_leaves }
    }

    /// Flat labels after applying the first `count` merges.
    fn labels_after(&self, count: usize) -> ClusterAssignment {
        let n = self.n_leaves;
        // Any leaf of each internal cluster serves as its representative.
        let mut leaf_of = Vec::with_capacity(self.merges.len());
        let rep = |c: usize, leaf_of: &Vec<usize>| if c < n { c } else { leaf_of[c - n] };
        let mut sets = UnionFind::new(n);
        for m in &self.merges[..count] {
            let (a, b) = (rep(m.left, &leaf_of), rep(m.right, &leaf_of));
            sets.union(a, b);
            leaf_of.push(a);
        }
        let roots: Vec<usize> = (0..n).map(|p| sets.find(p)).collect();
        ClusterAssignment::canonical(&roots)
    }

    /// Number of leading merges the stopping rule applies.
    fn merges_for(&self, stop: StoppingRule) -> Result<usize> {
        stop.validate(self.n_leaves)?;
        match stop {
            StoppingRule::TargetClusters(k) => {
                let needed = self.n_leaves - k;
                if needed > self.merges.len() {
                    return Err(AtcError::InvalidStop(format!(
                        "dendrogram has {} merges, {needed} needed for {k} clusters",
                        self.merges.len()
                    )));
                }
                Ok(needed)
            }
            StoppingRule::DistanceThreshold(h) => Ok(self.merges.iter().take_while(|m| m.height <= h).count()),
        }
    }
}

/// Flat partition of `n` tokens into `k` clusters.
///
/// Labels are canonical: clusters are numbered by their smallest member, so
/// token 0 always has label 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    k: usize,
}

impl ClusterAssignment {
    /// Relabels an arbitrary labelling into canonical order.
    pub fn canonical<T: Eq + std::hash::Hash + Copy>(raw: &[T]) -> Self {
        let mut seen = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = seen.len();
                *seen.entry(*r).or_insert(next)
            })
            .collect();
        ClusterAssignment { labels, k: seen.len() }
    }

    pub fn identity(n: usize) -> Self {
        ClusterAssignment {
            labels: (0..n).collect(),
            k: n,
        }
    }

    /// Validates an already canonical labelling.
    pub fn from_labels(labels: Vec<usize>) -> Result<Self> {
        let canon = Self::canonical(&labels);
        if canon.labels != labels {
            return Err(AtcError::MisalignedAssignment(
                "labels are not in canonical first-occurrence order".into(),
            ));
        }
        Ok(canon)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member indices per cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (p, &l) in self.labels.iter().enumerate() {
            out[l].push(p);
        }
        out
    }

    /// Composes this assignment with one over its clusters.
    pub fn then(&self, next: &ClusterAssignment) -> Result<ClusterAssignment> {
        if next.len() != self.k {
            return Err(AtcError::MisalignedAssignment(format!(
                "second assignment covers {} clusters, first produced {}",
                next.len(),
                self.k
            )));
        }
        let raw: Vec<usize> = self.labels.iter().map(|&l| next.labels[l]).collect();
        Ok(Self::canonical(&raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Merge until exactly `k` clusters remain.
    TargetClusters(usize),
    /// Merge while the closest pair is at most this far apart.
    DistanceThreshold(f64),
}

impl StoppingRule {
    pub fn validate(self, n: usize) -> Result<()> {
        match self {
            StoppingRule::TargetClusters(k) if k < 1 || k > n => Err(AtcError::InvalidStop(format!(
                "target cluster count {k} outside 1..={n}"
            ))),
            StoppingRule::DistanceThreshold(h) if h.is_nan() || h < 0.0 => Err(AtcError::InvalidStop(format!(
                "distance threshold {h} must be non-negative"
            ))),
            _ => Ok(()),
        }
    }
}

/// Flat partition of a complete dendrogram under `stop`.
pub fn cut_dendrogram(dendro: &Dendrogram, stop: StoppingRule) -> Result<ClusterAssignment> {
    if !dendro.is_complete() {
        return Err(AtcError::InvalidStop(format!(
            "dendrogram over {} leaves has only {} merges",
            dendro.n_leaves,
            dendro.merges.len()
        )));
    }
    let count = dendro.merges_for(stop)?;
    Ok(dendro.labels_after(count))
}

/// Partition from a possibly partial dendrogram, used by the engines.
pub(crate) fn assignment_for(dendro: &Dendrogram, stop: StoppingRule) -> Result<ClusterAssignment> {
    let count = dendro.merges_for(stop)?;
    Ok(dendro.labels_after(count))
}

pub(crate) fn check_input(dm: &CondensedDistanceMatrix, stop: StoppingRule) -> Result<()> {
    if dm.n() < 2 {
        return Err(AtcError::InvalidMatrix(format!(
            "clustering needs at least 2 points, got {}",
            dm.n()
        )));
    }
    stop.validate(dm.n())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    Naive,
    NnChain,
    Mst,
}

impl Engine {
    pub const ALL: [Engine; 3] = [Engine::Naive, Engine::NnChain, Engine::Mst];

    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Naive => "naive",
            Engine::NnChain => "nnchain",
            Engine::Mst => "mst",
        }
    }

    /// Default engine for a linkage: MST for single, NN-chain otherwise.
    pub fn preferred(kind: LinkageKind) -> Self {
        match kind {
            LinkageKind::Single => Engine::Mst,
            _ => Engine::NnChain,
        }
    }

    pub fn supports(self, kind: LinkageKind) -> bool {
        self != Engine::Mst || kind == LinkageKind::Single
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Engine {
    type Err = AtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Engine::Naive),
            "nnchain" => Ok(Engine::NnChain),
            "mst" => Ok(Engine::Mst),
            other => Err(AtcError::UnknownVariant {
                kind: "engine",
                value: other.to_string(),
            }),
        }
    }
}

/// Runs `engine` on a precomputed distance matrix.
pub fn cluster(
    dm: &CondensedDistanceMatrix,
    kind: LinkageKind,
    engine: Engine,
    stop: StoppingRule,
) -> Result<(Dendrogram, ClusterAssignment)> {
    match engine {
        Engine::Naive => cluster_naive(dm, kind, stop),
        Engine::NnChain => cluster_nn_chain(dm, kind, stop),
        Engine::Mst if kind == LinkageKind::Single => cluster_mst_single(dm, stop),
        Engine::Mst => Err(AtcError::UnsupportedEngine(format!(
            "engine `mst` implements single linkage only, got `{kind}`"
        ))),
    }
}

/// Computes cosine distances and clusters one sequence.
pub fn cluster_features(
    features: &FeatureMatrix,
    kind: LinkageKind,
    engine: Engine,
    stop: StoppingRule,
) -> Result<(Dendrogram, ClusterAssignment)> {
    let dm = pairwise_distances(features)?;
    cluster(&dm, kind, engine, stop)
}

/// Clusters every sequence of a batch independently.
///
/// With the `parallel` feature sequences are processed on the rayon pool.
pub fn cluster_batch(
    sequences: &[FeatureMatrix],
    kind: LinkageKind,
    engine: Engine,
    stop: StoppingRule,
) -> Result<Vec<(Dendrogram, ClusterAssignment)>> {
    crate::par_map(sequences, |seq| cluster_features(seq, kind, engine, stop))
}

/// Disjoint sets with path halving and union by size.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Joins the sets of `a` and `b`, returning the new root.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        ra
    }
}
