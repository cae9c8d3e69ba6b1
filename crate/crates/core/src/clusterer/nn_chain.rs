use crate::error::Result;
use crate::geometry::CondensedDistanceMatrix;
use crate::linkage::{merged_distance, ClusterSizePair, LinkageKind};

use super::{check_input, cut_dendrogram, ClusterAssignment, Dendrogram, StoppingRule};

/// Full dendrogram via the nearest-neighbour chain, merges sorted by height.
///
/// Valid for any reducible linkage, which covers all three [`LinkageKind`]s.
/// The chain emits reciprocal nearest neighbours out of height order; the
/// stable sort afterwards restores the order a greedy closest-pair search
/// would have produced.
pub fn nn_chain_linkage(dm: &CondensedDistanceMatrix, kind: LinkageKind) -> Dendrogram {
    let n = dm.n();
    let mut work = Working::new(dm);
    let mut chain: Vec<usize> = Vec::with_capacity(n);
    let mut steps = Vec::with_capacity(n.saturating_sub(1));

    while work.active.len() > 1 {
        if chain.is_empty() {
            chain.push(work.active[0]);
        }
        let (a, b) = loop {
            let tip = chain[chain.len() - 1];
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let row = work.row(tip);
            // Start from the previous chain element so that ties keep the
            // chain moving towards a reciprocal pair.
            let (mut best, mut best_d) = match prev {
                Some(p) => (p, row[p]),
                None => (usize::MAX, f64::INFINITY),
            };
            for &c in &work.active {
                if c != tip && row[c] < best_d {
                    best = c;
                    best_d = row[c];
                }
            }
            if Some(best) == prev {
                chain.truncate(chain.len() - 2);
                break (tip, best);
            }
            chain.push(best);
        };

        let m = work.stride;
        let height = work.dist[a * m + b];
        let (keep, gone) = (a.min(b), a.max(b));
        let sizes = ClusterSizePair::new(work.size[keep], work.size[gone]);
        for &c in &work.active {
            if c == keep || c == gone {
                continue;
            }
            let d = merged_distance(kind, work.dist[keep * m + c], work.dist[gone * m + c], sizes);
            work.dist[keep * m + c] = d;
            work.dist[c * m + keep] = d;
        }
        work.size[keep] += work.size[gone];
        let pos = work.active.binary_search(&gone).expect("merged slot is active");
        work.active.remove(pos);
        steps.push((work.leaf[keep], work.leaf[gone], height));

        if work.active.len() * 2 <= work.m && work.m > COMPACT_MIN {
            work.compact(&mut chain);
        }
    }

    Dendrogram::from_leaf_steps(n, steps, true)
}

// Below this side the working matrix stays in cache and compaction is not
// worth the copy.
const COMPACT_MIN: usize = 128;

// Row stride for a side of `m`. Power-of-two-ish strides make column
// updates collide in the same cache sets.
fn padded_stride(m: usize) -> usize {
    if m <= COMPACT_MIN {
        m
    } else {
        m.next_multiple_of(8) + 8
    }
}

/// Dense distances between the surviving clusters.
///
/// Rows and columns of merged-away clusters are dropped once half the
/// matrix is dead, so the total copying cost stays quadratic.
struct Working {
    dist: Vec<f64>,
    m: usize,
    stride: usize,
    size: Vec<usize>,
    // Leaf slot that identifies each index in the original numbering.
    leaf: Vec<usize>,
    // Live indices, ascending.
    active: Vec<usize>,
}

impl Working {
    fn new(dm: &CondensedDistanceMatrix) -> Self {
        let n = dm.n();
        let stride = padded_stride(n);
        Working {
            dist: dm.to_square_strided(stride),
            m: n,
            stride,
            size: vec![1; n],
            leaf: (0..n).collect(),
            active: (0..n).collect(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.dist[i * self.stride..i * self.stride + self.m]
    }

    fn compact(&mut self, chain: &mut [usize]) {
        let live = self.active.len();
        let mut remap = vec![usize::MAX; self.m];
        for (new, &old) in self.active.iter().enumerate() {
            remap[old] = new;
        }
        let stride = padded_stride(live);
        let mut dist = Vec::with_capacity(live * stride);
        for &i in &self.active {
            let row = self.row(i);
            dist.extend(self.active.iter().map(|&j| row[j]));
            dist.resize(dist.len() + stride - live, 0.0);
        }
        self.dist = dist;
        self.size = self.active.iter().map(|&i| self.size[i]).collect();
        self.leaf = self.active.iter().map(|&i| self.leaf[i]).collect();
        for c in chain.iter_mut() {
            *c = remap[*c];
        }
        self.active = (0..live).collect();
        self.m = live;
        self.stride = stride;
    }
}

/// Nearest-neighbour-chain clustering cut at `stop`.
pub fn cluster_nn_chain(
    dm: &CondensedDistanceMatrix,
    kind: LinkageKind,
    stop: StoppingRule,
) -> Result<(Dendrogram, ClusterAssignment)> {
    check_input(dm, stop)?;
    let dendro = nn_chain_linkage(dm, kind);
    let assignment = cut_dendrogram(&dendro, stop)?;
    Ok((dendro, assignment))
}
