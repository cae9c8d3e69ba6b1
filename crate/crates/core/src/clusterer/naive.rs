use crate::error::Result;
use crate::geometry::CondensedDistanceMatrix;
use crate::linkage::{merged_distance, ClusterSizePair, LinkageKind};

use super::{assignment_for, check_input, ClusterAssignment, Dendrogram, StoppingRule};

/// Reference agglomerative clustering: every step scans all active pairs.
///
/// Each active cluster lives in the slot of its smallest member, and pairs are
/// scanned in slot order with a strict comparison, so among equal distances
/// the pair with the lexicographically least (smaller, larger) member index
/// wins. Stops as soon as `stop` fires; the returned dendrogram then holds
/// only the merges performed.
pub fn cluster_naive(
    dm: &CondensedDistanceMatrix,
    kind: LinkageKind,
    stop: StoppingRule,
) -> Result<(Dendrogram, ClusterAssignment)> {
    check_input(dm, stop)?;
    let n = dm.n();
    let mut dist = dm.to_square();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let target = match stop {
        StoppingRule::TargetClusters(k) => k,
        StoppingRule::DistanceThreshold(_) => 1,
    };
    let mut steps = Vec::with_capacity(n - target);

    while active.len() > target {
        let mut best = (f64::INFINITY, 0, 0);
        for (pos, &a) in active.iter().enumerate() {
            let row = &dist[a * n..(a + 1) * n];
            for &b in &active[pos + 1..] {
                if row[b] < best.0 {
                    best = (row[b], a, b);
                }
            }
        }
        let (height, a, b) = best;
        if let StoppingRule::DistanceThreshold(max_height) = stop {
            if height > max_height {
                break;
            }
        }
        let sizes = ClusterSizePair::new(size[a], size[b]);
        for &c in &active {
            if c == a || c == b {
                continue;
            }
            let d = merged_distance(kind, dist[a * n + c], dist[b * n + c], sizes);
            dist[a * n + c] = d;
            dist[c * n + a] = d;
        }
        size[a] += size[b];
        active.retain(|&c| c != b);
        steps.push((a, b, height));
    }

    let dendro = Dendrogram::from_leaf_steps(n, steps, false);
    let assignment = assignment_for(&dendro, stop)?;
    Ok((dendro, assignment))
}
