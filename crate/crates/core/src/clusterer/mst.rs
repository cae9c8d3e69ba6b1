use crate::error::Result;
use crate::geometry::CondensedDistanceMatrix;

use super::{check_input, cut_dendrogram, ClusterAssignment, Dendrogram, StoppingRule};

/// Single-linkage dendrogram from a Prim minimum spanning tree.
///
/// Sorting the `n - 1` tree edges by weight and joining their endpoints in
/// that order yields the single-linkage merge sequence.
pub fn mst_single_linkage(dm: &CondensedDistanceMatrix) -> Dendrogram {
    let n = dm.n();
    let values = dm.values();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;

    for _ in 1..n {
        // Relax distances from the node just added.
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = if current < j {
                values[CondensedDistanceMatrix::offset(n, current, j)]
            } else {
                values[CondensedDistanceMatrix::offset(n, j, current)]
            };
            if d < best[j] {
                best[j] = d;
                parent[j] = current;
            }
        }
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < next_d) {
                next = j;
                next_d = best[j];
            }
        }
        in_tree[next] = true;
        edges.push((parent[next], next, next_d));
        current = next;
    }

    Dendrogram::from_leaf_steps(n, edges, true)
}

/// MST-based single-linkage clustering cut at `stop`.
pub fn cluster_mst_single(dm: &CondensedDistanceMatrix, stop: StoppingRule) -> Result<(Dendrogram, ClusterAssignment)> {
    check_input(dm, stop)?;
    let dendro = mst_single_linkage(dm);
    let assignment = cut_dendrogram(&dendro, stop)?;
    Ok((dendro, assignment))
}
