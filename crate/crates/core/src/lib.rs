//! Hierarchical clustering of transformer tokens for token reduction.
//!
//! Tokens are clustered bottom-up on the cosine distance between their
//! attention keys, using single, complete or average linkage, until a target
//! number of clusters remains. Each cluster is then replaced by the
//! size-weighted mean of its members, and subsequent attention layers weight
//! merged tokens by their size.
//!
//! The crate is organized as:
//!
//! * [`geometry`]: feature matrices and condensed cosine-distance matrices.
//! * [`linkage`]: linkage definitions and their recurrence updates.
//! * [`clusterer`]: naive, nearest-neighbour-chain and MST engines.
//! * [`reducer`]: token merging, back-projection, the bipartite matching
//!   baseline and token schedules.
//! * [`attention`]: proportional attention and a small transformer block.
//! * [`demo`]: synthetic scenes run through a staged reduction.

pub mod attention;
pub mod clusterer;
pub mod config;
pub mod demo;
pub mod error;
pub mod geometry;
pub mod linkage;
pub mod metrics;
pub mod reducer;
pub mod synthetic;

pub use clusterer::{
    cluster, cluster_batch, cluster_features, cluster_mst_single, cluster_naive, cluster_nn_chain, cut_dendrogram,
    ClusterAssignment, Dendrogram, Engine, Merge, StoppingRule,
};
pub use error::{AtcError, Result};
pub use geometry::{cosine_distance, pairwise_distances, CondensedDistanceMatrix, FeatureMatrix};
pub use linkage::{merged_distance, set_distance, ClusterSizePair, LinkageKind};
pub use reducer::{
    merge_tokens, reduce_block, tome_bipartite_merge, unmerge, MergeRecord, ReductionSchedule, TokenBatch,
};

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    F: Fn(&T) -> Result<U>,
{
    items.iter().map(f).collect()
}
