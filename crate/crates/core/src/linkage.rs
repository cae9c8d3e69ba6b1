//! Inter-cluster distances for single, complete and average linkage.
//!
//! [`merged_distance`] is the incremental update used by the clustering
//! engines; [`set_distance`] evaluates the definitions directly over member
//! pairs and is only meant for checking the engines.

use std::fmt;
use std::str::FromStr;

use crate::error::{AtcError, Result};
use crate::geometry::CondensedDistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkageKind {
    /// Minimum distance over member pairs.
    Single,
    /// Maximum distance over member pairs.
    Complete,
    /// Mean distance over member pairs.
    Average,
}

impl LinkageKind {
    pub const ALL: [LinkageKind; 3] = [LinkageKind::Single, LinkageKind::Complete, LinkageKind::Average];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkageKind::Single => "single",
            LinkageKind::Complete => "complete",
            LinkageKind::Average => "average",
        }
    }
}

impl fmt::Display for LinkageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkageKind {
    type Err = AtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(LinkageKind::Single),
            "complete" => Ok(LinkageKind::Complete),
            "average" => Ok(LinkageKind::Average),
            other => Err(AtcError::UnknownVariant {
                kind: "linkage",
                value: other.to_string(),
            }),
        }
    }
}

/// Sizes `|I|` and `|J|` of the two clusters being merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterSizePair {
    pub size_i: usize,
    pub size_j: usize,
}

impl ClusterSizePair {
    pub fn new(size_i: usize, size_j: usize) -> Self {
        debug_assert!(size_i >= 1 && size_j >= 1);
        Self { size_i, size_j }
    }
}

/// Distance from `I ∪ J` to a third cluster `K`, given `d(I, K)` and `d(J, K)`.
#[inline]
pub fn merged_distance(kind: LinkageKind, d_ik: f64, d_jk: f64, sizes: ClusterSizePair) -> f64 {
    match kind {
        LinkageKind::Single => d_ik.min(d_jk),
        LinkageKind::Complete => d_ik.max(d_jk),
        LinkageKind::Average => {
            let (si, sj) = (sizes.size_i as f64, sizes.size_j as f64);
            (si * d_ik + sj * d_jk) / (si + sj)
        }
    }
}

/// Literal linkage over all cross pairs of `members_i x members_j`.
pub fn set_distance(
    kind: LinkageKind,
    dm: &CondensedDistanceMatrix,
    members_i: &[usize],
    members_j: &[usize],
) -> Result<f64> {
    if members_i.is_empty() || members_j.is_empty() {
        return Err(AtcError::InvalidStop("cluster member sets must be non-empty".into()));
    }
    if let Some(&bad) = members_i.iter().chain(members_j).find(|&&m| m >= dm.n()) {
        return Err(AtcError::ShapeMismatch(format!(
            "member {bad} out of range for {} points",
            dm.n()
        )));
    }
    if let Some(&shared) = members_i.iter().find(|m| members_j.contains(m)) {
        return Err(AtcError::OverlappingClusters(shared));
    }
    let pairs = members_i
        .iter()
        .flat_map(|&i| members_j.iter().map(move |&j| dm.get(i, j)));
    Ok(match kind {
        LinkageKind::Single => pairs.fold(f64::INFINITY, f64::min),
        LinkageKind::Complete => pairs.fold(f64::NEG_INFINITY, f64::max),
        LinkageKind::Average => pairs.sum::<f64>() / (members_i.len() * members_j.len()) as f64,
    })
}
