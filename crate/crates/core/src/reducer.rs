//! Token reduction: size-weighted merging, back-projection, the bipartite
//! matching baseline and token schedules.

use std::fmt;

use crate::clusterer::{cluster, ClusterAssignment, Engine, StoppingRule};
use crate::config::KeyValueConfig;
use crate::error::{AtcError, Result};
use crate::geometry::{cross_similarity, pairwise_distances, FeatureMatrix};
use crate::linkage::LinkageKind;

/// A batch of token sequences with per-token sizes.
///
/// The first `protected_prefix` rows of every sequence (e.g. a CLS token) are
/// never clustered or merged.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    features: Vec<FeatureMatrix>,
    sizes: Vec<Vec<usize>>,
    protected_prefix: usize,
}

impl TokenBatch {
    pub fn new(features: Vec<FeatureMatrix>, sizes: Vec<Vec<usize>>, protected_prefix: usize) -> Result<Self> {
        if features.len() != sizes.len() {
            return Err(AtcError::ShapeMismatch(format!(
                "{} sequences but {} size vectors",
                features.len(),
                sizes.len()
            )));
        }
        for (s, (f, sz)) in features.iter().zip(&sizes).enumerate() {
            check_sizes(f, sz)?;
            if f.n_tokens() <= protected_prefix {
                return Err(AtcError::ShapeMismatch(format!(
                    "sequence {s} has {} tokens, protected prefix is {protected_prefix}",
                    f.n_tokens()
                )));
            }
        }
        Ok(Self {
            features,
            sizes,
            protected_prefix,
        })
    }

    /// Every token starts out representing a single patch.
    pub fn with_unit_sizes(features: Vec<FeatureMatrix>, protected_prefix: usize) -> Result<Self> {
        let sizes = features.iter().map(|f| vec![1; f.n_tokens()]).collect();
        Self::new(features, sizes, protected_prefix)
    }

    pub fn features(&self) -> &[FeatureMatrix] {
        &self.features
    }

    pub fn sizes(&self) -> &[Vec<usize>] {
        &self.sizes
    }

    pub fn protected_prefix(&self) -> usize {
        self.protected_prefix
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Unprotected token count per sequence.
    pub fn unprotected_counts(&self) -> Vec<usize> {
        self.features
            .iter()
            .map(|f| f.n_tokens() - self.protected_prefix)
            .collect()
    }

    pub fn into_parts(self) -> (Vec<FeatureMatrix>, Vec<Vec<usize>>, usize) {
        (self.features, self.sizes, self.protected_prefix)
    }
}

fn check_sizes(features: &FeatureMatrix, sizes: &[usize]) -> Result<()> {
    if sizes.len() != features.n_tokens() {
        return Err(AtcError::MisalignedAssignment(format!(
            "{} sizes for {} tokens",
            sizes.len(),
            features.n_tokens()
        )));
    }
    if let Some(p) = sizes.iter().position(|&s| s == 0) {
        return Err(AtcError::NonPositiveSize(p));
    }
    Ok(())
}

/// How the unprotected tokens of one sequence were grouped by a merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeRecord {
    assignment: ClusterAssignment,
    protected_prefix: usize,
}

impl MergeRecord {
    pub fn new(assignment: ClusterAssignment, protected_prefix: usize) -> Self {
        Self {
            assignment,
            protected_prefix,
        }
    }

    pub fn identity(n_unprotected: usize, protected_prefix: usize) -> Self {
        Self::new(ClusterAssignment::identity(n_unprotected), protected_prefix)
    }

    pub fn assignment(&self) -> &ClusterAssignment {
        &self.assignment
    }

    pub fn protected_prefix(&self) -> usize {
        self.protected_prefix
    }

    /// Unprotected tokens before the merge.
    pub fn pre_count(&self) -> usize {
        self.assignment.len()
    }

    /// Unprotected tokens after the merge.
    pub fn post_count(&self) -> usize {
        self.assignment.k()
    }

    /// Record equivalent to applying `self` and then `next`.
    pub fn then(&self, next: &MergeRecord) -> Result<MergeRecord> {
        if next.protected_prefix != self.protected_prefix {
            return Err(AtcError::MisalignedAssignment(
                "records disagree on the protected prefix".into(),
            ));
        }
        Ok(MergeRecord::new(
            self.assignment.then(&next.assignment)?,
            self.protected_prefix,
        ))
    }
}

/// Replaces each cluster by the size-weighted mean of its members.
///
/// `assignment` covers the trailing unprotected rows; any leading rows are a
/// protected prefix and are copied through. Output rows follow canonical
/// cluster order and sizes are summed per cluster.
pub fn merge_tokens(
    seq: &FeatureMatrix,
    sizes: &[usize],
    assignment: &ClusterAssignment,
) -> Result<(FeatureMatrix, Vec<usize>, MergeRecord)> {
    check_sizes(seq, sizes)?;
    let n = seq.n_tokens();
    if assignment.is_empty() || assignment.len() > n {
        return Err(AtcError::MisalignedAssignment(format!(
            "assignment over {} tokens for a sequence of {n}",
            assignment.len()
        )));
    }
    let prefix = n - assignment.len();
    let dim = seq.dim();
    let k = assignment.k();

    let mut out_sizes = sizes[..prefix].to_vec();
    out_sizes.resize(prefix + k, 0);
    let mut sums = vec![0.0; k * dim];
    let mut count = vec![0usize; k];
    let mut first = vec![usize::MAX; k];
    for (p, &label) in assignment.labels().iter().enumerate() {
        let row = prefix + p;
        let w = sizes[row] as f64;
        for (acc, &x) in sums[label * dim..(label + 1) * dim].iter_mut().zip(seq.row(row)) {
            *acc += w * x;
        }
        out_sizes[prefix + label] += sizes[row];
        count[label] += 1;
        if first[label] == usize::MAX {
            first[label] = row;
        }
    }

    let mut data = Vec::with_capacity((prefix + k) * dim);
    data.extend_from_slice(&seq.as_slice()[..prefix * dim]);
    for c in 0..k {
        if count[c] == 1 {
            // Singletons are copied so unmerged tokens stay bit-identical.
            data.extend_from_slice(seq.row(first[c]));
        } else {
            let total = out_sizes[prefix + c] as f64;
            data.extend(sums[c * dim..(c + 1) * dim].iter().map(|s| s / total));
        }
    }
    let merged = FeatureMatrix::new(data, prefix + k, dim)?;
    Ok((merged, out_sizes, MergeRecord::new(assignment.clone(), prefix)))
}

/// Expands reduced tokens back to their original positions.
pub fn unmerge(reduced: &FeatureMatrix, record: &MergeRecord) -> Result<FeatureMatrix> {
    let prefix = record.protected_prefix;
    if reduced.n_tokens() != prefix + record.post_count() {
        return Err(AtcError::ShapeMismatch(format!(
            "reduced matrix has {} rows, record expects {} + {}",
            reduced.n_tokens(),
            prefix,
            record.post_count()
        )));
    }
    let dim = reduced.dim();
    let mut data = Vec::with_capacity((prefix + record.pre_count()) * dim);
    data.extend_from_slice(&reduced.as_slice()[..prefix * dim]);
    for &label in record.assignment.labels() {
        data.extend_from_slice(reduced.row(prefix + label));
    }
    FeatureMatrix::new(data, prefix + record.pre_count(), dim)
}

/// Clusters one sequence down to `keep` unprotected tokens and merges them.
///
/// Distances are computed on `keys` (defaults to `hidden`); the merged
/// representation is the size-weighted mean of `hidden`.
pub fn reduce_sequence(
    hidden: &FeatureMatrix,
    keys: Option<&FeatureMatrix>,
    sizes: &[usize],
    protected_prefix: usize,
    kind: LinkageKind,
    engine: Engine,
    keep: usize,
) -> Result<(FeatureMatrix, Vec<usize>, MergeRecord)> {
    check_sizes(hidden, sizes)?;
    let n = hidden.n_tokens();
    let keys = keys.unwrap_or(hidden);
    if keys.n_tokens() != n {
        return Err(AtcError::ShapeMismatch(format!(
            "{} key rows for {n} hidden rows",
            keys.n_tokens()
        )));
    }
    if protected_prefix >= n {
        return Err(AtcError::ShapeMismatch(format!(
            "protected prefix {protected_prefix} leaves no tokens out of {n}"
        )));
    }
    let unprotected = n - protected_prefix;
    if keep == 0 || keep > unprotected {
        return Err(AtcError::InvalidStop(format!("keep {keep} outside 1..={unprotected}")));
    }
    if keep == unprotected {
        return Ok((
            hidden.clone(),
            sizes.to_vec(),
            MergeRecord::identity(unprotected, protected_prefix),
        ));
    }
    let metric = keys.slice_rows(protected_prefix, n)?;
    let dm = pairwise_distances(&metric)?;
    let (_, assignment) = cluster(&dm, kind, engine, StoppingRule::TargetClusters(keep))?;
    merge_tokens(hidden, sizes, &assignment)
}

/// One reduction step over a batch, with the linkage's preferred engine.
pub fn reduce_block(batch: &TokenBatch, kind: LinkageKind, keep: &[usize]) -> Result<(TokenBatch, Vec<MergeRecord>)> {
    reduce_block_with(batch, None, kind, Engine::preferred(kind), keep)
}

/// One reduction step with explicit clustering keys and engine.
pub fn reduce_block_with(
    batch: &TokenBatch,
    keys: Option<&[FeatureMatrix]>,
    kind: LinkageKind,
    engine: Engine,
    keep: &[usize],
) -> Result<(TokenBatch, Vec<MergeRecord>)> {
    if keep.len() != batch.len() {
        return Err(AtcError::ShapeMismatch(format!(
            "{} keep counts for {} sequences",
            keep.len(),
            batch.len()
        )));
    }
    if let Some(keys) = keys {
        if keys.len() != batch.len() {
            return Err(AtcError::ShapeMismatch(format!(
                "{} key matrices for {} sequences",
                keys.len(),
                batch.len()
            )));
        }
    }
    let prefix = batch.protected_prefix;
    let jobs: Vec<usize> = (0..batch.len()).collect();
    let results = crate::par_map(&jobs, |&s| {
        reduce_sequence(
            &batch.features[s],
            keys.map(|k| &k[s]),
            &batch.sizes[s],
            prefix,
            kind,
            engine,
            keep[s],
        )
    })?;
    let mut features = Vec::with_capacity(results.len());
    let mut sizes = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for (f, s, r) in results {
        features.push(f);
        sizes.push(s);
        records.push(r);
    }
    Ok((
        TokenBatch {
            features,
            sizes,
            protected_prefix: prefix,
        },
        records,
    ))
}

/// Bipartite soft matching baseline: merges exactly `t` token pairs.
///
/// Unprotected tokens alternate between set A (even positions) and set B (odd
/// positions). Each A token proposes its most similar B token; the `t`
/// strongest proposals are merged by size-weighted averaging. Similarity is
/// cosine similarity on `keys` (defaults to `seq`).
pub fn tome_bipartite_merge(
    seq: &FeatureMatrix,
    keys: Option<&FeatureMatrix>,
    sizes: &[usize],
    t: usize,
    protected_prefix: usize,
) -> Result<(FeatureMatrix, Vec<usize>, MergeRecord)> {
    check_sizes(seq, sizes)?;
    let n = seq.n_tokens();
    let keys = keys.unwrap_or(seq);
    if keys.n_tokens() != n {
        return Err(AtcError::ShapeMismatch(format!(
            "{} key rows for {n} tokens",
            keys.n_tokens()
        )));
    }
    if protected_prefix >= n {
        return Err(AtcError::ShapeMismatch(format!(
            "protected prefix {protected_prefix} leaves no tokens out of {n}"
        )));
    }
    let unprotected = n - protected_prefix;
    if t > unprotected / 2 {
        return Err(AtcError::KeepRateTooLow { t, unprotected });
    }
    if t == 0 {
        return Ok((
            seq.clone(),
            sizes.to_vec(),
            MergeRecord::identity(unprotected, protected_prefix),
        ));
    }

    let pick = |parity: usize| -> Result<FeatureMatrix> {
        let rows: Vec<&[f64]> = (parity..unprotected)
            .step_by(2)
            .map(|p| keys.row(protected_prefix + p))
            .collect();
        FeatureMatrix::from_rows(&rows)
    };
    let (set_a, set_b) = (pick(0)?, pick(1)?);
    let nb = set_b.n_tokens();
    let sim = cross_similarity(&set_a, &set_b)?;

    // Best B partner for each A node; first maximum wins.
    let mut edges: Vec<(usize, usize, f64)> = sim
        .chunks_exact(nb)
        .enumerate()
        .map(|(a, row)| {
            let (b, &s) =
                row.iter().enumerate().fold(
                    (0, &f64::NEG_INFINITY),
                    |best, cur| if *cur.1 > *best.1 { cur } else { best },
                );
            (a, b, s)
        })
        .collect();
    edges.sort_by(|x, y| y.2.total_cmp(&x.2));

    let mut target: Vec<usize> = (0..unprotected).collect();
    for &(a, b, _) in &edges[..t] {
        target[2 * a] = 2 * b + 1;
    }
    let assignment = ClusterAssignment::canonical(&target);
    merge_tokens(seq, sizes, &assignment)
}

/// Per-block token removal schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum ReductionSchedule {
    /// Remove `t` tokens at each of `depth` blocks.
    Constant { t: usize, depth: usize },
    /// Remove `floor(2t - 2tl/(depth-1))` tokens at block `l`.
    Linear { t: usize, depth: usize },
    /// Keep a fraction of the current tokens at each listed block.
    Stages { blocks: Vec<usize>, keep_rate: f64 },
}

impl ReductionSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReductionSchedule::Constant { t, depth } | ReductionSchedule::Linear { t, depth } => {
                if *t < 1 {
                    return Err(AtcError::InvalidSchedule(format!("t must be at least 1, got {t}")));
                }
                if *depth < 2 {
                    return Err(AtcError::InvalidSchedule(format!(
                        "block count must be at least 2, got {depth}"
                    )));
                }
            }
            ReductionSchedule::Stages { blocks, keep_rate } => {
                if blocks.is_empty() {
                    return Err(AtcError::InvalidSchedule("no stage blocks given".into()));
                }
                if blocks.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(AtcError::InvalidSchedule(format!(
                        "stage blocks {blocks:?} must be strictly increasing"
                    )));
                }
                if !(*keep_rate > 0.0 && *keep_rate <= 1.0) {
                    return Err(AtcError::InvalidSchedule(format!(
                        "keep rate {keep_rate} outside (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tokens removed at `block` when `current` unprotected tokens are present.
    ///
    /// `current` only matters for [`ReductionSchedule::Stages`]. The value is
    /// the raw schedule entry; [`Self::keep_count`] applies the floor of one
    /// remaining token.
    pub fn removals(&self, block: usize, current: usize) -> Result<usize> {
        match self {
            ReductionSchedule::Constant { t, depth } => {
                check_block(block, *depth)?;
                Ok(*t)
            }
            ReductionSchedule::Linear { t, depth } => {
                check_block(block, *depth)?;
                // floor(2t - 2t*l/(L-1)) without going through floats.
                let span = depth - 1;
                Ok((2 * t * span - 2 * t * block) / span)
            }
            ReductionSchedule::Stages { blocks, keep_rate } => {
                if blocks.contains(&block) {
                    Ok(current - stage_keep_count(*keep_rate, current))
                } else {
                    Ok(0)
                }
            }
        }
    }

    /// Unprotected tokens kept after `block`, never below one.
    pub fn keep_count(&self, block: usize, current: usize) -> Result<usize> {
        if current == 0 {
            return Ok(0);
        }
        let removed = self.removals(block, current)?;
        Ok(current - removed.min(current - 1))
    }

    /// Blocks this schedule is defined over, if it has a fixed depth.
    pub fn depth(&self) -> Option<usize> {
        match self {
            ReductionSchedule::Constant { depth, .. } | ReductionSchedule::Linear { depth, .. } => Some(*depth),
            ReductionSchedule::Stages { .. } => None,
        }
    }

    /// Sum of the per-block removal entries for Constant and Linear schedules.
    pub fn total_removals(&self) -> Option<usize> {
        let depth = self.depth()?;
        (0..depth).map(|l| self.removals(l, 0)).sum::<Result<usize>>().ok()
    }

    /// Reads `schedule`, `t`, `L`, `blocks` and `keep_rate` keys.
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        let kind: String = cfg.require("schedule")?;
        let sched = match kind.as_str() {
            "constant" => ReductionSchedule::Constant {
                t: cfg.require("t")?,
                depth: cfg.require("L")?,
            },
            "linear" => ReductionSchedule::Linear {
                t: cfg.require("t")?,
                depth: cfg.require("L")?,
            },
            "stages" => ReductionSchedule::Stages {
                blocks: cfg
                    .get_list("blocks")?
                    .ok_or_else(|| AtcError::Config("missing required key `blocks`".into()))?,
                keep_rate: cfg.require("keep_rate")?,
            },
            other => {
                return Err(AtcError::UnknownVariant {
                    kind: "schedule",
                    value: other.to_string(),
                })
            }
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_config(&KeyValueConfig::parse(text)?)
    }
}

impl fmt::Display for ReductionSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReductionSchedule::Constant { t, depth } => write!(f, "constant(t={t}, L={depth})"),
            ReductionSchedule::Linear { t, depth } => write!(f, "linear(t={t}, L={depth})"),
            ReductionSchedule::Stages { blocks, keep_rate } => {
                write!(f, "stages(blocks={blocks:?}, keep_rate={keep_rate})")
            }
        }
    }
}

fn check_block(block: usize, depth: usize) -> Result<()> {
    if block >= depth {
        Err(AtcError::BlockOutOfRange { block, blocks: depth })
    } else {
        Ok(())
    }
}

/// `round_half_up(keep_rate * current)`, clamped to `1..=current`.
pub fn stage_keep_count(keep_rate: f64, current: usize) -> usize {
    if current == 0 {
        return 0;
    }
    let keep = (keep_rate * current as f64 + 0.5).floor() as usize;
    keep.clamp(1, current)
}
