//! A minimal transformer block with proportional attention, used to show
//! where token merging sits: after self-attention, before the MLP.
//!
//! Layer normalization is left out; it does not interact with the reduction.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::clusterer::Engine;
use crate::error::{AtcError, Result};
use crate::geometry::FeatureMatrix;
use crate::linkage::LinkageKind;
use crate::reducer::{reduce_sequence, MergeRecord, ReductionSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub wq: FeatureMatrix,
    pub wk: FeatureMatrix,
    pub wv: FeatureMatrix,
    pub wo: FeatureMatrix,
    pub mlp_in: FeatureMatrix,
    pub mlp_out: FeatureMatrix,
    pub heads: usize,
}

impl BlockWeights {
    pub fn new(
        wq: FeatureMatrix,
        wk: FeatureMatrix,
        wv: FeatureMatrix,
        wo: FeatureMatrix,
        mlp_in: FeatureMatrix,
        mlp_out: FeatureMatrix,
        heads: usize,
    ) -> Result<Self> {
        let d = wq.n_tokens();
        for (name, m) in [("wq", &wq), ("wk", &wk), ("wv", &wv), ("wo", &wo)] {
            if m.n_tokens() != d || m.dim() != d {
                return Err(AtcError::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {d}x{d}",
                    m.n_tokens(),
                    m.dim()
                )));
            }
        }
        let h = mlp_in.dim();
        if mlp_in.n_tokens() != d || mlp_out.n_tokens() != h || mlp_out.dim() != d {
            return Err(AtcError::ShapeMismatch(format!(
                "MLP weights {}x{} and {}x{} do not fit width {d}",
                mlp_in.n_tokens(),
                mlp_in.dim(),
                mlp_out.n_tokens(),
                mlp_out.dim()
            )));
        }
        check_heads(d, heads)?;
        Ok(Self {
            wq,
            wk,
            wv,
            wo,
            mlp_in,
            mlp_out,
            heads,
        })
    }

    pub fn zeros(dim: usize, hidden: usize, heads: usize) -> Result<Self> {
        let sq = || FeatureMatrix::zeros(dim, dim);
        Self::new(
            sq(),
            sq(),
            sq(),
            sq(),
            FeatureMatrix::zeros(dim, hidden),
            FeatureMatrix::zeros(hidden, dim),
            heads,
        )
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, scaled by
    /// `gain` for the output projections.
    pub fn random<R: Rng>(dim: usize, hidden: usize, heads: usize, gain: f64, rng: &mut R) -> Result<Self> {
        let mut mat = |rows: usize, cols: usize, scale: f64| {
            let std = scale / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect();
            FeatureMatrix::new(data, rows, cols)
        };
        let wq = mat(dim, dim, 1.0)?;
        let wk = mat(dim, dim, 1.0)?;
        let wv = mat(dim, dim, 1.0)?;
        let wo = mat(dim, dim, gain)?;
        let mlp_in = mat(dim, hidden, 1.0)?;
        let mlp_out = mat(hidden, dim, gain)?;
        Self::new(wq, wk, wv, wo, mlp_in, mlp_out, heads)
    }

    pub fn dim(&self) -> usize {
        self.wq.n_tokens()
    }
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || !dim.is_multiple_of(heads) {
        return Err(AtcError::ShapeMismatch(format!(
            "{heads} heads do not divide width {dim}"
        )));
    }
    Ok(())
}

fn check_sizes(sizes: &[usize], n: usize) -> Result<()> {
    if sizes.len() != n {
        return Err(AtcError::ShapeMismatch(format!("{} sizes for {n} tokens", sizes.len())));
    }
    match sizes.iter().position(|&s| s == 0) {
        Some(p) => Err(AtcError::NonPositiveSize(p)),
        None => Ok(()),
    }
}

/// Softmax attention weights per head, `log(size_j)` added to key column `j`.
///
/// Returns one row-major `n x n` matrix per head.
pub fn attention_weights(q: &FeatureMatrix, k: &FeatureMatrix, sizes: &[usize], heads: usize) -> Result<Vec<Vec<f64>>> {
    let n = q.n_tokens();
    let d = q.dim();
    if k.n_tokens() != n || k.dim() != d {
        return Err(AtcError::ShapeMismatch("query and key shapes differ".into()));
    }
    check_heads(d, heads)?;
    check_sizes(sizes, n)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let log_size: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();

    let mut out = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            let row = &mut w[i * n..(i + 1) * n];
            for (j, slot) in row.iter_mut().enumerate() {
                let kj = &k.row(j)[cols.clone()];
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                *slot = dot * scale + log_size[j];
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        out.push(w);
    }
    Ok(out)
}

/// Multi-head attention where each key is weighted by the number of patches
/// its token represents. With unit sizes this is plain softmax attention.
pub fn proportional_attention(
    q: &FeatureMatrix,
    k: &FeatureMatrix,
    v: &FeatureMatrix,
    sizes: &[usize],
    heads: usize,
) -> Result<FeatureMatrix> {
    let n = q.n_tokens();
    let d = q.dim();
    if v.n_tokens() != n || v.dim() != d {
        return Err(AtcError::ShapeMismatch("value shape differs from query".into()));
    }
    let weights = attention_weights(q, k, sizes, heads)?;
    let dh = d / heads;
    let mut out = FeatureMatrix::zeros(n, d);
    for (h, w) in weights.iter().enumerate() {
        for i in 0..n {
            let dst = &mut out.row_mut(i)[h * dh..(h + 1) * dh];
            for j in 0..n {
                let a = w[i * n + j];
                for (o, &x) in dst.iter_mut().zip(&v.row(j)[h * dh..(h + 1) * dh]) {
                    *o += a * x;
                }
            }
        }
    }
    Ok(out)
}

/// Averages per-head key slices: `n x d` becomes `n x d/heads`.
pub fn mean_pool_heads(keys: &FeatureMatrix, heads: usize) -> Result<FeatureMatrix> {
    check_heads(keys.dim(), heads)?;
    let dh = keys.dim() / heads;
    let mut data = Vec::with_capacity(keys.n_tokens() * dh);
    for row in keys.rows() {
        for c in 0..dh {
            let s: f64 = (0..heads).map(|h| row[h * dh + c]).sum();
            data.push(s / heads as f64);
        }
    }
    FeatureMatrix::new(data, keys.n_tokens(), dh)
}

/// Exact (erf-based) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// Residual stream after attention, `x + attn(x) wo`.
    pub hidden: FeatureMatrix,
    /// Keys mean-pooled over heads; the clustering features.
    pub keys: FeatureMatrix,
}

pub fn attention_forward(x: &FeatureMatrix, w: &BlockWeights, sizes: &[usize]) -> Result<AttentionOutput> {
    let q = x.matmul(&w.wq)?;
    let k = x.matmul(&w.wk)?;
    let v = x.matmul(&w.wv)?;
    let attn = proportional_attention(&q, &k, &v, sizes, w.heads)?;
    let hidden = x.add(&attn.matmul(&w.wo)?)?;
    let keys = mean_pool_heads(&k, w.heads)?;
    Ok(AttentionOutput { hidden, keys })
}

/// Reduction applied inside a block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockReduction {
    pub kind: LinkageKind,
    pub engine: Engine,
    /// Unprotected tokens to keep.
    pub keep: usize,
}

impl BlockReduction {
    pub fn new(kind: LinkageKind, keep: usize) -> Self {
        Self {
            kind,
            engine: Engine::preferred(kind),
            keep,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub tokens: FeatureMatrix,
    pub sizes: Vec<usize>,
    pub record: Option<MergeRecord>,
}

/// Attention, optional token merging, then `x + MLP(x)`.
pub fn block_forward(
    x: &FeatureMatrix,
    w: &BlockWeights,
    sizes: &[usize],
    reduce: Option<BlockReduction>,
    protected_prefix: usize,
) -> Result<BlockOutput> {
    if x.dim() != w.dim() {
        return Err(AtcError::DimensionMismatch {
            expected: w.dim(),
            actual: x.dim(),
        });
    }
    let AttentionOutput { hidden, keys } = attention_forward(x, w, sizes)?;
    let (hidden, sizes, record) = match reduce {
        Some(r) => {
            let (h, s, rec) = reduce_sequence(&hidden, Some(&keys), sizes, protected_prefix, r.kind, r.engine, r.keep)?;
            (h, s, Some(rec))
        }
        None => (hidden, sizes.to_vec(), None),
    };
    let mlp = hidden.matmul(&w.mlp_in)?.map(gelu).matmul(&w.mlp_out)?;
    Ok(BlockOutput {
        tokens: hidden.add(&mlp)?,
        sizes,
        record,
    })
}

/// A stack of blocks driven by a [`ReductionSchedule`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStack {
    blocks: Vec<BlockWeights>,
}

/// Result of running a [`BlockStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct StackRun {
    pub tokens: FeatureMatrix,
    pub sizes: Vec<usize>,
    /// `(block, record)` for every block that removed tokens.
    pub records: Vec<(usize, MergeRecord)>,
    /// Unprotected token count after each block.
    pub counts: Vec<usize>,
}

impl StackRun {
    /// Record mapping the input tokens to the final ones.
    pub fn composed_record(&self, n_unprotected: usize, protected_prefix: usize) -> Result<MergeRecord> {
        self.records
            .iter()
            .try_fold(MergeRecord::identity(n_unprotected, protected_prefix), |acc, (_, r)| {
                acc.then(r)
            })
    }
}

impl BlockStack {
    pub fn new(blocks: Vec<BlockWeights>) -> Result<Self> {
        if let Some(first) = blocks.first() {
            if blocks.iter().any(|b| b.dim() != first.dim()) {
                return Err(AtcError::ShapeMismatch("blocks disagree on width".into()));
            }
        }
        Ok(Self { blocks })
    }

    /// `depth` blocks with weights drawn from a xoshiro256++ stream seeded by `seed`.
    pub fn random(depth: usize, dim: usize, hidden: usize, heads: usize, gain: f64, seed: u64) -> Result<Self> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let blocks = (0..depth)
            .map(|_| BlockWeights::random(dim, hidden, heads, gain, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(blocks)
    }

    pub fn blocks(&self) -> &[BlockWeights] {
        &self.blocks
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward(
        &self,
        x: &FeatureMatrix,
        sizes: &[usize],
        protected_prefix: usize,
        schedule: Option<&ReductionSchedule>,
        kind: LinkageKind,
    ) -> Result<StackRun> {
        if let Some(s) = schedule {
            s.validate()?;
            if let Some(depth) = s.depth() {
                if depth != self.depth() {
                    return Err(AtcError::InvalidSchedule(format!(
                        "schedule covers {depth} blocks, stack has {}",
                        self.depth()
                    )));
                }
            }
        }
        let mut tokens = x.clone();
        let mut sizes = sizes.to_vec();
        let mut records = Vec::new();
        let mut counts = Vec::with_capacity(self.depth());
        for (l, w) in self.blocks.iter().enumerate() {
            let current = tokens.n_tokens() - protected_prefix.min(tokens.n_tokens());
            let reduce = match schedule {
                Some(s) => {
                    let keep = s.keep_count(l, current)?;
                    (keep < current).then(|| BlockReduction::new(kind, keep))
                }
                None => None,
            };
            let out = block_forward(&tokens, w, &sizes, reduce, protected_prefix)?;
            if let Some(r) = out.record {
                records.push((l, r));
            }
            tokens = out.tokens;
            sizes = out.sizes;
            counts.push(tokens.n_tokens() - protected_prefix);
        }
        Ok(StackRun {
            tokens,
            sizes,
            records,
            counts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMatrix::new(data, n, d).unwrap()
    }

    #[test]
    fn equal_logits_follow_sizes() {
        let q = FeatureMatrix::zeros(2, 4);
        let w = attention_weights(&q, &q, &[1, 3], 2).unwrap();
        for head in &w {
            for i in 0..2 {
                assert!((head[i * 2] - 0.25).abs() < 1e-15);
                assert!((head[i * 2 + 1] - 0.75).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn doubling_sizes_keeps_weights() {
        let q = random_matrix(6, 8, 1);
        let k = random_matrix(6, 8, 2);
        let sizes = [1, 2, 5, 1, 3, 7];
        let doubled: Vec<usize> = sizes.iter().map(|s| s * 2).collect();
        let a = attention_weights(&q, &k, &sizes, 4).unwrap();
        let b = attention_weights(&q, &k, &doubled, 4).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let q = random_matrix(5, 6, 3);
        let k = random_matrix(5, 6, 4);
        for head in attention_weights(&q, &k, &[1, 4, 2, 1, 9], 3).unwrap() {
            for row in head.chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_validation() {
        let q = FeatureMatrix::zeros(2, 4);
        assert_eq!(
            proportional_attention(&q, &q, &q, &[1, 0], 2).unwrap_err(),
            AtcError::NonPositiveSize(1)
        );
        assert!(proportional_attention(&q, &q, &q, &[1, 1], 3).is_err());
        assert!(proportional_attention(&q, &q, &q, &[1], 2).is_err());
        assert!(BlockWeights::zeros(6, 4, 4).is_err());
    }

    #[test]
    fn mean_pool_shape() {
        let k = FeatureMatrix::from_rows(&[[1.0, 2.0, 3.0, 4.0]]).unwrap();
        let p = mean_pool_heads(&k, 2).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 3.0]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // 0.5 * (1 + erf(1/sqrt 2)) = Phi(1) = 0.841344746...
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-12);
        assert!((gelu(-1.0) + 0.15865525393145707).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_pass_through() {
        let w = BlockWeights::zeros(8, 16, 2).unwrap();
        let x = random_matrix(5, 8, 9);
        let out = block_forward(&x, &w, &[1; 5], None, 0).unwrap();
        assert_eq!(out.tokens, x);
        assert!(out.record.is_none());
    }

    #[test]
    fn reduction_changes_count_only_when_asked() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let w = BlockWeights::random(8, 16, 2, 0.5, &mut rng).unwrap();
        let x = random_matrix(9, 8, 12);
        let out = block_forward(&x, &w, &[1; 9], None, 1).unwrap();
        assert_eq!(out.tokens.n_tokens(), 9);
        let out = block_forward(&x, &w, &[1; 9], Some(BlockReduction::new(LinkageKind::Average, 3)), 1).unwrap();
        assert_eq!(out.tokens.n_tokens(), 4);
        assert_eq!(out.sizes.iter().sum::<usize>(), 9);
        assert_eq!(out.record.unwrap().pre_count(), 8);
    }

    #[test]
    fn schedule_depth_must_match_stack() {
        let stack = BlockStack::random(3, 4, 8, 2, 0.5, 0).unwrap();
        let x = random_matrix(10, 4, 1);
        let sched = ReductionSchedule::Constant { t: 1, depth: 12 };
        assert!(stack
            .forward(&x, &[1; 10], 1, Some(&sched), LinkageKind::Average)
            .is_err());
        let sched = ReductionSchedule::Constant { t: 2, depth: 3 };
        let run = stack
            .forward(&x, &[1; 10], 1, Some(&sched), LinkageKind::Average)
            .unwrap();
        assert_eq!(run.counts, vec![7, 5, 3]);
    }
}
