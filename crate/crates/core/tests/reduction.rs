#![allow(clippy::needless_range_loop)]

use atc_core::attention::{block_forward, gelu, BlockStack, BlockWeights};
use atc_core::reducer::reduce_block_with;
use atc_core::synthetic::random_features;
use atc_core::{
    merge_tokens, reduce_block, tome_bipartite_merge, unmerge, ClusterAssignment, Engine, FeatureMatrix, LinkageKind,
    ReductionSchedule, TokenBatch,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn feature_mass(f: &FeatureMatrix, sizes: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; f.dim()];
    for (row, &s) in f.rows().zip(sizes) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += s as f64 * x;
        }
    }
    out
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

#[test]
fn grouped_tokens_merge_to_group_means() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let centers = [[1.0, 0.0, 0.0, 0.2], [0.0, 1.0, 0.0, 0.2], [0.0, 0.0, 1.0, 0.2]];
    let rows: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            centers[i / 4]
                .iter()
                .map(|c| c + rng.random_range(-1e-3..1e-3))
                .collect()
        })
        .collect();
    let seq = FeatureMatrix::from_rows(&rows).unwrap();
    let batch = TokenBatch::with_unit_sizes(vec![seq], 0).unwrap();
    let (out, recs) = reduce_block(&batch, LinkageKind::Average, &[3]).unwrap();
    assert_eq!(recs[0].assignment().labels(), &[0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    for g in 0..3 {
        let mean: Vec<f64> = (0..4)
            .map(|c| rows[g * 4..g * 4 + 4].iter().map(|r| r[c]).sum::<f64>() / 4.0)
            .collect();
        for (a, b) in out.features()[0].row(g).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    assert_eq!(out.sizes()[0], vec![4, 4, 4]);
}

#[test]
fn keep_all_and_keep_one() {
    let f = random_features(10, 6, 1).unwrap();
    let batch = TokenBatch::new(vec![f.clone()], vec![vec![1, 2, 1, 3, 1, 1, 5, 1, 1, 2]], 1).unwrap();
    for kind in LinkageKind::ALL {
        let (same, _) = reduce_block(&batch, kind, &[9]).unwrap();
        assert_eq!(same.features()[0], f);

        let (one, recs) = reduce_block(&batch, kind, &[1]).unwrap();
        assert_eq!(one.features()[0].n_tokens(), 2);
        assert_eq!(one.sizes()[0], vec![1, 17]);
        assert_eq!(one.features()[0].row(0), f.row(0));
        let sizes = &batch.sizes()[0][1..];
        let tail = f.slice_rows(1, 10).unwrap();
        let mass = feature_mass(&tail, sizes);
        let mean: Vec<f64> = mass.iter().map(|m| m / 17.0).collect();
        assert!(rel_err(one.features()[0].row(1), &mean) < 1e-12);
        assert_eq!(recs[0].pre_count(), 9);
    }
}

#[test]
fn batch_reduction_is_per_sequence() {
    let seqs: Vec<FeatureMatrix> = (0..4).map(|s| random_features(12 + s, 8, s as u64).unwrap()).collect();
    let batch = TokenBatch::with_unit_sizes(seqs.clone(), 1).unwrap();
    let keep = [3, 5, 7, 2];
    let (out, recs) = reduce_block(&batch, LinkageKind::Complete, &keep).unwrap();
    for (s, seq) in seqs.iter().enumerate() {
        assert_eq!(out.features()[s].n_tokens(), keep[s] + 1);
        let single = TokenBatch::with_unit_sizes(vec![seq.clone()], 1).unwrap();
        let (alone, r) = reduce_block(&single, LinkageKind::Complete, &[keep[s]]).unwrap();
        assert_eq!(alone.features()[0], out.features()[s]);
        assert_eq!(r[0], recs[s]);
    }
}

#[test]
fn keys_drive_clustering_but_hidden_is_averaged() {
    // Keys group (0,1) and (2,3); hidden values are unrelated.
    let keys = FeatureMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.01], [0.0, 1.0], [0.01, 1.0]]).unwrap();
    let hidden = FeatureMatrix::from_rows(&[[2.0], [4.0], [10.0], [20.0]]).unwrap();
    let batch = TokenBatch::with_unit_sizes(vec![hidden], 0).unwrap();
    let (out, _) = reduce_block_with(&batch, Some(&[keys]), LinkageKind::Average, Engine::NnChain, &[2]).unwrap();
    assert_eq!(out.features()[0].as_slice(), &[3.0, 15.0]);
}

#[test]
fn tome_full_bipartite_merge_on_eight_tokens() {
    let f = random_features(8, 5, 4).unwrap();
    let (out, sizes, rec) = tome_bipartite_merge(&f, None, &[1; 8], 4, 0).unwrap();
    assert_eq!(out.n_tokens(), 4);
    assert_eq!(sizes.iter().sum::<usize>(), 8);
    // Every A token (even position) joins exactly one B token (odd position).
    for m in rec.assignment().members() {
        assert_eq!(m.iter().filter(|&&p| p % 2 == 1).count(), 1, "cluster {m:?}");
    }
}

#[test]
fn reference_block_equivalence() {
    // Plain attention block written out directly: softmax(q k^T / sqrt(dh)) v per head.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
    let (n, d, heads) = (7, 8, 2);
    let w = BlockWeights::random(d, 16, heads, 0.7, &mut rng).unwrap();
    let x = random_features(n, d, 43).unwrap();
    let out = block_forward(&x, &w, &vec![1; n], None, 0).unwrap();

    let q = x.matmul(&w.wq).unwrap();
    let k = x.matmul(&w.wk).unwrap();
    let v = x.matmul(&w.wv).unwrap();
    let dh = d / heads;
    let mut attn = vec![vec![0.0; d]; n];
    for h in 0..heads {
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| {
                    (0..dh)
                        .map(|c| q.row(i)[h * dh + c] * k.row(j)[h * dh + c])
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for j in 0..n {
                let p = logits[j].exp() / z;
                for c in 0..dh {
                    attn[i][h * dh + c] += p * v.row(j)[h * dh + c];
                }
            }
        }
    }
    let attn = FeatureMatrix::from_rows(&attn).unwrap();
    let hidden = x.add(&attn.matmul(&w.wo).unwrap()).unwrap();
    let mlp = hidden.matmul(&w.mlp_in).unwrap().map(gelu).matmul(&w.mlp_out).unwrap();
    let expected = hidden.add(&mlp).unwrap();
    for (a, b) in out.tokens.as_slice().iter().zip(expected.as_slice()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn staged_pipeline_counts_and_back_projection() {
    let stack = BlockStack::random(12, 16, 32, 4, 0.5, 1).unwrap();
    let x = random_features(197, 16, 2).unwrap();
    let sched = ReductionSchedule::Stages {
        blocks: vec![3, 6, 9],
        keep_rate: 0.25,
    };
    let run = stack
        .forward(&x, &[1; 197], 1, Some(&sched), LinkageKind::Average)
        .unwrap();
    let stage_counts: Vec<usize> = run.records.iter().map(|(_, r)| r.post_count()).collect();
    assert_eq!(stage_counts, vec![49, 12, 3]);
    assert_eq!(run.records.iter().map(|(b, _)| *b).collect::<Vec<_>>(), vec![3, 6, 9]);

    // Accounting matches the schedule at every block.
    let mut current = 196;
    for (l, &c) in run.counts.iter().enumerate() {
        current = sched.keep_count(l, current).unwrap();
        assert_eq!(c, current);
    }

    let mut back = run.tokens.clone();
    for (_, r) in run.records.iter().rev() {
        back = unmerge(&back, r).unwrap();
    }
    assert_eq!(back.n_tokens(), 197);
    let composed = run.composed_record(196, 1).unwrap();
    assert_eq!(unmerge(&run.tokens, &composed).unwrap(), back);
    assert_eq!(run.sizes.iter().sum::<usize>(), 197);
}

#[test]
fn linear_schedule_through_the_stack() {
    let stack = BlockStack::random(12, 8, 16, 2, 0.5, 5).unwrap();
    let x = random_features(197, 8, 6).unwrap();
    let sched = ReductionSchedule::Linear { t: 8, depth: 12 };
    let run = stack
        .forward(&x, &[1; 197], 1, Some(&sched), LinkageKind::Single)
        .unwrap();
    let removed = 196 - run.counts.last().unwrap();
    assert_eq!(Some(removed), sched.total_removals());
}

fn chain_strategy() -> impl Strategy<Value = (u64, usize, usize, Vec<(bool, usize)>)> {
    (
        any::<u64>(),
        6usize..40,
        1usize..10,
        proptest::collection::vec((any::<bool>(), 0usize..1000), 1..5),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_is_conserved_through_reduction_chains((seed, n, d, steps) in chain_strategy()) {
        let f = random_features(n, d, seed).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 1);
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..5)).collect();
        let total: usize = sizes.iter().sum();
        let mass0 = feature_mass(&f, &sizes);
        let mut batch = TokenBatch::new(vec![f], vec![sizes], 1).unwrap();
        for (use_tome, pick) in steps {
            let current = batch.unprotected_counts()[0];
            if current < 2 {
                break;
            }
            if use_tome {
                let t = pick % (current / 2 + 1);
                let (f, s, _) = tome_bipartite_merge(&batch.features()[0], None, &batch.sizes()[0], t, 1).unwrap();
                prop_assert_eq!(f.n_tokens(), 1 + current - t);
                batch = TokenBatch::new(vec![f], vec![s], 1).unwrap();
            } else {
                let keep = 1 + pick % current;
                let kind = LinkageKind::ALL[pick % 3];
                let (b, _) = reduce_block(&batch, kind, &[keep]).unwrap();
                prop_assert_eq!(b.features()[0].n_tokens(), keep + 1);
                batch = b;
            }
            prop_assert_eq!(batch.sizes()[0].iter().sum::<usize>(), total);
            let mass = feature_mass(&batch.features()[0], &batch.sizes()[0]);
            prop_assert!(rel_err(&mass, &mass0) < 1e-5);
        }
    }

    #[test]
    fn unmerge_then_merge_is_a_projection(seed in any::<u64>(), n in 2usize..30, k in 1usize..30) {
        let k = 1 + (k - 1) % n;
        let f = random_features(n, 4, seed).unwrap();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let raw: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let a = ClusterAssignment::canonical(&raw);
        let (merged, _, rec) = merge_tokens(&f, &vec![1; n], &a).unwrap();
        let expanded = unmerge(&merged, &rec).unwrap();
        let sizes: Vec<usize> = (0..n).map(|_| rng.random_range(1..4)).collect();
        let (again, _, _) = merge_tokens(&expanded, &sizes, &a).unwrap();
        for (x, y) in again.as_slice().iter().zip(merged.as_slice()) {
            prop_assert!((x - y).abs() < 1e-6);
        }
        for p in 0..n {
            prop_assert_eq!(expanded.row(p), merged.row(a.labels()[p]));
        }
    }

    #[test]
    fn schedule_totals(t in 1usize..64, depth in 2usize..48) {
        let c = ReductionSchedule::Constant { t, depth };
        prop_assert_eq!(c.total_removals(), Some(t * depth));
        let l = ReductionSchedule::Linear { t, depth };
        let total = l.total_removals().unwrap();
        prop_assert!(total <= t * depth && total + (depth - 1) >= t * depth);
        prop_assert_eq!(l.removals(0, 0).unwrap(), 2 * t);
        prop_assert_eq!(l.removals(depth - 1, 0).unwrap(), 0);
    }
}
