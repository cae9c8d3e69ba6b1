//! Cross-checks between the clustering engines and a brute-force oracle that
//! recomputes every inter-cluster distance from member pairs.

use atc_core::clusterer::{mst_single_linkage, nn_chain_linkage};
use atc_core::metrics::adjusted_rand_index;
use atc_core::synthetic::{random_features, separated_groups};
use atc_core::{
    cluster, cluster_mst_single, cluster_naive, cluster_nn_chain, cut_dendrogram, pairwise_distances,
    CondensedDistanceMatrix, Engine, LinkageKind, StoppingRule,
};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Greedy agglomeration with distances recomputed from scratch every step.
fn brute_force_partition(dm: &CondensedDistanceMatrix, kind: LinkageKind, k: usize) -> Vec<usize> {
    let n = dm.n();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let linkage = |a: &[usize], b: &[usize]| {
        let ds: Vec<f64> = a.iter().flat_map(|&i| b.iter().map(move |&j| dm.get(i, j))).collect();
        match kind {
            LinkageKind::Single => ds.iter().copied().fold(f64::INFINITY, f64::min),
            LinkageKind::Complete => ds.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            LinkageKind::Average => ds.iter().sum::<f64>() / ds.len() as f64,
        }
    };
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = linkage(&clusters[a], &clusters[b]);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        let moved = clusters.remove(best.2);
        clusters[best.1].extend(moved);
    }
    let mut labels = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            labels[m] = c;
        }
    }
    atc_core::ClusterAssignment::canonical(&labels).labels().to_vec()
}

fn random_dm(rng: &mut Xoshiro256PlusPlus) -> CondensedDistanceMatrix {
    let n = rng.random_range(4..=24);
    let d = rng.random_range(2..=12);
    let f = random_features(n, d, rng.random()).unwrap();
    pairwise_distances(&f).unwrap()
}

#[test]
fn naive_matches_brute_force() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(2024);
    for _ in 0..60 {
        let dm = random_dm(&mut rng);
        for kind in LinkageKind::ALL {
            for k in 1..=dm.n() {
                let (_, a) = cluster_naive(&dm, kind, StoppingRule::TargetClusters(k)).unwrap();
                assert_eq!(
                    a.labels(),
                    brute_force_partition(&dm, kind, k).as_slice(),
                    "{kind} k={k}"
                );
            }
        }
    }
}

#[test]
fn naive_stopped_early_is_a_prefix_of_the_full_run() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    for _ in 0..30 {
        let dm = random_dm(&mut rng);
        for kind in LinkageKind::ALL {
            let (full, _) = cluster_naive(&dm, kind, StoppingRule::TargetClusters(1)).unwrap();
            for k in 1..=dm.n() {
                let (part, a) = cluster_naive(&dm, kind, StoppingRule::TargetClusters(k)).unwrap();
                assert_eq!(part.merges(), &full.merges()[..dm.n() - k]);
                assert_eq!(&a, &cut_dendrogram(&full, StoppingRule::TargetClusters(k)).unwrap());
            }
        }
    }
}

#[test]
fn fast_engines_match_naive() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(77);
    for _ in 0..150 {
        let dm = random_dm(&mut rng);
        for kind in LinkageKind::ALL {
            let (naive, _) = cluster_naive(&dm, kind, StoppingRule::TargetClusters(1)).unwrap();
            let chain = nn_chain_linkage(&dm, kind);
            for k in 1..=dm.n() {
                let stop = StoppingRule::TargetClusters(k);
                assert_eq!(
                    cut_dendrogram(&chain, stop).unwrap(),
                    cut_dendrogram(&naive, stop).unwrap()
                );
            }
            if kind == LinkageKind::Single {
                let mst = mst_single_linkage(&dm);
                for k in 1..=dm.n() {
                    let stop = StoppingRule::TargetClusters(k);
                    assert_eq!(
                        cut_dendrogram(&mst, stop).unwrap(),
                        cut_dendrogram(&naive, stop).unwrap()
                    );
                }
                // Single-linkage heights are MST edge weights in both engines.
                let a: Vec<f64> = mst.heights().collect();
                let b: Vec<f64> = naive.heights().collect();
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn threshold_cuts_agree_between_engines() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(31);
    for _ in 0..50 {
        let dm = random_dm(&mut rng);
        let h = rng.random_range(0.0..1.5);
        let stop = StoppingRule::DistanceThreshold(h);
        for kind in LinkageKind::ALL {
            let (_, naive) = cluster_naive(&dm, kind, stop).unwrap();
            let (_, chain) = cluster_nn_chain(&dm, kind, stop).unwrap();
            assert_eq!(naive, chain);
        }
        let (_, naive) = cluster_naive(&dm, LinkageKind::Single, stop).unwrap();
        let (_, mst) = cluster_mst_single(&dm, stop).unwrap();
        assert_eq!(naive, mst);
    }
}

#[test]
fn dendrogram_structure() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    for _ in 0..40 {
        let dm = random_dm(&mut rng);
        let n = dm.n();
        for kind in LinkageKind::ALL {
            for engine in Engine::ALL.into_iter().filter(|e| e.supports(kind)) {
                let (d, _) = cluster(&dm, kind, engine, StoppingRule::TargetClusters(1)).unwrap();
                assert!(d.is_complete());
                let mut used = vec![false; 2 * n - 1];
                let mut sizes = vec![1usize; 2 * n - 1];
                for (k, m) in d.merges().iter().enumerate() {
                    assert!(m.left < n + k && m.right < n + k);
                    assert!(!used[m.left] && !used[m.right], "cluster merged twice");
                    used[m.left] = true;
                    used[m.right] = true;
                    assert_eq!(m.size, sizes[m.left] + sizes[m.right]);
                    sizes[n + k] = m.size;
                }
                assert_eq!(d.merges().last().unwrap().size, n);
                assert!(d.merges().windows(2).all(|w| w[0].height <= w[1].height));
            }
        }
    }
}

#[test]
fn exact_ties_are_deterministic() {
    // Duplicate rows produce many exact zero distances.
    let rows: Vec<[f64; 3]> = (0..12).map(|i| [1.0 + (i % 3) as f64, 1.0, (i % 2) as f64]).collect();
    let f = atc_core::FeatureMatrix::from_rows(&rows).unwrap();
    let dm = pairwise_distances(&f).unwrap();
    for kind in LinkageKind::ALL {
        for engine in Engine::ALL.into_iter().filter(|e| e.supports(kind)) {
            let a = cluster(&dm, kind, engine, StoppingRule::TargetClusters(3)).unwrap();
            let b = cluster(&dm, kind, engine, StoppingRule::TargetClusters(3)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.1.k(), 3);
        }
    }
}

#[test]
fn separated_groups_are_recovered() {
    for seed in 0..10 {
        let (f, truth) = separated_groups(3, 20, 16, 10.0, seed).unwrap();
        let dm = pairwise_distances(&f).unwrap();
        let (_, a) = cluster_nn_chain(&dm, LinkageKind::Average, StoppingRule::TargetClusters(3)).unwrap();
        assert_eq!(adjusted_rand_index(a.labels(), &truth), 1.0, "seed {seed}");
    }
}
