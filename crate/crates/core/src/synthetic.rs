//! Seeded synthetic token features for tests and benchmarks.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{AtcError, Result};
use crate::geometry::FeatureMatrix;

fn normal(rng: &mut Xoshiro256PlusPlus) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// `n x dim` standard-normal features.
pub fn random_features(n: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| normal(&mut rng)).collect();
    FeatureMatrix::new(data, n, dim)
}

/// Points drawn around `groups` random unit-sphere centers.
///
/// The noise standard deviation is the smallest center-to-center distance
/// divided by `separation`, so centers are at least `separation` sigmas
/// apart. Points are interleaved (point `i` belongs to group `i % groups`).
/// Returns the features and the generating labels.
pub fn separated_groups(
    groups: usize,
    per_group: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if groups < 1 || per_group < 1 || separation.is_nan() || separation <= 0.0 {
        return Err(AtcError::Config(format!(
            "invalid group spec: {groups} groups of {per_group}, separation {separation}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..groups)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut min_dist = f64::INFINITY;
    for i in 0..groups {
        for j in i + 1..groups {
            let d = centers[i]
                .iter()
                .zip(&centers[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    let sigma = if min_dist.is_finite() {
        min_dist / separation
    } else {
        1.0 / separation
    };
    let n = groups * per_group;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let g = i % groups;
        labels.push(g);
        data.extend(centers[g].iter().map(|c| c + sigma * normal(&mut rng)));
    }
    Ok((FeatureMatrix::new(data, n, dim)?, labels))
}
