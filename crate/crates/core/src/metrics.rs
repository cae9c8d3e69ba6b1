//! Partition agreement scores.

use std::collections::HashMap;

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two labelings of the same items.
///
/// Returns 1.0 for identical partitions (up to relabeling). When both
/// partitions are trivial in the same way the index is defined as 1.0.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Eq + std::hash::Hash + Copy,
    B: Eq + std::hash::Hash + Copy,
{
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as u64;
    let mut table: HashMap<(A, B), u64> = HashMap::new();
    let mut rows: HashMap<A, u64> = HashMap::new();
    let mut cols: HashMap<B, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n).max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
