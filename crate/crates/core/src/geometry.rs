//! Cosine-distance geometry over token feature vectors.
//!
//! Distances are `1 - cos(a, b)`, clamped to `[0, 2]`. Pairwise distances are
//! stored in condensed (strict upper triangle, row-major) form.

use crate::error::{AtcError, Result};

/// Norms below this are treated as degenerate token features.
pub const DEFAULT_NORM_FLOOR: f64 = 1e-12;

/// Dense row-major `n_tokens x dim` matrix of token features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_tokens: usize,
    dim: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_tokens: usize, dim: usize) -> Result<Self> {
        if n_tokens == 0 || dim == 0 {
            return Err(AtcError::InvalidMatrix(format!(
                "shape {n_tokens}x{dim} must be non-empty"
            )));
        }
        if data.len() != n_tokens * dim {
            return Err(AtcError::DimensionMismatch {
                expected: n_tokens * dim,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(AtcError::InvalidMatrix(format!(
                "non-finite entry at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { data, n_tokens, dim })
    }

    pub fn zeros(n_tokens: usize, dim: usize) -> Self {
        assert!(n_tokens > 0 && dim > 0, "empty feature matrix");
        Self {
            data: vec![0.0; n_tokens * dim],
            n_tokens,
            dim,
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(AtcError::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), dim)
    }

    #[inline]
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copies rows `start..end` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_tokens {
            return Err(AtcError::ShapeMismatch(format!(
                "row range {start}..{end} invalid for {} rows",
                self.n_tokens
            )));
        }
        Ok(Self {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            n_tokens: end - start,
            dim: self.dim,
        })
    }

    /// `self * rhs` for a row-major `rhs` of shape `dim x cols`.
    pub fn matmul(&self, rhs: &FeatureMatrix) -> Result<FeatureMatrix> {
        if rhs.n_tokens != self.dim {
            return Err(AtcError::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.n_tokens, self.dim, rhs.n_tokens, rhs.dim
            )));
        }
        let cols = rhs.dim;
        let mut out = vec![0.0; self.n_tokens * cols];
        for (x, o) in self.rows().zip(out.chunks_exact_mut(cols)) {
            for (&a, r) in x.iter().zip(rhs.rows()) {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in o.iter_mut().zip(r) {
                    *o += a * b;
                }
            }
        }
        Ok(FeatureMatrix {
            data: out,
            n_tokens: self.n_tokens,
            dim: cols,
        })
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.n_tokens != other.n_tokens || self.dim != other.dim {
            return Err(AtcError::ShapeMismatch(format!(
                "cannot add {}x{} and {}x{}",
                self.n_tokens, self.dim, other.n_tokens, other.dim
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(FeatureMatrix {
            data,
            n_tokens: self.n_tokens,
            dim: self.dim,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.iter().map(|&v| f(v)).collect(),
            n_tokens: self.n_tokens,
            dim: self.dim,
        }
    }

    /// Stacks `top` above `bottom`.
    pub fn vstack(top: &FeatureMatrix, bottom: &FeatureMatrix) -> Result<FeatureMatrix> {
        if top.dim != bottom.dim {
            return Err(AtcError::DimensionMismatch {
                expected: top.dim,
                actual: bottom.dim,
            });
        }
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Ok(FeatureMatrix {
            data,
            n_tokens: top.n_tokens + bottom.n_tokens,
            dim: top.dim,
        })
    }
}

/// Strict upper triangle of a symmetric `n x n` distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedDistanceMatrix {
    values: Vec<f64>,
    n: usize,
}

impl CondensedDistanceMatrix {
    /// Wraps precomputed condensed distances. Values must be finite and in `[0, 2]`.
    pub fn new(values: Vec<f64>, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(AtcError::InvalidMatrix("need at least one point".into()));
        }
        let expected = n * (n - 1) / 2;
        if values.len() != expected {
            return Err(AtcError::DimensionMismatch {
                expected,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || !(0.0..=2.0).contains(v)) {
            return Err(AtcError::InvalidMatrix(format!(
                "distance {} at offset {pos} outside [0, 2]",
                values[pos]
            )));
        }
        Ok(Self { values, n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Offset of pair `(i, j)`, `i < j < n`.
    #[inline]
    pub fn offset(n: usize, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < n);
        i * n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Distance between `i` and `j`; zero on the diagonal.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.values[Self::offset(self.n, i, j)],
            std::cmp::Ordering::Greater => self.values[Self::offset(self.n, j, i)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }

    /// Expands into a dense symmetric `n x n` row-major matrix.
    pub fn to_square(&self) -> Vec<f64> {
        self.to_square_strided(self.n)
    }

    /// Square form with rows `stride` apart; padding entries are zero.
    pub(crate) fn to_square_strided(&self, stride: usize) -> Vec<f64> {
        const TILE: usize = 32;
        let n = self.n;
        debug_assert!(stride >= n);
        let mut out = vec![0.0; n * stride];
        let mut k = 0;
        for i in 0..n {
            let len = n - i - 1;
            out[i * stride + i + 1..i * stride + n].copy_from_slice(&self.values[k..k + len]);
            k += len;
        }
        for bi in (0..n).step_by(TILE) {
            for bj in (0..=bi).step_by(TILE) {
                for i in bi..(bi + TILE).min(n) {
                    for j in bj..(bj + TILE).min(i) {
                        out[i * stride + j] = out[j * stride + i];
                    }
                }
            }
        }
        out
    }
}

#[inline]
fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// `a.b / sqrt(|a|^2 |b|^2)`; exactly 1 when `a == b`.
#[inline]
fn cosine(dot: f64, sq_a: f64, sq_b: f64) -> f64 {
    dot / (sq_a * sq_b).sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn distance_from_cosine(cos: f64) -> f64 {
    (1.0 - cos).clamp(0.0, 2.0)
}

/// Cosine distance `1 - a.b / (|a||b|)` with the default norm floor.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_distance_with_floor(a, b, DEFAULT_NORM_FLOOR)
}

pub fn cosine_distance_with_floor(a: &[f64], b: &[f64], floor: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(AtcError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(AtcError::InvalidMatrix("empty vectors".into()));
    }
    let (sa, sb) = (squared_norm(a), squared_norm(b));
    for (row, sq) in [(0, sa), (1, sb)] {
        if sq.sqrt() < floor {
            return Err(AtcError::ZeroNormVector {
                row,
                norm: sq.sqrt(),
                floor,
            });
        }
    }
    Ok(distance_from_cosine(cosine(dot(a, b), sa, sb)))
}

/// Per-row squared Euclidean norms, rejecting rows whose norm is below `floor`.
pub fn row_squared_norms(features: &FeatureMatrix, floor: f64) -> Result<Vec<f64>> {
    features
        .rows()
        .enumerate()
        .map(|(row, r)| {
            let sq = squared_norm(r);
            if sq.sqrt() < floor {
                Err(AtcError::ZeroNormVector {
                    row,
                    norm: sq.sqrt(),
                    floor,
                })
            } else {
                Ok(sq)
            }
        })
        .collect()
}

/// All pairwise cosine distances in condensed form.
///
/// Each entry is computed exactly as [`cosine_distance`] would compute it on
/// the two rows.
pub fn pairwise_distances(features: &FeatureMatrix) -> Result<CondensedDistanceMatrix> {
    let n = features.n_tokens();
    if n < 2 {
        return Err(AtcError::InvalidMatrix(format!(
            "need at least 2 tokens for pairwise distances, got {n}"
        )));
    }
    let sq = row_squared_norms(features, DEFAULT_NORM_FLOOR)?;
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let a = features.row(i);
        for j in i + 1..n {
            let cos = cosine(dot(a, features.row(j)), sq[i], sq[j]);
            values.push(distance_from_cosine(cos));
        }
    }
    Ok(CondensedDistanceMatrix { values, n })
}

/// Cosine similarity between every row of `a` and every row of `b`, row-major `a.n x b.n`.
pub(crate) fn cross_similarity(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<Vec<f64>> {
    let sa = row_squared_norms(a, DEFAULT_NORM_FLOOR)?;
    let sb = row_squared_norms(b, DEFAULT_NORM_FLOOR)?;
    let mut out = Vec::with_capacity(a.n_tokens() * b.n_tokens());
    for (ra, &la) in a.rows().zip(&sa) {
        for (rb, &lb) in b.rows().zip(&sb) {
            out.push(cosine(dot(ra, rb), la, lb));
        }
    }
    Ok(out)
}
