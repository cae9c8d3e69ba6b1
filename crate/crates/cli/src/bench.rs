//! Throughput benchmarks for the clustering engines.
//!
//! Each configuration runs `repeats` timed iterations over a seeded batch;
//! the leading `warmup` fraction is discarded before computing statistics.
//! An iteration clusters every sequence of the batch (distance matrix plus
//! engine) down to the configured keep rate.

use std::io::Write;
use std::time::Instant;

use atc_core::reducer::stage_keep_count;
use atc_core::synthetic::random_features;
use atc_core::{cluster_features, Engine, FeatureMatrix, LinkageKind, StoppingRule};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};

/// Token counts of 224 to 1024 pixel inputs with 16x16 patches.
pub const DEFAULT_TOKEN_GRID: [usize; 5] = [196, 256, 576, 1024, 4096];

/// CSV column order.
pub const CSV_HEADER: &str =
    "engine,linkage,n_tokens,batch,repeats,mean_ms,p50_ms,p95_ms,throughput_items_per_s,threads";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub batch_list: Vec<usize>,
    pub engines: Vec<Engine>,
    pub linkages: Vec<LinkageKind>,
    pub repeats: usize,
    pub warmup_fraction: f64,
    pub keep_rate: f64,
    pub dim: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_list: DEFAULT_TOKEN_GRID.to_vec(),
            batch_list: vec![1],
            engines: vec![Engine::NnChain],
            linkages: vec![LinkageKind::Average],
            repeats: 20,
            warmup_fraction: 0.25,
            keep_rate: 0.5,
            dim: 64,
            seed: 0,
            threads: 1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Invalid(m));
        if self.n_list.is_empty() || self.batch_list.is_empty() || self.engines.is_empty() || self.linkages.is_empty() {
            return bad("n, batch, engine and linkage lists must be non-empty".into());
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < 2) {
            return bad(format!("token count {n} is below 2"));
        }
        if self.batch_list.contains(&0) {
            return bad("batch sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup fraction {} outside [0, 1)", self.warmup_fraction));
        }
        if self.measured_iterations() == 0 {
            return bad(format!(
                "{} repeats leave no measured iterations after {} warmup",
                self.repeats,
                self.warmup_iterations()
            ));
        }
        if !(self.keep_rate > 0.0 && self.keep_rate <= 1.0) {
            return bad(format!("keep rate {} outside (0, 1]", self.keep_rate));
        }
        if self.dim == 0 || self.threads == 0 {
            return bad("dim and threads must be positive".into());
        }
        if self.pairs().next().is_none() {
            return bad("no engine supports any requested linkage".into());
        }
        Ok(())
    }

    pub fn warmup_iterations(&self) -> usize {
        (self.repeats as f64 * self.warmup_fraction).floor() as usize
    }

    pub fn measured_iterations(&self) -> usize {
        self.repeats.saturating_sub(self.warmup_iterations())
    }

    /// Engine/linkage combinations that are actually run (`mst` is single-only).
    pub fn pairs(&self) -> impl Iterator<Item = (Engine, LinkageKind)> + '_ {
        self.engines
            .iter()
            .flat_map(move |&e| self.linkages.iter().map(move |&k| (e, k)))
            .filter(|(e, k)| e.supports(*k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub engine: String,
    pub linkage: String,
    pub n_tokens: usize,
    pub batch: usize,
    pub repeats: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub throughput_items_per_s: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn find(&self, engine: Engine, linkage: LinkageKind, n: usize, batch: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| {
            r.engine == engine.as_str() && r.linkage == linkage.as_str() && r.n_tokens == n && r.batch == batch
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            w.write_record(CSV_HEADER.split(','))
                .map_err(|e| CliError::Internal(e.to_string()))?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(|e| CliError::Internal(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io("writing CSV", e))
    }
}

/// Nearest-rank percentile of sorted samples.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Seeded inputs for one `(n, batch)` cell, shared by every engine.
pub fn bench_inputs(n: usize, batch: usize, dim: usize, seed: u64) -> Result<Vec<FeatureMatrix>> {
    (0..batch)
        .map(|b| {
            let s = seed
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((n as u64) << 32)
                .wrapping_add(b as u64);
            random_features(n, dim, s).map_err(CliError::from)
        })
        .collect()
}

fn run_once(
    inputs: &[FeatureMatrix],
    kind: LinkageKind,
    engine: Engine,
    keep: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<()> {
    let stop = StoppingRule::TargetClusters(keep);
    let check = |f: &FeatureMatrix| -> Result<()> {
        let (_, a) = cluster_features(f, kind, engine, stop)?;
        if a.k() != keep {
            return Err(CliError::Internal(format!("expected {keep} clusters, got {}", a.k())));
        }
        Ok(())
    };
    match pool {
        Some(pool) => pool.install(|| inputs.par_iter().try_for_each(check)),
        None => inputs.iter().try_for_each(check),
    }
}

/// Times one `(engine, linkage, n, batch)` cell.
pub fn bench_cell(cfg: &BenchConfig, engine: Engine, kind: LinkageKind, n: usize, batch: usize) -> Result<BenchRow> {
    let inputs = bench_inputs(n, batch, cfg.dim, cfg.seed)?;
    let keep = stage_keep_count(cfg.keep_rate, n);
    let pool = if cfg.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.threads)
                .build()
                .map_err(|e| CliError::Internal(e.to_string()))?,
        )
    } else {
        None
    };
    let warmup = cfg.warmup_iterations();
    let mut samples = Vec::with_capacity(cfg.measured_iterations());
    for i in 0..cfg.repeats {
        let start = Instant::now();
        run_once(&inputs, kind, engine, keep, pool.as_ref())?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            samples.push(ms);
        }
    }
    let mean_ms = samples.iter().sum::<f64>() / samples.len() as f64;
    if mean_ms.is_nan() || mean_ms <= 0.0 {
        return Err(CliError::Internal(format!("non-positive mean time {mean_ms}")));
    }
    samples.sort_by(f64::total_cmp);
    Ok(BenchRow {
        engine: engine.to_string(),
        linkage: kind.to_string(),
        n_tokens: n,
        batch,
        repeats: cfg.repeats,
        mean_ms,
        p50_ms: percentile(&samples, 50.0),
        p95_ms: percentile(&samples, 95.0),
        throughput_items_per_s: batch as f64 / (mean_ms / 1e3),
        threads: cfg.threads,
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (engine, kind) in cfg.pairs() {
        for &n in &cfg.n_list {
            for &batch in &cfg.batch_list {
                rows.push(bench_cell(cfg, engine, kind, n, batch)?);
            }
        }
    }
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let s: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&s, 50.0), 10.0);
        assert_eq!(percentile(&s, 95.0), 19.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn default_grid_and_warmup() {
        let cfg = BenchConfig::default();
        assert_eq!(cfg.n_list, vec![196, 256, 576, 1024, 4096]);
        assert_eq!(cfg.warmup_iterations(), 5);
        assert_eq!(cfg.measured_iterations(), 15);
        let cfg = BenchConfig {
            repeats: 1000,
            ..BenchConfig::default()
        };
        assert_eq!(cfg.warmup_iterations(), 250);
    }

    #[test]
    fn invalid_grids() {
        let base = BenchConfig::default();
        assert!(BenchConfig {
            n_list: vec![],
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            batch_list: vec![0],
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            repeats: 1,
            warmup_fraction: 0.5,
            ..base.clone()
        }
        .validate()
        .is_ok());
        assert!(BenchConfig {
            repeats: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            warmup_fraction: 1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(BenchConfig {
            engines: vec![Engine::Mst],
            linkages: vec![LinkageKind::Average],
            ..base.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn small_run_produces_rows() {
        let cfg = BenchConfig {
            n_list: vec![16, 32],
            batch_list: vec![1, 2],
            engines: vec![Engine::Naive, Engine::Mst],
            linkages: vec![LinkageKind::Single, LinkageKind::Complete],
            repeats: 4,
            ..BenchConfig::default()
        };
        let report = run_bench(&cfg).unwrap();
        // mst only pairs with single linkage: (naive x 2 + mst x 1) x 2 n x 2 batch
        assert_eq!(report.rows.len(), 12);
        assert!(report.rows.iter().all(|r| r.mean_ms > 0.0 && r.p50_ms <= r.p95_ms));
        assert!(report.find(Engine::Mst, LinkageKind::Complete, 16, 1).is_none());
    }
}
