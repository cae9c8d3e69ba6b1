//! Command implementations, independent of argument parsing.

use std::fs;
use std::path::Path;

use atc_core::config::KeyValueConfig;
use atc_core::demo::{run_demo, DemoConfig, DemoRun};
use atc_core::synthetic::{random_features, separated_groups};
use atc_core::{cluster_batch, Engine, LinkageKind, StoppingRule};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::tensor::TensorFile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterOutput {
    /// Canonical labels per sequence.
    pub labels: Vec<Vec<usize>>,
    /// Heights of the merges applied to reach each partition, as `f32`.
    pub heights: Vec<Vec<f32>>,
}

pub fn cluster_tensor(
    tensor: &TensorFile,
    kind: LinkageKind,
    engine: Engine,
    stop: StoppingRule,
) -> Result<ClusterOutput> {
    if !engine.supports(kind) {
        return Err(CliError::Invalid(format!(
            "engine `{engine}` does not support `{kind}` linkage"
        )));
    }
    let seqs = tensor.sequences()?;
    let results = cluster_batch(&seqs, kind, engine, stop)?;
    let mut out = ClusterOutput {
        labels: Vec::new(),
        heights: Vec::new(),
    };
    for (seq, (dendro, assignment)) in seqs.iter().zip(results) {
        let n = seq.n_tokens();
        if assignment.len() != n {
            return Err(CliError::Internal(format!(
                "{} labels for {n} tokens",
                assignment.len()
            )));
        }
        let applied = n - assignment.k();
        out.heights
            .push(dendro.heights().take(applied).map(|h| h as f32).collect());
        out.labels.push(assignment.labels().to_vec());
    }
    Ok(out)
}

pub fn cmd_cluster(
    input: &Path,
    output: &Path,
    kind: LinkageKind,
    engine: Engine,
    stop: StoppingRule,
) -> Result<ClusterOutput> {
    let tensor = TensorFile::read(input)?;
    let out = cluster_tensor(&tensor, kind, engine, stop)?;
    write_json(output, &out)?;
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageJson {
    pub block: usize,
    pub tokens: usize,
    pub grid: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridsJson {
    pub side: usize,
    pub schedule: String,
    pub linkage: String,
    pub seed: u64,
    pub regions: Vec<Vec<usize>>,
    pub stages: Vec<StageJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountsJson {
    /// Unprotected tokens after each block.
    pub per_block: Vec<usize>,
    /// Tokens after each reduction stage.
    pub stage_tokens: Vec<usize>,
    pub protected_prefix: usize,
}

fn to_grid(flat: &[usize], side: usize) -> Vec<Vec<usize>> {
    flat.chunks(side).map(<[usize]>::to_vec).collect()
}

/// Loads a demo config file and applies `overrides` (same `key=value` keys).
pub fn load_demo_config(path: Option<&Path>, overrides: &[(&str, String)]) -> Result<DemoConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(format!("reading {}", p.display()), e))?;
            KeyValueConfig::parse(&text).map_err(|e| CliError::Parse(e.to_string()))?
        }
        None => KeyValueConfig::default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v.clone());
    }
    Ok(DemoConfig::from_config(&cfg)?)
}

/// Runs the staged demo and writes `grids.json` and `counts.json` into `out_dir`.
pub fn cmd_reduce_demo(cfg: &DemoConfig, out_dir: &Path) -> Result<DemoRun> {
    let run = run_demo(cfg)?;
    for st in &run.stages {
        let distinct: std::collections::BTreeSet<_> = st.labels.iter().collect();
        if distinct.len() != st.tokens {
            return Err(CliError::Internal(format!(
                "stage at block {} has {} labels for {} tokens",
                st.block,
                distinct.len(),
                st.tokens
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    let grids = GridsJson {
        side: run.side,
        schedule: cfg.schedule.to_string(),
        linkage: cfg.linkage.to_string(),
        seed: cfg.seed,
        regions: to_grid(&run.regions, run.side),
        stages: run
            .stages
            .iter()
            .map(|s| StageJson {
                block: s.block,
                tokens: s.tokens,
                grid: to_grid(&s.labels, run.side),
            })
            .collect(),
    };
    let counts = CountsJson {
        per_block: run.counts.clone(),
        stage_tokens: run.stages.iter().map(|s| s.tokens).collect(),
        protected_prefix: 1,
    };
    write_json(&out_dir.join("grids.json"), &grids)?;
    write_json(&out_dir.join("counts.json"), &counts)?;
    Ok(run)
}

/// Writes a seeded `[B, N, D]` tensor; with `groups`, tokens are drawn around
/// that many separated centers.
pub fn cmd_synth(output: &Path, shape: [usize; 3], groups: Option<usize>, seed: u64) -> Result<TensorFile> {
    let [b, n, d] = shape;
    if b == 0 || n == 0 || d == 0 {
        return Err(CliError::Invalid(format!("shape {shape:?} must be positive")));
    }
    let seqs = (0..b)
        .map(|s| {
            let seed = seed.wrapping_add(s as u64);
            match groups {
                Some(g) if g == 0 || n % g != 0 => {
                    Err(CliError::Invalid(format!("{n} tokens do not split into {g} groups")))
                }
                Some(g) => Ok(separated_groups(g, n / g, d, 10.0, seed)?.0),
                None => Ok(random_features(n, d, seed)?),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let t = TensorFile::from_matrices(&seqs)?;
    t.write(output)?;
    Ok(t)
}
