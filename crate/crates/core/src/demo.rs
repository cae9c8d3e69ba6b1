//! Synthetic image-like scenes pushed through a random block stack, producing
//! per-stage cluster grids for visualization.

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::attention::BlockStack;
use crate::clusterer::Engine;
use crate::config::KeyValueConfig;
use crate::error::{AtcError, Result};
use crate::geometry::FeatureMatrix;
use crate::linkage::LinkageKind;
use crate::reducer::{reduce_sequence, tome_bipartite_merge, MergeRecord, ReductionSchedule};

/// Number of regions drawn by [`synthetic_scene`].
pub const SCENE_REGIONS: usize = 4;

/// Patch features of a `side x side` scene, preceded by one CLS row.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub side: usize,
    pub features: FeatureMatrix,
    /// Region index of every patch, row-major.
    pub regions: Vec<usize>,
    pub protected_prefix: usize,
}

impl Scene {
    pub fn n_patches(&self) -> usize {
        self.side * self.side
    }
}

fn gaussian_vec<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Region of the patch at normalized coordinates `(u, v)`: sky, ground, a
/// round object and a vertical pole.
fn region_at(u: f64, v: f64) -> usize {
    if (u - 0.62).powi(2) + (v - 0.45).powi(2) < 0.055 {
        2
    } else if (u - 0.22).abs() < 0.07 && v > 0.25 {
        3
    } else if v > 0.72 {
        1
    } else {
        0
    }
}

/// Deterministic scene: each patch is its region prototype plus noise and a
/// weak vertical gradient.
pub fn synthetic_scene(side: usize, dim: usize, seed: u64) -> Result<Scene> {
    if side < 2 || dim < 2 {
        return Err(AtcError::Config(format!(
            "scene needs side >= 2 and dim >= 2, got {side} and {dim}"
        )));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..SCENE_REGIONS).map(|_| gaussian_vec(&mut rng, dim, 1.0)).collect();
    let gradient = gaussian_vec(&mut rng, dim, 0.35);
    let cls = gaussian_vec(&mut rng, dim, 1.0);

    let mut rows = Vec::with_capacity(side * side + 1);
    rows.push(cls);
    let mut regions = Vec::with_capacity(side * side);
    let span = (side - 1) as f64;
    for r in 0..side {
        for c in 0..side {
            let (u, v) = (c as f64 / span, r as f64 / span);
            let region = region_at(u, v);
            regions.push(region);
            let noise = gaussian_vec(&mut rng, dim, 0.3);
            let row = prototypes[region]
                .iter()
                .zip(&noise)
                .zip(&gradient)
                .map(|((p, n), g)| p + n + (v - 0.5) * g)
                .collect();
            rows.push(row);
        }
    }
    Ok(Scene {
        side,
        features: FeatureMatrix::from_rows(&rows)?,
        regions,
        protected_prefix: 1,
    })
}

/// Settings for the staged reduction demo.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub side: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub depth: usize,
    pub gain: f64,
    pub schedule: ReductionSchedule,
    pub linkage: LinkageKind,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            side: 14,
            dim: 32,
            heads: 4,
            mlp_hidden: 64,
            depth: 12,
            gain: 0.5,
            schedule: ReductionSchedule::Stages {
                blocks: vec![3, 6, 9],
                keep_rate: 0.25,
            },
            linkage: LinkageKind::Average,
            seed: 0,
        }
    }
}

impl DemoConfig {
    /// Overlays keys from `cfg` on the defaults.
    ///
    /// Recognized keys: `side`, `dim`, `heads`, `mlp_hidden`, `depth`, `gain`,
    /// `linkage`, `seed`, plus the schedule keys (`schedule`, `t`, `L`,
    /// `blocks`, `keep_rate`). For constant and linear schedules `L`
    /// defaults to `depth`.
    pub fn from_config(cfg: &KeyValueConfig) -> Result<Self> {
        const KNOWN: [&str; 13] = [
            "side",
            "dim",
            "heads",
            "mlp_hidden",
            "depth",
            "gain",
            "linkage",
            "seed",
            "schedule",
            "t",
            "L",
            "blocks",
            "keep_rate",
        ];
        if let Some(k) = cfg.keys().find(|k| !KNOWN.contains(k)) {
            return Err(AtcError::Config(format!("unknown key `{k}`")));
        }
        let mut out = DemoConfig::default();
        out.side = cfg.get("side")?.unwrap_or(out.side);
        out.dim = cfg.get("dim")?.unwrap_or(out.dim);
        out.heads = cfg.get("heads")?.unwrap_or(out.heads);
        out.mlp_hidden = cfg.get("mlp_hidden")?.unwrap_or(out.mlp_hidden);
        out.depth = cfg.get("depth")?.unwrap_or(out.depth);
        out.gain = cfg.get("gain")?.unwrap_or(out.gain);
        out.seed = cfg.get("seed")?.unwrap_or(out.seed);
        if let Some(l) = cfg.raw("linkage") {
            out.linkage = l.parse()?;
        }
        if cfg.contains("schedule") {
            let mut sched_cfg = cfg.clone();
            if !sched_cfg.contains("L") {
                sched_cfg.set("L", out.depth.to_string());
            }
            out.schedule = ReductionSchedule::from_config(&sched_cfg)?;
        } else if cfg.contains("blocks") || cfg.contains("keep_rate") {
            let (blocks, keep_rate) = match &out.schedule {
                ReductionSchedule::Stages { blocks, keep_rate } => (blocks.clone(), *keep_rate),
                _ => unreachable!("default schedule is staged"),
            };
            out.schedule = ReductionSchedule::Stages {
                blocks: cfg.get_list("blocks")?.unwrap_or(blocks),
                keep_rate: cfg.get("keep_rate")?.unwrap_or(keep_rate),
            };
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 2 {
            return Err(AtcError::Config(format!("side must be at least 2, got {}", self.side)));
        }
        if self.depth < 1 || self.mlp_hidden < 1 {
            return Err(AtcError::Config("depth and mlp_hidden must be positive".into()));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(AtcError::Config(format!(
                "heads ({}) must divide dim ({})",
                self.heads, self.dim
            )));
        }
        if !self.gain.is_finite() || self.gain < 0.0 {
            return Err(AtcError::Config(format!(
                "gain must be finite and non-negative, got {}",
                self.gain
            )));
        }
        self.schedule.validate()?;
        match &self.schedule {
            ReductionSchedule::Stages { blocks, .. } => {
                if let Some(&b) = blocks.iter().find(|&&b| b >= self.depth) {
                    return Err(AtcError::BlockOutOfRange {
                        block: b,
                        blocks: self.depth,
                    });
                }
            }
            s => {
                if s.depth() != Some(self.depth) {
                    return Err(AtcError::InvalidSchedule(format!(
                        "schedule depth {:?} differs from stack depth {}",
                        s.depth(),
                        self.depth
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cluster labels of every original patch after one reduction stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGrid {
    pub block: usize,
    /// Unprotected tokens after this stage.
    pub tokens: usize,
    /// `side * side` labels, row-major.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRun {
    pub side: usize,
    pub regions: Vec<usize>,
    pub stages: Vec<StageGrid>,
    /// Unprotected token count after each block.
    pub counts: Vec<usize>,
}

pub fn run_demo(cfg: &DemoConfig) -> Result<DemoRun> {
    cfg.validate()?;
    let scene = synthetic_scene(cfg.side, cfg.dim, cfg.seed)?;
    let stack = BlockStack::random(
        cfg.depth,
        cfg.dim,
        cfg.mlp_hidden,
        cfg.heads,
        cfg.gain,
        cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    let n = scene.features.n_tokens();
    let run = stack.forward(
        &scene.features,
        &vec![1; n],
        scene.protected_prefix,
        Some(&cfg.schedule),
        cfg.linkage,
    )?;
    let mut composed = MergeRecord::identity(scene.n_patches(), scene.protected_prefix);
    let mut stages = Vec::with_capacity(run.records.len());
    for (block, rec) in &run.records {
        composed = composed.then(rec)?;
        stages.push(StageGrid {
            block: *block,
            tokens: composed.post_count(),
            labels: composed.assignment().labels().to_vec(),
        });
    }
    Ok(DemoRun {
        side: cfg.side,
        regions: scene.regions,
        stages,
        counts: run.counts,
    })
}

/// Token reduction method compared in the one-shot demo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Agglomerative(LinkageKind),
    Bipartite,
}

/// Reduces the scene's patches to `keep` tokens in one step and returns the
/// per-patch cluster labels.
pub fn one_shot_labels(scene: &Scene, method: Method, keep: usize) -> Result<Vec<usize>> {
    let n = scene.features.n_tokens();
    let sizes = vec![1; n];
    let prefix = scene.protected_prefix;
    let (_, _, rec) = match method {
        Method::Agglomerative(kind) => reduce_sequence(
            &scene.features,
            None,
            &sizes,
            prefix,
            kind,
            Engine::preferred(kind),
            keep,
        )?,
        Method::Bipartite => {
            let t = scene
                .n_patches()
                .checked_sub(keep)
                .ok_or_else(|| AtcError::InvalidStop(format!("keep {keep} exceeds {} patches", scene.n_patches())))?;
            tome_bipartite_merge(&scene.features, None, &sizes, t, prefix)?
        }
    };
    Ok(rec.assignment().labels().to_vec())
}
