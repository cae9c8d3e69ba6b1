//! WebAssembly entry points for the static demo page in `www/`.
//!
//! Every exported function has a plain Rust counterpart returning
//! [`atc_core::Result`] so the logic can be tested natively.

use atc_core::demo::{one_shot_labels, run_demo, synthetic_scene, DemoConfig, Method};
use atc_core::metrics::adjusted_rand_index;
use atc_core::{AtcError, LinkageKind, ReductionSchedule, Result};
use wasm_bindgen::prelude::*;

const SCENE_DIM: usize = 32;

fn to_u32(v: &[usize]) -> Vec<u32> {
    v.iter().map(|&x| x as u32).collect()
}

fn js(e: AtcError) -> JsError {
    JsError::new(&e.to_string())
}

/// Per-stage label grids of the staged reduction demo.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct StagedGrids {
    side: usize,
    regions: Vec<u32>,
    blocks: Vec<u32>,
    tokens: Vec<u32>,
    labels: Vec<Vec<u32>>,
    counts: Vec<u32>,
}

#[wasm_bindgen]
impl StagedGrids {
    #[wasm_bindgen(getter)]
    pub fn side(&self) -> usize {
        self.side
    }

    /// Region index of every patch, row-major.
    #[wasm_bindgen(getter)]
    pub fn regions(&self) -> Vec<u32> {
        self.regions.clone()
    }

    #[wasm_bindgen(getter, js_name = stageCount)]
    pub fn stage_count(&self) -> usize {
        self.labels.len()
    }

    /// Block index at which each stage ran.
    #[wasm_bindgen(getter)]
    pub fn blocks(&self) -> Vec<u32> {
        self.blocks.clone()
    }

    /// Tokens left after each stage.
    #[wasm_bindgen(getter)]
    pub fn tokens(&self) -> Vec<u32> {
        self.tokens.clone()
    }

    /// Patch labels after stage `i`, row-major.
    #[wasm_bindgen(js_name = stageLabels)]
    pub fn stage_labels(&self, i: usize) -> Vec<u32> {
        self.labels.get(i).cloned().unwrap_or_default()
    }

    /// Unprotected tokens after every block.
    #[wasm_bindgen(getter)]
    pub fn counts(&self) -> Vec<u32> {
        self.counts.clone()
    }
}

pub fn staged(side: usize, keep_rate: f64, linkage: &str, seed: u32) -> Result<StagedGrids> {
    let cfg = DemoConfig {
        side,
        linkage: linkage.parse()?,
        seed: seed.into(),
        schedule: ReductionSchedule::Stages {
            blocks: vec![3, 6, 9],
            keep_rate,
        },
        ..DemoConfig::default()
    };
    let run = run_demo(&cfg)?;
    Ok(StagedGrids {
        side: run.side,
        regions: to_u32(&run.regions),
        blocks: run.stages.iter().map(|s| s.block as u32).collect(),
        tokens: run.stages.iter().map(|s| s.tokens as u32).collect(),
        labels: run.stages.iter().map(|s| to_u32(&s.labels)).collect(),
        counts: to_u32(&run.counts),
    })
}

/// Three stages at blocks 3, 6 and 9 of a 12-block random stack, each keeping
/// `keep_rate` of the remaining patch tokens.
#[wasm_bindgen(js_name = stagedDemo)]
pub fn staged_demo(side: usize, keep_rate: f64, linkage: &str, seed: u32) -> std::result::Result<StagedGrids, JsError> {
    staged(side, keep_rate, linkage, seed).map_err(js)
}

/// Labels from a single reduction of the scene, with agreement against the
/// drawn regions.
#[wasm_bindgen]
#[derive(Debug, Clone, PartialEq)]
pub struct OneShot {
    labels: Vec<u32>,
    regions: Vec<u32>,
    ari: f64,
}

#[wasm_bindgen]
impl OneShot {
    #[wasm_bindgen(getter)]
    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn regions(&self) -> Vec<u32> {
        self.regions.clone()
    }

    /// Adjusted Rand index between the labels and the scene regions.
    #[wasm_bindgen(getter)]
    pub fn ari(&self) -> f64 {
        self.ari
    }
}

fn parse_method(method: &str) -> Result<Method> {
    match method {
        "tome" | "bipartite" => Ok(Method::Bipartite),
        other => other
            .parse::<LinkageKind>()
            .map(Method::Agglomerative)
            .map_err(|_| AtcError::UnknownVariant {
                kind: "method",
                value: other.to_owned(),
            }),
    }
}

pub fn one_shot(side: usize, method: &str, keep: usize, seed: u32) -> Result<OneShot> {
    let scene = synthetic_scene(side, SCENE_DIM, seed.into())?;
    let labels = one_shot_labels(&scene, parse_method(method)?, keep)?;
    Ok(OneShot {
        ari: adjusted_rand_index(&labels, &scene.regions),
        labels: to_u32(&labels),
        regions: to_u32(&scene.regions),
    })
}

/// `method` is `single`, `complete`, `average` or `tome`.
#[wasm_bindgen(js_name = oneShot)]
pub fn one_shot_demo(side: usize, method: &str, keep: usize, seed: u32) -> std::result::Result<OneShot, JsError> {
    one_shot(side, method, keep, seed).map_err(js)
}

pub fn curve(kind: &str, t: usize, depth: usize, start: usize) -> Result<Vec<u32>> {
    let schedule = match kind {
        "constant" => ReductionSchedule::Constant { t, depth },
        "linear" => ReductionSchedule::Linear { t, depth },
        other => {
            return Err(AtcError::UnknownVariant {
                kind: "schedule",
                value: other.to_owned(),
            })
        }
    };
    schedule.validate()?;
    let mut out = Vec::with_capacity(depth + 1);
    let mut current = start;
    out.push(current as u32);
    for block in 0..depth {
        current = schedule.keep_count(block, current)?;
        out.push(current as u32);
    }
    Ok(out)
}

/// Token count before block 0 and after every block under a constant or
/// linear schedule.
#[wasm_bindgen(js_name = scheduleCurve)]
pub fn schedule_curve(kind: &str, t: usize, depth: usize, start: usize) -> std::result::Result<Vec<u32>, JsError> {
    curve(kind, t, depth, start).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staged_counts() {
        let g = staged(14, 0.25, "average", 0).unwrap();
        assert_eq!(g.tokens(), vec![49, 12, 3]);
        assert_eq!(g.blocks(), vec![3, 6, 9]);
        assert_eq!(g.stage_count(), 3);
        assert_eq!(g.stage_labels(0).len(), 196);
        assert!(g.stage_labels(3).is_empty());
        let distinct: std::collections::BTreeSet<_> = g.stage_labels(2).into_iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn staged_rejects_bad_input() {
        assert!(staged(14, 0.0, "average", 0).is_err());
        assert!(staged(14, 0.25, "ward", 0).is_err());
    }

    #[test]
    fn one_shot_methods() {
        for m in ["single", "complete", "average", "tome"] {
            let r = one_shot(14, m, 120, 3).unwrap();
            assert_eq!(r.labels().len(), 196);
            assert_eq!(*r.labels().iter().max().unwrap(), 119);
            assert!(r.ari() <= 1.0);
        }
        assert!(one_shot(14, "tome", 40, 3).is_err());
        assert!(one_shot(14, "kmeans", 40, 3).is_err());
    }

    #[test]
    fn schedule_curves() {
        let c = curve("constant", 8, 12, 196).unwrap();
        assert_eq!(c.len(), 13);
        assert_eq!(*c.last().unwrap(), 196 - 96);
        let l = curve("linear", 16, 12, 196).unwrap();
        assert_eq!(&l[..3], &[196, 164, 135]);
        assert_eq!(*l.last().unwrap(), 196 - 187);
        assert!(curve("cosine", 8, 12, 196).is_err());
    }
}
