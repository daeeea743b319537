//! Pipeline configuration file schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::{PotentialWeights, UnaryKind};
use crate::error::Result;
use crate::floorplan::{DoorTemplateSpec, FloorplanParams, PixelRect, RulerSpec};
use crate::solver::AblationSwitches;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DoorTemplateConfig {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub threshold: f64,
}

impl DoorTemplateConfig {
    pub fn to_spec(&self) -> DoorTemplateSpec {
        DoorTemplateSpec {
            bbox: PixelRect {
                x: self.x,
                y: self.y,
                w: self.w,
                h: self.h,
            },
            score_threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub max_candidates: usize,
    pub prune_outside_frac: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_candidates: crate::search::MAX_CANDIDATES,
            prune_outside_frac: crate::search::PRUNE_OUTSIDE_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: crate::solver::DEFAULT_MAX_ITERS,
        }
    }
}

/// Root configuration for the CLI pipeline. Relative paths are resolved
/// against the config file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub floorplan: PathBuf,
    pub scans_dir: PathBuf,
    pub output_dir: PathBuf,
    pub ruler: RulerSpec,
    pub door_template: DoorTemplateConfig,
    #[serde(default = "default_ink_threshold")]
    pub ink_threshold: f32,
    #[serde(default = "default_clutter_min_area")]
    pub clutter_min_area_m2: f64,
    #[serde(default)]
    pub floorplan_quarter_turns: u8,
    #[serde(default)]
    pub weights: PotentialWeights,
    #[serde(default)]
    pub switches: AblationSwitches,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub baseline: Option<UnaryKind>,
}

fn default_ink_threshold() -> f32 {
    0.4
}

fn default_clutter_min_area() -> f64 {
    0.25
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<(PipelineConfig, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        Ok((cfg, base))
    }

    pub fn floorplan_params(&self) -> FloorplanParams {
        FloorplanParams {
            ink_threshold: self.ink_threshold,
            clutter_min_area_m2: self.clutter_min_area_m2,
            quarter_turns: self.floorplan_quarter_turns,
        }
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let json = r#"{
            "floorplan": "floorplan.png",
            "scans_dir": "scans",
            "output_dir": "out",
            "ruler": {"ax": 0, "ay": 0, "bx": 100, "by": 0, "meters": 5.0},
            "door_template": {"x": 10, "y": 12, "w": 9, "h": 9, "threshold": 0.8}
        }"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.ink_threshold, 0.4);
        assert_eq!(cfg.clutter_min_area_m2, 0.25);
        assert!(cfg.switches.use_sf && cfg.switches.use_ss && cfg.switches.use_cov);
        assert_eq!(cfg.weights.w_cov, 1.0);
        assert_eq!(cfg.search.max_candidates, 5);
        assert_eq!(cfg.solver.max_iters, 50);
        assert!(cfg.baseline.is_none());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let json = r#"{
            "floorplan": "f.png",
            "scans_dir": "s",
            "output_dir": "o",
            "ruler": {"ax": 0, "ay": 0, "bx": 50, "by": 0, "meters": 2.5},
            "door_template": {"x": 1, "y": 2, "w": 9, "h": 9, "threshold": 0.7},
            "baseline": "masked_ssd",
            "switches": {"use_ss": false}
        }"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.baseline, Some(crate::energy::UnaryKind::MaskedSsd));
        assert!(!cfg.switches.use_ss);
        assert!(cfg.switches.use_sf);
        let back = serde_json::to_string(&cfg).unwrap();
        let cfg2: PipelineConfig = serde_json::from_str(&back).unwrap();
        assert_eq!(cfg2.baseline, cfg.baseline);
    }
}
