//! On-disk formats and error-to-exit-code mapping for the CLI.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use planmatch_core::error::Error as CoreError;
use planmatch_core::floorplan::{FloorplanContext, PixelRect};
use planmatch_core::raster::{BinaryMask, GrayImage};
use planmatch_core::search::CandidateSet;
use planmatch_core::solver::SolveResult;
use serde::{Deserialize, Serialize};

/// Error with the process exit code it maps to (2 = bad input/config,
/// 1 = internal).
#[derive(Debug)]
pub struct CliError {
    code: u8,
    inner: anyhow::Error,
}

impl CliError {
    pub fn bad_input(msg: impl Into<String>) -> Self {
        CliError {
            code: 2,
            inner: anyhow::anyhow!(msg.into()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.inner)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidArgument(_)
            | CoreError::EstimationFailed(_)
            | CoreError::TooSmallInput(_)
            | CoreError::GenerationFailed(_)
            | CoreError::Io(_)
            | CoreError::Image(_)
            | CoreError::Json(_) => 2,
            CoreError::NoCandidates(_) | CoreError::ModelTooLarge(_) => 1,
        };
        CliError {
            code,
            inner: anyhow::Error::new(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            inner: anyhow::Error::new(e),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError {
            code: 2,
            inner: anyhow::Error::new(e),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct CandidatesFile {
    pub sets: Vec<CandidateSet>,
    pub rejected: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AssignmentRow {
    pub scan_id: String,
    pub k: u8,
    pub tx: i32,
    pub ty: i32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlacementsFile {
    pub assignments: Vec<AssignmentRow>,
    pub energy: f64,
    pub lower_bound: f64,
    pub iterations: usize,
}

impl PlacementsFile {
    pub fn from_solve(result: &SolveResult, placements: &[(String, planmatch_core::energy::Placement)]) -> Self {
        PlacementsFile {
            assignments: placements
                .iter()
                .map(|(id, p)| AssignmentRow {
                    scan_id: id.clone(),
                    k: p.k,
                    tx: p.tx,
                    ty: p.ty,
                })
                .collect(),
            energy: result.energy,
            lower_bound: result.lower_bound,
            iterations: result.iterations,
        }
    }

    pub fn placements(&self) -> Vec<(String, planmatch_core::energy::Placement)> {
        self.assignments
            .iter()
            .map(|a| {
                (
                    a.scan_id.clone(),
                    planmatch_core::energy::Placement::new(a.k, a.tx, a.ty),
                )
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ContextMeta {
    meters_per_pixel: f64,
    bbox: PixelRect,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::bad_input(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

/// Persist a floorplan context under `dir`.
pub fn save_context(dir: &Path, ctx: &FloorplanContext) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    ctx.clean.save_png8(dir.join("clean.png"))?;
    ctx.dilated.save_png16(dir.join("dilated.png"))?;
    ctx.building.save_png(dir.join("building.png"))?;
    ctx.doors.save_png(dir.join("doors.png"))?;
    write_json(
        &dir.join("context.json"),
        &ContextMeta {
            meters_per_pixel: ctx.meters_per_pixel,
            bbox: ctx.bbox,
        },
    )?;
    Ok(())
}

pub fn load_context(dir: &Path) -> CliResult<FloorplanContext> {
    let meta: ContextMeta = read_json(&dir.join("context.json"))?;
    Ok(FloorplanContext {
        clean: GrayImage::load_png(dir.join("clean.png"))?,
        dilated: GrayImage::load_png(dir.join("dilated.png"))?,
        building: BinaryMask::load_png(dir.join("building.png"))?,
        doors: BinaryMask::load_png(dir.join("doors.png"))?,
        meters_per_pixel: meta.meters_per_pixel,
        bbox: meta.bbox,
    })
}

/// Scan stems found in a directory: PLY files and pre-made evidence packs.
pub fn list_scan_stems(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if !dir.is_dir() {
        return Err(CliError::bad_input(format!(
            "scan directory {} does not exist",
            dir.display()
        )));
    }
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n.to_string(),
            None => continue,
        };
        if let Some(stem) = name.strip_suffix(".ply") {
            stems.push((stem.to_string(), path.clone()));
        } else if let Some(stem) = name.strip_suffix(".meta.json") {
            stems.push((stem.to_string(), path.clone()));
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(CliError::bad_input(format!(
            "no .ply files or evidence packs in {}",
            dir.display()
        )));
    }
    Ok(stems)
}

pub fn mtime(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

/// True when every output exists and none is older than the newest input.
pub fn up_to_date(inputs: &[PathBuf], outputs: &[PathBuf]) -> bool {
    let newest_in = inputs.iter().filter_map(|p| mtime(p)).max();
    let Some(newest_in) = newest_in else {
        return false;
    };
    let mut oldest_out: Option<SystemTime> = None;
    for o in outputs {
        match mtime(o) {
            None => return false,
            Some(t) => {
                oldest_out = Some(match oldest_out {
                    None => t,
                    Some(prev) => prev.min(t),
                });
            }
        }
    }
    matches!(oldest_out, Some(t) if t >= newest_in)
}
