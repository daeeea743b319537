//! Subcommand implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use planmatch_core::config::{DoorTemplateConfig, PipelineConfig};
use planmatch_core::energy::{Placement, UnaryKind};
use planmatch_core::error::Error as CoreError;
use planmatch_core::floorplan::{make_context, FloorplanContext};
use planmatch_core::pipeline::{self, AlignConfig};
use planmatch_core::raster::GrayImage;
use planmatch_core::scanprep::{
    self, detect_doors_scan, load_evidence_pack, load_ply, make_evidence, normalize_cloud,
    save_evidence_pack, DoorScanParams, EvidenceParams, ScanEvidence,
};
use planmatch_core::search::candidate_search;
use planmatch_core::synth::{gen_scene, GroundTruth, SceneSpec};

use crate::store::{
    list_scan_stems, load_context, read_json, save_context, up_to_date, write_json,
    CandidatesFile, CliError, CliResult, PlacementsFile,
};

fn parse_pair(s: &str, what: &str) -> CliResult<(usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 2 {
        return Err(CliError::bad_input(format!("{what} must look like 4x5")));
    }
    let a = parts[0]
        .parse()
        .map_err(|_| CliError::bad_input(format!("bad {what}: {s}")))?;
    let b = parts[1]
        .parse()
        .map_err(|_| CliError::bad_input(format!("bad {what}: {s}")))?;
    Ok((a, b))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    out: &Path,
    seed: u64,
    rooms: usize,
    grid: &str,
    duplicates: usize,
    clutter: f64,
    dropout: f64,
    mpp: f64,
    room_min: f64,
    room_max: f64,
    canvas: Option<&str>,
) -> CliResult<()> {
    let grid = parse_pair(grid, "grid")?;
    let canvas_px = canvas.map(|c| parse_pair(c, "canvas")).transpose()?;
    let spec = SceneSpec {
        seed,
        rooms,
        grid,
        room_size_range: (room_min, room_max),
        door_width_m: 0.9,
        wall_thickness_px: 2,
        clutter_density: clutter,
        dropout,
        duplicate_rooms: duplicates,
        meters_per_pixel: mpp,
        canvas_px,
    };
    let scene = gen_scene(&spec)?;
    fs::create_dir_all(out)?;
    scene.floorplan.save_png8(out.join("floorplan.png"))?;
    let scans_dir = out.join("scans");
    fs::create_dir_all(&scans_dir)?;
    for (id, ev) in &scene.scans {
        save_evidence_pack(&scans_dir, id, ev)?;
    }
    write_json(&out.join("gt.json"), &scene.gt)?;

    let ruler = pipeline::scene_ruler(scene.meters_per_pixel);
    let config = PipelineConfig {
        floorplan: "floorplan.png".into(),
        scans_dir: "scans".into(),
        output_dir: "out".into(),
        ruler,
        door_template: DoorTemplateConfig {
            x: scene.door_bbox.x,
            y: scene.door_bbox.y,
            w: scene.door_bbox.w,
            h: scene.door_bbox.h,
            threshold: scene.door_threshold,
        },
        ink_threshold: 0.4,
        clutter_min_area_m2: 0.25,
        floorplan_quarter_turns: 0,
        weights: pipeline::benchmark_weights(),
        switches: Default::default(),
        search: Default::default(),
        solver: Default::default(),
        baseline: None,
    };
    write_json(&out.join("config.json"), &config)?;
    println!(
        "scene written to {}: {} rooms, floorplan {}x{}",
        out.display(),
        scene.scans.len(),
        scene.floorplan.width(),
        scene.floorplan.height()
    );
    Ok(())
}

struct LoadedConfig {
    cfg: PipelineConfig,
    floorplan_path: PathBuf,
    scans_dir: PathBuf,
    output_dir: PathBuf,
    config_path: PathBuf,
}

fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let (cfg, base) = PipelineConfig::load(path)
        .map_err(|e| CliError::bad_input(format!("config {}: {e}", path.display())))?;
    let floorplan_path = cfg.resolve(&base, &cfg.floorplan);
    let scans_dir = cfg.resolve(&base, &cfg.scans_dir);
    let output_dir = cfg.resolve(&base, &cfg.output_dir);
    if !floorplan_path.is_file() {
        return Err(CliError::bad_input(format!(
            "floorplan image {} does not exist",
            floorplan_path.display()
        )));
    }
    Ok(LoadedConfig {
        cfg,
        floorplan_path,
        scans_dir,
        output_dir,
        config_path: path.to_path_buf(),
    })
}

fn align_config(cfg: &PipelineConfig) -> AlignConfig {
    AlignConfig {
        weights: cfg.weights,
        switches: cfg.switches,
        kind: cfg.baseline.unwrap_or(UnaryKind::Ours),
        max_candidates: cfg.search.max_candidates,
        prune_outside_frac: cfg.search.prune_outside_frac,
        max_iters: cfg.solver.max_iters,
    }
}

fn build_context(lc: &LoadedConfig) -> CliResult<FloorplanContext> {
    let raw = GrayImage::load_png(&lc.floorplan_path)?;
    let ctx = make_context(
        &raw,
        &lc.cfg.ruler,
        &lc.cfg.door_template.to_spec(),
        &lc.cfg.floorplan_params(),
    )?;
    Ok(ctx)
}

pub fn cmd_preprocess(config: &Path, force: bool) -> CliResult<()> {
    let lc = load_config(config)?;
    let stems = list_scan_stems(&lc.scans_dir)?;
    let ctx_dir = lc.output_dir.join("context");
    let ev_dir = lc.output_dir.join("evidence");

    let mut inputs = vec![lc.config_path.clone(), lc.floorplan_path.clone()];
    for (stem, path) in &stems {
        inputs.push(path.clone());
        for suffix in ["point.png", "free.png", "doors.png"] {
            let p = lc.scans_dir.join(format!("{stem}.{suffix}"));
            if p.exists() {
                inputs.push(p);
            }
        }
    }
    let mut outputs = vec![ctx_dir.join("context.json")];
    for (stem, _) in &stems {
        outputs.push(ev_dir.join(format!("{stem}.meta.json")));
    }
    if !force && up_to_date(&inputs, &outputs) {
        println!("preprocess: outputs up to date, skipping (--force to rebuild)");
        return Ok(());
    }

    let ctx = build_context(&lc)?;
    save_context(&ctx_dir, &ctx)?;
    fs::create_dir_all(&ev_dir)?;
    for (stem, path) in &stems {
        let ev = if path.extension().is_some_and(|e| e == "ply") {
            let cloud = load_ply(path)?;
            let (normalized, _, _, _) = normalize_cloud(&cloud)?;
            let mut ev = make_evidence(
                &normalized,
                ctx.meters_per_pixel,
                &EvidenceParams::default(),
            )?;
            ev.doors = detect_doors_scan(&ev, &DoorScanParams::default());
            ev
        } else {
            let ev = load_evidence_pack(&lc.scans_dir, stem)?;
            if (ev.meters_per_pixel - ctx.meters_per_pixel).abs() > 1e-9 {
                return Err(CliError::bad_input(format!(
                    "scan {stem} has meters_per_pixel {} but the floorplan ruler gives {}",
                    ev.meters_per_pixel, ctx.meters_per_pixel
                )));
            }
            ev
        };
        scanprep::validate_evidence(&ev)?;
        save_evidence_pack(&ev_dir, stem, &ev)?;
    }
    println!(
        "preprocess: context + {} evidence packs written to {}",
        stems.len(),
        lc.output_dir.display()
    );
    Ok(())
}

fn load_processed(lc: &LoadedConfig) -> CliResult<(FloorplanContext, Vec<(String, ScanEvidence)>)> {
    let ctx_dir = lc.output_dir.join("context");
    if !ctx_dir.join("context.json").is_file() {
        return Err(CliError::bad_input(format!(
            "{} not found: run preprocess first",
            ctx_dir.join("context.json").display()
        )));
    }
    let ctx = load_context(&ctx_dir)?;
    let ev_dir = lc.output_dir.join("evidence");
    let stems = list_scan_stems(&ev_dir)?;
    let mut scans = Vec::new();
    for (stem, _) in stems {
        let ev = load_evidence_pack(&ev_dir, &stem)?;
        scans.push((stem, ev));
    }
    Ok((ctx, scans))
}

pub fn cmd_candidates(config: &Path, baseline: Option<&str>) -> CliResult<()> {
    let mut lc = load_config(config)?;
    let (file_name, kind) = match baseline {
        None => (
            "candidates.json".to_string(),
            lc.cfg.baseline.unwrap_or(UnaryKind::Ours),
        ),
        Some(name) => {
            let kind = match name {
                "naive_ssd" => UnaryKind::NaiveSsd,
                "masked_ssd" => UnaryKind::MaskedSsd,
                "distance_transform" => UnaryKind::DistanceTransform,
                other => {
                    return Err(CliError::bad_input(format!(
                        "unknown baseline {other}; use naive_ssd, masked_ssd or distance_transform"
                    )))
                }
            };
            (format!("candidates_{name}.json"), kind)
        }
    };
    lc.cfg.baseline = match kind {
        UnaryKind::Ours => None,
        k => Some(k),
    };
    let (ctx, scans) = load_processed(&lc)?;
    let acfg = align_config(&lc.cfg);
    let params = acfg.search_params();
    let mut sets = Vec::new();
    let mut rejected = Vec::new();
    for (id, ev) in &scans {
        match candidate_search(&ctx, ev, &params, id) {
            Ok(set) => sets.push(set),
            Err(CoreError::NoCandidates(_)) => rejected.push(id.clone()),
            Err(e) => return Err(e.into()),
        }
    }
    let out = lc.output_dir.join(&file_name);
    write_json(&out, &CandidatesFile { sets, rejected })?;
    println!("candidates written to {}", out.display());
    Ok(())
}

pub fn cmd_solve(config: &Path) -> CliResult<()> {
    let lc = load_config(config)?;
    let (ctx, scans) = load_processed(&lc)?;
    let cand_path = lc.output_dir.join("candidates.json");
    if !cand_path.is_file() {
        return Err(CliError::bad_input(format!(
            "{} not found: run candidates first",
            cand_path.display()
        )));
    }
    let cands: CandidatesFile = read_json(&cand_path)?;
    if cands.sets.is_empty() {
        return Err(CliError::bad_input("no candidate sets to solve"));
    }
    let acfg = align_config(&lc.cfg);
    let (solve, placements, report) =
        pipeline::solve_sets(&ctx, &scans, &cands.sets, &acfg)?;

    let out = lc.output_dir.join("placements.json");
    write_json(&out, &PlacementsFile::from_solve(&solve, &placements))?;
    let mut csv = String::from("scan_id,k,tx,ty\n");
    for (id, p) in &placements {
        csv.push_str(&format!("{id},{},{},{}\n", p.k, p.tx, p.ty));
    }
    fs::write(lc.output_dir.join("placements.csv"), csv)?;
    write_json(&lc.output_dir.join("energy_report.json"), &report)?;
    println!(
        "solved {} scans in {} iterations: energy {:.4} (bound {:.4}), per-scan {:.4}",
        placements.len(),
        solve.iterations,
        solve.energy,
        solve.lower_bound,
        report.per_scan_average
    );
    println!("placements written to {}", out.display());
    Ok(())
}

/// Distinct color per scan index (golden-angle hue walk).
fn scan_color(index: usize) -> [u8; 3] {
    let h = (index as f64 * 137.508) % 360.0;
    let s = 0.85;
    let v = 0.95;
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0) % 2.0 - 1.0).abs());
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [
        ((r + m) * 255.0) as u8,
        ((g + m) * 255.0) as u8,
        ((b + m) * 255.0) as u8,
    ]
}

pub fn cmd_render(
    config: &Path,
    placements: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let lc = load_config(config)?;
    let (ctx, scans) = load_processed(&lc)?;
    let pl_path = placements
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| lc.output_dir.join("placements.json"));
    let placed: PlacementsFile = read_json(&pl_path)?;
    let out_path = out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| lc.output_dir.join("render.png"));

    let (w, h) = (ctx.clean.width(), ctx.clean.height());
    // nearest placed scanner origin wins overlapping pixels
    let mut owner: Vec<Option<(usize, i64)>> = vec![None; w * h];
    let by_id: std::collections::BTreeMap<&str, &ScanEvidence> =
        scans.iter().map(|(id, ev)| (id.as_str(), ev)).collect();
    for (index, row) in placed.assignments.iter().enumerate() {
        let Some(ev) = by_id.get(row.scan_id.as_str()) else {
            return Err(CliError::bad_input(format!(
                "placements reference unknown scan {}",
                row.scan_id
            )));
        };
        let pl = Placement::new(row.k, row.tx, row.ty);
        for p in ev.free_space.set_pixels() {
            let (fx, fy) = pl.map(p, ev.origin_px);
            if fx < 0 || fy < 0 || fx as usize >= w || fy as usize >= h {
                continue;
            }
            let d2 = {
                let (dx, dy) = ((fx - row.tx) as i64, (fy - row.ty) as i64);
                dx * dx + dy * dy
            };
            let cell = &mut owner[fy as usize * w + fx as usize];
            let closer = match cell {
                None => true,
                Some((_, best)) => d2 < *best,
            };
            if closer {
                *cell = Some((index, d2));
            }
        }
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let gray = (ctx.clean.get(x, y) * 255.0) as u8;
            let px = match owner[y * w + x] {
                None => [gray, gray, gray],
                Some((index, _)) => {
                    let c = scan_color(index);
                    [
                        ((gray as u16 + c[0] as u16) / 2) as u8,
                        ((gray as u16 + c[1] as u16) / 2) as u8,
                        ((gray as u16 + c[2] as u16) / 2) as u8,
                    ]
                }
            };
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    if let Some(parent) = out_path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save(&out_path)
        .map_err(|e| CliError::bad_input(format!("cannot write {}: {e}", out_path.display())))?;
    println!("overlay written to {}", out_path.display());
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalMetrics {
    error_rate: Option<f64>,
    top1_error: Option<f64>,
    top5_error: Option<f64>,
    baselines: std::collections::BTreeMap<String, (f64, f64)>,
}

pub fn cmd_eval(config: &Path, gt: Option<&Path>) -> CliResult<()> {
    let lc = load_config(config)?;
    let gt_path = gt.map(|p| p.to_path_buf()).unwrap_or_else(|| {
        lc.config_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("gt.json")
    });
    let gt: GroundTruth = read_json(&gt_path)?;

    let mut metrics = EvalMetrics {
        error_rate: None,
        top1_error: None,
        top5_error: None,
        baselines: Default::default(),
    };
    let mut text = String::new();

    let pl_path = lc.output_dir.join("placements.json");
    if pl_path.is_file() {
        let placed: PlacementsFile = read_json(&pl_path)?;
        let pairs = placed.placements();
        let err = planmatch_core::synth::eval_placements(&pairs, &gt)?;
        metrics.error_rate = Some(err);
        text.push_str(&format!("placement error rate: {:.1}%\n", err * 100.0));
    }
    let cand_path = lc.output_dir.join("candidates.json");
    if cand_path.is_file() {
        let cands: CandidatesFile = read_json(&cand_path)?;
        let (t1, t5) = pipeline::candidate_error_rates(&cands.sets, &gt);
        metrics.top1_error = Some(t1);
        metrics.top5_error = Some(t5);
        text.push_str(&format!(
            "candidate errors: top-1 {:.1}%, top-5 {:.1}%\n",
            t1 * 100.0,
            t5 * 100.0
        ));
    }
    for kind in ["naive_ssd", "masked_ssd", "distance_transform"] {
        let p = lc.output_dir.join(format!("candidates_{kind}.json"));
        if p.is_file() {
            let cands: CandidatesFile = read_json(&p)?;
            let (t1, t5) = pipeline::candidate_error_rates(&cands.sets, &gt);
            metrics.baselines.insert(kind.to_string(), (t1, t5));
            text.push_str(&format!(
                "{kind:TABLE$} top-1 {:.1}%, top-5 {:.1}%\n",
                t1 * 100.0,
                t5 * 100.0,
                TABLE = 20
            ));
        }
    }
    if metrics.error_rate.is_none() && metrics.top1_error.is_none() {
        return Err(CliError::bad_input(
            "nothing to evaluate: run candidates and/or solve first",
        ));
    }
    write_json(&lc.output_dir.join("metrics.json"), &metrics)?;
    let mut csv = String::from("metric,value\n");
    if let Some(e) = metrics.error_rate {
        csv.push_str(&format!("error_rate,{e}\n"));
    }
    if let (Some(a), Some(b)) = (metrics.top1_error, metrics.top5_error) {
        csv.push_str(&format!("top1_error,{a}\ntop5_error,{b}\n"));
    }
    for (k, (a, b)) in &metrics.baselines {
        csv.push_str(&format!("{k}_top1,{a}\n{k}_top5,{b}\n"));
    }
    fs::write(lc.output_dir.join("metrics.csv"), csv)?;
    print!("{text}");
    std::io::stdout().flush().ok();
    Ok(())
}
