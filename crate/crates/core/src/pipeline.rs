//! End-to-end orchestration shared by the CLI and the benchmark harness:
//! context construction for generated scenes, candidate search over scan
//! sets, model assembly and solving, and the seeded benchmark matrix.

use serde::{Deserialize, Serialize};

use crate::energy::{
    scan_pair_potential, Placement, PotentialWeights, UnaryEvaluator, UnaryKind,
};
use crate::error::{Error, Result};
use crate::floorplan::{make_context, DoorTemplateSpec, FloorplanContext, FloorplanParams, RulerSpec};
use crate::scanprep::ScanEvidence;
use crate::search::{candidate_search, CandidateSet, SearchParams};
use crate::solver::{assemble_model, trws_solve, AblationSwitches, SolveResult};
use crate::synth::{self, Scene, SceneSpec};

/// Everything `align` needs besides the data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlignConfig {
    pub weights: PotentialWeights,
    pub switches: AblationSwitches,
    pub kind: UnaryKind,
    pub max_candidates: usize,
    pub prune_outside_frac: f64,
    pub max_iters: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            weights: PotentialWeights::default(),
            switches: AblationSwitches::default(),
            kind: UnaryKind::Ours,
            max_candidates: crate::search::MAX_CANDIDATES,
            prune_outside_frac: crate::search::PRUNE_OUTSIDE_FRACTION,
            max_iters: crate::solver::DEFAULT_MAX_ITERS,
        }
    }
}

/// Energy diagnostics for a solved scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    pub scan_to_floor: f64,
    pub scan_to_scan: f64,
    pub coverage: f64,
    pub per_scan_average: f64,
    pub per_scan_unary: Vec<(String, f64)>,
}

/// Output of the full alignment pass.
#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub candidate_sets: Vec<CandidateSet>,
    pub rejected: Vec<String>,
    pub solve: SolveResult,
    pub placements: Vec<(String, Placement)>,
    pub report: EnergyReport,
}

impl AlignConfig {
    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            weights: self.weights,
            kind: self.kind,
            max_candidates: self.max_candidates,
            prune_outside_frac: self.prune_outside_frac,
        }
    }
}

/// Search candidates for every scan; unplaceable scans land in `rejected`.
pub fn search_all(
    ctx: &FloorplanContext,
    scans: &[(String, ScanEvidence)],
    cfg: &AlignConfig,
) -> Result<(Vec<CandidateSet>, Vec<String>)> {
    let params = cfg.search_params();
    let mut sets = Vec::new();
    let mut rejected = Vec::new();
    for (id, ev) in scans {
        match candidate_search(ctx, ev, &params, id) {
            Ok(set) => sets.push(set),
            Err(Error::NoCandidates(_)) => rejected.push(id.clone()),
            Err(e) => return Err(e),
        }
    }
    Ok((sets, rejected))
}

/// Assemble and solve the placement MRF for already-searched candidates.
pub fn solve_sets(
    ctx: &FloorplanContext,
    scans: &[(String, ScanEvidence)],
    sets: &[CandidateSet],
    cfg: &AlignConfig,
) -> Result<(SolveResult, Vec<(String, Placement)>, EnergyReport)> {
    let by_id: std::collections::BTreeMap<&str, &ScanEvidence> =
        scans.iter().map(|(id, ev)| (id.as_str(), ev)).collect();
    let ordered: Vec<&ScanEvidence> = sets
        .iter()
        .map(|s| {
            by_id
                .get(s.scan_id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("no scan data for {}", s.scan_id)))
        })
        .collect::<Result<_>>()?;
    let model = assemble_model(&ordered, sets, ctx, &cfg.weights, &cfg.switches, cfg.kind)?;
    let solve = trws_solve(&model, cfg.max_iters);
    let placements: Vec<(String, Placement)> = sets
        .iter()
        .zip(&solve.assignment)
        .map(|(set, &l)| (set.scan_id.clone(), set.candidates[l].placement()))
        .collect();

    // term breakdown at the final assignment
    let mut sf = 0.0;
    let mut per_scan_unary = Vec::new();
    for (scan, (id, pl)) in ordered.iter().zip(&placements) {
        let u = if cfg.switches.use_sf {
            let ev = UnaryEvaluator::new(ctx, scan, &cfg.weights, cfg.kind)?;
            ev.eval(pl)?
        } else {
            0.0
        };
        sf += u;
        per_scan_unary.push((id.clone(), u));
    }
    let mut ss = 0.0;
    if cfg.switches.use_ss && cfg.weights.w_ss != 0.0 {
        for i in 0..ordered.len() {
            for j in i + 1..ordered.len() {
                ss += cfg.weights.w_ss
                    * scan_pair_potential(
                        ordered[i],
                        &placements[i].1,
                        ordered[j],
                        &placements[j].1,
                    );
            }
        }
    }
    let coverage = solve.energy - sf - ss;
    let report = EnergyReport {
        total: solve.energy,
        scan_to_floor: sf,
        scan_to_scan: ss,
        coverage,
        per_scan_average: solve.energy / sets.len().max(1) as f64,
        per_scan_unary,
    };
    Ok((solve, placements, report))
}

/// Candidate search plus MRF solve in one call.
pub fn align(
    ctx: &FloorplanContext,
    scans: &[(String, ScanEvidence)],
    cfg: &AlignConfig,
) -> Result<AlignOutcome> {
    let (sets, rejected) = search_all(ctx, scans, cfg)?;
    if sets.is_empty() {
        return Err(Error::NoCandidates("every scan was rejected".into()));
    }
    let (solve, placements, report) = solve_sets(ctx, scans, &sets, cfg)?;
    Ok(AlignOutcome {
        candidate_sets: sets,
        rejected,
        solve,
        placements,
        report,
    })
}

/// A generated scene's ruler: two pixels 100 px apart on the x axis.
pub fn scene_ruler(meters_per_pixel: f64) -> RulerSpec {
    RulerSpec {
        ax: 0.0,
        ay: 0.0,
        bx: 100.0,
        by: 0.0,
        meters: 100.0 * meters_per_pixel,
    }
}

/// Floorplan context for a generated scene, through the real preprocessing.
pub fn scene_context(scene: &Scene) -> Result<FloorplanContext> {
    let ruler = scene_ruler(scene.meters_per_pixel);
    let door = DoorTemplateSpec {
        bbox: scene.door_bbox,
        score_threshold: scene.door_threshold,
    };
    make_context(&scene.floorplan, &ruler, &door, &FloorplanParams::default())
}

/// The weight set used by the seeded benchmarks.
///
/// The scan-to-scan reward is damped and the coverage term raised relative
/// to it: coverage totals are normalized by the contested pixel count, so a
/// unit of coverage is far smaller than a unit of pairwise reward, while the
/// pairwise 0/0.5/1 approximation over-charges assignments whenever
/// candidates spread across rooms, which caps how large the coverage weight
/// may get before it distorts the unary ordering.
pub fn benchmark_weights() -> PotentialWeights {
    PotentialWeights {
        w_semantic: 1.0,
        w_geometric: 1.0,
        w_ss: 0.1,
        w_cov: 0.5,
    }
}

/// Standard 20-room benchmark scene.
pub fn standard_scene_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        rooms: 20,
        grid: (4, 5),
        room_size_range: (3.0, 6.0),
        door_width_m: 0.9,
        wall_thickness_px: 2,
        clutter_density: 0.05,
        dropout: 0.1,
        duplicate_rooms: 0,
        meters_per_pixel: 0.05,
        canvas_px: None,
    }
}

/// Ambiguity benchmark: four forced-identical rooms among twelve.
pub fn ambiguity_scene_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        rooms: 12,
        grid: (3, 4),
        room_size_range: (3.0, 5.0),
        door_width_m: 0.9,
        wall_thickness_px: 2,
        clutter_density: 0.02,
        dropout: 0.05,
        duplicate_rooms: 4,
        meters_per_pixel: 0.05,
        canvas_px: None,
    }
}

/// Small scenes whose floorplans stay at or below 128x128 pixels.
pub fn small_scene_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        rooms: 4,
        grid: (2, 2),
        room_size_range: (2.5, 4.0),
        door_width_m: 0.9,
        wall_thickness_px: 2,
        clutter_density: 0.03,
        dropout: 0.05,
        duplicate_rooms: 0,
        meters_per_pixel: 0.1,
        canvas_px: None,
    }
}

/// Rank of the ground-truth placement in a candidate set, if present.
pub fn candidate_hit_rank(
    set: &CandidateSet,
    truth: &Placement,
    tolerance_px: i32,
) -> Option<usize> {
    set.candidates
        .iter()
        .position(|c| synth::placement_matches(&c.placement(), truth, tolerance_px))
}

/// Top-1/Top-5 candidate error rates against the ground truth. Scans without
/// a candidate set count as misses.
pub fn candidate_error_rates(
    sets: &[CandidateSet],
    gt: &crate::synth::GroundTruth,
) -> (f64, f64) {
    let n = gt.entries.len().max(1);
    let mut top1_miss = 0usize;
    let mut top5_miss = 0usize;
    for e in &gt.entries {
        match sets.iter().find(|s| s.scan_id == e.scan_id) {
            None => {
                top1_miss += 1;
                top5_miss += 1;
            }
            Some(set) => match candidate_hit_rank(set, &e.placement, gt.tolerance_px) {
                Some(0) => {}
                Some(_) => top1_miss += 1,
                None => {
                    top1_miss += 1;
                    top5_miss += 1;
                }
            },
        }
    }
    (top1_miss as f64 / n as f64, top5_miss as f64 / n as f64)
}

/// Placement error rate of an alignment outcome, counting rejected scans as
/// errors.
pub fn outcome_error_rate(
    outcome: &AlignOutcome,
    gt: &crate::synth::GroundTruth,
) -> Result<f64> {
    let n = gt.entries.len();
    let mut wrong = outcome.rejected.len();
    for (id, pl) in &outcome.placements {
        let entry = gt
            .entries
            .iter()
            .find(|e| &e.scan_id == id)
            .ok_or_else(|| Error::invalid(format!("unknown scan id {id}")))?;
        if !synth::placement_matches(pl, &entry.placement, gt.tolerance_px) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / n.max(1) as f64)
}

/// One standard-benchmark seed: candidate quality per unary metric and final
/// error per potential combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StandardRow {
    pub seed: u64,
    pub ours_top1: f64,
    pub ours_top5: f64,
    pub naive_top1: f64,
    pub naive_top5: f64,
    pub masked_top1: f64,
    pub masked_top5: f64,
    pub dt_top1: f64,
    pub dt_top5: f64,
    pub err_sf: f64,
    pub err_sf_ss: f64,
    pub err_all: f64,
}

/// One ambiguity-benchmark seed: error and stacking with and without the
/// coverage potential.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmbiguityRow {
    pub seed: u64,
    pub err_sf_ss: f64,
    pub err_all: f64,
    pub stack_sf_ss: usize,
    pub stack_all: usize,
}

pub const STACKING_RADIUS_PX: i32 = 5;

fn switches_for(use_ss: bool, use_cov: bool) -> AblationSwitches {
    AblationSwitches {
        use_sf: true,
        use_ss,
        use_cov,
        coverage_singleton_unary: true,
    }
}

fn solve_with(
    ctx: &FloorplanContext,
    scans: &[(String, ScanEvidence)],
    sets: &[crate::search::CandidateSet],
    rejected: usize,
    switches: AblationSwitches,
    gt: &crate::synth::GroundTruth,
) -> Result<(f64, Vec<(String, Placement)>)> {
    let cfg = AlignConfig {
        weights: benchmark_weights(),
        switches,
        ..Default::default()
    };
    let (_, placements, _) = solve_sets(ctx, scans, sets, &cfg)?;
    let mut wrong = rejected;
    for (id, pl) in &placements {
        let entry = gt
            .entries
            .iter()
            .find(|e| &e.scan_id == id)
            .ok_or_else(|| Error::invalid(format!("unknown scan id {id}")))?;
        if !synth::placement_matches(pl, &entry.placement, gt.tolerance_px) {
            wrong += 1;
        }
    }
    Ok((wrong as f64 / gt.entries.len().max(1) as f64, placements))
}

/// Run one seed of the standard benchmark.
pub fn bench_standard_seed(seed: u64) -> Result<StandardRow> {
    let scene = synth::gen_scene(&standard_scene_spec(seed))?;
    let ctx = scene_context(&scene)?;
    let base_cfg = AlignConfig {
        weights: benchmark_weights(),
        ..Default::default()
    };

    let mut rates = Vec::new();
    let mut ours_sets = None;
    for kind in [
        UnaryKind::Ours,
        UnaryKind::NaiveSsd,
        UnaryKind::MaskedSsd,
        UnaryKind::DistanceTransform,
    ] {
        let cfg = AlignConfig { kind, ..base_cfg };
        let (sets, rejected) = search_all(&ctx, &scene.scans, &cfg)?;
        let (t1, t5) = candidate_error_rates(&sets, &scene.gt);
        if kind == UnaryKind::Ours {
            ours_sets = Some((sets, rejected));
        }
        rates.push((t1, t5));
    }
    let (sets, rejected) = ours_sets.unwrap();
    let (err_sf, _) = solve_with(
        &ctx,
        &scene.scans,
        &sets,
        rejected.len(),
        switches_for(false, false),
        &scene.gt,
    )?;
    let (err_sf_ss, _) = solve_with(
        &ctx,
        &scene.scans,
        &sets,
        rejected.len(),
        switches_for(true, false),
        &scene.gt,
    )?;
    let (err_all, _) = solve_with(
        &ctx,
        &scene.scans,
        &sets,
        rejected.len(),
        switches_for(true, true),
        &scene.gt,
    )?;
    Ok(StandardRow {
        seed,
        ours_top1: rates[0].0,
        ours_top5: rates[0].1,
        naive_top1: rates[1].0,
        naive_top5: rates[1].1,
        masked_top1: rates[2].0,
        masked_top5: rates[2].1,
        dt_top1: rates[3].0,
        dt_top5: rates[3].1,
        err_sf,
        err_sf_ss,
        err_all,
    })
}

/// Run one seed of the ambiguity benchmark.
pub fn bench_ambiguity_seed(seed: u64) -> Result<AmbiguityRow> {
    let scene = synth::gen_scene(&ambiguity_scene_spec(seed))?;
    let ctx = scene_context(&scene)?;
    let cfg = AlignConfig {
        weights: benchmark_weights(),
        ..Default::default()
    };
    let (sets, rejected) = search_all(&ctx, &scene.scans, &cfg)?;
    let (err_sf_ss, placed_sf_ss) = solve_with(
        &ctx,
        &scene.scans,
        &sets,
        rejected.len(),
        switches_for(true, false),
        &scene.gt,
    )?;
    let (err_all, placed_all) = solve_with(
        &ctx,
        &scene.scans,
        &sets,
        rejected.len(),
        switches_for(true, true),
        &scene.gt,
    )?;
    Ok(AmbiguityRow {
        seed,
        err_sf_ss,
        err_all,
        stack_sf_ss: synth::stacking_count(&placed_sf_ss, STACKING_RADIUS_PX),
        stack_all: synth::stacking_count(&placed_all, STACKING_RADIUS_PX),
    })
}
