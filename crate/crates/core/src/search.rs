//! Hierarchical candidate search: per scan and rotation, walk a 5-level
//! image pyramid from an exhaustive coarse sweep down to pixel-exact
//! placements, keeping thresholded non-local score minima at every level.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{FloorLayers, Placement, PotentialWeights, UnaryEvaluator, UnaryKind};
use crate::error::{Error, Result};
use crate::floorplan::{FloorplanContext, DILATION_KERNEL};
use crate::raster::{BinaryMask, GrayImage, PoolMode};
use crate::scanprep::ScanEvidence;

pub const PYRAMID_LEVELS: usize = 5;
pub const MAX_CANDIDATES: usize = 5;
pub const PRUNE_OUTSIDE_FRACTION: f64 = 0.3;
const MIN_TOP_SIDE: usize = 16;
/// Pooling stops well before the scan shrinks to the dilation kernel's
/// scale: close to it the in-building costs saturate into flat valleys and
/// the coarse minimum drifts further from the true basin than the descent
/// window can recover.
const MIN_SCAN_TOP_SIDE: usize = 8 * DILATION_KERNEL;
const NMS_WINDOW_DIVISOR: f64 = 80.0;

/// Search configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub weights: PotentialWeights,
    pub kind: UnaryKind,
    pub max_candidates: usize,
    pub prune_outside_frac: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams {
            weights: PotentialWeights::default(),
            kind: UnaryKind::Ours,
            max_candidates: MAX_CANDIDATES,
            prune_outside_frac: PRUNE_OUTSIDE_FRACTION,
        }
    }
}

/// One pyramid level: pooled floorplan layers plus the pooled scan pack.
pub struct PyramidLevel {
    pub clean: GrayImage,
    pub dilated: GrayImage,
    pub building: BinaryMask,
    pub floor_doors: BinaryMask,
    pub scan: ScanEvidence,
    pub meters_per_pixel: f64,
}

/// Up to five levels, level 0 being the source rasters. Small floorplans get
/// fewer levels so the top of the pyramid keeps at least 16 pixels per side;
/// below that the dilated layers saturate and every cost ties.
pub struct PyramidStack {
    pub levels: Vec<PyramidLevel>,
}

/// A placement with its unary score.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoredPlacement {
    pub k: u8,
    pub tx: i32,
    pub ty: i32,
    pub score: f64,
}

impl ScoredPlacement {
    pub fn placement(&self) -> Placement {
        Placement::new(self.k, self.tx, self.ty)
    }
}

/// Up to five scored placements for one scan, ascending by score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    pub scan_id: String,
    pub candidates: Vec<ScoredPlacement>,
}

/// Per-level evaluation counters, for workload checks and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct SearchStats {
    /// Unary evaluations per level, summed over rotations (index = level).
    pub evals: Vec<usize>,
    /// Surviving minima per level, summed over rotations.
    pub minima: Vec<usize>,
}

/// Build the image pyramid for one floorplan/scan pairing. Evidence, door
/// and mask layers are max-pooled; the floorplan is min-pooled so ink
/// survives; the dilated floorplan is recomputed at every level.
pub fn build_pyramids(ctx: &FloorplanContext, scan: &ScanEvidence) -> Result<PyramidStack> {
    if (scan.meters_per_pixel - ctx.meters_per_pixel).abs() > 1e-9 {
        return Err(Error::invalid(
            "scan and floorplan must share meters_per_pixel",
        ));
    }
    if ctx.clean.width().min(ctx.clean.height()) < MIN_TOP_SIDE {
        return Err(Error::TooSmallInput(format!(
            "floorplan is {}x{}; need at least {} pixels per side",
            ctx.clean.width(),
            ctx.clean.height(),
            MIN_TOP_SIDE
        )));
    }
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    levels.push(PyramidLevel {
        clean: ctx.clean.clone(),
        dilated: ctx.dilated.clone(),
        building: ctx.building.clone(),
        floor_doors: ctx.doors.clone(),
        scan: scan.clone(),
        meters_per_pixel: ctx.meters_per_pixel,
    });
    for l in 1..PYRAMID_LEVELS {
        let prev = &levels[l - 1];
        let next_w = prev.clean.width().div_ceil(2);
        let next_h = prev.clean.height().div_ceil(2);
        if next_w.min(next_h) < MIN_TOP_SIDE {
            break;
        }
        let scan_side = prev
            .scan
            .point_ev
            .width()
            .min(prev.scan.point_ev.height())
            .div_ceil(2);
        if scan_side < MIN_SCAN_TOP_SIDE {
            break;
        }
        let clean = prev.clean.pool2x2(PoolMode::Min);
        let dilated = clean.inverted().dilate(DILATION_KERNEL)?;
        let building = prev.building.pool2x2_any();
        let floor_doors = prev.floor_doors.pool2x2_any();
        let scan = ScanEvidence {
            point_ev: prev.scan.point_ev.pool2x2(PoolMode::Max),
            free_space: prev.scan.free_space.pool2x2_any(),
            doors: prev.scan.doors.pool2x2_any(),
            origin_px: (prev.scan.origin_px.0 / 2, prev.scan.origin_px.1 / 2),
            meters_per_pixel: prev.meters_per_pixel * 2.0,
        };
        levels.push(PyramidLevel {
            clean,
            dilated,
            building,
            floor_doors,
            scan,
            meters_per_pixel: prev.meters_per_pixel * 2.0,
        });
        let _ = l;
    }
    Ok(PyramidStack { levels })
}

/// Positions that are strict minima within a Chebyshev `window` of every
/// other evaluated position and score strictly below `threshold`. Equal
/// scores are resolved in favor of the earlier (y, x) position.
pub fn nonlocal_min_suppress(
    scores: &[((i32, i32), f64)],
    window: usize,
    threshold: f64,
) -> Vec<((i32, i32), f64)> {
    let mut entries: Vec<((i32, i32), f64)> = scores.to_vec();
    entries.sort_by_key(|((x, y), _)| (*y, *x));
    let lookup: HashMap<(i32, i32), f64> = entries.iter().cloned().collect();
    let r = window as i32;
    let mut out = Vec::new();
    'next: for &((x, y), s) in &entries {
        if s >= threshold {
            continue;
        }
        for dy in -r..=r {
            for dx in -r..=r {
                if dx == 0 && dy == 0 {
                    continue;
                }
                if let Some(&sn) = lookup.get(&(x + dx, y + dy)) {
                    let earlier = (y + dy, x + dx) < (y, x);
                    if sn < s || (sn == s && earlier) {
                        continue 'next;
                    }
                }
            }
        }
        out.push(((x, y), s));
    }
    out
}

/// The 37-point refinement pattern: the full 5x5 interior of a 7x7 window
/// plus every other perimeter cell, walking clockwise from the corner.
fn children_pattern() -> Vec<(i32, i32)> {
    let mut out = Vec::with_capacity(37);
    for dy in -2i32..=2 {
        for dx in -2i32..=2 {
            out.push((dx, dy));
        }
    }
    let mut perimeter = Vec::with_capacity(24);
    for x in -3i32..=3 {
        perimeter.push((x, -3));
    }
    for y in -2i32..=3 {
        perimeter.push((3, y));
    }
    for x in (-3i32..=2).rev() {
        perimeter.push((x, 3));
    }
    for y in (-2i32..=2).rev() {
        perimeter.push((-3, y));
    }
    debug_assert_eq!(perimeter.len(), 24);
    for (i, p) in perimeter.into_iter().enumerate() {
        if i % 2 == 0 {
            out.push(p);
        }
    }
    debug_assert_eq!(out.len(), 37);
    out
}

fn mean_std(scores: &[((i32, i32), f64)]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mean = scores.iter().map(|(_, s)| s).sum::<f64>() / n;
    let var = scores.iter().map(|(_, s)| (s - mean) * (s - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Score every listed translation, skipping placements pruned by the
/// building-mask rule. Parallel over positions, deterministic output order.
fn score_positions(
    evaluator: &UnaryEvaluator,
    k: u8,
    positions: &[(i32, i32)],
    prune_frac: f64,
) -> Vec<((i32, i32), f64)> {
    positions
        .par_iter()
        .map(|&(tx, ty)| {
            let pl = Placement::new(k, tx, ty);
            if evaluator.outside_building_fraction(&pl) > prune_frac {
                None
            } else {
                Some(((tx, ty), evaluator.eval(&pl).expect("nonzero point evidence")))
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Run the full hierarchical search for one scan.
pub fn candidate_search(
    ctx: &FloorplanContext,
    scan: &ScanEvidence,
    params: &SearchParams,
    scan_id: &str,
) -> Result<CandidateSet> {
    candidate_search_with_stats(ctx, scan, params, scan_id).map(|(set, _)| set)
}

pub fn candidate_search_with_stats(
    ctx: &FloorplanContext,
    scan: &ScanEvidence,
    params: &SearchParams,
    scan_id: &str,
) -> Result<(CandidateSet, SearchStats)> {
    let stack = build_pyramids(ctx, scan)?;
    let n_levels = stack.levels.len();
    let top = n_levels - 1;
    let window0 = (ctx.bbox.w + ctx.bbox.h) as f64 / NMS_WINDOW_DIVISOR;
    let window_at = |level: usize| -> usize {
        ((window0 / (1u32 << level) as f64).round() as usize).max(1)
    };
    let evaluators: Vec<UnaryEvaluator> = stack
        .levels
        .iter()
        .map(|lvl| {
            UnaryEvaluator::from_layers(
                FloorLayers {
                    clean: &lvl.clean,
                    dilated: &lvl.dilated,
                    doors: &lvl.floor_doors,
                    building: &lvl.building,
                },
                &lvl.scan,
                &params.weights,
                params.kind,
            )
        })
        .collect::<Result<_>>()?;

    let mut stats = SearchStats {
        evals: vec![0; n_levels],
        minima: vec![0; n_levels],
    };
    let pattern = children_pattern();
    let mut pooled: Vec<ScoredPlacement> = Vec::new();

    for k in 0..4u8 {
        // Exhaustive sweep at the top level.
        let lvl = &stack.levels[top];
        let mut positions = Vec::with_capacity(lvl.clean.width() * lvl.clean.height());
        for ty in 0..lvl.clean.height() as i32 {
            for tx in 0..lvl.clean.width() as i32 {
                positions.push((tx, ty));
            }
        }
        let mut scored = score_positions(&evaluators[top], k, &positions, params.prune_outside_frac);
        stats.evals[top] += scored.len();
        if scored.is_empty() {
            continue;
        }
        let (mean, std) = mean_std(&scored);
        let mut minima = nonlocal_min_suppress(&scored, window_at(top), mean - std);
        stats.minima[top] += minima.len();

        for level in (0..top).rev() {
            if minima.is_empty() {
                break;
            }
            let lvl = &stack.levels[level];
            let (w, h) = (lvl.clean.width() as i32, lvl.clean.height() as i32);
            let mut children: BTreeSet<(i32, i32)> = BTreeSet::new();
            for &((mx, my), _) in &minima {
                for &(dx, dy) in &pattern {
                    let (cx, cy) = (2 * mx + dx, 2 * my + dy);
                    if cx >= 0 && cy >= 0 && cx < w && cy < h {
                        children.insert((cx, cy));
                    }
                }
            }
            let positions: Vec<(i32, i32)> = children.into_iter().collect();
            scored = score_positions(&evaluators[level], k, &positions, params.prune_outside_frac);
            stats.evals[level] += scored.len();
            if scored.is_empty() {
                minima.clear();
                break;
            }
            let (mean, std) = mean_std(&scored);
            minima = nonlocal_min_suppress(&scored, window_at(level), mean - std);
            stats.minima[level] += minima.len();
        }

        for ((tx, ty), score) in minima {
            pooled.push(ScoredPlacement { k, tx, ty, score });
        }
    }

    // Best distinct placements across rotations; two placements within one
    // Chebyshev pixel at the same rotation are duplicates.
    pooled.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap()
            .then(a.k.cmp(&b.k))
            .then(a.ty.cmp(&b.ty))
            .then(a.tx.cmp(&b.tx))
    });
    let mut kept: Vec<ScoredPlacement> = Vec::new();
    for c in pooled {
        if kept.len() >= params.max_candidates {
            break;
        }
        let dup = kept.iter().any(|e| {
            e.k == c.k && (e.tx - c.tx).abs() <= 1 && (e.ty - c.ty).abs() <= 1
        });
        if !dup {
            kept.push(c);
        }
    }
    if kept.is_empty() {
        return Err(Error::NoCandidates(scan_id.to_string()));
    }
    Ok((
        CandidateSet {
            scan_id: scan_id.to_string(),
            candidates: kept,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{
        make_context, DoorTemplateSpec, FloorplanParams, PixelRect, RulerSpec,
    };

    fn fixture_context(floor: &GrayImage) -> FloorplanContext {
        let ruler = RulerSpec {
            ax: 0.0,
            ay: 0.0,
            bx: 10.0,
            by: 0.0,
            meters: 1.0,
        };
        // asymmetric corner mark so the door template has ink to crop;
        // clutter removal is disabled to keep it
        let mut floor = floor.clone();
        floor.set(1, 1, 0.0);
        floor.set(2, 1, 0.0);
        floor.set(1, 2, 0.0);
        floor.set(3, 3, 0.0);
        let door = DoorTemplateSpec {
            bbox: PixelRect {
                x: 0,
                y: 0,
                w: 5,
                h: 5,
            },
            score_threshold: 0.995,
        };
        let params = FloorplanParams {
            clutter_min_area_m2: 0.0,
            ..Default::default()
        };
        make_context(&floor, &ruler, &door, &params).unwrap()
    }

    fn draw_room(img: &mut GrayImage, x0: usize, y0: usize, w: usize, h: usize) {
        for x in x0..x0 + w {
            img.set(x, y0, 0.0);
            img.set(x, y0 + h - 1, 0.0);
        }
        for y in y0..y0 + h {
            img.set(x0, y, 0.0);
            img.set(x0 + w - 1, y, 0.0);
        }
    }

    fn ring_scan(w: usize, h: usize, scanner: (i32, i32)) -> ScanEvidence {
        let (rw, rh) = (w + 4, h + 4);
        let mut p = GrayImage::new(rw, rh, 0.0);
        let mut fs = BinaryMask::new(rw, rh, false);
        for x in 2..w + 2 {
            p.set(x, 2, 1.0);
            p.set(x, h + 1, 1.0);
        }
        for y in 2..h + 2 {
            p.set(2, y, 1.0);
            p.set(w + 1, y, 1.0);
        }
        for y in 3..h + 1 {
            for x in 3..w + 1 {
                fs.set(x, y, true);
            }
        }
        ScanEvidence {
            point_ev: p,
            free_space: fs,
            doors: BinaryMask::new(rw, rh, false),
            origin_px: scanner,
            meters_per_pixel: 0.1,
        }
    }

    #[test]
    fn pyramid_dims_halve_five_times() {
        let mut floor = GrayImage::new(512, 512, 1.0);
        draw_room(&mut floor, 10, 10, 200, 150);
        let ctx = fixture_context(&floor);
        let scan = ring_scan(200, 150, (30, 27));
        let stack = build_pyramids(&ctx, &scan).unwrap();
        let dims: Vec<usize> = stack.levels.iter().map(|l| l.clean.width()).collect();
        assert_eq!(dims, vec![512, 256, 128, 64, 32]);
    }

    #[test]
    fn ink_and_evidence_survive_to_the_top() {
        let mut floor = GrayImage::new(256, 256, 1.0);
        draw_room(&mut floor, 50, 50, 100, 80);
        floor.set(200, 200, 0.0); // lone ink pixel
        let ctx = fixture_context(&floor);
        let mut scan = ring_scan(100, 80, (30, 27));
        scan.point_ev.set(5, 5, 1.0);
        let stack = build_pyramids(&ctx, &scan).unwrap();
        let top = stack.levels.last().unwrap();
        let f = 1usize << (stack.levels.len() - 1);
        // min-pooling keeps the lone ink pixel dark
        assert_eq!(top.clean.get(200 / f, 200 / f), 0.0);
        // max-pooling keeps the lone evidence pixel bright
        assert!(top.scan.point_ev.get(5 / f, 5 / f) >= 1.0 - 1e-6);
    }

    #[test]
    fn tiny_floorplan_is_rejected() {
        let mut floor = GrayImage::new(12, 24, 1.0);
        draw_room(&mut floor, 2, 6, 8, 14);
        let ctx = fixture_context(&floor);
        let scan = ring_scan(6, 10, (5, 10));
        assert!(matches!(
            build_pyramids(&ctx, &scan),
            Err(Error::TooSmallInput(_))
        ));
    }

    #[test]
    fn small_floorplans_get_shallower_pyramids() {
        let mut floor = GrayImage::new(120, 120, 1.0);
        draw_room(&mut floor, 20, 20, 40, 30);
        let ctx = fixture_context(&floor);
        let scan = ring_scan(40, 30, (24, 19));
        let stack = build_pyramids(&ctx, &scan).unwrap();
        // the 34-px scan raster caps the depth at two levels
        assert_eq!(stack.levels.len(), 2);
        assert!(stack.levels.last().unwrap().clean.width() >= 16);
        assert!(
            stack
                .levels
                .last()
                .unwrap()
                .scan
                .point_ev
                .height()
                >= MIN_SCAN_TOP_SIDE
        );
    }

    #[test]
    fn nms_constant_field_is_empty() {
        let scores: Vec<((i32, i32), f64)> =
            (0..16).map(|i| ((i % 4, i / 4), 2.5)).collect();
        let (mean, std) = mean_std(&scores);
        let out = nonlocal_min_suppress(&scores, 2, mean - std);
        assert!(out.is_empty());
    }

    #[test]
    fn nms_single_dip_survives() {
        let mut scores: Vec<((i32, i32), f64)> = Vec::new();
        for y in 0..8 {
            for x in 0..8 {
                scores.push(((x, y), 1.0));
            }
        }
        scores[27].1 = 0.1; // (3,3)
        let (mean, std) = mean_std(&scores);
        let out = nonlocal_min_suppress(&scores, 3, mean - std);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, (3, 3));
    }

    #[test]
    fn nms_keeps_only_the_deeper_of_two_close_dips() {
        let mut scores: Vec<((i32, i32), f64)> = Vec::new();
        for y in 0..16 {
            for x in 0..16 {
                scores.push(((x, y), 1.0));
            }
        }
        scores[(5 * 16 + 4) as usize].1 = 0.2; // (4,5)
        scores[(5 * 16 + 7) as usize].1 = 0.1; // (7,5), 3 px away
        let (mean, std) = mean_std(&scores);
        let out = nonlocal_min_suppress(&scores, 5, mean - std);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, (7, 5));
    }

    fn two_room_setup() -> (FloorplanContext, ScanEvidence, Placement) {
        let mut floor = GrayImage::new(320, 256, 1.0);
        draw_room(&mut floor, 40, 40, 88, 68); // unique shape
        draw_room(&mut floor, 180, 60, 60, 120); // different shape
        let ctx = fixture_context(&floor);
        // scan of room 1: ring matching its 88x68 wall rectangle
        let scan = ring_scan(88, 68, (46, 37));
        // evidence pixel (2,2) corresponds to floorplan (40,40):
        // t = (40,40) + (origin - (2,2))
        let gt = Placement::new(0, 40 + 46 - 2, 40 + 37 - 2);
        (ctx, scan, gt)
    }

    #[test]
    fn search_recovers_the_unique_room() {
        let (ctx, scan, gt) = two_room_setup();
        let params = SearchParams::default();
        let (set, stats) = candidate_search_with_stats(&ctx, &scan, &params, "s0").unwrap();
        let best = &set.candidates[0];
        assert_eq!(best.k, gt.k);
        assert!(
            (best.tx - gt.tx).abs() <= 2 && (best.ty - gt.ty).abs() <= 2,
            "best=({},{}) gt=({},{})",
            best.tx,
            best.ty,
            gt.tx,
            gt.ty
        );
        // workload bound below the top level
        for level in 0..stats.evals.len() - 1 {
            assert!(
                stats.evals[level] <= 37 * stats.minima[level + 1],
                "level {level}: {} evals > 37 * {} minima",
                stats.evals[level],
                stats.minima[level + 1]
            );
        }
        // scores ascending and candidates distinct
        for w in set.candidates.windows(2) {
            assert!(w[0].score <= w[1].score);
            assert!(
                !(w[0].k == w[1].k
                    && (w[0].tx - w[1].tx).abs() <= 1
                    && (w[0].ty - w[1].ty).abs() <= 1)
            );
        }
    }

    #[test]
    fn candidates_pass_the_building_rule_and_match_direct_unary() {
        let (ctx, scan, _) = two_room_setup();
        let params = SearchParams::default();
        let set = candidate_search(&ctx, &scan, &params, "s0").unwrap();
        let ev = UnaryEvaluator::new(&ctx, &scan, &params.weights, params.kind).unwrap();
        for c in &set.candidates {
            let pl = c.placement();
            assert!(ev.outside_building_fraction(&pl) <= PRUNE_OUTSIDE_FRACTION);
            let direct = ev.eval(&pl).unwrap();
            assert!(
                (direct - c.score).abs() < 1e-12,
                "stale score: {} vs {}",
                c.score,
                direct
            );
        }
    }

    #[test]
    fn search_is_deterministic() {
        let (ctx, scan, _) = two_room_setup();
        let params = SearchParams::default();
        let a = candidate_search(&ctx, &scan, &params, "s0").unwrap();
        let b = candidate_search(&ctx, &scan, &params, "s0").unwrap();
        assert_eq!(a.candidates.len(), b.candidates.len());
        for (x, y) in a.candidates.iter().zip(&b.candidates) {
            assert_eq!((x.k, x.tx, x.ty), (y.k, y.tx, y.ty));
            assert_eq!(x.score, y.score);
        }
    }

    #[test]
    fn twin_rooms_both_appear() {
        let mut floor = GrayImage::new(400, 200, 1.0);
        draw_room(&mut floor, 40, 40, 80, 60);
        draw_room(&mut floor, 240, 40, 80, 60);
        let ctx = fixture_context(&floor);
        let scan = ring_scan(80, 60, (42, 34));
        let params = SearchParams::default();
        let set = candidate_search(&ctx, &scan, &params, "s0").unwrap();
        let near = |tx: i32, want: i32| (tx - want).abs() <= 3;
        // gt translations for the two rooms (k = 0)
        let t1 = 40 + 42 - 2;
        let t2 = 240 + 42 - 2;
        let hit1 = set
            .candidates
            .iter()
            .any(|c| c.k == 0 && near(c.tx, t1));
        let hit2 = set
            .candidates
            .iter()
            .any(|c| c.k == 0 && near(c.tx, t2));
        assert!(hit1 && hit2, "candidates: {:?}", set.candidates);
    }
}
