//! Deterministic synthetic scenes: a rasterized floorplan with rooms, door
//! glyphs, symbol clutter, plus per-room evidence packs with controlled
//! noise and known ground-truth placements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::Placement;
use crate::error::{Error, Result};
use crate::floorplan::PixelRect;
use crate::raster::{BinaryMask, GrayImage};
use crate::scanprep::ScanEvidence;

/// Scene generation parameters. Scenes with the same spec are bit-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub rooms: usize,
    /// Grid layout (rows, cols); one room per cell at most.
    pub grid: (usize, usize),
    /// Room outer side lengths in meters (min, max).
    pub room_size_range: (f64, f64),
    pub door_width_m: f64,
    pub wall_thickness_px: usize,
    /// Fraction of free-space pixels turned into evidence speckle.
    pub clutter_density: f64,
    /// Per-pixel probability of losing wall evidence.
    pub dropout: f64,
    /// The first N rooms share geometry, door and scanner placement.
    pub duplicate_rooms: usize,
    pub meters_per_pixel: f64,
    /// Optional fixed canvas; the room grid is centered inside it.
    pub canvas_px: Option<(usize, usize)>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
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
}

/// True placement per scan plus the pass tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<GtEntry>,
    pub tolerance_px: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GtEntry {
    pub scan_id: String,
    pub placement: Placement,
}

pub const DEFAULT_TOLERANCE_PX: i32 = 3;
pub const DOOR_NCC_THRESHOLD: f64 = 0.8;

/// A generated scene.
pub struct Scene {
    pub floorplan: GrayImage,
    pub door_bbox: PixelRect,
    pub door_threshold: f64,
    pub scans: Vec<(String, ScanEvidence)>,
    pub gt: GroundTruth,
    pub meters_per_pixel: f64,
}

#[derive(Debug, Clone, Copy)]
struct DoorSpec {
    side: usize, // 0 N, 1 E, 2 S, 3 W
    along_frac: f64,
    hinge_left: bool,
}

#[derive(Debug, Clone, Copy)]
struct RoomLayout {
    w_px: usize,
    h_px: usize,
    door: DoorSpec,
    scanner_frac: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
struct PlacedRoom {
    x: usize,
    y: usize,
    layout: RoomLayout,
}

struct DoorGeometry {
    /// Gap rectangle cut out of the wall.
    gap: PixelRect,
    /// Hinge of the swing glyph, on the interior side of the gap.
    hinge: (i32, i32),
    along: (i32, i32),
    perp: (i32, i32),
    gap_px: usize,
    /// Wall-endpoint pixels flanking the gap, on the interior wall surface.
    flanks: [(i32, i32); 2],
}

fn door_geometry(room: &PlacedRoom, wt: usize, gap_px: usize) -> DoorGeometry {
    let (rx, ry) = (room.x as i32, room.y as i32);
    let (rw, rh) = (room.layout.w_px as i32, room.layout.h_px as i32);
    let d = room.layout.door;
    let wt = wt as i32;
    let g = gap_px as i32;
    // gap start along the wall, padded away from corners
    let place = |len: i32| -> i32 {
        let lo = wt + 3;
        let hi = len - wt - 3 - g;
        lo + ((hi - lo).max(0) as f64 * d.along_frac) as i32
    };
    let (gap, inner, along, perp) = match d.side {
        0 => {
            let gx = rx + place(rw);
            (
                PixelRect {
                    x: gx as usize,
                    y: ry as usize,
                    w: gap_px,
                    h: wt as usize,
                },
                ry + wt - 1,
                (1, 0),
                (0, 1),
            )
        }
        2 => {
            let gx = rx + place(rw);
            (
                PixelRect {
                    x: gx as usize,
                    y: (ry + rh - wt) as usize,
                    w: gap_px,
                    h: wt as usize,
                },
                ry + rh - wt,
                (1, 0),
                (0, -1),
            )
        }
        3 => {
            let gy = ry + place(rh);
            (
                PixelRect {
                    x: rx as usize,
                    y: gy as usize,
                    w: wt as usize,
                    h: gap_px,
                },
                rx + wt - 1,
                (0, 1),
                (1, 0),
            )
        }
        _ => {
            let gy = ry + place(rh);
            (
                PixelRect {
                    x: (rx + rw - wt) as usize,
                    y: gy as usize,
                    w: wt as usize,
                    h: gap_px,
                },
                rx + rw - wt,
                (0, 1),
                (-1, 0),
            )
        }
    };
    let horizontal = d.side == 0 || d.side == 2;
    let (a0, _a1) = if horizontal {
        (gap.x as i32, gap.x as i32 + g - 1)
    } else {
        (gap.y as i32, gap.y as i32 + g - 1)
    };
    let surf = inner; // interior wall surface coordinate on the across axis
    let flanks = if horizontal {
        [(a0 - 1, surf), (a0 + g, surf)]
    } else {
        [(surf, a0 - 1), (surf, a0 + g)]
    };
    // hinge just inside the room at the chosen jamb
    let interior_step = perp;
    let hinge_along = if d.hinge_left { a0 } else { a0 + g - 1 };
    let hinge = if horizontal {
        (hinge_along, surf + interior_step.1)
    } else {
        (surf + interior_step.0, hinge_along)
    };
    let along_signed = if d.hinge_left {
        along
    } else {
        (-along.0, -along.1)
    };
    DoorGeometry {
        gap,
        hinge,
        along: along_signed,
        perp,
        gap_px,
        flanks,
    }
}

fn ink(img: &mut GrayImage, x: i32, y: i32) {
    if img.in_bounds(x, y) {
        img.set(x as usize, y as usize, 0.0);
    }
}

fn draw_door_glyph(img: &mut GrayImage, geo: &DoorGeometry) {
    let g = geo.gap_px as f64;
    // leaf: straight line from the hinge into the room
    for t in 0..geo.gap_px as i32 {
        ink(
            img,
            geo.hinge.0 + geo.perp.0 * t,
            geo.hinge.1 + geo.perp.1 * t,
        );
    }
    // quarter arc from leaf tip to the far jamb
    let steps = (4 * geo.gap_px).max(12);
    for s in 0..=steps {
        let th = std::f64::consts::FRAC_PI_2 * s as f64 / steps as f64;
        let (c, sn) = (th.cos(), th.sin());
        let x = geo.hinge.0 as f64 + g * (c * geo.along.0 as f64 + sn * geo.perp.0 as f64);
        let y = geo.hinge.1 as f64 + g * (c * geo.along.1 as f64 + sn * geo.perp.1 as f64);
        ink(img, x.round() as i32, y.round() as i32);
    }
}

fn glyph_bbox(geo: &DoorGeometry, canvas: (usize, usize)) -> PixelRect {
    let g = geo.gap_px as i32;
    let mut x0 = geo.gap.x as i32;
    let mut y0 = geo.gap.y as i32;
    let mut x1 = (geo.gap.x + geo.gap.w) as i32 - 1;
    let mut y1 = (geo.gap.y + geo.gap.h) as i32 - 1;
    for corner in [
        geo.hinge,
        (geo.hinge.0 + geo.along.0 * g, geo.hinge.1 + geo.along.1 * g),
        (geo.hinge.0 + geo.perp.0 * g, geo.hinge.1 + geo.perp.1 * g),
    ] {
        x0 = x0.min(corner.0);
        y0 = y0.min(corner.1);
        x1 = x1.max(corner.0);
        y1 = y1.max(corner.1);
    }
    let x0 = (x0 - 1).max(0) as usize;
    let y0 = (y0 - 1).max(0) as usize;
    let x1 = ((x1 + 1) as usize).min(canvas.0 - 1);
    let y1 = ((y1 + 1) as usize).min(canvas.1 - 1);
    PixelRect {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    }
}

/// Generate the scene for a spec. Rooms sit on a grid, each holding one scan
/// taken from a random interior position; the first `duplicate_rooms` rooms
/// are forced identical to create placement ambiguity.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    let (rows, cols) = spec.grid;
    if spec.rooms == 0 || spec.rooms > rows * cols {
        return Err(Error::GenerationFailed(format!(
            "{} rooms do not fit a {}x{} grid",
            spec.rooms, rows, cols
        )));
    }
    if spec.duplicate_rooms > spec.rooms {
        return Err(Error::GenerationFailed(
            "more duplicate rooms than rooms".into(),
        ));
    }
    if spec.room_size_range.0 <= 0.0 || spec.room_size_range.1 < spec.room_size_range.0 {
        return Err(Error::GenerationFailed("bad room size range".into()));
    }
    let mpp = spec.meters_per_pixel;
    let wt = spec.wall_thickness_px.max(1);
    let gap_px = (spec.door_width_m / mpp).round() as usize;
    let min_px = (spec.room_size_range.0 / mpp).round() as usize;
    let max_px = (spec.room_size_range.1 / mpp).round() as usize;
    if min_px < gap_px + 2 * wt + 8 {
        return Err(Error::GenerationFailed(
            "rooms too small for a door".into(),
        ));
    }
    let margin = 8usize;
    let cell = max_px + 2 * margin;
    let border = 6usize;
    let grid_w = cols * cell;
    let grid_h = rows * cell;
    let (canvas_w, canvas_h, off_x, off_y) = match spec.canvas_px {
        None => (grid_w + 2 * border, grid_h + 2 * border, border, border),
        Some((w, h)) => {
            if w < grid_w + 2 * border || h < grid_h + 2 * border {
                return Err(Error::GenerationFailed(format!(
                    "canvas {w}x{h} too small for the {grid_w}x{grid_h} room grid"
                )));
            }
            (w, h, (w - grid_w) / 2, (h - grid_h) / 2)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sample_layout = |rng: &mut ChaCha8Rng| -> RoomLayout {
        let w_px = rng.gen_range(min_px..=max_px);
        let h_px = rng.gen_range(min_px..=max_px);
        let side = rng.gen_range(0..4usize);
        let along_frac = rng.gen_range(0.0..1.0);
        let hinge_left = rng.gen_bool(0.5);
        let margin_m = 0.5f64;
        let m = margin_m / mpp;
        let sx = rng.gen_range((wt as f64 + m) / w_px as f64..1.0 - (wt as f64 + m) / w_px as f64);
        let sy = rng.gen_range((wt as f64 + m) / h_px as f64..1.0 - (wt as f64 + m) / h_px as f64);
        RoomLayout {
            w_px,
            h_px,
            door: DoorSpec {
                side,
                along_frac,
                hinge_left,
            },
            scanner_frac: (sx, sy),
        }
    };
    let duplicate_template = sample_layout(&mut rng);

    let mut rooms: Vec<PlacedRoom> = Vec::with_capacity(spec.rooms);
    for r in 0..spec.rooms {
        let layout = if r < spec.duplicate_rooms {
            duplicate_template
        } else {
            sample_layout(&mut rng)
        };
        let (row, col) = (r / cols, r % cols);
        let play_x = cell - layout.w_px;
        let play_y = cell - layout.h_px;
        let ox = rng.gen_range(0..=play_x);
        let oy = rng.gen_range(0..=play_y);
        rooms.push(PlacedRoom {
            x: off_x + col * cell + ox,
            y: off_y + row * cell + oy,
            layout,
        });
    }

    // rasterize walls (shared by the floorplan and the ray-cast world)
    let mut walls = BinaryMask::new(canvas_w, canvas_h, false);
    let mut geos = Vec::with_capacity(spec.rooms);
    for room in &rooms {
        let geo = door_geometry(room, wt, gap_px);
        for y in room.y..room.y + room.layout.h_px {
            for x in room.x..room.x + room.layout.w_px {
                let inner = x >= room.x + wt
                    && x < room.x + room.layout.w_px - wt
                    && y >= room.y + wt
                    && y < room.y + room.layout.h_px - wt;
                let in_gap = x >= geo.gap.x
                    && x < geo.gap.x + geo.gap.w
                    && y >= geo.gap.y
                    && y < geo.gap.y + geo.gap.h;
                if !inner && !in_gap {
                    walls.set(x, y, true);
                }
            }
        }
        geos.push(geo);
    }

    let mut floorplan = GrayImage::new(canvas_w, canvas_h, 1.0);
    for (x, y) in walls.set_pixels() {
        floorplan.set(x as usize, y as usize, 0.0);
    }
    for geo in &geos {
        draw_door_glyph(&mut floorplan, geo);
    }

    // symbol strokes in the largest fifth of the rooms (connected compound
    // shapes large enough to survive clutter removal); duplicate rooms stay
    // pristine so they remain genuinely ambiguous
    let mut order: Vec<usize> = (spec.duplicate_rooms..spec.rooms).collect();
    order.sort_by_key(|&r| {
        std::cmp::Reverse(rooms[r].layout.w_px * rooms[r].layout.h_px)
    });
    let n_symbol_rooms = spec.rooms.div_ceil(5).min(order.len());
    for &r in order.iter().take(n_symbol_rooms) {
        let room = &rooms[r];
        let sw = (1.2 / mpp).round() as usize;
        let sh = (0.9 / mpp).round() as usize;
        let ix = room.x + wt + 3;
        let iy = room.y + wt + 3;
        let iw = room.layout.w_px.saturating_sub(2 * wt + 6);
        let ih = room.layout.h_px.saturating_sub(2 * wt + 6);
        if iw <= sw + 2 || ih <= sh + 2 {
            continue;
        }
        let sx = ix + rng.gen_range(0..=iw - sw - 1);
        let sy = iy + rng.gen_range(0..=ih - sh - 1);
        for x in sx..sx + sw {
            ink(&mut floorplan, x as i32, sy as i32);
            ink(&mut floorplan, x as i32, (sy + sh - 1) as i32);
            ink(&mut floorplan, x as i32, (sy + sh / 2) as i32);
        }
        for y in sy..sy + sh {
            ink(&mut floorplan, sx as i32, y as i32);
            ink(&mut floorplan, (sx + sw - 1) as i32, y as i32);
        }
    }

    // small removable speckle over the canvas
    for _ in 0..3 * spec.rooms {
        let x = rng.gen_range(2..canvas_w - 2);
        let y = rng.gen_range(2..canvas_h - 2);
        if !walls.get(x, y) {
            floorplan.set(x, y, 0.2);
        }
    }

    // scans
    let mut scans = Vec::with_capacity(spec.rooms);
    let mut entries = Vec::with_capacity(spec.rooms);
    for (r, room) in rooms.iter().enumerate() {
        let geo = &geos[r];
        let scan_id = format!("scan_{r:02}");
        let wx = room.x as i32 + (room.layout.scanner_frac.0 * room.layout.w_px as f64) as i32;
        let wy = room.y as i32 + (room.layout.scanner_frac.1 * room.layout.h_px as f64) as i32;

        // local raster: room rect plus a border for through-door rays
        let pad = 5i32;
        let lx0 = room.x as i32 - pad;
        let ly0 = room.y as i32 - pad;
        let lw = room.layout.w_px + 2 * pad as usize;
        let lh = room.layout.h_px + 2 * pad as usize;
        let origin = (wx - lx0, wy - ly0);

        let mut counts = vec![0u32; lw * lh];
        let mut free = BinaryMask::new(lw, lh, false);
        let n_rays = (16 * room.layout.w_px.max(room.layout.h_px)).max(1440);
        let (cx, cy) = (origin.0 as f64 + 0.5, origin.1 as f64 + 0.5);
        for i in 0..n_rays {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n_rays as f64;
            let (dx, dy) = (th.cos() * 0.3, th.sin() * 0.3);
            let (mut px, mut py) = (cx, cy);
            loop {
                let (ix, iy) = (px.floor() as i32, py.floor() as i32);
                if ix < 0 || iy < 0 || ix >= lw as i32 || iy >= lh as i32 {
                    break;
                }
                let (gx, gy) = (ix + lx0, iy + ly0);
                if walls.in_bounds(gx, gy) && walls.at(gx, gy) {
                    counts[iy as usize * lw + ix as usize] += 1;
                    free.set(ix as usize, iy as usize, true);
                    break;
                }
                free.set(ix as usize, iy as usize, true);
                px += dx;
                py += dy;
            }
        }

        // per-pixel dropout of wall evidence
        if spec.dropout > 0.0 {
            for c in counts.iter_mut() {
                if *c > 0 && rng.gen_bool(spec.dropout.min(1.0)) {
                    *c = 0;
                }
            }
        }
        let mut nonzero: Vec<u32> = counts.iter().cloned().filter(|c| *c > 0).collect();
        if nonzero.is_empty() {
            return Err(Error::GenerationFailed(format!(
                "scan {scan_id} lost all wall evidence"
            )));
        }
        nonzero.sort_unstable();
        let idx = ((nonzero.len() - 1) as f64 * 0.98).round() as usize;
        let norm = nonzero[idx].max(1) as f32;
        let mut point = GrayImage::from_vec(
            lw,
            lh,
            counts
                .iter()
                .map(|c| (*c as f32 / norm).min(1.0))
                .collect(),
        );

        // clutter speckle inside free space; furniture returns fewer points
        // per column than a full-height wall, so speckle stays weaker
        if spec.clutter_density > 0.0 {
            let n_clutter = (spec.clutter_density * free.count() as f64).round() as usize;
            let mut placed = 0;
            let mut tries = 0;
            while placed < n_clutter && tries < 50 * n_clutter.max(1) {
                tries += 1;
                let x = rng.gen_range(0..lw);
                let y = rng.gen_range(0..lh);
                let v = rng.gen_range(0.1..0.6f32);
                if free.get(x, y) && point.get(x, y) == 0.0 {
                    point.set(x, y, v);
                    placed += 1;
                }
            }
        }

        // door flank pixels that kept their wall evidence
        let mut doors = BinaryMask::new(lw, lh, false);
        for f in geo.flanks {
            let (lx, ly) = (f.0 - lx0, f.1 - ly0);
            if point.in_bounds(lx, ly) && point.at(lx, ly) > 0.0 {
                doors.set(lx as usize, ly as usize, true);
            }
        }

        let ev = ScanEvidence {
            point_ev: point,
            free_space: free,
            doors,
            origin_px: origin,
            meters_per_pixel: mpp,
        };
        let rot: u8 = rng.gen_range(0..4);
        let ev = ev.rotate_quarter(rot);
        let k_true = (4 - rot) % 4;
        entries.push(GtEntry {
            scan_id: scan_id.clone(),
            placement: Placement::new(k_true, wx, wy),
        });
        scans.push((scan_id, ev));
    }

    let door_bbox = glyph_bbox(&geos[0], (canvas_w, canvas_h));
    Ok(Scene {
        floorplan,
        door_bbox,
        door_threshold: DOOR_NCC_THRESHOLD,
        scans,
        gt: GroundTruth {
            entries,
            tolerance_px: DEFAULT_TOLERANCE_PX,
        },
        meters_per_pixel: mpp,
    })
}

/// Fraction of scans placed incorrectly: a placement counts as correct when
/// its rotation matches exactly and its translation is within the tolerance
/// in Chebyshev distance.
pub fn eval_placements(placed: &[(String, Placement)], gt: &GroundTruth) -> Result<f64> {
    if placed.len() != gt.entries.len() {
        return Err(Error::invalid("scan id sets differ"));
    }
    let mut wrong = 0usize;
    for (id, pl) in placed {
        let entry = gt
            .entries
            .iter()
            .find(|e| &e.scan_id == id)
            .ok_or_else(|| Error::invalid(format!("unknown scan id {id}")))?;
        if !placement_matches(pl, &entry.placement, gt.tolerance_px) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / gt.entries.len() as f64)
}

pub fn placement_matches(pl: &Placement, truth: &Placement, tolerance_px: i32) -> bool {
    pl.k == truth.k
        && (pl.tx - truth.tx).abs() <= tolerance_px
        && (pl.ty - truth.ty).abs() <= tolerance_px
}

/// Unordered scan pairs whose final translations sit within `radius` pixels
/// of each other (the stacking diagnostic).
pub fn stacking_count(placed: &[(String, Placement)], radius: i32) -> usize {
    let mut count = 0;
    for i in 0..placed.len() {
        for j in i + 1..placed.len() {
            let (a, b) = (&placed[i].1, &placed[j].1);
            if (a.tx - b.tx).abs() <= radius && (a.ty - b.ty).abs() <= radius {
                count += 1;
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floorplan::{build_building_mask, make_context, DoorTemplateSpec, FloorplanParams, RulerSpec};
    use crate::scanprep::validate_evidence;

    fn small_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            rooms: 4,
            grid: (2, 2),
            room_size_range: (3.0, 5.0),
            door_width_m: 0.9,
            wall_thickness_px: 2,
            clutter_density: 0.0,
            dropout: 0.0,
            duplicate_rooms: 0,
            meters_per_pixel: 0.1,
            canvas_px: None,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec(1);
        let a = gen_scene(&spec).unwrap();
        let b = gen_scene(&spec).unwrap();
        assert_eq!(a.floorplan, b.floorplan);
        assert_eq!(a.scans.len(), b.scans.len());
        for ((ia, ea), (ib, eb)) in a.scans.iter().zip(&b.scans) {
            assert_eq!(ia, ib);
            assert_eq!(ea, eb);
        }
        for (x, y) in a.gt.entries.iter().zip(&b.gt.entries) {
            assert_eq!(x.placement, y.placement);
        }
    }

    #[test]
    fn duplicate_rooms_share_geometry() {
        let mut spec = small_spec(7);
        spec.duplicate_rooms = 2;
        let scene = gen_scene(&spec).unwrap();
        let a = &scene.scans[0].1;
        let b = &scene.scans[1].1;
        // identical up to the random quarter-turn
        let ka = scene.gt.entries[0].placement.k;
        let kb = scene.gt.entries[1].placement.k;
        let a0 = a.rotate_quarter(ka);
        let b0 = b.rotate_quarter(kb);
        assert_eq!(a0.free_space, b0.free_space);
        assert_eq!(a0.doors, b0.doors);
        assert_eq!(a0.origin_px, b0.origin_px);
        assert_eq!(a0.point_ev, b0.point_ev);
    }

    #[test]
    fn noiseless_evidence_lies_on_walls() {
        let spec = small_spec(3);
        let scene = gen_scene(&spec).unwrap();
        // reconstruct the wall mask from the floorplan ink minus glyphs is
        // fiddly; instead check against dilated ink, which contains walls
        let ink_near = {
            let inv = scene.floorplan.inverted();
            inv.dilate(3).unwrap()
        };
        for (id, ev) in &scene.scans {
            let truth = scene
                .gt
                .entries
                .iter()
                .find(|e| &e.scan_id == id)
                .unwrap()
                .placement;
            for y in 0..ev.point_ev.height() as i32 {
                for x in 0..ev.point_ev.width() as i32 {
                    if ev.point_ev.at(x, y) > 0.0 {
                        let f = truth.map((x, y), ev.origin_px);
                        assert!(
                            ink_near.in_bounds(f.0, f.1) && ink_near.at(f.0, f.1) > 0.5,
                            "{id}: evidence off-wall at local ({x},{y}) -> {f:?}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn packs_satisfy_invariants_and_gt_is_inside_building() {
        let mut spec = small_spec(11);
        spec.clutter_density = 0.05;
        spec.dropout = 0.1;
        let scene = gen_scene(&spec).unwrap();
        for (_, ev) in &scene.scans {
            validate_evidence(ev).unwrap();
        }
        let building = build_building_mask(&scene.floorplan, 0.4).unwrap();
        for e in &scene.gt.entries {
            assert!(building.at(e.placement.tx, e.placement.ty));
        }
        // building mask contains all room interiors: free space maps inside
        for (id, ev) in &scene.scans {
            let truth = scene
                .gt
                .entries
                .iter()
                .find(|e| &e.scan_id == id)
                .unwrap()
                .placement;
            let mut inside = 0usize;
            let mut total = 0usize;
            for p in ev.free_space.set_pixels() {
                let f = truth.map(p, ev.origin_px);
                total += 1;
                if building.in_bounds(f.0, f.1) && building.at(f.0, f.1) {
                    inside += 1;
                }
            }
            // border rooms spill a little free space through their door
            assert!(inside as f64 >= 0.90 * total as f64, "{id}");
        }
    }

    #[test]
    fn context_detects_generated_doors() {
        let spec = small_spec(5);
        let scene = gen_scene(&spec).unwrap();
        let ruler = RulerSpec {
            ax: 0.0,
            ay: 0.0,
            bx: 100.0,
            by: 0.0,
            meters: 100.0 * scene.meters_per_pixel,
        };
        let door = DoorTemplateSpec {
            bbox: scene.door_bbox,
            score_threshold: scene.door_threshold,
        };
        let ctx = make_context(&scene.floorplan, &ruler, &door, &FloorplanParams::default())
            .unwrap();
        assert!(ctx.doors.count() > 0, "no doors detected");
        // every scan's door pixels land on detected floorplan door pixels
        let mut hits = 0usize;
        let mut total = 0usize;
        for (id, ev) in &scene.scans {
            let truth = scene
                .gt
                .entries
                .iter()
                .find(|e| &e.scan_id == id)
                .unwrap()
                .placement;
            for p in ev.doors.set_pixels() {
                total += 1;
                let f = truth.map(p, ev.origin_px);
                if ctx.doors.in_bounds(f.0, f.1) && ctx.doors.at(f.0, f.1) {
                    hits += 1;
                }
            }
        }
        assert!(total > 0);
        assert!(
            hits as f64 >= 0.7 * total as f64,
            "only {hits}/{total} scan door pixels on detected doors"
        );
    }

    #[test]
    fn eval_counts_errors() {
        let gt = GroundTruth {
            entries: vec![
                GtEntry {
                    scan_id: "a".into(),
                    placement: Placement::new(0, 10, 10),
                },
                GtEntry {
                    scan_id: "b".into(),
                    placement: Placement::new(1, 40, 40),
                },
            ],
            tolerance_px: 3,
        };
        let perfect = vec![
            ("a".to_string(), Placement::new(0, 10, 10)),
            ("b".to_string(), Placement::new(1, 40, 40)),
        ];
        assert_eq!(eval_placements(&perfect, &gt).unwrap(), 0.0);
        let rotated: Vec<_> = perfect
            .iter()
            .map(|(id, p)| (id.clone(), Placement::new((p.k + 1) % 4, p.tx, p.ty)))
            .collect();
        assert_eq!(eval_placements(&rotated, &gt).unwrap(), 1.0);
        let one_off = vec![
            ("a".to_string(), Placement::new(0, 20, 10)),
            ("b".to_string(), Placement::new(1, 40, 41)),
        ];
        assert_eq!(eval_placements(&one_off, &gt).unwrap(), 0.5);
        let mismatched = vec![("a".to_string(), Placement::new(0, 10, 10))];
        assert!(eval_placements(&mismatched, &gt).is_err());
    }

    #[test]
    fn stacking_count_counts_close_pairs() {
        let placed = vec![
            ("a".to_string(), Placement::new(0, 10, 10)),
            ("b".to_string(), Placement::new(1, 12, 13)),
            ("c".to_string(), Placement::new(0, 100, 100)),
        ];
        assert_eq!(stacking_count(&placed, 5), 1);
        assert_eq!(stacking_count(&placed, 1), 0);
    }
}
