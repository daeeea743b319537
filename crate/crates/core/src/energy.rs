//! Placement potentials: the scan-to-floorplan unary (semantic door cue +
//! geometric residual cue), the scan-to-scan pairwise consistency term, the
//! floorplan coverage term in its pairwise approximation, and the baseline
//! unary metrics used for comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floorplan::FloorplanContext;
use crate::raster::{distance_transform, rotate_offset, rotate_point, BinaryMask, GrayImage};
use crate::scanprep::ScanEvidence;

/// One MRF label: a quarter-turn rotation plus an integer floorplan
/// translation. Evidence pixel p lands at `t + R(k) * (p - origin_px)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub k: u8,
    pub tx: i32,
    pub ty: i32,
}

impl Placement {
    pub fn new(k: u8, tx: i32, ty: i32) -> Self {
        Placement { k, tx, ty }
    }

    /// Floorplan pixel hit by evidence pixel `p` of a scan with the given
    /// origin.
    pub fn map(&self, p: (i32, i32), origin: (i32, i32)) -> (i32, i32) {
        let d = rotate_offset((p.0 - origin.0, p.1 - origin.1), self.k);
        (self.tx + d.0, self.ty + d.1)
    }
}

/// Relative weights of the potentials.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PotentialWeights {
    pub w_semantic: f64,
    pub w_geometric: f64,
    pub w_ss: f64,
    pub w_cov: f64,
}

impl Default for PotentialWeights {
    fn default() -> Self {
        PotentialWeights {
            w_semantic: 1.0,
            w_geometric: 1.0,
            w_ss: 1.0,
            w_cov: 1.0,
        }
    }
}

/// Which unary metric drives the candidate search and the MRF unary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryKind {
    Ours,
    NaiveSsd,
    MaskedSsd,
    DistanceTransform,
}

pub const WHITE_DOORWAY_INTENSITY: f32 = 0.4;
pub const INK_BINARIZE_THRESHOLD: f32 = 0.4;
pub const STRONG_EVIDENCE_THRESHOLD: f32 = 0.25;
pub const PAIR_OVERLAP_AREA_M2: f64 = 4.0;
pub const PAIR_ERODE_PX: usize = 2;

/// Floorplan-side raster set a unary evaluator matches against. Level 0 uses
/// the context rasters; pyramid levels substitute pooled ones.
#[derive(Clone)]
pub struct FloorLayers<'a> {
    pub clean: &'a GrayImage,
    pub dilated: &'a GrayImage,
    pub doors: &'a BinaryMask,
    pub building: &'a BinaryMask,
}

impl<'a> FloorLayers<'a> {
    pub fn from_context(ctx: &'a FloorplanContext) -> Self {
        FloorLayers {
            clean: &ctx.clean,
            dilated: &ctx.dilated,
            doors: &ctx.doors,
            building: &ctx.building,
        }
    }
}

/// A free-space pixel with the values the potentials need at that pixel.
#[derive(Debug, Clone, Copy)]
struct FreePx {
    dx: i32,
    dy: i32,
    /// 5x5-dilated point evidence at this pixel (swapped geometric residual).
    dilp: f32,
    /// Point evidence at this pixel (masked SSD / distance-transform metric).
    p: f32,
}

/// One scan pre-rotated for fast repeated unary evaluation: pixel lists are
/// stored as offsets from the rotated origin so a placement is a pure
/// translation.
pub struct RotatedScan {
    width: usize,
    height: usize,
    origin: (i32, i32),
    point_img: GrayImage,
    door_off: Vec<(i32, i32)>,
    point_off: Vec<(i32, i32, f32)>,
    free_off: Vec<FreePx>,
    point_sum: f64,
    free_count: usize,
}

impl RotatedScan {
    pub fn build(
        point_ev: &GrayImage,
        free_space: &BinaryMask,
        doors: &BinaryMask,
        origin: (i32, i32),
        k: u8,
    ) -> RotatedScan {
        let dims = (point_ev.width(), point_ev.height());
        let point_img = point_ev.rotate_quarter(k);
        let free = free_space.rotate_quarter(k);
        let door = doors.rotate_quarter(k);
        let origin = rotate_point(origin, k, dims);
        let dil = point_img
            .dilate(crate::floorplan::DILATION_KERNEL)
            .expect("odd kernel");
        let (w, h) = (point_img.width(), point_img.height());
        let mut door_off = Vec::new();
        let mut point_off = Vec::new();
        let mut free_off = Vec::new();
        let mut point_sum = 0.0f64;
        for y in 0..h as i32 {
            for x in 0..w as i32 {
                let p = point_img.at(x, y);
                if p > 0.0 {
                    point_off.push((x - origin.0, y - origin.1, p));
                    point_sum += p as f64;
                }
                if door.at(x, y) {
                    door_off.push((x - origin.0, y - origin.1));
                }
                if free.at(x, y) {
                    free_off.push(FreePx {
                        dx: x - origin.0,
                        dy: y - origin.1,
                        dilp: dil.at(x, y),
                        p,
                    });
                }
            }
        }
        let free_count = free_off.len();
        RotatedScan {
            width: w,
            height: h,
            origin,
            point_img,
            door_off,
            point_off,
            free_off,
            point_sum,
            free_count,
        }
    }

    pub fn free_count(&self) -> usize {
        self.free_count
    }
}

/// Evaluates one unary metric for one scan over arbitrary placements,
/// with all four rotations precomputed.
pub struct UnaryEvaluator<'a> {
    floor: FloorLayers<'a>,
    rotations: Vec<RotatedScan>,
    weights: PotentialWeights,
    kind: UnaryKind,
    /// Distance field of binarized ink and its maximum, for the DT metric.
    dt: Option<(Vec<f64>, f64)>,
}

impl<'a> UnaryEvaluator<'a> {
    pub fn new(
        ctx: &'a FloorplanContext,
        scan: &ScanEvidence,
        weights: &PotentialWeights,
        kind: UnaryKind,
    ) -> Result<UnaryEvaluator<'a>> {
        Self::from_layers(FloorLayers::from_context(ctx), scan, weights, kind)
    }

    pub fn from_layers(
        floor: FloorLayers<'a>,
        scan: &ScanEvidence,
        weights: &PotentialWeights,
        kind: UnaryKind,
    ) -> Result<UnaryEvaluator<'a>> {
        let rotations = (0..4)
            .map(|k| {
                RotatedScan::build(
                    &scan.point_ev,
                    &scan.free_space,
                    &scan.doors,
                    scan.origin_px,
                    k,
                )
            })
            .collect();
        let dt = if kind == UnaryKind::DistanceTransform {
            let bits = floor
                .clean
                .data()
                .iter()
                .map(|v| *v < INK_BINARIZE_THRESHOLD)
                .collect();
            let ink = BinaryMask::from_vec(floor.clean.width(), floor.clean.height(), bits);
            let field = distance_transform(&ink)?;
            let max = field.iter().cloned().fold(0.0f64, f64::max);
            Some((field, max))
        } else {
            None
        };
        Ok(UnaryEvaluator {
            floor,
            rotations,
            weights: *weights,
            kind,
            dt,
        })
    }

    pub fn rotation(&self, k: u8) -> &RotatedScan {
        &self.rotations[(k % 4) as usize]
    }

    /// Fraction of the placed free-space mask falling outside the building
    /// mask (or off the raster).
    pub fn outside_building_fraction(&self, pl: &Placement) -> f64 {
        let rot = self.rotation(pl.k);
        if rot.free_count == 0 {
            return 1.0;
        }
        let b = self.floor.building;
        let mut outside = 0usize;
        for f in &rot.free_off {
            let (x, y) = (pl.tx + f.dx, pl.ty + f.dy);
            if !b.in_bounds(x, y) || !b.at(x, y) {
                outside += 1;
            }
        }
        outside as f64 / rot.free_count as f64
    }

    pub fn semantic(&self, pl: &Placement) -> f64 {
        let rot = self.rotation(pl.k);
        if rot.door_off.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0f64;
        for &(dx, dy) in &rot.door_off {
            let (x, y) = (pl.tx + dx, pl.ty + dy);
            sum += if !self.floor.clean.in_bounds(x, y) {
                1.0
            } else if self.floor.doors.at(x, y) {
                0.0
            } else if self.floor.clean.at(x, y) > WHITE_DOORWAY_INTENSITY {
                0.5
            } else {
                1.0
            };
        }
        sum / rot.door_off.len() as f64
    }

    pub fn geometric(&self, pl: &Placement) -> Result<f64> {
        let rot = self.rotation(pl.k);
        if rot.point_sum <= 0.0 {
            return Err(Error::invalid("scan has no point evidence"));
        }
        // Evidence not explained by dilated floorplan ink.
        let mut unexplained = 0.0f64;
        for &(dx, dy, p) in &rot.point_off {
            let (x, y) = (pl.tx + dx, pl.ty + dy);
            unexplained += if self.floor.dilated.in_bounds(x, y) {
                (p - self.floor.dilated.at(x, y)).max(0.0) as f64
            } else {
                p as f64
            };
        }
        let d1 = unexplained / rot.point_sum;
        // Roles swapped: floorplan ink not explained by dilated evidence,
        // restricted to the placed free-space footprint.
        let mut ink_sum = 0.0f64;
        let mut ink_unexplained = 0.0f64;
        for f in &rot.free_off {
            let (x, y) = (pl.tx + f.dx, pl.ty + f.dy);
            if self.floor.clean.in_bounds(x, y) {
                let ink = 1.0 - self.floor.clean.at(x, y);
                ink_sum += ink as f64;
                ink_unexplained += (ink - f.dilp).max(0.0) as f64;
            }
        }
        let d2 = if ink_sum > 0.0 {
            ink_unexplained / ink_sum
        } else {
            0.0
        };
        Ok((d1 + d2) / 2.0)
    }

    /// The configured unary metric at this placement.
    pub fn eval(&self, pl: &Placement) -> Result<f64> {
        match self.kind {
            UnaryKind::Ours => Ok(self.weights.w_semantic * self.semantic(pl)
                + self.weights.w_geometric * self.geometric(pl)?),
            UnaryKind::NaiveSsd => Ok(self.naive_ssd(pl)),
            UnaryKind::MaskedSsd => Ok(self.masked_ssd(pl)),
            UnaryKind::DistanceTransform => Ok(self.dt_score(pl)),
        }
    }

    fn naive_ssd(&self, pl: &Placement) -> f64 {
        let rot = self.rotation(pl.k);
        let mut sum = 0.0f64;
        for y in 0..rot.height as i32 {
            for x in 0..rot.width as i32 {
                let p = rot.point_img.at(x, y);
                let (fx, fy) = (pl.tx + x - rot.origin.0, pl.ty + y - rot.origin.1);
                sum += if self.floor.clean.in_bounds(fx, fy) {
                    let ink = 1.0 - self.floor.clean.at(fx, fy);
                    ((ink - p) * (ink - p)) as f64
                } else {
                    1.0
                };
            }
        }
        sum / (rot.width * rot.height) as f64
    }

    fn masked_ssd(&self, pl: &Placement) -> f64 {
        let rot = self.rotation(pl.k);
        if rot.free_count == 0 {
            return 0.0;
        }
        let mut sum = 0.0f64;
        for f in &rot.free_off {
            let (x, y) = (pl.tx + f.dx, pl.ty + f.dy);
            sum += if self.floor.clean.in_bounds(x, y) {
                let ink = 1.0 - self.floor.clean.at(x, y);
                ((ink - f.p) * (ink - f.p)) as f64
            } else {
                1.0
            };
        }
        sum / rot.free_count as f64
    }

    fn dt_score(&self, pl: &Placement) -> f64 {
        let rot = self.rotation(pl.k);
        if rot.free_count == 0 {
            return 0.0;
        }
        let (field, max) = self.dt.as_ref().expect("DT precomputed for this kind");
        let w = self.floor.clean.width();
        let mut sum = 0.0f64;
        for f in &rot.free_off {
            if f.p <= 0.0 {
                continue;
            }
            let (x, y) = (pl.tx + f.dx, pl.ty + f.dy);
            let d = if self.floor.clean.in_bounds(x, y) {
                field[y as usize * w + x as usize]
            } else {
                *max
            };
            sum += d * f.p as f64;
        }
        sum / rot.free_count as f64
    }
}

/// Mean door-pixel penalty of the placed scan against the floorplan doors.
pub fn semantic_penalty(scan: &ScanEvidence, pl: &Placement, ctx: &FloorplanContext) -> f64 {
    let doors = scan.doors.set_pixels();
    if doors.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0f64;
    for p in doors {
        let (x, y) = pl.map(p, scan.origin_px);
        sum += if !ctx.clean.in_bounds(x, y) {
            1.0
        } else if ctx.doors.at(x, y) {
            0.0
        } else if ctx.clean.at(x, y) > WHITE_DOORWAY_INTENSITY {
            0.5
        } else {
            1.0
        };
    }
    sum / scan.doors.count() as f64
}

/// Two-sided residual between point evidence and floorplan ink, averaged.
pub fn geometric_penalty(
    scan: &ScanEvidence,
    pl: &Placement,
    ctx: &FloorplanContext,
) -> Result<f64> {
    let ev = UnaryEvaluator::new(ctx, scan, &PotentialWeights::default(), UnaryKind::Ours)?;
    ev.geometric(pl)
}

/// Weighted sum of the semantic and geometric penalties.
pub fn unary(
    scan: &ScanEvidence,
    pl: &Placement,
    ctx: &FloorplanContext,
    w: &PotentialWeights,
) -> Result<f64> {
    let ev = UnaryEvaluator::new(ctx, scan, w, UnaryKind::Ours)?;
    ev.eval(pl)
}

/// One of the replacement unary metrics.
pub fn baseline_unary(
    kind: UnaryKind,
    scan: &ScanEvidence,
    pl: &Placement,
    ctx: &FloorplanContext,
) -> Result<f64> {
    let ev = UnaryEvaluator::new(ctx, scan, &PotentialWeights::default(), kind)?;
    ev.eval(pl)
}

/// One scan pre-rotated for pairwise evaluation.
pub struct PairScan {
    origin: (i32, i32),
    fs: BinaryMask,
    fs_eroded: BinaryMask,
    point_img: GrayImage,
    /// Free-space pixels as offsets with their point evidence.
    free_off: Vec<(i32, i32, f32)>,
    /// Strong evidence pixels (above the wall threshold) with values.
    strong_off: Vec<(i32, i32, f32)>,
    strong_mass: f64,
    meters_per_pixel: f64,
}

impl PairScan {
    pub fn build(scan: &ScanEvidence, k: u8) -> PairScan {
        let rot = scan.rotate_quarter(k);
        let fs_eroded = rot.free_space.erode_chebyshev(PAIR_ERODE_PX);
        let mut free_off = Vec::new();
        let mut strong_off = Vec::new();
        let mut strong_mass = 0.0f64;
        for y in 0..rot.point_ev.height() as i32 {
            for x in 0..rot.point_ev.width() as i32 {
                let p = rot.point_ev.at(x, y);
                if rot.free_space.at(x, y) {
                    free_off.push((x - rot.origin_px.0, y - rot.origin_px.1, p));
                }
                if p > STRONG_EVIDENCE_THRESHOLD {
                    strong_off.push((x - rot.origin_px.0, y - rot.origin_px.1, p));
                    strong_mass += p as f64;
                }
            }
        }
        PairScan {
            origin: rot.origin_px,
            fs: rot.free_space,
            fs_eroded,
            point_img: rot.point_ev,
            free_off,
            strong_off,
            strong_mass,
            meters_per_pixel: scan.meters_per_pixel,
        }
    }

    #[inline]
    fn local(&self, t: (i32, i32), f: (i32, i32)) -> (i32, i32) {
        (self.origin.0 + f.0 - t.0, self.origin.1 + f.1 - t.1)
    }
}

/// Pairwise consistency of two placed scans: free-space violations by strong
/// evidence, minus an overlap-gated agreement reward. Zero when the placed
/// free spaces do not overlap; range within [-1, 1].
pub fn scan_pair_energy(a: &PairScan, ta: (i32, i32), b: &PairScan, tb: (i32, i32)) -> f64 {
    // Canonical argument order so the result is exactly symmetric.
    let ka = (ta, a.origin, a.fs.width(), a.fs.height());
    let kb = (tb, b.origin, b.fs.width(), b.fs.height());
    let (a, ta, b, tb) = if ka <= kb { (a, ta, b, tb) } else { (b, tb, a, ta) };

    let mut n = 0usize;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    for &(dx, dy, pa) in &a.free_off {
        let f = (ta.0 + dx, ta.1 + dy);
        let q = b.local(tb, f);
        if b.fs.in_bounds(q.0, q.1) && b.fs.at(q.0, q.1) {
            let pb = b.point_img.at(q.0, q.1);
            n += 1;
            sa += pa as f64;
            sb += pb as f64;
            saa += (pa * pa) as f64;
            sbb += (pb * pb) as f64;
            sab += (pa * pb) as f64;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let va = saa - sa * sa / nf;
    let vb = sbb - sb * sb / nf;
    let ncc = if va <= 1e-12 || vb <= 1e-12 {
        0.0
    } else {
        (sab - sa * sb / nf) / (va * vb).sqrt()
    };
    // Anti-correlation earns no reward; the violation term carries penalties.
    let agreement = ncc.max(0.0);

    let mut viol = 0.0f64;
    for &(dx, dy, p) in &a.strong_off {
        let f = (ta.0 + dx, ta.1 + dy);
        let q = b.local(tb, f);
        if b.fs_eroded.in_bounds(q.0, q.1) && b.fs_eroded.at(q.0, q.1) {
            viol += p as f64;
        }
    }
    for &(dx, dy, p) in &b.strong_off {
        let f = (tb.0 + dx, tb.1 + dy);
        let q = a.local(ta, f);
        if a.fs_eroded.in_bounds(q.0, q.1) && a.fs_eroded.at(q.0, q.1) {
            viol += p as f64;
        }
    }
    let total = a.strong_mass + b.strong_mass;
    let v = if total > 0.0 { viol / total } else { 0.0 };

    let mpp = a.meters_per_pixel;
    let overlap_norm = PAIR_OVERLAP_AREA_M2 / (mpp * mpp);
    v - agreement * (nf / overlap_norm).min(1.0)
}

/// Pairwise consistency between two placed scans.
pub fn scan_pair_potential(
    si: &ScanEvidence,
    pi: &Placement,
    sj: &ScanEvidence,
    pj: &Placement,
) -> f64 {
    let a = PairScan::build(si, pi.k);
    let b = PairScan::build(sj, pj.k);
    scan_pair_energy(&a, (pi.tx, pi.ty), &b, (pj.tx, pj.ty))
}

/// Coverage objective split into per-variable and pairwise pieces.
#[derive(Debug, Clone)]
pub struct CoverageTerms {
    /// Per-scan per-label additions from pixels only one scan can reach.
    pub unary: Vec<Vec<f64>>,
    /// label_i x label_j tables per scan pair, flattened row-major.
    pub pairs: BTreeMap<(usize, usize), Vec<f64>>,
    /// Number of floorplan pixels some candidate covers.
    pub contested: usize,
}

/// Assemble the 0 / 0.5 / 1.0 coverage objective over every building-mask
/// pixel reachable by at least one placement candidate. Contributions are
/// scaled by `w_cov / contested`.
pub fn coverage_terms(
    scans: &[&ScanEvidence],
    candidates: &[Vec<Placement>],
    ctx: &FloorplanContext,
    w_cov: f64,
    singleton_unary: bool,
) -> CoverageTerms {
    assert_eq!(scans.len(), candidates.len());
    let n = scans.len();
    // Pre-rotate free-space masks and precompute per-candidate bounding boxes.
    struct Cand {
        origin: (i32, i32),
        t: (i32, i32),
        bbox: (i32, i32, i32, i32),
        fs: usize, // index into masks
    }
    let mut masks: Vec<BinaryMask> = Vec::new();
    let mut mask_key: BTreeMap<(usize, u8), usize> = BTreeMap::new();
    let mut cands: Vec<Vec<Cand>> = Vec::new();
    let mut origins: Vec<Vec<(i32, i32)>> = Vec::new();
    for (s, list) in candidates.iter().enumerate() {
        let mut per = Vec::new();
        let mut ors = Vec::new();
        for pl in list {
            let idx = *mask_key.entry((s, pl.k % 4)).or_insert_with(|| {
                masks.push(scans[s].free_space.rotate_quarter(pl.k));
                masks.len() - 1
            });
            let origin = rotate_point(
                scans[s].origin_px,
                pl.k,
                (scans[s].free_space.width(), scans[s].free_space.height()),
            );
            let m = &masks[idx];
            // bbox of the placed free space in floorplan coordinates
            let (mut x0, mut y0, mut x1, mut y1) = (i32::MAX, i32::MAX, i32::MIN, i32::MIN);
            for (x, y) in m.set_pixels() {
                let fx = pl.tx + x - origin.0;
                let fy = pl.ty + y - origin.1;
                x0 = x0.min(fx);
                y0 = y0.min(fy);
                x1 = x1.max(fx);
                y1 = y1.max(fy);
            }
            per.push(Cand {
                origin,
                t: (pl.tx, pl.ty),
                bbox: (x0, y0, x1, y1),
                fs: idx,
            });
            ors.push(origin);
        }
        cands.push(per);
        origins.push(ors);
    }
    let _ = origins;

    let covers = |c: &Cand, fx: i32, fy: i32| -> bool {
        if fx < c.bbox.0 || fx > c.bbox.2 || fy < c.bbox.1 || fy > c.bbox.3 {
            return false;
        }
        let lx = c.origin.0 + fx - c.t.0;
        let ly = c.origin.1 + fy - c.t.1;
        let m = &masks[c.fs];
        m.in_bounds(lx, ly) && m.at(lx, ly)
    };

    let mut unary: Vec<Vec<f64>> = candidates.iter().map(|l| vec![0.0; l.len()]).collect();
    let mut pairs: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut contested = 0usize;

    let (w, h) = (ctx.building.width(), ctx.building.height());
    let mut bits: Vec<u8> = vec![0; n];
    let mut members: Vec<usize> = Vec::with_capacity(n);
    for fy in 0..h as i32 {
        for fx in 0..w as i32 {
            if !ctx.building.get(fx as usize, fy as usize) {
                continue;
            }
            members.clear();
            for s in 0..n {
                let mut b = 0u8;
                for (l, c) in cands[s].iter().enumerate() {
                    if covers(c, fx, fy) {
                        b |= 1 << l;
                    }
                }
                bits[s] = b;
                if b != 0 {
                    members.push(s);
                }
            }
            if members.is_empty() {
                continue;
            }
            contested += 1;
            if members.len() == 1 {
                if singleton_unary {
                    let s = members[0];
                    for l in 0..cands[s].len() {
                        if bits[s] & (1 << l) == 0 {
                            unary[s][l] += 1.0;
                        }
                    }
                }
                continue;
            }
            for (ii, &i) in members.iter().enumerate() {
                for &j in &members[ii + 1..] {
                    let (ni, nj) = (cands[i].len(), cands[j].len());
                    let table = pairs
                        .entry((i, j))
                        .or_insert_with(|| vec![0.0; ni * nj]);
                    for li in 0..ni {
                        let ci = bits[i] & (1 << li) != 0;
                        for lj in 0..nj {
                            let cj = bits[j] & (1 << lj) != 0;
                            let v = match (ci, cj) {
                                (true, true) => 0.5,
                                (true, false) | (false, true) => 0.0,
                                (false, false) => 1.0,
                            };
                            table[li * nj + lj] += v;
                        }
                    }
                }
            }
        }
    }

    if contested > 0 {
        let scale = w_cov / contested as f64;
        for u in unary.iter_mut().flatten() {
            *u *= scale;
        }
        for t in pairs.values_mut() {
            for v in t.iter_mut() {
                *v *= scale;
            }
        }
    }
    CoverageTerms {
        unary,
        pairs,
        contested,
    }
}
