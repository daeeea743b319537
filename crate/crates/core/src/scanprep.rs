//! Scan preprocessing: vertical/floor estimation, Manhattan alignment, and
//! reduction of a point cloud to top-down evidence rasters. Pre-made
//! evidence packs (the synthetic path) load through the same pack format.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GrayImage};

/// Points in meters, scanner at the origin by convention.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

/// Signed coordinate axis taken as "up".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpAxis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl UpAxis {
    /// Height of a point along this axis.
    pub fn height(&self, p: &[f64; 3]) -> f64 {
        match self {
            UpAxis::PosX => p[0],
            UpAxis::NegX => -p[0],
            UpAxis::PosY => p[1],
            UpAxis::NegY => -p[1],
            UpAxis::PosZ => p[2],
            UpAxis::NegZ => -p[2],
        }
    }

    /// Horizontal coordinates of a point (fixed convention per axis).
    pub fn horizontal(&self, p: &[f64; 3]) -> (f64, f64) {
        match self {
            UpAxis::PosX | UpAxis::NegX => (p[1], p[2]),
            UpAxis::PosY | UpAxis::NegY => (p[0], p[2]),
            UpAxis::PosZ | UpAxis::NegZ => (p[0], p[1]),
        }
    }
}

/// A scan reduced to rasters in the floorplan's scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanEvidence {
    pub point_ev: GrayImage,
    pub free_space: BinaryMask,
    pub doors: BinaryMask,
    pub origin_px: (i32, i32),
    pub meters_per_pixel: f64,
}

/// Knobs for evidence construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EvidenceParams {
    /// Height band above the floor kept as wall evidence, in meters.
    pub band_low_m: f64,
    pub band_high_m: f64,
    /// Percentile of nonzero per-pixel counts mapped to intensity 1.0.
    pub percentile: f64,
}

impl Default for EvidenceParams {
    fn default() -> Self {
        EvidenceParams {
            band_low_m: 0.1,
            band_high_m: 2.5,
            percentile: 0.98,
        }
    }
}

/// Knobs for the 2D wall-gap door heuristic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DoorScanParams {
    pub wall_threshold: f32,
    pub min_gap_m: f64,
    pub max_gap_m: f64,
    /// Minimum flanking wall-run length in pixels.
    pub min_run_px: usize,
    /// Perpendicular probe distance for the free-space-on-both-sides test.
    pub perp_probe_px: i32,
}

impl Default for DoorScanParams {
    fn default() -> Self {
        DoorScanParams {
            wall_threshold: 0.25,
            min_gap_m: 0.7,
            max_gap_m: 1.2,
            min_run_px: 3,
            perp_probe_px: 2,
        }
    }
}

const HIST_BIN_M: f64 = 0.05;
const FLOOR_PEAK_FRACTION: f64 = 0.2;

/// Pick the signed axis with the sharpest single-bin height-density peak and
/// locate the floor as the lowest bin holding at least 20% of that peak.
pub fn estimate_vertical_and_floor(cloud: &PointCloud) -> Result<(UpAxis, f64)> {
    if cloud.points.is_empty() {
        return Err(Error::invalid("empty point cloud"));
    }
    let axes = [
        UpAxis::PosZ,
        UpAxis::NegZ,
        UpAxis::PosY,
        UpAxis::NegY,
        UpAxis::PosX,
        UpAxis::NegX,
    ];
    // (peak, -points strictly below the floor bin, axis, floor, span):
    // the floor must be near the bottom of the distribution, so the sign
    // with less mass below its floor wins the tie between +a and -a.
    let mut best: Option<(usize, i64, UpAxis, f64, f64)> = None;
    for axis in axes {
        let hs: Vec<f64> = cloud.points.iter().map(|p| axis.height(p)).collect();
        let min = hs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        let nbins = ((span / HIST_BIN_M).floor() as usize + 1).max(1);
        let mut hist = vec![0usize; nbins];
        for &h in &hs {
            let i = (((h - min) / HIST_BIN_M) as usize).min(nbins - 1);
            hist[i] += 1;
        }
        let peak = *hist.iter().max().unwrap();
        let cut = (peak as f64 * FLOOR_PEAK_FRACTION).ceil() as usize;
        let floor_bin = hist.iter().position(|c| *c >= cut).unwrap();
        let floor = min + (floor_bin as f64 + 0.5) * HIST_BIN_M;
        let below: usize = hist[..floor_bin].iter().sum();
        let cand = (peak, -(below as i64), axis, floor, span);
        let better = match &best {
            None => true,
            Some(b) => (cand.0, cand.1) > (b.0, b.1),
        };
        if better {
            best = Some(cand);
        }
    }
    let (_, _, axis, floor, span) = best.unwrap();
    if span < 1.0 {
        return Err(Error::EstimationFailed(
            "cloud spans less than 1 m vertically".into(),
        ));
    }
    Ok((axis, floor))
}

const ANGLE_BINS: usize = 36;
const PAIR_CELL_M: f64 = 0.25;
const PAIR_MIN_M: f64 = 0.05;
const PAIR_MAX_M: f64 = 0.5;
const FLATNESS_FACTOR: f64 = 2.0;

/// Dominant horizontal wall direction, in degrees modulo 90.
///
/// Directions come from nearby point pairs; rotating the cloud by the
/// negated result axis-aligns the dominant walls.
pub fn estimate_manhattan_rotation(cloud: &PointCloud, up: UpAxis) -> Result<f64> {
    use std::collections::HashMap;
    let pts: Vec<(f64, f64)> = cloud.points.iter().map(|p| up.horizontal(p)).collect();
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &(u, v)) in pts.iter().enumerate() {
        let key = (
            (u / PAIR_CELL_M).floor() as i64,
            (v / PAIR_CELL_M).floor() as i64,
        );
        cells.entry(key).or_default().push(i);
    }
    let mut hist = vec![0usize; ANGLE_BINS];
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); ANGLE_BINS];
    let bin_w = 90.0 / ANGLE_BINS as f64;
    // Forward neighbor offsets only, so each pair is counted once.
    let neighbor = [(0i64, 0i64), (1, 0), (0, 1), (1, 1), (1, -1)];
    let mut keys: Vec<(i64, i64)> = cells.keys().cloned().collect();
    keys.sort_unstable();
    for key in keys {
        for (ni, off) in neighbor.iter().enumerate() {
            let nkey = (key.0 + off.0, key.1 + off.1);
            let Some(nbrs) = cells.get(&nkey) else { continue };
            let own = &cells[&key];
            for (ai, &a) in own.iter().enumerate() {
                let start = if ni == 0 { ai + 1 } else { 0 };
                for &b in nbrs.iter().skip(start).take(4) {
                    let (du, dv) = (pts[b].0 - pts[a].0, pts[b].1 - pts[a].1);
                    let d = (du * du + dv * dv).sqrt();
                    if !(PAIR_MIN_M..=PAIR_MAX_M).contains(&d) {
                        continue;
                    }
                    let ang = dv.atan2(du).to_degrees().rem_euclid(90.0);
                    let bi = ((ang / bin_w) as usize).min(ANGLE_BINS - 1);
                    hist[bi] += 1;
                    members[bi].push(ang);
                }
            }
        }
    }
    let total: usize = hist.iter().sum();
    if total == 0 {
        return Err(Error::EstimationFailed("no horizontal point pairs".into()));
    }
    let peak_bin = hist
        .iter()
        .enumerate()
        .max_by_key(|(i, c)| (**c, ANGLE_BINS - i))
        .unwrap()
        .0;
    let mean = total as f64 / ANGLE_BINS as f64;
    if (hist[peak_bin] as f64) < FLATNESS_FACTOR * mean {
        return Err(Error::EstimationFailed(
            "no dominant wall direction".into(),
        ));
    }
    // Circular mean within the peak bin, on the 90-degree circle.
    let (mut cs, mut sn) = (0.0f64, 0.0f64);
    for a in &members[peak_bin] {
        let phi = a.to_radians() * 4.0;
        cs += phi.cos();
        sn += phi.sin();
    }
    Ok((sn.atan2(cs) / 4.0).to_degrees().rem_euclid(90.0))
}

/// Permute/flip axes so up is +z, subtract the floor height and undo the
/// Manhattan rotation; returns the cloud ready for `make_evidence`.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<(PointCloud, UpAxis, f64, f64)> {
    let (up, floor) = estimate_vertical_and_floor(cloud)?;
    let theta = estimate_manhattan_rotation(cloud, up)?;
    let (s, c) = theta.to_radians().sin_cos();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (u, v) = up.horizontal(p);
            let h = up.height(p);
            // rotate by -theta
            let x = c * u + s * v;
            let y = -s * u + c * v;
            [x, y, h - floor]
        })
        .collect();
    Ok((PointCloud { points }, up, floor, theta))
}

/// Integer pixel cells crossed by the segment from a to b, endpoint excluded.
fn traverse_line(a: (i32, i32), b: (i32, i32), mut visit: impl FnMut(i32, i32)) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (x, y) == b {
            break;
        }
        visit(x, y);
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Project a height-normalized cloud to point- and free-space rasters.
pub fn make_evidence(
    cloud: &PointCloud,
    meters_per_pixel: f64,
    params: &EvidenceParams,
) -> Result<ScanEvidence> {
    if cloud.points.is_empty() {
        return Err(Error::invalid("empty point cloud"));
    }
    let proj: Vec<(i32, i32)> = cloud
        .points
        .iter()
        .map(|p| {
            (
                (p[0] / meters_per_pixel).round() as i32,
                (p[1] / meters_per_pixel).round() as i32,
            )
        })
        .collect();
    let mut minx = 0i32;
    let mut miny = 0i32;
    let mut maxx = 0i32;
    let mut maxy = 0i32;
    for &(x, y) in &proj {
        minx = minx.min(x);
        miny = miny.min(y);
        maxx = maxx.max(x);
        maxy = maxy.max(y);
    }
    let w = (maxx - minx + 5) as usize;
    let h = (maxy - miny + 5) as usize;
    let to_px = |p: (i32, i32)| (p.0 - minx + 2, p.1 - miny + 2);
    let origin_px = to_px((0, 0));

    let mut counts = vec![0u32; w * h];
    let mut in_band = 0usize;
    for (p, &(px, py)) in cloud.points.iter().zip(&proj) {
        if p[2] > params.band_low_m && p[2] < params.band_high_m {
            let (x, y) = to_px((px, py));
            counts[y as usize * w + x as usize] += 1;
            in_band += 1;
        }
    }
    if in_band == 0 {
        return Err(Error::EstimationFailed(
            "no points in the wall height band".into(),
        ));
    }
    let mut nonzero: Vec<u32> = counts.iter().cloned().filter(|c| *c > 0).collect();
    nonzero.sort_unstable();
    let idx = ((nonzero.len() - 1) as f64 * params.percentile).round() as usize;
    let norm = nonzero[idx].max(1) as f32;
    let point_ev = GrayImage::from_vec(
        w,
        h,
        counts
            .iter()
            .map(|c| (*c as f32 / norm).min(1.0))
            .collect(),
    );

    let mut free = BinaryMask::new(w, h, false);
    for &(px, py) in &proj {
        let end = to_px((px, py));
        traverse_line(origin_px, end, |x, y| {
            if free.in_bounds(x, y) {
                free.set(x as usize, y as usize, true);
            }
        });
    }
    let mut free = free.open_chebyshev(1);
    // The scanner always stands in free space.
    free.set(origin_px.0 as usize, origin_px.1 as usize, true);

    Ok(ScanEvidence {
        point_ev,
        free_space: free,
        doors: BinaryMask::new(w, h, false),
        origin_px,
        meters_per_pixel,
    })
}

/// Wall-gap door heuristic on the 2D evidence rasters: a doorway is a gap of
/// door width in a wall run, free along the gap and on both perpendicular
/// sides. The returned mask adds the flanking wall-endpoint pixels to any
/// doors already present.
pub fn detect_doors_scan(ev: &ScanEvidence, params: &DoorScanParams) -> BinaryMask {
    let (w, h) = (ev.point_ev.width(), ev.point_ev.height());
    let mpp = ev.meters_per_pixel;
    let wall = |x: i32, y: i32| -> bool {
        ev.point_ev.in_bounds(x, y) && ev.point_ev.at(x, y) > params.wall_threshold
    };
    let free = |x: i32, y: i32| -> bool { ev.free_space.in_bounds(x, y) && ev.free_space.at(x, y) };
    let mut doors = ev.doors.clone();

    // along == 0: horizontal walls (scan rows); along == 1: vertical walls.
    for along in 0..2 {
        let (outer, inner) = if along == 0 { (h, w) } else { (w, h) };
        for o in 0..outer as i32 {
            // maximal runs of wall pixels along this line
            let mut runs: Vec<(i32, i32)> = Vec::new();
            let mut start: Option<i32> = None;
            for i in 0..inner as i32 {
                let (x, y) = if along == 0 { (i, o) } else { (o, i) };
                if wall(x, y) {
                    if start.is_none() {
                        start = Some(i);
                    }
                } else if let Some(s) = start.take() {
                    runs.push((s, i - 1));
                }
            }
            if let Some(s) = start {
                runs.push((s, inner as i32 - 1));
            }
            for pair in runs.windows(2) {
                let (l, r) = (pair[0], pair[1]);
                if (l.1 - l.0 + 1) < params.min_run_px as i32
                    || (r.1 - r.0 + 1) < params.min_run_px as i32
                {
                    continue;
                }
                let gap = r.0 - l.1 - 1;
                let gap_m = gap as f64 * mpp;
                if !(params.min_gap_m..=params.max_gap_m).contains(&gap_m) {
                    continue;
                }
                let d = params.perp_probe_px;
                let mut ok = true;
                for i in l.1 + 1..r.0 {
                    let (x, y) = if along == 0 { (i, o) } else { (o, i) };
                    let (pa, pb) = if along == 0 {
                        ((x, y - d), (x, y + d))
                    } else {
                        ((x - d, y), (x + d, y))
                    };
                    if !free(x, y) || !free(pa.0, pa.1) || !free(pb.0, pb.1) {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    let (ex, ey) = if along == 0 { (l.1, o) } else { (o, l.1) };
                    let (sx, sy) = if along == 0 { (r.0, o) } else { (o, r.0) };
                    doors.set(ex as usize, ey as usize, true);
                    doors.set(sx as usize, sy as usize, true);
                }
            }
        }
    }
    doors
}

/// Checks the structural invariants of an evidence pack.
pub fn validate_evidence(ev: &ScanEvidence) -> Result<()> {
    let (w, h) = (ev.point_ev.width(), ev.point_ev.height());
    if ev.free_space.width() != w
        || ev.free_space.height() != h
        || ev.doors.width() != w
        || ev.doors.height() != h
    {
        return Err(Error::invalid("evidence rasters disagree on dimensions"));
    }
    if ev.meters_per_pixel <= 0.0 {
        return Err(Error::invalid("meters_per_pixel must be positive"));
    }
    if !ev.free_space.in_bounds(ev.origin_px.0, ev.origin_px.1)
        || !ev.free_space.at(ev.origin_px.0, ev.origin_px.1)
    {
        return Err(Error::invalid("scanner origin must lie in free space"));
    }
    if ev.point_ev.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("point evidence out of [0,1]"));
    }
    for (x, y) in ev.doors.set_pixels() {
        if ev.point_ev.at(x, y) <= 0.0 {
            return Err(Error::invalid("door pixel without point evidence"));
        }
    }
    Ok(())
}

impl ScanEvidence {
    /// Rotate the whole pack by k CCW quarter turns.
    pub fn rotate_quarter(&self, k: u8) -> ScanEvidence {
        let dims = (self.point_ev.width(), self.point_ev.height());
        ScanEvidence {
            point_ev: self.point_ev.rotate_quarter(k),
            free_space: self.free_space.rotate_quarter(k),
            doors: self.doors.rotate_quarter(k),
            origin_px: crate::raster::rotate_point(self.origin_px, k, dims),
            meters_per_pixel: self.meters_per_pixel,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PackMeta {
    origin_px: [i32; 2],
    meters_per_pixel: f64,
}

/// Write an evidence pack as `<stem>.point.png` (16-bit), `<stem>.free.png`,
/// `<stem>.doors.png` and `<stem>.meta.json` inside `dir`.
pub fn save_evidence_pack(dir: impl AsRef<Path>, stem: &str, ev: &ScanEvidence) -> Result<()> {
    let dir = dir.as_ref();
    ev.point_ev.save_png16(dir.join(format!("{stem}.point.png")))?;
    ev.free_space.save_png(dir.join(format!("{stem}.free.png")))?;
    ev.doors.save_png(dir.join(format!("{stem}.doors.png")))?;
    let meta = PackMeta {
        origin_px: [ev.origin_px.0, ev.origin_px.1],
        meters_per_pixel: ev.meters_per_pixel,
    };
    let mut f = File::create(dir.join(format!("{stem}.meta.json")))?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

pub fn load_evidence_pack(dir: impl AsRef<Path>, stem: &str) -> Result<ScanEvidence> {
    let dir = dir.as_ref();
    let point_ev = GrayImage::load_png(dir.join(format!("{stem}.point.png")))?;
    let free_space = BinaryMask::load_png(dir.join(format!("{stem}.free.png")))?;
    let doors = BinaryMask::load_png(dir.join(format!("{stem}.doors.png")))?;
    let meta: PackMeta =
        serde_json::from_reader(File::open(dir.join(format!("{stem}.meta.json")))?)?;
    let ev = ScanEvidence {
        point_ev,
        free_space,
        doors,
        origin_px: (meta.origin_px[0], meta.origin_px[1]),
        meters_per_pixel: meta.meters_per_pixel,
    };
    validate_evidence(&ev)?;
    Ok(ev)
}

/// Read an ASCII or binary little-endian PLY, keeping x/y/z and ignoring all
/// other vertex properties.
pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::invalid("PLY header without end_header"));
        }
        header.push_str(&line);
        if line.trim() == "end_header" {
            break;
        }
    }
    let mut format = "";
    let mut vertex_count = 0usize;
    let mut props: Vec<(String, String)> = Vec::new(); // (type, name)
    let mut in_vertex = false;
    for l in header.lines() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", f, _] => format = if *f == "ascii" { "ascii" } else { *f },
            ["element", "vertex", n] => {
                vertex_count = n.parse().map_err(|_| Error::invalid("bad vertex count"))?;
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                props.push((ty.to_string(), name.to_string()));
            }
            _ => {}
        }
    }
    let idx_of = |name: &str| props.iter().position(|(_, n)| n == name);
    let (ix, iy, iz) = match (idx_of("x"), idx_of("y"), idx_of("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::invalid("PLY lacks x/y/z vertex properties")),
    };
    let mut points = Vec::with_capacity(vertex_count);
    match format {
        "ascii" => {
            for _ in 0..vertex_count {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    return Err(Error::invalid("truncated ASCII PLY"));
                }
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse().unwrap_or(f64::NAN))
                    .collect();
                if vals.len() < props.len() {
                    return Err(Error::invalid("short PLY vertex line"));
                }
                let p = [vals[ix], vals[iy], vals[iz]];
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite PLY coordinate"));
                }
                points.push(p);
            }
        }
        "binary_little_endian" => {
            let size = |ty: &str| -> Result<usize> {
                Ok(match ty {
                    "char" | "uchar" | "int8" | "uint8" => 1,
                    "short" | "ushort" | "int16" | "uint16" => 2,
                    "int" | "uint" | "int32" | "uint32" | "float" | "float32" => 4,
                    "double" | "float64" => 8,
                    other => {
                        return Err(Error::invalid(format!("unsupported PLY type {other}")))
                    }
                })
            };
            let sizes: Vec<usize> = props
                .iter()
                .map(|(t, _)| size(t))
                .collect::<Result<_>>()?;
            let stride: usize = sizes.iter().sum();
            let mut buf = vec![0u8; stride];
            let offsets: Vec<usize> = sizes
                .iter()
                .scan(0usize, |acc, s| {
                    let o = *acc;
                    *acc += s;
                    Some(o)
                })
                .collect();
            let read_f = |buf: &[u8], i: usize| -> f64 {
                let off = offsets[i];
                match sizes[i] {
                    4 => f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64,
                    8 => f64::from_le_bytes(buf[off..off + 8].try_into().unwrap()),
                    _ => f64::NAN,
                }
            };
            for _ in 0..vertex_count {
                reader.read_exact(&mut buf)?;
                let p = [read_f(&buf, ix), read_f(&buf, iy), read_f(&buf, iz)];
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("non-finite PLY coordinate"));
                }
                points.push(p);
            }
        }
        other => return Err(Error::invalid(format!("unsupported PLY format {other}"))),
    }
    if points.is_empty() {
        return Err(Error::invalid("PLY contains no points"));
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic box room: dense floor plane plus four walls.
    fn box_room(w_m: f64, d_m: f64, h_m: f64, scanner: (f64, f64)) -> PointCloud {
        let mut points = Vec::new();
        let step = 0.08;
        let mut x = 0.0;
        while x <= w_m {
            let mut y = 0.0;
            while y <= d_m {
                points.push([x - scanner.0, y - scanner.1, 0.0]);
                y += step;
            }
            x += step;
        }
        // walls: dense along the wall so ray fans leave no holes
        let mut z = 0.2;
        while z <= h_m {
            let mut t = 0.0;
            while t <= w_m {
                points.push([t - scanner.0, -scanner.1, z]);
                points.push([t - scanner.0, d_m - scanner.1, z]);
                t += step * 0.5;
            }
            let mut t = 0.0;
            while t <= d_m {
                points.push([-scanner.0, t - scanner.1, z]);
                points.push([w_m - scanner.0, t - scanner.1, z]);
                t += step * 0.5;
            }
            z += 0.3;
        }
        PointCloud { points }
    }

    #[test]
    fn vertical_and_floor_on_box_room() {
        let cloud = box_room(8.0, 6.0, 3.0, (4.0, 3.0));
        let (up, floor) = estimate_vertical_and_floor(&cloud).unwrap();
        assert_eq!(up, UpAxis::PosZ);
        assert!(floor.abs() <= 0.05, "floor={floor}");
    }

    #[test]
    fn vertical_estimation_is_permutation_equivariant() {
        let cloud = box_room(8.0, 6.0, 3.0, (4.0, 3.0));
        let swapped = PointCloud {
            points: cloud.points.iter().map(|p| [p[0], p[2], p[1]]).collect(),
        };
        let (up, floor) = estimate_vertical_and_floor(&swapped).unwrap();
        assert_eq!(up, UpAxis::PosY);
        assert!(floor.abs() <= 0.05);
    }

    #[test]
    fn floor_height_is_translation_equivariant() {
        let cloud = box_room(8.0, 6.0, 3.0, (4.0, 3.0));
        let lifted = PointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| [p[0], p[1], p[2] + 2.0])
                .collect(),
        };
        let (up, floor) = estimate_vertical_and_floor(&lifted).unwrap();
        assert_eq!(up, UpAxis::PosZ);
        assert!((floor - 2.0).abs() <= 0.05, "floor={floor}");
    }

    #[test]
    fn planar_cloud_fails_estimation() {
        let mut points = Vec::new();
        for i in 0..50 {
            for j in 0..50 {
                points.push([i as f64 * 0.1, j as f64 * 0.1, 0.0]);
            }
        }
        assert!(matches!(
            estimate_vertical_and_floor(&PointCloud { points }),
            Err(Error::EstimationFailed(_))
        ));
    }

    fn yawed(cloud: &PointCloud, deg: f64) -> PointCloud {
        let (s, c) = deg.to_radians().sin_cos();
        PointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
                .collect(),
        }
    }

    fn mod90_dist(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(90.0);
        d.min(90.0 - d)
    }

    #[test]
    fn manhattan_rotation_on_aligned_and_yawed_rooms() {
        let cloud = box_room(8.0, 6.0, 3.0, (4.0, 3.0));
        let t0 = estimate_manhattan_rotation(&cloud, UpAxis::PosZ).unwrap();
        assert!(mod90_dist(t0, 0.0) <= 2.5, "t0={t0}");
        let t30 = estimate_manhattan_rotation(&yawed(&cloud, 30.0), UpAxis::PosZ).unwrap();
        assert!(mod90_dist(t30, 30.0) <= 2.5, "t30={t30}");
        let t120 = estimate_manhattan_rotation(&yawed(&cloud, 120.0), UpAxis::PosZ).unwrap();
        assert!(mod90_dist(t120, 30.0) <= 2.5, "t120={t120}");
    }

    #[test]
    fn evidence_of_square_room() {
        let cloud = box_room(8.0, 8.0, 3.0, (4.0, 4.0));
        let ev = make_evidence(&cloud, 0.05, &EvidenceParams::default()).unwrap();
        validate_evidence(&ev).unwrap();
        // free space roughly fills the 160 px square interior
        let area = ev.free_space.count() as f64;
        let expected = (8.0 / 0.05) * (8.0 / 0.05);
        assert!(area > 0.85 * expected, "area={area} expected~{expected}");
        assert!(ev.free_space.at(ev.origin_px.0, ev.origin_px.1));
        // point evidence concentrates near the walls
        let (w, h) = (ev.point_ev.width(), ev.point_ev.height());
        let mut wall_mass = 0.0;
        let mut interior_mass = 0.0;
        for y in 0..h {
            for x in 0..w {
                let v = ev.point_ev.get(x, y) as f64;
                let near_edge = x < 6 || y < 6 || x >= w - 6 || y >= h - 6;
                if near_edge {
                    wall_mass += v;
                } else {
                    interior_mass += v;
                }
            }
        }
        assert!(wall_mass > 10.0 * interior_mass.max(1e-9));
    }

    #[test]
    fn percentile_normalization_ignores_density_doubling() {
        let cloud = box_room(6.0, 5.0, 3.0, (3.0, 2.5));
        let doubled = PointCloud {
            points: cloud
                .points
                .iter()
                .chain(cloud.points.iter())
                .cloned()
                .collect(),
        };
        let a = make_evidence(&cloud, 0.05, &EvidenceParams::default()).unwrap();
        let b = make_evidence(&doubled, 0.05, &EvidenceParams::default()).unwrap();
        assert_eq!(a.point_ev, b.point_ev);
    }

    #[test]
    fn pillar_casts_a_free_space_shadow() {
        // 64x64-ish toy scene in world coordinates: scanner at the origin,
        // wall at x = 1.5 m, pillar at x = 0.75 m. The scanner never returns
        // points it cannot see, so wall/floor samples inside the pillar's
        // angular shadow (|y| <= 0.2 m at the wall) are absent from the cloud.
        let mut points = Vec::new();
        for i in -30..=30 {
            let y = i as f64 * 0.05;
            if y.abs() > 0.2 {
                points.push([1.5, y, 1.0]);
                points.push([1.5, y, 0.0]);
            }
        }
        for i in -2..=2 {
            let y = i as f64 * 0.05;
            points.push([0.75, y, 1.0]);
        }
        points.push([-0.2, 0.0, 0.0]);
        points.push([0.0, -0.2, 2.0]);
        let ev = make_evidence(&PointCloud { points }, 0.05, &EvidenceParams::default()).unwrap();
        // Directly behind the pillar nothing was traversed: shadow cells.
        let (ox, oy) = ev.origin_px;
        let pillar_px = ox + 15; // 0.75 / 0.05
        let wall_px = ox + 30;
        let mut shadowed = 0;
        for x in pillar_px + 2..wall_px - 1 {
            if !ev.free_space.at(x, oy) {
                shadowed += 1;
            }
        }
        assert!(shadowed > 8, "shadow cells = {shadowed}");
        // Off-axis rays reach the wall: the midpoint of the segment to the
        // wall sample at y = 0.75 m is crossed and stays free.
        assert!(ev.free_space.at(ox + 15, oy + 7));
    }

    #[test]
    fn point_evidence_touches_free_space_dilation() {
        let cloud = box_room(6.0, 5.0, 3.0, (2.0, 2.0));
        let ev = make_evidence(&cloud, 0.05, &EvidenceParams::default()).unwrap();
        let fs_dilated = ev.free_space.dilate_chebyshev(1);
        for y in 0..ev.point_ev.height() {
            for x in 0..ev.point_ev.width() {
                if ev.point_ev.get(x, y) > 0.0 {
                    assert!(fs_dilated.get(x, y), "orphan evidence at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn evidence_is_deterministic() {
        let cloud = box_room(7.0, 4.0, 2.8, (3.0, 2.0));
        let a = make_evidence(&cloud, 0.05, &EvidenceParams::default()).unwrap();
        let b = make_evidence(&cloud, 0.05, &EvidenceParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evidence_is_quarter_turn_equivariant() {
        let cloud = box_room(6.0, 4.0, 3.0, (2.5, 1.5));
        let ev = make_evidence(&cloud, 0.1, &EvidenceParams::default()).unwrap();
        // world rotation matching one CCW raster quarter turn
        let rotated_cloud = PointCloud {
            points: cloud.points.iter().map(|p| [p[1], -p[0], p[2]]).collect(),
        };
        let ev_r = make_evidence(&rotated_cloud, 0.1, &EvidenceParams::default()).unwrap();
        let expect = ev.rotate_quarter(1);
        assert_eq!(
            (ev_r.point_ev.width(), ev_r.point_ev.height()),
            (expect.point_ev.width(), expect.point_ev.height())
        );
        assert_eq!(ev_r.origin_px, expect.origin_px);
        // free-space masks agree up to 1 px of rasterization jitter
        let a = &ev_r.free_space;
        let b = expect.free_space.dilate_chebyshev(1);
        for (x, y) in a.set_pixels() {
            assert!(b.at(x, y), "extra free pixel ({x},{y})");
        }
        let c = ev_r.free_space.dilate_chebyshev(1);
        for (x, y) in expect.free_space.set_pixels() {
            assert!(c.at(x, y), "missing free pixel ({x},{y})");
        }
    }

    /// 48x48 hand raster: horizontal wall row with a controllable gap.
    fn gap_fixture(gap_px: usize, free_behind: bool) -> ScanEvidence {
        let n = 48;
        let mpp = 0.1; // 0.9 m = 9 px
        let mut p = GrayImage::new(n, n, 0.0);
        let wall_y = 24usize;
        let gap_start = 20usize;
        for x in 2..n - 2 {
            if !(gap_start..gap_start + gap_px).contains(&x) {
                p.set(x, wall_y, 1.0);
            }
        }
        let mut fs = BinaryMask::new(n, n, false);
        for y in 4..wall_y {
            for x in 2..n - 2 {
                fs.set(x, y, true);
            }
        }
        for x in gap_start..gap_start + gap_px {
            fs.set(x, wall_y, true);
        }
        if free_behind {
            for y in wall_y + 1..n - 4 {
                for x in 2..n - 2 {
                    fs.set(x, y, true);
                }
            }
        }
        ScanEvidence {
            point_ev: p,
            free_space: fs,
            doors: BinaryMask::new(n, n, false),
            origin_px: (10, 10),
            meters_per_pixel: mpp,
        }
    }

    #[test]
    fn door_gap_is_flagged() {
        let ev = gap_fixture(9, true);
        let doors = detect_doors_scan(&ev, &DoorScanParams::default());
        assert!(doors.get(19, 24), "left flank");
        assert!(doors.get(29, 24), "right flank");
    }

    #[test]
    fn wide_gap_is_not_a_door() {
        let ev = gap_fixture(25, true); // 2.5 m
        let doors = detect_doors_scan(&ev, &DoorScanParams::default());
        assert_eq!(doors.count(), 0);
    }

    #[test]
    fn alcove_gap_is_not_a_door() {
        let ev = gap_fixture(9, false);
        let doors = detect_doors_scan(&ev, &DoorScanParams::default());
        assert_eq!(doors.count(), 0);
    }

    #[test]
    fn ply_roundtrip_ascii_and_binary() {
        let dir = tempfile::tempdir().unwrap();
        let pts = [[0.5, -1.25, 2.0], [3.0, 4.0, 5.0], [-1.0, 0.0, 1.5]];

        let ascii = dir.path().join("a.ply");
        {
            let mut f = File::create(&ascii).unwrap();
            writeln!(f, "ply\nformat ascii 1.0\nelement vertex 3").unwrap();
            writeln!(f, "property float x\nproperty float y\nproperty float z").unwrap();
            writeln!(f, "property uchar red").unwrap();
            writeln!(f, "end_header").unwrap();
            for p in &pts {
                writeln!(f, "{} {} {} 7", p[0], p[1], p[2]).unwrap();
            }
        }
        let c = load_ply(&ascii).unwrap();
        assert_eq!(c.points.len(), 3);
        assert_eq!(c.points[0], [0.5, -1.25, 2.0]);

        let bin = dir.path().join("b.ply");
        {
            let mut f = File::create(&bin).unwrap();
            write!(
                f,
                "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n"
            )
            .unwrap();
            for p in &pts {
                for v in p {
                    f.write_all(&(*v as f32).to_le_bytes()).unwrap();
                }
            }
        }
        let c = load_ply(&bin).unwrap();
        assert_eq!(c.points.len(), 3);
        assert!((c.points[1][2] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn pack_roundtrip() {
        let ev = gap_fixture(9, true);
        let dir = tempfile::tempdir().unwrap();
        save_evidence_pack(dir.path(), "scan_00", &ev).unwrap();
        let back = load_evidence_pack(dir.path(), "scan_00").unwrap();
        assert_eq!(back.free_space, ev.free_space);
        assert_eq!(back.origin_px, ev.origin_px);
        assert!((back.meters_per_pixel - ev.meters_per_pixel).abs() < 1e-12);
    }
}
