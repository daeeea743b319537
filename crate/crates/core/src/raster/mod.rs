//! Raster primitives: grayscale images in [0,1], binary masks, pooling,
//! morphology, distance transform, template matching, connected components
//! and lossless quarter-turn rotation.

mod io;

use crate::error::{Error, Result};

/// Row-major grayscale raster with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

/// Pooling reduction mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Min,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f32) -> Self {
        debug_assert!((0.0..=1.0).contains(&fill));
        GrayImage {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "data length must be w*h");
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn at(&self, x: i32, y: i32) -> f32 {
        self.get(x as usize, y as usize)
    }

    /// 2x2 pooling; odd edges pad with the mode's neutral element
    /// (0 for max, 1 for min) so no evidence is invented.
    pub fn pool2x2(&self, mode: PoolMode) -> GrayImage {
        let ow = self.width.div_ceil(2);
        let oh = self.height.div_ceil(2);
        let neutral = match mode {
            PoolMode::Max => 0.0f32,
            PoolMode::Min => 1.0f32,
        };
        let mut out = vec![neutral; ow * oh];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = neutral;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let x = 2 * ox + dx;
                        let y = 2 * oy + dy;
                        let v = if x < self.width && y < self.height {
                            self.get(x, y)
                        } else {
                            neutral
                        };
                        acc = match mode {
                            PoolMode::Max => acc.max(v),
                            PoolMode::Min => acc.min(v),
                        };
                    }
                }
                out[oy * ow + ox] = acc;
            }
        }
        GrayImage::from_vec(ow, oh, out)
    }

    /// Flat grayscale dilation: max over an odd kernel window, edge-clamped.
    pub fn dilate(&self, kernel: usize) -> Result<GrayImage> {
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::invalid(format!(
                "dilation kernel must be odd and >= 1, got {kernel}"
            )));
        }
        let r = (kernel / 2) as i32;
        let mut out = GrayImage::new(self.width, self.height, 0.0);
        // Separable: horizontal max, then vertical max.
        let mut tmp = vec![0.0f32; self.width * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                let x0 = (x as i32 - r).max(0) as usize;
                let x1 = ((x as i32 + r) as usize).min(self.width - 1);
                let mut m = 0.0f32;
                for xx in x0..=x1 {
                    m = m.max(self.get(xx, y));
                }
                tmp[y * self.width + x] = m;
            }
        }
        for y in 0..self.height {
            for x in 0..self.width {
                let y0 = (y as i32 - r).max(0) as usize;
                let y1 = ((y as i32 + r) as usize).min(self.height - 1);
                let mut m = 0.0f32;
                for yy in y0..=y1 {
                    m = m.max(tmp[yy * self.width + x]);
                }
                out.set(x, y, m);
            }
        }
        Ok(out)
    }

    /// Pointwise 1 - v.
    pub fn inverted(&self) -> GrayImage {
        let data = self.data.iter().map(|v| 1.0 - v).collect();
        GrayImage::from_vec(self.width, self.height, data)
    }

    /// Lossless counter-clockwise rotation by k quarter turns.
    pub fn rotate_quarter(&self, k: u8) -> GrayImage {
        let k = k % 4;
        let (w, h) = (self.width, self.height);
        let (ow, oh) = if k % 2 == 0 { (w, h) } else { (h, w) };
        let mut out = vec![0.0f32; ow * oh];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = rotate_point((x as i32, y as i32), k, (w, h));
                out[ny as usize * ow + nx as usize] = self.get(x, y);
            }
        }
        GrayImage::from_vec(ow, oh, out)
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, fill: bool) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "bits length must be w*h");
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    #[inline]
    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    #[inline]
    pub fn at(&self, x: i32, y: i32) -> bool {
        self.get(x as usize, y as usize)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Set-pixel coordinates in row-major order.
    pub fn set_pixels(&self) -> Vec<(i32, i32)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.push((x as i32, y as i32));
                }
            }
        }
        out
    }

    /// Max-pooling for masks: any set bit in the 2x2 block sets the output.
    pub fn pool2x2_any(&self) -> BinaryMask {
        let ow = self.width.div_ceil(2);
        let oh = self.height.div_ceil(2);
        let mut out = BinaryMask::new(ow, oh, false);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    out.set(x / 2, y / 2, true);
                }
            }
        }
        out
    }

    /// Chebyshev dilation by radius r (square structuring element).
    pub fn dilate_chebyshev(&self, r: usize) -> BinaryMask {
        let r = r as i32;
        let mut out = BinaryMask::new(self.width, self.height, false);
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                if !self.at(x, y) {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if out.in_bounds(x + dx, y + dy) {
                            out.set((x + dx) as usize, (y + dy) as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// Chebyshev erosion by radius r; pixels whose window leaves the raster
    /// are cleared (border counts as background).
    pub fn erode_chebyshev(&self, r: usize) -> BinaryMask {
        let r = r as i32;
        let mut out = BinaryMask::new(self.width, self.height, false);
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let mut keep = true;
                'win: for dy in -r..=r {
                    for dx in -r..=r {
                        if !self.in_bounds(x + dx, y + dy) || !self.at(x + dx, y + dy) {
                            keep = false;
                            break 'win;
                        }
                    }
                }
                if keep {
                    out.set(x as usize, y as usize, true);
                }
            }
        }
        out
    }

    /// Morphological opening with a (2r+1)^2 square element.
    pub fn open_chebyshev(&self, r: usize) -> BinaryMask {
        self.erode_chebyshev(r).dilate_chebyshev(r)
    }

    pub fn rotate_quarter(&self, k: u8) -> BinaryMask {
        let k = k % 4;
        let (w, h) = (self.width, self.height);
        let (ow, oh) = if k % 2 == 0 { (w, h) } else { (h, w) };
        let mut out = vec![false; ow * oh];
        for y in 0..h {
            for x in 0..w {
                let (nx, ny) = rotate_point((x as i32, y as i32), k, (w, h));
                out[ny as usize * ow + nx as usize] = self.get(x, y);
            }
        }
        BinaryMask::from_vec(ow, oh, out)
    }
}

/// Where a pixel of a (w, h) raster lands under k CCW quarter turns.
#[inline]
pub fn rotate_point(p: (i32, i32), k: u8, dims: (usize, usize)) -> (i32, i32) {
    let (w, h) = (dims.0 as i32, dims.1 as i32);
    match k % 4 {
        0 => p,
        1 => (p.1, w - 1 - p.0),
        2 => (w - 1 - p.0, h - 1 - p.1),
        3 => (h - 1 - p.1, p.0),
        _ => unreachable!(),
    }
}

/// Quarter-turn rotation of an offset vector; matches `rotate_point` in the
/// sense that offsets from a rotated anchor rotate by exactly this map.
#[inline]
pub fn rotate_offset(d: (i32, i32), k: u8) -> (i32, i32) {
    match k % 4 {
        0 => d,
        1 => (d.1, -d.0),
        2 => (-d.0, -d.1),
        3 => (-d.1, d.0),
        _ => unreachable!(),
    }
}

/// Exact Euclidean distance from every pixel to the nearest set bit.
///
/// Two-pass lower-envelope-of-parabolas method on squared distances.
pub fn distance_transform(mask: &BinaryMask) -> Result<Vec<f64>> {
    if mask.count() == 0 {
        return Err(Error::invalid("distance transform of an empty mask"));
    }
    let (w, h) = (mask.width(), mask.height());
    const INF: f64 = 1e20;
    let mut sq = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            sq[y * w + x] = if mask.get(x, y) { 0.0 } else { INF };
        }
    }
    // Columns, then rows.
    let mut col = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = sq[y * w + x];
        }
        let d = dt_1d(&col);
        for y in 0..h {
            sq[y * w + x] = d[y];
        }
    }
    let mut row = vec![0.0f64; w];
    for y in 0..h {
        row.copy_from_slice(&sq[y * w..(y + 1) * w]);
        let d = dt_1d(&row);
        sq[y * w..(y + 1) * w].copy_from_slice(&d);
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// 1D squared distance transform of a sampled function.
fn dt_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0f64; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = -1e30;
    z[1] = 1e30;
    for q in 1..n {
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                if k == 0 {
                    break;
                }
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] {
            // q dominates everywhere
            v[k] = q;
            z[k + 1] = 1e30;
        } else {
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = 1e30;
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
    d
}

/// One template-match detection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Detection {
    /// Top-left offset of the matched window in the image.
    pub pos: (usize, usize),
    /// Matched window dims (rotated template dims).
    pub dims: (usize, usize),
    pub score: f64,
}

/// Normalized cross-correlation of one template over every valid offset.
/// Windows with no intensity variation score 0.
pub(crate) fn ncc_score_map(
    img: &GrayImage,
    t: &GrayImage,
) -> Result<(Vec<f64>, usize, usize)> {
    if t.width() >= img.width() || t.height() >= img.height() {
        return Err(Error::invalid(
            "template must be strictly smaller than the image",
        ));
    }
    let (tw, th) = (t.width(), t.height());
    let n = (tw * th) as f64;
    let tmean = t.data().iter().map(|v| *v as f64).sum::<f64>() / n;
    let tvar: f64 = t
        .data()
        .iter()
        .map(|v| (*v as f64 - tmean) * (*v as f64 - tmean))
        .sum();
    if tvar <= 1e-12 {
        return Err(Error::invalid("constant template: NCC undefined"));
    }
    let sw = img.width() - tw + 1;
    let sh = img.height() - th + 1;
    let mut scores = vec![0.0f64; sw * sh];
    for oy in 0..sh {
        for ox in 0..sw {
            let mut isum = 0.0f64;
            let mut isq = 0.0f64;
            let mut cross = 0.0f64;
            for y in 0..th {
                for x in 0..tw {
                    let iv = img.get(ox + x, oy + y) as f64;
                    let tv = t.get(x, y) as f64;
                    isum += iv;
                    isq += iv * iv;
                    cross += iv * tv;
                }
            }
            let imean = isum / n;
            let ivar = isq - isum * isum / n;
            let cov = cross - n * imean * tmean;
            scores[oy * sw + ox] = if ivar <= 1e-12 {
                0.0
            } else {
                cov / (ivar * tvar).sqrt()
            };
        }
    }
    Ok((scores, sw, sh))
}

/// Normalized cross-correlation detections of a template over an image:
/// every local score maximum of every template variant.
pub(crate) fn match_template_variants(
    img: &GrayImage,
    variants: &[GrayImage],
) -> Result<Vec<Detection>> {
    let mut detections = Vec::new();
    for t in variants {
        let (tw, th) = (t.width(), t.height());
        let (scores, sw, sh) = ncc_score_map(img, t)?;
        // Local maxima over the 8-neighborhood, first-in-raster-order wins ties.
        for oy in 0..sh {
            for ox in 0..sw {
                let s = scores[oy * sw + ox];
                let mut is_max = true;
                'nbrs: for dy in -1i32..=1 {
                    for dx in -1i32..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = ox as i32 + dx;
                        let ny = oy as i32 + dy;
                        if nx < 0 || ny < 0 || nx as usize >= sw || ny as usize >= sh {
                            continue;
                        }
                        let sn = scores[ny as usize * sw + nx as usize];
                        let earlier = (ny, nx) < (oy as i32, ox as i32);
                        if sn > s || (sn == s && earlier) {
                            is_max = false;
                            break 'nbrs;
                        }
                    }
                }
                if is_max {
                    detections.push(Detection {
                        pos: (ox, oy),
                        dims: (tw, th),
                        score: s,
                    });
                }
            }
        }
    }
    Ok(detections)
}

/// NCC template matching over all four quarter-turns of the template.
/// The returned mask marks the top-left offset of each local maximum whose
/// score reaches the threshold.
pub fn match_template(
    img: &GrayImage,
    template: &GrayImage,
    threshold: f64,
) -> Result<BinaryMask> {
    let variants: Vec<GrayImage> = (0..4).map(|k| template.rotate_quarter(k)).collect();
    let detections = match_template_variants(img, &variants)?;
    let mut mask = BinaryMask::new(img.width(), img.height(), false);
    for d in detections {
        if d.score >= threshold {
            mask.set(d.pos.0, d.pos.1, true);
        }
    }
    Ok(mask)
}

/// Whiten 8-connected components of ink (intensity < ink_threshold) whose
/// area is below min_area; everything else is left untouched.
pub fn remove_small_components(
    img: &GrayImage,
    ink_threshold: f32,
    min_area: usize,
) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..w * h {
        if visited[start] || img.data()[start] >= ink_threshold {
            continue;
        }
        component.clear();
        stack.push(start);
        visited[start] = true;
        while let Some(i) = stack.pop() {
            component.push(i);
            let (x, y) = ((i % w) as i32, (i / w) as i32);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if !img.in_bounds(nx, ny) {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    if !visited[ni] && img.data()[ni] < ink_threshold {
                        visited[ni] = true;
                        stack.push(ni);
                    }
                }
            }
        }
        if component.len() < min_area {
            for &i in &component {
                out.data_mut()[i] = 1.0;
            }
        }
    }
    out
}
