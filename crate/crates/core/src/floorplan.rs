//! Floorplan preprocessing: clutter removal, metric scale, building mask,
//! door detection and the dilated ink image used by the geometric cue.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{match_template_variants, remove_small_components, BinaryMask, GrayImage};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Two marked pixels a known metric distance apart.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RulerSpec {
    pub ax: f64,
    pub ay: f64,
    pub bx: f64,
    pub by: f64,
    pub meters: f64,
}

/// A manually marked door symbol plus the NCC acceptance threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DoorTemplateSpec {
    pub bbox: PixelRect,
    pub score_threshold: f64,
}

/// Floorplan preprocessing knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FloorplanParams {
    /// Intensities below this count as ink.
    pub ink_threshold: f32,
    /// Ink components smaller than this area are treated as clutter.
    pub clutter_min_area_m2: f64,
    /// CCW quarter turns applied to the raw image before anything else.
    pub quarter_turns: u8,
}

impl Default for FloorplanParams {
    fn default() -> Self {
        FloorplanParams {
            ink_threshold: 0.4,
            clutter_min_area_m2: 0.25,
            quarter_turns: 0,
        }
    }
}

/// Everything the placement search needs to know about a floorplan.
///
/// `clean` keeps the scanned orientation (ink dark, background white);
/// `dilated` is the 5x5 grayscale dilation of the inverted image, so it is
/// high wherever ink is nearby and zero over blank paper.
#[derive(Debug, Clone)]
pub struct FloorplanContext {
    pub clean: GrayImage,
    pub dilated: GrayImage,
    pub building: BinaryMask,
    pub doors: BinaryMask,
    pub meters_per_pixel: f64,
    pub bbox: PixelRect,
}

pub const DILATION_KERNEL: usize = 5;

/// Meters per pixel from a two-point ruler annotation.
pub fn scale_from_ruler(spec: &RulerSpec) -> Result<f64> {
    let (dx, dy) = (spec.bx - spec.ax, spec.by - spec.ay);
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        return Err(Error::invalid("ruler points coincide"));
    }
    if spec.meters <= 0.0 {
        return Err(Error::invalid("ruler length must be positive"));
    }
    Ok(spec.meters / dist)
}

/// Row/column-extent fill of the floorplan ink: a pixel is inside iff it lies
/// between the extreme ink pixels of both its row and its column.
pub fn build_building_mask(clean: &GrayImage, ink_threshold: f32) -> Result<BinaryMask> {
    let (w, h) = (clean.width(), clean.height());
    let mut row_span = vec![None::<(usize, usize)>; h];
    let mut col_span = vec![None::<(usize, usize)>; w];
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            if clean.get(x, y) < ink_threshold {
                any = true;
                row_span[y] = Some(match row_span[y] {
                    None => (x, x),
                    Some((l, _)) => (l, x),
                });
                col_span[x] = Some(match col_span[x] {
                    None => (y, y),
                    Some((t, _)) => (t, y),
                });
            }
        }
    }
    if !any {
        return Err(Error::invalid("floorplan contains no ink"));
    }
    let mut mask = BinaryMask::new(w, h, false);
    for y in 0..h {
        let Some((l, r)) = row_span[y] else { continue };
        for x in l..=r {
            if let Some((t, b)) = col_span[x] {
                if y >= t && y <= b {
                    mask.set(x, y, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Tight bounding box of the set bits.
pub fn mask_bbox(mask: &BinaryMask) -> Result<PixelRect> {
    let mut x0 = usize::MAX;
    let mut y0 = usize::MAX;
    let mut x1 = 0usize;
    let mut y1 = 0usize;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::invalid("empty mask has no bounding box"));
    }
    Ok(PixelRect {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

/// Template-match the marked door symbol over the floorplan (four quarter
/// turns plus the horizontal mirror of each) and mark every detection's
/// matched window, clipped to the building mask.
pub fn detect_doors_floorplan(
    clean: &GrayImage,
    spec: &DoorTemplateSpec,
    building: &BinaryMask,
) -> Result<BinaryMask> {
    let b = spec.bbox;
    if b.w * b.h < 9 {
        return Err(Error::invalid("door template bbox must cover >= 9 pixels"));
    }
    if b.x + b.w > clean.width() || b.y + b.h > clean.height() {
        return Err(Error::invalid("door template bbox outside the floorplan"));
    }
    let mut tpl = GrayImage::new(b.w, b.h, 0.0);
    for y in 0..b.h {
        for x in 0..b.w {
            tpl.set(x, y, clean.get(b.x + x, b.y + y));
        }
    }
    let mirrored = mirror_horizontal(&tpl);
    let mut variants = Vec::with_capacity(8);
    for k in 0..4 {
        variants.push(tpl.rotate_quarter(k));
    }
    for k in 0..4 {
        variants.push(mirrored.rotate_quarter(k));
    }
    let detections = match_template_variants(clean, &variants)?;
    let mut doors = BinaryMask::new(clean.width(), clean.height(), false);
    for d in detections {
        if d.score < spec.score_threshold {
            continue;
        }
        for y in d.pos.1..d.pos.1 + d.dims.1 {
            for x in d.pos.0..d.pos.0 + d.dims.0 {
                if building.get(x, y) {
                    doors.set(x, y, true);
                }
            }
        }
    }
    Ok(doors)
}

fn mirror_horizontal(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            out.set(w - 1 - x, y, img.get(x, y));
        }
    }
    out
}

/// Full floorplan preprocessing. The door bbox coordinates refer to the image
/// after the configured quarter turns.
pub fn make_context(
    raw: &GrayImage,
    ruler: &RulerSpec,
    door_spec: &DoorTemplateSpec,
    params: &FloorplanParams,
) -> Result<FloorplanContext> {
    let turned = raw.rotate_quarter(params.quarter_turns);
    let meters_per_pixel = scale_from_ruler(ruler)?;
    let min_area = (params.clutter_min_area_m2 / (meters_per_pixel * meters_per_pixel)).round()
        as usize;
    let clean = remove_small_components(&turned, params.ink_threshold, min_area);
    let building = build_building_mask(&clean, params.ink_threshold)?;
    let doors = detect_doors_floorplan(&clean, door_spec, &building)?;
    let dilated = clean.inverted().dilate(DILATION_KERNEL)?;
    let bbox = mask_bbox(&building)?;
    Ok(FloorplanContext {
        clean,
        dilated,
        building,
        doors,
        meters_per_pixel,
        bbox,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ruler_examples() {
        let s = |ax, ay, bx, by, m| RulerSpec {
            ax,
            ay,
            bx,
            by,
            meters: m,
        };
        assert!((scale_from_ruler(&s(0.0, 0.0, 100.0, 0.0, 10.0)).unwrap() - 0.1).abs() < 1e-12);
        assert!((scale_from_ruler(&s(0.0, 0.0, 3.0, 4.0, 5.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((scale_from_ruler(&s(0.0, 0.0, 200.0, 0.0, 10.0)).unwrap() - 0.05).abs() < 1e-12);
        assert!(scale_from_ruler(&s(2.0, 2.0, 2.0, 2.0, 1.0)).is_err());
    }

    fn outline(w: usize, h: usize, r: PixelRect) -> GrayImage {
        let mut img = GrayImage::new(w, h, 1.0);
        for x in r.x..r.x + r.w {
            img.set(x, r.y, 0.0);
            img.set(x, r.y + r.h - 1, 0.0);
        }
        for y in r.y..r.y + r.h {
            img.set(r.x, y, 0.0);
            img.set(r.x + r.w - 1, y, 0.0);
        }
        img
    }

    #[test]
    fn rectangle_outline_fills_exactly() {
        // Exhaustive over all rectangle outlines inside a 16x16 canvas.
        for rw in 2..=8usize {
            for rh in 2..=8usize {
                for rx in 0..=(16 - rw) {
                    for ry in 0..=(16 - rh) {
                        let r = PixelRect {
                            x: rx,
                            y: ry,
                            w: rw,
                            h: rh,
                        };
                        let img = outline(16, 16, r);
                        let mask = build_building_mask(&img, 0.4).unwrap();
                        for y in 0..16 {
                            for x in 0..16 {
                                let inside = x >= rx && x < rx + rw && y >= ry && y < ry + rh;
                                assert_eq!(mask.get(x, y), inside, "r={r:?} ({x},{y})");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_ink_pixel_masks_itself() {
        let mut img = GrayImage::new(9, 9, 1.0);
        img.set(4, 3, 0.0);
        let mask = build_building_mask(&img, 0.4).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get(4, 3));
    }

    #[test]
    fn l_shape_excludes_empty_quadrant() {
        // Vertical bar rows 0..12 x cols 0..4, horizontal bar rows 8..12 x cols 0..12.
        let mut img = GrayImage::new(12, 12, 1.0);
        let ink = |img: &mut GrayImage, x: usize, y: usize| img.set(x, y, 0.0);
        for y in 0..12 {
            ink(&mut img, 0, y);
            ink(&mut img, 3, y);
        }
        for x in 0..4 {
            ink(&mut img, x, 0);
        }
        for x in 0..12 {
            ink(&mut img, x, 8);
            ink(&mut img, x, 11);
        }
        for y in 8..12 {
            ink(&mut img, 11, y);
        }
        let mask = build_building_mask(&img, 0.4).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let in_vertical = x < 4;
                let in_horizontal = y >= 8;
                assert_eq!(
                    mask.get(x, y),
                    in_vertical || in_horizontal,
                    "({x},{y})"
                );
            }
        }
    }

    #[test]
    fn ink_free_image_errors() {
        let img = GrayImage::new(5, 5, 1.0);
        assert!(build_building_mask(&img, 0.4).is_err());
    }

    fn door_glyph() -> GrayImage {
        // 5x5 asymmetric glyph: an L of ink with a diagonal tick.
        let mut g = GrayImage::new(5, 5, 1.0);
        for x in 0..5 {
            g.set(x, 4, 0.0);
        }
        for y in 0..5 {
            g.set(0, y, 0.0);
        }
        g.set(2, 2, 0.0);
        g.set(3, 1, 0.0);
        g
    }

    #[test]
    fn door_detection_recovers_exact_copies() {
        let mut img = GrayImage::new(40, 30, 1.0);
        // Frame so the building mask covers everything.
        for x in 0..40 {
            img.set(x, 0, 0.0);
            img.set(x, 29, 0.0);
        }
        for y in 0..30 {
            img.set(0, y, 0.0);
            img.set(39, y, 0.0);
        }
        let g = door_glyph();
        let spots = [(5usize, 5usize), (20, 8), (30, 20)];
        for &(sx, sy) in &spots {
            for y in 0..5 {
                for x in 0..5 {
                    img.set(sx + x, sy + y, g.get(x, y));
                }
            }
        }
        let building = build_building_mask(&img, 0.4).unwrap();
        let spec = DoorTemplateSpec {
            bbox: PixelRect {
                x: 5,
                y: 5,
                w: 5,
                h: 5,
            },
            score_threshold: 0.9,
        };
        let doors = detect_doors_floorplan(&img, &spec, &building).unwrap();
        for &(sx, sy) in &spots {
            assert!(doors.get(sx + 2, sy + 2), "footprint at ({sx},{sy})");
        }
    }

    #[test]
    fn door_threshold_above_one_finds_nothing() {
        let mut img = GrayImage::new(20, 20, 1.0);
        let g = door_glyph();
        for y in 0..5 {
            for x in 0..5 {
                img.set(3 + x, 3 + y, g.get(x, y));
            }
        }
        let building = build_building_mask(&img, 0.4).unwrap();
        let spec = DoorTemplateSpec {
            bbox: PixelRect {
                x: 3,
                y: 3,
                w: 5,
                h: 5,
            },
            score_threshold: 1.1,
        };
        let doors = detect_doors_floorplan(&img, &spec, &building).unwrap();
        assert_eq!(doors.count(), 0);
    }

    #[test]
    fn constant_door_template_errors() {
        let mut img = GrayImage::new(20, 20, 1.0);
        img.set(10, 10, 0.0);
        let building = build_building_mask(&img, 0.4).unwrap();
        let spec = DoorTemplateSpec {
            bbox: PixelRect {
                x: 0,
                y: 0,
                w: 4,
                h: 4,
            },
            score_threshold: 0.5,
        };
        assert!(detect_doors_floorplan(&img, &spec, &building).is_err());
    }

    fn context_fixture() -> (GrayImage, RulerSpec, DoorTemplateSpec) {
        let mut img = outline(
            32,
            24,
            PixelRect {
                x: 2,
                y: 2,
                w: 28,
                h: 20,
            },
        );
        // glyph touching the top wall so clutter removal keeps it
        let g = door_glyph();
        for y in 0..5 {
            for x in 0..5 {
                if g.get(x, y) < 0.5 {
                    img.set(10 + x, 3 + y, 0.0);
                }
            }
        }
        // single clutter speck, below any sensible min area
        img.set(20, 12, 0.0);
        let ruler = RulerSpec {
            ax: 0.0,
            ay: 0.0,
            bx: 20.0,
            by: 0.0,
            meters: 2.0,
        };
        let door = DoorTemplateSpec {
            bbox: PixelRect {
                x: 10,
                y: 3,
                w: 5,
                h: 5,
            },
            score_threshold: 0.9,
        };
        (img, ruler, door)
    }

    #[test]
    fn make_context_is_deterministic_and_consistent() {
        let (img, ruler, door) = context_fixture();
        let params = FloorplanParams::default();
        let a = make_context(&img, &ruler, &door, &params).unwrap();
        let b = make_context(&img, &ruler, &door, &params).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.dilated, b.dilated);
        assert_eq!(a.building, b.building);
        assert_eq!(a.doors, b.doors);
        assert_eq!(a.bbox, b.bbox);
        assert!((a.meters_per_pixel - 0.1).abs() < 1e-12);
        // clutter speck removed: min area = 0.25 m^2 / 0.01 = 25 px
        assert_eq!(a.clean.get(20, 12), 1.0);
        // doors lie inside the building mask
        for (x, y) in a.doors.set_pixels() {
            assert!(a.building.at(x, y));
        }
        // dilated is extensive over the ink image
        for (d, c) in a.dilated.data().iter().zip(a.clean.data()) {
            assert!(*d >= 1.0 - *c - 1e-6);
        }
    }

    #[test]
    fn bbox_swaps_for_quarter_turn() {
        let (img, ruler, door) = context_fixture();
        let params = FloorplanParams::default();
        let a = make_context(&img, &ruler, &door, &params).unwrap();
        let turned = img.rotate_quarter(1);
        // door bbox coordinates refer to the turned frame: the glyph rect
        // (10,3)..(14,7) of the 32-wide image maps to (3,17)..(7,21)
        let door_turned = DoorTemplateSpec {
            bbox: PixelRect {
                x: 3,
                y: 17,
                w: 5,
                h: 5,
            },
            score_threshold: 0.9,
        };
        let b = make_context(&turned, &ruler, &door_turned, &params).unwrap();
        assert_eq!((a.bbox.w, a.bbox.h), (b.bbox.h, b.bbox.w));
    }

    #[test]
    fn building_mask_ignores_clutter_removal() {
        let (img, ruler, door) = context_fixture();
        let params = FloorplanParams::default();
        let ctx = make_context(&img, &ruler, &door, &params).unwrap();
        let mask_raw = build_building_mask(&img, 0.4).unwrap();
        // Whitening sub-threshold components cannot grow the mask.
        for y in 0..ctx.building.height() {
            for x in 0..ctx.building.width() {
                if ctx.building.get(x, y) {
                    assert!(mask_raw.get(x, y));
                }
            }
        }
    }
}
