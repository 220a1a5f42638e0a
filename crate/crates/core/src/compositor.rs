//! Target resizing and source-over compositing with exact ground truth.

use image::{RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::catalog::{BackgroundScene, SceneCatalog, TargetObject};
use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};

pub const DEFAULT_SIZES: [f64; 4] = [0.05, 0.08, 0.12, 0.18];
pub const DEFAULT_CROP: u32 = 800;

/// Blended alpha at or above this is ground truth.
const MASK_ALPHA: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub scene_id: String,
    pub target_id: String,
    pub insertion: (u32, u32),
    pub size_proportion: f64,
    pub crop_dimension: u32,
}

/// Major dimension in pixels for a size proportion, rounded half away from zero.
pub fn target_major(size_proportion: f64, crop_dimension: u32) -> Result<u32> {
    if !(size_proportion > 0.0 && size_proportion < 1.0) {
        return Err(Error::InvalidInput(format!(
            "size proportion must lie in (0, 1), got {size_proportion}"
        )));
    }
    if crop_dimension == 0 {
        return Err(Error::InvalidInput("crop dimension must be >= 1".into()));
    }
    let major = (size_proportion * crop_dimension as f64).round();
    if major < 1.0 {
        return Err(Error::InvalidInput(format!(
            "proportion {size_proportion} of {crop_dimension} px rounds to zero"
        )));
    }
    Ok(major as u32)
}

/// A resampled cutout: straight RGB in `[0, 255]`, alpha in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ResizedTarget {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 4]>,
    /// `alpha >= 0.5` over the canvas.
    pub mask: BinaryMask,
    /// Tight bounds of `mask` in canvas coordinates.
    pub bbox: BBox,
}

impl ResizedTarget {
    /// Builds a target from raw canvas pixels (straight RGB, alpha in [0, 1]).
    pub fn from_pixels(width: u32, height: u32, pixels: Vec<[f32; 4]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidInput("pixel buffer does not match dimensions".into()));
        }
        let mask = BinaryMask::from_fn(width, height, |x, y| {
            pixels[(y * width + x) as usize][3] >= MASK_ALPHA
        });
        let bbox = mask.bbox().unwrap_or(BBox {
            x0: 0,
            y0: 0,
            x1: 0,
            y1: 0,
        });
        Ok(ResizedTarget {
            width,
            height,
            pixels,
            mask,
            bbox,
        })
    }

    /// Ground-truth mask cropped to its bounding box.
    pub fn mask_patch(&self) -> BinaryMask {
        self.mask.crop(self.bbox)
    }
}

/// Scales the cutout so its alpha-mask bbox has major dimension
/// `round(size_proportion * crop_dimension)`, preserving aspect ratio.
pub fn resize_target(
    target: &TargetObject,
    cutout: &RgbaImage,
    size_proportion: f64,
    crop_dimension: u32,
) -> Result<ResizedTarget> {
    let desired = target_major(size_proportion, crop_dimension)?;
    let native = target.native_bbox;
    if native.width() == 0 || native.height() == 0 {
        return Err(Error::DegenerateTarget(target.id.clone()));
    }
    let mut scale = desired as f64 / native.major() as f64;
    // Thresholding after resampling can trim a pixel from thin extremities;
    // nudge the scale until the mask bbox lands within one pixel.
    for _ in 0..6 {
        let w = (native.width() as f64 * scale).round() as u32;
        let h = (native.height() as f64 * scale).round() as u32;
        if w == 0 || h == 0 {
            return Err(Error::DegenerateTarget(format!(
                "{}: minor dimension rounds to zero at {desired} px",
                target.id
            )));
        }
        let resized = ResizedTarget::from_pixels(w, h, resample(cutout, native, w, h))?;
        if resized.mask.is_empty() {
            return Err(Error::DegenerateTarget(format!(
                "{}: mask vanished after resizing",
                target.id
            )));
        }
        let got = resized.bbox.major();
        if got.abs_diff(desired) <= 1 {
            return Ok(resized);
        }
        scale *= desired as f64 / got as f64;
    }
    Err(Error::DegenerateTarget(format!(
        "{}: cannot reach a {desired} px mask bbox",
        target.id
    )))
}

/// Bilinear resample of `src[region]` onto a `w x h` canvas, interpolating
/// premultiplied color so transparent pixels do not bleed into edges.
fn resample(src: &RgbaImage, region: BBox, w: u32, h: u32) -> Vec<[f32; 4]> {
    let sx = region.width() as f64 / w as f64;
    let sy = region.height() as f64 / h as f64;
    let max_x = region.width() as i64 - 1;
    let max_y = region.height() as i64 - 1;
    let fetch = |x: i64, y: i64| -> [f32; 4] {
        let px = src.get_pixel(
            region.x0 + x.clamp(0, max_x) as u32,
            region.y0 + y.clamp(0, max_y) as u32,
        );
        let a = px.0[3] as f32 / 255.0;
        [px.0[0] as f32 * a, px.0[1] as f32 * a, px.0[2] as f32 * a, a]
    };
    let mut out = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        let fy = (y as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = (fy - y0) as f32;
        for x in 0..w {
            let fx = (x as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = (fx - x0) as f32;
            let (xi, yi) = (x0 as i64, y0 as i64);
            let (p00, p10) = (fetch(xi, yi), fetch(xi + 1, yi));
            let (p01, p11) = (fetch(xi, yi + 1), fetch(xi + 1, yi + 1));
            let mut v = [0f32; 4];
            for c in 0..4 {
                let top = p00[c] + (p10[c] - p00[c]) * tx;
                let bottom = p01[c] + (p11[c] - p01[c]) * tx;
                v[c] = top + (bottom - top) * ty;
            }
            let a = v[3];
            if a > 0.0 {
                for c in v.iter_mut().take(3) {
                    *c = (*c / a).clamp(0.0, 255.0);
                }
            } else {
                v[..3].fill(0.0);
            }
            out.push(v);
        }
    }
    out
}

/// Where a resized target's mask bbox lands when centred on `point`.
pub fn placed_bbox(resized_bbox: BBox, point: (u32, u32)) -> Result<BBox> {
    let (w, h) = (resized_bbox.width() as i64, resized_bbox.height() as i64);
    let x0 = point.0 as i64 - w / 2;
    let y0 = point.1 as i64 - h / 2;
    if x0 < 0 || y0 < 0 {
        return Err(Error::OutOfBounds(format!(
            "{w}x{h} target centred at {point:?} crosses the top/left border"
        )));
    }
    Ok(BBox {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: (x0 + w) as u32,
        y1: (y0 + h) as u32,
    })
}

#[derive(Debug, Clone)]
pub struct TestImage {
    pub image: RgbImage,
    /// Full-resolution ground-truth mask.
    pub mask: BinaryMask,
    /// Tight bounds of `mask`.
    pub bbox: BBox,
    pub sub_category: String,
    pub eval_category: String,
}

/// Source-over composite of `resized` into `background`, centred on `point`.
/// Only pixels inside the mask bbox are touched.
pub fn composite(
    background: &RgbImage,
    resized: &ResizedTarget,
    point: (u32, u32),
    sub_category: &str,
    eval_category: &str,
) -> Result<TestImage> {
    if resized.mask.is_empty() {
        return Err(Error::DegenerateTarget(
            "target mask is empty (fully transparent cutout)".into(),
        ));
    }
    let bbox = placed_bbox(resized.bbox, point)?;
    if bbox.x1 > background.width() || bbox.y1 > background.height() {
        return Err(Error::OutOfBounds(format!(
            "target bbox {bbox:?} exits the {}x{} background",
            background.width(),
            background.height()
        )));
    }
    let mut image = background.clone();
    let mut mask = BinaryMask::new(background.width(), background.height());
    for y in 0..bbox.height() {
        for x in 0..bbox.width() {
            let (cx, cy) = (resized.bbox.x0 + x, resized.bbox.y0 + y);
            let src = resized.pixels[(cy * resized.width + cx) as usize];
            let (bx, by) = (bbox.x0 + x, bbox.y0 + y);
            let a = src[3];
            if a > 0.0 {
                let dst = image.get_pixel_mut(bx, by);
                for (d, s) in dst.0.iter_mut().zip(src) {
                    let blended = a * s + (1.0 - a) * *d as f32;
                    *d = blended.round().clamp(0.0, 255.0) as u8;
                }
            }
            if resized.mask.get(cx, cy) {
                mask.set(bx, by, true);
            }
        }
    }
    Ok(TestImage {
        image,
        mask,
        bbox,
        sub_category: sub_category.to_string(),
        eval_category: eval_category.to_string(),
    })
}

/// Loads the scene and target referenced by `spec` and composites them.
pub fn composite_spec(catalog: &SceneCatalog, spec: &CompositeSpec) -> Result<TestImage> {
    let scene: &BackgroundScene = catalog
        .scene(&spec.scene_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown scene `{}`", spec.scene_id)))?;
    let target = catalog
        .target(&spec.target_id)
        .ok_or_else(|| Error::InvalidInput(format!("unknown target `{}`", spec.target_id)))?;
    let cutout = catalog.target_image(target)?;
    let resized = resize_target(target, &cutout, spec.size_proportion, spec.crop_dimension)?;
    let background = catalog.scene_image(scene)?;
    composite(
        &background,
        &resized,
        spec.insertion,
        &target.category,
        catalog.eval_category(target),
    )
}
