//! Procedural catalogs for tests and demos.
//!
//! Backgrounds are smooth colour fields (cheap to store as PNG); targets are
//! anti-aliased ellipses with transparent surrounds. Every scene has one
//! large region accepting all target sub-categories, and odd-numbered scenes
//! add a small second region restricted to `bird_flying`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::Rng;

use crate::catalog::{self, BackgroundScene, CategoryMap, InsertionRegion, SceneCatalog, TargetObject};
use crate::error::{Error, Result};
use crate::mask::BBox;
use crate::seed;

const SUB_CATEGORIES: [&str; 6] = ["bird_flying", "ship", "dog", "car", "person", "bird_walking"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub scenes: usize,
    pub targets: usize,
    pub background_side: u32,
    /// Major dimension of the opaque part of each cutout.
    pub target_major: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            scenes: 4,
            targets: 6,
            background_side: catalog::MIN_BACKGROUND_SIDE,
            target_major: 160,
            seed: 0,
        }
    }
}

fn background(side: u32, rng: &mut impl Rng) -> RgbImage {
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    let freq: f64 = rng.random_range(2.0..6.0);
    let s = side as f64;
    RgbImage::from_fn(side, side, |x, y| {
        let (u, v) = (x as f64 / s, y as f64 / s);
        let wave = (std::f64::consts::TAU * freq * (u + 0.5 * v)).sin();
        Rgb([
            (base[0] + 40.0 * u + 10.0 * wave).clamp(0.0, 255.0) as u8,
            (base[1] + 40.0 * v - 10.0 * wave).clamp(0.0, 255.0) as u8,
            (base[2] + 20.0 * wave).clamp(0.0, 255.0) as u8,
        ])
    })
}

/// Ellipse with semi-axes `(a, b)`, 4x4 supersampled alpha, 4 px of
/// transparent padding on every side.
fn cutout(a: f64, b: f64, color: [u8; 3]) -> RgbaImage {
    const PAD: f64 = 4.0;
    let (w, h) = ((2.0 * (a + PAD)).ceil() as u32, (2.0 * (b + PAD)).ceil() as u32);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    RgbaImage::from_fn(w, h, |x, y| {
        let mut hits = 0;
        for sy in 0..4 {
            for sx in 0..4 {
                let px = x as f64 + (sx as f64 + 0.5) / 4.0 - cx;
                let py = y as f64 + (sy as f64 + 0.5) / 4.0 - cy;
                if (px / a).powi(2) + (py / b).powi(2) <= 1.0 {
                    hits += 1;
                }
            }
        }
        Rgba([color[0], color[1], color[2], (hits * 255 / 16) as u8])
    })
}

/// Writes images and `catalog.toml` under `dir`, then loads the result
/// through the normal validating loader.
pub fn write_catalog(dir: impl AsRef<Path>, spec: &SyntheticSpec) -> Result<SceneCatalog> {
    let dir = dir.as_ref();
    for sub in ["backgrounds", "targets"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let side = spec.background_side;
    let s = side as f64;

    let mut targets = Vec::new();
    for i in 0..spec.targets {
        let id = format!("target{i:02}");
        let mut rng = seed::keyed_rng(spec.seed, &["synthetic", "target", &id]);
        let a = spec.target_major as f64 / 2.0;
        let b = a * rng.random_range(0.45..0.95);
        let (a, b) = if i % 2 == 0 { (a, b) } else { (b, a) };
        let color = [rng.random(), rng.random(), rng.random()];
        let rel = PathBuf::from("targets").join(format!("{id}.png"));
        let path = dir.join(&rel);
        cutout(a, b, color).save(&path).map_err(|e| Error::image(&path, e))?;
        targets.push(TargetObject {
            id,
            category: SUB_CATEGORIES[i % SUB_CATEGORIES.len()].to_string(),
            rgba_path: rel,
            native_bbox: BBox { x0: 0, y0: 0, x1: 0, y1: 0 },
        });
    }
    let all: BTreeSet<String> = targets.iter().map(|t| t.category.clone()).collect();

    let mut scenes = Vec::new();
    for i in 0..spec.scenes {
        let id = format!("scene{i:02}");
        let mut rng = seed::keyed_rng(spec.seed, &["synthetic", "scene", &id]);
        let rel = PathBuf::from("backgrounds").join(format!("{id}.png"));
        let path = dir.join(&rel);
        background(side, &mut rng).save(&path).map_err(|e| Error::image(&path, e))?;
        let inset = rng.random_range(0.0..0.1) * s;
        let mut regions = vec![InsertionRegion {
            polygon: vec![
                (inset, 0.2 * s),
                (0.2 * s, inset),
                (s - 0.2 * s, inset),
                (s - inset, 0.2 * s),
                (s - inset, s - 0.2 * s),
                (s - 0.2 * s, s - inset),
                (0.2 * s, s - inset),
                (inset, s - 0.2 * s),
            ],
            allowed: all.clone(),
        }];
        if i % 2 == 1 {
            regions.push(InsertionRegion {
                polygon: vec![(0.3 * s, 0.3 * s), (0.7 * s, 0.35 * s), (0.45 * s, 0.6 * s)],
                allowed: ["bird_flying".to_string()].into(),
            });
        }
        scenes.push(BackgroundScene {
            id,
            image_path: rel,
            width: side,
            height: side,
            regions,
        });
    }

    let draft = SceneCatalog {
        root: dir.to_path_buf(),
        scenes,
        targets,
        categories: CategoryMap::default(),
    };
    draft.save_manifest(dir)?;
    catalog::load_catalog(dir)
}
