//! Backgrounds, insertion regions, target cutouts and the category map.
//!
//! A catalog lives in a directory with a `catalog.toml` manifest:
//!
//! ```toml
//! [categories]            # sub-category -> evaluation category
//! my_sub = "dog"
//!
//! [[background]]
//! id = "coast"
//! path = "backgrounds/coast.png"
//!
//! [[background.region]]
//! polygon = [[400, 300], [1500, 300], [1500, 900], [400, 900]]
//! categories = ["bird_flying", "airplane"]
//!
//! [[target]]
//! id = "gull01"
//! path = "targets/gull01.png"
//! category = "bird_flying"
//! ```
//!
//! Paths are relative to the catalog directory. Target cutouts are RGBA and
//! their alpha channel is the object mask.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use image::{RgbImage, RgbaImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BBox, BinaryMask};
use crate::raster::{self, RegionRaster};
use crate::seed;

pub const MANIFEST_FILE: &str = "catalog.toml";
pub const MIN_BACKGROUND_SIDE: u32 = 1600;
pub const MIN_TARGET_MAJOR: u32 = 50;
pub const DEFAULT_MARGIN: u32 = 400;
/// Alpha at or above this value (of 255) is part of the object mask.
pub const ALPHA_THRESHOLD: u8 = 128;

/// The 80 COCO detection categories.
pub const COCO_CATEGORIES: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
];

const DEFAULT_SPLITS: [(&str, &str); 4] = [
    ("bird_walking", "bird"),
    ("bird_flying", "bird"),
    ("bird_swimming", "bird"),
    ("ship", "boat"),
];

/// Sub-category to evaluation-category mapping.
///
/// With `coco_defaults` on, every COCO category maps to itself and the
/// bird/boat splits collapse back to `bird`/`boat`. Explicit entries win.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub coco_defaults: bool,
    pub entries: BTreeMap<String, String>,
}

impl Default for CategoryMap {
    fn default() -> Self {
        CategoryMap {
            coco_defaults: true,
            entries: BTreeMap::new(),
        }
    }
}

impl CategoryMap {
    pub fn resolve<'a>(&'a self, sub: &'a str) -> Option<&'a str> {
        if let Some(v) = self.entries.get(sub) {
            return Some(v);
        }
        if !self.coco_defaults {
            return None;
        }
        DEFAULT_SPLITS
            .iter()
            .find(|(s, _)| *s == sub)
            .map(|(_, e)| *e)
            .or_else(|| COCO_CATEGORIES.contains(&sub).then_some(sub))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionRegion {
    pub polygon: Vec<(f64, f64)>,
    pub allowed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundScene {
    pub id: String,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<InsertionRegion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetObject {
    pub id: String,
    pub category: String,
    pub rgba_path: PathBuf,
    /// Tight bounds of the alpha mask inside the cutout.
    pub native_bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCatalog {
    pub root: PathBuf,
    pub scenes: Vec<BackgroundScene>,
    pub targets: Vec<TargetObject>,
    pub categories: CategoryMap,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    #[serde(default = "yes")]
    coco_defaults: bool,
    #[serde(default)]
    categories: BTreeMap<String, String>,
    #[serde(default, rename = "background")]
    backgrounds: Vec<BackgroundEntry>,
    #[serde(default, rename = "target")]
    targets: Vec<TargetEntry>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
struct BackgroundEntry {
    id: String,
    path: PathBuf,
    #[serde(default, rename = "region")]
    regions: Vec<RegionEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegionEntry {
    polygon: Vec<[f64; 2]>,
    categories: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TargetEntry {
    id: String,
    path: PathBuf,
    category: String,
}

fn catalog_err(id: &str, reason: impl Into<String>) -> Error {
    Error::Catalog {
        id: id.to_string(),
        reason: reason.into(),
    }
}

/// Ids end up in file names, so keep them to a portable character set.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(catalog_err(id, "ids must be non-empty and use only [A-Za-z0-9_-]"))
    }
}

/// Loads and fully validates the catalog rooted at `root`.
pub fn load_catalog(root: impl AsRef<Path>) -> Result<SceneCatalog> {
    let root = root.as_ref().to_path_buf();
    let manifest_path = root.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingArtifact {
            path: manifest_path,
            hint: "a catalog directory needs a catalog.toml manifest".into(),
        });
    }
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ManifestFile = toml::from_str(&text).map_err(|e| Error::Toml {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;

    let categories = CategoryMap {
        coco_defaults: manifest.coco_defaults,
        entries: manifest.categories,
    };
    for (sub, eval) in &categories.entries {
        if eval.is_empty() {
            return Err(catalog_err(sub, "maps to an empty evaluation category"));
        }
    }

    let mut seen = HashSet::new();
    let mut scenes = Vec::with_capacity(manifest.backgrounds.len());
    for entry in manifest.backgrounds {
        check_id(&entry.id)?;
        if !seen.insert(format!("background:{}", entry.id)) {
            return Err(catalog_err(&entry.id, "duplicate background id"));
        }
        scenes.push(load_background(&root, entry, &categories)?);
    }

    let mut targets = Vec::with_capacity(manifest.targets.len());
    for entry in manifest.targets {
        check_id(&entry.id)?;
        if !seen.insert(format!("target:{}", entry.id)) {
            return Err(catalog_err(&entry.id, "duplicate target id"));
        }
        if categories.resolve(&entry.category).is_none() {
            return Err(catalog_err(
                &entry.id,
                format!("unknown category `{}` (no category map entry)", entry.category),
            ));
        }
        let image = open_rgba(&root.join(&entry.path))
            .map_err(|e| catalog_err(&entry.id, e.to_string()))?;
        let native_bbox = alpha_mask(&image)
            .bbox()
            .ok_or_else(|| catalog_err(&entry.id, "alpha mask has no opaque pixel"))?;
        if native_bbox.major() < MIN_TARGET_MAJOR {
            return Err(catalog_err(
                &entry.id,
                format!(
                    "target too small: major dimension {} < {MIN_TARGET_MAJOR}",
                    native_bbox.major()
                ),
            ));
        }
        targets.push(TargetObject {
            id: entry.id,
            category: entry.category,
            rgba_path: entry.path,
            native_bbox,
        });
    }

    Ok(SceneCatalog {
        root,
        scenes,
        targets,
        categories,
    })
}

fn load_background(
    root: &Path,
    entry: BackgroundEntry,
    categories: &CategoryMap,
) -> Result<BackgroundScene> {
    let path = root.join(&entry.path);
    let image = open_rgb(&path).map_err(|e| catalog_err(&entry.id, e.to_string()))?;
    let (width, height) = image.dimensions();
    if width < MIN_BACKGROUND_SIDE || height < MIN_BACKGROUND_SIDE {
        return Err(catalog_err(
            &entry.id,
            format!("background too small: {width}x{height}, need at least {MIN_BACKGROUND_SIDE} px per side"),
        ));
    }
    let mut regions = Vec::with_capacity(entry.regions.len());
    for (i, r) in entry.regions.into_iter().enumerate() {
        let rid = format!("{}/region{}", entry.id, i);
        let polygon: Vec<(f64, f64)> = r.polygon.iter().map(|v| (v[0], v[1])).collect();
        if polygon.len() < 3 {
            return Err(catalog_err(&rid, "degenerate polygon: fewer than 3 vertices"));
        }
        if raster::signed_area(&polygon).abs() <= 0.0 {
            return Err(catalog_err(&rid, "degenerate polygon: zero area"));
        }
        if !raster::is_simple(&polygon) {
            return Err(catalog_err(&rid, "degenerate polygon: edges self-intersect"));
        }
        if let Some(v) = polygon.iter().find(|v| {
            !(v.0 >= 0.0 && v.1 >= 0.0 && v.0 <= width as f64 && v.1 <= height as f64)
        }) {
            return Err(catalog_err(&rid, format!("vertex {v:?} lies outside the image")));
        }
        if r.categories.is_empty() {
            return Err(catalog_err(&rid, "region allows no categories"));
        }
        for c in &r.categories {
            if categories.resolve(c).is_none() {
                return Err(catalog_err(
                    &rid,
                    format!("unknown category `{c}` (no category map entry)"),
                ));
            }
        }
        regions.push(InsertionRegion {
            polygon,
            allowed: r.categories.into_iter().collect(),
        });
    }
    Ok(BackgroundScene {
        id: entry.id,
        image_path: entry.path,
        width,
        height,
        regions,
    })
}

pub(crate) fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_rgb8())
}

pub(crate) fn open_rgba(path: &Path) -> Result<RgbaImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .into_rgba8())
}

/// Object mask of an RGBA cutout.
pub fn alpha_mask(image: &RgbaImage) -> BinaryMask {
    BinaryMask::from_fn(image.width(), image.height(), |x, y| {
        image.get_pixel(x, y).0[3] >= ALPHA_THRESHOLD
    })
}

impl SceneCatalog {
    pub fn scene(&self, id: &str) -> Option<&BackgroundScene> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn target(&self, id: &str) -> Option<&TargetObject> {
        self.targets.iter().find(|t| t.id == id)
    }

    pub fn scene_image(&self, scene: &BackgroundScene) -> Result<RgbImage> {
        open_rgb(&self.root.join(&scene.image_path))
    }

    pub fn target_image(&self, target: &TargetObject) -> Result<RgbaImage> {
        open_rgba(&self.root.join(&target.rgba_path))
    }

    /// Evaluation category of a target.
    pub fn eval_category<'a>(&'a self, target: &'a TargetObject) -> &'a str {
        self.categories
            .resolve(&target.category)
            .expect("catalog validation guarantees every category resolves")
    }

    /// Indices of the scene's regions that accept the target's sub-category.
    pub fn compatible_regions(&self, scene: &BackgroundScene, target: &TargetObject) -> Vec<usize> {
        scene
            .regions
            .iter()
            .enumerate()
            .filter(|(_, r)| r.allowed.contains(&target.category))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_manifest_string(&self) -> String {
        let manifest = ManifestFile {
            coco_defaults: self.categories.coco_defaults,
            categories: self.categories.entries.clone(),
            backgrounds: self
                .scenes
                .iter()
                .map(|s| BackgroundEntry {
                    id: s.id.clone(),
                    path: s.image_path.clone(),
                    regions: s
                        .regions
                        .iter()
                        .map(|r| RegionEntry {
                            polygon: r.polygon.iter().map(|&(x, y)| [x, y]).collect(),
                            categories: r.allowed.iter().cloned().collect(),
                        })
                        .collect(),
                })
                .collect(),
            targets: self
                .targets
                .iter()
                .map(|t| TargetEntry {
                    id: t.id.clone(),
                    path: t.rgba_path.clone(),
                    category: t.category.clone(),
                })
                .collect(),
        };
        toml::to_string(&manifest).expect("catalog manifest serializes")
    }

    /// Writes `catalog.toml` into `dir`; image paths are kept as-is.
    pub fn save_manifest(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        std::fs::write(&path, self.to_manifest_string()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Region pixels at least `margin` px from every border of the scene:
/// `region ∩ [margin, width - margin) x [margin, height - margin)`.
pub fn effective_region(
    region: &InsertionRegion,
    scene: &BackgroundScene,
    margin: u32,
) -> RegionRaster {
    let full = raster::rasterize(&region.polygon, scene.width, scene.height);
    clip_margin(&full, scene.width, scene.height, margin)
}

pub fn clip_margin(raster: &RegionRaster, width: u32, height: u32, margin: u32) -> RegionRaster {
    if 2 * margin as u64 >= width as u64 || 2 * margin as u64 >= height as u64 {
        return RegionRaster::default();
    }
    raster.clip(margin, margin, width - margin, height - margin)
}

/// Uniform integer pixel from the region.
pub fn sample_insertion_point(region: &RegionRaster, rng: &mut impl Rng) -> Result<(u32, u32)> {
    let count = region.pixel_count();
    if count == 0 {
        return Err(Error::NoValidLocation("insertion region is empty".into()));
    }
    let index = rng.random_range(0..count);
    Ok(region.nth_pixel(index).expect("index below pixel count"))
}

/// [`sample_insertion_point`] with a stream keyed by the pair identity.
pub fn sample_keyed(
    region: &RegionRaster,
    seed: u64,
    scene_id: &str,
    region_index: usize,
    target_id: &str,
) -> Result<(u32, u32)> {
    let mut rng = seed::keyed_rng(
        seed,
        &["insertion", scene_id, &region_index.to_string(), target_id],
    );
    sample_insertion_point(region, &mut rng).map_err(|_| {
        Error::NoValidLocation(format!(
            "{scene_id}/region{region_index} has no pixels outside the margin"
        ))
    })
}
