//! Offset grids, crop windows and the experiment manifest.
//!
//! A probe places the ground-truth bbox at `(dx, dy)` pixels from the two
//! crop borders adjacent to a corner. The corner is the background corner
//! nearest the bbox center, so the target always sits on the side of the
//! crop that the background can accommodate.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::catalog::{self, SceneCatalog};
use crate::compositor::{self, DEFAULT_CROP, DEFAULT_SIZES};
use crate::error::{Error, Result};
use crate::mask::BBox;
use crate::seed;

/// Offsets probed for the smallest targets; larger ones use a prefix.
pub const MASTER_OFFSETS: [u32; 20] = [
    0, 2, 4, 7, 10, 14, 18, 24, 30, 38, 46, 60, 75, 90, 120, 150, 200, 250, 300, 350,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffsetGrid {
    offsets: Vec<u32>,
}

impl OffsetGrid {
    pub fn offsets(&self) -> &[u32] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, offset: u32) -> bool {
        self.offsets.binary_search(&offset).is_ok()
    }

    /// Ordinal position of an offset in the grid.
    pub fn index_of(&self, offset: u32) -> Option<usize> {
        self.offsets.binary_search(&offset).ok()
    }
}

/// Keeps offset `o` iff `o + major <= crop / 2`, so the target never
/// crosses the crop center.
pub fn offset_grid_from(master: &[u32], major_dimension: u32, crop_dimension: u32) -> OffsetGrid {
    let mut offsets: Vec<u32> = master
        .iter()
        .copied()
        .filter(|&o| 2 * (o as u64 + major_dimension as u64) <= crop_dimension as u64)
        .collect();
    offsets.sort_unstable();
    offsets.dedup();
    OffsetGrid { offsets }
}

pub fn offset_grid(major_dimension: u32, crop_dimension: u32) -> OffsetGrid {
    offset_grid_from(&MASTER_OFFSETS, major_dimension, crop_dimension)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Corner {
    TL,
    TR,
    BL,
    BR,
}

impl Corner {
    pub fn is_left(self) -> bool {
        matches!(self, Corner::TL | Corner::BL)
    }

    pub fn is_top(self) -> bool {
        matches!(self, Corner::TL | Corner::TR)
    }
}

/// Background corner nearest the bbox center; ties prefer left, then top.
pub fn nearest_corner(bbox: BBox, background: (u32, u32)) -> Corner {
    // Compare doubled coordinates to stay in integers.
    let cx2 = bbox.x0 as u64 + bbox.x1 as u64;
    let cy2 = bbox.y0 as u64 + bbox.y1 as u64;
    let left = cx2 <= 2 * background.0 as u64 - cx2;
    let top = cy2 <= 2 * background.1 as u64 - cy2;
    match (left, top) {
        (true, true) => Corner::TL,
        (false, true) => Corner::TR,
        (true, false) => Corner::BL,
        (false, false) => Corner::BR,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: u32,
    pub y0: u32,
    pub side: u32,
}

impl CropWindow {
    pub fn x1(&self) -> u32 {
        self.x0 + self.side
    }

    pub fn y1(&self) -> u32 {
        self.y0 + self.side
    }

    pub fn contains(&self, bbox: BBox) -> bool {
        bbox.x0 >= self.x0 && bbox.y0 >= self.y0 && bbox.x1 <= self.x1() && bbox.y1 <= self.y1()
    }

    /// `bbox` in crop coordinates.
    pub fn local(&self, bbox: BBox) -> Option<BBox> {
        bbox.translate(-(self.x0 as i64), -(self.y0 as i64))
    }
}

/// Distances from the corner-adjacent crop borders to the bbox edges.
pub fn measure_offsets(window: CropWindow, corner: Corner, bbox: BBox) -> (i64, i64) {
    let dx = if corner.is_left() {
        bbox.x0 as i64 - window.x0 as i64
    } else {
        window.x1() as i64 - bbox.x1 as i64
    };
    let dy = if corner.is_top() {
        bbox.y0 as i64 - window.y0 as i64
    } else {
        window.y1() as i64 - bbox.y1 as i64
    };
    (dx, dy)
}

/// Crop window placing `gt_bbox` exactly `(dx, dy)` from the borders
/// adjacent to the corner nearest the bbox.
pub fn plan_crop(
    gt_bbox: BBox,
    background: (u32, u32),
    offset: (u32, u32),
    crop_dimension: u32,
) -> Result<(Corner, CropWindow)> {
    let corner = nearest_corner(gt_bbox, background);
    let (dx, dy) = (offset.0 as i64, offset.1 as i64);
    let side = crop_dimension as i64;
    let infeasible = |why: String| {
        Error::InfeasibleProbe(format!(
            "bbox {gt_bbox:?} offset ({dx},{dy}) corner {corner:?}: {why}"
        ))
    };
    if dx + gt_bbox.width() as i64 > side || dy + gt_bbox.height() as i64 > side {
        return Err(infeasible("target would straddle the far crop border".into()));
    }
    let x0 = if corner.is_left() {
        gt_bbox.x0 as i64 - dx
    } else {
        gt_bbox.x1 as i64 + dx - side
    };
    let y0 = if corner.is_top() {
        gt_bbox.y0 as i64 - dy
    } else {
        gt_bbox.y1 as i64 + dy - side
    };
    if x0 < 0 || y0 < 0 || x0 + side > background.0 as i64 || y0 + side > background.1 as i64 {
        return Err(infeasible(format!(
            "window at ({x0},{y0}) exits the {}x{} background",
            background.0, background.1
        )));
    }
    Ok((
        corner,
        CropWindow {
            x0: x0 as u32,
            y0: y0 as u32,
            side: crop_dimension,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub sizes: Vec<f64>,
    pub crop_dimension: u32,
    pub margin: u32,
    pub master_offsets: Vec<u32>,
    pub seed: u64,
    /// Independent insertion points drawn per (background, target) pair.
    pub insertions_per_pair: u32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            sizes: DEFAULT_SIZES.to_vec(),
            crop_dimension: DEFAULT_CROP,
            margin: catalog::DEFAULT_MARGIN,
            master_offsets: MASTER_OFFSETS.to_vec(),
            seed: 0,
            insertions_per_pair: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestImageSpec {
    pub id: String,
    pub pair_id: String,
    pub scene_id: String,
    pub target_id: String,
    pub region: usize,
    pub size_proportion: f64,
    /// Size class: `round(size_proportion * crop_dimension)`.
    pub major: u32,
    pub insertion: (u32, u32),
    pub gt_bbox: BBox,
    pub corner: Corner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub probe_id: String,
    pub test_image_id: String,
    pub major: u32,
    pub corner: Corner,
    pub dx: u32,
    pub dy: u32,
    pub window: CropWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipKind {
    Pair,
    TestImage,
    Probe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub kind: SkipKind,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMeta {
    pub config: PlanConfig,
    /// Offset grid per size class (major dimension).
    pub grids: BTreeMap<u32, OffsetGrid>,
    pub pair_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub meta: PlanMeta,
    pub test_images: Vec<TestImageSpec>,
    pub probes: Vec<ProbeSpec>,
    pub skipped: Vec<SkipRecord>,
}

pub fn probe_id(test_image_id: &str, dx: u32, dy: u32) -> String {
    format!("{test_image_id}__x{dx:03}_y{dy:03}")
}

/// Builds the full deterministic probe manifest for a catalog.
pub fn plan_experiment(catalog: &SceneCatalog, config: &PlanConfig) -> Result<ExperimentPlan> {
    if config.sizes.is_empty() {
        return Err(Error::InvalidInput("no target sizes configured".into()));
    }
    if config.insertions_per_pair == 0 {
        return Err(Error::InvalidInput("insertions_per_pair must be >= 1".into()));
    }
    let mut majors = Vec::with_capacity(config.sizes.len());
    for &p in &config.sizes {
        majors.push(compositor::target_major(p, config.crop_dimension)?);
    }
    let mut grids = BTreeMap::new();
    for &m in &majors {
        grids.insert(
            m,
            offset_grid_from(&config.master_offsets, m, config.crop_dimension),
        );
    }

    // Resized mask bboxes depend only on (target, size).
    let mut resized_bbox: HashMap<(usize, usize), Result<BBox>> = HashMap::new();
    let mut skipped = Vec::new();
    let mut test_images = Vec::new();
    let mut pair_count = 0;

    for scene in &catalog.scenes {
        let effective: Vec<_> = scene
            .regions
            .iter()
            .map(|r| catalog::effective_region(r, scene, config.margin))
            .collect();
        for (ti, target) in catalog.targets.iter().enumerate() {
            let compatible = catalog.compatible_regions(scene, target);
            if compatible.is_empty() {
                continue;
            }
            let usable: Vec<usize> = compatible
                .into_iter()
                .filter(|&i| !effective[i].is_empty())
                .collect();
            let base_pair = format!("{}__{}", scene.id, target.id);
            if usable.is_empty() {
                skipped.push(SkipRecord {
                    kind: SkipKind::Pair,
                    id: base_pair,
                    reason: "no compatible region has pixels outside the margin".into(),
                });
                continue;
            }
            for replicate in 0..config.insertions_per_pair {
                let (pair_id, key) = if config.insertions_per_pair == 1 {
                    (base_pair.clone(), target.id.clone())
                } else {
                    (
                        format!("{base_pair}__r{replicate:03}"),
                        format!("{}#{replicate}", target.id),
                    )
                };
                let region = usable[seed::keyed_rng(config.seed, &["region", &scene.id, &key])
                    .random_range(0..usable.len())];
                let point =
                    catalog::sample_keyed(&effective[region], config.seed, &scene.id, region, &key)?;
                pair_count += 1;

                for (si, (&p, &major)) in config.sizes.iter().zip(&majors).enumerate() {
                    let bbox = match resized_bbox.entry((ti, si)).or_insert_with(|| {
                        let cutout = catalog.target_image(target)?;
                        Ok(compositor::resize_target(target, &cutout, p, config.crop_dimension)?.bbox)
                    }) {
                        Ok(b) => *b,
                        Err(e) => return Err(Error::DegenerateTarget(format!("{}: {e}", target.id))),
                    };
                    let id = format!("{pair_id}__m{major:03}");
                    let gt_bbox = match compositor::placed_bbox(bbox, point) {
                        Ok(b) if b.x1 <= scene.width && b.y1 <= scene.height => b,
                        _ => {
                            skipped.push(SkipRecord {
                                kind: SkipKind::TestImage,
                                id,
                                reason: format!("target bbox centred at {point:?} exits the background"),
                            });
                            continue;
                        }
                    };
                    test_images.push(TestImageSpec {
                        id,
                        pair_id: pair_id.clone(),
                        scene_id: scene.id.clone(),
                        target_id: target.id.clone(),
                        region,
                        size_proportion: p,
                        major,
                        insertion: point,
                        gt_bbox,
                        corner: nearest_corner(gt_bbox, (scene.width, scene.height)),
                    });
                }
            }
        }
    }
    test_images.sort_by(|a, b| a.id.cmp(&b.id));

    let mut probes = Vec::new();
    for ti in &test_images {
        let scene = catalog.scene(&ti.scene_id).expect("scene exists");
        let grid = &grids[&ti.major];
        for &dx in grid.offsets() {
            for &dy in grid.offsets() {
                let pid = probe_id(&ti.id, dx, dy);
                match plan_crop(
                    ti.gt_bbox,
                    (scene.width, scene.height),
                    (dx, dy),
                    config.crop_dimension,
                ) {
                    Ok((corner, window)) => probes.push(ProbeSpec {
                        probe_id: pid,
                        test_image_id: ti.id.clone(),
                        major: ti.major,
                        corner,
                        dx,
                        dy,
                        window,
                    }),
                    Err(e) => skipped.push(SkipRecord {
                        kind: SkipKind::Probe,
                        id: pid,
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }

    Ok(ExperimentPlan {
        meta: PlanMeta {
            config: config.clone(),
            grids,
            pair_count,
        },
        test_images,
        probes,
        skipped,
    })
}

pub const PLAN_META: &str = "meta.json";
pub const PLAN_TEST_IMAGES: &str = "test_images.jsonl";
pub const PLAN_PROBES: &str = "probes.jsonl";
pub const PLAN_SKIPPED: &str = "skipped.jsonl";

impl ExperimentPlan {
    pub fn infeasible_probe_count(&self) -> usize {
        self.skipped.iter().filter(|s| s.kind == SkipKind::Probe).count()
    }

    pub fn test_image(&self, id: &str) -> Option<&TestImageSpec> {
        self.test_images
            .binary_search_by(|t| t.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.test_images[i])
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join(PLAN_META);
        let meta = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::json(meta_path.display().to_string(), e))?;
        std::fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
        write_jsonl(&dir.join(PLAN_TEST_IMAGES), &self.test_images)?;
        write_jsonl(&dir.join(PLAN_PROBES), &self.probes)?;
        write_jsonl(&dir.join(PLAN_SKIPPED), &self.skipped)?;
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta_path = dir.join(PLAN_META);
        if !meta_path.exists() {
            return Err(Error::MissingArtifact {
                path: meta_path,
                hint: "run `plan` first".into(),
            });
        }
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta = serde_json::from_str(&text)
            .map_err(|e| Error::json(meta_path.display().to_string(), e))?;
        Ok(ExperimentPlan {
            meta,
            test_images: read_jsonl(&dir.join(PLAN_TEST_IMAGES))?,
            probes: read_jsonl(&dir.join(PLAN_PROBES))?,
            skipped: read_jsonl(&dir.join(PLAN_SKIPPED))?,
        })
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::json(path.display().to_string(), e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}
