//! Annotation density maps for auditing where benchmark objects sit.
//!
//! Every object mask is resized to a square standard grid with
//! nearest-neighbour sampling and the binary results are summed.

use std::collections::BTreeMap;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Rle};
use crate::raster;

pub const STANDARD_SIZE: u32 = 640;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub width: u32,
    pub height: u32,
    /// Row-major masks at native resolution.
    pub masks: Vec<Rle>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityMap {
    pub size: u32,
    /// Row-major, `size * size`.
    pub counts: Vec<u32>,
    /// Images contributing at least one mask.
    pub images: usize,
    pub masks: usize,
}

/// Source index sampled by each of `standard` output cells: the pixel
/// containing the output cell's centre.
fn nearest_indices(native: u32, standard: u32) -> Vec<u32> {
    (0..standard as u64)
        .map(|i| ((2 * i + 1) * native as u64 / (2 * standard as u64)) as u32)
        .collect()
}

pub fn density_map(annotations: &[AnnotatedImage], standard: u32) -> Result<DensityMap> {
    if standard == 0 {
        return Err(Error::InvalidInput("standard size must be positive".into()));
    }
    let mut map = DensityMap {
        size: standard,
        counts: vec![0; standard as usize * standard as usize],
        images: 0,
        masks: 0,
    };
    for img in annotations {
        if img.width == 0 || img.height == 0 {
            return Err(Error::InvalidInput("image with zero extent".into()));
        }
        let xs = nearest_indices(img.width, standard);
        let ys = nearest_indices(img.height, standard);
        for rle in &img.masks {
            if rle.dimensions() != (img.width, img.height) {
                return Err(Error::MaskMismatch {
                    expected: (img.width, img.height),
                    found: rle.dimensions(),
                });
            }
            let mask = rle.decode()?;
            for (oy, &sy) in ys.iter().enumerate() {
                let row = oy * standard as usize;
                for (ox, &sx) in xs.iter().enumerate() {
                    if mask.get(sx, sy) {
                        map.counts[row + ox] += 1;
                    }
                }
            }
        }
        if !img.masks.is_empty() {
            map.images += 1;
            map.masks += img.masks.len();
        }
    }
    Ok(map)
}

impl DensityMap {
    pub fn get(&self, x: u32, y: u32) -> u32 {
        self.counts[y as usize * self.size as usize + x as usize]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// Cellwise sum of two maps over disjoint annotation sets.
    pub fn add(&self, other: &DensityMap) -> Result<DensityMap> {
        if self.size != other.size {
            return Err(Error::MaskMismatch {
                expected: (self.size, self.size),
                found: (other.size, other.size),
            });
        }
        Ok(DensityMap {
            size: self.size,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            images: self.images + other.images,
            masks: self.masks + other.masks,
        })
    }

    /// 16-bit grayscale; counts above 65535 saturate.
    pub fn to_image(&self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        ImageBuffer::from_fn(self.size, self.size, |x, y| {
            Luma([self.get(x, y).min(u16::MAX as u32) as u16])
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.counts.len() * 2);
        for row in self.counts.chunks(self.size as usize) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Writes `density.png` and `density.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = dir.join("density.png");
        self.to_image().save(&png).map_err(|e| Error::image(&png, e))?;
        let csv = dir.join("density.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    segmentation: CocoSegmentation,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { counts: CocoCounts, size: [u32; 2] },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CocoCounts {
    Raw(Vec<u64>),
    Compressed(String),
}

/// Decodes the compact string form of COCO run lengths.
pub fn decode_coco_counts(s: &str) -> Result<Vec<u64>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(Error::InvalidInput("truncated compressed RLE".into()));
            };
            let c = b as i64 - 48;
            if !(0..64).contains(&c) || k > 12 {
                return Err(Error::InvalidInput(format!("bad compressed RLE byte {b}")));
            }
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        counts.push(x);
    }
    counts
        .into_iter()
        .map(|c| u64::try_from(c).map_err(|_| Error::InvalidInput("negative RLE count".into())))
        .collect()
}

/// Converts column-major COCO run lengths to a row-major mask.
pub fn coco_rle_to_rle(counts: &[u64], width: u32, height: u32) -> Result<Rle> {
    let column_major = Rle {
        size: [width, height],
        counts: counts.to_vec(),
    };
    let transposed = column_major.decode()?;
    Ok(Rle::encode(&BinaryMask::from_fn(width, height, |x, y| transposed.get(y, x))))
}

fn polygons_to_rle(polys: &[Vec<f64>], width: u32, height: u32) -> Result<Rle> {
    let mut mask = BinaryMask::new(width, height);
    for flat in polys {
        if flat.len() < 6 || flat.len() % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "polygon with {} coordinates",
                flat.len()
            )));
        }
        let vertices: Vec<(f64, f64)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        for (x, y) in raster::rasterize(&vertices, width, height).pixels() {
            mask.set(x, y, true);
        }
    }
    Ok(Rle::encode(&mask))
}

/// Reads a COCO-style instances file into per-image mask lists, ordered by
/// image id. Images without annotations are kept with no masks.
pub fn load_coco(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CocoFile =
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    let mut images: BTreeMap<u64, AnnotatedImage> = file
        .images
        .iter()
        .map(|i| {
            (
                i.id,
                AnnotatedImage {
                    width: i.width,
                    height: i.height,
                    masks: Vec::new(),
                },
            )
        })
        .collect();
    for ann in &file.annotations {
        let img = images.get_mut(&ann.image_id).ok_or_else(|| {
            Error::InvalidInput(format!("annotation refers to unknown image {}", ann.image_id))
        })?;
        let rle = match &ann.segmentation {
            CocoSegmentation::Polygons(polys) => polygons_to_rle(polys, img.width, img.height)?,
            CocoSegmentation::Rle { counts, size } => {
                if (size[1], size[0]) != (img.width, img.height) {
                    return Err(Error::MaskMismatch {
                        expected: (img.width, img.height),
                        found: (size[1], size[0]),
                    });
                }
                let counts = match counts {
                    CocoCounts::Raw(c) => c.clone(),
                    CocoCounts::Compressed(s) => decode_coco_counts(s)?,
                };
                coco_rle_to_rle(&counts, img.width, img.height)?
            }
        };
        img.masks.push(rle);
    }
    Ok(images.into_values().collect())
}
