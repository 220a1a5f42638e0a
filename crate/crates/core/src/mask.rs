//! Binary masks and their row-major run-length encoding.
//!
//! The wire form alternates zero and one run lengths over the row-major
//! pixel sequence, always starting with a (possibly empty) zero run, so a mask
//! has exactly one canonical encoding. Note this differs from COCO's
//! column-major order; see [`crate::bias`] for the COCO import path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box, half-open: `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn major(&self) -> u32 {
        self.width().max(self.height())
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Option<BBox> {
        let shift = |v: u32, d: i64| u32::try_from(v as i64 + d).ok();
        Some(BBox {
            x0: shift(self.x0, dx)?,
            y0: shift(self.y0, dy)?,
            x1: shift(self.x1, dx)?,
            y1: shift(self.y1, dy)?,
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Tight bounds of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        let mut bounds: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    let b = bounds.get_or_insert(BBox {
                        x0: x,
                        y0: y,
                        x1: x + 1,
                        y1: y + 1,
                    });
                    b.x0 = b.x0.min(x);
                    b.x1 = b.x1.max(x + 1);
                    b.y0 = b.y0.min(y);
                    b.y1 = b.y1.max(y + 1);
                }
            }
        }
        bounds
    }

    pub fn crop(&self, region: BBox) -> BinaryMask {
        BinaryMask::from_fn(region.width(), region.height(), |x, y| {
            self.get(region.x0 + x, region.y0 + y)
        })
    }

    /// Square-neighbourhood dilation (`radius > 0`) or erosion (`radius < 0`).
    /// Pixels outside the mask count as unset.
    pub fn morph(&self, radius: i32) -> BinaryMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius.unsigned_abs() as i64;
        let dilate = radius > 0;
        let (w, h) = (self.width as i64, self.height as i64);
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let mut hit = !dilate;
            'outer: for ny in (y as i64 - r)..=(y as i64 + r) {
                for nx in (x as i64 - r)..=(x as i64 + r) {
                    let v = nx >= 0 && ny >= 0 && nx < w && ny < h && self.get(nx as u32, ny as u32);
                    if dilate && v {
                        hit = true;
                        break 'outer;
                    }
                    if !dilate && !v {
                        hit = false;
                        break 'outer;
                    }
                }
            }
            hit
        })
    }
}

/// Row-major run-length encoded mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn empty(width: u32, height: u32) -> Self {
        Rle {
            size: [height, width],
            counts: vec![width as u64 * height as u64],
        }
    }

    pub fn width(&self) -> u32 {
        self.size[1]
    }

    pub fn height(&self) -> u32 {
        self.size[0]
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.size[1], self.size[0])
    }

    pub fn pixel_count(&self) -> u64 {
        self.size[0] as u64 * self.size[1] as u64
    }

    pub fn encode(mask: &BinaryMask) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &bit in mask.as_slice() {
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        counts.push(run);
        Rle {
            size: [mask.height(), mask.width()],
            counts,
        }
    }

    /// Encodes `patch` placed with its top-left at `origin` inside an
    /// otherwise empty `width x height` frame.
    pub fn from_patch(patch: &BinaryMask, origin: (u32, u32), width: u32, height: u32) -> Result<Rle> {
        if origin.0 as u64 + patch.width() as u64 > width as u64
            || origin.1 as u64 + patch.height() as u64 > height as u64
        {
            return Err(Error::OutOfBounds(format!(
                "{}x{} patch at {:?} does not fit a {width}x{height} frame",
                patch.width(),
                patch.height(),
                origin
            )));
        }
        let mut builder = RunBuilder::default();
        let w = width as u64;
        for py in 0..patch.height() {
            let row_base = (origin.1 + py) as u64 * w + origin.0 as u64;
            let mut px = 0;
            while px < patch.width() {
                if patch.get(px, py) {
                    let start = px;
                    while px < patch.width() && patch.get(px, py) {
                        px += 1;
                    }
                    builder.push(row_base + start as u64, row_base + px as u64);
                } else {
                    px += 1;
                }
            }
        }
        Ok(builder.finish(width, height))
    }

    /// Checks that the runs cover exactly `height * width` pixels.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.counts.is_empty() {
            return Err("RLE has no counts".into());
        }
        let total: u64 = self.counts.iter().sum();
        if total != self.pixel_count() {
            return Err(format!(
                "RLE counts sum to {total}, expected {} ({}x{})",
                self.pixel_count(),
                self.size[1],
                self.size[0]
            ));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<BinaryMask> {
        self.validate().map_err(Error::InvalidInput)?;
        let mut bits = Vec::with_capacity(self.pixel_count() as usize);
        let mut value = false;
        for &c in &self.counts {
            bits.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        Ok(BinaryMask {
            width: self.size[1],
            height: self.size[0],
            bits,
        })
    }

    /// Half-open linear intervals of set pixels.
    pub fn runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c;
            (i % 2 == 1 && c > 0).then_some((start, pos))
        })
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn intersection_area(&self, other: &Rle) -> Result<u64> {
        self.check_same_size(other)?;
        let a: Vec<_> = self.runs().collect();
        let b: Vec<_> = other.runs().collect();
        let (mut i, mut j, mut total) = (0, 0, 0u64);
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if hi > lo {
                total += hi - lo;
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(total)
    }

    pub fn check_same_size(&self, other: &Rle) -> Result<()> {
        if self.size != other.size {
            return Err(Error::MaskMismatch {
                expected: self.dimensions(),
                found: other.dimensions(),
            });
        }
        Ok(())
    }

    pub fn bbox(&self) -> Option<BBox> {
        let w = self.width() as u64;
        let mut bounds: Option<BBox> = None;
        for (start, end) in self.runs() {
            let mut pos = start;
            while pos < end {
                let y = pos / w;
                let x0 = pos % w;
                let row_end = ((y + 1) * w).min(end);
                let x1 = x0 + (row_end - pos);
                let b = bounds.get_or_insert(BBox {
                    x0: x0 as u32,
                    y0: y as u32,
                    x1: x1 as u32,
                    y1: y as u32 + 1,
                });
                b.x0 = b.x0.min(x0 as u32);
                b.x1 = b.x1.max(x1 as u32);
                b.y0 = b.y0.min(y as u32);
                b.y1 = b.y1.max(y as u32 + 1);
                pos = row_end;
            }
        }
        bounds
    }

    /// Dense copy of the pixels inside `region`, without decoding the full frame.
    pub fn to_patch(&self, region: BBox) -> BinaryMask {
        let w = self.width() as u64;
        let mut patch = BinaryMask::new(region.width(), region.height());
        for (start, end) in self.runs() {
            let mut pos = start;
            while pos < end {
                let (y, x) = (pos / w, pos % w);
                let row_end = ((y + 1) * w).min(end);
                let x_end = x + (row_end - pos);
                if y >= region.y0 as u64 && y < region.y1 as u64 {
                    let lo = x.max(region.x0 as u64);
                    let hi = x_end.min(region.x1 as u64);
                    for px in lo..hi {
                        patch.set(px as u32 - region.x0, y as u32 - region.y0, true);
                    }
                }
                pos = row_end;
            }
        }
        patch
    }
}

/// Accumulates sorted, disjoint set intervals into canonical counts.
#[derive(Default)]
struct RunBuilder {
    counts: Vec<u64>,
    cursor: u64,
}

impl RunBuilder {
    fn push(&mut self, start: u64, end: u64) {
        debug_assert!(start >= self.cursor && end > start);
        if start == self.cursor && !self.counts.is_empty() {
            // Adjacent to the previous run: extend it.
            *self.counts.last_mut().unwrap() += end - start;
        } else {
            self.counts.push(start - self.cursor);
            self.counts.push(end - start);
        }
        self.cursor = end;
    }

    fn finish(mut self, width: u32, height: u32) -> Rle {
        let total = width as u64 * height as u64;
        if self.counts.is_empty() {
            self.counts.push(total);
        } else if total > self.cursor {
            self.counts.push(total - self.cursor);
        }
        Rle {
            size: [height, width],
            counts: self.counts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (1u32..=64, 1u32..=64).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize).prop_map(move |bits| {
                BinaryMask {
                    width: w,
                    height: h,
                    bits,
                }
            })
        })
    }

    proptest! {
        #[test]
        fn roundtrip_and_canonical(mask in mask_strategy()) {
            let rle = Rle::encode(&mask);
            prop_assert_eq!(rle.decode().unwrap(), mask.clone());
            prop_assert_eq!(rle.area(), mask.area());
            prop_assert!(rle.counts.iter().skip(1).all(|&c| c > 0));
            prop_assert_eq!(rle.bbox(), mask.bbox());
        }

        #[test]
        fn patch_encoding_matches_dense(mask in mask_strategy(), ox in 0u32..10, oy in 0u32..10) {
            let (w, h) = (mask.width() + ox + 3, mask.height() + oy + 2);
            let dense = BinaryMask::from_fn(w, h, |x, y| {
                x >= ox && y >= oy && x < ox + mask.width() && y < oy + mask.height()
                    && mask.get(x - ox, y - oy)
            });
            prop_assert_eq!(Rle::from_patch(&mask, (ox, oy), w, h).unwrap(), Rle::encode(&dense));
        }

        #[test]
        fn region_patch_matches_crop(mask in mask_strategy(), a in 0u32..64, b in 0u32..64, c in 0u32..64, d in 0u32..64) {
            let (x0, x1) = ((a.min(c)) % mask.width(), (a.max(c)) % mask.width() + 1);
            let (y0, y1) = ((b.min(d)) % mask.height(), (b.max(d)) % mask.height() + 1);
            let region = BBox { x0: x0.min(x1 - 1), y0: y0.min(y1 - 1), x1, y1 };
            prop_assert_eq!(Rle::encode(&mask).to_patch(region), mask.crop(region));
        }
    }

    #[test]
    fn encode_starts_with_zero_run() {
        let mut m = BinaryMask::new(3, 1);
        m.set(0, 0, true);
        assert_eq!(Rle::encode(&m).counts, vec![0, 1, 2]);
        assert_eq!(Rle::encode(&BinaryMask::new(2, 2)).counts, vec![4]);
    }

    #[test]
    fn row_major_order() {
        // 2x2 with the top-right pixel set: row-major index 1.
        let mut m = BinaryMask::new(2, 2);
        m.set(1, 0, true);
        assert_eq!(Rle::encode(&m).counts, vec![1, 1, 2]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let rle = Rle {
            size: [2, 2],
            counts: vec![1, 1, 1],
        };
        assert!(rle.validate().is_err());
        assert!(rle.decode().is_err());
    }

    #[test]
    fn intersection_counts_shared_pixels() {
        let a = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        let b = BinaryMask::from_fn(4, 4, |x, y| (1..3).contains(&x) && y < 2);
        let (ra, rb) = (Rle::encode(&a), Rle::encode(&b));
        assert_eq!(ra.intersection_area(&rb).unwrap(), 2);
        let other = Rle::empty(5, 4);
        assert!(matches!(ra.intersection_area(&other), Err(Error::MaskMismatch { .. })));
    }

    #[test]
    fn morph_dilate_erode() {
        let m = BinaryMask::from_fn(7, 7, |x, y| (2..5).contains(&x) && (2..5).contains(&y));
        assert_eq!(m.morph(1).area(), 25);
        assert_eq!(m.morph(-1).area(), 1);
        assert_eq!(m.morph(0), m);
    }

    #[test]
    fn bbox_translate() {
        let b = BBox { x0: 5, y0: 5, x1: 10, y1: 8 };
        assert_eq!(b.translate(-5, 2), Some(BBox { x0: 0, y0: 7, x1: 5, y1: 10 }));
        assert_eq!(b.translate(-6, 0), None);
        assert_eq!(b.major(), 5);
    }
}
