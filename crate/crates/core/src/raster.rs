//! Polygon rasterization with even-odd fill and pixel-center sampling.

use serde::{Deserialize, Serialize};

/// Horizontal run of pixels `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub y: u32,
    pub x0: u32,
    pub x1: u32,
}

impl Span {
    fn len(&self) -> u64 {
        (self.x1 - self.x0) as u64
    }
}

/// A set of pixels stored as row spans sorted by `(y, x0)`, non-overlapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRaster {
    spans: Vec<Span>,
}

impl RegionRaster {
    pub fn from_spans(mut spans: Vec<Span>) -> Self {
        spans.retain(|s| s.x1 > s.x0);
        spans.sort_by_key(|s| (s.y, s.x0));
        let mut merged: Vec<Span> = Vec::with_capacity(spans.len());
        for s in spans {
            match merged.last_mut() {
                Some(last) if last.y == s.y && s.x0 <= last.x1 => last.x1 = last.x1.max(s.x1),
                _ => merged.push(s),
            }
        }
        RegionRaster { spans: merged }
    }

    pub fn spans(&self) -> &[Span] {
        &self.spans
    }

    pub fn pixel_count(&self) -> u64 {
        self.spans.iter().map(Span::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        let start = self.spans.partition_point(|s| s.y < y);
        self.spans[start..]
            .iter()
            .take_while(|s| s.y == y)
            .any(|s| x >= s.x0 && x < s.x1)
    }

    /// Restricts the raster to `[x0, x1) x [y0, y1)`.
    pub fn clip(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> RegionRaster {
        let spans = self
            .spans
            .iter()
            .filter(|s| s.y >= y0 && s.y < y1)
            .map(|s| Span {
                y: s.y,
                x0: s.x0.max(x0),
                x1: s.x1.min(x1),
            })
            .filter(|s| s.x1 > s.x0)
            .collect();
        RegionRaster { spans }
    }

    /// The `index`-th pixel in row-major order.
    pub fn nth_pixel(&self, mut index: u64) -> Option<(u32, u32)> {
        for s in &self.spans {
            if index < s.len() {
                return Some((s.x0 + index as u32, s.y));
            }
            index -= s.len();
        }
        None
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.spans
            .iter()
            .flat_map(|s| (s.x0..s.x1).map(move |x| (x, s.y)))
    }
}

/// X coordinates where the horizontal line `y = yc` crosses polygon edges.
/// An edge counts when `yc` lies in its half-open vertical extent.
pub(crate) fn crossings(vertices: &[(f64, f64)], yc: f64) -> Vec<f64> {
    let n = vertices.len();
    let mut xs = Vec::new();
    for i in 0..n {
        let (ax, ay) = vertices[i];
        let (bx, by) = vertices[(i + 1) % n];
        if (ay <= yc) != (by <= yc) {
            xs.push(ax + (yc - ay) * (bx - ax) / (by - ay));
        }
    }
    xs
}

/// Even-odd point test consistent with [`rasterize`]: a point exactly on a
/// crossing belongs to the span it opens.
pub fn point_in_polygon(vertices: &[(f64, f64)], px: f64, py: f64) -> bool {
    crossings(vertices, py).iter().filter(|&&x| x > px).count() % 2 == 1
}

/// Pixels of a `width x height` image whose centers fall inside the polygon.
pub fn rasterize(vertices: &[(f64, f64)], width: u32, height: u32) -> RegionRaster {
    if vertices.len() < 3 {
        return RegionRaster::default();
    }
    let (ymin, ymax) = vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v.1), hi.max(v.1))
        });
    let row_lo = (ymin - 0.5).ceil().max(0.0) as u32;
    let row_hi = ((ymax - 0.5).floor() + 1.0).clamp(0.0, height as f64) as u32;
    let mut spans = Vec::new();
    for y in row_lo..row_hi {
        let mut xs = crossings(vertices, y as f64 + 0.5);
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // Pixel x is inside when pair[0] <= x + 0.5 < pair[1].
            let lo = (pair[0] - 0.5).ceil().clamp(0.0, width as f64) as u32;
            let hi = (pair[1] - 0.5).ceil().clamp(0.0, width as f64) as u32;
            if hi > lo {
                spans.push(Span { y, x0: lo, x1: hi });
            }
        }
    }
    RegionRaster::from_spans(spans)
}

/// Signed shoelace area (positive for counter-clockwise in y-up axes).
pub fn signed_area(vertices: &[(f64, f64)]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let (ax, ay) = vertices[i];
            let (bx, by) = vertices[(i + 1) % n];
            ax * by - bx * ay
        })
        .sum::<f64>()
        / 2.0
}

fn orientation(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

fn segments_touch(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let (o1, o2) = (orientation(a, b, c), orientation(a, b, d));
    let (o3, o4) = (orientation(c, d, a), orientation(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

/// True when no two non-adjacent edges touch and no edge has zero length.
pub fn is_simple(vertices: &[(f64, f64)]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if vertices[i] == vertices[(i + 1) % n] {
            return false;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (a, b) = (vertices[i], vertices[(i + 1) % n]);
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            if segments_touch(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<(f64, f64)> {
        vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    }

    #[test]
    fn full_image_rectangle_covers_everything() {
        let r = rasterize(&rect(0.0, 0.0, 10.0, 6.0), 10, 6);
        assert_eq!(r.pixel_count(), 60);
    }

    #[test]
    fn rasterize_agrees_with_point_test() {
        let poly = vec![(1.3, 0.2), (9.7, 2.1), (6.2, 8.8), (3.0, 4.5), (0.4, 7.9)];
        let r = rasterize(&poly, 12, 10);
        for y in 0..10 {
            for x in 0..12 {
                assert_eq!(
                    r.contains(x, y),
                    point_in_polygon(&poly, x as f64 + 0.5, y as f64 + 0.5),
                    "pixel ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn clip_and_index() {
        let r = rasterize(&rect(0.0, 0.0, 4.0, 4.0), 4, 4).clip(1, 1, 3, 3);
        assert_eq!(r.pixel_count(), 4);
        assert_eq!(r.nth_pixel(0), Some((1, 1)));
        assert_eq!(r.nth_pixel(3), Some((2, 2)));
        assert_eq!(r.nth_pixel(4), None);
        assert_eq!(r.pixels().count(), 4);
    }

    #[test]
    fn simplicity() {
        assert!(is_simple(&rect(0.0, 0.0, 2.0, 2.0)));
        let bowtie = vec![(0.0, 0.0), (2.0, 2.0), (2.0, 0.0), (0.0, 2.0)];
        assert!(!is_simple(&bowtie));
        assert!(!is_simple(&[(0.0, 0.0), (1.0, 1.0)]));
        let repeated = vec![(0.0, 0.0), (0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        assert!(!is_simple(&repeated));
    }

    #[test]
    fn area_sign_and_magnitude() {
        assert_eq!(signed_area(&rect(0.0, 0.0, 3.0, 2.0)).abs(), 6.0);
        let collinear = vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        assert_eq!(signed_area(&collinear), 0.0);
    }
}
