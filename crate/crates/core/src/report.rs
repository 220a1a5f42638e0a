//! Heatmaps of per-cell metrics.
//!
//! Tiles are placed by ordinal grid position, with rows indexed by `dy` and
//! columns by `dx`, so the corner cell (0, 0) sits top-left. The actual
//! offsets appear on the axis labels and in the CSV.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::CellMetrics;

pub const TILE: u32 = 28;
pub const ABSENT: Rgb<u8> = Rgb([128, 128, 128]);
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([0, 0, 0]);
const GLYPH_SCALE: u32 = 2;
const MARGIN_LEFT: u32 = 40;
const MARGIN_TOP: u32 = 20;
const BAR_GAP: u32 = 10;
const BAR_WIDTH: u32 = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub size: u32,
    pub metric: String,
    pub offsets: Vec<u32>,
    /// Row-major over `(dy, dx)` ordinals.
    pub values: Vec<Option<f64>>,
}

/// Builds the grid for one size class. Offsets are the union of all `dx`
/// and `dy` values present; unprobed cells are absent.
pub fn heatmap(cells: &[CellMetrics], metric: &str) -> Result<Heatmap> {
    if !CellMetrics::METRICS.contains(&metric) {
        return Err(Error::UnknownMetric(metric.to_string()));
    }
    let Some(first) = cells.first() else {
        return Err(Error::InvalidInput("no cells to plot".into()));
    };
    if let Some(other) = cells.iter().find(|c| c.size != first.size) {
        return Err(Error::InvalidInput(format!(
            "cells mix size classes {} and {}",
            first.size, other.size
        )));
    }
    let mut offsets: Vec<u32> = cells.iter().flat_map(|c| [c.dx, c.dy]).collect();
    offsets.sort_unstable();
    offsets.dedup();
    let n = offsets.len();
    let mut values = vec![None; n * n];
    for c in cells {
        let col = offsets.binary_search(&c.dx).expect("offset collected");
        let row = offsets.binary_search(&c.dy).expect("offset collected");
        values[row * n + col] = c.metric(metric)?;
    }
    Ok(Heatmap {
        size: first.size,
        metric: metric.to_string(),
        offsets,
        values,
    })
}

/// Piecewise-linear approximation of the viridis colormap.
pub fn colormap(v: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 9] = [
        [68.0, 1.0, 84.0],
        [71.0, 44.0, 122.0],
        [59.0, 81.0, 139.0],
        [44.0, 113.0, 142.0],
        [33.0, 144.0, 141.0],
        [39.0, 173.0, 129.0],
        [92.0, 200.0, 99.0],
        [170.0, 220.0, 50.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) } * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    Rgb(out)
}

/// 3x5 digit glyphs, one row per `u8`, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn text_width(text: &str) -> u32 {
    let n = text.len() as u32;
    (n * 4).saturating_sub(1) * GLYPH_SCALE
}

fn draw_number(img: &mut RgbImage, value: u32, x: u32, y: u32) {
    for (i, ch) in value.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let gx = x + i as u32 * 4 * GLYPH_SCALE;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for sy in 0..GLYPH_SCALE {
                        for sx in 0..GLYPH_SCALE {
                            let (px, py) = (gx + col * GLYPH_SCALE + sx, y + row as u32 * GLYPH_SCALE + sy);
                            if px < img.width() && py < img.height() {
                                img.put_pixel(px, py, INK);
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Heatmap {
    pub fn side(&self) -> usize {
        self.offsets.len()
    }

    pub fn value(&self, dx_index: usize, dy_index: usize) -> Option<f64> {
        self.values[dy_index * self.side() + dx_index]
    }

    /// Pixel bounds `(x0, y0)` of a tile in the rendered image.
    pub fn tile_origin(&self, dx_index: usize, dy_index: usize) -> (u32, u32) {
        (MARGIN_LEFT + dx_index as u32 * TILE, MARGIN_TOP + dy_index as u32 * TILE)
    }

    pub fn render(&self) -> RgbImage {
        let n = self.side() as u32;
        let grid = n * TILE;
        let mut img = RgbImage::from_pixel(
            MARGIN_LEFT + grid + BAR_GAP + BAR_WIDTH + 2,
            MARGIN_TOP + grid.max(1) + 2,
            BACKGROUND,
        );
        for row in 0..self.side() {
            for col in 0..self.side() {
                let color = self.value(col, row).map_or(ABSENT, colormap);
                let (x0, y0) = self.tile_origin(col, row);
                for y in y0..y0 + TILE {
                    for x in x0..x0 + TILE {
                        img.put_pixel(x, y, color);
                    }
                }
            }
        }
        let glyph_h = 5 * GLYPH_SCALE;
        for (i, &o) in self.offsets.iter().enumerate() {
            let w = text_width(&o.to_string());
            let (tx, _) = self.tile_origin(i, 0);
            draw_number(&mut img, o, tx + TILE.saturating_sub(w) / 2, (MARGIN_TOP - glyph_h) / 2);
            let (_, ly) = self.tile_origin(0, i);
            draw_number(&mut img, o, MARGIN_LEFT.saturating_sub(w + 6), ly + (TILE - glyph_h) / 2);
        }
        // Colour bar: 1 at the top, 0 at the bottom.
        let bar_x = MARGIN_LEFT + grid + BAR_GAP;
        for y in 0..grid {
            let v = 1.0 - y as f64 / (grid.max(2) - 1) as f64;
            for x in bar_x..bar_x + BAR_WIDTH {
                img.put_pixel(x, MARGIN_TOP + y, colormap(v));
            }
        }
        img
    }

    /// Matrix CSV: header `dy\dx,<offsets>`, then one row per `dy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dy\\dx");
        for o in &self.offsets {
            out.push_str(&format!(",{o}"));
        }
        out.push('\n');
        for (row, dy) in self.offsets.iter().enumerate() {
            out.push_str(&dy.to_string());
            for col in 0..self.side() {
                out.push(',');
                if let Some(v) = self.value(col, row) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(size: u32, metric: &str, text: &str) -> Result<Heatmap> {
        let bad = |why: String| Error::InvalidInput(format!("heatmap csv: {why}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let offsets = header
            .split(',')
            .skip(1)
            .map(|s| s.parse::<u32>().map_err(|e| bad(format!("offset `{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(offsets.len() * offsets.len());
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != offsets.len() + 1 || fields[0].parse::<u32>().ok() != offsets.get(row).copied() {
                return Err(bad(format!("malformed row {}", row + 1)));
            }
            for f in &fields[1..] {
                values.push(if f.is_empty() {
                    None
                } else {
                    Some(f.parse::<f64>().map_err(|e| bad(format!("value `{f}`: {e}")))?)
                });
            }
        }
        if values.len() != offsets.len() * offsets.len() {
            return Err(bad("row count does not match the header".into()));
        }
        Ok(Heatmap {
            size,
            metric: metric.to_string(),
            offsets,
            values,
        })
    }

    /// Writes `<stem>.png` and `<stem>.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = dir.join(format!("{stem}.png"));
        self.render().save(&png).map_err(|e| Error::image(&png, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(dx: u32, dy: u32, r_t: f64, c_t: Option<f64>) -> CellMetrics {
        CellMetrics { size: 40, dx, dy, n: 10, r_t, r_a: r_t / 2.0, c_t, c_a: None, s_t: c_t, s_a: None }
    }

    fn grid(f: impl Fn(u32, u32) -> CellMetrics) -> Vec<CellMetrics> {
        let offs = [0, 2, 4, 7, 350];
        offs.iter().flat_map(|&dx| offs.iter().map(move |&dy| (dx, dy))).map(|(dx, dy)| f(dx, dy)).collect()
    }

    #[test]
    fn uniform_values_give_uniform_tiles() {
        let h = heatmap(&grid(|dx, dy| cell(dx, dy, 0.8, Some(0.5))), "r_t").unwrap();
        let img = h.render();
        let expected = colormap(0.8);
        for row in 0..h.side() {
            for col in 0..h.side() {
                let (x, y) = h.tile_origin(col, row);
                assert_eq!(*img.get_pixel(x + TILE / 2, y + TILE / 2), expected);
                assert_eq!(*img.get_pixel(x, y), expected);
            }
        }
    }

    #[test]
    fn absent_cell_uses_sentinel_and_empty_field() {
        let h = heatmap(&grid(|dx, dy| cell(dx, dy, 0.8, ((dx, dy) != (2, 4)).then_some(0.3))), "c_t").unwrap();
        let img = h.render();
        let (x, y) = h.tile_origin(1, 2);
        assert_eq!(*img.get_pixel(x + 3, y + 3), ABSENT);
        let csv = h.to_csv();
        assert_eq!(csv.lines().nth(3).unwrap(), "4,0.3,,0.3,0.3,0.3");
        assert!((0..=1000).all(|i| colormap(i as f64 / 1000.0) != ABSENT));
    }

    #[test]
    fn darkest_tile_is_the_minimum() {
        let h = heatmap(&grid(|dx, dy| cell(dx, dy, 0.5 + 0.001 * (dx + dy) as f64, None)), "r_t").unwrap();
        let img = h.render();
        let luma = |p: &Rgb<u8>| p.0.iter().map(|&c| c as u32).sum::<u32>();
        let (x, y) = h.tile_origin(0, 0);
        let corner = luma(img.get_pixel(x + 5, y + 5));
        for row in 0..h.side() {
            for col in 0..h.side() {
                let (x, y) = h.tile_origin(col, row);
                assert!(luma(img.get_pixel(x + 5, y + 5)) >= corner);
            }
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let h = heatmap(&grid(|dx, dy| cell(dx, dy, 1.0 / (3.0 + dx as f64 + dy as f64), (dx > 0).then_some(0.1 + 0.2))), "c_t").unwrap();
        assert_eq!(Heatmap::from_csv(40, "c_t", &h.to_csv()).unwrap(), h);
        let r = heatmap(&grid(|dx, dy| cell(dx, dy, 1.0 / (3.0 + dx as f64), None)), "r_t").unwrap();
        assert_eq!(Heatmap::from_csv(40, "r_t", &r.to_csv()).unwrap(), r);
    }

    #[test]
    fn selector_and_size_checks() {
        let cells = grid(|dx, dy| cell(dx, dy, 0.5, None));
        assert!(matches!(heatmap(&cells, "precision"), Err(Error::UnknownMetric(_))));
        let mut mixed = cells.clone();
        mixed[0].size = 64;
        assert!(heatmap(&mixed, "r_t").is_err());
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(2.0), colormap(1.0));
    }
}
