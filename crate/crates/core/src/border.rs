//! Padding contamination in convolution/pooling stacks.
//!
//! Every layer that pads its input produces a strip of output cells whose
//! values depend on the padding rather than on image content. Stacking layers
//! widens that strip. [`affected_band`] computes the strip analytically from
//! the receptive-field recurrence; [`taint_oracle`] simulates it cell by cell
//! and is kept deliberately naive so the two can be checked against each other.
//!
//! A cell counts as affected when its receptive field, taken as the closed
//! interval `[center - (rf-1)/2, center + (rf-1)/2]` in input coordinates,
//! reaches outside the input on either axis. Pooling layers are described by
//! the same [`LayerSpec`] since only the window geometry matters here.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest per-axis input accepted by the dense simulator.
pub const ORACLE_MAX_INPUT: u64 = 4096;

/// One square, symmetric window operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel: u32,
    pub stride: u32,
    /// Pixels of padding on each side.
    pub padding: u32,
}

impl LayerSpec {
    pub fn new(kernel: u32, stride: u32, padding: u32) -> Result<Self> {
        let layer = LayerSpec {
            kernel,
            stride,
            padding,
        };
        layer.validate(0)?;
        Ok(layer)
    }

    fn validate(&self, index: usize) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::InvalidArchitecture {
                layer: index,
                reason: format!(
                    "kernel and stride must be >= 1 (kernel={}, stride={})",
                    self.kernel, self.stride
                ),
            });
        }
        Ok(())
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` when the window no longer fits.
    pub fn output_len(&self, n: u64) -> Option<u64> {
        let padded = n + 2 * self.padding as u64;
        let k = self.kernel as u64;
        if n == 0 || padded < k {
            return None;
        }
        Some((padded - k) / self.stride as u64 + 1)
    }
}

/// Receptive field of one output cell expressed in input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveFieldState {
    pub rf_size: u64,
    /// Input pixels between adjacent output centers.
    pub jump: u64,
    /// Input-coordinate center of output index 0.
    pub start: Ratio<i64>,
}

impl ReceptiveFieldState {
    pub fn identity() -> Self {
        ReceptiveFieldState {
            rf_size: 1,
            jump: 1,
            start: Ratio::from_integer(0),
        }
    }

    pub fn then(&self, layer: &LayerSpec) -> Self {
        let k = layer.kernel as i64;
        let jump = self.jump as i64;
        let half_width = Ratio::new(k - 1, 2);
        ReceptiveFieldState {
            rf_size: self.rf_size + (layer.kernel as u64 - 1) * self.jump,
            jump: self.jump * layer.stride as u64,
            start: self.start + (half_width - layer.padding as i64) * jump,
        }
    }

    fn half_extent(&self) -> Ratio<i64> {
        Ratio::new(self.rf_size as i64 - 1, 2)
    }

    /// Cells at the low end of an axis whose field starts before pixel 0.
    fn low_side_count(&self, n_out: u64) -> u64 {
        // leftmost(i) = start + i*jump - half < 0  <=>  i < (half - start) / jump
        let bound = (self.half_extent() - self.start) / self.jump as i64;
        bound.ceil().to_integer().clamp(0, n_out as i64) as u64
    }

    /// Cells at the high end whose field ends past pixel `n_in - 1`.
    fn high_side_count(&self, n_in: u64, n_out: u64) -> u64 {
        // rightmost(i) > n_in - 1  <=>  i > (n_in - 1 - half - start) / jump
        let bound = (Ratio::from_integer(n_in as i64 - 1) - self.half_extent() - self.start)
            / self.jump as i64;
        let first = (bound.floor().to_integer() + 1).clamp(0, n_out as i64) as u64;
        n_out - first
    }
}

/// Folds the receptive-field recurrence over `layers`.
pub fn compose_rf(layers: &[LayerSpec]) -> Result<ReceptiveFieldState> {
    if layers.is_empty() {
        return Err(Error::InvalidInput("layer list is empty".into()));
    }
    let mut state = ReceptiveFieldState::identity();
    for (i, layer) in layers.iter().enumerate() {
        layer.validate(i)?;
        state = state.then(layer);
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sides {
    pub left: u64,
    pub right: u64,
    pub top: u64,
    pub bottom: u64,
}

/// Contamination of one layer's output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerBand {
    pub layer: usize,
    /// Output (width, height).
    pub output: (u64, u64),
    /// Affected band per side, in output cells. When every cell is affected
    /// all four sides report the full extent of their axis.
    pub band: Sides,
    /// `band * jump` per side, capped at the input extent.
    pub input_band: Sides,
    pub affected_cells: u64,
}

impl LayerBand {
    pub fn total_cells(&self) -> u64 {
        self.output.0 * self.output.1
    }

    pub fn fraction(&self) -> f64 {
        self.affected_cells as f64 / self.total_cells() as f64
    }

    pub fn is_affected(&self, x: u64, y: u64) -> bool {
        let (w, h) = self.output;
        x < self.band.left
            || x + self.band.right >= w
            || y < self.band.top
            || y + self.band.bottom >= h
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandReport {
    /// Input (width, height).
    pub input: (u64, u64),
    pub per_layer: Vec<LayerBand>,
}

impl BandReport {
    pub fn last(&self) -> &LayerBand {
        self.per_layer.last().expect("report has at least one layer")
    }

    pub fn to_table(&self) -> String {
        let header = [
            "layer", "out_w", "out_h", "left", "right", "top", "bottom", "in_left", "in_right",
            "in_top", "in_bottom", "fraction",
        ];
        let rows: Vec<Vec<String>> = self.per_layer.iter().map(row_fields).collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let joined: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", joined.join("  "));
        };
        line(&mut out, &header);
        for row in &rows {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            line(&mut out, &cells);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,out_w,out_h,left,right,top,bottom,in_left,in_right,in_top,in_bottom,affected_cells,fraction\n",
        );
        for band in &self.per_layer {
            let mut fields = row_fields(band);
            fields.insert(11, band.affected_cells.to_string());
            fields[12] = band.fraction().to_string();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

fn row_fields(b: &LayerBand) -> Vec<String> {
    vec![
        b.layer.to_string(),
        b.output.0.to_string(),
        b.output.1.to_string(),
        b.band.left.to_string(),
        b.band.right.to_string(),
        b.band.top.to_string(),
        b.band.bottom.to_string(),
        b.input_band.left.to_string(),
        b.input_band.right.to_string(),
        b.input_band.top.to_string(),
        b.input_band.bottom.to_string(),
        format!("{:.6}", b.fraction()),
    ]
}

/// Output sizes after every layer, or the index of the first collapsing layer.
fn layer_sizes(layers: &[LayerSpec], input: (u64, u64)) -> Result<Vec<(u64, u64)>> {
    if layers.is_empty() {
        return Err(Error::InvalidInput("layer list is empty".into()));
    }
    if input.0 == 0 || input.1 == 0 {
        return Err(Error::InvalidInput(format!(
            "input size must be positive, got {}x{}",
            input.0, input.1
        )));
    }
    let mut sizes = Vec::with_capacity(layers.len());
    let (mut w, mut h) = input;
    for (i, layer) in layers.iter().enumerate() {
        layer.validate(i)?;
        match (layer.output_len(w), layer.output_len(h)) {
            (Some(nw), Some(nh)) => {
                w = nw;
                h = nh;
                sizes.push((w, h));
            }
            _ => {
                return Err(Error::InvalidArchitecture {
                    layer: i,
                    reason: format!(
                        "kernel {} with padding {} does not fit a {}x{} input",
                        layer.kernel, layer.padding, w, h
                    ),
                })
            }
        }
    }
    Ok(sizes)
}

/// Assembles a layer record from per-axis (low, high) counts.
fn band_from_axes(
    layer: usize,
    output: (u64, u64),
    x: (u64, u64),
    y: (u64, u64),
    jump: u64,
    input: (u64, u64),
) -> LayerBand {
    let (w, h) = output;
    let full = x.0 + x.1 >= w || y.0 + y.1 >= h;
    let (band, input_band, affected_cells) = if full {
        (
            Sides {
                left: w,
                right: w,
                top: h,
                bottom: h,
            },
            Sides {
                left: input.0,
                right: input.0,
                top: input.1,
                bottom: input.1,
            },
            w * h,
        )
    } else {
        let band = Sides {
            left: x.0,
            right: x.1,
            top: y.0,
            bottom: y.1,
        };
        let input_band = Sides {
            left: (x.0 * jump).min(input.0),
            right: (x.1 * jump).min(input.0),
            top: (y.0 * jump).min(input.1),
            bottom: (y.1 * jump).min(input.1),
        };
        let clean = (w - x.0 - x.1) * (h - y.0 - y.1);
        (band, input_band, w * h - clean)
    };
    LayerBand {
        layer,
        output,
        band,
        input_band,
        affected_cells,
    }
}

/// Analytic padding-contamination report for `layers` applied to `input`
/// (width, height).
pub fn affected_band(layers: &[LayerSpec], input: (u64, u64)) -> Result<BandReport> {
    let sizes = layer_sizes(layers, input)?;
    let mut state = ReceptiveFieldState::identity();
    let mut per_layer = Vec::with_capacity(layers.len());
    for (i, (layer, &(w, h))) in layers.iter().zip(&sizes).enumerate() {
        state = state.then(layer);
        let x = (state.low_side_count(w), state.high_side_count(input.0, w));
        let y = (state.low_side_count(h), state.high_side_count(input.1, h));
        per_layer.push(band_from_axes(i, (w, h), x, y, state.jump, input));
    }
    Ok(BandReport { input, per_layer })
}

/// Brute-force contamination report: pads every layer's input with tainted
/// cells and marks an output cell tainted when anything in its window is.
pub fn taint_oracle(layers: &[LayerSpec], input: (u64, u64)) -> Result<BandReport> {
    if input.0 > ORACLE_MAX_INPUT || input.1 > ORACLE_MAX_INPUT {
        return Err(Error::InvalidInput(format!(
            "input {}x{} exceeds the {ORACLE_MAX_INPUT} px simulation limit",
            input.0, input.1
        )));
    }
    let sizes = layer_sizes(layers, input)?;

    let (mut w, mut h) = (input.0 as usize, input.1 as usize);
    let mut grid = vec![false; w * h];
    let mut jump = 1u64;
    let mut per_layer = Vec::with_capacity(layers.len());

    for (i, (layer, &(ow, oh))) in layers.iter().zip(&sizes).enumerate() {
        let (k, s, p) = (
            layer.kernel as usize,
            layer.stride as usize,
            layer.padding as usize,
        );
        let (pw, ph) = (w + 2 * p, h + 2 * p);
        // Summed-area table over the padded, tainted-bordered grid.
        let mut sat = vec![0u32; (pw + 1) * (ph + 1)];
        for py in 0..ph {
            let mut row = 0u32;
            for px in 0..pw {
                let inside = px >= p && px < p + w && py >= p && py < p + h;
                let tainted = !inside || grid[(py - p) * w + (px - p)];
                row += tainted as u32;
                sat[(py + 1) * (pw + 1) + px + 1] = sat[py * (pw + 1) + px + 1] + row;
            }
        }
        let (ow, oh) = (ow as usize, oh as usize);
        let mut next = vec![false; ow * oh];
        for oy in 0..oh {
            for ox in 0..ow {
                let (x0, y0) = (ox * s, oy * s);
                let (x1, y1) = (x0 + k, y0 + k);
                let sum = sat[y1 * (pw + 1) + x1] + sat[y0 * (pw + 1) + x0]
                    - sat[y0 * (pw + 1) + x1]
                    - sat[y1 * (pw + 1) + x0];
                next[oy * ow + ox] = sum > 0;
            }
        }
        grid = next;
        w = ow;
        h = oh;
        jump *= layer.stride as u64;
        per_layer.push(observe(&grid, w, h, i, jump, input));
    }
    Ok(BandReport { input, per_layer })
}

/// Reads band widths off a simulated grid: the runs of fully tainted
/// columns/rows from each side, plus the raw tainted count.
fn observe(
    grid: &[bool],
    w: usize,
    h: usize,
    layer: usize,
    jump: u64,
    input: (u64, u64),
) -> LayerBand {
    let col_full = |x: usize| (0..h).all(|y| grid[y * w + x]);
    let row_full = |y: usize| (0..w).all(|x| grid[y * w + x]);
    let left = (0..w).take_while(|&x| col_full(x)).count() as u64;
    let right = (0..w).rev().take_while(|&x| col_full(x)).count() as u64;
    let top = (0..h).take_while(|&y| row_full(y)).count() as u64;
    let bottom = (0..h).rev().take_while(|&y| row_full(y)).count() as u64;
    let tainted = grid.iter().filter(|&&t| t).count() as u64;

    let mut band = band_from_axes(
        layer,
        (w as u64, h as u64),
        (left, right),
        (top, bottom),
        jump,
        input,
    );
    band.affected_cells = tainted;
    band
}

/// Parses an architecture description.
///
/// Line format: an optional label, then either three integers
/// (`kernel stride padding`) or `key=value` pairs using `kernel|k`,
/// `stride|s`, `padding|pad|p`, and optionally `repeat|x` or a trailing
/// `xN`. `#` starts a comment. Files whose text parses as TOML with a
/// `layer` array of tables are accepted too.
pub fn parse_architecture(text: &str) -> Result<Vec<LayerSpec>> {
    if let Some(layers) = parse_toml_architecture(text)? {
        return Ok(layers);
    }
    let mut layers = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::InvalidInput(format!("line {}: {msg}: `{raw}`", lineno + 1));
        let mut tokens: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        if let Some(first) = tokens.first() {
            if !first.contains('=') && first.parse::<u32>().is_err() && !is_repeat_token(first) {
                tokens.remove(0);
            }
        }
        let (mut k, mut s, mut p, mut repeat) = (None, None, None, 1u32);
        let mut positional = Vec::new();
        for tok in tokens {
            if let Some((key, value)) = tok.split_once('=') {
                let v: u32 = value.parse().map_err(|_| bad("non-integer value"))?;
                match key.to_ascii_lowercase().as_str() {
                    "kernel" | "k" => k = Some(v),
                    "stride" | "s" => s = Some(v),
                    "padding" | "pad" | "p" => p = Some(v),
                    "repeat" | "x" => repeat = v,
                    _ => return Err(bad("unknown key")),
                }
            } else if is_repeat_token(tok) {
                repeat = tok[1..].parse().map_err(|_| bad("bad repeat count"))?;
            } else {
                positional.push(tok.parse::<u32>().map_err(|_| bad("expected integer"))?);
            }
        }
        match positional.as_slice() {
            [] => {}
            [pk, ps, pp] => {
                k = Some(*pk);
                s = Some(*ps);
                p = Some(*pp);
            }
            _ => return Err(bad("expected `kernel stride padding`")),
        }
        let layer = LayerSpec {
            kernel: k.ok_or_else(|| bad("missing kernel"))?,
            stride: s.unwrap_or(1),
            padding: p.unwrap_or(0),
        };
        layer.validate(layers.len())?;
        for _ in 0..repeat {
            layers.push(layer);
        }
    }
    if layers.is_empty() {
        return Err(Error::InvalidInput("architecture has no layers".into()));
    }
    Ok(layers)
}

fn is_repeat_token(tok: &str) -> bool {
    tok.len() > 1 && tok.starts_with('x') && tok[1..].chars().all(|c| c.is_ascii_digit())
}

#[derive(Deserialize)]
struct TomlArchitecture {
    layer: Vec<TomlLayer>,
}

#[derive(Deserialize)]
struct TomlLayer {
    kernel: u32,
    #[serde(default = "one")]
    stride: u32,
    #[serde(default)]
    padding: u32,
    #[serde(default = "one")]
    repeat: u32,
}

fn one() -> u32 {
    1
}

fn parse_toml_architecture(text: &str) -> Result<Option<Vec<LayerSpec>>> {
    if !text.contains("[[layer]]") {
        return Ok(None);
    }
    let arch: TomlArchitecture = toml::from_str(text).map_err(|e| Error::Toml {
        path: "<architecture>".into(),
        message: e.to_string(),
    })?;
    let mut layers = Vec::new();
    for l in arch.layer {
        let spec = LayerSpec {
            kernel: l.kernel,
            stride: l.stride,
            padding: l.padding,
        };
        spec.validate(layers.len())?;
        layers.extend(std::iter::repeat_n(spec, l.repeat as usize));
    }
    Ok(Some(layers))
}
