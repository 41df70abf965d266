//! Raster plotting for the report figures, dependency-free except for PNG
//! encoding.
//!
//! A fixed 5×7 bitmap font, Bresenham lines, and a small axes helper cover
//! everything the report needs: multi-series line charts (optionally with a
//! log₁₀ y-axis), mean ± σ error-bar charts, violin plots, and heatmaps.
//! The aim is legible and deterministic, not beautiful: the same inputs
//! produce byte-identical images.

use std::path::Path;

use crate::eval::stats::{gaussian_kde, silverman_bandwidth};
use crate::{Error, Result};

/// Color palette shared by all figures (a colorblind-safe default cycle).
pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

const BG: [u8; 3] = [255, 255, 255];
const FG: [u8; 3] = [30, 30, 30];
const GRID: [u8; 3] = [225, 225, 225];

// ---------------------------------------------------------------------------
// Canvas
// ---------------------------------------------------------------------------

/// An RGB raster with clipping writes.
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize) -> Canvas {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&BG);
        }
        Canvas { width, height, data }
    }

    pub fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Bresenham line, endpoints included.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: [u8; 3]) {
        let (dx, sx) = ((x1 - x0).abs(), if x0 < x1 { 1 } else { -1 });
        let (dy, sy) = (-(y1 - y0).abs(), if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, c);
            if x == x1 && y == y1 {
                return;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: [u8; 3]) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, c);
            }
        }
    }

    /// Draws `text` with its top-left corner at `(x, y)`; unknown characters
    /// advance without marking. Lowercase renders as uppercase.
    pub fn text(&mut self, x: i64, y: i64, text: &str, c: [u8; 3]) {
        let mut cx = x;
        for ch in text.chars() {
            if let Some(rows) = glyph(ch) {
                for (ry, bits) in rows.iter().enumerate() {
                    for rx in 0..5 {
                        if bits & (0b10000 >> rx) != 0 {
                            self.set(cx + rx as i64, y + ry as i64, c);
                        }
                    }
                }
            }
            cx += GLYPH_ADVANCE;
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.clone(),
        )
        .expect("canvas buffer matches its dimensions");
        img.save(path).map_err(|e| Error::Io {
            context: path.display().to_string(),
            source: std::io::Error::other(e),
        })
    }
}

const GLYPH_ADVANCE: i64 = 6;

/// Pixel width of a rendered string.
pub fn text_width(text: &str) -> i64 {
    text.chars().count() as i64 * GLYPH_ADVANCE - 1
}

/// 5×7 glyphs, one byte per row, low 5 bits used, MSB-side leftmost.
fn glyph(ch: char) -> Option<[u8; 7]> {
    let ch = ch.to_ascii_uppercase();
    let rows = match ch {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        '0' => [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
        '1' => [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        '2' => [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
        '3' => [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
        '4' => [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
        '5' => [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
        '6' => [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
        '7' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
        '8' => [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
        '9' => [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
        'A' => [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'B' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110],
        'C' => [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110],
        'D' => [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100],
        'E' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111],
        'F' => [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000],
        'G' => [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111],
        'H' => [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001],
        'I' => [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
        'J' => [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100],
        'K' => [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001],
        'L' => [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111],
        'M' => [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001],
        'N' => [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001],
        'O' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'P' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000],
        'Q' => [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101],
        'R' => [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001],
        'S' => [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110],
        'T' => [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100],
        'U' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110],
        'V' => [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100],
        'W' => [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010],
        'X' => [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001],
        'Y' => [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100],
        'Z' => [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111],
        '.' => [0, 0, 0, 0, 0, 0b01100, 0b01100],
        ',' => [0, 0, 0, 0, 0b00110, 0b00100, 0b01000],
        '-' => [0, 0, 0, 0b11111, 0, 0, 0],
        '+' => [0, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0],
        '%' => [0b11000, 0b11001, 0b00010, 0b00100, 0b01000, 0b10011, 0b00011],
        '/' => [0b00001, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b10000],
        '(' => [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010],
        ')' => [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000],
        ':' => [0, 0b01100, 0b01100, 0, 0b01100, 0b01100, 0],
        '=' => [0, 0, 0b11111, 0, 0b11111, 0, 0],
        '<' => [0b00010, 0b00100, 0b01000, 0b10000, 0b01000, 0b00100, 0b00010],
        '>' => [0b01000, 0b00100, 0b00010, 0b00001, 0b00010, 0b00100, 0b01000],
        '_' => [0, 0, 0, 0, 0, 0, 0b11111],
        _ => return None,
    };
    Some(rows)
}

// ---------------------------------------------------------------------------
// Axes
// ---------------------------------------------------------------------------

const MARGIN_LEFT: i64 = 58;
const MARGIN_RIGHT: i64 = 16;
const MARGIN_TOP: i64 = 26;
const MARGIN_BOTTOM: i64 = 36;

struct Axes {
    px0: i64,
    py0: i64, // bottom-left corner of the plot rectangle
    pw: i64,
    ph: i64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    log_y: bool,
}

impl Axes {
    fn new(canvas: &Canvas, x_range: (f64, f64), y_range: (f64, f64), log_y: bool) -> Axes {
        Axes {
            px0: MARGIN_LEFT,
            py0: canvas.height as i64 - MARGIN_BOTTOM,
            pw: canvas.width as i64 - MARGIN_LEFT - MARGIN_RIGHT,
            ph: canvas.height as i64 - MARGIN_TOP - MARGIN_BOTTOM,
            x_range,
            y_range,
            log_y,
        }
    }

    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.log10()
        } else {
            y
        }
    }

    fn map(&self, x: f64, y: f64) -> (i64, i64) {
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let (lo, hi) = (self.ty(self.y_range.0), self.ty(self.y_range.1));
        let fy = (self.ty(y) - lo) / (hi - lo);
        (
            self.px0 + (fx * self.pw as f64).round() as i64,
            self.py0 - (fy * self.ph as f64).round() as i64,
        )
    }

    fn draw_frame(&self, canvas: &mut Canvas, title: &str, x_label: &str, y_label: &str) {
        // Ticks and gridlines first so the frame draws over them.
        for &tx in &nice_ticks(self.x_range.0, self.x_range.1, 6) {
            let (px, _) = self.map(tx, self.y_range.0);
            canvas.line(px, self.py0 - self.ph, px, self.py0, GRID);
            canvas.line(px, self.py0, px, self.py0 + 3, FG);
            let label = format_tick(tx);
            canvas.text(px - text_width(&label) / 2, self.py0 + 7, &label, FG);
        }
        let y_ticks = if self.log_y {
            log_ticks(self.y_range.0, self.y_range.1)
        } else {
            nice_ticks(self.y_range.0, self.y_range.1, 6)
        };
        for &ty in &y_ticks {
            let (_, py) = self.map(self.x_range.0, ty);
            canvas.line(self.px0, py, self.px0 + self.pw, py, GRID);
            canvas.line(self.px0 - 3, py, self.px0, py, FG);
            let label = format_tick(ty);
            canvas.text(self.px0 - 6 - text_width(&label), py - 3, &label, FG);
        }
        canvas.line(self.px0, self.py0, self.px0 + self.pw, self.py0, FG);
        canvas.line(self.px0, self.py0, self.px0, self.py0 - self.ph, FG);
        canvas.line(self.px0, self.py0 - self.ph, self.px0 + self.pw, self.py0 - self.ph, FG);
        canvas.line(self.px0 + self.pw, self.py0, self.px0 + self.pw, self.py0 - self.ph, FG);
        let cw = canvas.width as i64;
        canvas.text(cw / 2 - text_width(title) / 2, 8, title, FG);
        canvas.text(
            cw / 2 - text_width(x_label) / 2,
            self.py0 + 20,
            x_label,
            FG,
        );
        canvas.text(4, 8, y_label, FG);
    }

    /// Polyline through the finite points of a series; non-finite (or, on a
    /// log axis, non-positive) values break the line.
    fn polyline(&self, canvas: &mut Canvas, xs: &[f64], ys: &[f64], c: [u8; 3]) {
        let mut last: Option<(i64, i64)> = None;
        for (&x, &y) in xs.iter().zip(ys) {
            if !x.is_finite() || !y.is_finite() || (self.log_y && y <= 0.0) {
                last = None;
                continue;
            }
            let p = self.map(x, y);
            if let Some(q) = last {
                canvas.line(q.0, q.1, p.0, p.1, c);
            } else {
                canvas.set(p.0, p.1, c);
            }
            last = Some(p);
        }
    }
}

/// Tick positions on the 1–2–5 ladder covering `[lo, hi]`.
fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let span = hi - lo;
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= target as f64 + 0.5)
        .unwrap_or(10.0 * mag);
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + step * 1e-9 {
        // Snap near-zero accumulations to exactly zero for clean labels.
        ticks.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    ticks
}

/// Decade ticks for a log₁₀ axis.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let (l0, l1) = (lo.log10().ceil() as i32, hi.log10().floor() as i32);
    (l0..=l1).map(|k| 10f64.powi(k)).collect()
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 10000.0 || a < 1e-3 {
        format!("{v:.1e}").replacen(".0e", "e", 1)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn finite_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut r: Option<(f64, f64)> = None;
    for v in values.filter(|v| v.is_finite()) {
        r = Some(match r {
            None => (v, v),
            Some((lo, hi)) => (lo.min(v), hi.max(v)),
        });
    }
    r
}

/// Widens a degenerate or tight range so it is drawable.
fn pad_range((lo, hi): (f64, f64), log: bool) -> (f64, f64) {
    if log {
        // Guaranteed positive by the caller; widen by a factor.
        return (lo / 1.5, hi * 1.5);
    }
    if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        let pad = lo.abs() * 0.05 + 1e-9;
        (lo - pad, hi + pad)
    }
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

/// One labelled line in a multi-series chart.
pub struct LineSeries {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

const CHART_W: usize = 760;
const CHART_H: usize = 520;

fn series_color(i: usize) -> [u8; 3] {
    PALETTE[i % PALETTE.len()]
}

fn draw_legend(canvas: &mut Canvas, labels: &[&str]) {
    let x = canvas.width as i64 - MARGIN_RIGHT - 14
        - labels.iter().map(|l| text_width(l)).max().unwrap_or(0);
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_TOP + 6 + i as i64 * 11;
        canvas.line(x, y + 3, x + 10, y + 3, series_color(i));
        canvas.text(x + 14, y, label, FG);
    }
}

/// Multi-series line chart. With `log_y` the y-axis is log₁₀ and
/// non-positive values are omitted.
pub fn multi_line(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[LineSeries],
    log_y: bool,
) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("chart needs at least one series".into()));
    }
    for s in series {
        if s.xs.len() != s.ys.len() {
            return Err(Error::InvalidArgument(format!(
                "series {:?} has {} x values but {} y values",
                s.label,
                s.xs.len(),
                s.ys.len()
            )));
        }
    }
    let xr = finite_range(series.iter().flat_map(|s| s.xs.iter().copied()))
        .ok_or_else(|| Error::InvalidArgument("no finite x values to plot".into()))?;
    let ys = series
        .iter()
        .flat_map(|s| s.ys.iter().copied())
        .filter(|&y| !log_y || y > 0.0);
    let yr = finite_range(ys)
        .ok_or_else(|| Error::InvalidArgument("no plottable y values".into()))?;
    let mut canvas = Canvas::new(CHART_W, CHART_H);
    let axes = Axes::new(&canvas, pad_range(xr, false), pad_range(yr, log_y), log_y);
    axes.draw_frame(&mut canvas, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        axes.polyline(&mut canvas, &s.xs, &s.ys, series_color(i));
    }
    let labels: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    draw_legend(&mut canvas, &labels);
    canvas.save_png(path)
}

/// Single series with symmetric vertical error bars (mean ± err).
pub fn error_bar_line(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    xs: &[f64],
    ys: &[f64],
    errs: &[f64],
) -> Result<()> {
    if xs.is_empty() || xs.len() != ys.len() || xs.len() != errs.len() {
        return Err(Error::InvalidArgument(
            "error-bar chart needs equal-length, non-empty x/y/err".into(),
        ));
    }
    let xr = finite_range(xs.iter().copied())
        .ok_or_else(|| Error::InvalidArgument("no finite x values to plot".into()))?;
    let lo = ys.iter().zip(errs).map(|(y, e)| y - e);
    let hi = ys.iter().zip(errs).map(|(y, e)| y + e);
    let yr = finite_range(lo.chain(hi))
        .ok_or_else(|| Error::InvalidArgument("no plottable y values".into()))?;
    let mut canvas = Canvas::new(CHART_W, CHART_H);
    let axes = Axes::new(&canvas, pad_range(xr, false), pad_range(yr, false), false);
    axes.draw_frame(&mut canvas, title, x_label, y_label);
    let c = series_color(0);
    axes.polyline(&mut canvas, xs, ys, c);
    for ((&x, &y), &e) in xs.iter().zip(ys).zip(errs) {
        if !(x.is_finite() && y.is_finite() && e.is_finite()) {
            continue;
        }
        let (px, p_lo) = axes.map(x, y - e);
        let (_, p_hi) = axes.map(x, y + e);
        canvas.line(px, p_lo, px, p_hi, c);
        canvas.line(px - 3, p_lo, px + 3, p_lo, c);
        canvas.line(px - 3, p_hi, px + 3, p_hi, c);
        canvas.fill_rect(px - 1, axes.map(x, y).1 - 1, 3, 3, c);
    }
    canvas.save_png(path)
}

/// Violin plot: per group, a mirrored kernel-density outline (Silverman
/// bandwidth) with a horizontal mean tick. Groups with fewer than two
/// distinct values degrade to a plain tick.
pub fn violins(
    path: &Path,
    title: &str,
    y_label: &str,
    groups: &[(String, Vec<f64>)],
) -> Result<()> {
    if groups.is_empty() || groups.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidArgument(
            "violin plot needs at least one non-empty group".into(),
        ));
    }
    let yr = finite_range(groups.iter().flat_map(|(_, v)| v.iter().copied()))
        .ok_or_else(|| Error::InvalidArgument("no finite values to plot".into()))?;
    let mut canvas = Canvas::new(CHART_W, CHART_H);
    let g = groups.len() as i64;
    let axes = Axes::new(
        &canvas,
        (0.0, g as f64),
        pad_range(yr, false),
        false,
    );
    axes.draw_frame(&mut canvas, title, "", y_label);
    // The frame's x ticks are meaningless here; paint group names instead.
    canvas.fill_rect(0, axes.py0 + 5, canvas.width as i64, 12, BG);
    let slot = axes.pw / g;
    let half_max = (slot as f64 * 0.42).max(3.0);
    for (i, (name, values)) in groups.iter().enumerate() {
        let color = series_color(i);
        let cx = axes.px0 + slot * i as i64 + slot / 2;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let distinct = values.iter().any(|&v| v != values[0]);
        if distinct {
            let bw = silverman_bandwidth(values);
            let kde = gaussian_kde(values, bw).expect("non-empty finite group");
            let peak = kde.density.iter().cloned().fold(0.0, f64::max);
            for (s, d) in kde.support.iter().zip(&kde.density) {
                if *s < axes.y_range.0 || *s > axes.y_range.1 {
                    continue;
                }
                let (_, py) = axes.map(0.0, *s);
                let hw = (d / peak * half_max).round() as i64;
                canvas.line(cx - hw, py, cx + hw, py, color);
            }
        }
        let (_, py) = axes.map(0.0, mean);
        canvas.line(cx - half_max as i64, py, cx + half_max as i64, py, FG);
        canvas.text(cx - text_width(name) / 2, axes.py0 + 7, name, FG);
    }
    canvas.save_png(path)
}

/// Linear three-stop colormap from dark violet to yellow.
fn colormap(t: f64) -> [u8; 3] {
    let stops: [(f64, [f64; 3]); 3] = [
        (0.0, [68.0, 1.0, 84.0]),
        (0.5, [33.0, 145.0, 140.0]),
        (1.0, [253.0, 231.0, 37.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let (a, b) = if t < 0.5 { (stops[0], stops[1]) } else { (stops[1], stops[2]) };
    let f = (t - a.0) / (b.0 - a.0);
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (a.1[k] + f * (b.1[k] - a.1[k])).round() as u8;
    }
    c
}

/// Heatmap of a row-major scalar field with a labelled colorbar. Cells are
/// scaled to integer pixels so small fields stay visible.
pub fn heatmap(path: &Path, title: &str, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if rows == 0 || cols == 0 || values.len() != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "heatmap needs rows*cols values, got {} for {rows}x{cols}",
            values.len()
        )));
    }
    let (lo, hi) = finite_range(values.iter().copied())
        .ok_or_else(|| Error::InvalidArgument("no finite values to plot".into()))?;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = (480 / cols.max(rows)).clamp(1, 8) as i64;
    let (fw, fh) = (cell * cols as i64, cell * rows as i64);
    let bar_w: i64 = 14;
    let pad: i64 = 10;
    let width = (pad * 3 + fw + bar_w + 56) as usize;
    let height = (pad * 2 + fh.max(120) + 18) as usize;
    let mut canvas = Canvas::new(width, height);
    canvas.text(pad, 2, title, FG);
    let oy = pad + 8;
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let color = if v.is_finite() {
                colormap((v - lo) / span)
            } else {
                [160, 160, 160]
            };
            canvas.fill_rect(
                pad + c as i64 * cell,
                oy + r as i64 * cell,
                cell,
                cell,
                color,
            );
        }
    }
    // Colorbar, max at the top.
    let bx = pad * 2 + fw;
    let bh = fh.max(120);
    for i in 0..bh {
        let t = 1.0 - i as f64 / (bh - 1) as f64;
        canvas.fill_rect(bx, oy + i, bar_w, 1, colormap(t));
    }
    canvas.text(bx + bar_w + 4, oy, &format_tick(hi), FG);
    canvas.text(bx + bar_w + 4, oy + bh - 7, &format_tick(lo), FG);
    canvas.save_png(path)
}
