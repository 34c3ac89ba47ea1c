//! Minimal static charts drawn straight into PNG files. Series colours
//! follow [`PALETTE`] in the order the series appear in the matching CSV.

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 720;
const HEIGHT: u32 = 440;
const MARGIN: i64 = 48;

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

pub struct Series {
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    img: RgbImage,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let mut f = Self { img: RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255])), x, y };
        let (w, h) = (WIDTH as i64, HEIGHT as i64);
        for k in 0..=4 {
            let py = MARGIN + (h - 2 * MARGIN) * k / 4;
            f.line((MARGIN, py), (w - MARGIN, py), [225, 225, 225], 1);
        }
        f.line((MARGIN, h - MARGIN), (w - MARGIN, h - MARGIN), [0, 0, 0], 1);
        f.line((MARGIN, MARGIN), (MARGIN, h - MARGIN), [0, 0, 0], 1);
        f
    }

    fn px(&self, x: f64, y: f64) -> (i64, i64) {
        let (w, h) = ((WIDTH as i64 - 2 * MARGIN) as f64, (HEIGHT as i64 - 2 * MARGIN) as f64);
        let fx = if self.x.1 > self.x.0 { (x - self.x.0) / (self.x.1 - self.x.0) } else { 0.5 };
        let fy = if self.y.1 > self.y.0 { (y - self.y.0) / (self.y.1 - self.y.0) } else { 0.5 };
        (MARGIN + (fx * w).round() as i64, HEIGHT as i64 - MARGIN - (fy * h).round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn rect(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        for x in x0.min(x1)..=x0.max(x1) {
            for y in y0.min(y1)..=y0.max(y1) {
                self.put(x, y, c);
            }
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3], width: i64) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=steps {
            let x = x0 + (x1 - x0) * s / steps;
            let y = y0 + (y1 - y0) * s / steps;
            self.rect((x - width / 2, y - width / 2), (x + (width - 1) / 2, y + (width - 1) / 2), c);
        }
    }

    fn tick_x(&mut self, x: f64) {
        let (px, py) = self.px(x, self.y.0);
        self.line((px, py), (px, py + 5), [0, 0, 0], 1);
    }

    fn save(self, path: &Path) -> Result<()> {
        self.img.save(path).with_context(|| format!("writing {}", path.display()))
    }
}

fn range(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0 };
    (lo - pad, hi + pad)
}

/// One polyline with square markers per series; non-finite points are skipped.
pub fn line_chart(path: &Path, series: &[Series]) -> Result<()> {
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let x = range(all().map(|p| p.0), false);
    let y = range(all().map(|p| p.1), false);
    let mut f = Frame::new(x, y);
    for (px, _) in all() {
        f.tick_x(px);
    }
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        let pts: Vec<(i64, i64)> =
            s.points.iter().filter(|p| p.1.is_finite()).map(|&(a, b)| f.px(a, b)).collect();
        for w in pts.windows(2) {
            f.line(w[0], w[1], c, 2);
        }
        for &(a, b) in &pts {
            f.rect((a - 3, b - 3), (a + 3, b + 3), c);
        }
    }
    f.save(path)
}

/// Grouped bars: `series[i].points[k].1` is the bar of series `i` in group `k`.
pub fn bar_chart(path: &Path, groups: usize, series: &[Series]) -> Result<()> {
    let y = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), true);
    let mut f = Frame::new((0.0, groups.max(1) as f64), y);
    let n = series.len().max(1) as f64;
    for (i, s) in series.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        for (k, &(_, v)) in s.points.iter().enumerate().take(groups) {
            if !v.is_finite() {
                continue;
            }
            let left = k as f64 + 0.1 + 0.8 * i as f64 / n;
            let right = left + 0.8 / n - 0.02;
            let a = f.px(left, 0.0);
            let b = f.px(right, v);
            f.rect(a, b, c);
        }
    }
    let zero = f.px(0.0, 0.0).1;
    f.line((MARGIN, zero), (WIDTH as i64 - MARGIN, zero), [0, 0, 0], 1);
    f.save(path)
}
