use std::f64::consts::TAU;

use rand::Rng;

use super::spec::{ShapeFamily, ShapeKind, TextureFamily, TextureKind};
use super::Mask;

/// HSV (hue in degrees, s and v in [0, 1]) to linear RGB in [0, 1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn jitter<R: Rng>(rng: &mut R, center_spread: [f64; 2]) -> f64 {
    center_spread[0] + uniform(rng, [-center_spread[1], center_spread[1]])
}

/// Render one instance of a texture family over a `size x size` canvas.
///
/// Periods are specified for a 32 pixel canvas and scaled with `size`.
pub fn render_texture<R: Rng>(family: &TextureFamily, size: usize, rng: &mut R) -> Vec<[f64; 3]> {
    let scale = size as f64 / 32.0;
    let hue = jitter(rng, family.hue);
    let sat = uniform(rng, family.saturation);
    let val = uniform(rng, family.value);
    let light = hsv_to_rgb(hue, sat, val);
    let dark = hsv_to_rgb(hue, sat, val * family.contrast);
    let pattern = pattern_fn(family.kind, size, scale, rng);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let p = pattern(x as f64 + 0.5, y as f64 + 0.5).clamp(0.0, 1.0);
            out.push([
                dark[0] + p * (light[0] - dark[0]),
                dark[1] + p * (light[1] - dark[1]),
                dark[2] + p * (light[2] - dark[2]),
            ]);
        }
    }
    out
}

type Pattern = Box<dyn Fn(f64, f64) -> f64>;

fn pattern_fn<R: Rng>(kind: TextureKind, size: usize, scale: f64, rng: &mut R) -> Pattern {
    match kind {
        TextureKind::Stripes { angle, period } => {
            let theta = (angle + rng.random_range(-8.0..8.0)).to_radians();
            let period = period * scale;
            let phase = rng.random_range(0.0..1.0);
            let (c, s) = (theta.cos(), theta.sin());
            Box::new(move |x, y| {
                let t = (x * c + y * s) / period + phase;
                0.5 + 1.5 * (TAU * t).sin()
            })
        }
        TextureKind::Checks { period } => {
            let period = period * scale;
            let ox = rng.random_range(0.0..period);
            let oy = rng.random_range(0.0..period);
            Box::new(move |x, y| {
                let i = ((x + ox) / period).floor() as i64 + ((y + oy) / period).floor() as i64;
                i.rem_euclid(2) as f64
            })
        }
        TextureKind::Noise { octaves, period } => {
            let layers: Vec<(f64, f64, usize, Vec<f64>)> = (0..octaves.max(1))
                .map(|o| {
                    let spacing = (period * scale / f64::from(1u32 << o)).max(1.0);
                    let cells = (size as f64 / spacing).ceil() as usize + 2;
                    let grid: Vec<f64> = (0..cells * cells).map(|_| rng.random_range(0.0..1.0)).collect();
                    (0.5f64.powi(o as i32), spacing, cells, grid)
                })
                .collect();
            let total: f64 = layers.iter().map(|l| l.0).sum();
            Box::new(move |x, y| {
                let mut acc = 0.0;
                for (w, spacing, cells, grid) in &layers {
                    let gx = x / spacing;
                    let gy = y / spacing;
                    let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                    let (fx, fy) = (gx - gx.floor(), gy - gy.floor());
                    let at = |i: usize, j: usize| grid[j.min(cells - 1) * cells + i.min(cells - 1)];
                    let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
                    let bot = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
                    acc += w * (top * (1.0 - fy) + bot * fy);
                }
                // Stretch the contrast; averaged value noise clusters around 0.5.
                0.5 + 2.2 * (acc / total - 0.5)
            })
        }
        TextureKind::Dots { period, radius } => {
            let period = period * scale;
            let radius = radius * scale;
            let ox = rng.random_range(0.0..period);
            let oy = rng.random_range(0.0..period);
            Box::new(move |x, y| {
                let dx = (x + ox).rem_euclid(period) - period / 2.0;
                let dy = (y + oy).rem_euclid(period) - period / 2.0;
                if dx * dx + dy * dy <= radius * radius {
                    0.0
                } else {
                    1.0
                }
            })
        }
        TextureKind::Rings { period } => {
            let period = period * scale;
            let cx = rng.random_range(0.0..size as f64);
            let cy = rng.random_range(0.0..size as f64);
            let phase = rng.random_range(0.0..1.0);
            Box::new(move |x, y| {
                let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                0.5 + 1.5 * (TAU * (r / period + phase)).sin()
            })
        }
    }
}

/// Outline vertices of one shape instance.
pub(crate) fn shape_vertices(kind: ShapeKind, cx: f64, cy: f64, radius: f64, rotation: f64) -> Vec<(f64, f64)> {
    let local: Vec<(f64, f64)> = match kind {
        ShapeKind::Polygon { sides, aspect } => (0..sides)
            .map(|i| {
                let a = TAU * f64::from(i) / f64::from(sides);
                (radius * a.cos(), aspect * radius * a.sin())
            })
            .collect(),
        ShapeKind::Star { points, inner } => (0..2 * points)
            .map(|i| {
                let a = TAU * f64::from(i) / f64::from(2 * points);
                let r = if i % 2 == 0 { radius } else { radius * inner };
                (r * a.cos(), r * a.sin())
            })
            .collect(),
    };
    let (c, s) = (rotation.cos(), rotation.sin());
    local
        .into_iter()
        .map(|(x, y)| (cx + x * c - y * s, cy + x * s + y * c))
        .collect()
}

fn inside(poly: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut odd = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            odd = !odd;
        }
        j = i;
    }
    odd
}

/// Rasterize a polygon at pixel centers into a hard mask.
pub(crate) fn rasterize(poly: &[(f64, f64)], size: usize) -> Mask {
    let mut mask = Mask::new(size);
    for y in 0..size {
        for x in 0..size {
            mask.data[y * size + x] = inside(poly, x as f64 + 0.5, y as f64 + 0.5);
        }
    }
    mask
}

/// Draw a random instance of `family`: returns its mask and fill color.
pub(crate) fn draw_shape<R: Rng>(family: &ShapeFamily, size: usize, rng: &mut R) -> (Mask, [f64; 3]) {
    let s = size as f64;
    let radius = uniform(rng, family.radius) * s;
    let margin = (radius * 0.8).min(s / 2.0 - 1.0);
    let cx = rng.random_range(margin..(s - margin).max(margin + 1e-9));
    let cy = rng.random_range(margin..(s - margin).max(margin + 1e-9));
    let rotation = rng.random_range(0.0..TAU);
    let poly = shape_vertices(family.kind, cx, cy, radius, rotation);
    let mask = rasterize(&poly, size);
    let color = hsv_to_rgb(
        jitter(rng, family.hue),
        uniform(rng, family.saturation),
        uniform(rng, family.value),
    );
    (mask, color)
}
