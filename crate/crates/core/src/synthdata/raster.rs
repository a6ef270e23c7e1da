//! Anti-aliased stick-figure rendering into `[3, S, S]` u8 images.

use rand::Rng;

use super::skeleton::{bones, side, Side, NUM_JOINTS};

pub const LINE_RADIUS: f64 = 0.9;
pub const JOINT_RADIUS: f64 = 1.4;

/// Left limbs red, right limbs green, trunk and head blue.
fn colour(joint: usize) -> [f64; 3] {
    match side(joint) {
        Side::Left => [255.0, 40.0, 40.0],
        Side::Right => [40.0, 255.0, 40.0],
        Side::Centre => [60.0, 60.0, 255.0],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    pub pixels: Vec<u8>,
    pub size: usize,
}

impl Background {
    pub fn plain(size: usize) -> Self {
        Self {
            pixels: vec![0; 3 * size * size],
            size,
        }
    }

    /// Dim random rectangles; drawn under the figure.
    pub fn clutter<R: Rng>(size: usize, rng: &mut R) -> Self {
        let mut bg = Self::plain(size);
        let plane = size * size;
        for _ in 0..8 {
            let (x0, y0) = (rng.random_range(0..size), rng.random_range(0..size));
            let (w, h) = (rng.random_range(2..=size / 3), rng.random_range(2..=size / 3));
            let col: [u8; 3] = [rng.random_range(0..70), rng.random_range(0..70), rng.random_range(0..70)];
            for y in y0..(y0 + h).min(size) {
                for x in x0..(x0 + w).min(size) {
                    for (c, &v) in col.iter().enumerate() {
                        let p = &mut bg.pixels[c * plane + y * size + x];
                        *p = (*p).max(v);
                    }
                }
            }
        }
        bg
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (qx * qx + qy * qy).sqrt()
}

/// Coverage-weighted max compositing of one capsule; order independent.
fn draw_capsule(img: &mut [f64], size: usize, a: [f64; 2], b: [f64; 2], radius: f64, col: [f64; 3]) {
    let reach = radius + 0.5;
    let lo = |u: f64, v: f64| ((u.min(v) - reach).floor().max(0.0)) as usize;
    let hi = |u: f64, v: f64| ((u.max(v) + reach).ceil().min(size as f64)).max(0.0) as usize;
    let (x0, x1) = (lo(a[0], b[0]), hi(a[0], b[0]));
    let (y0, y1) = (lo(a[1], b[1]), hi(a[1], b[1]));
    let plane = size * size;
    for y in y0..y1 {
        for x in x0..x1 {
            let d = segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b);
            let cover = (reach - d).clamp(0.0, 1.0);
            if cover > 0.0 {
                for c in 0..3 {
                    let v = &mut img[c * plane + y * size + x];
                    *v = v.max(cover * col[c]);
                }
            }
        }
    }
}

/// Renders the joints in `pixels` (one entry per joint, or empty) on top of
/// `background`. Bones are drawn only when all 17 joints are present.
pub fn rasterize_frame(pixels: &[[f64; 2]], background: &Background) -> Vec<u8> {
    let size = background.size;
    let mut img: Vec<f64> = background.pixels.iter().map(|&v| v as f64).collect();
    if pixels.len() == NUM_JOINTS {
        for (p, j) in bones() {
            draw_capsule(&mut img, size, pixels[p], pixels[j], LINE_RADIUS, colour(j));
        }
    }
    for (j, &p) in pixels.iter().enumerate() {
        draw_capsule(&mut img, size, p, p, JOINT_RADIUS, colour(j));
    }
    img.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()
}
