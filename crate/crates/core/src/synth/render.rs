//! Anti-aliased rasterization of subjects over procedural gray backgrounds.

use image::{Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::Latent;

use super::spec::{BackgroundClass, ShapeClass, SubjectSpec, ViewParams};

const SUPERSAMPLE: usize = 4;
pub const PLAIN_GRAY: f32 = 0.82;
pub const GRADIENT_RANGE: (f32, f32) = (0.35, 0.95);
pub const NOISE_RANGE: (f32, f32) = (0.3, 0.95);
pub const CHECKER_CELL: usize = 4;
pub const CHECKER_LEVELS: (f32, f32) = (0.4, 0.9);
const STRIPE_DARKEN: f32 = 0.6;

const SQUARE_HALF: f32 = std::f32::consts::FRAC_1_SQRT_2;
const CROSS_HALF_WIDTH: f32 = 0.3;
const STAR_INNER: f32 = 0.45;
const RING_INNER: f32 = 0.6;

fn cross_arm() -> f32 {
    (1.0 - CROSS_HALF_WIDTH * CROSS_HALF_WIDTH).sqrt()
}

/// Area of the unit-radius shape; multiply by `R^2`.
pub fn unit_area(shape: ShapeClass) -> f32 {
    use std::f32::consts::PI;
    match shape {
        ShapeClass::Circle => PI,
        ShapeClass::Square => 4.0 * SQUARE_HALF * SQUARE_HALF,
        ShapeClass::Triangle => 3.0 * 3f32.sqrt() / 4.0,
        ShapeClass::Star => 5.0 * STAR_INNER * (PI / 5.0).sin(),
        ShapeClass::Cross => {
            let (w, l) = (CROSS_HALF_WIDTH, cross_arm());
            8.0 * w * l - 4.0 * w * w
        }
        ShapeClass::Ring => PI * (1.0 - RING_INNER * RING_INNER),
    }
}

/// Membership test in the subject frame, unit bounding radius.
pub fn inside(shape: ShapeClass, x: f32, y: f32) -> bool {
    let r2 = x * x + y * y;
    match shape {
        ShapeClass::Circle => r2 <= 1.0,
        ShapeClass::Ring => (RING_INNER * RING_INNER..=1.0).contains(&r2),
        ShapeClass::Square => x.abs() <= SQUARE_HALF && y.abs() <= SQUARE_HALF,
        ShapeClass::Cross => {
            let (w, l) = (CROSS_HALF_WIDTH, cross_arm());
            (x.abs() <= w && y.abs() <= l) || (y.abs() <= w && x.abs() <= l)
        }
        ShapeClass::Triangle => {
            // Vertex up (negative y is up in image coordinates); inradius 1/2.
            [90f32, 210.0, 330.0].iter().all(|&deg| {
                let a = (deg + 180.0).to_radians();
                x * a.cos() - y * a.sin() <= 0.5
            })
        }
        ShapeClass::Star => in_star(x, y),
    }
}

fn in_star(x: f32, y: f32) -> bool {
    let verts: Vec<(f32, f32)> = (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { 1.0 } else { STAR_INNER };
            let a = (90.0 + 36.0 * i as f32).to_radians();
            (r * a.cos(), -r * a.sin())
        })
        .collect();
    let mut inside = false;
    let mut j = verts.len() - 1;
    for i in 0..verts.len() {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Returns `(hue degrees, saturation, value)`.
pub fn rgb_to_hsv(rgb: [f32; 3]) -> (f32, f32, f32) {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    (h, s, max)
}

/// Center and radius in pixels for a view.
pub fn placement(spec: &SubjectSpec, view: &ViewParams, size: usize) -> (f32, f32, f32) {
    let half = size as f32 / 2.0;
    let radius = spec.scale * half;
    let margin = (half - radius).max(0.0);
    let tx = view.translation.0.clamp(-1.0, 1.0);
    let ty = view.translation.1.clamp(-1.0, 1.0);
    (half + tx * margin, half + ty * margin, radius)
}

/// Gray background in [0, 1], row-major `size x size`.
pub fn background(class: BackgroundClass, seed: u64, size: usize) -> Vec<f32> {
    let mut out = vec![0.0; size * size];
    match class {
        BackgroundClass::Plain => out.fill(PLAIN_GRAY),
        BackgroundClass::Gradient => {
            let (lo, hi) = GRADIENT_RANGE;
            for r in 0..size {
                let f = if size > 1 { r as f32 / (size - 1) as f32 } else { 0.0 };
                out[r * size..(r + 1) * size].fill(lo + (hi - lo) * f);
            }
        }
        BackgroundClass::NoiseField => {
            // Bilinear value noise on a 4x4 lattice of cells.
            let cells = 4usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = NOISE_RANGE;
            let lattice: Vec<f32> = (0..(cells + 1) * (cells + 1))
                .map(|_| lo + (hi - lo) * rng.random::<f32>())
                .collect();
            let scale = cells as f32 / size as f32;
            for r in 0..size {
                for c in 0..size {
                    let (fy, fx) = ((r as f32 + 0.5) * scale, (c as f32 + 0.5) * scale);
                    let (y0, x0) = ((fy as usize).min(cells - 1), (fx as usize).min(cells - 1));
                    let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
                    let at = |y: usize, x: usize| lattice[y * (cells + 1) + x];
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                    let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                    out[r * size + c] = top * (1.0 - ty) + bottom * ty;
                }
            }
        }
        BackgroundClass::Checker => {
            for r in 0..size {
                for c in 0..size {
                    let odd = (r / CHECKER_CELL + c / CHECKER_CELL) % 2 == 1;
                    out[r * size + c] = if odd { CHECKER_LEVELS.1 } else { CHECKER_LEVELS.0 };
                }
            }
        }
    }
    out
}

/// Separated render: unpremultiplied subject colour, coverage and background.
#[derive(Clone, Debug, PartialEq)]
pub struct Layers {
    pub size: usize,
    pub color: Vec<[f32; 3]>,
    pub alpha: Vec<f32>,
    pub background: Vec<f32>,
}

impl Layers {
    /// Subject over its own background, or over a constant gray `fill`.
    pub fn composite(&self, fill: Option<f32>) -> Vec<[f32; 3]> {
        self.color
            .iter()
            .zip(&self.alpha)
            .zip(&self.background)
            .map(|((col, &a), &bg)| {
                let bg = fill.unwrap_or(bg);
                [0, 1, 2].map(|k| a * col[k] + (1.0 - a) * bg)
            })
            .collect()
    }

    /// Latent in [-1, 1] without 8-bit quantization.
    pub fn to_latent(&self, fill: Option<f32>) -> Latent {
        let data = self
            .composite(fill)
            .into_iter()
            .flat_map(|p| p.map(|v| 2.0 * v - 1.0))
            .collect();
        Latent::from_raw(self.size, self.size, 3, data)
    }

    pub fn to_image(&self, fill: Option<f32>) -> RgbaImage {
        let rgb = self.composite(fill);
        let mut img = RgbaImage::new(self.size as u32, self.size as u32);
        for (i, (p, &a)) in rgb.iter().zip(&self.alpha).enumerate() {
            let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            img.put_pixel(
                (i % self.size) as u32,
                (i / self.size) as u32,
                Rgba([q(p[0]), q(p[1]), q(p[2]), q(a)]),
            );
        }
        img
    }
}

pub fn render_layers(spec: &SubjectSpec, view: &ViewParams, size: usize) -> Layers {
    let (cx, cy, radius) = placement(spec, view, size);
    let (sin, cos) = view.rotation.to_radians().sin_cos();
    let base = hsv_to_rgb(spec.hue, spec.saturation, spec.value);
    let dark = hsv_to_rgb(spec.hue, spec.saturation, spec.value * STRIPE_DARKEN);
    let stripe = spec.texture.map(|t| {
        let (s, c) = t.angle.to_radians().sin_cos();
        (t.frequency, c, s)
    });

    let n = size * size;
    let mut color = vec![[0.0f32; 3]; n];
    let mut alpha = vec![0.0f32; n];
    let inv = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for r in 0..size {
        for c in 0..size {
            let mut hits = 0usize;
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = c as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32;
                    let py = r as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32;
                    let (dx, dy) = ((px - cx) / radius, (py - cy) / radius);
                    // Into the subject frame: undo the view rotation.
                    let (ux, uy) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                    if !inside(spec.shape, ux, uy) {
                        continue;
                    }
                    hits += 1;
                    let col = match stripe {
                        Some((f, ca, sa)) => {
                            let u = ux * ca + uy * sa;
                            if (std::f32::consts::PI * f * u).sin() < 0.0 {
                                dark
                            } else {
                                base
                            }
                        }
                        None => base,
                    };
                    for k in 0..3 {
                        acc[k] += col[k];
                    }
                }
            }
            let i = r * size + c;
            alpha[i] = hits as f32 * inv;
            if hits > 0 {
                color[i] = acc.map(|v| v / hits as f32);
            }
        }
    }
    Layers {
        size,
        color,
        alpha,
        background: background(view.background, view.background_seed, size),
    }
}

/// RGB composited over the view's background; alpha is the subject coverage.
pub fn render_view(spec: &SubjectSpec, view: &ViewParams, size: usize) -> RgbaImage {
    render_layers(spec, view, size).to_image(None)
}

/// Binary silhouette (coverage >= 1/2) of the shape centred at `(cx, cy)`.
pub fn silhouette(shape: ShapeClass, radius: f32, rotation: f32, cx: f32, cy: f32, size: usize) -> Vec<bool> {
    let (sin, cos) = rotation.to_radians().sin_cos();
    let mut out = vec![false; size * size];
    let half = (SUPERSAMPLE * SUPERSAMPLE) / 2;
    for r in 0..size {
        for c in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = c as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32;
                    let py = r as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32;
                    let (dx, dy) = ((px - cx) / radius, (py - cy) / radius);
                    if inside(shape, cos * dx + sin * dy, -sin * dx + cos * dy) {
                        hits += 1;
                    }
                }
            }
            out[r * size + c] = hits >= half;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::spec::{sample_spec, sample_view};

    #[test]
    fn coverage_matches_analytic_area() {
        for shape in ShapeClass::ALL {
            for &scale in &[0.4f32, 0.65, 0.9] {
                let spec = SubjectSpec {
                    shape,
                    hue: 10.0,
                    saturation: 0.8,
                    value: 0.9,
                    texture: None,
                    scale,
                };
                let size = 48;
                let layers = render_layers(
                    &spec,
                    &ViewParams {
                        rotation: 17.0,
                        ..ViewParams::canonical()
                    },
                    size,
                );
                let area: f32 = layers.alpha.iter().sum();
                let r = scale * size as f32 / 2.0;
                let want = unit_area(shape) * r * r;
                assert!((area / want - 1.0).abs() < 0.10, "{shape} at {scale}: {area} vs {want}");
            }
        }
    }

    #[test]
    fn full_turn_is_identity() {
        for seed in 0..20 {
            let spec = sample_spec(seed);
            let mut view = sample_view(seed);
            view.rotation = 0.0;
            let a = render_view(&spec, &view, 24);
            view.rotation = 360.0;
            assert_eq!(a, render_view(&spec, &view, 24));
        }
    }

    #[test]
    fn subject_stays_inside_panel() {
        for seed in 0..200 {
            let spec = sample_spec(seed);
            let view = sample_view(seed + 1000);
            let (cx, cy, r) = placement(&spec, &view, 24);
            assert!(cx - r >= -1e-4 && cx + r <= 24.0 + 1e-4);
            assert!(cy - r >= -1e-4 && cy + r <= 24.0 + 1e-4);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for h in (0..360).step_by(17) {
            let rgb = hsv_to_rgb(h as f32, 0.7, 0.8);
            let (h2, s2, v2) = rgb_to_hsv(rgb);
            assert!((h2 - h as f32).abs() < 1e-3 && (s2 - 0.7).abs() < 1e-5 && (v2 - 0.8).abs() < 1e-6);
        }
    }

    #[test]
    fn backgrounds_are_gray_and_in_range() {
        for class in BackgroundClass::ALL {
            let bg = background(class, 3, 24);
            assert!(bg.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert_eq!(
            background(BackgroundClass::NoiseField, 3, 24),
            background(BackgroundClass::NoiseField, 3, 24)
        );
        assert_ne!(
            background(BackgroundClass::NoiseField, 3, 24),
            background(BackgroundClass::NoiseField, 4, 24)
        );
    }

    #[test]
    fn segmented_fill_replaces_background_only() {
        let spec = sample_spec(1);
        let layers = render_layers(&spec, &sample_view(2), 24);
        let white = layers.composite(Some(1.0));
        for (i, &a) in layers.alpha.iter().enumerate() {
            if a == 0.0 {
                assert_eq!(white[i], [1.0; 3]);
            }
            if a == 1.0 {
                assert_eq!(white[i], layers.composite(None)[i]);
            }
        }
    }
}
