//! Toy identity and condition-alignment scores for generated panels.
//!
//! Identity = 0.5 hue-histogram intersection + 0.3 best silhouette IoU
//! + 0.2 stripe-energy match, each against the spec's canonical render.

use image::RgbImage;

use crate::condition::Condition;
use crate::error::{Error, Result};

use super::render::{background, render_layers, rgb_to_hsv, silhouette};
use super::spec::{BackgroundClass, SubjectSpec, ViewParams};

pub const HUE_BINS: usize = 12;
pub const SUBJECT_MIN_SATURATION: f32 = 0.3;
pub const SUBJECT_MIN_VALUE: f32 = 0.2;
/// Fewer subject pixels than this counts as a blank panel.
pub const MIN_SUBJECT_PIXELS: usize = 6;
pub const IOU_ROTATION_STEP: f32 = 15.0;
pub const IOU_OFFSETS: [i32; 3] = [-2, 0, 2];
const TEXTURE_EPS: f32 = 0.01;
const CORE_SATURATION_FRACTION: f32 = 0.9;
const GRAY_BINS: usize = 10;
const GRADIENT_WEIGHT: f32 = 10.0;
const ALIGNMENT_TEMPERATURE: f32 = 0.1;
const REFERENCE_SEEDS: u64 = 8;
const FLAT_STEP: f32 = 0.01;

/// HSV pixels of a square panel plus the subject mask.
#[derive(Clone, Debug)]
pub struct PanelAnalysis {
    pub size: usize,
    pub hsv: Vec<(f32, f32, f32)>,
    pub mask: Vec<bool>,
}

impl PanelAnalysis {
    pub fn from_rgb(pixels: &[[f32; 3]], size: usize) -> Self {
        let hsv: Vec<_> = pixels.iter().map(|&p| rgb_to_hsv(p)).collect();
        let mask = hsv
            .iter()
            .map(|&(_, s, v)| s >= SUBJECT_MIN_SATURATION && v >= SUBJECT_MIN_VALUE)
            .collect();
        Self { size, hsv, mask }
    }

    pub fn from_image(img: &RgbImage) -> Result<Self> {
        if img.width() != img.height() {
            return Err(Error::shape(format!(
                "panel must be square, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let px: Vec<[f32; 3]> = img.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect();
        Ok(Self::from_rgb(&px, img.width() as usize))
    }

    pub fn subject_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Saturation-weighted hue histogram with linear soft binning, normalised.
    pub fn hue_histogram(&self) -> [f32; HUE_BINS] {
        let mut h = [0.0f32; HUE_BINS];
        let width = 360.0 / HUE_BINS as f32;
        for (&(hue, s, _), &m) in self.hsv.iter().zip(&self.mask) {
            if !m {
                continue;
            }
            let pos = hue / width - 0.5;
            let lo = pos.floor();
            let frac = pos - lo;
            let i = (lo as i32).rem_euclid(HUE_BINS as i32) as usize;
            h[i] += s * (1.0 - frac);
            h[(i + 1) % HUE_BINS] += s * frac;
        }
        let total: f32 = h.iter().sum();
        if total > 0.0 {
            h.iter_mut().for_each(|v| *v /= total);
        }
        h
    }

    /// Interior subject pixels whose saturation is close to the subject median.
    /// Anti-aliased rims mix with gray and drop out; stripe boundaries keep
    /// their saturation and stay in.
    fn core(&self) -> Vec<bool> {
        let mut sats: Vec<f32> = self
            .hsv
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&(_, s, _), _)| s)
            .collect();
        if sats.is_empty() {
            return vec![false; self.mask.len()];
        }
        sats.sort_by(f32::total_cmp);
        let cut = CORE_SATURATION_FRACTION * sats[sats.len() / 2];
        let n = self.size;
        let sat: Vec<bool> = self
            .hsv
            .iter()
            .zip(&self.mask)
            .map(|(&(_, s, _), &m)| m && s >= cut)
            .collect();
        (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                sat[i]
                    && r > 0
                    && c > 0
                    && r + 1 < n
                    && c + 1 < n
                    && self.mask[i - n]
                    && self.mask[i + n]
                    && self.mask[i - 1]
                    && self.mask[i + 1]
            })
            .collect()
    }

    /// Mean absolute value step between neighbouring core subject pixels.
    pub fn texture_energy(&self) -> f32 {
        let n = self.size;
        let core = self.core();
        let (mut sum, mut count) = (0.0f32, 0usize);
        for r in 0..n {
            for c in 0..n {
                let i = r * n + c;
                if !core[i] {
                    continue;
                }
                let v = self.hsv[i].2;
                if c + 1 < n && core[i + 1] {
                    sum += (self.hsv[i + 1].2 - v).abs();
                    count += 1;
                }
                if r + 1 < n && core[i + n] {
                    sum += (self.hsv[i + n].2 - v).abs();
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f32
        }
    }

    fn centroid(&self) -> (f32, f32) {
        let (mut sx, mut sy, mut k) = (0.0f32, 0.0f32, 0.0f32);
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                sx += (i % self.size) as f32 + 0.5;
                sy += (i / self.size) as f32 + 0.5;
                k += 1.0;
            }
        }
        (sx / k, sy / k)
    }
}

pub fn histogram_intersection(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum::<f32>().clamp(0.0, 1.0)
}

fn iou_shifted(mask: &[bool], sil: &[bool], n: usize, dx: i32, dy: i32) -> f32 {
    let (mut inter, mut union) = (0usize, 0usize);
    for r in 0..n as i32 {
        for c in 0..n as i32 {
            let a = mask[(r * n as i32 + c) as usize];
            let (sr, sc) = (r - dy, c - dx);
            let b = sr >= 0 && sc >= 0 && sr < n as i32 && sc < n as i32 && sil[(sr * n as i32 + sc) as usize];
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f32 / union as f32
    }
}

/// Best IoU of the panel mask against the spec's silhouette centred on the
/// mask centroid, over rotations every 15 degrees within the shape's period
/// and pixel offsets in {-2, 0, 2}^2.
pub fn best_silhouette_iou(panel: &PanelAnalysis, spec: &SubjectSpec) -> f32 {
    if panel.subject_pixels() == 0 {
        return 0.0;
    }
    let n = panel.size;
    let (cx, cy) = panel.centroid();
    let radius = spec.scale * n as f32 / 2.0;
    let period = 360.0 / spec.shape.symmetry() as f32;
    let mut best = 0.0f32;
    let mut rot = 0.0f32;
    while rot < period.max(IOU_ROTATION_STEP) - 1e-3 {
        let sil = silhouette(spec.shape, radius, rot, cx, cy, n);
        for &dy in &IOU_OFFSETS {
            for &dx in &IOU_OFFSETS {
                best = best.max(iou_shifted(&panel.mask, &sil, n, dx, dy));
            }
        }
        rot += IOU_ROTATION_STEP;
    }
    best
}

fn texture_match(a: f32, b: f32) -> f32 {
    (a.min(b) + TEXTURE_EPS) / (a.max(b) + TEXTURE_EPS)
}

/// Reference statistics of the canonical render.
pub struct IdentityReference {
    hist: [f32; HUE_BINS],
    energy: f32,
    spec: SubjectSpec,
}

impl IdentityReference {
    pub fn new(spec: &SubjectSpec, size: usize) -> Self {
        let layers = render_layers(spec, &ViewParams::canonical(), size);
        let canon = PanelAnalysis::from_rgb(&layers.composite(None), size);
        Self {
            hist: canon.hue_histogram(),
            energy: canon.texture_energy(),
            spec: *spec,
        }
    }

    pub fn score(&self, panel: &PanelAnalysis) -> f32 {
        if panel.subject_pixels() < MIN_SUBJECT_PIXELS {
            return 0.0;
        }
        let hue = histogram_intersection(&panel.hue_histogram(), &self.hist);
        let iou = best_silhouette_iou(panel, &self.spec);
        let tex = texture_match(panel.texture_energy(), self.energy);
        (0.5 * hue + 0.3 * iou + 0.2 * tex).clamp(0.0, 1.0)
    }
}

/// Identity score in [0, 1]; a panel without subject pixels scores 0.
pub fn identity_score(panel: &RgbImage, spec: &SubjectSpec) -> Result<f32> {
    let analysis = PanelAnalysis::from_image(panel)?;
    Ok(IdentityReference::new(spec, analysis.size).score(&analysis))
}

#[derive(Clone, Debug, PartialEq)]
struct BackgroundFeatures {
    hist: [f32; GRAY_BINS],
    gx: f32,
    gy: f32,
    /// Fraction of neighbour pairs that are (nearly) equal, per axis.
    flat_x: f32,
    flat_y: f32,
}

impl BackgroundFeatures {
    fn distance(&self, other: &Self) -> f32 {
        let h: f32 = self.hist.iter().zip(&other.hist).map(|(a, b)| (a - b).abs()).sum();
        0.5 * h
            + GRADIENT_WEIGHT * ((self.gx - other.gx).abs() + (self.gy - other.gy).abs())
            + (self.flat_x - other.flat_x).abs()
            + (self.flat_y - other.flat_y).abs()
    }
}

fn background_features(gray: &[f32], usable: &[bool], n: usize) -> BackgroundFeatures {
    let mut hist = [0.0f32; GRAY_BINS];
    let mut count = 0.0f32;
    for (&v, &u) in gray.iter().zip(usable) {
        if u {
            hist[((v.clamp(0.0, 1.0) * GRAY_BINS as f32) as usize).min(GRAY_BINS - 1)] += 1.0;
            count += 1.0;
        }
    }
    if count > 0.0 {
        hist.iter_mut().for_each(|h| *h /= count);
    }
    let (mut gx, mut nx, mut gy, mut ny) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
    let (mut fx, mut fy) = (0.0f32, 0.0f32);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            if !usable[i] {
                continue;
            }
            if c + 1 < n && usable[i + 1] {
                let d = (gray[i + 1] - gray[i]).abs();
                gx += d;
                fx += (d < FLAT_STEP) as u8 as f32;
                nx += 1.0;
            }
            if r + 1 < n && usable[i + n] {
                let d = (gray[i + n] - gray[i]).abs();
                gy += d;
                fy += (d < FLAT_STEP) as u8 as f32;
                ny += 1.0;
            }
        }
    }
    BackgroundFeatures {
        hist,
        gx: if nx > 0.0 { gx / nx } else { 0.0 },
        gy: if ny > 0.0 { gy / ny } else { 0.0 },
        flat_x: if nx > 0.0 { fx / nx } else { 0.0 },
        flat_y: if ny > 0.0 { fy / ny } else { 0.0 },
    }
}

fn class_reference(class: BackgroundClass, n: usize) -> BackgroundFeatures {
    let usable = vec![true; n * n];
    let seeds = if class == BackgroundClass::NoiseField {
        REFERENCE_SEEDS
    } else {
        1
    };
    let mut acc = BackgroundFeatures {
        hist: [0.0; GRAY_BINS],
        gx: 0.0,
        gy: 0.0,
        flat_x: 0.0,
        flat_y: 0.0,
    };
    for seed in 0..seeds {
        let f = background_features(&background(class, seed, n), &usable, n);
        acc.hist
            .iter_mut()
            .zip(&f.hist)
            .for_each(|(a, b)| *a += b / seeds as f32);
        acc.gx += f.gx / seeds as f32;
        acc.gy += f.gy / seeds as f32;
        acc.flat_x += f.flat_x / seeds as f32;
        acc.flat_y += f.flat_y / seeds as f32;
    }
    acc
}

/// Posterior-style weight of each background class for the panel's
/// non-subject pixels, in [`BackgroundClass::ALL`] order.
pub fn background_class_weights(panel: &PanelAnalysis) -> [f32; 4] {
    let n = panel.size;
    // Drop the subject and a one-pixel rim around it.
    let mut usable = vec![true; n * n];
    for r in 0..n {
        for c in 0..n {
            if panel.mask[r * n + c] {
                for (dr, dc) in [(0i32, 0i32), (-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (rr, cc) = (r as i32 + dr, c as i32 + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < n && (cc as usize) < n {
                        usable[rr as usize * n + cc as usize] = false;
                    }
                }
            }
        }
    }
    if usable.iter().filter(|&&u| u).count() < n * n / 10 {
        usable = panel.mask.iter().map(|&m| !m).collect();
    }
    let gray: Vec<f32> = panel.hsv.iter().map(|&(_, _, v)| v).collect();
    let feats = background_features(&gray, &usable, n);
    let logits = BackgroundClass::ALL.map(|c| -feats.distance(&class_reference(c, n)) / ALIGNMENT_TEMPERATURE);
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps = logits.map(|l| (l - max).exp());
    let sum: f32 = exps.iter().sum();
    exps.map(|e| e / sum)
}

/// How strongly the panel's background matches the requested class. A
/// condition without a background request is trivially aligned.
pub fn condition_alignment(panel: &RgbImage, cond: &Condition) -> Result<f32> {
    let analysis = PanelAnalysis::from_image(panel)?;
    Ok(match cond.background {
        Some(b) => background_class_weights(&analysis)[b.index()],
        None => 1.0,
    })
}
