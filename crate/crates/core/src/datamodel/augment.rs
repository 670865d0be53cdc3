//! Training-time augmentation.
//!
//! Geometric transforms (scale, zoom, rotation, horizontal flip) are composed
//! into one inverse map and applied identically to the image (bilinear) and
//! both label maps (nearest). Photometric transforms touch the image only.

use image::{GrayImage, Rgb, RgbImage};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{BACKGROUND, NO_CORROSION};
use super::sample::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    pub scale_range: (f64, f64),
    pub zoom_range: (f64, f64),
    /// Rotation is drawn from `[-rotation_deg, rotation_deg]`.
    pub rotation_deg: f64,
    pub hflip_prob: f64,
    /// Side of the Gaussian blur kernel; 1 disables blurring.
    pub noise_kernel: usize,
    /// Fractional gain bounds for hue, saturation and value.
    pub hsv_jitter: [f64; 3],
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            scale_range: (0.75, 1.25),
            zoom_range: (0.75, 1.25),
            rotation_deg: 10.0,
            hflip_prob: 0.5,
            noise_kernel: 5,
            hsv_jitter: [0.015, 0.4, 0.3],
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// Configuration under which [`augment`] returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            scale_range: (1.0, 1.0),
            zoom_range: (1.0, 1.0),
            rotation_deg: 0.0,
            hflip_prob: 0.0,
            noise_kernel: 1,
            hsv_jitter: [0.0; 3],
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        let mut id = Self::identity();
        id.seed = self.seed;
        *self == id
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("augmentation: {m}")));
        for (name, (lo, hi)) in [
            ("scale_range", self.scale_range),
            ("zoom_range", self.zoom_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return bad(&format!(
                    "{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                ));
            }
        }
        if !(self.rotation_deg >= 0.0 && self.rotation_deg.is_finite()) {
            return bad("rotation_deg must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad("hflip_prob must lie in [0, 1]");
        }
        if self.noise_kernel == 0 || self.noise_kernel.is_multiple_of(2) {
            return bad("noise_kernel must be odd and >= 1");
        }
        if self.hsv_jitter.iter().any(|d| !(0.0..1.0).contains(d)) {
            return bad("hsv_jitter deltas must lie in [0, 1)");
        }
        Ok(())
    }

    /// Generator for one sample in one epoch, derived only from the global
    /// seed, the sample id and the epoch.
    pub fn rng_for(&self, sample_id: &str, epoch: u64) -> ChaCha8Rng {
        let mut seed = stable_hash(sample_id.as_bytes()) ^ self.seed.rotate_left(17);
        seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ epoch;
        ChaCha8Rng::seed_from_u64(seed)
    }
}

/// FNV-1a; stable across platforms and compiler versions.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Output-to-source affine map about the image centre.
#[derive(Debug, Clone, Copy)]
struct InverseMap {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    inv_scale: f64,
    tx: f64,
    ty: f64,
    flip: bool,
}

impl InverseMap {
    /// Source position (continuous pixel coordinates, pixel `i` spans
    /// `[i, i + 1)`) of the centre of output pixel `(x, y)`.
    fn source(&self, x: u32, y: u32) -> (f64, f64) {
        let dx = (x as f64 + 0.5 - self.cx - self.tx) * self.inv_scale;
        let dy = (y as f64 + 0.5 - self.cy - self.ty) * self.inv_scale;
        // undo rotation
        let rx = self.cos * dx + self.sin * dy;
        let ry = -self.sin * dx + self.cos * dy;
        let rx = if self.flip { -rx } else { rx };
        (self.cx + rx, self.cy + ry)
    }

    fn is_identity(&self) -> bool {
        !self.flip
            && self.sin == 0.0
            && self.cos == 1.0
            && self.inv_scale == 1.0
            && self.tx == 0.0
            && self.ty == 0.0
    }
}

/// Applies a randomly drawn augmentation to `sample`. The output keeps the
/// input size; pixels mapped from outside the source are black in the image,
/// background in the element map and no-corrosion in the defect map.
pub fn augment(sample: &Sample, cfg: &AugmentationConfig, rng: &mut impl Rng) -> Result<Sample> {
    cfg.validate()?;
    sample.validate()?;
    let (w, h) = sample.dimensions();

    let scale = uniform(rng, cfg.scale_range.0, cfg.scale_range.1);
    let zoom = uniform(rng, cfg.zoom_range.0, cfg.zoom_range.1);
    let angle = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg).to_radians();
    let flip = cfg.hflip_prob > 0.0 && rng.gen_bool(cfg.hflip_prob);
    // random placement of the rescaled canvas (crop when larger, pad when smaller)
    let slack_x = (w as f64 * (scale - 1.0)).abs() / 2.0;
    let slack_y = (h as f64 * (scale - 1.0)).abs() / 2.0;
    let tx = uniform(rng, -slack_x, slack_x);
    let ty = uniform(rng, -slack_y, slack_y);

    let map = InverseMap {
        cx: w as f64 / 2.0,
        cy: h as f64 / 2.0,
        cos: angle.cos(),
        sin: angle.sin(),
        inv_scale: 1.0 / (scale * zoom),
        tx,
        ty,
        flip,
    };

    let (image, element_map, defect_map) = if map.is_identity() {
        (
            sample.image.clone(),
            sample.element_map.clone(),
            sample.defect_map.clone(),
        )
    } else {
        warp(sample, &map)
    };

    let mut image = image;
    if cfg.noise_kernel > 1 && rng.gen_bool(0.5) {
        let sigma = uniform(rng, 0.1, 0.3 * cfg.noise_kernel as f64);
        image = gaussian_blur(&image, cfg.noise_kernel, sigma);
    }
    if cfg.hsv_jitter.iter().any(|&d| d > 0.0) {
        let gains = [
            uniform(rng, 1.0 - cfg.hsv_jitter[0], 1.0 + cfg.hsv_jitter[0]),
            uniform(rng, 1.0 - cfg.hsv_jitter[1], 1.0 + cfg.hsv_jitter[1]),
            uniform(rng, 1.0 - cfg.hsv_jitter[2], 1.0 + cfg.hsv_jitter[2]),
        ];
        hsv_gain(&mut image, gains);
    }

    Ok(Sample {
        id: sample.id.clone(),
        image,
        element_map,
        defect_map,
    })
}

fn warp(sample: &Sample, map: &InverseMap) -> (RgbImage, GrayImage, GrayImage) {
    let (w, h) = sample.dimensions();
    let mut image = RgbImage::new(w, h);
    let mut element = GrayImage::from_pixel(w, h, image::Luma([BACKGROUND]));
    let mut defect = GrayImage::from_pixel(w, h, image::Luma([NO_CORROSION]));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map.source(x, y);
            let (nx, ny) = (sx.floor(), sy.floor());
            if nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64 {
                let (nx, ny) = (nx as u32, ny as u32);
                element.put_pixel(x, y, *sample.element_map.get_pixel(nx, ny));
                defect.put_pixel(x, y, *sample.defect_map.get_pixel(nx, ny));
            }
            image.put_pixel(x, y, sample_bilinear(&sample.image, sx - 0.5, sy - 0.5));
        }
    }
    (image, element, defect)
}

/// Bilinear lookup at index-space position `(fx, fy)`; outside is black.
fn sample_bilinear(img: &RgbImage, fx: f64, fy: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = fx.floor() as i64;
    let y0 = fy.floor() as i64;
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let px = |x: i64, y: i64, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            img.get_pixel(x as u32, y as u32)[c] as f64
        }
    };
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = px(x0, y0, c) + ax * (px(x0 + 1, y0, c) - px(x0, y0, c));
        let bottom = px(x0, y0 + 1, c) + ax * (px(x0 + 1, y0 + 1, c) - px(x0, y0 + 1, c));
        *o = (top + ay * (bottom - top)).round().clamp(0.0, 255.0) as u8;
    }
    Rgb(out)
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &RgbImage, kernel: usize, sigma: f64) -> RgbImage {
    let r = (kernel / 2) as i64;
    let mut weights: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let (w, h) = (img.width() as i64, img.height() as i64);
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut dst = vec![0.0; src.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for (k, wt) in weights.iter().enumerate() {
                        let o = k as i64 - r;
                        let (xx, yy) = if horizontal {
                            ((x + o).clamp(0, w - 1), y)
                        } else {
                            (x, (y + o).clamp(0, h - 1))
                        };
                        acc += wt * src[((yy * w + xx) * 3 + c as i64) as usize];
                    }
                    dst[((y * w + x) * 3 + c as i64) as usize] = acc;
                }
            }
        }
        dst
    };
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    let blurred = pass(&pass(&src, true), false);
    let raw = blurred
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_raw(img.width(), img.height(), raw).expect("same dimensions")
}

/// Multiplies hue, saturation and value by the given gains (hue wraps).
pub fn hsv_gain(img: &mut RgbImage, gains: [f64; 3]) {
    for px in img.pixels_mut() {
        let [r, g, b] = px.0.map(|v| v as f64 / 255.0);
        let (hue, sat, val) = rgb_to_hsv(r, g, b);
        let hue = (hue * gains[0]).rem_euclid(1.0);
        let sat = (sat * gains[1]).clamp(0.0, 1.0);
        let val = (val * gains[2]).clamp(0.0, 1.0);
        let (r, g, b) = hsv_to_rgb(hue, sat, val);
        px.0 = [r, g, b].map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
