use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Online augmentation settings: colour jitter half-ranges, flip
/// probability and the allowed right-angle rotations (degrees).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    pub flip_prob: f64,
    pub rotations: Vec<u16>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            hue: 0.05,
            flip_prob: 0.5,
            rotations: vec![0, 90, 180, 270],
        }
    }
}

impl AugmentConfig {
    /// No-op augmentation.
    pub fn identity() -> Self {
        AugmentConfig {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            flip_prob: 0.0,
            rotations: vec![0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [self.brightness, self.contrast, self.saturation, self.hue];
        if ranges.iter().any(|r| !(*r >= 0.0)) || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("invalid augmentation ranges {self:?}")));
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|r| r % 90 != 0 || *r >= 360) {
            return Err(Error::Config(
                "rotations must be non-empty multiples of 90 below 360".into(),
            ));
        }
        Ok(())
    }
}

/// One draw of augmentation parameters. Drawing once and applying to every
/// magnification of a sample keeps paired views geometrically aligned.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue_shift: f32,
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, half: f64) -> f32 {
    if half > 0.0 {
        rng.random_range(-half..=half) as f32
    } else {
        0.0
    }
}

impl AugmentParams {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let brightness = 1.0 + jitter(rng, cfg.brightness);
        let contrast = 1.0 + jitter(rng, cfg.contrast);
        let saturation = 1.0 + jitter(rng, cfg.saturation);
        let hue_shift = jitter(rng, cfg.hue);
        let hflip = rng.random_bool(cfg.flip_prob);
        let vflip = rng.random_bool(cfg.flip_prob);
        let rot = cfg.rotations[rng.random_range(0..cfg.rotations.len())];
        AugmentParams {
            brightness,
            contrast,
            saturation,
            hue_shift,
            hflip,
            vflip,
            quarter_turns: (rot / 90) as u8,
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        let [c, h, w] = image.shape()[..] else {
            panic!("augment expects [3,H,W]");
        };
        assert_eq!(c, 3, "augment expects RGB");
        let n = h * w;
        let mut px: Vec<[f32; 3]> = (0..n)
            .map(|i| [image.data()[i], image.data()[n + i], image.data()[2 * n + i]])
            .collect();
        let colour = self.brightness != 1.0 || self.contrast != 1.0 || self.saturation != 1.0 || self.hue_shift != 0.0;
        if colour {
            colour_jitter(&mut px, self);
        }
        let (mut oh, mut ow) = (h, w);
        if self.hflip || self.vflip || !self.quarter_turns.is_multiple_of(4) {
            let mut grid = px;
            if self.hflip {
                grid = (0..n).map(|i| grid[(i / w) * w + (w - 1 - i % w)]).collect();
            }
            if self.vflip {
                grid = (0..n).map(|i| grid[(h - 1 - i / w) * w + i % w]).collect();
            }
            for _ in 0..self.quarter_turns % 4 {
                // 90° counter-clockwise: new[r][c] = old[c][W-1-r], new dims W×H.
                let (nh, nw) = (ow, oh);
                grid = (0..n)
                    .map(|i| {
                        let (r, c) = (i / nw, i % nw);
                        grid[c * ow + (ow - 1 - r)]
                    })
                    .collect();
                oh = nh;
                ow = nw;
            }
            px = grid;
        }
        let mut data = vec![0.0f32; 3 * n];
        for (i, p) in px.iter().enumerate() {
            for ch in 0..3 {
                data[ch * n + i] = p[ch].clamp(0.0, 1.0);
            }
        }
        Tensor::new(vec![3, oh, ow], data).expect("same element count")
    }
}

fn gray(p: &[f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn colour_jitter(px: &mut [[f32; 3]], a: &AugmentParams) {
    for p in px.iter_mut() {
        for v in p.iter_mut() {
            *v = (*v * a.brightness).clamp(0.0, 1.0);
        }
    }
    let mean = px.iter().map(gray).sum::<f32>() / px.len() as f32;
    for p in px.iter_mut() {
        for v in p.iter_mut() {
            *v = (mean + (*v - mean) * a.contrast).clamp(0.0, 1.0);
        }
    }
    for p in px.iter_mut() {
        let g = gray(p);
        for v in p.iter_mut() {
            *v = (g + (*v - g) * a.saturation).clamp(0.0, 1.0);
        }
    }
    if a.hue_shift != 0.0 {
        for p in px.iter_mut() {
            let (h, s, v) = rgb_to_hsv(*p);
            *p = hsv_to_rgb((h + a.hue_shift).rem_euclid(1.0), s, v);
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> (f32, f32, f32) {
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

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i32).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Samples parameters from `cfg` and applies them.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    AugmentParams::sample(cfg, rng).apply(image)
}
