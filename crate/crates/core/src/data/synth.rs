use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

/// Generator knobs. Periods are in base-image pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_patients: usize,
    pub classes: usize,
    pub base_size: usize,
    pub noise_sigma: f64,
    pub blob_period: f64,
    pub stripe_period: f64,
    pub stripe_amplitude: f64,
    /// Mean colour shift carried by striped regions, the only trace of the
    /// stripes that survives strong downsampling.
    pub pigment: f64,
    /// Half-range of the per-image additive colour offset.
    pub stain_jitter: f64,
    pub min_images_per_patient: usize,
    pub max_images_per_patient: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_patients: 60,
            classes: 3,
            base_size: 256,
            noise_sigma: 0.05,
            blob_period: 32.0,
            stripe_period: 3.0,
            stripe_amplitude: 0.14,
            pigment: 0.07,
            stain_jitter: 0.04,
            min_images_per_patient: 1,
            max_images_per_patient: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.classes) {
            return Err(Error::Config(format!(
                "synthetic data has 2 or 3 classes, got {}",
                self.classes
            )));
        }
        if self.num_patients < self.classes {
            return Err(Error::Config(format!(
                "{} patients cannot cover {} classes",
                self.num_patients, self.classes
            )));
        }
        if self.base_size < 8 {
            return Err(Error::Config(format!("base size {} too small", self.base_size)));
        }
        if self.min_images_per_patient == 0 || self.min_images_per_patient > self.max_images_per_patient {
            return Err(Error::Config("images per patient range is empty".into()));
        }
        let non_negative = [self.noise_sigma, self.stripe_amplitude, self.pigment, self.stain_jitter];
        if non_negative.iter().any(|v| !(*v >= 0.0)) || !(self.blob_period > 0.0 && self.stripe_period >= 2.0) {
            return Err(Error::Config(format!("invalid generator parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticRecord {
    pub id: String,
    pub patient_id: String,
    pub class_label: usize,
    pub image: Image,
}

/// Three texture classes: 0 coarse blobs, 1 blobs plus fine stripes,
/// 2 stripes only. Classes go round-robin over patients.
pub fn gen_synthetic_dataset(
    num_patients: usize,
    classes: usize,
    base_size: usize,
    seed: u64,
) -> Result<Vec<SyntheticRecord>> {
    generate(
        &SynthConfig {
            num_patients,
            classes,
            base_size,
            ..SynthConfig::default()
        },
        seed,
    )
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<SyntheticRecord>> {
    cfg.validate()?;
    let mut counts = seed::rng(seed, "synth/patients");
    let mut out = Vec::new();
    for p in 0..cfg.num_patients {
        let patient_id = format!("p{p:04}");
        let class = p % cfg.classes;
        let n = counts.random_range(cfg.min_images_per_patient..=cfg.max_images_per_patient);
        for k in 0..n {
            let id = format!("{patient_id}_{k}");
            let mut rng = seed::rng(seed, &format!("synth/image/{id}"));
            let image = render(cfg, class, &mut rng)?;
            out.push(SyntheticRecord {
                id,
                patient_id: patient_id.clone(),
                class_label: class,
                image,
            });
        }
    }
    Ok(out)
}

fn render<R: Rng>(cfg: &SynthConfig, class: usize, rng: &mut R) -> Result<Image> {
    use std::f32::consts::TAU;
    let n = cfg.base_size;
    let blobs = class != 2;
    let stripes = class != 0;

    let jitter = cfg.stain_jitter as f32;
    let mut background = [0.86f32, 0.74, 0.82];
    for b in background.iter_mut() {
        *b += if jitter > 0.0 {
            rng.random_range(-jitter..=jitter)
        } else {
            0.0
        };
    }

    let blob_amp: f32 = rng.random_range(0.5..0.9);
    let blob_colour = [0.30f32, 0.42, 0.18];
    let bp = cfg.blob_period as f32 * rng.random_range(0.9..1.1);
    let (bx, by): (f32, f32) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));

    let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let sphase: f32 = rng.random_range(0.0..TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let sp = cfg.stripe_period as f32;
    let ep = 1.4 * cfg.blob_period as f32;
    let (ex, ey): (f32, f32) = (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU));
    let stripe_colour = [1.0f32, 1.0, 1.0];
    // Zero-luminance direction, invisible to a luminance band-energy probe.
    let pigment_colour = [1.0f32, -0.62, 0.57];

    let noise = Normal::new(0.0f32, cfg.noise_sigma as f32).map_err(|e| Error::Config(e.to_string()))?;
    let amp_s = cfg.stripe_amplitude as f32;
    let pig = cfg.pigment as f32;
    let mut data = vec![0.0f32; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
            let mut px = background;
            if blobs {
                let b = ((TAU * xf / bp + bx).sin() * (TAU * yf / bp + by).sin()).max(0.0);
                for c in 0..3 {
                    px[c] -= blob_amp * b * blob_colour[c];
                }
            }
            if stripes {
                let e = 0.5 + 0.5 * (TAU * xf / ep + ex).sin() * (TAU * yf / ep + ey).sin();
                let s = (TAU * (xf * ct + yf * st) / sp + sphase).sin();
                for c in 0..3 {
                    px[c] += amp_s * e * s * stripe_colour[c] + pig * e * pigment_colour[c];
                }
            }
            let i = y * n + x;
            for c in 0..3 {
                data[c * n * n + i] = (px[c] + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, n, n], data)
}

/// Mean-square luminance energy in the coarse band (periods 16 to 64 base
/// pixels) and the fine band (periods 2 to 4.5 base pixels). `base_side` is
/// the side of the full-resolution image, so features at lower
/// magnifications refer to the same physical frequencies.
pub fn band_energy_features(image: &Image, base_side: usize) -> Result<[f64; 2]> {
    let [3, h, w] = image.shape()[..] else {
        return Err(crate::error::shape_err!("expected [3,H,W], got {:?}", image.shape()));
    };
    let d = image.data();
    let mut luma: Vec<Complex<f64>> = (0..h * w)
        .map(|i| {
            let y: f32 = (0..3).map(|c| LUMA[c] * d[c * h * w + i]).sum();
            Complex::new(y as f64, 0.0)
        })
        .collect();
    let mean = luma.iter().map(|c| c.re).sum::<f64>() / (h * w) as f64;
    luma.iter_mut().for_each(|c| c.re -= mean);

    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in luma.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = luma[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            luma[y * w + x] = col[y];
        }
    }

    let scale = base_side as f64 / w.max(h) as f64;
    let norm = ((h * w) as f64).powi(2);
    let mut bands = [0.0; 2];
    for ky in 0..h {
        let fy = signed_freq(ky, h);
        for kx in 0..w {
            let fx = signed_freq(kx, w);
            // cycles per base pixel
            let f = (fx * fx + fy * fy).sqrt() / scale;
            if f == 0.0 {
                continue;
            }
            let period = 1.0 / f;
            let power = luma[ky * w + kx].norm_sqr() / norm;
            if (16.0..=64.0).contains(&period) {
                bands[0] += power;
            } else if (2.0..=4.5).contains(&period) {
                bands[1] += power;
            }
        }
    }
    Ok(bands)
}

fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// Fixed two-threshold rule over [`band_energy_features`]: coarse energy
/// means blobs, fine energy means stripes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandEnergyOracle {
    pub coarse_threshold: f64,
    pub fine_threshold: f64,
}

impl Default for BandEnergyOracle {
    fn default() -> Self {
        BandEnergyOracle {
            coarse_threshold: 5e-4,
            fine_threshold: 1.5e-3,
        }
    }
}

impl BandEnergyOracle {
    pub fn classify(&self, features: [f64; 2]) -> usize {
        let blobs = features[0] > self.coarse_threshold;
        let stripes = features[1] > self.fine_threshold;
        match (blobs, stripes) {
            (true, false) => 0,
            (true, true) => 1,
            (false, _) => 2,
        }
    }

    pub fn predict(&self, image: &Image, base_side: usize) -> Result<usize> {
        Ok(self.classify(band_energy_features(image, base_side)?))
    }
}
