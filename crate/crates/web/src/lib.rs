//! Browser bindings for three views of the library: a synthetic specimen
//! and its Lanczos pyramid, the temperature softmax with its soft loss, and
//! forward-pass cost against magnification.
//!
//! The plain functions return `Result<_, String>` so they run natively in
//! tests; the `#[wasm_bindgen]` wrappers convert errors to JS exceptions.

use wasm_bindgen::prelude::*;

use resdistill::data::{generate, level_side, Image, MagTag, SynthConfig};
use resdistill::model::{count_flops, ModelConfig};
use resdistill::resize::lanczos_resize;
use resdistill::tensor::{soft_loss, softmax_with_temperature, Tensor};

fn msg(e: resdistill::Error) -> String {
    e.to_string()
}

/// One synthetic image at full resolution.
#[wasm_bindgen]
pub struct Specimen {
    image: Image,
    label: usize,
    base: usize,
}

impl Specimen {
    pub fn generate(seed: u64, base: usize, pigment: f64, class: usize) -> Result<Specimen, String> {
        let cfg = SynthConfig {
            base_size: base,
            pigment,
            ..SynthConfig::default()
        };
        let cfg = SynthConfig {
            num_patients: cfg.classes,
            ..cfg
        };
        let rec = generate(&cfg, seed)
            .map_err(msg)?
            .into_iter()
            .find(|r| r.class_label == class)
            .ok_or_else(|| format!("class {class} out of range"))?;
        Ok(Specimen {
            image: rec.image,
            label: rec.class_label,
            base,
        })
    }

    /// The pyramid level at `mag` as row-major RGBA bytes.
    pub fn level(&self, mag: f64) -> Result<Vec<u8>, String> {
        let side = level_side(self.base, MagTag::new(mag).map_err(msg)?);
        let img = if side == self.base {
            self.image.clone()
        } else {
            lanczos_resize(&self.image, side, side).map_err(msg)?
        };
        Ok(rgba(&img))
    }
}

#[wasm_bindgen]
impl Specimen {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, base: usize, pigment: f64, class: usize) -> Result<Specimen, JsError> {
        Specimen::generate(seed, base, pigment, class).map_err(|e| JsError::new(&e))
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn side(&self, mag: f64) -> Result<usize, JsError> {
        let m = MagTag::new(mag).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(level_side(self.base, m))
    }

    pub fn rgba(&self, mag: f64) -> Result<Vec<u8>, JsError> {
        self.level(mag).map_err(|e| JsError::new(&e))
    }
}

fn rgba(img: &Image) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let d = img.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(plane * 4);
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

pub fn softmax_at(logits: &[f64], temperature: f64) -> Result<Vec<f64>, String> {
    let t = Tensor::new(vec![1, logits.len()], logits.to_vec()).map_err(msg)?;
    Ok(softmax_with_temperature(&t, temperature).map_err(msg)?.data().to_vec())
}

pub fn soft_loss_at(teacher: &[f64], student: &[f64], temperature: f64) -> Result<f64, String> {
    let t = Tensor::new(vec![1, teacher.len()], teacher.to_vec()).map_err(msg)?;
    let s = Tensor::new(vec![1, student.len()], student.to_vec()).map_err(msg)?;
    Ok(soft_loss(&t, &s, temperature).map_err(msg)?.data()[0])
}

/// GFLOPs of one forward pass at each magnification of a `base` image.
pub fn gflops_curve(widths: &[usize], base: usize, mags: &[f64]) -> Result<Vec<f64>, String> {
    let cfg = ModelConfig {
        stage_widths: widths.to_vec(),
        ..ModelConfig::default()
    };
    mags.iter()
        .map(|&m| {
            let side = level_side(base, MagTag::new(m).map_err(msg)?);
            Ok(count_flops(&cfg, side, side).map_err(msg)? as f64 / 1e9)
        })
        .collect()
}

#[wasm_bindgen]
pub fn softmax(logits: Vec<f64>, temperature: f64) -> Result<Vec<f64>, JsError> {
    softmax_at(&logits, temperature).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = softLoss)]
pub fn soft_loss_js(teacher: Vec<f64>, student: Vec<f64>, temperature: f64) -> Result<f64, JsError> {
    soft_loss_at(&teacher, &student, temperature).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = gflopsCurve)]
pub fn gflops_curve_js(widths: Vec<usize>, base: usize, mags: Vec<f64>) -> Result<Vec<f64>, JsError> {
    gflops_curve(&widths, base, &mags).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgba_layout() {
        let img = Tensor::new(vec![3, 1, 2], vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0]).unwrap();
        assert_eq!(rgba(&img), vec![0, 128, 255, 255, 255, 128, 0, 255]);
    }

    #[test]
    fn softmax_flattens_with_temperature() {
        let cold = softmax_at(&[2.0, 0.0, -1.0], 1.0).unwrap();
        let warm = softmax_at(&[2.0, 0.0, -1.0], 8.0).unwrap();
        assert!((cold.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(warm[0] < cold[0] && warm[2] > cold[2]);
    }
}
