//! Spatial resamplers.
//!
//! Lanczos-3 builds the dataset pyramids; adaptive max-pooling and
//! Catmull-Rom bicubic interpolation shrink frozen teacher feature maps to
//! the student's spatial size for the hint loss. All three act per channel
//! on the last two axes, use half-pixel-centred coordinates and clamp
//! out-of-range taps to the nearest edge pixel.

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Result};
use crate::tensor::{Scalar, Tensor};

const LANCZOS_A: f64 = 3.0;
const CUBIC_A: f64 = -0.5;

/// Which teacher-map resizers feed the hint loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMode {
    /// Logits-only distillation; no hint term.
    None,
    /// Adaptive max-pooling.
    Mp,
    /// Bicubic interpolation.
    Int,
    /// Both, with the two hint losses averaged.
    MpAndInt,
}

impl ResizeMode {
    pub const ALL: [ResizeMode; 4] = [ResizeMode::None, ResizeMode::Mp, ResizeMode::Int, ResizeMode::MpAndInt];

    pub fn active(self) -> &'static [Resizer] {
        match self {
            ResizeMode::None => &[],
            ResizeMode::Mp => &[Resizer::MaxPool],
            ResizeMode::Int => &[Resizer::Bicubic],
            ResizeMode::MpAndInt => &[Resizer::MaxPool, Resizer::Bicubic],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ResizeMode::None => "KD",
            ResizeMode::Mp => "KD+MP",
            ResizeMode::Int => "KD+INT",
            ResizeMode::MpAndInt => "KD+MP+INT",
        }
    }
}

impl std::str::FromStr for ResizeMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '+'], "_").as_str() {
            "none" | "kd" => Ok(ResizeMode::None),
            "mp" | "kd_mp" => Ok(ResizeMode::Mp),
            "int" | "kd_int" => Ok(ResizeMode::Int),
            "mp_and_int" | "mp_int" | "kd_mp_int" => Ok(ResizeMode::MpAndInt),
            other => Err(crate::Error::Config(format!("unknown resize mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resizer {
    MaxPool,
    Bicubic,
}

/// Resized teacher maps, one per active resizer, each shaped like the
/// student map.
#[derive(Clone, Debug, PartialEq)]
pub struct MapPair<S> {
    pub resized_teacher_maps: Vec<Tensor<S>>,
    pub student_shape: Vec<usize>,
}

/// Source taps of one output coordinate.
#[derive(Clone, Debug)]
struct Taps {
    index: Vec<usize>,
    weight: Vec<f64>,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub(crate) fn lanczos_kernel(x: f64) -> f64 {
    if x.abs() < LANCZOS_A {
        sinc(x) * sinc(x / LANCZOS_A)
    } else {
        0.0
    }
}

pub(crate) fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

fn clamp_index(j: i64, n: usize) -> usize {
    j.clamp(0, n as i64 - 1) as usize
}

/// Lanczos taps, widened by the downscale factor so the filter also acts as
/// the anti-aliasing low-pass. Weights are normalized to sum to one.
fn lanczos_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    let support = scale.max(1.0);
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let lo = (center - LANCZOS_A * support).floor() as i64;
            let hi = (center + LANCZOS_A * support).ceil() as i64;
            let mut taps = Taps {
                index: Vec::new(),
                weight: Vec::new(),
            };
            for j in lo..=hi {
                let w = lanczos_kernel((j as f64 - center) / support);
                if w != 0.0 {
                    taps.index.push(clamp_index(j, in_len));
                    taps.weight.push(w);
                }
            }
            let total: f64 = taps.weight.iter().sum();
            taps.weight.iter_mut().for_each(|w| *w /= total);
            taps
        })
        .collect()
}

fn cubic_taps(in_len: usize, out_len: usize) -> Vec<Taps> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let base = center.floor() as i64;
            let mut taps = Taps {
                index: Vec::with_capacity(4),
                weight: Vec::with_capacity(4),
            };
            for j in base - 1..=base + 2 {
                taps.index.push(clamp_index(j, in_len));
                taps.weight.push(cubic_kernel(j as f64 - center));
            }
            taps
        })
        .collect()
}

fn planes(shape: &[usize], op: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [.., h, w] if shape.len() >= 3 => Ok((shape[..shape.len() - 2].iter().product(), *h, *w)),
        _ => Err(shape_err!("{op} expects [..., C, H, W], got {shape:?}")),
    }
}

fn out_shape(shape: &[usize], out_h: usize, out_w: usize) -> Vec<usize> {
    let mut s = shape[..shape.len() - 2].to_vec();
    s.extend([out_h, out_w]);
    s
}

fn check_out(out_h: usize, out_w: usize, op: &str) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(domain_err!("{op}: output size {out_h}x{out_w} is empty"));
    }
    Ok(())
}

fn separable<S: Scalar>(
    input: &Tensor<S>,
    rows: &[Taps],
    cols: &[Taps],
    clamp: Option<(f64, f64)>,
) -> Result<Tensor<S>> {
    let (n_planes, h, w) = planes(input.shape(), "resize")?;
    let (out_h, out_w) = (rows.len(), cols.len());
    let mut out = Vec::with_capacity(n_planes * out_h * out_w);
    let mut tmp = vec![0.0f64; h * out_w];
    for plane in input.data().chunks(h * w) {
        for y in 0..h {
            let src = &plane[y * w..(y + 1) * w];
            for (x, taps) in cols.iter().enumerate() {
                tmp[y * out_w + x] = taps
                    .index
                    .iter()
                    .zip(&taps.weight)
                    .map(|(&j, &wt)| src[j].to_f64_lossy() * wt)
                    .sum();
            }
        }
        for taps in rows {
            for x in 0..out_w {
                let mut v: f64 = taps
                    .index
                    .iter()
                    .zip(&taps.weight)
                    .map(|(&j, &wt)| tmp[j * out_w + x] * wt)
                    .sum();
                if let Some((lo, hi)) = clamp {
                    v = v.clamp(lo, hi);
                }
                out.push(S::from_f64_lossy(v));
            }
        }
    }
    Tensor::new(out_shape(input.shape(), out_h, out_w), out)
}

/// Lanczos-3 resampling of an image with values in `[0, 1]`; the result is
/// clamped back into that range.
pub fn lanczos_resize<S: Scalar>(image: &Tensor<S>, out_h: usize, out_w: usize) -> Result<Tensor<S>> {
    check_out(out_h, out_w, "lanczos_resize")?;
    let (_, h, w) = planes(image.shape(), "lanczos_resize")?;
    separable(
        image,
        &lanczos_taps(h, out_h),
        &lanczos_taps(w, out_w),
        Some((0.0, 1.0)),
    )
}

/// Catmull-Rom bicubic resampling (no clamping, no anti-aliasing).
pub fn bicubic_resize<S: Scalar>(map: &Tensor<S>, out_h: usize, out_w: usize) -> Result<Tensor<S>> {
    check_out(out_h, out_w, "bicubic_resize")?;
    let (_, h, w) = planes(map.shape(), "bicubic_resize")?;
    separable(map, &cubic_taps(h, out_h), &cubic_taps(w, out_w), None)
}

/// Start/end of pooling region `r` of `out` regions over `len` inputs.
pub(crate) fn pool_region(r: usize, len: usize, out: usize) -> (usize, usize) {
    (r * len / out, (r + 1) * len / out)
}

/// Partitions each plane into `out_h × out_w` contiguous regions and takes
/// each region's maximum. Works for non-integer size ratios.
pub fn adaptive_max_pool<S: Scalar>(map: &Tensor<S>, out_h: usize, out_w: usize) -> Result<Tensor<S>> {
    check_out(out_h, out_w, "adaptive_max_pool")?;
    let (_, h, w) = planes(map.shape(), "adaptive_max_pool")?;
    if out_h > h || out_w > w {
        return Err(domain_err!("adaptive_max_pool cannot grow {h}x{w} to {out_h}x{out_w}"));
    }
    let mut out = Vec::new();
    for plane in map.data().chunks(h * w) {
        for r in 0..out_h {
            let (y0, y1) = pool_region(r, h, out_h);
            for c in 0..out_w {
                let (x0, x1) = pool_region(c, w, out_w);
                let mut m = plane[y0 * w + x0];
                for y in y0..y1 {
                    for &v in &plane[y * w + x0..y * w + x1] {
                        if v > m {
                            m = v;
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(out_shape(map.shape(), out_h, out_w), out)
}

/// Applies every resizer active in `mode` to the teacher map, producing maps
/// whose shape equals `student_shape` exactly.
pub fn resize_teacher_maps<S: Scalar>(
    teacher_map: &Tensor<S>,
    student_shape: &[usize],
    mode: ResizeMode,
) -> Result<MapPair<S>> {
    if mode == ResizeMode::None {
        return Err(domain_err!("resize_teacher_maps called with mode NONE"));
    }
    let t = teacher_map.shape();
    if t.len() != student_shape.len() || t.len() < 3 || t[..t.len() - 2] != student_shape[..t.len() - 2] {
        return Err(shape_err!(
            "teacher map {t:?} and student map {student_shape:?} differ outside the spatial axes"
        ));
    }
    let (sh, sw) = (student_shape[t.len() - 2], student_shape[t.len() - 1]);
    let (th, tw) = (t[t.len() - 2], t[t.len() - 1]);
    if sh > th || sw > tw {
        return Err(domain_err!(
            "student map {sh}x{sw} is larger than teacher map {th}x{tw}"
        ));
    }
    let resized = mode
        .active()
        .iter()
        .map(|r| match r {
            Resizer::MaxPool => adaptive_max_pool(teacher_map, sh, sw),
            Resizer::Bicubic => bicubic_resize(teacher_map, sh, sw),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MapPair {
        resized_teacher_maps: resized,
        student_shape: student_shape.to_vec(),
    })
}
