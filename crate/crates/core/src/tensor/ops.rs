//! Forward kernels (public, tape-free) and the matching backward kernels used
//! by [`super::Tape`].

use super::gemm::gemm;
use super::{s, Scalar, Tensor};
use crate::error::{domain_err, shape_err, Result};

/// Probability floor applied inside the KL divergence to keep `ln` finite.
pub const KL_PROB_FLOOR: f64 = 1e-12;

const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
    /// Whether the caller passed an unbatched `[C,H,W]` input.
    pub unbatched: bool,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], bias: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (batch, c_in, h, w, unbatched) = match *input {
            [c, h, w] => (1, c, h, w, true),
            [b, c, h, w] => (b, c, h, w, false),
            _ => return Err(shape_err!("conv2d input must be 3-D or 4-D, got {input:?}")),
        };
        let [c_out, wc_in, k, k2] = *weight else {
            return Err(shape_err!("conv2d weight must be 4-D, got {weight:?}"));
        };
        if k != k2 {
            return Err(shape_err!("conv2d kernel must be square, got {k}x{k2}"));
        }
        if wc_in != c_in {
            return Err(shape_err!(
                "conv2d input has {c_in} channels but weight expects {wc_in}"
            ));
        }
        if bias != [c_out] {
            return Err(shape_err!("conv2d bias {bias:?} for {c_out} output channels"));
        }
        if stride == 0 {
            return Err(domain_err!("conv2d stride must be positive"));
        }
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(domain_err!(
                "conv2d kernel {k} exceeds padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            ));
        }
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeom {
            batch,
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out,
            w_out,
            unbatched,
        })
    }

    fn out_shape(&self) -> Vec<usize> {
        if self.unbatched {
            vec![self.c_out, self.h_out, self.w_out]
        } else {
            vec![self.batch, self.c_out, self.h_out, self.w_out]
        }
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }

    /// A 1×1 stride-1 unpadded convolution reads its input directly as the
    /// column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<S: Scalar>(g: &ConvGeom, input: &[S], cols: &mut [S]) {
    let n = g.col_cols();
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(g: &ConvGeom, cols: &[S], dinput: &mut [S]) {
    let n = g.col_cols();
    for c in 0..g.c_in {
        let plane = &mut dinput[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over `[C_in,H,W]` or `[B,C_in,H,W]` input with a
/// square `[C_out,C_in,K,K]` kernel.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let g = ConvGeom::new(input.shape(), weight.shape(), bias.shape(), stride, padding)?;
    Tensor::new(
        g.out_shape(),
        conv2d_forward(&g, input.data(), weight.data(), bias.data()),
    )
}

pub(super) fn conv2d_forward<S: Scalar>(g: &ConvGeom, input: &[S], weight: &[S], bias: &[S]) -> Vec<S> {
    let (rows, n) = (g.col_rows(), g.col_cols());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * n;
    let mut out = vec![S::zero(); g.batch * out_stride];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![S::zero(); rows * n]
    };
    for b in 0..g.batch {
        let x = &input[b * in_stride..(b + 1) * in_stride];
        let y = &mut out[b * out_stride..(b + 1) * out_stride];
        for (co, chunk) in y.chunks_mut(n).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias[co]);
        }
        let col_src: &[S] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut cols);
            &cols
        };
        gemm(g.c_out, rows, n, weight, false, col_src, false, y, true);
    }
    out
}

pub(super) struct ConvGrads<S> {
    pub input: Option<Vec<S>>,
    pub weight: Option<Vec<S>>,
    pub bias: Option<Vec<S>>,
}

pub(super) fn conv2d_backward<S: Scalar>(
    g: &ConvGeom,
    input: &[S],
    weight: &[S],
    dout: &[S],
    want: [bool; 3],
) -> ConvGrads<S> {
    let (rows, n) = (g.col_rows(), g.col_cols());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * n;
    let mut dinput = want[0].then(|| vec![S::zero(); input.len()]);
    let mut dweight = want[1].then(|| vec![S::zero(); weight.len()]);
    let mut dbias = want[2].then(|| vec![S::zero(); g.c_out]);
    let mut cols = vec![S::zero(); if g.is_pointwise() { 0 } else { rows * n }];
    let mut dcols = vec![S::zero(); if want[0] { rows * n } else { 0 }];
    for b in 0..g.batch {
        let x = &input[b * in_stride..(b + 1) * in_stride];
        let dy = &dout[b * out_stride..(b + 1) * out_stride];
        if let Some(db) = dbias.as_mut() {
            for (co, chunk) in dy.chunks(n).enumerate() {
                db[co] = chunk.iter().fold(db[co], |acc, &v| acc + v);
            }
        }
        if let Some(dw) = dweight.as_mut() {
            let col_src: &[S] = if g.is_pointwise() {
                x
            } else {
                im2col(g, x, &mut cols);
                &cols
            };
            gemm(g.c_out, n, rows, dy, false, col_src, true, dw, true);
        }
        if let Some(dx) = dinput.as_mut() {
            let dx = &mut dx[b * in_stride..(b + 1) * in_stride];
            if g.is_pointwise() {
                gemm(rows, g.c_out, n, weight, true, dy, false, dx, true);
            } else {
                gemm(rows, g.c_out, n, weight, true, dy, false, &mut dcols, false);
                col2im(g, &dcols, dx);
            }
        }
    }
    ConvGrads {
        input: dinput,
        weight: dweight,
        bias: dbias,
    }
}

pub(super) fn linear_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize, usize)> {
    let [batch, d_in] = *input else {
        return Err(shape_err!("linear input must be [B, D_in], got {input:?}"));
    };
    let [d_out, w_in] = *weight else {
        return Err(shape_err!("linear weight must be [D_out, D_in], got {weight:?}"));
    };
    if w_in != d_in {
        return Err(shape_err!("linear input dim {d_in} vs weight dim {w_in}"));
    }
    if bias != [d_out] {
        return Err(shape_err!("linear bias {bias:?} for {d_out} outputs"));
    }
    Ok((batch, d_in, d_out))
}

/// Affine map `input · weightᵀ + bias`.
pub fn linear<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let (batch, d_in, d_out) = linear_dims(input.shape(), weight.shape(), bias.shape())?;
    Tensor::new(
        vec![batch, d_out],
        linear_forward(batch, d_in, d_out, input.data(), weight.data(), bias.data()),
    )
}

pub(super) fn linear_forward<S: Scalar>(batch: usize, d_in: usize, d_out: usize, x: &[S], w: &[S], b: &[S]) -> Vec<S> {
    let mut out: Vec<S> = (0..batch).flat_map(|_| b.iter().copied()).collect();
    gemm(batch, d_in, d_out, x, false, w, true, &mut out, true);
    out
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v > S::zero() { v } else { S::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub(super) fn nchw(shape: &[usize], op: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(shape_err!("{op} expects [B,C,H,W], got {shape:?}")),
    }
}

/// Per-channel spatial mean: `[B,C,H,W] -> [B,C]`.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let (b, c, h, w) = nchw(input.shape(), "global_avg_pool")?;
    let hw = h * w;
    let inv = s::<S>(1.0 / hw as f64);
    let data = input
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().fold(S::zero(), |acc, &v| acc + v) * inv)
        .collect();
    Tensor::new(vec![b, c], data)
}

pub(super) struct GroupNormSaved<S> {
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
}

pub(super) fn group_norm_forward<S: Scalar>(
    input: &Tensor<S>,
    num_groups: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> Result<(Tensor<S>, GroupNormSaved<S>)> {
    let (b, c, h, w) = nchw(input.shape(), "group_norm")?;
    if num_groups == 0 || c % num_groups != 0 {
        return Err(domain_err!(
            "group_norm: {c} channels not divisible into {num_groups} groups"
        ));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!(
            "group_norm affine params {:?}/{:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    let hw = h * w;
    let group_len = (c / num_groups) * hw;
    let x = input.data();
    let mut out = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut inv_std = vec![S::zero(); b * num_groups];
    for (gi, chunk) in x.chunks(group_len).enumerate() {
        let n = group_len as f64;
        let mean = chunk.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        let var = chunk
            .iter()
            .map(|v| {
                let d = v.to_f64_lossy() - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std[gi] = s(inv);
        let base = gi * group_len;
        let channel0 = (gi % num_groups) * (c / num_groups);
        for (j, &v) in chunk.iter().enumerate() {
            let ch = channel0 + j / hw;
            let xh = s::<S>((v.to_f64_lossy() - mean) * inv);
            xhat[base + j] = xh;
            out[base + j] = gamma.data()[ch] * xh + beta.data()[ch];
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        GroupNormSaved { xhat, inv_std },
    ))
}

/// Per-sample group normalization with population variance, then a
/// per-channel affine map. Independent of what else shares the batch.
pub fn group_norm<S: Scalar>(
    input: &Tensor<S>,
    num_groups: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> Result<Tensor<S>> {
    group_norm_forward(input, num_groups, gamma, beta, eps).map(|(t, _)| t)
}

pub(super) fn group_norm_backward<S: Scalar>(
    shape: &[usize],
    num_groups: usize,
    gamma: &[S],
    saved: &GroupNormSaved<S>,
    dout: &[S],
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let (_, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let cpg = c / num_groups;
    let group_len = cpg * hw;
    let mut dx = vec![S::zero(); dout.len()];
    let mut dgamma = vec![S::zero(); c];
    let mut dbeta = vec![S::zero(); c];
    for (gi, dy) in dout.chunks(group_len).enumerate() {
        let base = gi * group_len;
        let channel0 = (gi % num_groups) * cpg;
        let xhat = &saved.xhat[base..base + group_len];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..group_len {
            let ch = channel0 + j / hw;
            let dxh = (dy[j] * gamma[ch]).to_f64_lossy();
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat[j].to_f64_lossy();
            dgamma[ch] = dgamma[ch] + dy[j] * xhat[j];
            dbeta[ch] = dbeta[ch] + dy[j];
        }
        let n = group_len as f64;
        let inv = saved.inv_std[gi].to_f64_lossy();
        for j in 0..group_len {
            let ch = channel0 + j / hw;
            let dxh = (dy[j] * gamma[ch]).to_f64_lossy();
            let v = inv / n * (n * dxh - sum_dxhat - xhat[j].to_f64_lossy() * sum_dxhat_xhat);
            dx[base + j] = s(v);
        }
    }
    (dx, dgamma, dbeta)
}

fn last_dim(shape: &[usize], op: &str) -> Result<usize> {
    shape
        .last()
        .copied()
        .ok_or_else(|| shape_err!("{op} needs at least one axis"))
}

/// `softmax(logits / T)` along the last axis, with max subtraction.
pub fn softmax_with_temperature<S: Scalar>(logits: &Tensor<S>, temperature: f64) -> Result<Tensor<S>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(domain_err!("temperature must be positive, got {temperature}"));
    }
    let k = last_dim(logits.shape(), "softmax")?;
    let mut out = Vec::with_capacity(logits.numel());
    for row in logits.data().chunks(k) {
        let scaled: Vec<f64> = row.iter().map(|v| v.to_f64_lossy() / temperature).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| s::<S>(e / sum)));
    }
    Tensor::new(logits.shape().to_vec(), out)
}

pub(super) fn check_distributions<S: Scalar>(t: &Tensor<S>, k: usize, name: &str) -> Result<()> {
    for (i, row) in t.data().chunks(k).enumerate() {
        let mut sum = 0.0;
        for v in row {
            let v = v.to_f64_lossy();
            if !(v >= 0.0) {
                return Err(domain_err!("{name} row {i} has negative or NaN entry {v}"));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(domain_err!("{name} row {i} sums to {sum}, not 1"));
        }
    }
    Ok(())
}

/// Batch-mean of `Σ p ln(p/q)` along the last axis. Both arguments are
/// clamped at [`KL_PROB_FLOOR`] inside the logarithm; `0·ln 0` is taken as 0.
pub fn kl_divergence<S: Scalar>(p: &Tensor<S>, q: &Tensor<S>) -> Result<Tensor<S>> {
    Ok(Tensor::scalar(s(kl_value(p, q)?)))
}

pub(super) fn kl_value<S: Scalar>(p: &Tensor<S>, q: &Tensor<S>) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(shape_err!("kl_divergence of {:?} and {:?}", p.shape(), q.shape()));
    }
    let k = last_dim(p.shape(), "kl_divergence")?;
    check_distributions(p, k, "p")?;
    check_distributions(q, k, "q")?;
    let rows = p.numel() / k;
    let total: f64 = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pi, &qi)| {
            let pi = pi.to_f64_lossy();
            if pi <= 0.0 {
                return 0.0;
            }
            let qi = qi.to_f64_lossy().max(KL_PROB_FLOOR);
            pi * (pi.max(KL_PROB_FLOOR).ln() - qi.ln())
        })
        .sum();
    Ok(total / rows as f64)
}

/// `KL(σ(t/T) ‖ σ(s/T)) · T²`, the temperature-softened distillation loss.
pub fn soft_loss<S: Scalar>(
    teacher_logits: &Tensor<S>,
    student_logits: &Tensor<S>,
    temperature: f64,
) -> Result<Tensor<S>> {
    if teacher_logits.shape() != student_logits.shape() {
        return Err(shape_err!(
            "teacher logits {:?} vs student logits {:?}",
            teacher_logits.shape(),
            student_logits.shape()
        ));
    }
    let p = softmax_with_temperature(teacher_logits, temperature)?;
    let q = softmax_with_temperature(student_logits, temperature)?;
    Ok(Tensor::scalar(s(kl_value(&p, &q)? * temperature * temperature)))
}

/// Mean over all elements of `(a - b)²`.
pub fn mse_loss<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(shape_err!("mse_loss of {:?} and {:?}", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(Tensor::scalar(s(sum / a.numel() as f64)))
}

pub(super) fn check_labels(shape: &[usize], labels: &[usize]) -> Result<(usize, usize)> {
    let [batch, k] = *shape else {
        return Err(shape_err!("cross_entropy expects [B,K] logits, got {shape:?}"));
    };
    if labels.len() != batch {
        return Err(shape_err!("{} labels for batch of {batch}", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(domain_err!("label {bad} out of range for {k} classes"));
    }
    Ok((batch, k))
}

/// Batch-mean negative log-likelihood via a stable log-softmax. Also returns
/// the softmax rows for the backward pass.
pub(super) fn cross_entropy_forward<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(f64, Vec<S>)> {
    let (batch, k) = check_labels(logits.shape(), labels)?;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(batch * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        probs.extend(row.iter().map(|v| s::<S>((v - lse).exp())));
    }
    Ok((loss / batch as f64, probs))
}

pub fn cross_entropy_loss<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
    cross_entropy_forward(logits, labels).map(|(l, _)| Tensor::scalar(s(l)))
}
