use super::ModelConfig;
use crate::error::Result;

fn conv_out(side: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (side + 2 * pad - kernel) / stride + 1
}

/// Forward-pass FLOPs at a given input size.
///
/// Convolutions count `2·K²·C_in·C_out·H_out·W_out`, the head `2·D_in·D_out`,
/// and normalization, activation, residual addition and pooling one FLOP per
/// element they read.
pub fn count_flops(cfg: &ModelConfig, input_h: usize, input_w: usize) -> Result<u64> {
    cfg.validate()?;
    cfg.check_input(input_h, input_w)?;
    let mut total: u64 = 0;
    let mut conv = |h: usize, w: usize, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize| {
        let (ho, wo) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad));
        let elems = (c_out * ho * wo) as u64;
        total += 2 * (k * k * c_in * c_out) as u64 * (ho * wo) as u64;
        // group norm
        total += elems;
        (ho, wo, elems)
    };
    let mut elementwise: u64 = 0;
    let first = cfg.stage_widths[0];
    let (mut h, mut w, e) = conv(input_h, input_w, cfg.input_channels, first, 3, 2, 1);
    elementwise += e;
    let mut c_in = first;
    for &width in &cfg.stage_widths {
        for b in 0..cfg.blocks_per_stage {
            let stride = if b == 0 { 2 } else { 1 };
            let (h1, w1, e1) = conv(h, w, c_in, width, 3, stride, 1);
            elementwise += e1; // relu
            let (h2, w2, e2) = conv(h1, w1, width, width, 3, 1, 1);
            if stride != 1 || c_in != width {
                conv(h, w, c_in, width, 1, stride, 0);
            }
            elementwise += 2 * e2; // residual add + relu
            h = h2;
            w = w2;
            c_in = width;
        }
    }
    total += elementwise;
    total += (c_in * h * w) as u64; // global average pool
    total += 2 * (c_in * cfg.num_classes) as u64;
    Ok(total)
}
