use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::Image;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Maps `[0, 1]` floats to 8-bit values (round half away from zero).
pub fn quantize(image: &Image) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Inverse of [`quantize`] for planar `[3, H, W]` data.
pub fn dequantize(bytes: &[u8], h: usize, w: usize) -> Result<Image> {
    Tensor::new(vec![3, h, w], bytes.iter().map(|&b| b as f32 / 255.0).collect())
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png(format!("{}: {e}", path.display()))
}

/// Writes a `[3, H, W]` image as 8-bit RGB PNG.
pub fn write_png(path: &Path, image: &Image) -> Result<()> {
    let [3, h, w] = image.shape()[..] else {
        return Err(shape_err!("write_png expects [3,H,W], got {:?}", image.shape()));
    };
    let planar = quantize(image);
    let mut interleaved = vec![0u8; planar.len()];
    for c in 0..3 {
        for i in 0..h * w {
            interleaved[i * 3 + c] = planar[c * h * w + i];
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| png_err(path, e))?;
    writer.write_image_data(&interleaved).map_err(|e| png_err(path, e))?;
    writer.finish().map_err(|e| png_err(path, e))
}

/// Reads an 8-bit RGB PNG into a planar `[3, H, W]` image.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(path, "expected 8-bit RGB"));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let mut planar = vec![0u8; 3 * h * w];
    for i in 0..h * w {
        for c in 0..3 {
            planar[c * h * w + i] = buf[i * 3 + c];
        }
    }
    dequantize(&planar, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_lossless_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let bytes: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7 % 256) as u8).collect();
        let img = dequantize(&bytes, 5, 4).unwrap();
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(quantize(&back), bytes);
    }
}
