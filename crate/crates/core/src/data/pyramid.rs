use std::collections::BTreeMap;

use super::{Image, MagTag};
use crate::error::{shape_err, Error, Result};
use crate::resize::lanczos_resize;

/// Every stored magnification of one image.
pub type Pyramid = BTreeMap<MagTag, Image>;

/// Side length of a level: `round(side · mag)`, at least 1.
pub fn level_side(side: usize, mag: MagTag) -> usize {
    ((side as f64 * mag.value()).round() as usize).max(1)
}

/// Builds each level straight from the base image with Lanczos-3, never by
/// resampling another level. Level 1.0 is the base image itself.
pub fn build_pyramid(base: &Image, levels: &[MagTag]) -> Result<Pyramid> {
    let [_, h, w] = base.shape()[..] else {
        return Err(shape_err!("pyramid base must be [C,H,W], got {:?}", base.shape()));
    };
    let mut pyramid = Pyramid::new();
    for &mag in levels {
        if mag.value() > 1.0 {
            return Err(Error::Config(format!("level {mag} exceeds the base")));
        }
        let level = if mag == MagTag::BASE {
            base.clone()
        } else {
            lanczos_resize(base, level_side(h, mag), level_side(w, mag))?
        };
        pyramid.insert(mag, level);
    }
    Ok(pyramid)
}
