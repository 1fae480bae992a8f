//! Dataset side: synthetic multi-scale images, Lanczos pyramids,
//! augmentation, standardization statistics, patient-level splits, and the
//! on-disk dataset directory.

mod augment;
mod dataset;
mod image_io;
mod pyramid;
mod split;
mod standardize;
mod synth;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use dataset::{Dataset, DatasetSpec, LabeledView, UnlabeledView};
pub use image_io::{dequantize, quantize, read_png, write_png};
pub use pyramid::{build_pyramid, level_side, Pyramid};
pub use split::{split_dataset, Split, SplitConfig, SplitManifest};
pub use standardize::{compute_standardization, ChannelStats, StatsFile, STD_FLOOR};
pub use synth::{
    band_energy_features, gen_synthetic_dataset, generate, BandEnergyOracle, SynthConfig, SyntheticRecord,
};

/// A `[3, H, W]` image with values in `[0, 1]`.
pub type Image = Tensor<f32>;

/// Magnification relative to the base image, in `(0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct MagTag(f64);

impl MagTag {
    pub const BASE: MagTag = MagTag(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value <= 1.0 {
            Ok(MagTag(value))
        } else {
            Err(Error::Config(format!("magnification {value} not in (0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Column name in `manifest.csv`.
    pub fn column(self) -> String {
        format!("mag_{self}")
    }
}

impl PartialEq for MagTag {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for MagTag {}

impl PartialOrd for MagTag {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MagTag {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for MagTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for MagTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = if let Some((num, den)) = s.split_once('/') {
            let num: f64 = num
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad magnification `{s}`")))?;
            let den: f64 = den
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad magnification `{s}`")))?;
            num / den
        } else {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad magnification `{s}`")))?
        };
        MagTag::new(v)
    }
}

impl Serialize for MagTag {
    fn serialize<Ser: Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for MagTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        MagTag::new(v).map_err(serde::de::Error::custom)
    }
}

/// One sample: identity, optional label, and a path per stored
/// magnification.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub patient_id: String,
    pub class_label: Option<usize>,
    pub pyramid: BTreeMap<MagTag, PathBuf>,
}
