use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Image, MagTag};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower bound applied to every channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// `(x - mean) / std`, per channel.
    pub fn apply<S: Scalar>(&self, image: &Image) -> Result<Tensor<S>> {
        let [c, h, w] = image.shape()[..] else {
            return Err(shape_err!("expected [C,H,W], got {:?}", image.shape()));
        };
        if c != self.mean.len() {
            return Err(shape_err!("{} channels vs {} stats", c, self.mean.len()));
        }
        let plane = h * w;
        let data = image
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = i / plane;
                S::from_f64_lossy((v as f64 - self.mean[ch]) / self.std[ch])
            })
            .collect();
        Tensor::new(vec![c, h, w], data)
    }
}

/// Statistics over the given (training) images only.
pub fn compute_standardization(train_images: &[&Image]) -> Result<ChannelStats> {
    let first = train_images
        .first()
        .ok_or_else(|| Error::Config("standardization needs a nonempty training set".into()))?;
    let channels = first.shape()[0];
    let mut sum = vec![0.0f64; channels];
    let mut sq = vec![0.0f64; channels];
    let mut count = 0usize;
    for img in train_images {
        let [c, h, w] = img.shape()[..] else {
            return Err(shape_err!("expected [C,H,W], got {:?}", img.shape()));
        };
        if c != channels {
            return Err(shape_err!("mixed channel counts {c} and {channels}"));
        }
        let plane = h * w;
        for (i, &v) in img.data().iter().enumerate() {
            let v = v as f64;
            sum[i / plane] += v;
            sq[i / plane] += v * v;
        }
        count += plane;
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
        .collect();
    Ok(ChannelStats { mean, std })
}

/// Contents of `stats.json`: one entry per magnification, plus the
/// fingerprint of the training split the numbers came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub train_fingerprint: String,
    pub by_magnification: BTreeMap<String, ChannelStats>,
}

impl StatsFile {
    pub fn get(&self, mag: MagTag) -> Result<&ChannelStats> {
        self.by_magnification
            .get(&mag.to_string())
            .ok_or_else(|| Error::Config(format!("no standardization stats for magnification {mag}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
