//! Residual classifier with group normalization.
//!
//! Layout: a stride-2 3×3 stem, then one stage per entry of
//! `stage_widths`, each made of `blocks_per_stage` basic residual blocks
//! whose first block downsamples by 2. Every convolution is followed by
//! group normalization; a block's shortcut is the identity unless the shape
//! changes, in which case it is a 1×1 strided projection plus group norm.
//! The post-activation output of the last block is the feature map used for
//! hints; global average pooling and a linear head produce the logits.

mod checkpoint;
mod flops;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};
use crate::seed;
use crate::tensor::{he_init, ParamId, ParamSet, Scalar, Tape, Tensor, Var};

pub use checkpoint::{read_checkpoint_dtype, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use flops::count_flops;

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub num_classes: usize,
    pub num_groups: usize,
    pub input_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_widths: vec![16, 32, 64, 128],
            blocks_per_stage: 1,
            num_classes: 3,
            num_groups: 8,
            input_channels: 3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.is_empty() || self.blocks_per_stage == 0 {
            return Err(Error::Config("model needs at least one stage and block".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes {} < 2", self.num_classes)));
        }
        if self.input_channels == 0 || self.num_groups == 0 {
            return Err(Error::Config("input_channels and num_groups must be positive".into()));
        }
        if let Some(w) = self.stage_widths.iter().find(|&&w| w == 0 || w % self.num_groups != 0) {
            return Err(Error::Config(format!(
                "stage width {w} not divisible by {} groups",
                self.num_groups
            )));
        }
        Ok(())
    }

    /// Number of stride-2 reductions between input and feature map.
    pub fn num_reductions(&self) -> usize {
        1 + self.stage_widths.len()
    }

    /// Smallest accepted input side.
    pub fn min_input_side(&self) -> usize {
        1 << self.num_reductions()
    }

    /// Feature-map side for an input side: `ceil(side / 2)` per reduction.
    pub fn feature_side(&self, side: usize) -> usize {
        (0..self.num_reductions()).fold(side, |s, _| s.div_ceil(2))
    }

    pub fn feature_channels(&self) -> usize {
        *self.stage_widths.last().expect("validated")
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let min = self.min_input_side();
        if h < min || w < min {
            return Err(domain_err!("input {h}x{w} too small; needs at least {min}x{min}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvUnit {
    pub weight: ParamId,
    pub bias: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Block {
    pub conv1: ConvUnit,
    pub conv2: ConvUnit,
    pub shortcut: Option<ConvUnit>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub stem: ConvUnit,
    pub blocks: Vec<Block>,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    pub feature_map: Var,
    pub logits: Var,
}

/// Materialized outputs of a gradient-free forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardValues<S> {
    pub feature_map: Tensor<S>,
    pub logits: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    config: ModelConfig,
    params: ParamSet<S>,
    layout: Layout,
}

/// Builds the layout, creating parameters through `make(name, shape, fan_in)`.
fn build_layout<S: Scalar>(
    cfg: &ModelConfig,
    params: &mut ParamSet<S>,
    make: &mut dyn FnMut(&str, Vec<usize>, usize) -> Result<Tensor<S>>,
) -> Result<Layout> {
    let mut unit = |params: &mut ParamSet<S>, name: &str, c_in, c_out, kernel, stride, padding| -> Result<ConvUnit> {
        let fan_in = c_in * kernel * kernel;
        let w = make(&format!("{name}.weight"), vec![c_out, c_in, kernel, kernel], fan_in)?;
        let weight = params.add(format!("{name}.weight"), w);
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(vec![c_out]));
        let gamma = params.add(format!("{name}.gn.gamma"), Tensor::full(vec![c_out], S::one()));
        let beta = params.add(format!("{name}.gn.beta"), Tensor::zeros(vec![c_out]));
        Ok(ConvUnit {
            weight,
            bias,
            gamma,
            beta,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
        })
    };
    let first = cfg.stage_widths[0];
    let stem = unit(params, "stem", cfg.input_channels, first, 3, 2, 1)?;
    let mut blocks = Vec::new();
    let mut c_in = first;
    for (si, &width) in cfg.stage_widths.iter().enumerate() {
        for bi in 0..cfg.blocks_per_stage {
            let stride = if bi == 0 { 2 } else { 1 };
            let name = format!("stage{si}.block{bi}");
            let conv1 = unit(params, &format!("{name}.conv1"), c_in, width, 3, stride, 1)?;
            let conv2 = unit(params, &format!("{name}.conv2"), width, width, 3, 1, 1)?;
            let shortcut = if stride != 1 || c_in != width {
                Some(unit(params, &format!("{name}.shortcut"), c_in, width, 1, stride, 0)?)
            } else {
                None
            };
            blocks.push(Block { conv1, conv2, shortcut });
            c_in = width;
        }
    }
    let hw = make("head.weight", vec![cfg.num_classes, c_in], c_in)?;
    let head_weight = params.add("head.weight", hw);
    let head_bias = params.add("head.bias", Tensor::zeros(vec![cfg.num_classes]));
    Ok(Layout {
        stem,
        blocks,
        head_weight,
        head_bias,
    })
}

impl<S: Scalar> Model<S> {
    /// Fresh model: He-normal convolution and head weights, zero biases,
    /// unit/zero group-norm affine parameters. Deterministic in `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let layout = build_layout(config, &mut params, &mut |name, shape, fan_in| {
            he_init(shape, fan_in, seed::derive(seed, name))
        })?;
        Ok(Model {
            config: config.clone(),
            params,
            layout,
        })
    }

    /// Reassembles a model from a config and parameters in creation order.
    pub fn from_params(config: &ModelConfig, loaded: ParamSet<S>) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::<S>::new();
        let layout = build_layout(config, &mut params, &mut |_, shape, _| Ok(Tensor::zeros(shape)))?;
        if params.len() != loaded.len() {
            return Err(Error::Checkpoint(format!(
                "config implies {} tensors, checkpoint has {}",
                params.len(),
                loaded.len()
            )));
        }
        for (expected, got) in params.iter().zip(loaded.iter()) {
            if expected.name != got.name || expected.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "expected {} {:?}, found {} {:?}",
                    expected.name,
                    expected.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok(Model {
            config: config.clone(),
            params: loaded,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn head_ids(&self) -> [ParamId; 2] {
        [self.layout.head_weight, self.layout.head_bias]
    }

    /// Excludes everything but the linear head from gradients and updates.
    pub fn freeze_except_fc(&mut self) {
        let head = self.head_ids();
        for id in self.params.ids().collect::<Vec<_>>() {
            let p = self.params.get_mut(id);
            p.frozen = !head.contains(&id);
            if p.frozen {
                p.clear_grad();
            }
        }
    }

    pub fn unfreeze(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = false);
    }

    fn conv_unit(&self, tape: &mut Tape<S>, x: Var, u: &ConvUnit, track: bool) -> Result<Var> {
        let p = |tape: &mut Tape<S>, id| {
            if track {
                tape.param(&self.params, id)
            } else {
                tape.param_const(&self.params, id)
            }
        };
        let (w, b, g, be) = (p(tape, u.weight), p(tape, u.bias), p(tape, u.gamma), p(tape, u.beta));
        let y = tape.conv2d(x, w, b, u.stride, u.padding)?;
        tape.group_norm(y, g, be, self.config.num_groups, GROUP_NORM_EPS)
    }

    /// Records a forward pass of a `[B,C,H,W]` input. With `track` false the
    /// parameters enter the tape as constants.
    pub fn forward(&self, tape: &mut Tape<S>, input: Var, track: bool) -> Result<ModelOutput> {
        let shape = tape.value(input).shape().to_vec();
        let [_, c, h, w] = shape[..] else {
            return Err(crate::error::shape_err!("model input must be [B,C,H,W], got {shape:?}"));
        };
        if c != self.config.input_channels {
            return Err(crate::error::shape_err!(
                "model expects {} input channels, got {c}",
                self.config.input_channels
            ));
        }
        self.config.check_input(h, w)?;
        let x = self.conv_unit(tape, input, &self.layout.stem, track)?;
        let mut x = tape.relu(x);
        for block in &self.layout.blocks {
            let y = self.conv_unit(tape, x, &block.conv1, track)?;
            let y = tape.relu(y);
            let y = self.conv_unit(tape, y, &block.conv2, track)?;
            let short = match &block.shortcut {
                Some(u) => self.conv_unit(tape, x, u, track)?,
                None => x,
            };
            let sum = tape.add(y, short)?;
            x = tape.relu(sum);
        }
        let pooled = tape.global_avg_pool(x)?;
        let (hw, hb) = if track {
            (
                tape.param(&self.params, self.layout.head_weight),
                tape.param(&self.params, self.layout.head_bias),
            )
        } else {
            (
                tape.param_const(&self.params, self.layout.head_weight),
                tape.param_const(&self.params, self.layout.head_bias),
            )
        };
        let logits = tape.linear(pooled, hw, hb)?;
        Ok(ModelOutput { feature_map: x, logits })
    }

    /// Gradient-free forward pass of a `[B,C,H,W]` or `[C,H,W]` input.
    pub fn infer(&self, input: &Tensor<S>) -> Result<ForwardValues<S>> {
        let input = if input.ndim() == 3 {
            input.clone().unsqueeze0()
        } else {
            input.clone()
        };
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let out = self.forward(&mut tape, x, false)?;
        Ok(ForwardValues {
            feature_map: tape.value(out.feature_map).clone(),
            logits: tape.value(out.logits).clone(),
        })
    }

    /// Argmax class per sample.
    pub fn predict(&self, input: &Tensor<S>) -> Result<Vec<usize>> {
        let out = self.infer(input)?;
        let k = self.config.num_classes;
        Ok(out.logits.data().chunks(k).map(argmax).collect())
    }

    /// Raw little-endian bytes of every parameter, in order.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in self.params.iter() {
            p.value.data().iter().for_each(|v| v.write_le(&mut out));
        }
        out
    }
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Closed-form parameter count of a config.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let unit = |c_in: usize, c_out: usize, k: usize| k * k * c_in * c_out + c_out + 2 * c_out;
    let mut total = unit(cfg.input_channels, cfg.stage_widths[0], 3);
    let mut c_in = cfg.stage_widths[0];
    for &w in &cfg.stage_widths {
        for b in 0..cfg.blocks_per_stage {
            total += unit(c_in, w, 3) + unit(w, w, 3);
            if b == 0 || c_in != w {
                total += unit(c_in, w, 1);
            }
            c_in = w;
        }
    }
    total + c_in * cfg.num_classes + cfg.num_classes
}
