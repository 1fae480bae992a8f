use super::{Scalar, Tensor};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor plus its optimizer state.
///
/// `accumulated_grad` sums gradients over every backward pass since the last
/// optimizer step; `adam_m`/`adam_v` are the first and second moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub accumulated_grad: Vec<S>,
    pub adam_m: Vec<S>,
    pub adam_v: Vec<S>,
    pub step_count: u64,
    pub frozen: bool,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        let n = value.numel();
        Parameter {
            name: name.into(),
            value,
            accumulated_grad: vec![S::zero(); n],
            adam_m: vec![S::zero(); n],
            adam_v: vec![S::zero(); n],
            step_count: 0,
            frozen: false,
        }
    }

    pub fn clear_grad(&mut self) {
        self.accumulated_grad.iter_mut().for_each(|g| *g = S::zero());
    }

    pub fn accumulate(&mut self, grad: &[S]) -> Result<()> {
        if grad.len() != self.accumulated_grad.len() {
            return Err(shape_err!(
                "gradient of length {} for parameter {} of shape {:?}",
                grad.len(),
                self.name,
                self.value.shape()
            ));
        }
        for (acc, g) in self.accumulated_grad.iter_mut().zip(grad) {
            *acc = *acc + *g;
        }
        Ok(())
    }
}

/// Ordered collection of named parameters. Order is creation order and is
/// part of the checkpoint format.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::clear_grad);
    }

    /// Copies values (not optimizer state) from a structurally identical set.
    pub fn copy_values_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(shape_err!(
                "parameter count {} vs {}",
                self.params.len(),
                other.params.len()
            ));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.value.shape() != src.value.shape() {
                return Err(shape_err!(
                    "parameter {} shape {:?} vs {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.value.shape()
                ));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}
