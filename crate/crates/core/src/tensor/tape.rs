use super::ops::{self, ConvGeom, GroupNormSaved};
use super::{s, ParamId, ParamSet, Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Add(Var, Var),
    Scale(Var, S),
    GroupNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        saved: GroupNormSaved<S>,
    },
    GlobalAvgPool(Var),
    Softmax {
        input: Var,
        temperature: f64,
    },
    KlDiv {
        p: Var,
        q: Var,
    },
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<S>,
    },
    Sum(Var),
    SumSquares(Var),
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records operations for one forward pass and differentiates them.
///
/// Nodes that do not depend on any gradient-requiring leaf are never visited
/// by [`Tape::backward`], so forward passes through frozen or constant inputs
/// cost nothing extra.
pub struct Tape<S = f64> {
    nodes: Vec<Node<S>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    params: Vec<(Var, ParamId)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, var: Var) -> Option<&[S]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Adds every parameter-leaf gradient into its parameter's accumulation
    /// buffer. Frozen parameters are skipped.
    pub fn accumulate_into(&self, params: &mut ParamSet<S>) -> Result<()> {
        for &(var, id) in &self.params {
            let p = params.get_mut(id);
            if p.frozen {
                continue;
            }
            if let Some(g) = self.wrt(var) {
                p.accumulate(g)?;
            }
        }
        Ok(())
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Registers a leaf. Its `requires_grad` flag decides whether gradients
    /// flow to it.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    pub fn constant(&mut self, tensor: Tensor<S>) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    /// Registers a parameter as a leaf; frozen parameters get no gradient.
    pub fn param(&mut self, params: &ParamSet<S>, id: ParamId) -> Var {
        let p = params.get(id);
        let var = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.nodes[var.0].param = Some(id);
        var
    }

    /// Like [`Tape::param`] but never tracks gradients, for frozen models
    /// such as the distillation teacher.
    pub fn param_const(&mut self, params: &ParamSet<S>, id: ParamId) -> Var {
        self.constant(params.get(id).value.clone())
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let out = ops::conv2d(self.value(input), self.value(weight), self.value(bias), stride, padding)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let rg = self.rg(input);
        self.push(out, Op::Relu(input), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err!("add of {:?} and {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let f = s::<S>(factor);
        let t = self.value(input);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v * f).collect()).expect("same shape");
        let rg = self.rg(input);
        self.push(out, Op::Scale(input, f), rg)
    }

    pub fn group_norm(&mut self, input: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let (out, saved) =
            ops::group_norm_forward(self.value(input), groups, self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        let saved = if rg {
            saved
        } else {
            GroupNormSaved {
                xhat: Vec::new(),
                inv_std: Vec::new(),
            }
        };
        Ok(self.push(
            out,
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                saved,
            },
            rg,
        ))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::GlobalAvgPool(input), rg))
    }

    pub fn softmax_with_temperature(&mut self, input: Var, temperature: f64) -> Result<Var> {
        let out = ops::softmax_with_temperature(self.value(input), temperature)?;
        let rg = self.rg(input);
        Ok(self.push(out, Op::Softmax { input, temperature }, rg))
    }

    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var> {
        let out = ops::kl_divergence(self.value(p), self.value(q))?;
        let rg = self.rg(p) || self.rg(q);
        Ok(self.push(out, Op::KlDiv { p, q }, rg))
    }

    /// `KL(σ(t/T) ‖ σ(s/T)) · T²` with the teacher side held constant.
    pub fn soft_loss(&mut self, teacher_logits: Var, student_logits: Var, temperature: f64) -> Result<Var> {
        let t = self.value(teacher_logits);
        if t.shape() != self.value(student_logits).shape() {
            return Err(shape_err!(
                "teacher logits {:?} vs student logits {:?}",
                t.shape(),
                self.value(student_logits).shape()
            ));
        }
        let p = ops::softmax_with_temperature(t, temperature)?;
        let p = self.constant(p);
        let q = self.softmax_with_temperature(student_logits, temperature)?;
        let kl = self.kl_divergence(p, q)?;
        Ok(self.scale(kl, temperature * temperature))
    }

    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::mse_loss(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mse(a, b), rg))
    }

    pub fn cross_entropy_loss(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::cross_entropy_forward(self.value(logits), labels)?;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(s(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().fold(S::zero(), |a, &v| a + v);
        let rg = self.rg(input);
        self.push(Tensor::scalar(total), Op::Sum(input), rg)
    }

    pub fn sum_squares(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().fold(S::zero(), |a, &v| a + v * v);
        let rg = self.rg(input);
        self.push(Tensor::scalar(total), Op::SumSquares(input), rg)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(shape_err!("backward needs a scalar loss, got shape {:?}", lv.shape()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.rg(loss) {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(dout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &dout, &mut grads);
            grads[idx] = Some(dout);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (Var(i), id)))
            .collect();
        Ok(Gradients { grads, params })
    }

    /// Backward pass that adds parameter gradients into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet<S>) -> Result<()> {
        self.backward(loss)?.accumulate_into(params)
    }

    fn backprop_node(&self, node: &Node<S>, dout: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut send = |v: Var, g: Vec<S>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = [self.rg(*input), self.rg(*weight), self.rg(*bias)];
                let g = ops::conv2d_backward(geom, self.value(*input).data(), self.value(*weight).data(), dout, want);
                if let Some(d) = g.input {
                    send(*input, d);
                }
                if let Some(d) = g.weight {
                    send(*weight, d);
                }
                if let Some(d) = g.bias {
                    send(*bias, d);
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (batch, d_in) = (x.shape()[0], x.shape()[1]);
                let d_out = w.shape()[0];
                if self.rg(*input) {
                    let mut dx = vec![S::zero(); batch * d_in];
                    super::gemm::gemm(batch, d_out, d_in, dout, false, w.data(), false, &mut dx, false);
                    send(*input, dx);
                }
                if self.rg(*weight) {
                    let mut dw = vec![S::zero(); d_out * d_in];
                    super::gemm::gemm(d_out, batch, d_in, dout, true, x.data(), false, &mut dw, false);
                    send(*weight, dw);
                }
                if self.rg(*bias) {
                    let mut db = vec![S::zero(); d_out];
                    for row in dout.chunks(d_out) {
                        db.iter_mut().zip(row).for_each(|(a, &b)| *a = *a + b);
                    }
                    send(*bias, db);
                }
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let d = x
                    .iter()
                    .zip(dout)
                    .map(|(&xv, &g)| if xv > S::zero() { g } else { S::zero() })
                    .collect();
                send(*input, d);
            }
            Op::Add(a, b) => {
                send(*a, dout.to_vec());
                send(*b, dout.to_vec());
            }
            Op::Scale(input, f) => send(*input, dout.iter().map(|&g| g * *f).collect()),
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                saved,
            } => {
                let shape = self.value(*input).shape();
                let (dx, dg, db) = ops::group_norm_backward(shape, *groups, self.value(*gamma).data(), saved, dout);
                send(*input, dx);
                send(*gamma, dg);
                send(*beta, db);
            }
            Op::GlobalAvgPool(input) => {
                let shape = self.value(*input).shape();
                let hw = shape[2] * shape[3];
                let inv = s::<S>(1.0 / hw as f64);
                let d = dout.iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect();
                send(*input, d);
            }
            Op::Softmax { input, temperature } => {
                let y = node.value.data();
                let k = *node.value.shape().last().expect("softmax has an axis");
                let inv_t = s::<S>(1.0 / temperature);
                let mut d = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(k).zip(dout.chunks(k)) {
                    let dot = yr.iter().zip(gr).fold(S::zero(), |a, (&yv, &gv)| a + yv * gv);
                    d.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot) * inv_t));
                }
                send(*input, d);
            }
            Op::KlDiv { p, q } => {
                let (pv, qv) = (self.value(*p), self.value(*q));
                let k = *pv.shape().last().expect("kl has an axis");
                let scale = dout[0].to_f64_lossy() / (pv.numel() / k) as f64;
                let floor = ops::KL_PROB_FLOOR;
                if self.rg(*q) {
                    let d = pv
                        .data()
                        .iter()
                        .zip(qv.data())
                        .map(|(&pi, &qi)| {
                            let (pi, qi) = (pi.to_f64_lossy(), qi.to_f64_lossy());
                            if pi <= 0.0 || qi < floor {
                                S::zero()
                            } else {
                                s(-scale * pi / qi)
                            }
                        })
                        .collect();
                    send(*q, d);
                }
                if self.rg(*p) {
                    let d = pv
                        .data()
                        .iter()
                        .zip(qv.data())
                        .map(|(&pi, &qi)| {
                            let (pi, qi) = (pi.to_f64_lossy(), qi.to_f64_lossy());
                            if pi <= 0.0 {
                                S::zero()
                            } else {
                                let dp = if pi < floor { 0.0 } else { 1.0 };
                                s(scale * (pi.max(floor).ln() - qi.max(floor).ln() + dp))
                            }
                        })
                        .collect();
                    send(*p, d);
                }
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let f = 2.0 * dout[0].to_f64_lossy() / av.len() as f64;
                let diff: Vec<S> = av.iter().zip(bv).map(|(&x, &y)| s::<S>(f) * (x - y)).collect();
                if self.rg(*b) {
                    send(*b, diff.iter().map(|&v| -v).collect());
                }
                send(*a, diff);
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.value(*logits).shape()[1];
                let f = s::<S>(dout[0].to_f64_lossy() / labels.len() as f64);
                let mut d: Vec<S> = probs.iter().map(|&p| p * f).collect();
                for (row, &label) in labels.iter().enumerate() {
                    d[row * k + label] = d[row * k + label] - f;
                }
                send(*logits, d);
            }
            Op::Sum(input) => {
                let n = self.value(*input).numel();
                send(*input, vec![dout[0]; n]);
            }
            Op::SumSquares(input) => {
                let two = s::<S>(2.0);
                let d = self.value(*input).data().iter().map(|&x| two * x * dout[0]).collect();
                send(*input, d);
            }
        }
    }

    /// Copies the gradient for `var` into the slot of a tensor.
    pub fn grad_tensor(&self, grads: &Gradients<S>, var: Var) -> Option<Tensor<S>> {
        let g = grads.wrt(var)?;
        let mut t = self.value(var).clone();
        t.set_grad(g.to_vec()).ok()?;
        Some(t)
    }
}
