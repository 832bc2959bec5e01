//! Reverse-mode gradient tape.
//!
//! A [`Graph`] records every operator executed during a forward pass. Nodes
//! only ever reference earlier nodes, so replaying the tape in reverse order
//! visits each operator after its result gradient is complete and accumulates
//! exactly one contribution per operator-operand edge.
//!
//! A graph is confined to a single thread for one training step; the operator
//! kernels it calls may parallelize internally.

use crate::error::{Error, Result};
use crate::ops::conv::conv2d_backward;
use crate::ops::elementwise::{Activation, BinaryKind};
use crate::ops::norm::BnSaved;
use crate::ops::pool::MaxPoolCfg;
use crate::ops::{self};
use crate::tensor::{Conv2dCfg, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

enum Op {
    Leaf,
    Conv2d {
        input: ValueId,
        weight: ValueId,
        bias: Option<ValueId>,
        cfg: Conv2dCfg,
    },
    MaxPool2d {
        input: ValueId,
        argmax: Vec<usize>,
    },
    BatchNormTrain {
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
        saved: BnSaved,
    },
    BatchNormInfer {
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
        eps: f64,
    },
    Activation {
        input: ValueId,
        kind: Activation,
    },
    Exp {
        input: ValueId,
    },
    Ln {
        input: ValueId,
    },
    /// y = a*x + b; the offset shifts the forward value only.
    Affine {
        input: ValueId,
        a: f64,
    },
    Clamp {
        input: ValueId,
        lo: f64,
        hi: f64,
    },
    Binary {
        a: ValueId,
        b: ValueId,
        kind: BinaryKind,
    },
    ConcatC {
        inputs: Vec<ValueId>,
    },
    SliceC {
        input: ValueId,
        start: usize,
        len: usize,
    },
    Upsample2x {
        input: ValueId,
    },
    Gather {
        input: ValueId,
        indices: Vec<usize>,
    },
    /// Same data, new dims of equal length.
    Reshape {
        input: ValueId,
    },
    Sum {
        input: ValueId,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of `id`, or zeros if the tensor was not on the loss path.
    pub fn of(&self, graph: &Graph, id: ValueId) -> Tensor {
        match self.get(id) {
            Some(t) => t.clone(),
            None => Tensor::zeros(graph.value(id).dims()),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> ValueId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn req(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> ValueId {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.leaf(value, false)
    }

    pub fn conv2d(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: Option<ValueId>,
        cfg: Conv2dCfg,
    ) -> Result<ValueId> {
        let bias_vec = bias.map(|b| self.value(b).data().to_vec());
        let out = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias_vec.as_deref(),
            &cfg,
        )?;
        let mut parents = vec![input, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        let req = self.req(&parents);
        Ok(self.push(out, req, Op::Conv2d { input, weight, bias, cfg }))
    }

    pub fn maxpool2d(&mut self, input: ValueId, cfg: MaxPoolCfg) -> Result<ValueId> {
        let (out, argmax) = ops::maxpool2d(self.value(input), &cfg)?;
        let req = self.req(&[input]);
        Ok(self.push(out, req, Op::MaxPool2d { input, argmax }))
    }

    /// Training-mode batch norm. Returns the output id plus the batch mean
    /// and variance so the caller can update running statistics.
    pub fn batchnorm_train(
        &mut self,
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        eps: f64,
    ) -> Result<(ValueId, Vec<f64>, Vec<f64>)> {
        let (out, saved) = ops::batchnorm_train(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        )?;
        let mean = saved.mean.clone();
        let var = saved.var.clone();
        let req = self.req(&[input, gamma, beta]);
        let id = self.push(
            out,
            req,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                eps,
                saved,
            },
        );
        Ok((id, mean, var))
    }

    pub fn batchnorm_infer(
        &mut self,
        input: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<ValueId> {
        let out = ops::batchnorm_infer(
            self.value(input),
            self.value(gamma).data(),
            self.value(beta).data(),
            running_mean,
            running_var,
            eps,
        )?;
        let req = self.req(&[input, gamma, beta]);
        Ok(self.push(
            out,
            req,
            Op::BatchNormInfer {
                input,
                gamma,
                beta,
                running_mean: running_mean.to_vec(),
                running_var: running_var.to_vec(),
                eps,
            },
        ))
    }

    pub fn activation(&mut self, input: ValueId, kind: Activation) -> Result<ValueId> {
        let out = ops::activation(self.value(input), kind)?;
        let req = self.req(&[input]);
        Ok(self.push(out, req, Op::Activation { input, kind }))
    }

    pub fn exp(&mut self, input: ValueId) -> ValueId {
        let out = ops::map_unary(self.value(input), f64::exp);
        let req = self.req(&[input]);
        self.push(out, req, Op::Exp { input })
    }

    pub fn ln(&mut self, input: ValueId) -> ValueId {
        let out = ops::map_unary(self.value(input), f64::ln);
        let req = self.req(&[input]);
        self.push(out, req, Op::Ln { input })
    }

    /// y = a*x + b element-wise.
    pub fn affine(&mut self, input: ValueId, a: f64, b: f64) -> ValueId {
        let out = ops::map_unary(self.value(input), |x| a * x + b);
        let req = self.req(&[input]);
        self.push(out, req, Op::Affine { input, a })
    }

    pub fn clamp(&mut self, input: ValueId, lo: f64, hi: f64) -> ValueId {
        let out = ops::map_unary(self.value(input), |x| x.clamp(lo, hi));
        let req = self.req(&[input]);
        self.push(out, req, Op::Clamp { input, lo, hi })
    }

    pub fn binary(&mut self, a: ValueId, b: ValueId, kind: BinaryKind) -> Result<ValueId> {
        let out = ops::binary(self.value(a), self.value(b), kind)?;
        let req = self.req(&[a, b]);
        Ok(self.push(out, req, Op::Binary { a, b, kind }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, BinaryKind::Div)
    }

    pub fn min(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, BinaryKind::Min)
    }

    pub fn max(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary(a, b, BinaryKind::Max)
    }

    pub fn concat(&mut self, inputs: &[ValueId]) -> Result<ValueId> {
        let tensors: Vec<&Tensor> = inputs.iter().map(|id| self.value(*id)).collect();
        let out = ops::concat_channels(&tensors)?;
        let req = self.req(inputs);
        Ok(self.push(
            out,
            req,
            Op::ConcatC {
                inputs: inputs.to_vec(),
            },
        ))
    }

    pub fn slice_channels(&mut self, input: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let out = ops::slice_channels(self.value(input), start, len)?;
        let req = self.req(&[input]);
        Ok(self.push(out, req, Op::SliceC { input, start, len }))
    }

    pub fn upsample2x(&mut self, input: ValueId) -> ValueId {
        let out = ops::upsample_nearest_2x(self.value(input));
        let req = self.req(&[input]);
        self.push(out, req, Op::Upsample2x { input })
    }

    pub fn gather(&mut self, input: ValueId, indices: Vec<usize>) -> Result<ValueId> {
        let out = ops::gather(self.value(input), &indices)?;
        let req = self.req(&[input]);
        Ok(self.push(out, req, Op::Gather { input, indices }))
    }

    pub fn reshape(
        &mut self,
        input: ValueId,
        dims: (usize, usize, usize, usize),
    ) -> Result<ValueId> {
        let out = Tensor::new(dims, self.value(input).data().to_vec())?;
        let req = self.req(&[input]);
        Ok(self.push(out, req, Op::Reshape { input }))
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, input: ValueId) -> ValueId {
        let total: f64 = self.value(input).data().iter().sum();
        let req = self.req(&[input]);
        self.push(Tensor::scalar(total), req, Op::Sum { input })
    }

    /// Reverse replay from a scalar loss. Gradients are populated for every
    /// node on the loss path; query leaves through [`Gradients`].
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got dims {:?}",
                self.value(loss).dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.accumulate(idx, &gout, &mut grads)?;
            // Leaves keep their gradient; interior grads are dropped above.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(
        &self,
        idx: usize,
        gout: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let add_to = |grads: &mut [Option<Tensor>], id: ValueId, g: Tensor| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot => *slot = Some(g),
            }
        };

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                cfg,
            } => {
                let (gi, gw, gb) = conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    cfg,
                    gout,
                    bias.is_some(),
                )?;
                add_to(grads, *input, gi);
                add_to(grads, *weight, gw);
                if let (Some(b), Some(gb)) = (bias, gb) {
                    let dims = self.value(*b).dims();
                    add_to(grads, *b, Tensor::new(dims, gb)?);
                }
            }
            Op::MaxPool2d { input, argmax } => {
                let gi = ops::maxpool2d_backward(self.value(*input).dims(), argmax, gout);
                add_to(grads, *input, gi);
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                eps,
                saved,
            } => {
                let (gi, ggamma, gbeta) =
                    ops::batchnorm_train_backward(saved, self.value(*gamma).data(), *eps, gout);
                add_to(grads, *input, gi);
                add_to(grads, *gamma, Tensor::new(self.value(*gamma).dims(), ggamma)?);
                add_to(grads, *beta, Tensor::new(self.value(*beta).dims(), gbeta)?);
            }
            Op::BatchNormInfer {
                input,
                gamma,
                beta,
                running_mean,
                running_var,
                eps,
            } => {
                let (gi, ggamma, gbeta) = ops::batchnorm_infer_backward(
                    self.value(*input),
                    self.value(*gamma).data(),
                    running_mean,
                    running_var,
                    *eps,
                    gout,
                );
                add_to(grads, *input, gi);
                add_to(grads, *gamma, Tensor::new(self.value(*gamma).dims(), ggamma)?);
                add_to(grads, *beta, Tensor::new(self.value(*beta).dims(), gbeta)?);
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let y = self.value(ValueId(idx));
                let mut gi = gout.clone();
                for ((g, &xv), &yv) in gi.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *g *= kind.derivative(xv, yv);
                }
                add_to(grads, *input, gi);
            }
            Op::Exp { input } => {
                let y = self.value(ValueId(idx));
                let mut gi = gout.clone();
                for (g, &yv) in gi.data_mut().iter_mut().zip(y.data()) {
                    *g *= yv;
                }
                add_to(grads, *input, gi);
            }
            Op::Ln { input } => {
                let x = self.value(*input);
                let mut gi = gout.clone();
                for (g, &xv) in gi.data_mut().iter_mut().zip(x.data()) {
                    *g /= xv;
                }
                add_to(grads, *input, gi);
            }
            Op::Affine { input, a, .. } => {
                let mut gi = gout.clone();
                for g in gi.data_mut() {
                    *g *= a;
                }
                add_to(grads, *input, gi);
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input);
                let mut gi = gout.clone();
                for (g, &xv) in gi.data_mut().iter_mut().zip(x.data()) {
                    if xv <= *lo || xv >= *hi {
                        *g = 0.0;
                    }
                }
                add_to(grads, *input, gi);
            }
            Op::Binary { a, b, kind } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mut ga = gout.clone();
                let mut gb = gout.clone();
                match kind {
                    BinaryKind::Add => {}
                    BinaryKind::Sub => {
                        for g in gb.data_mut() {
                            *g = -*g;
                        }
                    }
                    BinaryKind::Mul => {
                        for (g, &v) in ga.data_mut().iter_mut().zip(bv.data()) {
                            *g *= v;
                        }
                        for (g, &v) in gb.data_mut().iter_mut().zip(av.data()) {
                            *g *= v;
                        }
                    }
                    BinaryKind::Div => {
                        for (g, &v) in ga.data_mut().iter_mut().zip(bv.data()) {
                            *g /= v;
                        }
                        for ((g, &an), &bn) in
                            gb.data_mut().iter_mut().zip(av.data()).zip(bv.data())
                        {
                            *g *= -an / (bn * bn);
                        }
                    }
                    BinaryKind::Min | BinaryKind::Max => {
                        // Gradient routes to the selected operand; ties go to `a`.
                        for ((i, ga_v), gb_v) in
                            ga.data_mut().iter_mut().enumerate().zip(gb.data_mut())
                        {
                            let sel_b = match kind {
                                BinaryKind::Min => bv.data()[i] < av.data()[i],
                                _ => bv.data()[i] > av.data()[i],
                            };
                            if sel_b {
                                *ga_v = 0.0;
                            } else {
                                *gb_v = 0.0;
                            }
                        }
                    }
                }
                add_to(grads, *a, ga);
                add_to(grads, *b, gb);
            }
            Op::ConcatC { inputs } => {
                let mut start = 0;
                for id in inputs {
                    let len = self.value(*id).dims().1;
                    let gi = ops::slice_channels(gout, start, len)?;
                    add_to(grads, *id, gi);
                    start += len;
                }
            }
            Op::SliceC { input, start, len } => {
                let src = self.value(*input);
                let (n, c, h, w) = src.dims();
                let plane = h * w;
                let mut gi = Tensor::zeros((n, c, h, w));
                for bn in 0..n {
                    let dst_base = (bn * c + start) * plane;
                    let src_base = bn * len * plane;
                    gi.data_mut()[dst_base..dst_base + len * plane]
                        .copy_from_slice(&gout.data()[src_base..src_base + len * plane]);
                }
                add_to(grads, *input, gi);
            }
            Op::Upsample2x { input } => {
                let gi = ops::upsample_nearest_2x_backward(self.value(*input).dims(), gout);
                add_to(grads, *input, gi);
            }
            Op::Gather { input, indices } => {
                let mut gi = Tensor::zeros(self.value(*input).dims());
                for (g, &i) in gout.data().iter().zip(indices) {
                    gi.data_mut()[i] += g;
                }
                add_to(grads, *input, gi);
            }
            Op::Reshape { input } => {
                let gi = Tensor::new(self.value(*input).dims(), gout.data().to_vec())?;
                add_to(grads, *input, gi);
            }
            Op::Sum { input } => {
                let g = gout.data()[0];
                let gi = Tensor::full(self.value(*input).dims(), g);
                add_to(grads, *input, gi);
            }
        }
        Ok(())
    }
}
