//! Taped reverse-mode differentiation.
//!
//! Network code is written once against [`Graph`]. [`Eager`] evaluates ops and
//! keeps nothing; [`Tape`] records every op with the values its backward pass
//! needs, and [`Tape::backward`] replays the record in reverse.

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormParams, BatchStats, Mode, Padding};
use crate::tensor::Tensor;

/// Execution backend for forward passes.
pub trait Graph {
    type Value;

    fn input(&mut self, tensor: Tensor) -> Self::Value;
    /// A trainable parameter. The tensor is copied into the graph.
    fn param(&mut self, name: &str, tensor: &Tensor) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn conv2d(
        &mut self,
        input: &Self::Value,
        kernel: &Self::Value,
        bias: &Self::Value,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;

    fn depthwise_conv2d(
        &mut self,
        input: &Self::Value,
        kernel: &Self::Value,
        bias: &Self::Value,
        stride: usize,
        padding: Padding,
    ) -> Result<Self::Value>;

    /// Batch norm with trainable `gamma`/`beta`; the running statistics in
    /// `params` are read (eval) but never written. Train mode returns the batch
    /// statistics for the caller to fold in.
    fn batch_norm(
        &mut self,
        input: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        params: &BatchNormParams,
        mode: Mode,
    ) -> Result<(Self::Value, Option<BatchStats>)>;

    fn relu(&mut self, input: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, input: &Self::Value) -> Result<Self::Value>;
    fn dense(
        &mut self,
        input: &Self::Value,
        weights: &Self::Value,
        bias: &Self::Value,
    ) -> Result<Self::Value>;
    fn softmax(&mut self, logits: &Self::Value) -> Result<Self::Value>;
}

/// Forward-only evaluation; intermediate values are dropped as soon as the
/// caller releases them.
#[derive(Default)]
pub struct Eager;

fn bn_params_view(
    gamma: &Tensor,
    beta: &Tensor,
    params: &BatchNormParams,
) -> BatchNormParams {
    BatchNormParams {
        gamma: gamma.clone(),
        beta: beta.clone(),
        ..params.clone()
    }
}

impl Graph for Eager {
    type Value = Tensor;

    fn input(&mut self, tensor: Tensor) -> Tensor {
        tensor
    }

    fn param(&mut self, _name: &str, tensor: &Tensor) -> Tensor {
        tensor.clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn conv2d(
        &mut self,
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor> {
        let p = ops::ConvParams::new(kernel.clone(), bias.clone(), stride, padding)?;
        ops::conv2d(input, &p)
    }

    fn depthwise_conv2d(
        &mut self,
        input: &Tensor,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor> {
        ops::depthwise_conv2d(input, kernel, bias, stride, padding)
    }

    fn batch_norm(
        &mut self,
        input: &Tensor,
        gamma: &Tensor,
        beta: &Tensor,
        params: &BatchNormParams,
        mode: Mode,
    ) -> Result<(Tensor, Option<BatchStats>)> {
        let view = bn_params_view(gamma, beta, params);
        let fwd = ops::batch_norm_forward(input, &view, mode)?;
        Ok((fwd.output, fwd.stats))
    }

    fn relu(&mut self, input: &Tensor) -> Result<Tensor> {
        Ok(ops::relu(input))
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn global_avg_pool(&mut self, input: &Tensor) -> Result<Tensor> {
        ops::global_avg_pool(input)
    }

    fn dense(&mut self, input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
        ops::dense(input, weights, bias)
    }

    fn softmax(&mut self, logits: &Tensor) -> Result<Tensor> {
        ops::softmax(logits)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    },
    Depthwise {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: Padding,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        params: BatchNormParams,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Pool {
        input: Var,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    Softmax {
        logits: Var,
    },
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward pass for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Named parameters in registration order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Mean softmax cross-entropy of `logits` against `labels`; a scalar node.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value_of(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// Mean cross-entropy of an already-normalized probability node.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let loss = ops::cross_entropy(self.value_of(probs), labels)?;
        Ok(self.push(
            Tensor::scalar(loss as f32),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn value_of(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradients of the scalar node `loss` with respect to every recorded value.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_var(loss)?;
        if self.value_of(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}; use backward_with",
                self.value_of(loss).shape()
            )));
        }
        self.backward_with(loss, Tensor::full(self.value_of(loss).shape(), 1.0))
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if !self.nodes.iter().any(|n| !matches!(n.op, Op::Leaf)) {
            return Err(Error::Usage("backward called before any forward op was recorded".into()));
        }
        if v.0 >= self.nodes.len() {
            return Err(Error::Usage(format!("value {} is not on this tape", v.0)));
        }
        Ok(())
    }

    /// Propagates an explicit output cotangent back through the tape.
    pub fn backward_with(&self, output: Var, cotangent: Tensor) -> Result<Gradients> {
        self.check_var(output)?;
        self.value_of(output).require_same_shape(&cotangent)?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(cotangent);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let contributions: Vec<(Var, Tensor)> = match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let p = ops::ConvParams::new(
                        self.value_of(*kernel).clone(),
                        self.value_of(*bias).clone(),
                        *stride,
                        *padding,
                    )?;
                    let cg = ops::conv2d_backward(self.value_of(*input), &p, &g)?;
                    vec![(*input, cg.input), (*kernel, cg.kernel), (*bias, cg.bias)]
                }
                Op::Depthwise {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let cg = ops::depthwise_conv2d_backward(
                        self.value_of(*input),
                        self.value_of(*kernel),
                        *stride,
                        *padding,
                        &g,
                    )?;
                    vec![(*input, cg.input), (*kernel, cg.kernel), (*bias, cg.bias)]
                }
                Op::BatchNormTrain {
                    input,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    let bg = ops::batch_norm_backward(normalized, inv_std, self.value_of(*gamma), &g)?;
                    vec![(*input, bg.input), (*gamma, bg.gamma), (*beta, bg.beta)]
                }
                Op::BatchNormEval {
                    input,
                    gamma,
                    beta,
                    params,
                } => {
                    let view = bn_params_view(self.value_of(*gamma), self.value_of(*beta), params);
                    let bg = ops::batch_norm_eval_backward(self.value_of(*input), &view, &g)?;
                    vec![(*input, bg.input), (*gamma, bg.gamma), (*beta, bg.beta)]
                }
                Op::Relu { input } => vec![(*input, ops::relu_backward(self.value_of(*input), &g)?)],
                Op::Add { a, b } => vec![(*a, g.clone()), (*b, g.clone())],
                Op::Pool { input } => vec![(
                    *input,
                    ops::global_avg_pool_backward(self.value_of(*input).shape(), &g)?,
                )],
                Op::Dense {
                    input,
                    weights,
                    bias,
                } => {
                    let dg = ops::dense_backward(self.value_of(*input), self.value_of(*weights), &g)?;
                    vec![(*input, dg.input), (*weights, dg.weights), (*bias, dg.bias)]
                }
                Op::Softmax { logits } => {
                    vec![(*logits, ops::softmax_backward(&node.value, &g)?)]
                }
                Op::CrossEntropy { probs, labels } => {
                    let d = ops::cross_entropy_backward(self.value_of(*probs), labels)?;
                    vec![(*probs, d.scale(g.data()[0]))]
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let d = ops::softmax_cross_entropy_backward(probs, labels)?;
                    vec![(*logits, d.scale(g.data()[0]))]
                }
            };
            grads[idx] = Some(g);
            for (target, delta) in contributions {
                let slot = &mut grads[target.0];
                *slot = Some(match slot.take() {
                    Some(acc) => acc.add(&delta)?,
                    None => delta,
                });
            }
        }
        Ok(Gradients { grads })
    }
}

/// Result of a backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the value does not influence the differentiated output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Graph for Tape {
    type Value = Var;

    fn input(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor)
    }

    fn param(&mut self, name: &str, tensor: &Tensor) -> Var {
        let v = self.leaf(tensor.clone());
        self.params.push((name.to_string(), v));
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.value_of(*v)
    }

    fn conv2d(
        &mut self,
        input: &Var,
        kernel: &Var,
        bias: &Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let p = ops::ConvParams::new(
            self.value_of(*kernel).clone(),
            self.value_of(*bias).clone(),
            stride,
            padding,
        )?;
        let out = ops::conv2d(self.value_of(*input), &p)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input: *input,
                kernel: *kernel,
                bias: *bias,
                stride,
                padding,
            },
        ))
    }

    fn depthwise_conv2d(
        &mut self,
        input: &Var,
        kernel: &Var,
        bias: &Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let out = ops::depthwise_conv2d(
            self.value_of(*input),
            self.value_of(*kernel),
            self.value_of(*bias),
            stride,
            padding,
        )?;
        Ok(self.push(
            out,
            Op::Depthwise {
                input: *input,
                kernel: *kernel,
                bias: *bias,
                stride,
                padding,
            },
        ))
    }

    fn batch_norm(
        &mut self,
        input: &Var,
        gamma: &Var,
        beta: &Var,
        params: &BatchNormParams,
        mode: Mode,
    ) -> Result<(Var, Option<BatchStats>)> {
        let view = bn_params_view(self.value_of(*gamma), self.value_of(*beta), params);
        let fwd = ops::batch_norm_forward(self.value_of(*input), &view, mode)?;
        let op = match mode {
            Mode::Train => Op::BatchNormTrain {
                input: *input,
                gamma: *gamma,
                beta: *beta,
                normalized: fwd.normalized.expect("train mode keeps normalized input"),
                inv_std: fwd.inv_std,
            },
            Mode::Eval => Op::BatchNormEval {
                input: *input,
                gamma: *gamma,
                beta: *beta,
                params: view,
            },
        };
        Ok((self.push(fwd.output, op), fwd.stats))
    }

    fn relu(&mut self, input: &Var) -> Result<Var> {
        let out = ops::relu(self.value_of(*input));
        Ok(self.push(out, Op::Relu { input: *input }))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let out = self.value_of(*a).add(self.value_of(*b))?;
        Ok(self.push(out, Op::Add { a: *a, b: *b }))
    }

    fn global_avg_pool(&mut self, input: &Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value_of(*input))?;
        Ok(self.push(out, Op::Pool { input: *input }))
    }

    fn dense(&mut self, input: &Var, weights: &Var, bias: &Var) -> Result<Var> {
        let out = ops::dense(self.value_of(*input), self.value_of(*weights), self.value_of(*bias))?;
        Ok(self.push(
            out,
            Op::Dense {
                input: *input,
                weights: *weights,
                bias: *bias,
            },
        ))
    }

    fn softmax(&mut self, logits: &Var) -> Result<Var> {
        let out = ops::softmax(self.value_of(*logits))?;
        Ok(self.push(out, Op::Softmax { logits: *logits }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_before_forward_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn relu_gradient_is_piecewise() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![2.0, -2.0]).unwrap());
        let y = tape.relu(&x).unwrap();
        let g = tape
            .backward_with(y, Tensor::new(vec![2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn fused_loss_gradient_on_logits() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::zeros(&[1, 3]));
        let loss = tape.softmax_cross_entropy(z, &[0]).unwrap();
        let g = tape.backward(loss).unwrap();
        let expect = [-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in g.get(z).unwrap().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_then_cross_entropy_matches_fused() {
        let logits = Tensor::new(vec![2, 3], vec![0.3, -1.2, 2.0, 0.0, 0.5, -0.5]).unwrap();
        let labels = [2, 1];
        let mut tape = Tape::new();
        let z = tape.leaf(logits.clone());
        let p = tape.softmax(&z).unwrap();
        let loss = tape.cross_entropy(p, &labels).unwrap();
        let split = tape.backward(loss).unwrap();

        let mut fused_tape = Tape::new();
        let z2 = fused_tape.leaf(logits);
        let loss2 = fused_tape.softmax_cross_entropy(z2, &labels).unwrap();
        let fused = fused_tape.backward(loss2).unwrap();
        assert!(split.get(z).unwrap().max_abs_diff(fused.get(z2).unwrap()) < 1e-6);
    }

    #[test]
    fn fan_out_accumulates() {
        // y = x + x  =>  dy/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap());
        let y = tape.add(&x, &x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }
}
