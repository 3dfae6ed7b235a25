use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::ops::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Log(usize),
    Exp(usize),
    Relu(usize),
    Sigmoid(usize),
    LogSigmoid(usize),
    Conv2d { input: usize, kernel: usize, geom: ConvGeom, cols: Option<Vec<T>> },
    AddChannelBias { input: usize, bias: usize },
    Resize { input: usize },
    AdaptiveAvgPool { input: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    BatchNormTrain { gamma: usize, beta: usize, input: usize, xhat: Vec<T>, inv_std: Vec<T> },
    BatchNormEval { input: usize, gamma: usize, beta: usize, xhat: Vec<T>, scale: Vec<T> },
    Softmax { input: usize, axis: usize },
    LogSoftmax { input: usize, axis: usize },
    Sum(usize),
    Mean(usize),
    SumAxis { input: usize, axis: usize },
    MaxAxis { input: usize, axis: usize, arg: Vec<usize> },
    ExpandAxis { input: usize, axis: usize },
    Linear { x: usize, w: usize, b: usize },
    Dropout { input: usize, mask: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed primitives, replayed in reverse by
/// [`Tape::grad`].
///
/// A tape is single-writer; independent tapes can be used concurrently.
pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Which side of zero every recorded relu input lies on.
    ///
    /// Two evaluations with equal patterns lie in the same smooth piece of
    /// the recorded function.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(&self.nodes[a].value),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.idx)
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.tape, self.id, "variable used on a foreign tape");
        &self.nodes[v.idx]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// Records a leaf; gradients flow into it iff `tensor.requires_grad`.
    pub fn var(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad;
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a leaf that gradients flow into.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        self.var(tensor.with_grad())
    }

    /// Records a leaf that gradients never flow into.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.var(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    // -- elementwise ------------------------------------------------------

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(op, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |p, q| p + q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a.idx, b.idx), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |p, q| p - q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a.idx, b.idx), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |p, q| p * q)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a.idx, b.idx), rg))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Scale(a.idx, k), rg))
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v + k);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::AddScalar(a.idx), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        Ok(self.push(out, op, rg))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, T::ln, Op::Log(a.idx))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, T::exp, Op::Exp(a.idx))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |v| v.max(T::zero()), Op::Relu(a.idx))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, ops::sigmoid_scalar, Op::Sigmoid(a.idx))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, ops::log_sigmoid_scalar, Op::LogSigmoid(a.idx))
    }

    // -- layers -----------------------------------------------------------

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        let geom = ConvGeom::new(self.value(input), self.value(kernel), stride, padding)?;
        let keep = self.node(kernel).requires_grad;
        let (out, cols) = ops::conv2d_forward(self.value(input), self.value(kernel), &geom, keep);
        let rg = self.rg(&[input, kernel]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input: input.idx,
                kernel: kernel.idx,
                geom,
                cols,
            },
            rg,
        ))
    }

    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        self.check(input)?;
        self.check(bias)?;
        let out = ops::add_channel_bias(self.value(input), self.value(bias))?;
        let rg = self.rg(&[input, bias]);
        Ok(self.push(
            out,
            Op::AddChannelBias {
                input: input.idx,
                bias: bias.idx,
            },
            rg,
        ))
    }

    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check(input)?;
        let out = ops::resize_bilinear(self.value(input), out_h, out_w)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Resize { input: input.idx }, rg))
    }

    pub fn bilinear_upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        self.check(input)?;
        let (_, _, h, w) = self.value(input).dims4("bilinear_upsample")?;
        if factor == 0 {
            return Err(Error::invalid("bilinear_upsample", "factor must be at least 1"));
        }
        self.resize_bilinear(input, h * factor, w * factor)
    }

    pub fn adaptive_avg_pool(&mut self, input: Var, grid_h: usize, grid_w: usize) -> Result<Var> {
        self.check(input)?;
        let out = ops::adaptive_avg_pool(self.value(input), grid_h, grid_w)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::AdaptiveAvgPool { input: input.idx }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat(&vals, axis)?;
        let rg = self.rg(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.idx).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Batch normalization over batch statistics. Also returns the observed
    /// statistics so the caller can fold them into running estimates.
    pub fn batch_norm_train(&mut self, input: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats<T>)> {
        for v in [input, gamma, beta] {
            self.check(v)?;
        }
        let bn = ops::batch_norm_train(self.value(input), self.value(gamma), self.value(beta))?;
        let rg = self.rg(&[input, gamma, beta]);
        let stats = BatchStats {
            mean: bn.mean,
            var: bn.var_unbiased,
        };
        let v = self.push(
            bn.out,
            Op::BatchNormTrain {
                gamma: gamma.idx,
                beta: beta.idx,
                input: input.idx,
                xhat: bn.xhat,
                inv_std: bn.inv_std,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Batch normalization with fixed running statistics.
    pub fn batch_norm_eval(&mut self, input: Var, gamma: Var, beta: Var, mean: &Tensor<T>, var: &Tensor<T>) -> Result<Var> {
        for v in [input, gamma, beta] {
            self.check(v)?;
        }
        let x = self.value(input);
        let out = ops::batch_norm_eval(x, self.value(gamma), self.value(beta), mean, var)?;
        let inv: Vec<T> = var.data().iter().map(|&v| T::one() / (v + T::lit(ops::BN_EPS)).sqrt()).collect();
        let (c, hw) = (x.shape()[1], x.shape()[2] * x.shape()[3]);
        let mut xhat = x.data().to_vec();
        for (i, chunk) in xhat.chunks_mut(hw).enumerate() {
            let ch = i % c;
            for v in chunk {
                *v = (*v - mean.data()[ch]) * inv[ch];
            }
        }
        let scale = self.value(gamma).data().iter().zip(&inv).map(|(&g, &i)| g * i).collect();
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNormEval {
                input: input.idx,
                gamma: gamma.idx,
                beta: beta.idx,
                xhat,
                scale,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check(input)?;
        let out = ops::softmax(self.value(input), axis)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Softmax { input: input.idx, axis }, rg))
    }

    pub fn log_softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check(input)?;
        let out = ops::log_softmax(self.value(input), axis)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::LogSoftmax { input: input.idx, axis }, rg))
    }

    /// Sum of all elements, as a single-element tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let out = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Sum(input.idx), rg))
    }

    pub fn mean(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let x = self.value(input);
        let out = Tensor::scalar(x.sum() / T::lit(x.numel() as f64));
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Mean(input.idx), rg))
    }

    pub fn sum_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check(input)?;
        let out = ops::sum_axis(self.value(input), axis)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::SumAxis { input: input.idx, axis }, rg))
    }

    pub fn max_axis(&mut self, input: Var, axis: usize) -> Result<Var> {
        self.check(input)?;
        let (out, arg) = ops::max_axis(self.value(input), axis)?;
        let rg = self.rg(&[input]);
        Ok(self.push(
            out,
            Op::MaxAxis {
                input: input.idx,
                axis,
                arg,
            },
            rg,
        ))
    }

    pub fn expand_axis(&mut self, input: Var, axis: usize, times: usize) -> Result<Var> {
        self.check(input)?;
        let out = ops::expand_axis(self.value(input), axis, times)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::ExpandAxis { input: input.idx, axis }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        for v in [x, w, b] {
            self.check(v)?;
        }
        let out = ops::linear(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(
            out,
            Op::Linear {
                x: x.idx,
                w: w.idx,
                b: b.idx,
            },
            rg,
        ))
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, rng: &mut R) -> Result<Var> {
        self.check(input)?;
        let (out, mask) = ops::dropout(self.value(input), p, rng)?;
        let rg = self.rg(&[input]);
        Ok(self.push(out, Op::Dropout { input: input.idx, mask }, rg))
    }

    // -- reverse pass -----------------------------------------------------

    /// Reverse-mode gradients of a single-element `output` w.r.t. `inputs`.
    ///
    /// Inputs that do not influence `output` receive zero gradients.
    pub fn grad(&self, output: Var, inputs: &[Var]) -> Result<Vec<Tensor<T>>> {
        let out_idx = self.check(output)?;
        for &v in inputs {
            self.check(v)?;
            if !self.nodes[v.idx].requires_grad {
                return Err(Error::NoGrad);
            }
        }
        if self.nodes[out_idx].value.numel() != 1 {
            return Err(Error::invalid(
                "grad",
                format!("output must be a single element, got shape {:?}", self.nodes[out_idx].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=out_idx).map(|_| None).collect();
        grads[out_idx] = Some(Tensor::ones(self.nodes[out_idx].value.shape().to_vec()));
        for idx in (0..=out_idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(inputs
            .iter()
            .map(|v| {
                grads
                    .get_mut(v.idx)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[v.idx].value.shape().to_vec()))
            })
            .collect())
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let mut acc = |i: usize, d: Tensor<T>| {
            if !self.wants(i) {
                return;
            }
            match &mut grads[i] {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(d.data()) {
                        *e = *e + *v;
                    }
                }
                slot @ None => *slot = Some(d),
            }
        };
        let zip = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| {
            Tensor::from_parts(a.shape().to_vec(), a.data().iter().zip(g.data()).map(|(&x, &d)| f(x, d)).collect())
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    acc(*a, zip(val(*b), &|y, d| y * d));
                }
                if self.wants(*b) {
                    acc(*b, zip(val(*a), &|x, d| x * d));
                }
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * *k)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Log(a) => acc(*a, zip(val(*a), &|x, d| d / x)),
            Op::Exp(a) => acc(*a, zip(&node.value, &|y, d| y * d)),
            Op::Relu(a) => acc(*a, zip(val(*a), &|x, d| if x > T::zero() { d } else { T::zero() })),
            Op::Sigmoid(a) => acc(*a, zip(&node.value, &|s, d| d * s * (T::one() - s))),
            Op::LogSigmoid(a) => acc(*a, zip(val(*a), &|x, d| d * ops::sigmoid_scalar(-x))),
            Op::Conv2d { input, kernel, geom, cols } => {
                let (dx, dk) = ops::conv2d_backward(
                    val(*input),
                    val(*kernel),
                    cols.as_deref(),
                    geom,
                    g,
                    self.wants(*input),
                    self.wants(*kernel),
                );
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                if let Some(dk) = dk {
                    acc(*kernel, dk);
                }
            }
            Op::AddChannelBias { input, bias } => {
                acc(*input, g.clone());
                if self.wants(*bias) {
                    acc(*bias, Tensor::from_parts(vec![g.shape()[1]], ops::channel_sums(g)));
                }
            }
            Op::Resize { input } => acc(*input, ops::resize_bilinear_backward(val(*input).shape(), g)),
            Op::AdaptiveAvgPool { input } => acc(*input, ops::adaptive_avg_pool_backward(val(*input).shape(), g)),
            Op::Concat { inputs, axis } => {
                let shapes: Vec<Vec<usize>> = inputs.iter().map(|&i| val(i).shape().to_vec()).collect();
                for (&i, d) in inputs.iter().zip(ops::concat_backward(&shapes, *axis, g)) {
                    acc(i, d);
                }
            }
            Op::BatchNormTrain { gamma, beta, input, xhat, inv_std } => {
                let (dx, dgamma, dbeta) = ops::batch_norm_train_backward(val(*gamma), xhat, inv_std, g);
                acc(*input, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::BatchNormEval { input, gamma, beta, xhat, scale } => {
                let c = g.shape()[1];
                if self.wants(*input) {
                    acc(*input, ops::channel_affine(g, scale, &vec![T::zero(); c]));
                }
                let gx = Tensor::from_parts(g.shape().to_vec(), g.data().iter().zip(xhat).map(|(&d, &x)| d * x).collect());
                acc(*gamma, Tensor::from_parts(vec![c], ops::channel_sums(&gx)));
                acc(*beta, Tensor::from_parts(vec![c], ops::channel_sums(g)));
            }
            Op::Softmax { input, axis } => acc(*input, ops::softmax_backward(&node.value, g, *axis)),
            Op::LogSoftmax { input, axis } => acc(*input, ops::log_softmax_backward(&node.value, g, *axis)),
            Op::Sum(a) => acc(*a, Tensor::full(val(*a).shape().to_vec(), g.item())),
            Op::Mean(a) => {
                let n = T::lit(val(*a).numel() as f64);
                acc(*a, Tensor::full(val(*a).shape().to_vec(), g.item() / n));
            }
            Op::SumAxis { input, axis } => {
                let times = val(*input).shape()[*axis];
                acc(*input, ops::expand_axis(g, *axis, times).expect("keepdim sum has unit axis"));
            }
            Op::MaxAxis { input, axis, arg } => {
                let shape = val(*input).shape();
                let (outer, len, inner) = super::tensor::axis_split(shape, *axis);
                let mut d = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        d[(o * len + arg[o * inner + i]) * inner + i] = g.data()[o * inner + i];
                    }
                }
                acc(*input, Tensor::from_parts(shape.to_vec(), d));
            }
            Op::ExpandAxis { input, axis } => acc(*input, ops::sum_axis(g, *axis).expect("axis checked at record time")),
            Op::Linear { x, w, b } => {
                let (n, fin, fout) = ops::linear_dims(val(*x), val(*w), val(*b)).expect("checked at record time");
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, g.data(), false, val(*w).data(), false, T::zero(), &mut dx);
                    acc(*x, Tensor::from_parts(vec![n, fin], dx));
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, g.data(), true, val(*x).data(), false, T::zero(), &mut dw);
                    acc(*w, Tensor::from_parts(vec![fout, fin], dw));
                }
                if self.wants(*b) {
                    acc(*b, ops::sum_axis(g, 0).expect("rank 2").reshape(vec![fout]).expect("same size"));
                }
            }
            Op::Dropout { input, mask } => {
                acc(*input, Tensor::from_parts(g.shape().to_vec(), g.data().iter().zip(mask).map(|(&d, &m)| d * m).collect()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_is_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![2, 3], |i| i as f64));
        let s = tape.sum(x).unwrap();
        let g = tape.grad(s, &[x]).unwrap();
        assert_eq!(g[0], Tensor::ones(vec![2, 3]));
    }

    #[test]
    fn grad_of_sum_of_squares_is_twice_input() {
        let mut tape = Tape::<f64>::new();
        let xt = Tensor::from_fn(vec![4], |i| i as f64 - 1.5);
        let x = tape.leaf(xt.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.grad(s, &[x]).unwrap();
        assert_eq!(g[0], xt.map(|v| 2.0 * v));
    }

    #[test]
    fn foreign_and_non_grad_vars_are_rejected() {
        let mut a = Tape::<f32>::new();
        let mut b = Tape::<f32>::new();
        let xa = a.leaf(Tensor::ones(vec![2]));
        let xb = b.leaf(Tensor::ones(vec![2]));
        let c = a.constant(Tensor::ones(vec![2]));
        let s = a.sum(xa).unwrap();
        assert!(matches!(a.grad(s, &[xb]), Err(Error::NotOnTape)));
        assert!(matches!(a.grad(s, &[c]), Err(Error::NoGrad)));
        assert!(matches!(a.grad(xa, &[xa]), Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn unused_input_gets_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(vec![3]));
        let y = tape.leaf(Tensor::ones(vec![2]));
        let s = tape.sum(x).unwrap();
        let g = tape.grad(s, &[x, y]).unwrap();
        assert_eq!(g[1], Tensor::zeros(vec![2]));
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let run = || {
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::from_fn(vec![1, 2, 4, 4], |i| (i as f32 * 0.3).sin()));
            let k = tape.leaf(Tensor::from_fn(vec![3, 2, 3, 3], |i| (i as f32 * 0.7).cos()));
            let y = tape.conv2d(x, k, 1, 1).unwrap();
            let p = tape.softmax(y, 1).unwrap();
            let s = tape.sum(p).unwrap();
            let l = tape.log(s).unwrap();
            tape.grad(l, &[x, k]).unwrap()
        };
        assert_eq!(run(), run());
    }
}
