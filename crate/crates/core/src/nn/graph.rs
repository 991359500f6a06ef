//! Reverse-mode autodiff tape.
//!
//! Every operation appends a node holding its output and whatever it needs
//! for the backward pass. Nodes are only ever appended, so index order is a
//! topological order and the backward sweep simply walks the tape in reverse.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// An operation implemented outside the tape, e.g. the quantum excitation.
///
/// `backward` receives the forward inputs and output plus dL/d(output) and
/// returns dL/d(input) for each input, in order.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input: Var,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    ChannelScale {
        input: Var,
        scale: Var,
    },
    Reshape {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.0[var.0].as_deref()
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.0[var.0].take()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid_scalar(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Elementwise logistic function, branch-wise so neither tail overflows.
pub fn sigmoid(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&t| sigmoid_scalar(t)).collect()
}

/// Row-wise softmax of an `[N, K]` array with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let &[n, k] = logits.shape() else {
        return Err(Error::Shape(format!(
            "softmax expects [N, K], got {:?}",
            logits.shape()
        )));
    };
    let mut out = vec![0.0; n * k];
    for (row, dst) in logits.data().chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &z) in dst.iter_mut().zip(row) {
            *d = (z - max).exp();
            total += *d;
        }
        dst.iter_mut().for_each(|d| *d /= total);
    }
    Tensor::new(vec![n, k], out)
}

fn expect_rank<'a>(t: &'a Tensor, rank: usize, what: &str) -> Result<&'a [usize]> {
    if t.shape().len() != rank {
        return Err(Error::Shape(format!(
            "{what} expects a rank-{rank} tensor, got {:?}",
            t.shape()
        )));
    }
    Ok(t.shape())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Valid cross-correlation, stride 1, no padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let &[n, c_in, h, wd] = expect_rank(x, 4, "conv2d input")? else {
            unreachable!()
        };
        let &[c_out, wc_in, k, k2] = expect_rank(w, 4, "conv2d weight")? else {
            unreachable!()
        };
        if wc_in != c_in || k != k2 || b.shape() != [c_out] || k > h || k > wd || k == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let (oh, ow) = (h - k + 1, wd - k + 1);
        let (xd, wdat, bd) = (x.data(), w.data(), b.data());
        let mut out = vec![0.0; n * c_out * oh * ow];
        for s in 0..n {
            for co in 0..c_out {
                let dst = &mut out[(s * c_out + co) * oh * ow..][..oh * ow];
                dst.iter_mut().for_each(|v| *v = bd[co]);
                for ci in 0..c_in {
                    let plane = &xd[(s * c_in + ci) * h * wd..][..h * wd];
                    for ki in 0..k {
                        for kj in 0..k {
                            let wv = wdat[((co * c_in + ci) * k + ki) * k + kj];
                            for r in 0..oh {
                                let src = &plane[(r + ki) * wd + kj..][..ow];
                                let row = &mut dst[r * ow..][..ow];
                                for (o, &v) in row.iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            }
                        }
                    }
                }
            }
        }
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::new(vec![n, c_out, oh, ow], out)?;
        Ok(self.push(
            value,
            rg,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
        ))
    }

    /// 2×2 max pooling with stride 2. Ties go to the first cell in row-major order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[n, c, h, w] = expect_rank(x, 4, "max_pool2")? else {
            unreachable!()
        };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "max_pool2 needs even spatial dims, got {h}×{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = x.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for r in 0..oh {
                for col in 0..ow {
                    let mut best = base + 2 * r * w + 2 * col;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * r + dr) * w + 2 * col + dc;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.needs(input);
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push(value, rg, Op::MaxPool2 { input, argmax }))
    }

    /// Spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let &[n, c, h, w] = expect_rank(x, 4, "global_avg_pool")? else {
            unreachable!()
        };
        if h == 0 || w == 0 {
            return Err(Error::Shape("global_avg_pool over an empty map".into()));
        }
        let area = (h * w) as f64;
        let out = x
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().sum::<f64>() / area)
            .collect();
        let rg = self.needs(input);
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, rg, Op::GlobalAvgPool { input }))
    }

    /// `[N, d_in] × [d_out, d_in]ᵀ + [d_out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let &[n, d_in] = expect_rank(x, 2, "linear input")? else {
            unreachable!()
        };
        let &[d_out, w_in] = expect_rank(w, 2, "linear weight")? else {
            unreachable!()
        };
        if w_in != d_in || b.shape() != [d_out] {
            return Err(Error::Shape(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            )));
        }
        let mut out = Vec::with_capacity(n * d_out);
        for row in x.data().chunks(d_in) {
            for (o, wrow) in w.data().chunks(d_in).enumerate() {
                let dot: f64 = row.iter().zip(wrow).map(|(a, b)| a * b).sum();
                out.push(dot + b.data()[o]);
            }
        }
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        let value = Tensor::new(vec![n, d_out], out)?;
        Ok(self.push(
            value,
            rg,
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = x
            .data()
            .iter()
            .map(|&v| if v < 0.0 { 0.0 } else { v })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(input);
        self.push(value, rg, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let value = Tensor::new(x.shape().to_vec(), sigmoid(x.data())).expect("same shape");
        let rg = self.needs(input);
        self.push(value, rg, Op::Sigmoid { input })
    }

    /// Inverted dropout. In eval mode (or with `p == 0`) this returns `input`
    /// itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - p);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(input);
        Ok(self.push(value, rg, Op::Dropout { input, mask }))
    }

    /// `x[n, c, :, :] * s[n, c]`.
    pub fn channel_scale(&mut self, input: Var, scale: Var) -> Result<Var> {
        let x = self.value(input);
        let s = self.value(scale);
        let &[n, c, h, w] = expect_rank(x, 4, "channel_scale input")? else {
            unreachable!()
        };
        if s.shape() != [n, c] {
            return Err(Error::Shape(format!(
                "channel_scale: input {:?}, scale {:?}",
                x.shape(),
                s.shape()
            )));
        }
        let mut out = x.data().to_vec();
        for (plane, &sv) in out.chunks_mut(h * w).zip(s.data()) {
            plane.iter_mut().for_each(|v| *v *= sv);
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.needs(input) || self.needs(scale);
        Ok(self.push(value, rg, Op::ChannelScale { input, scale }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        let rg = self.needs(input);
        Ok(self.push(value, rg, Op::Reshape { input }))
    }

    /// `[N, C, H, W] -> [N, C·H·W]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>();
        self.reshape(input, &[n, rest])
    }

    /// Mean cross-entropy of softmax(logits) against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let &[n, k] = expect_rank(z, 2, "softmax_cross_entropy")? else {
            unreachable!()
        };
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} logit rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let mut total = 0.0;
        for (row, &label) in z.data().chunks(k).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let probs = softmax(z)?.into_data();
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            rg,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Records an externally computed value whose backward is `op`.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = inputs.iter().any(|&v| self.needs(v));
        self.push(
            output,
            rg,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Backpropagates from a scalar `root`, seeding dL/dL = 1.
    pub fn backward(&self, root: Var) -> Gradients {
        self.backward_with(root, vec![1.0; self.value(root).numel()])
    }

    /// Backpropagates an arbitrary cotangent for `root`.
    pub fn backward_with(&self, root: Var, seed: Vec<f64>) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        assert_eq!(seed.len(), self.value(root).numel(), "seed shape");
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let mut acc = |var: Var, delta: Vec<f64>| {
                if !self.needs(var) {
                    return;
                }
                match &mut grads[var.0] {
                    Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            };
            self.backward_node(node, &g, &mut acc);
            grads[idx] = Some(g);
        }
        Gradients(grads)
    }

    fn backward_node(&self, node: &Node, g: &[f64], acc: &mut dyn FnMut(Var, Vec<f64>)) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let &[n, c_in, h, wd] = x.shape() else {
                    unreachable!()
                };
                let &[c_out, _, k, _] = w.shape() else {
                    unreachable!()
                };
                let (oh, ow) = (h - k + 1, wd - k + 1);
                let want_x = self.needs(*input);
                let mut gx = if want_x {
                    vec![0.0; x.numel()]
                } else {
                    Vec::new()
                };
                let mut gw = vec![0.0; w.numel()];
                let mut gb = vec![0.0; c_out];
                for s in 0..n {
                    for co in 0..c_out {
                        let gplane = &g[(s * c_out + co) * oh * ow..][..oh * ow];
                        gb[co] += gplane.iter().sum::<f64>();
                        for ci in 0..c_in {
                            let xoff = (s * c_in + ci) * h * wd;
                            for ki in 0..k {
                                for kj in 0..k {
                                    let widx = ((co * c_in + ci) * k + ki) * k + kj;
                                    let wv = w.data()[widx];
                                    let mut sum = 0.0;
                                    for r in 0..oh {
                                        let grow = &gplane[r * ow..][..ow];
                                        let start = xoff + (r + ki) * wd + kj;
                                        let xrow = &x.data()[start..][..ow];
                                        sum +=
                                            grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                        if want_x {
                                            let gxrow = &mut gx[start..][..ow];
                                            for (dst, &gv) in gxrow.iter_mut().zip(grow) {
                                                *dst += wv * gv;
                                            }
                                        }
                                    }
                                    gw[widx] += sum;
                                }
                            }
                        }
                    }
                }
                if want_x {
                    acc(*input, gx);
                }
                acc(*weight, gw);
                acc(*bias, gb);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut gx = vec![0.0; self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] += gv;
                }
                acc(*input, gx);
            }
            Op::GlobalAvgPool { input } => {
                let x = self.value(*input);
                let area = x.shape()[2] * x.shape()[3];
                let mut gx = vec![0.0; x.numel()];
                for (plane, &gv) in gx.chunks_mut(area).zip(g) {
                    plane.iter_mut().for_each(|v| *v = gv / area as f64);
                }
                acc(*input, gx);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let &[n, d_in] = x.shape() else {
                    unreachable!()
                };
                let d_out = w.shape()[0];
                if self.needs(*input) {
                    let mut gx = vec![0.0; n * d_in];
                    for (grow, gxrow) in g.chunks(d_out).zip(gx.chunks_mut(d_in)) {
                        for (&gv, wrow) in grow.iter().zip(w.data().chunks(d_in)) {
                            if gv != 0.0 {
                                gxrow
                                    .iter_mut()
                                    .zip(wrow)
                                    .for_each(|(d, &wv)| *d += gv * wv);
                            }
                        }
                    }
                    acc(*input, gx);
                }
                let mut gw = vec![0.0; d_out * d_in];
                let mut gb = vec![0.0; d_out];
                for (grow, xrow) in g.chunks(d_out).zip(x.data().chunks(d_in)) {
                    for ((&gv, gwrow), gbv) in
                        grow.iter().zip(gw.chunks_mut(d_in)).zip(gb.iter_mut())
                    {
                        *gbv += gv;
                        if gv != 0.0 {
                            gwrow
                                .iter_mut()
                                .zip(xrow)
                                .for_each(|(d, &xv)| *d += gv * xv);
                        }
                    }
                }
                acc(*weight, gw);
                acc(*bias, gb);
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let gx = x
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                acc(*input, gx);
            }
            Op::Sigmoid { input } => {
                let gx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                acc(*input, gx);
            }
            Op::Dropout { input, mask } => {
                acc(*input, g.iter().zip(mask).map(|(a, m)| a * m).collect());
            }
            Op::ChannelScale { input, scale } => {
                let x = self.value(*input);
                let s = self.value(*scale);
                let area = x.shape()[2] * x.shape()[3];
                if self.needs(*input) {
                    let mut gx = g.to_vec();
                    for (plane, &sv) in gx.chunks_mut(area).zip(s.data()) {
                        plane.iter_mut().for_each(|v| *v *= sv);
                    }
                    acc(*input, gx);
                }
                let gs = g
                    .chunks(area)
                    .zip(x.data().chunks(area))
                    .map(|(gp, xp)| gp.iter().zip(xp).map(|(a, b)| a * b).sum())
                    .collect();
                acc(*scale, gs);
            }
            Op::Reshape { input } => acc(*input, g.to_vec()),
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / n as f64;
                let mut gz: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &label) in labels.iter().enumerate() {
                    gz[row * k + label] -= scale;
                }
                acc(*logits, gz);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let input_grads = op.backward(&values, &node.value, g);
                for (&var, gi) in inputs.iter().zip(input_grads) {
                    acc(var, gi);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{max_relative_error, numerical_gradient};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Checks the gradient of `sum(output * weights)` for every input of a
    /// small graph built by `build`.
    fn check<F>(inputs: Vec<Tensor>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let out = build(&mut g, &vars);
        let cot: Vec<f64> = (0..g.value(out).numel())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let grads = g.backward_with(out, cot.clone());

        for (i, t) in inputs.iter().enumerate() {
            let numeric = numerical_gradient(t.data(), 1e-4, |perturbed| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let value = if i == j {
                            Tensor::new(t.shape().to_vec(), perturbed.to_vec()).unwrap()
                        } else {
                            t.clone()
                        };
                        g.leaf(value, true)
                    })
                    .collect();
                let out = build(&mut g, &vars);
                g.value(out)
                    .data()
                    .iter()
                    .zip(&cot)
                    .map(|(a, b)| a * b)
                    .sum()
            });
            let err = max_relative_error(grads.get(vars[i]).unwrap(), &numeric);
            assert!(err < 1e-5, "input {i}: relative error {err}");
        }
    }

    #[test]
    fn conv2d_values() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0), false);
        let w = g.leaf(Tensor::full(&[1, 1, 1, 1], 2.0), false);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(g.value(y), &Tensor::full(&[1, 1, 3, 3], 2.0));

        let w = g.leaf(Tensor::zeros(&[2, 1, 2, 2]), false);
        let b = g.leaf(Tensor::new(vec![2], vec![0.7, -1.5]).unwrap(), false);
        let y = g.conv2d(x, w, b).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[0.7, 0.7, 0.7, 0.7, -1.5, -1.5, -1.5, -1.5]
        );
    }

    #[test]
    fn conv2d_shape_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 2, 3, 3]), false);
        let w = g.leaf(Tensor::zeros(&[1, 1, 2, 2]), false);
        let b = g.leaf(Tensor::zeros(&[1]), false);
        assert!(g.conv2d(x, w, b).is_err());
        let w = g.leaf(Tensor::zeros(&[1, 2, 4, 4]), false);
        assert!(g.conv2d(x, w, b).is_err());
    }

    #[test]
    fn conv2d_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![
            random(&[2, 2, 5, 6], &mut rng),
            random(&[3, 2, 3, 3], &mut rng),
            random(&[3], &mut rng),
        ];
        check(inputs, |g, v| g.conv2d(v[0], v[1], v[2]).unwrap());
    }

    #[test]
    fn global_avg_pool_values_and_backward() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let y = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5]);
        let grads = g.backward(y);
        assert_eq!(grads.get(x).unwrap(), &[0.25; 4]);

        let c = g.leaf(Tensor::full(&[2, 3, 4, 5], -1.25), false);
        let y = g.global_avg_pool(c).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn max_pool_values_and_ties() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let y = g.max_pool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);

        let c = g.leaf(Tensor::full(&[1, 1, 4, 4], 3.0), true);
        let y = g.max_pool2(c).unwrap();
        assert_eq!(g.value(y), &Tensor::full(&[1, 1, 2, 2], 3.0));
        let grads = g.backward_with(y, vec![1.0; 4]);
        let gc = grads.get(c).unwrap();
        let firsts = [0, 2, 8, 10];
        for (i, &v) in gc.iter().enumerate() {
            assert_eq!(v, if firsts.contains(&i) { 1.0 } else { 0.0 });
        }

        let odd = g.leaf(Tensor::zeros(&[1, 1, 3, 2]), false);
        assert!(g.max_pool2(odd).is_err());
    }

    #[test]
    fn max_pool_gradients() {
        // Distinct values keep every window away from a tie.
        let data: Vec<f64> = (0..2 * 3 * 4 * 6)
            .map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0)
            .collect();
        check(
            vec![Tensor::new(vec![2, 3, 4, 6], data).unwrap()],
            |g, v| g.max_pool2(v[0]).unwrap(),
        );
    }

    #[test]
    fn linear_values_and_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap(),
            false,
        );
        let w = g.leaf(Tensor::zeros(&[4, 3]), false);
        let b = g.leaf(Tensor::zeros(&[4]), false);
        let y = g.linear(x, w, b).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let w = g.leaf(eye, false);
        let b = g.leaf(Tensor::zeros(&[3]), false);
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![
            random(&[3, 5], &mut rng),
            random(&[4, 5], &mut rng),
            random(&[4], &mut rng),
        ];
        check(inputs, |g, v| g.linear(v[0], v[1], v[2]).unwrap());
    }

    #[test]
    fn activations() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![3], vec![0.0, -2.0, 800.0]).unwrap(), false);
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(s).data()[2], 1.0);
        assert_eq!(sigmoid(&[-800.0])[0], 0.0);
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 800.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Keep relu inputs away from its kink.
        let t = random(&[4, 6], &mut rng);
        let t = Tensor::new(
            vec![4, 6],
            t.data().iter().map(|v| v + 0.1 * v.signum()).collect(),
        )
        .unwrap();
        check(vec![t.clone()], |g, v| g.relu(v[0]));
        check(vec![t], |g, v| g.sigmoid(v[0]));
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let x = g.leaf(random(&[8, 8], &mut rng), true);
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(g.dropout(x, -0.1, true, &mut rng).is_err());

        let y = g.dropout(x, 0.5, true, &mut rng).unwrap();
        let grads = g.backward_with(y, vec![1.0; 64]);
        for ((&yv, &xv), &gv) in g
            .value(y)
            .data()
            .iter()
            .zip(g.value(x).data())
            .zip(grads.get(x).unwrap())
        {
            assert!(yv == 0.0 && gv == 0.0 || (yv - 2.0 * xv).abs() < 1e-15 && gv == 2.0);
        }
    }

    #[test]
    fn dropout_is_unbiased() {
        // Mean of 20,000 kept-or-dropped copies of 1.0 should be 1 within 3σ.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 0.5;
        let n = 20_000;
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[n], 1.0), false);
        let y = g.dropout(x, p, true, &mut rng).unwrap();
        let mean = g.value(y).data().iter().sum::<f64>() / n as f64;
        let sigma = (p / (1.0 - p) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn channel_scale_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = vec![random(&[2, 3, 2, 3], &mut rng), random(&[2, 3], &mut rng)];
        check(inputs, |g, v| g.channel_scale(v[0], v[1]).unwrap());
    }

    #[test]
    fn global_avg_pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        check(vec![random(&[2, 3, 3, 2], &mut rng)], |g, v| {
            g.global_avg_pool(v[0]).unwrap()
        });
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[3, 10]), true);
        let loss = g.softmax_cross_entropy(z, &[0, 4, 9]).unwrap();
        assert!((g.value(loss).item() - 10f64.ln()).abs() < 1e-12);

        let mut big = Tensor::zeros(&[1, 10]);
        big.data_mut()[3] = 1e4;
        let z2 = g.leaf(big, false);
        let loss = g.softmax_cross_entropy(z2, &[3]).unwrap();
        assert!(g.value(loss).item().abs() < 1e-12);

        assert!(g.softmax_cross_entropy(z, &[0, 4, 10]).is_err());
        assert!(g.softmax_cross_entropy(z, &[0]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_at_uniform_logits() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::zeros(&[1, 4]), true);
        let loss = g.softmax_cross_entropy(z, &[2]).unwrap();
        let grads = g.backward(loss);
        assert_eq!(grads.get(z).unwrap(), &[0.25, 0.25, -0.75, 0.25]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        check(vec![random(&[3, 5], &mut rng)], |g, v| {
            g.softmax_cross_entropy(v[0], &[1, 4, 0]).unwrap()
        });
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Tensor::new(
            vec![5, 7],
            (0..35).map(|_| rng.gen_range(-30.0..30.0)).collect(),
        )
        .unwrap();
        let p = softmax(&z).unwrap();
        for row in p.data().chunks(7) {
            assert!(row.iter().all(|&v| v > 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reused_value_accumulates_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(
            Tensor::new(vec![1, 1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap(),
            true,
        );
        let pooled = g.global_avg_pool(x).unwrap();
        let y = g.channel_scale(x, pooled).unwrap();
        let grads = g.backward_with(y, vec![1.0; 4]);
        // d/dx_i sum_j x_j * mean(x) = mean(x) + sum(x) / 4
        let expected = 0.625 + 2.5 / 4.0;
        for &v in grads.get(x).unwrap() {
            assert!((v - expected).abs() < 1e-15);
        }
    }
}
