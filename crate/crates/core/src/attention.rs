//! Channel attention blocks: the classical squeeze-and-excitation block and
//! the quantum excitation block.
//!
//! Both squeeze the feature map with a global average pool, turn the
//! per-channel descriptor into weights S ∈ (0, 1)^C and rescale each channel
//! by its weight. They differ only in the excitation map:
//!
//! * SE: `sigmoid(W2 · relu(W1 · z + b1) + b2)`
//! * QAE: the descriptor z is split into n = C/3 contiguous triples, angle
//!   encoded onto n qubits, evolved by the variational circuit and read out
//!   as Pauli-Z expectations Q; then `sigmoid(W · Q + b)`.
//!
//! Parameters live in the model's [`Params`] under `attn.se.*`, `attn.vqc.*`
//! and `attn.out.*`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, sigmoid, BoundParams, CustomOp, Graph, Params, Tensor, Var};
use crate::quantum::{expectations, shift_rule_gradients, EncodingAngles, Entanglement, VqcParams};

pub const SE_FC1_WEIGHT: &str = "attn.se.fc1.weight";
pub const SE_FC1_BIAS: &str = "attn.se.fc1.bias";
pub const SE_FC2_WEIGHT: &str = "attn.se.fc2.weight";
pub const SE_FC2_BIAS: &str = "attn.se.fc2.bias";
pub const VQC_THETA: &str = "attn.vqc.theta";
pub const OUT_WEIGHT: &str = "attn.out.weight";
pub const OUT_BIAS: &str = "attn.out.bias";

/// Squeeze-and-excitation block with reduction ratio r.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeBlock {
    channels: usize,
    reduction: usize,
}

impl SeBlock {
    pub fn new(channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "SE block needs channels ({channels}) divisible by the reduction ratio ({reduction})"
            )));
        }
        Ok(Self {
            channels,
            reduction,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    pub fn count_params(&self) -> usize {
        let (c, h) = (self.channels, self.hidden());
        c * h + h + h * c + c
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut Params, rng: &mut R) {
        let (c, h) = (self.channels, self.hidden());
        params.insert(SE_FC1_WEIGHT, fan_in_uniform(&[h, c], c, rng));
        params.insert(SE_FC1_BIAS, Tensor::zeros(&[h]));
        params.insert(SE_FC2_WEIGHT, fan_in_uniform(&[c, h], h, rng));
        params.insert(SE_FC2_BIAS, Tensor::zeros(&[c]));
    }

    /// Attention weights S for input `x`, shaped `[N, C]`.
    pub fn weights(&self, graph: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        check_channels(graph, x, self.channels)?;
        let z = graph.global_avg_pool(x)?;
        let h = graph.linear(z, bound.var(SE_FC1_WEIGHT), bound.var(SE_FC1_BIAS))?;
        let h = graph.relu(h);
        let a = graph.linear(h, bound.var(SE_FC2_WEIGHT), bound.var(SE_FC2_BIAS))?;
        Ok(graph.sigmoid(a))
    }

    pub fn forward(&self, graph: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        let s = self.weights(graph, bound, x)?;
        graph.channel_scale(x, s)
    }
}

/// Quantum excitation block over C = 3n channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QaeBlock {
    channels: usize,
    layers: usize,
    entanglement: Entanglement,
    prescale: bool,
}

fn check_channels(graph: &Graph, x: Var, channels: usize) -> Result<()> {
    let shape = graph.value(x).shape();
    if shape.len() != 4 || shape[1] != channels {
        return Err(Error::Shape(format!(
            "attention block over {channels} channels given input {shape:?}"
        )));
    }
    Ok(())
}

impl QaeBlock {
    /// `prescale` maps each pooled value through π·tanh(·) before encoding.
    pub fn new(
        channels: usize,
        layers: usize,
        entanglement: Entanglement,
        prescale: bool,
    ) -> Result<Self> {
        if channels == 0 || !channels.is_multiple_of(3) {
            return Err(Error::Config(format!(
                "quantum excitation needs a channel count divisible by 3, got {channels}"
            )));
        }
        if layers == 0 {
            return Err(Error::Config(
                "quantum excitation needs at least one variational layer".into(),
            ));
        }
        if channels / 3 > crate::quantum::MAX_QUBITS {
            return Err(Error::Config(format!(
                "{} qubits exceeds the simulator bound",
                channels / 3
            )));
        }
        Ok(Self {
            channels,
            layers,
            entanglement,
            prescale,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_qubits(&self) -> usize {
        self.channels / 3
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn entanglement(&self) -> Entanglement {
        self.entanglement
    }

    pub fn count_params(&self) -> usize {
        let (c, n) = (self.channels, self.n_qubits());
        3 * n * self.layers + c * n + c
    }

    /// θ ~ U(−π, π); the output map uses fan-in scaling with zero bias.
    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut Params, rng: &mut R) {
        let (c, n, l) = (self.channels, self.n_qubits(), self.layers);
        let theta = (0..l * n * 3).map(|_| rng.gen_range(-PI..PI)).collect();
        params.insert(VQC_THETA, Tensor::new(vec![l, n, 3], theta).expect("shape"));
        params.insert(OUT_WEIGHT, fan_in_uniform(&[c, n], n, rng));
        params.insert(OUT_BIAS, Tensor::zeros(&[c]));
    }

    fn vqc_params(&self, theta: &Tensor) -> Result<VqcParams> {
        VqcParams::new(self.layers, self.n_qubits(), theta.data().to_vec())
    }

    fn encode(&self, z: &[f64]) -> Result<EncodingAngles> {
        if self.prescale {
            EncodingAngles::new(z.iter().map(|v| PI * v.tanh()).collect())
        } else {
            EncodingAngles::new(z.to_vec())
        }
    }

    /// Pauli-Z readout Q for one pooled descriptor z (length C).
    /// Non-finite inputs give NaN readouts, so the failure surfaces as a
    /// non-finite loss.
    pub fn excitation(&self, z: &[f64], theta: &VqcParams) -> Result<Vec<f64>> {
        if z.iter().any(|v| !v.is_finite()) {
            return Ok(vec![f64::NAN; self.n_qubits()]);
        }
        expectations(&self.encode(z)?, theta, self.entanglement)
    }

    fn excitation_batch(&self, z: &Tensor, theta: &VqcParams) -> Result<Tensor> {
        let c = self.channels;
        let n = self.n_qubits();
        let rows = z
            .data()
            .par_chunks(c)
            .map(|row| self.excitation(row, theta))
            .collect::<Result<Vec<_>>>()?;
        Tensor::new(vec![z.shape()[0], n], rows.concat())
    }

    /// dL/dz (one row per sample) and dL/dθ summed over the batch in sample
    /// order, given dL/dQ.
    fn excitation_backward(
        &self,
        z: &Tensor,
        theta: &VqcParams,
        grad_q: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let c = self.channels;
        let n = self.n_qubits();
        let per_sample = z
            .data()
            .par_chunks(c)
            .zip(grad_q.par_chunks(n))
            .map(|(row, cot)| {
                if row.iter().any(|v| !v.is_finite()) {
                    return Ok((vec![f64::NAN; c], vec![f64::NAN; theta.len()]));
                }
                let bundle =
                    shift_rule_gradients(&self.encode(row)?, theta, cot, self.entanglement)?;
                let mut dz = bundle.d_inputs;
                if self.prescale {
                    for (d, v) in dz.iter_mut().zip(row) {
                        let t = v.tanh();
                        *d *= PI * (1.0 - t * t);
                    }
                }
                Ok((dz, bundle.d_params))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut d_theta = vec![0.0; theta.len()];
        let mut d_z = Vec::with_capacity(z.numel());
        for (dz, dp) in per_sample {
            d_z.extend(dz);
            d_theta.iter_mut().zip(dp).for_each(|(a, b)| *a += b);
        }
        Ok((d_z, d_theta))
    }

    /// Attention weights S for input `x`, shaped `[N, C]`, recorded on the tape.
    pub fn weights(&self, graph: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        check_channels(graph, x, self.channels)?;
        let z = graph.global_avg_pool(x)?;
        let theta_var = bound.var(VQC_THETA);
        let theta = self.vqc_params(graph.value(theta_var))?;
        let q = self.excitation_batch(graph.value(z), &theta)?;
        let q = graph.custom(
            &[z, theta_var],
            q,
            Box::new(QuantumExcitation { block: *self }),
        );
        let a = graph.linear(q, bound.var(OUT_WEIGHT), bound.var(OUT_BIAS))?;
        Ok(graph.sigmoid(a))
    }

    pub fn forward(&self, graph: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        let s = self.weights(graph, bound, x)?;
        graph.channel_scale(x, s)
    }

    /// Tape-free forward pass that keeps what [`QaeBlock::backward`] needs.
    pub fn forward_with_context(
        &self,
        params: &Params,
        x: &Tensor,
    ) -> Result<(Tensor, QaeContext)> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::Shape(format!(
                "attention block over {} channels given input {shape:?}",
                self.channels
            )));
        }
        let (n_batch, c, area) = (shape[0], shape[1], shape[2] * shape[3]);
        let theta = self.vqc_params(params.require(VQC_THETA)?)?;
        let w = params.require(OUT_WEIGHT)?;
        let b = params.require(OUT_BIAS)?;
        let n = self.n_qubits();

        let z: Vec<f64> = x
            .data()
            .chunks(area)
            .map(|p| p.iter().sum::<f64>() / area as f64)
            .collect();
        let z = Tensor::new(vec![n_batch, c], z)?;
        let q = self.excitation_batch(&z, &theta)?;
        let mut s = Vec::with_capacity(n_batch * c);
        for qrow in q.data().chunks(n) {
            let pre: Vec<f64> = w
                .data()
                .chunks(n)
                .zip(b.data())
                .map(|(wrow, bc)| wrow.iter().zip(qrow).map(|(a, b)| a * b).sum::<f64>() + bc)
                .collect();
            s.extend(sigmoid(&pre));
        }
        let mut out = x.data().to_vec();
        for (plane, sv) in out.chunks_mut(area).zip(&s) {
            plane.iter_mut().for_each(|v| *v *= sv);
        }
        let ctx = QaeContext {
            input: x.clone(),
            z,
            q,
            s: Tensor::new(vec![n_batch, c], s)?,
        };
        Ok((Tensor::new(shape.to_vec(), out)?, ctx))
    }

    /// Hand-written backward pass through recalibration, the output map, the
    /// circuit (parameter shift) and the pooling.
    pub fn backward(
        &self,
        params: &Params,
        ctx: Option<&QaeContext>,
        upstream: &Tensor,
    ) -> Result<QaeGrads> {
        let ctx = ctx.ok_or_else(|| {
            Error::Config("quantum excitation backward called without a forward context".into())
        })?;
        if upstream.shape() != ctx.input.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match forward input {:?}",
                upstream.shape(),
                ctx.input.shape()
            )));
        }
        let shape = ctx.input.shape();
        let (c, area) = (shape[1], shape[2] * shape[3]);
        let n = self.n_qubits();
        let theta = self.vqc_params(params.require(VQC_THETA)?)?;
        let w = params.require(OUT_WEIGHT)?;

        // X'_c = S_c · X_c
        let d_s: Vec<f64> = upstream
            .data()
            .chunks(area)
            .zip(ctx.input.data().chunks(area))
            .map(|(u, x)| u.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let d_pre: Vec<f64> = d_s
            .iter()
            .zip(ctx.s.data())
            .map(|(d, s)| d * s * (1.0 - s))
            .collect();

        let mut d_weight = vec![0.0; c * n];
        let mut d_bias = vec![0.0; c];
        let mut d_q = vec![0.0; ctx.q.numel()];
        for ((dp_row, q_row), dq_row) in d_pre
            .chunks(c)
            .zip(ctx.q.data().chunks(n))
            .zip(d_q.chunks_mut(n))
        {
            for (ch, &dp) in dp_row.iter().enumerate() {
                d_bias[ch] += dp;
                for i in 0..n {
                    d_weight[ch * n + i] += dp * q_row[i];
                    dq_row[i] += dp * w.data()[ch * n + i];
                }
            }
        }

        let (d_z, d_theta) = self.excitation_backward(&ctx.z, &theta, &d_q)?;

        let mut d_input = upstream.data().to_vec();
        for ((plane, sv), dz) in d_input.chunks_mut(area).zip(ctx.s.data()).zip(&d_z) {
            plane
                .iter_mut()
                .for_each(|v| *v = *v * sv + dz / area as f64);
        }

        Ok(QaeGrads {
            input: Tensor::new(shape.to_vec(), d_input)?,
            theta: d_theta,
            weight: d_weight,
            bias: d_bias,
        })
    }
}

/// Values saved by [`QaeBlock::forward_with_context`].
#[derive(Debug, Clone, PartialEq)]
pub struct QaeContext {
    pub input: Tensor,
    /// Pooled descriptor, `[N, C]`.
    pub z: Tensor,
    /// Pauli-Z readout, `[N, n]`.
    pub q: Tensor,
    /// Attention weights, `[N, C]`.
    pub s: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaeGrads {
    pub input: Tensor,
    pub theta: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Tape node for z, θ → Q.
struct QuantumExcitation {
    block: QaeBlock,
}

impl CustomOp for QuantumExcitation {
    fn name(&self) -> &'static str {
        "quantum_excitation"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>> {
        let theta = self
            .block
            .vqc_params(inputs[1])
            .expect("validated in forward");
        let (d_z, d_theta) = self
            .block
            .excitation_backward(inputs[0], &theta, grad_output)
            .expect("validated in forward");
        vec![d_z, d_theta]
    }
}

/// Which attention block sits after the first convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Se,
    #[default]
    Qae,
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Se => "se",
            AttentionKind::Qae => "qae",
        })
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionKind::None),
            "se" => Ok(AttentionKind::Se),
            "qae" => Ok(AttentionKind::Qae),
            other => Err(Error::Config(format!(
                "unknown attention variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionBlock {
    None,
    Se(SeBlock),
    Qae(QaeBlock),
}

impl AttentionBlock {
    pub fn kind(&self) -> AttentionKind {
        match self {
            AttentionBlock::None => AttentionKind::None,
            AttentionBlock::Se(_) => AttentionKind::Se,
            AttentionBlock::Qae(_) => AttentionKind::Qae,
        }
    }

    pub fn count_params(&self) -> usize {
        match self {
            AttentionBlock::None => 0,
            AttentionBlock::Se(b) => b.count_params(),
            AttentionBlock::Qae(b) => b.count_params(),
        }
    }

    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut Params, rng: &mut R) {
        match self {
            AttentionBlock::None => {}
            AttentionBlock::Se(b) => b.init_params(params, rng),
            AttentionBlock::Qae(b) => b.init_params(params, rng),
        }
    }

    pub fn forward(&self, graph: &mut Graph, bound: &BoundParams, x: Var) -> Result<Var> {
        match self {
            AttentionBlock::None => Ok(x),
            AttentionBlock::Se(b) => b.forward(graph, bound, x),
            AttentionBlock::Qae(b) => b.forward(graph, bound, x),
        }
    }
}
