//! Gradient verification against central finite differences.
//!
//! Four suites, each reporting the worst error per parameter class:
//! circuit (parameter-shift vs finite differences, absolute error), the QAE
//! block, the individual layers, and a whole micro-model (relative error).

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{QaeBlock, SeBlock, OUT_BIAS, OUT_WEIGHT, VQC_THETA};
use crate::error::{Error, Result};
use crate::model::{BackboneConfig, Model, Pooling};
use crate::nn::check::{max_abs_error, max_relative_error, numerical_gradient};
use crate::nn::{BoundParams, Graph, Params, Tensor, Var};
use crate::quantum::{
    finite_difference_oracle, shift_rule_gradients, EncodingAngles, Entanglement, VqcParams,
};

pub const CIRCUIT_TOLERANCE: f64 = 1e-6;
pub const BLOCK_TOLERANCE: f64 = 1e-4;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;

const CIRCUIT_EPS: f64 = 1e-4;
const EPS: f64 = 1e-6;

/// Deliberate corruption of the analytic gradients, to confirm the checks
/// can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates every parameter-shift gradient.
    SignFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMetric {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub suite: &'static str,
    pub class: String,
    pub metric: ErrorMetric,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckLine {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub lines: Vec<CheckLine>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(CheckLine::passed)
    }

    pub fn suite(&self, suite: &str) -> impl Iterator<Item = &CheckLine> {
        let suite = suite.to_string();
        self.lines.iter().filter(move |l| l.suite == suite)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:<22} {:>4} {:>11} {:>9}  result",
            "suite", "class", "err", "max", "tol"
        )?;
        for l in &self.lines {
            let metric = match l.metric {
                ErrorMetric::Absolute => "abs",
                ErrorMetric::Relative => "rel",
            };
            writeln!(
                f,
                "{:<8} {:<22} {:>4} {:>11.3e} {:>9.0e}  {}",
                l.suite,
                l.class,
                metric,
                l.max_error,
                l.tolerance,
                if l.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradcheckOptions {
    pub circuit_draws: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            circuit_draws: 120,
            seed: 0,
            fault: None,
        }
    }
}

pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut lines = circuit_check(options.circuit_draws, options.seed, options.fault)?;
    lines.extend(block_check(options.seed, options.fault)?);
    lines.extend(layer_checks(options.seed)?);
    lines.extend(micro_model_check(options.seed, options.fault)?);
    Ok(GradcheckReport { lines })
}

fn flip(values: &mut [f64], fault: Option<Fault>) {
    if fault == Some(Fault::SignFlip) {
        values.iter_mut().for_each(|v| *v = -*v);
    }
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape.to_vec(), uniform(shape.iter().product(), lo, hi, rng)).expect("shape")
}

/// Four qubits, depth cycling through 1..=3, both entanglement modes, with x
/// and θ drawn from U(−π, π). Every column of the Jacobian is compared.
pub fn circuit_check(draws: usize, seed: u64, fault: Option<Fault>) -> Result<Vec<CheckLine>> {
    const N: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut theta_err, mut input_err) = (0.0f64, 0.0f64);
    for d in 0..draws {
        let layers = 1 + d % 3;
        let ent = if (d / 3) % 2 == 0 {
            Entanglement::Chain
        } else {
            Entanglement::Ring
        };
        let x = EncodingAngles::new(uniform(
            3 * N,
            -std::f64::consts::PI,
            std::f64::consts::PI,
            &mut rng,
        ))?;
        let params = VqcParams::new(
            layers,
            N,
            uniform(
                layers * N * 3,
                -std::f64::consts::PI,
                std::f64::consts::PI,
                &mut rng,
            ),
        )?;
        for i in 0..N {
            let mut cot = vec![0.0; N];
            cot[i] = 1.0;
            let mut shift = shift_rule_gradients(&x, &params, &cot, ent)?;
            flip(&mut shift.d_params, fault);
            flip(&mut shift.d_inputs, fault);
            let fd = finite_difference_oracle(&x, &params, &cot, CIRCUIT_EPS, ent)?;
            theta_err = theta_err.max(max_abs_error(&shift.d_params, &fd.d_params));
            input_err = input_err.max(max_abs_error(&shift.d_inputs, &fd.d_inputs));
        }
    }
    let line = |class: &str, max_error| CheckLine {
        suite: "circuit",
        class: class.into(),
        metric: ErrorMetric::Absolute,
        max_error,
        tolerance: CIRCUIT_TOLERANCE,
    };
    Ok(vec![
        line("theta", theta_err),
        line("encoding angles", input_err),
    ])
}

fn block_loss(block: &QaeBlock, params: &Params, x: &Tensor, upstream: &Tensor) -> Result<f64> {
    let (out, _) = block.forward_with_context(params, x)?;
    Ok(out
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(a, b)| a * b)
        .sum())
}

fn param_fd(params: &Params, name: &str, f: &dyn Fn(&Params) -> Result<f64>) -> Result<Vec<f64>> {
    let base = params.require(name)?.clone();
    let mut failure = None;
    let grad = numerical_gradient(base.data(), EPS, |v| {
        let mut p = params.clone();
        p.get_mut(name)
            .expect("present")
            .data_mut()
            .copy_from_slice(v);
        f(&p).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(grad),
    }
}

/// One QAE block with C = 3, n = 1, L = 1 on a 1×3×2×2 input.
pub fn block_check(seed: u64, fault: Option<Fault>) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);
    let block = QaeBlock::new(3, 1, Entanglement::Chain, false)?;
    let mut params = Params::new();
    block.init_params(&mut params, &mut rng);
    params.insert(OUT_BIAS, random_tensor(&[3], -0.5, 0.5, &mut rng));
    let x = random_tensor(&[1, 3, 2, 2], -1.0, 1.0, &mut rng);
    let upstream = random_tensor(&[1, 3, 2, 2], -1.0, 1.0, &mut rng);

    let (_, ctx) = block.forward_with_context(&params, &x)?;
    let mut grads = block.backward(&params, Some(&ctx), &upstream)?;
    flip(&mut grads.theta, fault);

    let loss = |p: &Params| block_loss(&block, p, &x, &upstream);
    let mut failure = None;
    let d_input = numerical_gradient(x.data(), EPS, |v| {
        let xt = Tensor::new(x.shape().to_vec(), v.to_vec()).expect("shape");
        block_loss(&block, &params, &xt, &upstream).unwrap_or_else(|e| {
            failure.get_or_insert(e);
            f64::NAN
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let line = |class: &str, analytic: &[f64], numeric: &[f64]| CheckLine {
        suite: "block",
        class: class.into(),
        metric: ErrorMetric::Relative,
        max_error: max_relative_error(analytic, numeric),
        tolerance: BLOCK_TOLERANCE,
    };
    Ok(vec![
        line("input", grads.input.data(), &d_input),
        line(
            VQC_THETA,
            &grads.theta,
            &param_fd(&params, VQC_THETA, &loss)?,
        ),
        line(
            OUT_WEIGHT,
            &grads.weight,
            &param_fd(&params, OUT_WEIGHT, &loss)?,
        ),
        line(OUT_BIAS, &grads.bias, &param_fd(&params, OUT_BIAS, &loss)?),
    ])
}

type Builder = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Compares tape gradients of ⟨u, f(inputs)⟩ against finite differences for
/// every input, returning the worst relative error.
fn tape_error(inputs: &[Tensor], build: &Builder, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut graph = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| graph.leaf(t.clone(), true)).collect();
    let out = build(&mut graph, &vars)?;
    let upstream = uniform(graph.value(out).numel(), -1.0, 1.0, rng);
    let grads = graph.backward_with(out, upstream.clone());

    let objective = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out)
            .data()
            .iter()
            .zip(&upstream)
            .map(|(a, b)| a * b)
            .sum())
    };

    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut failure = None;
        let numeric = numerical_gradient(input.data(), EPS, |v| {
            let mut values = inputs.to_vec();
            values[k] = Tensor::new(input.shape().to_vec(), v.to_vec()).expect("shape");
            objective(&values).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let analytic = grads
            .get(vars[k])
            .ok_or_else(|| Error::Verification(format!("no gradient reached input {k}")))?;
        worst = worst.max(max_relative_error(analytic, &numeric));
    }
    Ok(worst)
}

/// Values in ±[0.1, 1], away from the ReLU kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

pub fn layer_checks(seed: u64) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e);
    let r = &mut rng;
    let se = SeBlock::new(4, 2)?;
    let mut se_params = Params::new();
    se.init_params(&mut se_params, r);
    for (_, t) in se_params.iter_mut() {
        *t = random_tensor(t.shape(), -0.8, 0.8, r);
    }
    let se_names: Vec<String> = se_params.keys().map(str::to_string).collect();

    let cases: Vec<(&str, Vec<Tensor>, Box<Builder>)> = vec![
        (
            "conv2d",
            vec![
                random_tensor(&[2, 2, 5, 5], -1.0, 1.0, r),
                random_tensor(&[3, 2, 3, 3], -1.0, 1.0, r),
                random_tensor(&[3], -1.0, 1.0, r),
            ],
            Box::new(|g, v| g.conv2d(v[0], v[1], v[2])),
        ),
        (
            "max_pool2",
            vec![random_tensor(&[2, 2, 4, 4], -1.0, 1.0, r)],
            Box::new(|g, v| g.max_pool2(v[0])),
        ),
        (
            "global_avg_pool",
            vec![random_tensor(&[2, 3, 3, 3], -1.0, 1.0, r)],
            Box::new(|g, v| g.global_avg_pool(v[0])),
        ),
        (
            "linear",
            vec![
                random_tensor(&[3, 5], -1.0, 1.0, r),
                random_tensor(&[4, 5], -1.0, 1.0, r),
                random_tensor(&[4], -1.0, 1.0, r),
            ],
            Box::new(|g, v| g.linear(v[0], v[1], v[2])),
        ),
        (
            "relu",
            vec![off_kink(&[3, 4], r)],
            Box::new(|g, v| Ok(g.relu(v[0]))),
        ),
        (
            "sigmoid",
            vec![random_tensor(&[3, 4], -3.0, 3.0, r)],
            Box::new(|g, v| Ok(g.sigmoid(v[0]))),
        ),
        (
            "channel_scale",
            vec![
                random_tensor(&[2, 3, 2, 2], -1.0, 1.0, r),
                random_tensor(&[2, 3], 0.0, 1.0, r),
            ],
            Box::new(|g, v| g.channel_scale(v[0], v[1])),
        ),
        (
            "dropout",
            vec![random_tensor(&[3, 6], -1.0, 1.0, r)],
            // A fresh generator per call fixes the mask across evaluations.
            Box::new(|g, v| g.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(7))),
        ),
        (
            "flatten",
            vec![random_tensor(&[2, 2, 2, 3], -1.0, 1.0, r)],
            Box::new(|g, v| g.flatten(v[0])),
        ),
        (
            "softmax_cross_entropy",
            vec![random_tensor(&[4, 5], -2.0, 2.0, r)],
            Box::new(|g, v| g.softmax_cross_entropy(v[0], &[0, 3, 4, 1])),
        ),
        (
            "se block",
            std::iter::once(random_tensor(&[2, 4, 3, 3], -1.0, 1.0, r))
                .chain(se_params.iter().map(|(_, t)| t.clone()))
                .collect(),
            Box::new(move |g, v| {
                let bound =
                    BoundParams::from_vars(se_names.iter().cloned().zip(v[1..].iter().copied()));
                se.forward(g, &bound, v[0])
            }),
        ),
    ];

    let mut lines = Vec::new();
    for (class, inputs, build) in cases {
        lines.push(CheckLine {
            suite: "layer",
            class: class.into(),
            metric: ErrorMetric::Relative,
            max_error: tape_error(&inputs, build.as_ref(), &mut rng)?,
            tolerance: LAYER_TOLERANCE,
        });
    }
    Ok(lines)
}

/// Backbone with C = 3, n = 1, L = 1 on 8×8 inputs, 2 classes, 3×3 kernels
/// and no pooling.
pub fn micro_config() -> BackboneConfig {
    BackboneConfig {
        in_channels: 1,
        input_size: 8,
        conv1_channels: 3,
        conv2_channels: 2,
        kernel: 3,
        qubits: 1,
        vqc_layers: 1,
        fc_dims: vec![6],
        classes: 2,
        pooling: Pooling::None,
        ..BackboneConfig::default()
    }
}

pub fn micro_model_check(seed: u64, fault: Option<Fault>) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3c40);
    let mut model = Model::build(micro_config(), &mut rng)?;
    // Positive biases keep the ReLUs active so that every gradient is non-trivial.
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(".bias") {
            *t = random_tensor(t.shape(), 0.1, 0.5, &mut rng);
        }
    }
    let batch = random_tensor(&[2, 1, 8, 8], 0.0, 1.0, &mut rng);
    let labels = [0, 1];
    let (_, mut grads) = model.loss_and_grads(&batch, &labels, None)?;
    if let Some(g) = grads.get_mut(VQC_THETA) {
        flip(g, fault);
    }

    let config = model.config().clone();
    let loss = |p: &Params| -> Result<f64> {
        let m = Model::from_params(config.clone(), p.clone())?;
        Ok(m.evaluate_batch(&batch, &labels)?.0)
    };
    let mut lines = Vec::new();
    for name in model.params.keys() {
        let numeric = param_fd(&model.params, name, &loss)?;
        // An all-zero reference would pass vacuously.
        let degenerate = numeric.iter().all(|&g| g == 0.0);
        lines.push(CheckLine {
            suite: "model",
            class: name.to_string(),
            metric: ErrorMetric::Relative,
            max_error: if degenerate {
                f64::INFINITY
            } else {
                max_relative_error(&grads[name], &numeric)
            },
            tolerance: MODEL_TOLERANCE,
        });
    }
    Ok(lines)
}
