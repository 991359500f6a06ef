//! Gradients of the Pauli-Z readout with respect to every rotation angle.
//!
//! Every differentiated gate is exp(−iφP/2) with P a Pauli operator, so the
//! two-point shift by ±π/2 gives the exact derivative:
//!
//! dQ_i/dφ = ½ [Q_i(φ + π/2) − Q_i(φ − π/2)]

use std::f64::consts::FRAC_PI_2;

use super::circuit::{
    run_circuit, AngleSource, Circuit, EncodingAngles, Entanglement, Gate, VqcParams,
};
use crate::error::{Error, Result};

/// Cotangent-contracted Jacobians of Q with respect to θ and x.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    /// Same flat L×n×3 layout as [`VqcParams`].
    pub d_params: Vec<f64>,
    /// One entry per encoding angle.
    pub d_inputs: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros(params: &VqcParams) -> Self {
        Self {
            d_params: vec![0.0; params.len()],
            d_inputs: vec![0.0; 3 * params.n_qubits()],
        }
    }

    pub fn max_abs_diff(&self, other: &GradientBundle) -> f64 {
        self.d_params
            .iter()
            .zip(&other.d_params)
            .chain(self.d_inputs.iter().zip(&other.d_inputs))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_cotangent(params: &VqcParams, cotangent: &[f64]) -> Result<()> {
    if cotangent.len() != params.n_qubits() {
        return Err(Error::Shape(format!(
            "cotangent has {} entries for {} qubits",
            cotangent.len(),
            params.n_qubits()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pauli-Z expectations of |ψ(x; θ)⟩.
pub fn expectations(
    x: &EncodingAngles,
    params: &VqcParams,
    entanglement: Entanglement,
) -> Result<Vec<f64>> {
    Ok(run_circuit(x, params, entanglement)?.measure_z_all())
}

/// Parameter-shift gradients for both the variational and the encoding
/// angles, contracted with `cotangent` (dL/dQ).
pub fn shift_rule_gradients(
    x: &EncodingAngles,
    params: &VqcParams,
    cotangent: &[f64],
    entanglement: Entanglement,
) -> Result<GradientBundle> {
    check_cotangent(params, cotangent)?;
    let circuit = Circuit::new(x, params, entanglement)?;
    let mut bundle = GradientBundle::zeros(params);
    if cotangent.iter().all(|&c| c == 0.0) {
        return Ok(bundle);
    }
    for (i, gate) in circuit.gates().iter().enumerate() {
        let Gate::Rotation { source, .. } = gate else {
            continue;
        };
        let plus = circuit
            .simulate_shifted(Some((i, FRAC_PI_2)))
            .measure_z_all();
        let minus = circuit
            .simulate_shifted(Some((i, -FRAC_PI_2)))
            .measure_z_all();
        let d_q: Vec<f64> = plus
            .iter()
            .zip(&minus)
            .map(|(p, m)| 0.5 * (p - m))
            .collect();
        let contribution = dot(cotangent, &d_q);
        match *source {
            AngleSource::Input(k) => bundle.d_inputs[k] += contribution,
            AngleSource::Param(k) => bundle.d_params[k] += contribution,
        }
    }
    Ok(bundle)
}

/// Central finite differences [f(φ+ε) − f(φ−ε)]/(2ε) for every angle,
/// contracted with `cotangent`. Used as an independent check on
/// [`shift_rule_gradients`].
pub fn finite_difference_oracle(
    x: &EncodingAngles,
    params: &VqcParams,
    cotangent: &[f64],
    eps: f64,
    entanglement: Entanglement,
) -> Result<GradientBundle> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {eps}"
        )));
    }
    check_cotangent(params, cotangent)?;
    let objective = |x: &EncodingAngles, p: &VqcParams| -> Result<f64> {
        Ok(dot(cotangent, &expectations(x, p, entanglement)?))
    };

    let mut bundle = GradientBundle::zeros(params);
    for k in 0..params.len() {
        let mut plus = params.clone();
        plus.values_mut()[k] += eps;
        let mut minus = params.clone();
        minus.values_mut()[k] -= eps;
        bundle.d_params[k] = (objective(x, &plus)? - objective(x, &minus)?) / (2.0 * eps);
    }
    for k in 0..x.values().len() {
        let mut plus = x.clone();
        plus.values_mut()[k] += eps;
        let mut minus = x.clone();
        minus.values_mut()[k] -= eps;
        bundle.d_inputs[k] = (objective(&plus, params)? - objective(&minus, params)?) / (2.0 * eps);
    }
    Ok(bundle)
}
