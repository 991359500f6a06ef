//! Encoding + variational ansatz, built as an explicit gate list.
//!
//! The full pipeline is H^⊗n, then the angle encoding, then L variational
//! layers. Each layer applies RZ(α), RY(β), RZ(γ) (in that time order) to
//! every qubit and then the entangling CNOT pattern.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::state::{Axis, StateVector};
use crate::error::{Error, Result};

/// Entangling pattern applied after each layer of rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entanglement {
    /// CNOT(k, k+1) for k = 1..n−1.
    #[default]
    Chain,
    /// Chain followed by CNOT(n, 1). Identical to chain on a single qubit.
    Ring,
}

impl Entanglement {
    pub fn cnot_pairs(self, n_qubits: usize) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = (1..n_qubits).map(|k| (k, k + 1)).collect();
        if self == Entanglement::Ring && n_qubits > 1 {
            pairs.push((n_qubits, 1));
        }
        pairs
    }
}

impl fmt::Display for Entanglement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Entanglement::Chain => "chain",
            Entanglement::Ring => "ring",
        })
    }
}

impl std::str::FromStr for Entanglement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Entanglement::Chain),
            "ring" => Ok(Entanglement::Ring),
            other => Err(Error::Config(format!(
                "unknown entanglement mode {other:?}"
            ))),
        }
    }
}

/// Classical inputs for the angle encoding: three angles per qubit.
///
/// Group i holds (a, b, c) and is encoded as RZ(a)·RY(b)·RZ(c), so RZ(c)
/// acts first.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingAngles(Vec<f64>);

impl EncodingAngles {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || !values.len().is_multiple_of(3) {
            return Err(Error::Shape(format!(
                "encoding needs a non-empty multiple of 3 angles, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite encoding angle".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(n_qubits: usize) -> Self {
        Self(vec![0.0; 3 * n_qubits])
    }

    pub fn n_qubits(&self) -> usize {
        self.0.len() / 3
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Variational angles shaped L×n×3, stored flat as `[(layer * n + qubit) * 3 + k]`
/// with k = 0, 1, 2 for (α, β, γ).
#[derive(Debug, Clone, PartialEq)]
pub struct VqcParams {
    layers: usize,
    n_qubits: usize,
    values: Vec<f64>,
}

impl VqcParams {
    pub fn new(layers: usize, n_qubits: usize, values: Vec<f64>) -> Result<Self> {
        if layers == 0 || n_qubits == 0 {
            return Err(Error::Config(format!(
                "variational circuit needs at least one layer and qubit (got L={layers}, n={n_qubits})"
            )));
        }
        if values.len() != layers * n_qubits * 3 {
            return Err(Error::Shape(format!(
                "expected {}×{}×3 = {} angles, got {}",
                layers,
                n_qubits,
                layers * n_qubits * 3,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite variational angle".into()));
        }
        Ok(Self {
            layers,
            n_qubits,
            values,
        })
    }

    pub fn zeros(layers: usize, n_qubits: usize) -> Result<Self> {
        Self::new(layers, n_qubits, vec![0.0; layers * n_qubits * 3])
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, layer: usize, qubit: usize) -> [f64; 3] {
        let base = (layer * self.n_qubits + qubit) * 3;
        [
            self.values[base],
            self.values[base + 1],
            self.values[base + 2],
        ]
    }
}

/// Where a rotation angle comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleSource {
    /// Index into the encoding angles.
    Input(usize),
    /// Flat index into [`VqcParams`].
    Param(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    H {
        qubit: usize,
    },
    Rotation {
        axis: Axis,
        qubit: usize,
        angle: f64,
        source: AngleSource,
    },
    Cnot {
        control: usize,
        target: usize,
    },
}

impl Gate {
    pub fn apply(&self, state: &mut StateVector) -> Result<()> {
        match *self {
            Gate::H { qubit } => state.apply_hadamard(qubit),
            Gate::Rotation {
                axis, qubit, angle, ..
            } => state.apply_rotation(axis, qubit, angle),
            Gate::Cnot { control, target } => state.apply_cnot(control, target),
        }
    }
}

/// Debug dump format: `GATE qubit [qubit2] [angle]`.
impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::H { qubit } => write!(f, "H {qubit}"),
            Gate::Rotation {
                axis, qubit, angle, ..
            } => write!(f, "{} {qubit} {angle}", axis.gate_name()),
            Gate::Cnot { control, target } => write!(f, "CNOT {control} {target}"),
        }
    }
}

fn encoding_gates(x: &EncodingAngles) -> Vec<Gate> {
    let mut gates = Vec::with_capacity(x.values().len());
    for i in 0..x.n_qubits() {
        let qubit = i + 1;
        for (axis, k) in [(Axis::Z, 2), (Axis::Y, 1), (Axis::Z, 0)] {
            let idx = 3 * i + k;
            gates.push(Gate::Rotation {
                axis,
                qubit,
                angle: x.values()[idx],
                source: AngleSource::Input(idx),
            });
        }
    }
    gates
}

fn variational_gates(params: &VqcParams, entanglement: Entanglement) -> Vec<Gate> {
    let n = params.n_qubits();
    let mut gates = Vec::new();
    for layer in 0..params.layers() {
        for q in 0..n {
            for (axis, k) in [(Axis::Z, 0), (Axis::Y, 1), (Axis::Z, 2)] {
                let idx = (layer * n + q) * 3 + k;
                gates.push(Gate::Rotation {
                    axis,
                    qubit: q + 1,
                    angle: params.values()[idx],
                    source: AngleSource::Param(idx),
                });
            }
        }
        for (control, target) in entanglement.cnot_pairs(n) {
            gates.push(Gate::Cnot { control, target });
        }
    }
    gates
}

/// Applies the angle encoding to `state` in place.
pub fn apply_encoding(state: &mut StateVector, x: &EncodingAngles) -> Result<()> {
    if x.n_qubits() != state.n_qubits() {
        return Err(Error::Shape(format!(
            "{} encoding angles for {} qubits",
            x.values().len(),
            state.n_qubits()
        )));
    }
    encoding_gates(x).iter().try_for_each(|g| g.apply(state))
}

/// Applies all variational layers to `state` in place.
pub fn apply_variational(
    state: &mut StateVector,
    params: &VqcParams,
    entanglement: Entanglement,
) -> Result<()> {
    if params.n_qubits() != state.n_qubits() {
        return Err(Error::Shape(format!(
            "parameters for {} qubits applied to a {}-qubit state",
            params.n_qubits(),
            state.n_qubits()
        )));
    }
    variational_gates(params, entanglement)
        .iter()
        .try_for_each(|g| g.apply(state))
}

/// A fully bound circuit: H layer, encoding, variational layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(x: &EncodingAngles, params: &VqcParams, entanglement: Entanglement) -> Result<Self> {
        let n = x.n_qubits();
        if params.n_qubits() != n {
            return Err(Error::Shape(format!(
                "encoding for {n} qubits but parameters for {}",
                params.n_qubits()
            )));
        }
        let mut gates: Vec<Gate> = (1..=n).map(|qubit| Gate::H { qubit }).collect();
        gates.extend(encoding_gates(x));
        gates.extend(variational_gates(params, entanglement));
        Ok(Self { n_qubits: n, gates })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// Runs the circuit from |0…0⟩, adding `shift` to the angle of gate
    /// `shifted` when given.
    pub fn simulate_shifted(&self, shifted: Option<(usize, f64)>) -> StateVector {
        let mut state =
            StateVector::new_ground_state(self.n_qubits).expect("validated qubit count");
        for (i, gate) in self.gates.iter().enumerate() {
            let gate = match (shifted, gate) {
                (
                    Some((j, delta)),
                    Gate::Rotation {
                        axis,
                        qubit,
                        angle,
                        source,
                    },
                ) if i == j => Gate::Rotation {
                    axis: *axis,
                    qubit: *qubit,
                    angle: angle + delta,
                    source: *source,
                },
                _ => *gate,
            };
            gate.apply(&mut state)
                .expect("gates validated at construction");
        }
        state
    }

    pub fn simulate(&self) -> StateVector {
        self.simulate_shifted(None)
    }

    /// One gate per line in the debug dump format.
    pub fn dump(&self) -> String {
        self.gates.iter().map(|g| format!("{g}\n")).collect()
    }
}

/// |ψ(x; θ)⟩ = U_VQC(θ) · U_enc(x) · H^⊗n |0⟩^⊗n.
pub fn run_circuit(
    x: &EncodingAngles,
    params: &VqcParams,
    entanglement: Entanglement,
) -> Result<StateVector> {
    let mut state = StateVector::new_ground_state(x.n_qubits())?;
    state.apply_hadamard_all();
    apply_encoding(&mut state, x)?;
    apply_variational(&mut state, params, entanglement)?;
    Ok(state)
}
