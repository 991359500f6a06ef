//! Exact statevector simulation of the encoding + variational circuit.

mod circuit;
mod gradient;
mod state;

pub use circuit::{
    apply_encoding, apply_variational, run_circuit, AngleSource, Circuit, EncodingAngles,
    Entanglement, Gate, VqcParams,
};
pub use gradient::{expectations, finite_difference_oracle, shift_rule_gradients, GradientBundle};
pub use state::{Axis, StateVector, MAX_QUBITS};
