use std::fmt::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use super::train::initial_model;
use crate::attention::{AttentionBlock, VQC_THETA};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Checkpoint;
use crate::quantum::{Circuit, EncodingAngles, VqcParams};

/// Published totals for the original models, which the layer list used here
/// does not reproduce.
pub const REFERENCE_TOTALS_NOTE: &str = "Reference totals quoted for the original \
models (MNIST/FashionMNIST: SENet 39,602, QAE-Net 39,366; CIFAR-10: SENet 142,634, \
QAE-Net 142,570) could not be reproduced from the layer specification. The counts \
above are exact for this implementation.";

fn load_model(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<Model> {
    match checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            Model::from_params(config.model.clone(), ckpt.params).map_err(|e| {
                Error::Config(format!(
                    "{} does not match the configured architecture: {e}",
                    path.display()
                ))
            })
        }
        None => initial_model(config),
    }
}

/// Gate list of the attention circuit with every encoding angle zero and θ
/// taken from the model. `None` when the model has no quantum block.
pub fn circuit_dump(model: &Model) -> Result<Option<String>> {
    let AttentionBlock::Qae(block) = model.attention() else {
        return Ok(None);
    };
    let theta = model.params.require(VQC_THETA)?;
    let params = VqcParams::new(block.layers(), block.n_qubits(), theta.data().to_vec())?;
    let circuit = Circuit::new(
        &EncodingAngles::zeros(block.n_qubits()),
        &params,
        block.entanglement(),
    )?;
    Ok(Some(circuit.dump()))
}

pub fn params_table(model: &Model) -> String {
    let mut out = String::new();
    for c in model.count_params() {
        writeln!(out, "{:<20} {:>8}", c.layer, c.params).unwrap();
    }
    writeln!(out, "{:<20} {:>8}", "total", model.total_params()).unwrap();
    out
}

/// Shape trace, parameter table and circuit dump for the configured model,
/// initialised from the config seed or loaded from `checkpoint`.
pub fn inspect(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<String> {
    config.validate()?;
    let model = load_model(config, checkpoint)?;
    let mut out = String::new();
    writeln!(out, "config hash {}", config.hash()).unwrap();
    writeln!(out, "\nshapes").unwrap();
    for (stage, shape) in config.model.shape_trace()? {
        writeln!(out, "{stage:<20} {shape:?}").unwrap();
    }
    writeln!(out, "\nparameters").unwrap();
    out.push_str(&params_table(&model));
    writeln!(out, "\n{REFERENCE_TOTALS_NOTE}").unwrap();
    if let Some(dump) = circuit_dump(&model)? {
        writeln!(out, "\ncircuit (encoding angles zero)").unwrap();
        out.push_str(&dump);
    }
    Ok(out)
}
