pub mod attention;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod quantum;

pub use error::{Error, Result};
