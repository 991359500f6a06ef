use indexmap::IndexMap;
use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named gradients, one flat array per parameter.
pub type ParamGrads = IndexMap<String, Vec<f64>>;

/// Named trainable tensors in a fixed insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(IndexMap<String, Tensor>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.0.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.0
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name:?}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.0.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.values().map(Tensor::numel).sum()
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        BoundParams(
            self.0
                .iter()
                .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), true)))
                .collect(),
        )
    }

    /// Same keys and shapes as `other`.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }
}

/// Parameter name → tape variable.
pub struct BoundParams(IndexMap<String, Var>);

impl BoundParams {
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self(vars.into_iter().collect())
    }

    pub fn var(&self, name: &str) -> Var {
        *self
            .0
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name:?} not bound"))
    }

    /// Pulls every parameter's gradient out of `grads`, zero-filling any
    /// parameter the loss did not reach.
    pub fn collect(&self, graph: &Graph, grads: &Gradients) -> ParamGrads {
        self.0
            .iter()
            .map(|(k, &v)| {
                let g = grads
                    .get(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; graph.value(v).numel()]);
                (k.clone(), g)
            })
            .collect()
    }
}

/// Uniform(−1/√fan_in, 1/√fan_in).
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("shape matches")
}
