use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: IndexMap<String, Vec<f64>>,
    second: IndexMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: IndexMap::new(),
            second: IndexMap::new(),
        }
    }
}

fn check_grad(name: &str, expected: usize, grads: &ParamGrads) -> Result<()> {
    match grads.get(name) {
        Some(g) if g.len() == expected => Ok(()),
        Some(g) => Err(Error::Shape(format!(
            "gradient for {name:?} has {} entries, parameter has {expected}",
            g.len()
        ))),
        None => Err(Error::Shape(format!("no gradient for parameter {name:?}"))),
    }
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut Params, grads: &ParamGrads, state: &mut AdamState) -> Result<()> {
    for (name, p) in params.iter() {
        check_grad(name, p.numel(), grads)?;
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain gradient descent, kept for ablations.
pub fn sgd_step(params: &mut Params, grads: &ParamGrads, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        check_grad(name, p.numel(), grads)?;
    }
    for (name, p) in params.iter_mut() {
        for (w, g) in p.data_mut().iter_mut().zip(&grads[name]) {
            *w -= lr * g;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn step(&mut self, params: &mut Params, grads: &ParamGrads) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_step(params, grads, state),
            Optimizer::Sgd { lr } => sgd_step(params, grads, *lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn single(values: Vec<f64>) -> Params {
        let mut p = Params::new();
        p.insert("w", Tensor::new(vec![values.len()], values).unwrap());
        p
    }

    fn grads(values: Vec<f64>) -> ParamGrads {
        let mut g = ParamGrads::new();
        g.insert("w".into(), values);
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(vec![1.0, -2.0]);
        let mut s = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut p, &grads(vec![0.0, 0.0]), &mut s).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let g = vec![0.3, -2.0, 1e-9];
        let mut p = single(vec![0.0; 3]);
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &grads(g.clone()), &mut s).unwrap();
        for (w, gi) in p.get("w").unwrap().data().iter().zip(g) {
            let expected = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((w - expected).abs() < 1e-15, "{w} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = single(vec![0.0, 0.0]);
        let mut s = AdamState::new(AdamConfig::default());
        let mut prev = p.get("w").unwrap().data().to_vec();
        for _ in 0..2000 {
            adam_step(&mut p, &grads(vec![4.0, -0.01]), &mut s).unwrap();
            let now = p.get("w").unwrap().data().to_vec();
            let steps: Vec<f64> = now.iter().zip(&prev).map(|(a, b)| a - b).collect();
            assert!((steps[0] + 1e-3).abs() < 1e-6);
            assert!((steps[1] - 1e-3).abs() < 1e-6);
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = single(vec![0.0; 2]);
        let mut s = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut p, &grads(vec![0.0; 3]), &mut s).is_err());
        assert!(adam_step(&mut p, &ParamGrads::new(), &mut s).is_err());
        assert_eq!(s.step, 0);
        assert!(sgd_step(&mut p, &grads(vec![0.0]), 0.1).is_err());
    }

    #[test]
    fn sgd() {
        let mut p = single(vec![1.0]);
        let mut opt = Optimizer::Sgd { lr: 0.5 };
        opt.step(&mut p, &grads(vec![2.0])).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.0]);
    }
}
