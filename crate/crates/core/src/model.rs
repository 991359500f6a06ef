//! The shared convolutional backbone with a pluggable attention block.
//!
//! ```text
//! conv1(k×k) → relu → maxpool2 → attention → conv2(k×k) → relu → maxpool2
//!   → flatten → fc1 → relu → dropout → fc2 → relu → … → fc_out
//! ```
//!
//! The 2×2 max pools are an artifact decision: without spatial reduction the
//! first fully connected layer would dominate every parameter budget. With
//! pooling, a 28×28 input flattens to 16·4·4 = 256 and a 32×32 input to
//! 16·5·5 = 400.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlock, AttentionKind, QaeBlock, SeBlock};
use crate::error::{Error, Result};
use crate::nn::{fan_in_uniform, BoundParams, Graph, ParamGrads, Params, Tensor, Var};
use crate::quantum::Entanglement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// 2×2 max pool after each convolution.
    #[default]
    Max2,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub kernel: usize,
    pub attention: AttentionKind,
    pub qubits: usize,
    pub vqc_layers: usize,
    pub entanglement: Entanglement,
    pub angle_prescale: bool,
    pub se_reduction: usize,
    pub fc_dims: Vec<usize>,
    pub classes: usize,
    pub dropout: f64,
    pub pooling: Pooling,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::mnist(AttentionKind::Qae)
    }
}

impl BackboneConfig {
    pub fn mnist(attention: AttentionKind) -> Self {
        Self {
            in_channels: 1,
            input_size: 28,
            conv1_channels: 12,
            conv2_channels: 16,
            kernel: 5,
            attention,
            qubits: 4,
            vqc_layers: 1,
            entanglement: Entanglement::Chain,
            angle_prescale: false,
            se_reduction: 4,
            fc_dims: vec![256, 128],
            classes: 10,
            dropout: 0.5,
            pooling: Pooling::Max2,
        }
    }

    pub fn cifar10(attention: AttentionKind) -> Self {
        Self {
            in_channels: 3,
            input_size: 32,
            ..Self::mnist(attention)
        }
    }

    pub fn attention_block(&self) -> Result<AttentionBlock> {
        Ok(match self.attention {
            AttentionKind::None => AttentionBlock::None,
            AttentionKind::Se => {
                AttentionBlock::Se(SeBlock::new(self.conv1_channels, self.se_reduction)?)
            }
            AttentionKind::Qae => {
                if self.conv1_channels != 3 * self.qubits {
                    return Err(Error::Config(format!(
                        "quantum attention over {} channels needs {} qubits, config has {}",
                        self.conv1_channels,
                        self.conv1_channels / 3,
                        self.qubits
                    )));
                }
                AttentionBlock::Qae(QaeBlock::new(
                    self.conv1_channels,
                    self.vqc_layers,
                    self.entanglement,
                    self.angle_prescale,
                )?)
            }
        })
    }

    /// Output shape (without the batch axis) after every stage.
    pub fn shape_trace(&self) -> Result<Vec<(String, Vec<usize>)>> {
        if self.in_channels == 0 || self.conv1_channels == 0 || self.conv2_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.fc_dims.is_empty() || self.fc_dims.contains(&0) || self.classes < 2 {
            return Err(Error::Config(format!(
                "fully connected dims {:?} and {} classes are not a valid head",
                self.fc_dims, self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout
            )));
        }
        let mut trace = vec![(
            "input".to_string(),
            vec![self.in_channels, self.input_size, self.input_size],
        )];
        let mut side = self.input_size;
        let conv = |side: usize, name: &str| -> Result<usize> {
            if self.kernel == 0 || self.kernel > side {
                return Err(Error::Config(format!(
                    "{name}: kernel {} does not fit a {side}×{side} map",
                    self.kernel
                )));
            }
            Ok(side - self.kernel + 1)
        };
        let pool = |side: usize, name: &str| -> Result<usize> {
            match self.pooling {
                Pooling::None => Ok(side),
                Pooling::Max2 if side.is_multiple_of(2) => Ok(side / 2),
                Pooling::Max2 => Err(Error::Config(format!(
                    "{name}: cannot 2×2 pool an odd {side}×{side} map"
                ))),
            }
        };
        side = conv(side, "conv1")?;
        trace.push(("conv1".into(), vec![self.conv1_channels, side, side]));
        if self.pooling == Pooling::Max2 {
            side = pool(side, "pool1")?;
            trace.push(("pool1".into(), vec![self.conv1_channels, side, side]));
        }
        trace.push(("attention".into(), vec![self.conv1_channels, side, side]));
        side = conv(side, "conv2")?;
        trace.push(("conv2".into(), vec![self.conv2_channels, side, side]));
        if self.pooling == Pooling::Max2 {
            side = pool(side, "pool2")?;
            trace.push(("pool2".into(), vec![self.conv2_channels, side, side]));
        }
        trace.push(("flatten".into(), vec![self.conv2_channels * side * side]));
        for (i, &d) in self.fc_dims.iter().enumerate() {
            trace.push((format!("fc{}", i + 1), vec![d]));
        }
        trace.push((format!("fc{}", self.fc_dims.len() + 1), vec![self.classes]));
        Ok(trace)
    }

    pub fn flatten_dim(&self) -> Result<usize> {
        let trace = self.shape_trace()?;
        let (_, shape) = trace
            .iter()
            .find(|(n, _)| n == "flatten")
            .expect("trace has flatten");
        Ok(shape[0])
    }
}

/// Parameter count of one stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub layer: String,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: BackboneConfig,
    attention: AttentionBlock,
    pub params: Params,
}

fn fc_name(i: usize) -> (String, String) {
    (format!("fc{i}.weight"), format!("fc{i}.bias"))
}

impl Model {
    /// Validates the configuration and initialises every parameter from `rng`
    /// in layer order.
    pub fn build<R: Rng + ?Sized>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        config.shape_trace()?;
        let attention = config.attention_block()?;
        let k = config.kernel;
        let mut params = Params::new();

        let fan1 = config.in_channels * k * k;
        params.insert(
            "conv1.weight",
            fan_in_uniform(
                &[config.conv1_channels, config.in_channels, k, k],
                fan1,
                rng,
            ),
        );
        params.insert("conv1.bias", Tensor::zeros(&[config.conv1_channels]));
        attention.init_params(&mut params, rng);
        let fan2 = config.conv1_channels * k * k;
        params.insert(
            "conv2.weight",
            fan_in_uniform(
                &[config.conv2_channels, config.conv1_channels, k, k],
                fan2,
                rng,
            ),
        );
        params.insert("conv2.bias", Tensor::zeros(&[config.conv2_channels]));

        let mut d_in = config.flatten_dim()?;
        let dims: Vec<usize> = config
            .fc_dims
            .iter()
            .copied()
            .chain([config.classes])
            .collect();
        for (i, &d_out) in dims.iter().enumerate() {
            let (w, b) = fc_name(i + 1);
            params.insert(w, fan_in_uniform(&[d_out, d_in], d_in, rng));
            params.insert(b, Tensor::zeros(&[d_out]));
            d_in = d_out;
        }
        Ok(Self {
            config,
            attention,
            params,
        })
    }

    /// Rebuilds a model around existing parameters, checking their layout.
    pub fn from_params(config: BackboneConfig, params: Params) -> Result<Self> {
        let reference = Self::build(config, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Config(
                "parameter layout does not match the configured architecture".into(),
            ));
        }
        Ok(Self {
            params,
            ..reference
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn attention(&self) -> &AttentionBlock {
        &self.attention
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let c = &self.config;
        let expected = [c.in_channels, c.input_size, c.input_size];
        if batch.shape().len() != 4 || batch.shape()[1..] != expected || batch.shape()[0] == 0 {
            return Err(Error::Shape(format!(
                "model expects [N, {}, {}, {}], got {:?}",
                expected[0],
                expected[1],
                expected[2],
                batch.shape()
            )));
        }
        Ok(())
    }

    fn forward_graph(
        &self,
        graph: &mut Graph,
        bound: &BoundParams,
        x: Var,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let pool = |graph: &mut Graph, v: Var| match self.config.pooling {
            Pooling::Max2 => graph.max_pool2(v),
            Pooling::None => Ok(v),
        };
        let h = graph.conv2d(x, bound.var("conv1.weight"), bound.var("conv1.bias"))?;
        let h = graph.relu(h);
        let h = pool(graph, h)?;
        let h = self.attention.forward(graph, bound, h)?;
        let h = graph.conv2d(h, bound.var("conv2.weight"), bound.var("conv2.bias"))?;
        let h = graph.relu(h);
        let h = pool(graph, h)?;
        let mut h = graph.flatten(h)?;

        let hidden = self.config.fc_dims.len();
        let mut rng = rng;
        for i in 1..=hidden {
            let (w, b) = fc_name(i);
            h = graph.linear(h, bound.var(&w), bound.var(&b))?;
            h = graph.relu(h);
            if i == 1 {
                if let Some(r) = rng.as_deref_mut() {
                    h = graph.dropout(h, self.config.dropout, true, r)?;
                }
            }
        }
        let (w, b) = fc_name(hidden + 1);
        graph.linear(h, bound.var(&w), bound.var(&b))
    }

    fn run(
        &self,
        batch: &Tensor,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Graph, BoundParams, Var)> {
        self.check_batch(batch)?;
        let mut graph = Graph::new();
        let bound = self.params.bind(&mut graph);
        let x = graph.leaf(batch.clone(), false);
        let logits = self.forward_graph(&mut graph, &bound, x, rng)?;
        Ok((graph, bound, logits))
    }

    /// Logits `[N, K]`. Dropout is active only when `rng` is given.
    pub fn forward(&self, batch: &Tensor, rng: Option<&mut dyn RngCore>) -> Result<Tensor> {
        let (graph, _, logits) = self.run(batch, rng)?;
        Ok(graph.value(logits).clone())
    }

    /// Mean cross-entropy and its gradient for every parameter, from one tape.
    pub fn loss_and_grads(
        &self,
        batch: &Tensor,
        labels: &[usize],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, ParamGrads)> {
        let (loss, _, grads) = self.train_step(batch, labels, rng)?;
        Ok((loss, grads))
    }

    /// Like [`Model::loss_and_grads`], also counting correct predictions.
    pub fn train_step(
        &self,
        batch: &Tensor,
        labels: &[usize],
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(f64, usize, ParamGrads)> {
        let (mut graph, bound, logits) = self.run(batch, rng)?;
        let correct = count_correct(graph.value(logits), labels, self.config.classes);
        let loss = graph.softmax_cross_entropy(logits, labels)?;
        let grads = graph.backward(loss);
        Ok((
            graph.value(loss).item(),
            correct,
            bound.collect(&graph, &grads),
        ))
    }

    /// Eval-mode loss and number of correct predictions.
    pub fn evaluate_batch(&self, batch: &Tensor, labels: &[usize]) -> Result<(f64, usize)> {
        let (mut graph, _, logits) = self.run(batch, None)?;
        let correct = count_correct(graph.value(logits), labels, self.config.classes);
        let loss = graph.softmax_cross_entropy(logits, labels)?;
        Ok((graph.value(loss).item(), correct))
    }

    pub fn count_params(&self) -> Vec<LayerCount> {
        let mut counts = Vec::new();
        let mut push = |layer: &str, params: usize| {
            counts.push(LayerCount {
                layer: layer.to_string(),
                params,
            })
        };
        let size = |name: &str| self.params.get(name).map_or(0, Tensor::numel);
        push("conv1", size("conv1.weight") + size("conv1.bias"));
        if self.attention != AttentionBlock::None {
            push(
                &format!("attention ({})", self.attention.kind()),
                self.attention.count_params(),
            );
        }
        push("conv2", size("conv2.weight") + size("conv2.bias"));
        for i in 1..=self.config.fc_dims.len() + 1 {
            let (w, b) = fc_name(i);
            push(&format!("fc{i}"), size(&w) + size(&b));
        }
        counts
    }

    pub fn total_params(&self) -> usize {
        self.params.count()
    }
}

fn count_correct(logits: &Tensor, labels: &[usize], classes: usize) -> usize {
    logits
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{OUT_BIAS, SE_FC2_BIAS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sides(trace: &[(String, Vec<usize>)]) -> Vec<usize> {
        trace
            .iter()
            .filter(|(_, s)| s.len() == 3)
            .map(|(_, s)| s[1])
            .collect()
    }

    #[test]
    fn mnist_and_cifar_shape_traces() {
        let mnist = BackboneConfig::mnist(AttentionKind::Qae)
            .shape_trace()
            .unwrap();
        assert_eq!(sides(&mnist), vec![28, 24, 12, 12, 8, 4]);
        assert_eq!(
            BackboneConfig::mnist(AttentionKind::Qae)
                .flatten_dim()
                .unwrap(),
            256
        );
        let cifar = BackboneConfig::cifar10(AttentionKind::Se);
        assert_eq!(
            sides(&cifar.shape_trace().unwrap()),
            vec![32, 28, 14, 14, 10, 5]
        );
        assert_eq!(cifar.flatten_dim().unwrap(), 400);
    }

    #[test]
    fn invalid_configs() {
        let mut c = BackboneConfig::mnist(AttentionKind::Qae);
        c.qubits = 3;
        assert!(Model::build(c, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let mut c = BackboneConfig::mnist(AttentionKind::Qae);
        c.conv1_channels = 10;
        c.qubits = 3;
        assert!(c.attention_block().is_err());
        let mut c = BackboneConfig::mnist(AttentionKind::None);
        c.input_size = 26; // 22 → 11, then conv2 → 7, odd
        assert!(c.shape_trace().is_err());
        let mut c = BackboneConfig::mnist(AttentionKind::None);
        c.input_size = 10;
        assert!(c.shape_trace().is_err());
        let mut c = BackboneConfig::mnist(AttentionKind::None);
        c.fc_dims.clear();
        assert!(c.shape_trace().is_err());
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let qae = Model::build(BackboneConfig::mnist(AttentionKind::Qae), &mut rng).unwrap();
        let counts = qae.count_params();
        assert_eq!(
            counts[0],
            LayerCount {
                layer: "conv1".into(),
                params: 312
            }
        );
        assert_eq!(counts[1].params, 72);
        assert_eq!(counts[2].params, 5 * 5 * 12 * 16 + 16);
        assert_eq!(counts[3].params, 256 * 256 + 256);
        assert_eq!(counts[4].params, 32_896);
        assert_eq!(counts[5].params, 1290);
        assert_eq!(
            counts.iter().map(|c| c.params).sum::<usize>(),
            qae.total_params()
        );

        let se = Model::build(BackboneConfig::mnist(AttentionKind::Se), &mut rng).unwrap();
        assert_eq!(se.total_params() - qae.total_params(), 87 - 72);
    }

    #[test]
    fn variants_differ_only_in_attention_keys() {
        let rng = ChaCha8Rng::seed_from_u64(0);
        let keys = |kind| {
            let m = Model::build(BackboneConfig::mnist(kind), &mut rng.clone()).unwrap();
            m.params
                .keys()
                .filter(|k| !k.starts_with("attn."))
                .map(String::from)
                .collect::<Vec<_>>()
        };
        assert_eq!(keys(AttentionKind::Se), keys(AttentionKind::Qae));
        assert_eq!(keys(AttentionKind::None), keys(AttentionKind::Qae));
    }

    #[test]
    fn forward_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::build(BackboneConfig::mnist(AttentionKind::Qae), &mut rng).unwrap();
        let batch = Tensor::new(
            vec![3, 1, 28, 28],
            (0..3 * 784).map(|i| (i % 17) as f64 / 17.0).collect(),
        )
        .unwrap();
        let a = model.forward(&batch, None).unwrap();
        let b = model.forward(&batch, None).unwrap();
        assert_eq!(a.shape(), &[3, 10]);
        assert_eq!(a, b);
        assert!(model
            .forward(&Tensor::zeros(&[1, 1, 32, 32]), None)
            .is_err());

        let mut zero = model.clone();
        zero.params
            .iter_mut()
            .for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let logits = zero.forward(&batch, None).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_se_matches_no_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut se = Model::build(BackboneConfig::mnist(AttentionKind::Se), &mut rng).unwrap();
        se.params
            .get_mut(SE_FC2_BIAS)
            .unwrap()
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 1e3);
        let mut plain_params = Params::new();
        for (k, t) in se.params.iter().filter(|(k, _)| !k.starts_with("attn.")) {
            plain_params.insert(k, t.clone());
        }
        let plain =
            Model::from_params(BackboneConfig::mnist(AttentionKind::None), plain_params).unwrap();
        let batch = Tensor::new(
            vec![2, 1, 28, 28],
            (0..2 * 784).map(|i| ((i * 7) % 13) as f64 / 13.0).collect(),
        )
        .unwrap();
        let a = se.forward(&batch, None).unwrap();
        let b = plain.forward(&batch, None).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn loss_near_ln10_at_init() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = Model::build(BackboneConfig::mnist(AttentionKind::Qae), &mut rng).unwrap();
            let batch = Tensor::new(
                vec![4, 1, 28, 28],
                (0..4 * 784).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap();
            let (loss, _) = model.loss_and_grads(&batch, &[0, 3, 7, 9], None).unwrap();
            assert!((loss - 10f64.ln()).abs() < 0.3, "loss {loss}");
        }
    }

    #[test]
    fn duplicated_batch_has_same_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::build(BackboneConfig::mnist(AttentionKind::Se), &mut rng).unwrap();
        let batch = Tensor::new(
            vec![2, 1, 28, 28],
            (0..2 * 784).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let doubled = batch.select(&[0, 1, 0, 1]);
        let (a, _) = model.loss_and_grads(&batch, &[1, 2], None).unwrap();
        let (b, _) = model.loss_and_grads(&doubled, &[1, 2, 1, 2], None).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn from_params_rejects_wrong_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let se = Model::build(BackboneConfig::mnist(AttentionKind::Se), &mut rng).unwrap();
        assert!(
            Model::from_params(BackboneConfig::mnist(AttentionKind::Qae), se.params.clone())
                .is_err()
        );
        assert!(
            Model::from_params(BackboneConfig::mnist(AttentionKind::Se), se.params.clone()).is_ok()
        );
        let mut params = se.params.clone();
        params.insert(OUT_BIAS, Tensor::zeros(&[12]));
        assert!(Model::from_params(BackboneConfig::mnist(AttentionKind::Se), params).is_err());
    }
}
