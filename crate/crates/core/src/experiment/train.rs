//! Training and evaluation runs.
//!
//! Randomness comes from one root `ChaCha8Rng` seeded with `train.seed`. Three
//! child generators are forked from it, in this order, each seeded with the
//! next `u64` of the root: parameter initialisation, dropout masks, and the
//! per-epoch shuffle seeds. Dataset subsets use `data.subset_seed` and do not
//! consume the root stream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ExperimentConfig, OptimizerKind};
use super::metrics::{MetricsRecord, MetricsWriter};
use crate::data::{batches, load_split, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{AdamConfig, AdamState, Checkpoint, Optimizer};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_METRICS_FILE: &str = "eval.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.txt";

fn fork(root: &mut ChaCha8Rng) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(root.next_u64())
}

/// Train and test splits after subsetting and optional standardisation.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub train: Dataset,
    pub test: Dataset,
    /// Per-channel (mean, std) from the training split, when standardising.
    pub channel_stats: Option<Vec<(f64, f64)>>,
}

pub fn load_data(config: &ExperimentConfig) -> Result<SplitData> {
    config.check_dataset_shape()?;
    let dir = config.data_dir()?;
    let kind = config.data.dataset;
    let mut train = load_split(kind, &dir, true)?;
    let mut test = load_split(kind, &dir, false)?;
    if let Some(n) = config.data.train_subset {
        train = train.subset(n, config.data.subset_seed)?;
    }
    if let Some(n) = config.data.test_subset {
        test = test.subset(n, config.data.subset_seed)?;
    }
    let channel_stats = if config.data.standardize {
        let stats = train.channel_stats();
        train.standardize(&stats);
        test.standardize(&stats);
        Some(stats)
    } else {
        None
    };
    Ok(SplitData {
        train,
        test,
        channel_stats,
    })
}

/// The model a run with this config starts from.
pub fn initial_model(config: &ExperimentConfig) -> Result<Model> {
    let mut root = ChaCha8Rng::seed_from_u64(config.train.seed);
    Model::build(config.model.clone(), &mut fork(&mut root))
}

/// Sample-weighted mean loss and accuracy over `dataset` in eval mode.
pub fn evaluate(model: &Model, dataset: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let plan = BatchPlan {
        batch_size,
        shuffle_seed: None,
        subset: None,
    };
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (images, labels) in batches(dataset, &plan)? {
        let (loss, c) = model.evaluate_batch(&images, &labels)?;
        loss_sum += loss * labels.len() as f64;
        correct += c;
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub records: Vec<MetricsRecord>,
    pub config_hash: String,
    pub out_dir: PathBuf,
}

impl TrainOutcome {
    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join(METRICS_FILE)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(CHECKPOINT_FILE)
    }
}

/// Loads the configured data and trains. See [`train_on`].
pub fn train(
    config: &ExperimentConfig,
    progress: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    let data = load_data(config)?;
    train_on(config, &data, progress)
}

/// Trains on already loaded data, writing the metrics stream, the resolved
/// config, a checkpoint after every epoch and a summary table into
/// `config.output.dir`.
pub fn train_on(
    config: &ExperimentConfig,
    data: &SplitData,
    progress: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let m = &config.model;
    let expected = [m.in_channels, m.input_size, m.input_size];
    for split in [&data.train, &data.test] {
        if !split.is_empty() && split.images.shape()[1..] != expected {
            return Err(Error::Shape(format!(
                "{} {} images are {:?}, model expects {expected:?}",
                split.name,
                split.split,
                &split.images.shape()[1..]
            )));
        }
    }
    let out_dir = config.output.dir.clone();
    std::fs::create_dir_all(&out_dir)?;
    let hash = config.hash();
    let seed = config.train.seed;
    let stamp = format!("# config_hash {hash} seed {seed}\n");
    std::fs::write(
        out_dir.join(CONFIG_FILE),
        format!("{stamp}{}", config.to_toml()),
    )?;
    let mut root = ChaCha8Rng::seed_from_u64(seed);
    let mut init_rng = fork(&mut root);
    let mut dropout_rng = fork(&mut root);
    let mut shuffle_rng = fork(&mut root);

    let mut model = Model::build(config.model.clone(), &mut init_rng)?;
    debug_assert_eq!(model.params, initial_model(config)?.params);
    let mut optimizer = match config.train.optimizer {
        OptimizerKind::Adam => Optimizer::Adam(AdamState::new(AdamConfig {
            lr: config.train.lr,
            ..AdamConfig::default()
        })),
        OptimizerKind::Sgd => Optimizer::Sgd {
            lr: config.train.lr,
        },
    };

    let mut writer = MetricsWriter::create(&out_dir.join(METRICS_FILE))?;
    let mut records = Vec::new();
    let mut emit = |record: MetricsRecord, records: &mut Vec<MetricsRecord>| -> Result<()> {
        writer.append(&record)?;
        progress(&record);
        records.push(record);
        Ok(())
    };
    let timing = |start: Instant| {
        config
            .train
            .record_timing
            .then(|| start.elapsed().as_secs_f64())
    };

    for epoch in 1..=config.train.epochs {
        let start = Instant::now();
        let plan = BatchPlan {
            batch_size: config.train.batch_size,
            shuffle_seed: Some(shuffle_rng.next_u64()),
            subset: None,
        };
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch_index, (images, labels)) in batches(&data.train, &plan)?.enumerate() {
            let (loss, c, grads) = model.train_step(&images, &labels, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            optimizer.step(&mut model.params, &grads)?;
            loss_sum += loss * labels.len() as f64;
            correct += c;
        }
        let n = data.train.len() as f64;
        emit(
            MetricsRecord {
                epoch,
                split: "train".into(),
                loss: loss_sum / n,
                accuracy: correct as f64 / n,
                wall_clock_seconds: timing(start),
                config_hash: hash.clone(),
                seed,
            },
            &mut records,
        )?;

        if !data.test.is_empty() {
            let start = Instant::now();
            let (loss, accuracy) = evaluate(&model, &data.test, config.train.eval_batch_size)?;
            emit(
                MetricsRecord {
                    epoch,
                    split: "test".into(),
                    loss,
                    accuracy,
                    wall_clock_seconds: timing(start),
                    config_hash: hash.clone(),
                    seed,
                },
                &mut records,
            )?;
        }

        checkpoint_for(config, &model, epoch, data.channel_stats.as_deref())
            .save(&out_dir.join(CHECKPOINT_FILE))?;
    }

    std::fs::write(
        out_dir.join(SUMMARY_FILE),
        format!("{stamp}{}", summary_table(&records)),
    )?;
    Ok(TrainOutcome {
        model,
        records,
        config_hash: hash,
        out_dir,
    })
}

fn checkpoint_for(
    config: &ExperimentConfig,
    model: &Model,
    epoch: usize,
    channel_stats: Option<&[(f64, f64)]>,
) -> Checkpoint {
    let mut metadata = BTreeMap::new();
    metadata.insert("config".into(), config.canonical_toml());
    metadata.insert("config_hash".into(), config.hash());
    metadata.insert("seed".into(), config.train.seed.to_string());
    metadata.insert("epoch".into(), epoch.to_string());
    if let Some(stats) = channel_stats {
        metadata.insert(
            "channel_stats".into(),
            serde_json::to_string(stats).expect("stats serialise"),
        );
    }
    Checkpoint {
        metadata,
        params: model.params.clone(),
    }
}

/// Evaluates the checkpoint at `checkpoint` on the configured test split and
/// appends one record to `eval.jsonl` in the output directory.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path) -> Result<MetricsRecord> {
    config.validate()?;
    config.check_dataset_shape()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = Model::from_params(config.model.clone(), ckpt.params).map_err(|e| {
        Error::Config(format!(
            "{} does not match the configured architecture: {e}",
            checkpoint.display()
        ))
    })?;

    let dir = config.data_dir()?;
    let mut test = load_split(config.data.dataset, &dir, false)?;
    if let Some(n) = config.data.test_subset {
        test = test.subset(n, config.data.subset_seed)?;
    }
    if let Some(stats) = ckpt.metadata.get("channel_stats") {
        let stats: Vec<(f64, f64)> = serde_json::from_str(stats)
            .map_err(|e| Error::Checkpoint(format!("bad channel_stats entry: {e}")))?;
        test.standardize(&stats);
    }

    let start = Instant::now();
    let (loss, accuracy) = evaluate(&model, &test, config.train.eval_batch_size)?;
    let parse = |key: &str| ckpt.metadata.get(key).and_then(|v| v.parse().ok());
    let record = MetricsRecord {
        epoch: parse("epoch").unwrap_or(0) as usize,
        split: "test".into(),
        loss,
        accuracy,
        wall_clock_seconds: config
            .train
            .record_timing
            .then(|| start.elapsed().as_secs_f64()),
        config_hash: config.hash(),
        seed: parse("seed").unwrap_or(config.train.seed),
    };
    std::fs::create_dir_all(&config.output.dir)?;
    let path = config.output.dir.join(EVAL_METRICS_FILE);
    let mut existing = if path.exists() {
        super::metrics::read_metrics(&path)?
    } else {
        Vec::new()
    };
    existing.push(record.clone());
    let mut writer = MetricsWriter::create(&path)?;
    for r in &existing {
        writer.append(r)?;
    }
    Ok(record)
}

/// One row per epoch with train and test loss and accuracy.
pub fn summary_table(records: &[MetricsRecord]) -> String {
    let mut out = format!(
        "{:>5}  {:>10}  {:>9}  {:>10}  {:>9}\n",
        "epoch", "train loss", "train acc", "test loss", "test acc"
    );
    let epochs: std::collections::BTreeSet<usize> = records.iter().map(|r| r.epoch).collect();
    for epoch in epochs {
        let find = |split: &str| {
            records
                .iter()
                .find(|r| r.epoch == epoch && r.split == split)
        };
        let cell = |r: Option<&MetricsRecord>| match r {
            Some(r) => (
                format!("{:.4}", r.loss),
                format!("{:.2}%", 100.0 * r.accuracy),
            ),
            None => ("-".into(), "-".into()),
        };
        let (tl, ta) = cell(find("train"));
        let (vl, va) = cell(find("test"));
        out.push_str(&format!(
            "{epoch:>5}  {tl:>10}  {ta:>9}  {vl:>10}  {va:>9}\n"
        ));
    }
    out
}
