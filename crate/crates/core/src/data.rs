//! MNIST-style IDX and CIFAR-10 binary loaders, subset sampling and batching.
//!
//! IDX: big-endian header. Images carry magic 0x00000803 followed by the
//! count, rows and columns; labels carry 0x00000801 followed by the count.
//! CIFAR-10: 3073-byte records, a label byte then 3×32×32 channel-planar
//! pixels. Pixels are scaled to [0, 1] by dividing by 255.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DataErrorKind, Error, Result};
use crate::nn::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub name: String,
    pub split: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            name: self.name.clone(),
            split: self.split.clone(),
        }
    }

    /// The first `size` samples of a seeded permutation.
    pub fn subset(&self, size: usize, seed: u64) -> Result<Dataset> {
        if size > self.len() {
            return Err(Error::Config(format!(
                "subset of {size} requested from {} samples",
                self.len()
            )));
        }
        let perm = permutation(self.len(), seed);
        Ok(self.select(&perm[..size]))
    }

    pub fn label_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut hist = [0; NUM_CLASSES];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }

    /// Per-channel mean and standard deviation of the pixels.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let shape = self.images.shape();
        let (c, area) = (shape[1], shape[2] * shape[3]);
        (0..c)
            .map(|ch| {
                let values = self
                    .images
                    .data()
                    .chunks(area)
                    .skip(ch)
                    .step_by(c)
                    .flatten();
                let (mut sum, mut sq, mut n) = (0.0, 0.0, 0usize);
                for &v in values {
                    sum += v;
                    sq += v * v;
                    n += 1;
                }
                let mean = sum / n as f64;
                (mean, (sq / n as f64 - mean * mean).max(0.0).sqrt())
            })
            .collect()
    }

    /// Shifts and scales each channel to zero mean, unit variance under `stats`.
    pub fn standardize(&mut self, stats: &[(f64, f64)]) {
        let shape = self.images.shape().to_vec();
        let (c, area) = (shape[1], shape[2] * shape[3]);
        for (i, plane) in self.images.data_mut().chunks_mut(area).enumerate() {
            let (mean, std) = stats[i % c];
            let std = if std > 0.0 { std } else { 1.0 };
            plane.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::data(path, DataErrorKind::Unreadable(e.to_string())))
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn header(path: &Path, bytes: &[u8], magic: u32, words: usize) -> Result<Vec<usize>> {
    if bytes.len() < 4 * words {
        return Err(Error::data(
            path,
            DataErrorKind::Truncated {
                expected: 4 * words,
                found: bytes.len(),
            },
        ));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::data(
            path,
            DataErrorKind::BadMagic {
                found,
                expected: magic,
            },
        ));
    }
    Ok((1..words).map(|i| be_u32(bytes, 4 * i) as usize).collect())
}

fn pixels(bytes: &[u8]) -> Vec<f64> {
    bytes.iter().map(|&b| f64::from(b) / 255.0).collect()
}

/// Loads an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read(images_path)?;
    let dims = header(images_path, &img, IDX_IMAGES_MAGIC, 4)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let expected = 16 + n * rows * cols;
    if img.len() != expected {
        return Err(Error::data(
            images_path,
            DataErrorKind::Truncated {
                expected,
                found: img.len(),
            },
        ));
    }

    let lab = read(labels_path)?;
    let n_labels = header(labels_path, &lab, IDX_LABELS_MAGIC, 2)?[0];
    if lab.len() != 8 + n_labels {
        return Err(Error::data(
            labels_path,
            DataErrorKind::Truncated {
                expected: 8 + n_labels,
                found: lab.len(),
            },
        ));
    }
    if n_labels != n {
        return Err(Error::data(
            labels_path,
            DataErrorKind::CountMismatch {
                images: n,
                labels: n_labels,
            },
        ));
    }
    let labels = lab[8..]
        .iter()
        .enumerate()
        .map(|(index, &label)| {
            if usize::from(label) < NUM_CLASSES {
                Ok(usize::from(label))
            } else {
                Err(Error::data(
                    labels_path,
                    DataErrorKind::LabelRange { label, index },
                ))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        images: Tensor::new(vec![n, 1, rows, cols], pixels(&img[16..]))?,
        labels,
        name: "idx".into(),
        split: String::new(),
    })
}

/// Writes a single-channel dataset as an IDX image/label pair. Pixels are
/// mapped back to bytes with `round(v * 255)`.
pub fn write_idx(dataset: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let shape = dataset.images.shape();
    if shape[1] != 1 {
        return Err(Error::Shape(format!(
            "IDX holds single-channel images, got {shape:?}"
        )));
    }
    let mut img = Vec::with_capacity(16 + dataset.images.numel());
    for v in [
        IDX_IMAGES_MAGIC,
        shape[0] as u32,
        shape[2] as u32,
        shape[3] as u32,
    ] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(dataset.images.data().iter().map(|&v| to_byte(v)));
    let mut lab = Vec::with_capacity(8 + dataset.len());
    for v in [IDX_LABELS_MAGIC, dataset.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(dataset.labels.iter().map(|&l| l as u8));
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}

fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Loads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let path = path.as_ref();
        let bytes = read(path)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::data(
                path,
                DataErrorKind::RecordSize {
                    size: bytes.len(),
                    record: CIFAR_RECORD,
                },
            ));
        }
        for (index, record) in bytes.chunks(CIFAR_RECORD).enumerate() {
            let label = record[0];
            if usize::from(label) >= NUM_CLASSES {
                return Err(Error::data(
                    path,
                    DataErrorKind::LabelRange { label, index },
                ));
            }
            labels.push(usize::from(label));
            data.extend(pixels(&record[1..]));
        }
    }
    Ok(Dataset {
        images: Tensor::new(vec![labels.len(), 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
        labels,
        name: "cifar10".into(),
        split: String::new(),
    })
}

pub fn write_cifar10(dataset: &Dataset, path: &Path) -> Result<()> {
    if dataset.images.shape()[1..] != [3, CIFAR_SIDE, CIFAR_SIDE] {
        return Err(Error::Shape(format!(
            "CIFAR-10 records are 3×32×32, got {:?}",
            dataset.images.shape()
        )));
    }
    let per = 3 * CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD);
    for (label, img) in dataset.labels.iter().zip(dataset.images.data().chunks(per)) {
        out.push(*label as u8);
        out.extend(img.iter().map(|&v| to_byte(v)));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Which dataset a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::FashionMnist => "fashion-mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }
}

/// Loads the train or test split of `kind` from `dir`.
///
/// MNIST and FashionMNIST expect the standard uncompressed file names
/// (`train-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`, ...). CIFAR-10
/// expects `data_batch_1.bin` … `data_batch_5.bin` and `test_batch.bin`.
pub fn load_split(kind: DatasetKind, dir: &Path, train: bool) -> Result<Dataset> {
    let split = if train { "train" } else { "test" };
    let mut ds = match kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let stem = if train { "train" } else { "t10k" };
            load_idx(
                &dir.join(format!("{stem}-images-idx3-ubyte")),
                &dir.join(format!("{stem}-labels-idx1-ubyte")),
            )?
        }
        DatasetKind::Cifar10 => {
            let files: Vec<PathBuf> = if train {
                (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .collect()
            } else {
                vec![dir.join("test_batch.bin")]
            };
            load_cifar10(&files)?
        }
    };
    ds.name = kind.name().into();
    ds.split = split.into();
    Ok(ds)
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: Option<u64>,
    pub subset: Option<usize>,
}

/// Iterator over `(images, labels)` mini-batches. The final partial batch is
/// included.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl Iterator for Batches<'_> {
    type Item = (Tensor, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let idx = &self.order[self.pos..end];
        self.pos = end;
        let labels = idx.iter().map(|&i| self.dataset.labels[i]).collect();
        Some((self.dataset.images.select(idx), labels))
    }
}

/// Batches `dataset` in seeded-permutation order (or natural order without a
/// seed), optionally restricted to a permutation prefix of `subset` samples.
pub fn batches<'a>(dataset: &'a Dataset, plan: &BatchPlan) -> Result<Batches<'a>> {
    if plan.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order = match plan.shuffle_seed {
        Some(seed) => permutation(dataset.len(), seed),
        None => (0..dataset.len()).collect(),
    };
    if let Some(size) = plan.subset {
        if size > dataset.len() {
            return Err(Error::Config(format!(
                "subset of {size} requested from {} samples",
                dataset.len()
            )));
        }
        order.truncate(size);
    }
    Ok(Batches {
        dataset,
        order,
        batch_size: plan.batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize) -> Dataset {
        Dataset {
            images: Tensor::new(
                vec![n, 1, 2, 2],
                (0..4 * n).map(|i| (i % 256) as f64 / 255.0).collect(),
            )
            .unwrap(),
            labels: (0..n).map(|i| i % 10).collect(),
            name: "synthetic".into(),
            split: "train".into(),
        }
    }

    #[test]
    fn batch_arithmetic() {
        let ds = synthetic(1000);
        let plan = BatchPlan {
            batch_size: 64,
            shuffle_seed: Some(1),
            subset: None,
        };
        let sizes: Vec<usize> = batches(&ds, &plan).unwrap().map(|(_, l)| l.len()).collect();
        assert_eq!(sizes.len(), 16);
        assert!(sizes[..15].iter().all(|&s| s == 64));
        assert_eq!(sizes[15], 40);
    }

    #[test]
    fn seeded_batches_are_reproducible() {
        let ds = synthetic(100);
        let plan = BatchPlan {
            batch_size: 7,
            shuffle_seed: Some(42),
            subset: Some(50),
        };
        let a: Vec<_> = batches(&ds, &plan).unwrap().collect();
        let b: Vec<_> = batches(&ds, &plan).unwrap().collect();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|(_, l)| l.len()).sum::<usize>(), 50);
        let other = BatchPlan {
            shuffle_seed: Some(43),
            ..plan
        };
        assert_ne!(a, batches(&ds, &other).unwrap().collect::<Vec<_>>());
    }

    #[test]
    fn subset_indices_are_distinct() {
        let perm = permutation(60_000, 7);
        let mut prefix = perm[..1000].to_vec();
        prefix.sort_unstable();
        prefix.dedup();
        assert_eq!(prefix.len(), 1000);
        assert!(synthetic(10).subset(11, 0).is_err());
        assert_eq!(synthetic(10).subset(4, 0).unwrap().len(), 4);
    }

    #[test]
    fn plan_errors() {
        let ds = synthetic(5);
        let bad = BatchPlan {
            batch_size: 0,
            shuffle_seed: None,
            subset: None,
        };
        assert!(batches(&ds, &bad).is_err());
        let too_big = BatchPlan {
            batch_size: 2,
            shuffle_seed: None,
            subset: Some(6),
        };
        assert!(batches(&ds, &too_big).is_err());
    }

    #[test]
    fn standardization() {
        let mut ds = synthetic(50);
        let stats = ds.channel_stats();
        ds.standardize(&stats);
        let after = ds.channel_stats();
        assert!(after[0].0.abs() < 1e-12);
        assert!((after[0].1 - 1.0).abs() < 1e-12);
    }
}
