use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of a metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
}

/// Appends JSON records, one per line, flushing after each.
pub struct MetricsWriter {
    file: File,
}

impl MetricsWriter {
    /// Creates (truncating) the stream at `path`.
    pub fn create(path: &Path) -> Result<Self> {
        File::create(path)?;
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serialises");
        writeln!(self.file, "{line}")?;
        self.file.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let reader = BufReader::new(File::open(path)?);
    reader
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|line| {
            let line = line?;
            serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("{}: bad metrics line: {e}", path.display())))
        })
        .collect()
}

/// CSV with a header row, for plotting loss curves.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    // Every column is always present, unlike the JSON form.
    #[derive(Serialize)]
    struct Row<'a> {
        epoch: usize,
        split: &'a str,
        loss: f64,
        accuracy: f64,
        wall_clock_seconds: Option<f64>,
        config_hash: &'a str,
        seed: u64,
    }
    if records.is_empty() {
        return "epoch,split,loss,accuracy,wall_clock_seconds,config_hash,seed\n".into();
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer
            .serialize(Row {
                epoch: r.epoch,
                split: &r.split,
                loss: r.loss,
                accuracy: r.accuracy,
                wall_clock_seconds: r.wall_clock_seconds,
                config_hash: &r.config_hash,
                seed: r.seed,
            })
            .expect("record serialises");
    }
    String::from_utf8(writer.into_inner().expect("in-memory write")).expect("utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn records_round_trip(
            epoch in 1usize..500,
            loss in 0.0f64..20.0,
            accuracy in 0.0f64..=1.0,
            secs in proptest::option::of(0.0f64..1e5),
            seed: u64,
        ) {
            let record = MetricsRecord {
                epoch,
                split: "train".into(),
                loss,
                accuracy,
                wall_clock_seconds: secs,
                config_hash: "0123456789abcdef".into(),
                seed,
            };
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.jsonl");
            let mut w = MetricsWriter::create(&path).unwrap();
            w.append(&record).unwrap();
            w.append(&record).unwrap();
            prop_assert_eq!(read_metrics(&path).unwrap(), vec![record.clone(), record]);
        }
    }

    #[test]
    fn csv_layout() {
        let r = MetricsRecord {
            epoch: 1,
            split: "test".into(),
            loss: 0.5,
            accuracy: 0.25,
            wall_clock_seconds: None,
            config_hash: "ab".into(),
            seed: 3,
        };
        assert_eq!(
            metrics_to_csv(&[r]),
            "epoch,split,loss,accuracy,wall_clock_seconds,config_hash,seed\n1,test,0.5,0.25,,ab,3\n"
        );
        assert_eq!(metrics_to_csv(&[]).lines().count(), 1);
    }
}
