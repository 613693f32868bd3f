//! Run provenance: `manifest.json` and `metrics.csv`.

use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Metrics;
use crate::train::{write_atomic, EpochRecord};

pub const BUILD_ID: &str = concat!("hgmn-", env!("CARGO_PKG_VERSION"));

pub const CSV_HEADER: [&str; 5] = ["epoch", "train_loss", "val_acc", "val_micro_f1", "val_macro_f1"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_micro_f1: f64,
    pub val_macro_f1: f64,
}

impl From<&EpochRecord> for MetricRow {
    fn from(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_acc: r.val.accuracy,
            val_micro_f1: r.val.micro_f1,
            val_macro_f1: r.val.macro_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub micro_f1: f64,
    pub macro_f1: f64,
}

impl From<Metrics> for TestMetrics {
    fn from(m: Metrics) -> Self {
        Self {
            loss: m.loss,
            accuracy: m.accuracy,
            micro_f1: m.micro_f1,
            macro_f1: m.macro_f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub build_id: String,
    pub seed: u64,
    /// Canonical `key = value` lines of the effective config.
    pub config: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub epochs: Vec<MetricRow>,
    pub best_epoch: Option<usize>,
    /// Metrics of the best-validation parameters on the test split.
    pub test: Option<TestMetrics>,
}

impl RunManifest {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            build_id: BUILD_ID.to_string(),
            seed: config.seed,
            config: config.to_text().lines().map(str::to_string).collect(),
            inputs: Vec::new(),
            epochs: Vec::new(),
            best_epoch: None,
            test: None,
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn push_epoch(&mut self, record: &EpochRecord) {
        self.epochs.push(record.into());
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// One row per epoch, then a `test` row when test metrics are present.
    /// The test row reuses the validation columns and leaves `train_loss` empty.
    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_acc.to_string(),
                r.val_micro_f1.to_string(),
                r.val_macro_f1.to_string(),
            ])
            .map_err(csv_err)?;
        }
        if let Some(t) = &self.test {
            w.write_record([
                "test".to_string(),
                String::new(),
                t.accuracy.to_string(),
                t.micro_f1.to_string(),
                t.macro_f1.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }

    /// Writes both files into `dir` (created if missing), each atomically.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("metrics.csv"), &self.metrics_csv()?)?;
        write_atomic(&dir.join("manifest.json"), self.to_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
