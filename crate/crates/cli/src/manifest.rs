//! `manifest.json`: everything needed to rerun a training command.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ooskge::training::TrainOutcome;
use ooskge::TrainConfig;

use crate::Failure;

pub const FILE_NAME: &str = "manifest.json";
pub const SPLIT_FILES: [&str; 4] = ["train.txt", "valid.txt", "test.txt", "stats.txt"];

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub lr: f64,
    pub lambda: f64,
    pub neg_ratio: usize,
    pub psi: f64,
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub aggregator: String,
    pub agg_lambda: f64,
    pub eval_every: usize,
}

impl From<&TrainConfig> for ConfigRecord {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.lr,
            lambda: c.lambda_reg,
            neg_ratio: c.neg_ratio,
            psi: c.psi,
            dim: c.dim,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
            aggregator: c.aggregator.to_string(),
            agg_lambda: c.agg_lambda.unwrap_or(c.lambda_reg),
            eval_every: c.eval_every,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dir: String,
    /// SHA-256 per split file, hex encoded.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub train_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ConfigRecord,
    pub seed: u64,
    pub dataset: DatasetRecord,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub training: Option<TrainingRecord>,
}

impl RunManifest {
    pub fn new(cfg: &TrainConfig, dataset: &Path, checksums: BTreeMap<String, String>) -> Self {
        Self {
            config: cfg.into(),
            seed: cfg.seed,
            dataset: DatasetRecord {
                dir: dataset.display().to_string(),
                checksums,
            },
            artifacts: BTreeMap::new(),
            training: None,
        }
    }

    pub fn artifact(mut self, name: &str, path: &str) -> Self {
        self.artifacts.insert(name.into(), path.into());
        self
    }

    pub fn with_training(mut self, outcome: &TrainOutcome, seconds: f64) -> Self {
        self.training = Some(TrainingRecord {
            best_epoch: outcome.best_epoch,
            best_valid_mrr: outcome.best_valid_mrr,
            train_seconds: seconds,
        });
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Failure::Runtime(format!("serializing manifest: {e}")))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| crate::io_failure(path, e))
    }

    pub fn load_if_present(path: &Path) -> Result<Option<Self>, Failure> {
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).map_err(|e| crate::io_failure(path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
    }
}

pub fn checksums(dir: &Path) -> Result<BTreeMap<String, String>, Failure> {
    let mut out = BTreeMap::new();
    for name in SPLIT_FILES {
        let path = dir.join(name);
        let bytes = fs::read(&path).map_err(|e| crate::io_failure(&path, e))?;
        out.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
    }
    Ok(out)
}
