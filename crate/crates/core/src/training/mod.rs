//! Masked-language-model pre-training and classifier fine-tuning.

mod finetune;
mod masking;
mod optim;
mod pretrain;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use finetune::{finetune, finetune_with_hook, predict, Example, FinetuneOutcome};
pub use masking::mask_tokens;
pub use optim::{clip_global_norm, lr_at, warmup_steps, AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use pretrain::{masked_token_accuracy, pretrain, pretrain_sequences, PretrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    /// Update count for pre-training; fine-tuning derives it from epochs.
    pub max_steps: usize,
    pub mask_prob: f64,
    pub seed: u64,
    /// Global-norm clipping threshold; off when `None`.
    pub grad_clip: Option<f64>,
    /// Pre-training checkpoint period in steps.
    pub checkpoint_interval: Option<usize>,
    /// Stratified share of fine-tuning examples held out for monitoring.
    pub validation_fraction: f64,
    /// Token budget per sequence, CLS and SEP included.
    pub seq_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 32,
            learning_rate: 5e-5,
            weight_decay: 0.01,
            warmup_fraction: 0.1,
            max_steps: 1000,
            mask_prob: 0.15,
            seed: 0,
            grad_clip: None,
            checkpoint_interval: None,
            validation_fraction: 0.1,
            seq_len: 32,
        }
    }
}

impl TrainConfig {
    pub fn pretrain_default() -> Self {
        Self {
            batch_size: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return bad("mask_prob must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if self.checkpoint_interval == Some(0) {
            return bad("checkpoint_interval must be positive");
        }
        if self.seq_len < 2 {
            return bad("seq_len must be at least 2");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn push(&mut self, step: usize, loss: f64, lr: f64) {
        debug_assert!(self.entries.last().map_or(true, |e| e.step < step));
        self.entries.push(LogEntry { step, loss, lr });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.loss).collect()
    }

    /// Trailing moving average over `window` steps.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        let l = self.losses();
        (0..l.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                l[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "loss", "lr"]).map_err(csv_err)?;
        for e in &self.entries {
            out.write_record([e.step.to_string(), format!("{:.6}", e.loss), format!("{:.6e}", e.lr)])
                .map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}
