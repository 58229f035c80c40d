//! Flat `key = value` run configuration with `#` comments.
//!
//! Defaults follow the standard hyper-parameter setup: dropout 0.25, CRF
//! classifier, LSTM size 100, 50 epochs, early-stopping patience 5, word
//! embedding dimension 128, Adam, batch size 32, CNN window 3 with 30
//! filters. Command-line flags override file values.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::models::{Classifier, TaggerConfig, TrainConfig};
use crate::optim::OptimizerKind;

/// Every accepted configuration key, in documentation order.
pub const VALID_KEYS: &[&str] = &[
    "dropout",
    "classifier",
    "lstm_size",
    "epochs",
    "patience",
    "embed_dim",
    "optimizer",
    "batch_size",
    "cnn_window",
    "cnn_filters",
    "char_dim",
    "lr",
    "clip",
    "seed",
    "stop_at_dev",
    "unfreeze_word_embeddings",
    "mtl_head_blstm",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key '{key}'; valid keys: {}", VALID_KEYS.join(", "))]
    UnknownKey { key: String },
    #[error("invalid value '{value}' for '{key}': {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("line {line}: expected 'key = value'")]
    Malformed { line: usize },
}

/// The fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dropout: f64,
    pub classifier: String,
    pub lstm_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub embed_dim: usize,
    pub optimizer: String,
    pub batch_size: usize,
    pub cnn_window: usize,
    pub cnn_filters: usize,
    pub char_dim: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: Option<u64>,
    pub stop_at_dev: Option<f64>,
    pub unfreeze_word_embeddings: bool,
    pub mtl_head_blstm: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dropout: 0.25,
            classifier: "crf".into(),
            lstm_size: 100,
            epochs: 50,
            patience: 5,
            embed_dim: 128,
            optimizer: "adam".into(),
            batch_size: 32,
            cnn_window: 3,
            cnn_filters: 30,
            char_dim: 30,
            lr: 1e-3,
            clip: 5.0,
            seed: None,
            stop_at_dev: None,
            unfreeze_word_embeddings: false,
            mtl_head_blstm: true,
        }
    }
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn from_text(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Malformed { line: i + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key, validating both the key and the value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |reason: &str| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "dropout" => {
                let v: f64 = value.parse().map_err(|_| invalid("not a number"))?;
                if !(0.0..1.0).contains(&v) {
                    return Err(invalid("must be in [0, 1)"));
                }
                self.dropout = v;
            }
            "classifier" => match value {
                "crf" | "softmax" => self.classifier = value.to_string(),
                _ => return Err(invalid("expected 'crf' or 'softmax'")),
            },
            "lstm_size" => self.lstm_size = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "epochs" => self.epochs = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "patience" => self.patience = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "embed_dim" => self.embed_dim = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "optimizer" => match value {
                "adam" | "adadelta" => self.optimizer = value.to_string(),
                _ => return Err(invalid("expected 'adam' or 'adadelta'")),
            },
            "batch_size" => self.batch_size = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "cnn_window" => self.cnn_window = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "cnn_filters" => self.cnn_filters = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "char_dim" => self.char_dim = parse_positive(value).ok_or_else(|| invalid("must be a positive integer"))?,
            "lr" => {
                let v: f64 = value.parse().map_err(|_| invalid("not a number"))?;
                if v <= 0.0 {
                    return Err(invalid("must be positive"));
                }
                self.lr = v;
            }
            "clip" => {
                let v: f64 = value.parse().map_err(|_| invalid("not a number"))?;
                if v <= 0.0 {
                    return Err(invalid("must be positive"));
                }
                self.clip = v;
            }
            "seed" => {
                self.seed = Some(value.parse().map_err(|_| invalid("not an integer"))?);
            }
            "stop_at_dev" => {
                let v: f64 = value.parse().map_err(|_| invalid("not a number"))?;
                self.stop_at_dev = Some(v);
            }
            "unfreeze_word_embeddings" => {
                self.unfreeze_word_embeddings =
                    value.parse().map_err(|_| invalid("expected true/false"))?;
            }
            "mtl_head_blstm" => {
                self.mtl_head_blstm = value.parse().map_err(|_| invalid("expected true/false"))?;
            }
            _ => return Err(ConfigError::UnknownKey { key: key.to_string() }),
        }
        Ok(())
    }

    /// The seed resolution order: explicit config value, then the
    /// `SEQTRANS_SEED` environment variable, then 42.
    pub fn resolved_seed(&self) -> u64 {
        self.seed
            .or_else(|| std::env::var("SEQTRANS_SEED").ok().and_then(|s| s.parse().ok()))
            .unwrap_or(42)
    }

    /// Key/value pairs of the fully resolved config, for run-report headers.
    pub fn echo(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("dropout".to_string(), format!("{}", self.dropout)),
            ("classifier".to_string(), self.classifier.clone()),
            ("lstm_size".to_string(), self.lstm_size.to_string()),
            ("epochs".to_string(), self.epochs.to_string()),
            ("patience".to_string(), self.patience.to_string()),
            ("embed_dim".to_string(), self.embed_dim.to_string()),
            ("optimizer".to_string(), self.optimizer.clone()),
            ("batch_size".to_string(), self.batch_size.to_string()),
            ("cnn_window".to_string(), self.cnn_window.to_string()),
            ("cnn_filters".to_string(), self.cnn_filters.to_string()),
            ("char_dim".to_string(), self.char_dim.to_string()),
            ("lr".to_string(), format!("{}", self.lr)),
            ("clip".to_string(), format!("{}", self.clip)),
            ("seed".to_string(), self.resolved_seed().to_string()),
        ];
        if let Some(t) = self.stop_at_dev {
            out.push(("stop_at_dev".to_string(), format!("{t}")));
        }
        out.push((
            "unfreeze_word_embeddings".to_string(),
            self.unfreeze_word_embeddings.to_string(),
        ));
        out.push(("mtl_head_blstm".to_string(), self.mtl_head_blstm.to_string()));
        out
    }

    pub fn tagger_config(&self) -> TaggerConfig {
        TaggerConfig {
            dropout: self.dropout as f32,
            lstm_size: self.lstm_size,
            embed_dim: self.embed_dim,
            char_dim: self.char_dim,
            cnn_window: self.cnn_window,
            cnn_filters: self.cnn_filters,
            classifier: if self.classifier == "softmax" {
                Classifier::Softmax
            } else {
                Classifier::Crf
            },
            mtl_head_blstm: self.mtl_head_blstm,
            freeze_word_embeddings: !self.unfreeze_word_embeddings,
            seed: self.resolved_seed(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            optimizer: if self.optimizer == "adadelta" {
                OptimizerKind::adadelta_default()
            } else {
                OptimizerKind::Adam { lr: self.lr }
            },
            clip: self.clip,
            seed: self.resolved_seed(),
            stop_at_dev: self.stop_at_dev,
        }
    }

    /// Applies `key=value` override strings (CLI flags beat file values).
    pub fn apply_overrides(
        &mut self,
        overrides: &BTreeMap<String, String>,
    ) -> Result<(), ConfigError> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        Ok(())
    }
}

fn parse_positive(value: &str) -> Option<usize> {
    value.parse::<usize>().ok().filter(|&v| v >= 1)
}
