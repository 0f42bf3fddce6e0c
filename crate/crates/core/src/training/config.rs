use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{check_f, Pooling, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Text feature width.
    pub d_h: usize,
    /// Label embedding width; must equal `d_h`.
    pub d_l: usize,
    pub kernel: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerConfig,
    /// Loss weight `F`.
    pub f_weight: f64,
    /// When set, `F` moves linearly from `f_weight` to this over the epochs.
    pub f_final: Option<f64>,
    pub pooling: Pooling,
    pub variant: Variant,
    pub seed: u64,
    pub threshold: f64,
    /// Stop after this many epochs without a better validation Micro-F1.
    pub patience: Option<usize>,
    pub conv_relu: bool,
    pub share_embeddings: bool,
    pub text_embedding_std: f64,
    pub label_embedding_std: f64,
    /// Optional `N x d_l` label table used to initialise label embeddings.
    pub label_init: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            d_l: 64,
            kernel: 4,
            max_len: 256,
            batch_size: 32,
            epochs: 30,
            learning_rate: 1e-3,
            optimizer: OptimizerConfig::default(),
            f_weight: 0.5,
            f_final: None,
            pooling: Pooling::Max,
            variant: Variant::Full,
            seed: 0,
            threshold: 0.5,
            patience: None,
            conv_relu: true,
            share_embeddings: false,
            text_embedding_std: 0.1,
            label_embedding_std: 0.02,
            label_init: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_h == 0 || self.d_h != self.d_l {
            return bad(format!(
                "d_h ({}) and d_l ({}) must be equal and positive",
                self.d_h, self.d_l
            ));
        }
        if self.kernel == 0 {
            return bad("kernel must be at least 1".into());
        }
        if self.max_len < self.kernel {
            return bad(format!(
                "max_len {} is shorter than kernel {}",
                self.max_len, self.kernel
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        check_f(self.f_weight)?;
        if let Some(f) = self.f_final {
            check_f(f)?;
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)".into());
        }
        if !(self.text_embedding_std > 0.0 && self.label_embedding_std > 0.0) {
            return bad("initialisation scales must be positive".into());
        }
        Ok(())
    }

    /// `F` used during `epoch` (0-based).
    pub fn f_at(&self, epoch: usize) -> f64 {
        match self.f_final {
            Some(end) if self.epochs > 1 => {
                let t = epoch as f64 / (self.epochs - 1) as f64;
                self.f_weight + (end - self.f_weight) * t
            }
            _ => self.f_weight,
        }
    }

    /// Reads TOML or JSON, chosen by file extension (`.json` is JSON,
    /// anything else TOML).
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
