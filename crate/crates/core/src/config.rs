//! Run configuration: a flat `key = value` file (TOML syntax) plus
//! command-line overrides, which win.
//!
//! | key              | default                         |
//! |------------------|---------------------------------|
//! | `method`         | `hut`                           |
//! | `targets`        | `"Wq,Wv"`                       |
//! | `rank`           | 8 (4 for the classification task)|
//! | `lr`             | 0.01                            |
//! | `weight_decay`   | 0.0                             |
//! | `steps`          | 500                             |
//! | `batch_size`     | 0 (full batch)                  |
//! | `seed`           | 0                               |
//! | `task`           | `regression`                    |
//! | `model_dim`      | 32 (64 for the rank sweep)      |
//! | `seq_len`        | 8                               |
//! | `train_size`     | 32                              |
//! | `eval_size`      | 16                              |
//! | `num_classes`    | 4                               |
//! | `modulation_std` | 0.5                             |
//! | `additive_std`   | 0.0                             |
//! | `noise_std`      | 0.01                            |
//! | `lora_scale`     | 1.0                             |

use std::path::Path;

use serde::Deserialize;

use crate::adapter::Method;
use crate::block::{format_targets, parse_targets, WeightTarget};
use crate::error::{HutError, Result};
use crate::optim::AdamWConfig;
use crate::task::{TaskKind, TaskSpec};
use crate::train::FinetuneConfig;

/// Every key optional; unset keys fall back to defaults at resolve time.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub method: Option<String>,
    pub targets: Option<String>,
    pub rank: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub task: Option<String>,
    pub model_dim: Option<usize>,
    pub seq_len: Option<usize>,
    pub train_size: Option<usize>,
    pub eval_size: Option<usize>,
    pub num_classes: Option<usize>,
    pub modulation_std: Option<f64>,
    pub additive_std: Option<f64>,
    pub noise_std: Option<f64>,
    pub lora_scale: Option<f64>,
}

macro_rules! layer {
    ($base:expr, $top:expr, $($f:ident),*) => {
        ConfigOverrides { $($f: $top.$f.clone().or_else(|| $base.$f.clone()),)* }
    };
}

impl ConfigOverrides {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HutError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HutError::io(path, e))?;
        Self::parse(&text)
    }

    /// `self` with every key set in `top` replaced.
    pub fn overlay(&self, top: &ConfigOverrides) -> ConfigOverrides {
        layer!(
            self, top, method, targets, rank, lr, weight_decay, steps, batch_size, seed, task,
            model_dim, seq_len, train_size, eval_size, num_classes, modulation_std, additive_std,
            noise_std, lora_scale
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub targets: Vec<WeightTarget>,
    pub rank: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task: TaskKind,
    pub model_dim: usize,
    pub seq_len: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub num_classes: usize,
    pub modulation_std: f64,
    pub additive_std: f64,
    pub noise_std: f64,
    pub lora_scale: f64,
}

pub const DEFAULT_MODEL_DIM: usize = 32;
pub const RANK_SWEEP_MODEL_DIM: usize = 64;

fn non_negative(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(HutError::Config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v > 0 {
        Ok(v)
    } else {
        Err(HutError::Config(format!("{name} must be positive")))
    }
}

impl TrainConfig {
    /// Fills defaults and validates every field. `default_model_dim` lets
    /// commands pick a width when the config leaves it unset.
    pub fn resolve(o: &ConfigOverrides, default_model_dim: usize) -> Result<Self> {
        let task: TaskKind = o.task.as_deref().unwrap_or("regression").parse()?;
        let default_rank = match task {
            TaskKind::Regression => 8,
            TaskKind::TokenClassification => 4,
        };
        let cfg = TrainConfig {
            method: o.method.as_deref().unwrap_or("hut").parse()?,
            targets: parse_targets(o.targets.as_deref().unwrap_or("Wq,Wv"))?,
            rank: positive("rank", o.rank.unwrap_or(default_rank))?,
            lr: non_negative("lr", o.lr.unwrap_or(1e-2))?,
            weight_decay: non_negative("weight_decay", o.weight_decay.unwrap_or(0.0))?,
            steps: o.steps.unwrap_or(500),
            batch_size: o.batch_size.unwrap_or(0),
            seed: o.seed.unwrap_or(0),
            task,
            model_dim: positive("model_dim", o.model_dim.unwrap_or(default_model_dim))?,
            seq_len: positive("seq_len", o.seq_len.unwrap_or(8))?,
            train_size: positive("train_size", o.train_size.unwrap_or(32))?,
            eval_size: positive("eval_size", o.eval_size.unwrap_or(16))?,
            num_classes: o.num_classes.unwrap_or(4),
            modulation_std: non_negative("modulation_std", o.modulation_std.unwrap_or(0.5))?,
            additive_std: non_negative("additive_std", o.additive_std.unwrap_or(0.0))?,
            noise_std: non_negative("noise_std", o.noise_std.unwrap_or(0.01))?,
            lora_scale: o.lora_scale.unwrap_or(1.0),
        };
        if task == TaskKind::TokenClassification && cfg.num_classes < 2 {
            return Err(HutError::Config("num_classes must be >= 2".into()));
        }
        if !(cfg.lora_scale.is_finite() && cfg.lora_scale >= 1.0) {
            return Err(HutError::Config(format!(
                "lora_scale must be >= 1, got {}",
                cfg.lora_scale
            )));
        }
        Ok(cfg)
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            seed: self.seed,
            train_size: self.train_size,
            eval_size: self.eval_size,
            model_dim: self.model_dim,
            seq_len: self.seq_len,
            num_classes: self.num_classes,
            modulation_std: self.modulation_std,
            additive_std: self.additive_std,
            ..TaskSpec::default()
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            method: self.method,
            targets: self.targets.clone(),
            rank: self.rank,
            steps: self.steps,
            batch_size: self.batch_size,
            optimizer: AdamWConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            noise_std: self.noise_std,
            lora_scale: self.lora_scale,
            seed: self.seed,
        }
    }

    /// Sorted `key, value` pairs; values parse back through
    /// [`ConfigOverrides`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("additive_std", self.additive_std.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_size", self.eval_size.to_string()),
            ("lora_scale", self.lora_scale.to_string()),
            ("lr", self.lr.to_string()),
            ("method", self.method.to_string()),
            ("model_dim", self.model_dim.to_string()),
            ("modulation_std", self.modulation_std.to_string()),
            ("noise_std", self.noise_std.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("rank", self.rank.to_string()),
            ("seed", self.seed.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("steps", self.steps.to_string()),
            ("targets", format_targets(&self.targets).replace('+', ",")),
            ("task", self.task.to_string()),
            ("train_size", self.train_size.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ];
        pairs.sort();
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
