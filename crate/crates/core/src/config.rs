//! Flat `key = value` run configuration.
//!
//! One line per setting, with `#` comment lines and blank lines ignored.
//! Keys are dotted: `model.*` describes the architecture, `sharing.*` the
//! parameter-sharing plan, `train.*` the schedule and optimization,
//! `bandit.*` the scheduler's controller, and `data.<task>.*` the corpus
//! paths for each of `main`, `entail`, and `para`.
//!
//! Command-line overrides reuse the same syntax (`key=value`); a bare key
//! without a dot is shorthand for `train.<key>`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sharing::PlanPreset;
use crate::trainer::TrainConfig;

/// Corpus locations for one task. A task participates in training when both
/// training paths are set; dev paths feed validation rewards and selection.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskPaths {
    pub train_src: Option<String>,
    pub train_tgt: Option<String>,
    pub dev_src: Option<String>,
    pub dev_tgt: Option<String>,
}

impl TaskPaths {
    pub fn has_train(&self) -> bool {
        self.train_src.is_some() && self.train_tgt.is_some()
    }

    pub fn has_dev(&self) -> bool {
        self.dev_src.is_some() && self.dev_tgt.is_some()
    }
}

/// Everything a run needs: architecture sizes, sharing preset, training
/// configuration, and data paths. `vocab_size` is not configured — it comes
/// from the corpus at vocabulary-build time, capped by `vocab_cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hidden_size: usize,
    pub embedding_size: usize,
    pub reverse_source: bool,
    pub vocab_cap: usize,
    pub preset: PlanPreset,
    pub train: TrainConfig,
    pub tasks: BTreeMap<String, TaskPaths>,
    pub out_dir: String,
    /// Save (and score) a checkpoint every this many batch steps; 0 saves
    /// only the final one.
    pub checkpoint_every: usize,
    /// Length cap for decodes done during model selection.
    pub decode_max_len: usize,
    /// Recorded trace consumed by the ratio_from_trace schedule.
    pub trace_file: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hidden_size: 256,
            embedding_size: 128,
            reverse_source: false,
            vocab_cap: crate::corpus::DEFAULT_VOCAB_CAP,
            preset: PlanPreset::Final,
            train: TrainConfig::default(),
            tasks: BTreeMap::new(),
            out_dir: "out".to_string(),
            checkpoint_every: 0,
            decode_max_len: 60,
            trace_file: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key {key:?} expects {what}, got {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key {key:?} expects true or false, got {value:?}"
        ))),
    }
}

fn parse_ratio(key: &str, value: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "key {key:?} expects a:b:c, got {value:?}"
        )));
    }
    let mut ratio = [0u32; 3];
    for (slot, part) in ratio.iter_mut().zip(&parts) {
        *slot = parse_num(key, part, "a nonnegative integer")?;
    }
    Ok(ratio)
}

impl RunConfig {
    /// Applies one `key = value` assignment. Unknown keys are errors that
    /// name the key. A key without a dot is treated as `train.<key>`.
    pub fn apply(&mut self, raw_key: &str, value: &str) -> Result<()> {
        let key = raw_key.trim();
        let value = value.trim();
        let resolved = if key.contains('.') {
            key.to_string()
        } else {
            format!("train.{key}")
        };
        match resolved.as_str() {
            "model.hidden_size" => self.hidden_size = parse_num(key, value, "a positive integer")?,
            "model.embedding_size" => {
                self.embedding_size = parse_num(key, value, "a positive integer")?
            }
            "model.reverse_source" => self.reverse_source = parse_bool(key, value)?,
            "model.vocab_cap" => self.vocab_cap = parse_num(key, value, "a positive integer")?,
            "sharing.preset" => self.preset = value.parse()?,
            "sharing.lambda" => self.train.lambda = parse_num(key, value, "a number")?,
            "train.schedule" => self.train.schedule = value.parse()?,
            "train.mixing_ratio" => self.train.mixing_ratio = parse_ratio(key, value)?,
            "train.steps" => self.train.steps = parse_num(key, value, "an integer")?,
            "train.rounds" => self.train.rounds = parse_num(key, value, "an integer")?,
            "train.n_s" => self.train.n_s = parse_num(key, value, "an integer")?,
            "train.learning_rate" => {
                self.train.learning_rate = parse_num(key, value, "a number")?
            }
            "train.clip_norm" => self.train.clip_norm = parse_num(key, value, "a number")?,
            "train.batch_size" => self.train.batch_size = parse_num(key, value, "an integer")?,
            "train.eval_subset_size" => {
                self.train.eval_subset_size = parse_num(key, value, "an integer")?
            }
            "train.seed" => self.train.seed = parse_num(key, value, "an integer")?,
            "train.warm_start" => self.train.warm_start = Some(value.to_string()),
            "train.trace_fraction" => {
                self.train.trace_fraction = parse_num(key, value, "a number")?
            }
            "train.trace_file" => self.trace_file = Some(value.to_string()),
            "train.out_dir" => self.out_dir = value.to_string(),
            "train.checkpoint_every" => {
                self.checkpoint_every = parse_num(key, value, "an integer")?
            }
            "train.decode_max_len" => {
                self.decode_max_len = parse_num(key, value, "a positive integer")?
            }
            "bandit.alpha" => self.train.bandit_alpha = parse_num(key, value, "a number")?,
            "bandit.tau" => self.train.bandit_tau = parse_num(key, value, "a number")?,
            "bandit.q0" => self.train.bandit_q0 = parse_num(key, value, "a number")?,
            _ => {
                if let Some(rest) = resolved.strip_prefix("data.") {
                    return self.apply_data_key(key, rest, value);
                }
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    fn apply_data_key(&mut self, raw_key: &str, rest: &str, value: &str) -> Result<()> {
        let (task, field) = rest.split_once('.').ok_or_else(|| {
            Error::Config(format!(
                "unknown config key {raw_key:?} (data keys look like data.main.train_src)"
            ))
        })?;
        if !crate::tasks::ALL.contains(&task) {
            return Err(Error::Config(format!(
                "unknown task {task:?} in key {raw_key:?} (tasks are main, entail, para)"
            )));
        }
        let paths = self.tasks.entry(task.to_string()).or_default();
        match field {
            "train_src" => paths.train_src = Some(value.to_string()),
            "train_tgt" => paths.train_tgt = Some(value.to_string()),
            "dev_src" => paths.dev_src = Some(value.to_string()),
            "dev_tgt" => paths.dev_tgt = Some(value.to_string()),
            _ => return Err(Error::Config(format!("unknown config key {raw_key:?}"))),
        }
        Ok(())
    }

    /// Parses a whole config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value, got {line:?}", i + 1))
            })?;
            cfg.apply(key, value)
                .map_err(|e| Error::Config(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_text(&text)
    }

    /// Applies `key=value` command-line overrides on top of file values.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Config(format!("override {item:?} is not of the form key=value"))
            })?;
            self.apply(key, value)?;
        }
        Ok(())
    }
}
