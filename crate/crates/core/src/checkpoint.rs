//! Versioned binary checkpoints.
//!
//! A checkpoint is a self-describing container: run metadata as key/value
//! strings, the vocabulary text, every task's named parameter tensors (name,
//! layer group, shape, 64-bit values), optimizer moments, the scheduler's
//! bandit statistics, and each task's data-cursor position. Values are
//! stored as raw IEEE-754 bit patterns, so a save/load cycle is bitwise
//! exact and a resumed run continues precisely where it stopped.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "TSCP"  u32 version
//! meta     u32 count, then count × (string key, string value)
//! vocab    string (one token per line, id order)
//! stores   u32 count, then per store:
//!            string task, u32 tensor count, then per tensor:
//!              string name, string group, u32 ndim, ndim × u32 dims,
//!              u64 value count, values as u64 bit patterns
//! adam     u32 count, then per entry:
//!            string task, u64 step count, u32 slot count, then per slot:
//!              string name, u64 len, len × u64 first-moment bits,
//!              len × u64 second-moment bits
//! bandit   u8 present, if 1: u32 arms, arms × u64 quality bits,
//!            u64 round, arms × u64 pull counts
//! progress u32 count, then count × (string task, u64 epoch, u64 cursor)
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::{write_atomic, Vocab};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::ParameterStore;
use crate::sharing::LayerGroup;
use crate::tensor::Tensor;
use crate::trainer::{AdamState, Schedule, Trainer};

const MAGIC: &[u8; 4] = b"TSCP";
const VERSION: u32 = 1;

/// One task's saved tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreBlock {
    pub task: String,
    pub tensors: Vec<TensorBlock>,
}

/// One saved tensor: identity, layer group, shape, and exact values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// One task's Adam accumulator state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamBlock {
    pub task: String,
    pub step_count: u64,
    /// (parameter name, first moments, second moments)
    pub slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

/// Scheduler bandit statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditBlock {
    pub q: Vec<f64>,
    pub round: u64,
    pub pulls: Vec<u64>,
}

/// In-memory form of a saved run. Build one with [`Checkpoint::from_trainer`]
/// or [`Checkpoint::load`]; apply it with [`Checkpoint::restore_into`] (full
/// resume) or read pieces out for standalone decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub vocab_text: String,
    pub stores: Vec<StoreBlock>,
    pub adam: Vec<AdamBlock>,
    pub bandit: Option<BanditBlock>,
    /// (task, epoch, cursor) per task.
    pub progress: Vec<(String, u64, u64)>,
}

impl Checkpoint {
    /// Captures the complete state of a trainer.
    pub fn from_trainer(trainer: &Trainer) -> Checkpoint {
        let mc = trainer.model_config();
        let cfg = trainer.config();
        let mut meta = BTreeMap::new();
        meta.insert("model.hidden_size".into(), mc.hidden_size.to_string());
        meta.insert("model.embedding_size".into(), mc.embedding_size.to_string());
        meta.insert("model.vocab_size".into(), mc.vocab_size.to_string());
        meta.insert("model.reverse_source".into(), mc.reverse_source.to_string());
        meta.insert("global_step".into(), trainer.global_step().to_string());
        meta.insert("rounds_done".into(), trainer.rounds_done().to_string());
        meta.insert("schedule".into(), cfg.schedule.to_string());
        meta.insert("train.seed".into(), cfg.seed.to_string());

        let stores = trainer
            .stores()
            .iter()
            .map(|(task, store)| StoreBlock {
                task: task.clone(),
                tensors: store
                    .iter()
                    .map(|(name, handle)| {
                        let p = handle.borrow();
                        TensorBlock {
                            name: name.clone(),
                            group: p.group.name().to_string(),
                            shape: p.tensor.shape().to_vec(),
                            values: p.tensor.values().to_vec(),
                        }
                    })
                    .collect(),
            })
            .collect();

        let adam = trainer
            .task_names()
            .iter()
            .map(|task| {
                let state = trainer.adam_state(task).expect("task has optimizer state");
                AdamBlock {
                    task: task.clone(),
                    step_count: state.step_count(),
                    slots: state.export(),
                }
            })
            .collect();

        let bandit = trainer.bandit().map(|b| BanditBlock {
            q: b.q().to_vec(),
            round: b.round(),
            pulls: b.pulls().to_vec(),
        });

        let progress = trainer
            .progress()
            .into_iter()
            .map(|(task, epoch, cursor)| (task, epoch, cursor as u64))
            .collect();

        Checkpoint {
            meta,
            vocab_text: trainer.vocab().to_text(),
            stores,
            adam,
            bandit,
            progress,
        }
    }

    fn meta_field(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata field {key:?}")))
    }

    fn meta_num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_field(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata field {key:?} has bad value {raw:?}")))
    }

    /// Rebuilds the architecture description from metadata.
    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            hidden_size: self.meta_num("model.hidden_size")?,
            embedding_size: self.meta_num("model.embedding_size")?,
            vocab_size: self.meta_num("model.vocab_size")?,
            reverse_source: self.meta_num("model.reverse_source")?,
        })
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_text(&self.vocab_text)
    }

    pub fn global_step(&self) -> Result<u64> {
        self.meta_num("global_step")
    }

    pub fn rounds_done(&self) -> Result<u64> {
        self.meta_num("rounds_done")
    }

    pub fn schedule(&self) -> Result<Schedule> {
        self.meta_field("schedule")?.parse()
    }

    pub fn seed(&self) -> Result<u64> {
        self.meta_num("train.seed")
    }

    /// Rebuilds one task's parameter store from its saved tensors, for use
    /// outside a trainer (decoding, inspection). Gradient buffers are
    /// attached so the store is also usable as a warm start.
    pub fn store(&self, task: &str) -> Result<ParameterStore> {
        let block = self
            .stores
            .iter()
            .find(|s| s.task == task)
            .ok_or_else(|| Error::Checkpoint(format!("no saved store for task {task:?}")))?;
        let mut store = ParameterStore::new(task);
        for t in &block.tensors {
            let group = LayerGroup::from_name(&t.group).ok_or_else(|| {
                Error::Checkpoint(format!(
                    "tensor {:?} names unknown layer group {:?}",
                    t.name, t.group
                ))
            })?;
            let numel: usize = t.shape.iter().product();
            if numel != t.values.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} shape {:?} disagrees with {} stored values",
                    t.name,
                    t.shape,
                    t.values.len()
                )));
            }
            store.insert(
                &t.name,
                group,
                Tensor::from_values(&t.shape, t.values.clone()).with_grad(),
            );
        }
        Ok(store)
    }

    fn check_model_match(&self, trainer: &Trainer) -> Result<()> {
        let saved = self.model_config()?;
        let live = trainer.model_config();
        for (field, a, b) in [
            ("hidden_size", saved.hidden_size, live.hidden_size),
            ("embedding_size", saved.embedding_size, live.embedding_size),
            ("vocab_size", saved.vocab_size, live.vocab_size),
        ] {
            if a != b {
                return Err(Error::Checkpoint(format!(
                    "model shape conflict: checkpoint {field} is {a}, run expects {b}"
                )));
            }
        }
        if saved.reverse_source != live.reverse_source {
            return Err(Error::Checkpoint(format!(
                "model shape conflict: checkpoint reverse_source is {}, run expects {}",
                saved.reverse_source, live.reverse_source
            )));
        }
        Ok(())
    }

    /// Copies saved parameter values into a trainer's stores (hard-sharing
    /// aliases are preserved — values are written in place). Every task the
    /// trainer owns must be present in the checkpoint; extra saved tasks are
    /// ignored. Optimizer state, counters, and scheduler state are left
    /// untouched — this is the warm-start path.
    pub fn restore_params_into(&self, trainer: &mut Trainer) -> Result<()> {
        self.check_model_match(trainer)?;
        for task in trainer.task_names() {
            let block = self
                .stores
                .iter()
                .find(|s| s.task == task)
                .ok_or_else(|| Error::Checkpoint(format!("no saved store for task {task:?}")))?;
            let values: Vec<(String, Vec<f64>)> = block
                .tensors
                .iter()
                .map(|t| (t.name.clone(), t.values.clone()))
                .collect();
            trainer.load_store_values(&task, &values)?;
        }
        Ok(())
    }

    /// Full resume: parameters, optimizer moments, data cursors, step and
    /// round counters, and bandit statistics. After this the trainer's next
    /// step is bit-for-bit the step the saved run would have taken.
    pub fn restore_into(&self, trainer: &mut Trainer) -> Result<()> {
        self.restore_params_into(trainer)?;
        let names = trainer.task_names();
        for block in &self.adam {
            if names.contains(&block.task) {
                trainer.set_adam_state(
                    &block.task,
                    AdamState::restore(block.step_count, block.slots.clone()),
                )?;
            }
        }
        for (task, epoch, cursor) in &self.progress {
            if names.contains(task) {
                trainer.set_progress(task, *epoch, *cursor as usize)?;
            }
        }
        trainer.set_global_step(self.global_step()?);
        trainer.set_rounds_done(self.rounds_done()?);
        if let Some(block) = &self.bandit {
            if let Some(bandit) = trainer.bandit_mut() {
                bandit.restore(block.q.clone(), block.round, block.pulls.clone())?;
            }
        }
        Ok(())
    }

    /// Serializes to the container format described in the module docs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);

        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }

        put_str(&mut out, &self.vocab_text);

        put_u32(&mut out, self.stores.len() as u32);
        for store in &self.stores {
            put_str(&mut out, &store.task);
            put_u32(&mut out, store.tensors.len() as u32);
            for t in &store.tensors {
                put_str(&mut out, &t.name);
                put_str(&mut out, &t.group);
                put_u32(&mut out, t.shape.len() as u32);
                for &d in &t.shape {
                    put_u32(&mut out, d as u32);
                }
                put_u64(&mut out, t.values.len() as u64);
                for &v in &t.values {
                    put_f64(&mut out, v);
                }
            }
        }

        put_u32(&mut out, self.adam.len() as u32);
        for a in &self.adam {
            put_str(&mut out, &a.task);
            put_u64(&mut out, a.step_count);
            put_u32(&mut out, a.slots.len() as u32);
            for (name, m, v) in &a.slots {
                put_str(&mut out, name);
                put_u64(&mut out, m.len() as u64);
                for &x in m {
                    put_f64(&mut out, x);
                }
                for &x in v {
                    put_f64(&mut out, x);
                }
            }
        }

        match &self.bandit {
            None => out.push(0),
            Some(b) => {
                out.push(1);
                put_u32(&mut out, b.q.len() as u32);
                for &q in &b.q {
                    put_f64(&mut out, q);
                }
                put_u64(&mut out, b.round);
                for &p in &b.pulls {
                    put_u64(&mut out, p);
                }
            }
        }

        put_u32(&mut out, self.progress.len() as u32);
        for (task, epoch, cursor) in &self.progress {
            put_str(&mut out, task);
            put_u64(&mut out, *epoch);
            put_u64(&mut out, *cursor);
        }

        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}, not a checkpoint file"
            )));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }

        let mut meta = BTreeMap::new();
        let n_meta = r.u32("metadata count")?;
        for _ in 0..n_meta {
            let k = r.string("metadata key")?;
            let v = r.string("metadata value")?;
            meta.insert(k, v);
        }

        let vocab_text = r.string("vocabulary")?;

        let mut stores = Vec::new();
        let n_stores = r.u32("store count")?;
        for _ in 0..n_stores {
            let task = r.string("store task")?;
            let n_tensors = r.u32("tensor count")?;
            let mut tensors = Vec::with_capacity(n_tensors as usize);
            for _ in 0..n_tensors {
                let name = r.string("tensor name")?;
                let group = r.string("tensor group")?;
                let ndim = r.u32("tensor rank")?;
                let mut shape = Vec::with_capacity(ndim as usize);
                for _ in 0..ndim {
                    shape.push(r.u32("tensor dim")? as usize);
                }
                let count = r.u64("tensor value count")?;
                if count != shape.iter().product::<usize>() as u64 {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name:?} shape {shape:?} disagrees with {count} stored values"
                    )));
                }
                let mut values = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    values.push(r.f64("tensor value")?);
                }
                tensors.push(TensorBlock {
                    name,
                    group,
                    shape,
                    values,
                });
            }
            stores.push(StoreBlock { task, tensors });
        }

        let mut adam = Vec::new();
        let n_adam = r.u32("optimizer count")?;
        for _ in 0..n_adam {
            let task = r.string("optimizer task")?;
            let step_count = r.u64("optimizer step count")?;
            let n_slots = r.u32("optimizer slot count")?;
            let mut slots = Vec::with_capacity(n_slots as usize);
            for _ in 0..n_slots {
                let name = r.string("moment name")?;
                let len = r.u64("moment length")?;
                let mut m = Vec::with_capacity(len as usize);
                for _ in 0..len {
                    m.push(r.f64("first moment")?);
                }
                let mut v = Vec::with_capacity(len as usize);
                for _ in 0..len {
                    v.push(r.f64("second moment")?);
                }
                slots.push((name, m, v));
            }
            adam.push(AdamBlock {
                task,
                step_count,
                slots,
            });
        }

        let bandit = match r.u8("bandit flag")? {
            0 => None,
            1 => {
                let arms = r.u32("bandit arm count")?;
                let mut q = Vec::with_capacity(arms as usize);
                for _ in 0..arms {
                    q.push(r.f64("bandit quality")?);
                }
                let round = r.u64("bandit round")?;
                let mut pulls = Vec::with_capacity(arms as usize);
                for _ in 0..arms {
                    pulls.push(r.u64("bandit pulls")?);
                }
                Some(BanditBlock { q, round, pulls })
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "bandit flag must be 0 or 1, got {other}"
                )))
            }
        };

        let mut progress = Vec::new();
        let n_prog = r.u32("progress count")?;
        for _ in 0..n_prog {
            let task = r.string("progress task")?;
            let epoch = r.u64("progress epoch")?;
            let cursor = r.u64("progress cursor")?;
            progress.push((task, epoch, cursor));
        }

        r.finish()?;
        Ok(Checkpoint {
            meta,
            vocab_text,
            stores,
            adam,
            bandit,
            progress,
        })
    }

    /// Writes atomically (temp file + rename), so a crash mid-save never
    /// leaves a truncated checkpoint behind.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| {
            Error::Checkpoint(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_bits().to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Cursor over the raw bytes; every read names what it was after, so a
/// truncated or corrupt file fails with a message saying which field broke.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {}: expected {n} more bytes for {what}",
                self.pos
            )));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not valid UTF-8")))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last block",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
