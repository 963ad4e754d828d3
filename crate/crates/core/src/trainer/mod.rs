//! Multi-task training orchestration: one primary simplification task plus
//! up to two auxiliary tasks (entailment generation, paraphrase generation),
//! alternated under a static mixing ratio, a bandit schedule, or a uniform
//! random schedule. Every task owns its parameter store and Adam state; the
//! soft-sharing penalty pulls designated layer groups together during each
//! active task's step.

pub mod adam;

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::Rng;

use crate::bandit::{BanditState, BanditTrace, TraceRecord};
use crate::corpus::{make_batches, SentenceBatch, SentencePair, Vocab};
use crate::error::{Error, Result};
use crate::model::{init_store, Model, ModelConfig};
use crate::params::ParameterStore;
use crate::rng::derive_rng;
use crate::sharing::{soft_penalty_var, ShareMode, SharingPlan};
use crate::tensor::Tape;

pub use adam::{AdamConfig, AdamState};

/// How the next training batch's task is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Repeating block cycle following `mixing_ratio`.
    Static,
    /// Boltzmann bandit over tasks, re-deciding every `n_s` batches.
    Dynamic,
    /// Uniform random task every round; the control for Dynamic.
    Random,
    /// Static, with the ratio counted from the tail of a recorded trace.
    /// Resolve to [`Schedule::Static`] via [`ratio_from_trace`] before
    /// constructing a trainer.
    RatioFromTrace,
}

impl FromStr for Schedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Schedule::Static),
            "dynamic" => Ok(Schedule::Dynamic),
            "random" => Ok(Schedule::Random),
            "ratio_from_trace" => Ok(Schedule::RatioFromTrace),
            other => Err(Error::Config(format!(
                "unknown schedule {other:?} (expected static, dynamic, random, or ratio_from_trace)"
            ))),
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::Static => "static",
            Schedule::Dynamic => "dynamic",
            Schedule::Random => "random",
            Schedule::RatioFromTrace => "ratio_from_trace",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    /// Batches per cycle for main : entail : para under static scheduling.
    pub mixing_ratio: [u32; 3],
    /// Total batch steps for static runs.
    pub steps: usize,
    /// Scheduler rounds for dynamic/random runs.
    pub rounds: usize,
    /// Batches trained per scheduler round.
    pub n_s: usize,
    /// Soft-sharing penalty weight.
    pub lambda: f64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    /// Cap on the fixed dev subset used for per-round validation rewards.
    pub eval_subset_size: usize,
    pub seed: u64,
    /// Checkpoint to load before training; also scales the learning rate
    /// down to a tenth.
    pub warm_start: Option<String>,
    /// Tail fraction of a trace counted by [`ratio_from_trace`].
    pub trace_fraction: f64,
    pub bandit_alpha: f64,
    pub bandit_tau: f64,
    pub bandit_q0: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::Static,
            mixing_ratio: [6, 1, 3],
            steps: 1000,
            rounds: 100,
            n_s: 10,
            lambda: 0.0,
            learning_rate: 0.002,
            clip_norm: 2.0,
            batch_size: 32,
            eval_subset_size: 512,
            seed: 1,
            warm_start: None,
            trace_fraction: 0.1,
            bandit_alpha: 0.3,
            bandit_tau: 1.0,
            bandit_q0: 0.0,
        }
    }
}

impl TrainConfig {
    /// Warm starts continue at a tenth of the configured learning rate.
    pub fn effective_lr(&self) -> f64 {
        if self.warm_start.is_some() {
            self.learning_rate * 0.1
        } else {
            self.learning_rate
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.trace_fraction > 0.0 && self.trace_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "trace fraction must be in (0, 1], got {}",
                self.trace_fraction
            )));
        }
        match self.schedule {
            Schedule::Static | Schedule::RatioFromTrace => {
                if self.mixing_ratio[0] < 1 {
                    return Err(Error::Config(format!(
                        "static mixing ratio must give the main task at least 1 batch, got {:?}",
                        self.mixing_ratio
                    )));
                }
                if self.steps == 0 {
                    return Err(Error::Config("steps must be at least 1".into()));
                }
            }
            Schedule::Dynamic | Schedule::Random => {
                if self.n_s < 1 {
                    return Err(Error::Config("n_s must be at least 1".into()));
                }
                if self.rounds == 0 {
                    return Err(Error::Config("rounds must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// One task's corpus, handed to the trainer at construction.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub name: String,
    pub train: Vec<SentencePair>,
    pub dev: Vec<SentencePair>,
}

struct TaskState {
    name: String,
    train: Vec<SentencePair>,
    adam: AdamState,
    epoch: u64,
    cursor: usize,
    batches: Vec<SentenceBatch>,
    dev_subset: Vec<SentenceBatch>,
}

/// One training step's bookkeeping, also the history CSV row format.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: u64,
    pub task: String,
    pub loss: f64,
    pub penalty: f64,
}

pub fn history_to_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("step,task,loss,penalty\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.task, r.loss, r.penalty));
    }
    out
}

pub fn write_history(path: &std::path::Path, rows: &[HistoryRow]) -> Result<()> {
    crate::corpus::write_atomic(path, history_to_csv(rows).as_bytes())
}

/// Owns all task stores and drives the configured schedule. Arm indices in
/// traces and `mixing_ratio` positions match the task order given at
/// construction (main first).
pub struct Trainer<'a> {
    model_cfg: &'a ModelConfig,
    vocab: &'a Vocab,
    cfg: TrainConfig,
    plan: SharingPlan,
    stores: BTreeMap<String, ParameterStore>,
    tasks: Vec<TaskState>,
    bandit: Option<BanditState>,
    step: u64,
    rounds_done: u64,
    history: Vec<HistoryRow>,
    trace: BanditTrace,
    clamp_hits: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model_cfg: &'a ModelConfig,
        vocab: &'a Vocab,
        cfg: TrainConfig,
        plan: SharingPlan,
        tasks: Vec<TaskData>,
    ) -> Result<Trainer<'a>> {
        cfg.validate()?;
        model_cfg.validate()?;
        if model_cfg.vocab_size != vocab.size() {
            return Err(Error::Config(format!(
                "model vocab size {} disagrees with vocabulary size {}",
                model_cfg.vocab_size,
                vocab.size()
            )));
        }
        if tasks.is_empty() || tasks.len() > 3 {
            return Err(Error::Config(format!(
                "trainer takes 1 to 3 tasks, got {}",
                tasks.len()
            )));
        }
        if tasks.iter().filter(|t| t.name == crate::tasks::MAIN).count() != 1 {
            return Err(Error::Config(
                "exactly one task must be named \"main\"".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.name.clone()) {
                return Err(Error::Config(format!("duplicate task name {:?}", t.name)));
            }
            if t.train.is_empty() {
                return Err(Error::Data(format!(
                    "task {:?} has no training pairs",
                    t.name
                )));
            }
        }
        for (i, &r) in cfg.mixing_ratio.iter().enumerate() {
            if i >= tasks.len()
                && r != 0
                && matches!(cfg.schedule, Schedule::Static | Schedule::RatioFromTrace)
            {
                return Err(Error::Config(format!(
                    "mixing ratio position {i} is {r} but only {} tasks exist",
                    tasks.len()
                )));
            }
        }
        if matches!(cfg.schedule, Schedule::Dynamic) && tasks.len() < 2 {
            return Err(Error::Config(
                "dynamic scheduling needs at least 2 tasks".into(),
            ));
        }

        let mut stores = BTreeMap::new();
        for t in &tasks {
            let mut rng = derive_rng(cfg.seed, &format!("init/{}", t.name));
            stores.insert(t.name.clone(), init_store(&t.name, model_cfg, &mut rng));
        }
        if plan.mode == ShareMode::Hard {
            crate::sharing::hard_tie(&plan, &mut stores)?;
        }
        plan.validate(&stores)?;

        let bandit = if cfg.schedule == Schedule::Dynamic {
            Some(BanditState::new(
                tasks.len(),
                cfg.bandit_q0,
                cfg.bandit_alpha,
                cfg.bandit_tau,
            )?)
        } else {
            None
        };

        let task_states = tasks
            .into_iter()
            .map(|t| {
                let mut rng = derive_rng(cfg.seed, &format!("shuffle/{}/0", t.name));
                let batches = make_batches(&t.train, vocab, cfg.batch_size, &mut rng);
                let dev_subset = build_dev_subset(&t.name, &t.dev, vocab, &cfg);
                TaskState {
                    name: t.name,
                    train: t.train,
                    adam: AdamState::new(),
                    epoch: 0,
                    cursor: 0,
                    batches,
                    dev_subset,
                }
            })
            .collect();

        Ok(Trainer {
            model_cfg,
            vocab,
            cfg,
            plan,
            stores,
            tasks: task_states,
            bandit,
            step: 0,
            rounds_done: 0,
            history: Vec::new(),
            trace: BanditTrace::new(),
            clamp_hits: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model_config(&self) -> &ModelConfig {
        self.model_cfg
    }

    pub fn vocab(&self) -> &Vocab {
        self.vocab
    }

    pub fn plan(&self) -> &SharingPlan {
        &self.plan
    }

    pub fn stores(&self) -> &BTreeMap<String, ParameterStore> {
        &self.stores
    }

    pub fn store(&self, task: &str) -> Result<&ParameterStore> {
        self.stores
            .get(task)
            .ok_or_else(|| Error::Contract(format!("no store for task {task:?}")))
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn trace(&self) -> &BanditTrace {
        &self.trace
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    /// Completed scheduler rounds (dynamic and random schedules).
    pub fn rounds_done(&self) -> u64 {
        self.rounds_done
    }

    pub fn set_rounds_done(&mut self, rounds: u64) {
        self.rounds_done = rounds;
    }

    /// Probability floor hits across all loss computations so far.
    pub fn clamp_hits(&self) -> u64 {
        self.clamp_hits
    }

    pub fn bandit(&self) -> Option<&BanditState> {
        self.bandit.as_ref()
    }

    /// (epoch, cursor) data position per task, for checkpointing.
    pub fn progress(&self) -> Vec<(String, u64, usize)> {
        self.tasks
            .iter()
            .map(|t| (t.name.clone(), t.epoch, t.cursor))
            .collect()
    }

    pub fn adam_state(&self, task: &str) -> Result<&AdamState> {
        self.tasks
            .iter()
            .find(|t| t.name == task)
            .map(|t| &t.adam)
            .ok_or_else(|| Error::Contract(format!("no task named {task:?}")))
    }

    /// Restores a task's data position: regenerates that epoch's batch order
    /// and continues from `cursor`.
    pub fn set_progress(&mut self, task: &str, epoch: u64, cursor: usize) -> Result<()> {
        let cfg_seed = self.cfg.seed;
        let batch_size = self.cfg.batch_size;
        let vocab = self.vocab;
        let t = self
            .tasks
            .iter_mut()
            .find(|t| t.name == task)
            .ok_or_else(|| Error::Contract(format!("no task named {task:?}")))?;
        let mut rng = derive_rng(cfg_seed, &format!("shuffle/{}/{epoch}", t.name));
        let batches = make_batches(&t.train, vocab, batch_size, &mut rng);
        if cursor > batches.len() {
            return Err(Error::Contract(format!(
                "cursor {cursor} beyond {} batches in epoch {epoch} of task {task:?}",
                batches.len()
            )));
        }
        t.epoch = epoch;
        t.cursor = cursor;
        t.batches = batches;
        Ok(())
    }

    pub fn set_adam_state(&mut self, task: &str, state: AdamState) -> Result<()> {
        let t = self
            .tasks
            .iter_mut()
            .find(|t| t.name == task)
            .ok_or_else(|| Error::Contract(format!("no task named {task:?}")))?;
        t.adam = state;
        Ok(())
    }

    pub fn set_global_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn bandit_mut(&mut self) -> Option<&mut BanditState> {
        self.bandit.as_mut()
    }

    /// Overwrites parameter values in place (shapes must match), keeping
    /// handles — and therefore hard-mode aliases — intact.
    pub fn load_store_values(&mut self, task: &str, values: &[(String, Vec<f64>)]) -> Result<()> {
        let store = self.store(task)?;
        for (name, vals) in values {
            let handle = store.require(name)?;
            let mut p = handle.borrow_mut();
            if p.tensor.numel() != vals.len() {
                return Err(Error::Contract(format!(
                    "checkpoint tensor {name:?} has {} values but the model expects {}",
                    vals.len(),
                    p.tensor.numel()
                )));
            }
            p.tensor.values_mut().copy_from_slice(vals);
        }
        Ok(())
    }

    /// Mean per-sentence dev loss of `task` on its fixed seeded subset.
    pub fn dev_loss(&self, task: &str) -> Result<f64> {
        let ti = self
            .tasks
            .iter()
            .position(|t| t.name == task)
            .ok_or_else(|| Error::Contract(format!("no task named {task:?}")))?;
        let subset = &self.tasks[ti].dev_subset;
        if subset.is_empty() {
            return Err(Error::Data(format!("task {task:?} has no dev pairs")));
        }
        let store = self.store(task)?;
        let model = Model::new(self.model_cfg, store);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in subset {
            let tape = Tape::inference();
            let loss = model.forward_loss(&tape, batch, self.model_cfg.vocab_size);
            total += loss.scalar() * batch.size as f64;
            count += batch.size;
        }
        Ok(total / count as f64)
    }

    /// Runs the configured schedule to completion: up to `steps` total batch
    /// steps for static runs, `rounds` further scheduler rounds otherwise.
    pub fn train(&mut self) -> Result<()> {
        match self.cfg.schedule {
            Schedule::Static => {
                let remaining = (self.cfg.steps as u64).saturating_sub(self.step) as usize;
                self.run_static_steps(remaining)
            }
            Schedule::Dynamic | Schedule::Random => self.run_rounds(self.cfg.rounds),
            Schedule::RatioFromTrace => Err(Error::Config(
                "ratio_from_trace must be resolved to a static ratio before training".into(),
            )),
        }
    }

    /// The flattened task sequence of one static cycle, e.g. ratio 2:1:1 →
    /// `[0, 0, 1, 2]`. The position within it is `global_step % len`, which
    /// makes resumed runs continue the cycle exactly where they stopped.
    fn static_cycle(&self) -> Vec<usize> {
        let mut cycle = Vec::new();
        for ti in 0..self.tasks.len() {
            for _ in 0..self.cfg.mixing_ratio[ti] {
                cycle.push(ti);
            }
        }
        cycle
    }

    /// Runs `k` more batch steps following the static mixing cycle.
    pub fn run_static_steps(&mut self, k: usize) -> Result<()> {
        let cycle = self.static_cycle();
        if cycle.is_empty() {
            return Err(Error::Config(
                "mixing ratio schedules zero batches per cycle".into(),
            ));
        }
        for _ in 0..k {
            let ti = cycle[(self.step % cycle.len() as u64) as usize];
            self.train_step(ti)?;
        }
        Ok(())
    }

    /// Runs `k` more scheduler rounds (dynamic or random, per the config).
    pub fn run_rounds(&mut self, k: usize) -> Result<()> {
        match self.cfg.schedule {
            Schedule::Dynamic => self.run_dynamic_rounds(k),
            Schedule::Random => self.run_random_rounds(k),
            other => Err(Error::Config(format!(
                "run_rounds under a {other} schedule"
            ))),
        }
    }

    fn run_dynamic_rounds(&mut self, k: usize) -> Result<()> {
        let mut bandit = self.bandit.take().expect("dynamic trainer has a bandit");
        let mut rng = derive_rng(self.cfg.seed, "scheduler");
        // Each past selection consumed exactly one draw; skipping that many
        // re-synchronizes the stream after a checkpoint resume.
        for _ in 0..bandit.round() {
            let _: f64 = rng.gen();
        }
        let start_round = bandit.round();
        let result = (|| -> Result<()> {
            for round in start_round..start_round + k as u64 {
                let policy = bandit.policy();
                let arm = bandit.select(&mut rng);
                for _ in 0..self.cfg.n_s {
                    self.train_step(arm)?;
                }
                let val = self.dev_loss(crate::tasks::MAIN)?;
                let reward = -val / 2.0;
                bandit.observe(arm, reward)?;
                self.rounds_done += 1;
                self.trace.push(TraceRecord {
                    round,
                    arm,
                    reward,
                    policy,
                });
            }
            Ok(())
        })();
        self.bandit = Some(bandit);
        result
    }

    fn run_random_rounds(&mut self, k: usize) -> Result<()> {
        let mut rng = derive_rng(self.cfg.seed, "scheduler");
        for _ in 0..self.rounds_done {
            let _: f64 = rng.gen();
        }
        let m = self.tasks.len();
        let uniform = vec![1.0 / m as f64; m];
        for _ in 0..k {
            let round = self.rounds_done;
            // floor sampling keeps every round at exactly one draw, so the
            // stream position stays a function of rounds_done
            let arm = ((rng.gen::<f64>() * m as f64) as usize).min(m - 1);
            for _ in 0..self.cfg.n_s {
                self.train_step(arm)?;
            }
            let val = self.dev_loss(crate::tasks::MAIN)?;
            let reward = -val / 2.0;
            self.rounds_done += 1;
            self.trace.push(TraceRecord {
                round,
                arm,
                reward,
                policy: uniform.clone(),
            });
        }
        Ok(())
    }

    /// One batch step on task `ti`: forward, add the soft penalty for pairs
    /// involving the task, backward, clip the active store's gradients, Adam.
    /// Gradients of every store are cleared first — penalty gradients flow
    /// into partner stores, and they must not leak into later steps.
    pub fn train_step(&mut self, ti: usize) -> Result<()> {
        assert!(ti < self.tasks.len(), "task index {ti} out of range");
        for store in self.stores.values() {
            store.zero_grads();
        }
        let bi = self.advance_cursor(ti);
        let name = self.tasks[ti].name.clone();

        let (loss_value, penalty_value) = {
            let batch = &self.tasks[ti].batches[bi];
            let store = self.stores.get(&name).expect("store exists");
            let model = Model::new(self.model_cfg, store);
            let tape = Tape::new();
            let loss = model.forward_loss(&tape, batch, self.model_cfg.vocab_size);
            let penalty = soft_penalty_var(&tape, &self.plan, &self.stores, &name)?;
            let total = match penalty {
                Some(p) => loss.add(p),
                None => loss,
            };
            tape.backward(total);
            tape.flush_grads();
            self.clamp_hits += tape.clamp_hits() as u64;
            store.clip_grads(self.cfg.clip_norm);
            (loss.scalar(), penalty.map_or(0.0, |p| p.scalar()))
        };

        let adam_cfg = AdamConfig::with_lr(self.cfg.effective_lr());
        let store = self.stores.get(&name).expect("store exists");
        self.tasks[ti].adam.step(&adam_cfg, store);

        self.step += 1;
        self.history.push(HistoryRow {
            step: self.step,
            task: name,
            loss: loss_value,
            penalty: penalty_value,
        });
        Ok(())
    }

    fn advance_cursor(&mut self, ti: usize) -> usize {
        let seed = self.cfg.seed;
        let batch_size = self.cfg.batch_size;
        let vocab = self.vocab;
        let t = &mut self.tasks[ti];
        if t.cursor >= t.batches.len() {
            t.epoch += 1;
            let mut rng = derive_rng(seed, &format!("shuffle/{}/{}", t.name, t.epoch));
            t.batches = make_batches(&t.train, vocab, batch_size, &mut rng);
            t.cursor = 0;
        }
        let bi = t.cursor;
        t.cursor += 1;
        bi
    }
}

fn build_dev_subset(
    name: &str,
    dev: &[SentencePair],
    vocab: &Vocab,
    cfg: &TrainConfig,
) -> Vec<SentenceBatch> {
    if dev.is_empty() {
        return Vec::new();
    }
    let mut rng = derive_rng(cfg.seed, &format!("dev-subset/{name}"));
    let mut order: Vec<usize> = (0..dev.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    order.truncate(cfg.eval_subset_size);
    let subset: Vec<SentencePair> = order.into_iter().map(|i| dev[i].clone()).collect();
    let mut batch_rng = derive_rng(cfg.seed, &format!("dev-batches/{name}"));
    make_batches(&subset, vocab, cfg.batch_size, &mut batch_rng)
}

/// Counts arms over the last `⌈fraction·rounds⌉` trace rows and reduces the
/// counts by their gcd, keeping zero entries as 0.
pub fn ratio_from_trace(trace: &BanditTrace, fraction: f64, arms: usize) -> Result<Vec<u32>> {
    if trace.is_empty() {
        return Err(Error::Contract("ratio from an empty trace".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "trace fraction must be in (0, 1], got {fraction}"
        )));
    }
    let n = trace.len();
    let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut counts = vec![0u32; arms];
    for rec in &trace.records()[n - take..] {
        if rec.arm >= arms {
            return Err(Error::Contract(format!(
                "trace has arm {} but only {arms} tasks exist",
                rec.arm
            )));
        }
        counts[rec.arm] += 1;
    }
    let g = counts.iter().copied().filter(|&c| c > 0).fold(0, gcd);
    if g > 1 {
        for c in &mut counts {
            *c /= g;
        }
    }
    Ok(counts)
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Checkpoint-selection score: mean of SARI, BLEU, and inverted FKGL, with
/// the FKGL clamped to ≥ 0.1 before inversion. SARI and BLEU sit on a 0–100
/// scale while 1/FKGL is tiny — the average is taken as-is regardless.
pub fn selection_score(sari: f64, bleu: f64, fkgl: f64) -> f64 {
    (sari + bleu + 1.0 / fkgl.max(0.1)) / 3.0
}
