//! Multi-armed bandit task scheduler.
//!
//! Arms are tasks. The controller keeps one value estimate per arm, turns
//! them into selection probabilities with a Boltzmann (softmax) policy at a
//! fixed temperature, and updates the selected arm's estimate with an
//! exponentially-weighted moving average of observed rewards. Optimistic
//! initial values make it try every arm early; rewards here are negated
//! validation losses, so any q0 ≥ 0 is optimistic.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Value estimates and bookkeeping for one controller.
#[derive(Debug, Clone)]
pub struct BanditState {
    q: Vec<f64>,
    alpha: f64,
    tau: f64,
    round: u64,
    pulls: Vec<u64>,
    q0: f64,
    /// Arm selected but not yet rewarded; `observe` must name it.
    pending: Option<usize>,
}

impl BanditState {
    /// `m` arms, all starting at value `q0`. `alpha` is the EMA decay rate in
    /// (0, 1]; `tau` the softmax temperature.
    pub fn new(m: usize, q0: f64, alpha: f64, tau: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!(
                "bandit needs at least 2 arms, got {m}"
            )));
        }
        if !alpha.is_finite() || alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::Config(format!(
                "bandit alpha must be in (0, 1], got {alpha}"
            )));
        }
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Config(format!(
                "bandit temperature must be > 0, got {tau}"
            )));
        }
        if !q0.is_finite() {
            return Err(Error::Config(format!(
                "bandit initial value must be finite, got {q0}"
            )));
        }
        Ok(BanditState {
            q: vec![q0; m],
            alpha,
            tau,
            round: 0,
            pulls: vec![0; m],
            q0,
            pending: None,
        })
    }

    pub fn arms(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn q0(&self) -> f64 {
        self.q0
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    /// Restores counters from a checkpoint.
    pub fn restore(&mut self, q: Vec<f64>, round: u64, pulls: Vec<u64>) -> Result<()> {
        if q.len() != self.q.len() || pulls.len() != self.pulls.len() {
            return Err(Error::Contract(format!(
                "restore arm count mismatch: state has {}, snapshot has {}/{}",
                self.q.len(),
                q.len(),
                pulls.len()
            )));
        }
        self.q = q;
        self.round = round;
        self.pulls = pulls;
        self.pending = None;
        Ok(())
    }

    /// Selection probabilities: softmax of q/τ, computed with max
    /// subtraction so the result is invariant to shifting all values.
    pub fn policy(&self) -> Vec<f64> {
        let max = self.q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.q.iter().map(|v| ((v - max) / self.tau).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Samples an arm from the current policy and increments the round and
    /// pull counters. The reward for this pull goes in via [`observe`].
    ///
    /// [`observe`]: BanditState::observe
    pub fn select(&mut self, rng: &mut ChaCha8Rng) -> usize {
        let policy = self.policy();
        let draw: f64 = rng.gen();
        let mut cum = 0.0;
        let mut arm = policy.len() - 1;
        for (i, p) in policy.iter().enumerate() {
            cum += p;
            if draw < cum {
                arm = i;
                break;
            }
        }
        self.round += 1;
        self.pulls[arm] += 1;
        self.pending = Some(arm);
        arm
    }

    /// Folds a reward into the selected arm's estimate:
    /// `q[arm] ← (1−α)·q[arm] + α·reward`. Other arms are untouched — an
    /// unpulled arm never decays.
    ///
    /// If a selection is pending, `arm` must be that selection. Calling
    /// without a pending selection is allowed (trace replay applies rewards
    /// directly).
    pub fn observe(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.q.len() {
            return Err(Error::Contract(format!(
                "observe on arm {arm} but the bandit has {} arms",
                self.q.len()
            )));
        }
        if !reward.is_finite() {
            return Err(Error::Contract(format!(
                "bandit reward must be finite, got {reward}"
            )));
        }
        if let Some(pending) = self.pending {
            if pending != arm {
                return Err(Error::Contract(format!(
                    "observe on arm {arm} but arm {pending} was selected"
                )));
            }
            self.pending = None;
        }
        self.q[arm] = (1.0 - self.alpha) * self.q[arm] + self.alpha * reward;
        Ok(())
    }
}

/// One scheduling round as logged: the policy is the distribution the
/// selection was drawn from (pre-reward).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub round: u64,
    pub arm: usize,
    pub reward: f64,
    pub policy: Vec<f64>,
}

/// Append-only log of scheduling rounds, serializable as CSV.
#[derive(Debug, Clone, Default)]
pub struct BanditTrace {
    records: Vec<TraceRecord>,
}

impl BanditTrace {
    pub fn new() -> Self {
        BanditTrace::default()
    }

    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `round,arm,reward,p_0,...,p_{M-1}`. Floats use the
    /// shortest representation that round-trips exactly.
    pub fn to_csv(&self) -> String {
        let arms = self.records.first().map_or(0, |r| r.policy.len());
        let mut out = String::from("round,arm,reward");
        for i in 0..arms {
            out.push_str(&format!(",p_{i}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{},{}", r.round, r.arm, r.reward));
            for p in &r.policy {
                out.push_str(&format!(",{p}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::corpus::write_atomic(path, self.to_csv().as_bytes())
    }

    /// Parses a trace CSV. Errors carry the 1-based line number of the
    /// offending row.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Data("trace file is empty".to_string()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 4 || cols[0] != "round" || cols[1] != "arm" || cols[2] != "reward" {
            return Err(Error::Data(format!(
                "trace header must be round,arm,reward,p_0,... — got {header:?}"
            )));
        }
        for (i, c) in cols[3..].iter().enumerate() {
            if *c != format!("p_{i}") {
                return Err(Error::Data(format!(
                    "trace header column {} should be p_{i}, got {c:?}",
                    i + 4
                )));
            }
        }
        let arms = cols.len() - 3;
        let mut trace = BanditTrace::new();
        for (lineno, line) in lines {
            let row = lineno + 1; // 1-based, matching editor views
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Data(format!(
                    "trace row {row}: expected {} columns, got {}",
                    cols.len(),
                    fields.len()
                )));
            }
            let parse_f = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    Error::Data(format!("trace row {row}: bad {what} value {s:?}"))
                })
            };
            let round = fields[0]
                .parse::<u64>()
                .map_err(|_| Error::Data(format!("trace row {row}: bad round value {:?}", fields[0])))?;
            let arm = fields[1]
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("trace row {row}: bad arm value {:?}", fields[1])))?;
            if arm >= arms {
                return Err(Error::Data(format!(
                    "trace row {row}: arm {arm} out of range for {arms} arms"
                )));
            }
            let reward = parse_f(fields[2], "reward")?;
            let mut policy = Vec::with_capacity(arms);
            for (i, f) in fields[3..].iter().enumerate() {
                policy.push(parse_f(f, &format!("p_{i}"))?);
            }
            trace.push(TraceRecord {
                round,
                arm,
                reward,
                policy,
            });
        }
        Ok(trace)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }
}

/// Re-runs a trace through a fresh controller: verifies each logged policy
/// against the recomputed one (±1e-9), applies each reward, and returns the
/// value-estimate trajectory (q after every round).
pub fn replay_trace(
    trace: &BanditTrace,
    q0: f64,
    alpha: f64,
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    let arms = trace
        .records()
        .first()
        .map(|r| r.policy.len())
        .ok_or_else(|| Error::Data("cannot replay an empty trace".to_string()))?;
    let mut state = BanditState::new(arms, q0, alpha, tau)?;
    let mut trajectory = Vec::with_capacity(trace.len());
    for (i, rec) in trace.records().iter().enumerate() {
        let expect = state.policy();
        for (j, (a, b)) in expect.iter().zip(&rec.policy).enumerate() {
            if (a - b).abs() > 1e-9 {
                return Err(Error::Data(format!(
                    "trace round {} (record {}): logged p_{j} = {b} but replay computes {a}",
                    rec.round,
                    i + 1
                )));
            }
        }
        state.observe(rec.arm, rec.reward)?;
        trajectory.push(state.q().to_vec());
    }
    Ok(trajectory)
}
