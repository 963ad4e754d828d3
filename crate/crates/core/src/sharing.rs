//! Layer-grouped parameter sharing between task models.
//!
//! Every parameter tensor belongs to exactly one [`LayerGroup`]. A
//! [`SharingPlan`] names pairs of tasks and the groups they share, either
//! softly (a distance penalty pulls the two parameter sets together) or hard
//! (the tensors alias one storage).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::{ParamHandle, ParameterStore};
use crate::tasks;
use crate::tensor::{Tape, Var};

/// Architectural slice a parameter belongs to. The partition is total: every
/// named tensor carries exactly one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LayerGroup {
    Embedding,
    EncL1,
    EncL2,
    Attention,
    DecL1,
    DecL2,
    OutputProjection,
    CopyGate,
}

impl LayerGroup {
    pub const ALL: [LayerGroup; 8] = [
        LayerGroup::Embedding,
        LayerGroup::EncL1,
        LayerGroup::EncL2,
        LayerGroup::Attention,
        LayerGroup::DecL1,
        LayerGroup::DecL2,
        LayerGroup::OutputProjection,
        LayerGroup::CopyGate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerGroup::Embedding => "embedding",
            LayerGroup::EncL1 => "enc_l1",
            LayerGroup::EncL2 => "enc_l2",
            LayerGroup::Attention => "attention",
            LayerGroup::DecL1 => "dec_l1",
            LayerGroup::DecL2 => "dec_l2",
            LayerGroup::OutputProjection => "output_projection",
            LayerGroup::CopyGate => "copy_gate",
        }
    }

    /// Inverse of [`name`](LayerGroup::name), for self-describing storage.
    pub fn from_name(name: &str) -> Option<LayerGroup> {
        LayerGroup::ALL.into_iter().find(|g| g.name() == name)
    }
}

/// Abstraction-level shorthands: the "high" set sits next to the semantic
/// bottleneck (late encoder, attention, early decoder); the "low" set covers
/// the surface-form ends (early encoder, late decoder).
pub const HIGH_GROUPS: [LayerGroup; 3] =
    [LayerGroup::EncL2, LayerGroup::Attention, LayerGroup::DecL1];
pub const LOW_GROUPS: [LayerGroup; 2] = [LayerGroup::EncL1, LayerGroup::DecL2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareMode {
    Soft,
    Hard,
}

/// Named sharing configurations, including the ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanPreset {
    /// Entailment shares the high set, paraphrase the low set.
    Final,
    /// Both auxiliaries share the high set.
    BothHigh,
    /// Both auxiliaries share the low set.
    BothLow,
    /// Entailment shares the low set, paraphrase the high set.
    Swapped,
    /// Same groups as `Final` but with aliased (hard-tied) storage.
    Hard,
}

impl FromStr for PlanPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final" => Ok(PlanPreset::Final),
            "both_high" => Ok(PlanPreset::BothHigh),
            "both_low" => Ok(PlanPreset::BothLow),
            "swapped" => Ok(PlanPreset::Swapped),
            "hard" => Ok(PlanPreset::Hard),
            other => Err(Error::Config(format!(
                "unknown sharing preset {other:?} (expected final, both_high, both_low, swapped, or hard)"
            ))),
        }
    }
}

impl fmt::Display for PlanPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PlanPreset::Final => "final",
            PlanPreset::BothHigh => "both_high",
            PlanPreset::BothLow => "both_low",
            PlanPreset::Swapped => "swapped",
            PlanPreset::Hard => "hard",
        };
        f.write_str(s)
    }
}

/// Two tasks plus the layer groups they share.
#[derive(Debug, Clone)]
pub struct SharePair {
    pub task_a: String,
    pub task_b: String,
    pub groups: Vec<LayerGroup>,
}

impl SharePair {
    pub fn involves(&self, task: &str) -> bool {
        self.task_a == task || self.task_b == task
    }
}

/// A full sharing configuration across the task models.
#[derive(Debug, Clone)]
pub struct SharingPlan {
    pub mode: ShareMode,
    pub lambda: f64,
    pub pairs: Vec<SharePair>,
}

impl SharingPlan {
    /// A plan that shares nothing; training with it is identical to fully
    /// independent task models.
    pub fn none() -> Self {
        SharingPlan {
            mode: ShareMode::Soft,
            lambda: 0.0,
            pairs: Vec::new(),
        }
    }

    /// True when the soft penalty actually contributes to a loss.
    pub fn penalty_active(&self) -> bool {
        self.mode == ShareMode::Soft && self.lambda > 0.0 && !self.pairs.is_empty()
    }

    /// Checks the plan against concrete stores: every referenced task must
    /// exist, and paired groups must expose identical parameter names and
    /// shapes on both sides.
    pub fn validate(&self, stores: &BTreeMap<String, ParameterStore>) -> Result<()> {
        for pair in &self.pairs {
            for task in [&pair.task_a, &pair.task_b] {
                if !stores.contains_key(task.as_str()) {
                    return Err(Error::Config(format!(
                        "sharing plan references task {task:?} but no such model exists"
                    )));
                }
            }
            shared_tensor_pairs(pair, stores)?;
        }
        Ok(())
    }
}

/// Builds the plan a preset describes. `lambda` must be a finite value ≥ 0;
/// hard mode ignores it.
pub fn build_plan(preset: PlanPreset, lambda: f64) -> Result<SharingPlan> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Config(format!(
            "sharing lambda must be a finite value >= 0, got {lambda}"
        )));
    }
    let pair = |aux: &str, groups: &[LayerGroup]| SharePair {
        task_a: tasks::MAIN.to_string(),
        task_b: aux.to_string(),
        groups: groups.to_vec(),
    };
    let (mode, lambda, pairs) = match preset {
        PlanPreset::Final => (
            ShareMode::Soft,
            lambda,
            vec![pair(tasks::ENTAIL, &HIGH_GROUPS), pair(tasks::PARA, &LOW_GROUPS)],
        ),
        PlanPreset::BothHigh => (
            ShareMode::Soft,
            lambda,
            vec![pair(tasks::ENTAIL, &HIGH_GROUPS), pair(tasks::PARA, &HIGH_GROUPS)],
        ),
        PlanPreset::BothLow => (
            ShareMode::Soft,
            lambda,
            vec![pair(tasks::ENTAIL, &LOW_GROUPS), pair(tasks::PARA, &LOW_GROUPS)],
        ),
        PlanPreset::Swapped => (
            ShareMode::Soft,
            lambda,
            vec![pair(tasks::ENTAIL, &LOW_GROUPS), pair(tasks::PARA, &HIGH_GROUPS)],
        ),
        PlanPreset::Hard => (
            ShareMode::Hard,
            0.0,
            vec![pair(tasks::ENTAIL, &HIGH_GROUPS), pair(tasks::PARA, &LOW_GROUPS)],
        ),
    };
    Ok(SharingPlan { mode, lambda, pairs })
}

/// Matched (task_a, task_b) handles for every shared tensor of a pair, in
/// group order then name order. Errors when the two sides disagree on names
/// or shapes, listing the offenders.
pub fn shared_tensor_pairs(
    pair: &SharePair,
    stores: &BTreeMap<String, ParameterStore>,
) -> Result<Vec<(ParamHandle, ParamHandle)>> {
    let store_a = stores.get(&pair.task_a).ok_or_else(|| {
        Error::Config(format!("no model for task {:?}", pair.task_a))
    })?;
    let store_b = stores.get(&pair.task_b).ok_or_else(|| {
        Error::Config(format!("no model for task {:?}", pair.task_b))
    })?;
    let mut out = Vec::new();
    for group in &pair.groups {
        let a_members = store_a.group_members(*group);
        let b_members = store_b.group_members(*group);
        let a_names: Vec<String> = a_members.iter().map(|h| h.borrow().name.clone()).collect();
        let b_names: Vec<String> = b_members.iter().map(|h| h.borrow().name.clone()).collect();
        if a_names != b_names {
            return Err(Error::Config(format!(
                "group {} differs between {:?} ({a_names:?}) and {:?} ({b_names:?})",
                group.name(),
                pair.task_a,
                pair.task_b
            )));
        }
        for (ha, hb) in a_members.into_iter().zip(b_members) {
            let (sa, sb) = (
                ha.borrow().tensor.shape().to_vec(),
                hb.borrow().tensor.shape().to_vec(),
            );
            if sa != sb {
                return Err(Error::Config(format!(
                    "shared tensor {:?} has shape {sa:?} in {:?} but {sb:?} in {:?}",
                    ha.borrow().name,
                    pair.task_a,
                    pair.task_b
                )));
            }
            out.push((ha, hb));
        }
    }
    Ok(out)
}

/// Euclidean distance between the concatenated shared tensors of one pair.
pub fn pair_distance(pair: &SharePair, stores: &BTreeMap<String, ParameterStore>) -> Result<f64> {
    let mut sumsq = 0.0;
    for (ha, hb) in shared_tensor_pairs(pair, stores)? {
        let (pa, pb) = (ha.borrow(), hb.borrow());
        for (a, b) in pa.tensor.values().iter().zip(pb.tensor.values()) {
            let d = a - b;
            sumsq += d * d;
        }
    }
    Ok(sumsq.sqrt())
}

/// Plain (non-differentiable) penalty value for the pairs involving
/// `active_task`: λ · Σ pairwise distances.
pub fn soft_penalty_value(
    plan: &SharingPlan,
    stores: &BTreeMap<String, ParameterStore>,
    active_task: &str,
) -> Result<f64> {
    if !plan.penalty_active() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for pair in plan.pairs.iter().filter(|p| p.involves(active_task)) {
        total += pair_distance(pair, stores)?;
    }
    Ok(plan.lambda * total)
}

/// Stages the soft penalty on a tape so gradients flow to **both** sides of
/// each pair. Returns `None` when the plan contributes nothing (hard mode,
/// λ = 0, or no pair involves the active task).
///
/// The distance gradient is λ(θ−φ)/‖θ−φ‖; at the singular point ‖θ−φ‖ < 1e-12
/// the square-root backward guard makes it exactly zero.
pub fn soft_penalty_var<'t>(
    tape: &'t Tape,
    plan: &SharingPlan,
    stores: &BTreeMap<String, ParameterStore>,
    active_task: &str,
) -> Result<Option<Var<'t>>> {
    if !plan.penalty_active() {
        return Ok(None);
    }
    let mut total: Option<Var<'t>> = None;
    for pair in plan.pairs.iter().filter(|p| p.involves(active_task)) {
        let mut sumsq: Option<Var<'t>> = None;
        for (ha, hb) in shared_tensor_pairs(pair, stores)? {
            let a = tape.param(&ha);
            let b = tape.param(&hb);
            let diff = a.sub(b);
            let part = diff.mul(diff).sum();
            sumsq = Some(match sumsq {
                Some(acc) => acc.add(part),
                None => part,
            });
        }
        let Some(sumsq) = sumsq else { continue };
        let dist = sumsq.sqrt().affine(plan.lambda, 0.0);
        total = Some(match total {
            Some(acc) => acc.add(dist),
            None => dist,
        });
    }
    Ok(total)
}

/// Rewires the stores so every shared tensor of every pair is one storage:
/// task_b's entry becomes an alias of task_a's handle. Gradients from either
/// task then accumulate into the same tensor.
pub fn hard_tie(plan: &SharingPlan, stores: &mut BTreeMap<String, ParameterStore>) -> Result<()> {
    if plan.mode != ShareMode::Hard {
        return Err(Error::Contract(
            "hard_tie called on a soft-mode plan".to_string(),
        ));
    }
    // Validate shapes across all pairs before mutating anything.
    for pair in &plan.pairs {
        shared_tensor_pairs(pair, stores)?;
    }
    for pair in &plan.pairs {
        let handles: Vec<(String, ParamHandle)> = shared_tensor_pairs(pair, stores)?
            .into_iter()
            .map(|(ha, _)| (ha.borrow().name.clone(), ha.clone()))
            .collect();
        let store_b = stores.get_mut(&pair.task_b).expect("validated above");
        for (name, handle) in handles {
            store_b.alias(&name, handle)?;
        }
    }
    Ok(())
}
