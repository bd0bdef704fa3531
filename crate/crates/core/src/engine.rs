//! The stochastic execution process: states, allocation actions, their
//! cost and duration, feasibility, subset-transition probabilities and
//! seeded sampling of outcomes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::instance::{Mode, WorkflowInstance};
use crate::rng::SimRng;
use crate::units::{MicroUsd, Millis};

/// Probability that at least one of `k` independent attempts succeeds,
/// `1 - (1 - p)^k`.
pub fn success_prob(p: f64, k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::Input("sampling width must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("probability {p} outside [0, 1]")));
    }
    Ok(at_least_one(p, k))
}

#[inline]
pub(crate) fn at_least_one(p: f64, k: u32) -> f64 {
    if p < 0.5 {
        // stable for small p
        -(k as f64 * (-p).ln_1p()).exp_m1()
    } else {
        1.0 - (1.0 - p).powi(k as i32)
    }
}

/// Model and sampling width for one ready subtask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub node: usize,
    pub model: usize,
    pub width: u32,
}

/// A model and width for every ready subtask, ordered by node. The derived
/// ordering is lexicographic on `(node, model, width)` and serves as the
/// planner's tie-break.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AllocationAction {
    assignments: Vec<Assignment>,
}

impl AllocationAction {
    pub fn new(mut assignments: Vec<Assignment>) -> Result<Self> {
        assignments.sort();
        if let Some(w) = assignments.windows(2).find(|w| w[0].node == w[1].node) {
            return Err(Error::Input(format!("node {} assigned twice", w[0].node)));
        }
        if let Some(a) = assignments.iter().find(|a| a.width == 0) {
            return Err(Error::Input(format!("node {} has zero width", a.node)));
        }
        Ok(AllocationAction { assignments })
    }

    /// Model `model` with width `width` on every node of `nodes`.
    pub fn homogeneous(nodes: NodeSet, model: usize, width: u32) -> Self {
        AllocationAction {
            assignments: nodes.iter().map(|node| Assignment { node, model, width }).collect(),
        }
    }

    pub(crate) fn from_sorted(assignments: Vec<Assignment>) -> Self {
        debug_assert!(assignments.windows(2).all(|w| w[0].node < w[1].node));
        AllocationAction { assignments }
    }

    pub fn assignments(&self) -> &[Assignment] {
        &self.assignments
    }

    pub fn nodes(&self) -> NodeSet {
        self.assignments.iter().map(|a| a.node).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }
}

impl<'de> Deserialize<'de> for AllocationAction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            assignments: Vec<Assignment>,
        }
        let raw = Raw::deserialize(d)?;
        AllocationAction::new(raw.assignments).map_err(serde::de::Error::custom)
    }
}

/// Planner/simulator state `s = (S, b, h)` plus the consumed totals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExecState {
    pub completed: NodeSet,
    pub remaining_budget: MicroUsd,
    pub remaining_time: Millis,
    pub elapsed: Millis,
    pub spent: MicroUsd,
}

impl ExecState {
    /// `(∅, B, D)`.
    pub fn initial(instance: &WorkflowInstance) -> Self {
        Self::new(NodeSet::EMPTY, instance.budget, instance.deadline)
    }

    pub fn new(completed: NodeSet, remaining_budget: MicroUsd, remaining_time: Millis) -> Self {
        ExecState {
            completed,
            remaining_budget,
            remaining_time,
            elapsed: 0,
            spent: 0,
        }
    }

    pub fn is_complete(&self, instance: &WorkflowInstance) -> bool {
        self.completed == instance.graph.all_nodes()
    }

    pub fn within_limits(&self) -> bool {
        self.remaining_budget >= 0 && self.remaining_time >= 0
    }
}

/// Result of executing one action for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionOutcome {
    pub completed_now: NodeSet,
    pub cost: MicroUsd,
    pub duration: Millis,
    pub details: Vec<NodeDetail>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDetail {
    pub node: usize,
    pub model: usize,
    pub width: u32,
    pub succeeded: bool,
    /// Successful samples among the `width` drawn; parametric mode only
    /// records whether any succeeded.
    pub successes: u32,
    pub cost: MicroUsd,
    pub duration: Millis,
}

fn check_widths(action: &AllocationAction) -> Result<()> {
    match action.assignments.iter().find(|a| a.width == 0) {
        Some(a) => Err(Error::Input(format!("node {} has zero width", a.node))),
        None => Ok(()),
    }
}

/// `C(a) = Σ k_v c_{v,m_v}`, on estimated costs in empirical mode.
pub fn action_cost(action: &AllocationAction, instance: &WorkflowInstance) -> Result<MicroUsd> {
    check_widths(action)?;
    action.assignments.iter().try_fold(0, |acc, a| {
        Ok(acc + a.width as MicroUsd * instance.profile(a.node, a.model)?.cost)
    })
}

/// `Δ(a) = max_v Δ_{v,m_v}(k_v)`; zero for an empty action.
pub fn action_duration(action: &AllocationAction, instance: &WorkflowInstance) -> Result<Millis> {
    check_widths(action)?;
    action.assignments.iter().try_fold(0, |acc, a| {
        let tau = instance.profile(a.node, a.model)?.latency;
        Ok(acc.max(instance.batch_latency.apply(tau, a.width).max(1)))
    })
}

/// Estimated `(C(a), Δ(a))` in one pass.
#[inline]
pub(crate) fn estimate(action: &[Assignment], instance: &WorkflowInstance) -> Result<(MicroUsd, Millis)> {
    let mut cost = 0;
    let mut duration = 0;
    for a in action {
        let p = instance.profile(a.node, a.model)?;
        cost += a.width as MicroUsd * p.cost;
        duration = duration.max(instance.batch_latency.apply(p.latency, a.width).max(1));
    }
    Ok((cost, duration))
}

fn check_covers_ready(state: &ExecState, action: &AllocationAction, instance: &WorkflowInstance) -> Result<NodeSet> {
    let ready = instance.graph.ready_set(state.completed)?;
    if action.nodes() != ready {
        return Err(Error::Input(format!(
            "action assigns {:?} but the ready set is {:?}",
            action.nodes(),
            ready
        )));
    }
    Ok(ready)
}

/// Whether `action` fits the remaining budget and time (inclusive).
pub fn is_feasible(state: &ExecState, action: &AllocationAction, instance: &WorkflowInstance) -> Result<bool> {
    check_covers_ready(state, action, instance)?;
    check_widths(action)?;
    let (cost, duration) = estimate(&action.assignments, instance)?;
    Ok(cost <= state.remaining_budget && duration <= state.remaining_time)
}

/// `Pr(U | s, a)`: each assigned node completes independently with
/// probability `q_{v,m_v}(k_v)`.
pub fn subset_probability(
    state: &ExecState,
    action: &AllocationAction,
    subset: NodeSet,
    instance: &WorkflowInstance,
) -> Result<f64> {
    let ready = check_covers_ready(state, action, instance)?;
    if !subset.is_subset(ready) {
        return Err(Error::Input(format!(
            "{subset:?} is not a subset of the ready set {ready:?}"
        )));
    }
    let mut prob = 1.0;
    for a in &action.assignments {
        let q = success_prob(instance.profile(a.node, a.model)?.p, a.width)?;
        prob *= if subset.contains(a.node) { q } else { 1.0 - q };
    }
    Ok(prob)
}

/// One node's sampled result for one round.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NodeDraw {
    pub succeeded: bool,
    pub successes: u32,
    pub cost: MicroUsd,
    pub duration: Millis,
}

/// Samples `width` attempts of `node` with `model`. Parametric mode uses one
/// uniform draw against `q(k)` and charges the estimates; empirical mode
/// draws `width` pool records with replacement.
#[inline]
pub(crate) fn draw_node(
    instance: &WorkflowInstance,
    node: usize,
    model: usize,
    width: u32,
    rng: &mut SimRng,
) -> Result<NodeDraw> {
    match instance.pool(node, model) {
        None => {
            let p = instance.profile(node, model)?;
            let succeeded = rng.next_f64() < at_least_one(p.p, width);
            Ok(NodeDraw {
                succeeded,
                successes: succeeded as u32,
                cost: width as MicroUsd * p.cost,
                duration: instance.batch_latency.apply(p.latency, width).max(1),
            })
        }
        Some(pool) => {
            if pool.is_empty() {
                return Err(Error::MissingProfile { node, model });
            }
            let n = pool.len();
            let mut successes = 0u32;
            let mut tokens = 0u64;
            let mut duration: Millis = 1;
            for _ in 0..width {
                let (ok, t, lat) = pool.draw(rng.below(n));
                successes += ok as u32;
                tokens += t as u64;
                duration = duration.max(lat);
            }
            Ok(NodeDraw {
                succeeded: successes > 0,
                successes,
                cost: instance.catalog.get(model).cost_of(tokens as f64),
                duration,
            })
        }
    }
}

/// Samples the outcome of executing `action` from `state`.
///
/// In parametric mode the action must be feasible. In empirical mode
/// feasibility is only checked on estimates by the caller; the realized cost
/// and duration may exceed them.
pub fn sample_transition(
    state: &ExecState,
    action: &AllocationAction,
    instance: &WorkflowInstance,
    rng: &mut SimRng,
) -> Result<TransitionOutcome> {
    check_widths(action)?;
    if instance.mode() == Mode::Parametric {
        let (cost, duration) = estimate(&action.assignments, instance)?;
        if cost > state.remaining_budget || duration > state.remaining_time {
            return Err(Error::Contract(format!(
                "infeasible action: cost {cost} > {} or duration {duration} > {}",
                state.remaining_budget, state.remaining_time
            )));
        }
    }
    let mut out = TransitionOutcome {
        completed_now: NodeSet::EMPTY,
        cost: 0,
        duration: 0,
        details: Vec::with_capacity(action.len()),
    };
    for a in &action.assignments {
        let d = draw_node(instance, a.node, a.model, a.width, rng)?;
        if d.succeeded {
            out.completed_now = out.completed_now.with(a.node);
        }
        out.cost += d.cost;
        out.duration = out.duration.max(d.duration);
        out.details.push(NodeDetail {
            node: a.node,
            model: a.model,
            width: a.width,
            succeeded: d.succeeded,
            successes: d.successes,
            cost: d.cost,
            duration: d.duration,
        });
    }
    Ok(out)
}

/// `s' = (S ∪ U, b − C, h − Δ)`, with elapsed and spent advanced.
pub fn apply_outcome(state: &ExecState, outcome: &TransitionOutcome) -> ExecState {
    ExecState {
        completed: state.completed.union(outcome.completed_now),
        remaining_budget: state.remaining_budget - outcome.cost,
        remaining_time: state.remaining_time - outcome.duration,
        elapsed: state.elapsed + outcome.duration,
        spent: state.spent + outcome.cost,
    }
}
