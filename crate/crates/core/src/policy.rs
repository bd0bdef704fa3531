//! Base continuation policies, the static Uniform baseline and the generic
//! closed-loop runner.

use serde::{Deserialize, Serialize};

use crate::engine::{
    apply_outcome, draw_node, estimate, sample_transition, AllocationAction, ExecState, TransitionOutcome,
};
use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::instance::{Mode, WorkflowInstance};
use crate::rng::{SimRng, StreamKey};
use crate::units::MicroUsd;

/// Width assigned by [`uniform_plan`] when a pair costs nothing.
pub const UNIFORM_MAX_WIDTH: u32 = 1024;

/// Retry-`k` with model `m`: assign `(m, k)` to every ready subtask, every
/// round, until done or out of budget/time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasePolicy {
    pub model: usize,
    pub width: u32,
}

impl BasePolicy {
    pub fn new(model: usize, width: u32) -> Self {
        BasePolicy { model, width }
    }

    pub fn action_for(&self, ready: NodeSet) -> AllocationAction {
        AllocationAction::homogeneous(ready, self.model, self.width)
    }
}

/// `π_{m,k}(s)`; a completed workflow has no ready subtasks to assign.
pub fn base_action(policy: BasePolicy, state: &ExecState, instance: &WorkflowInstance) -> Result<AllocationAction> {
    let ready = instance.graph.ready_set(state.completed)?;
    if ready.is_empty() {
        return Err(Error::Contract("base action requested for a completed workflow".into()));
    }
    Ok(policy.action_for(ready))
}

/// Static allocation fixed before execution: every node gets an equal share
/// of the budget, spent on as many samples of `model` as it buys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformPlan {
    pub model: usize,
    pub widths: Vec<u32>,
}

impl UniformPlan {
    /// False when some node cannot afford a single sample.
    pub fn is_feasible(&self) -> bool {
        self.widths.iter().all(|&k| k > 0)
    }
}

/// `k_v = ⌊(B / |V|) / c_{v,m}⌋` for every node.
pub fn uniform_plan(instance: &WorkflowInstance, model: usize) -> Result<UniformPlan> {
    let n = instance.n_nodes() as MicroUsd;
    let budget = instance.budget.max(0);
    let widths = (0..instance.n_nodes())
        .map(|v| {
            let c = instance.profile(v, model)?.cost;
            if c <= 0 {
                return Ok(UNIFORM_MAX_WIDTH);
            }
            Ok((budget / (n * c)).min(UNIFORM_MAX_WIDTH as MicroUsd) as u32)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UniformPlan { model, widths })
}

/// Why a closed-loop run ended in failure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// The policy's action does not fit the remaining budget or time.
    NoFeasibleAction,
    BudgetExceeded,
    DeadlineExceeded,
    /// A Uniform node's single dispatch failed.
    DispatchFailed,
    /// The Uniform plan could not afford a sample for some node.
    InfeasiblePlan,
}

/// Planner annotations for one decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub score: f64,
    pub best_continuation: BasePolicy,
    pub candidates: usize,
    pub feasible_candidates: usize,
    pub radius: f64,
    pub seconds: f64,
}

pub enum Decision {
    Act {
        action: AllocationAction,
        plan: Option<PlanRecord>,
    },
    Abort(FailureReason),
}

/// A closed-loop execution policy.
pub trait Policy {
    fn decide(&mut self, state: &ExecState, instance: &WorkflowInstance, round: u32) -> Result<Decision>;
}

/// Whether `action`'s estimated cost and duration fit the remaining budget
/// and time.
pub(crate) fn fits(state: &ExecState, action: &AllocationAction, instance: &WorkflowInstance) -> Result<bool> {
    let (cost, duration) = estimate(action.assignments(), instance)?;
    Ok(cost <= state.remaining_budget && duration <= state.remaining_time)
}

impl Policy for BasePolicy {
    fn decide(&mut self, state: &ExecState, instance: &WorkflowInstance, _round: u32) -> Result<Decision> {
        let action = base_action(*self, state, instance)?;
        if !fits(state, &action, instance)? {
            return Ok(Decision::Abort(FailureReason::NoFeasibleAction));
        }
        Ok(Decision::Act { action, plan: None })
    }
}

/// Runs a [`UniformPlan`]: each node is dispatched exactly once, when it
/// becomes ready.
pub struct UniformPolicy {
    plan: UniformPlan,
    dispatched: NodeSet,
}

impl UniformPolicy {
    pub fn new(plan: UniformPlan) -> Self {
        UniformPolicy {
            plan,
            dispatched: NodeSet::EMPTY,
        }
    }
}

impl Policy for UniformPolicy {
    fn decide(&mut self, state: &ExecState, instance: &WorkflowInstance, _round: u32) -> Result<Decision> {
        if !self.plan.is_feasible() {
            return Ok(Decision::Abort(FailureReason::InfeasiblePlan));
        }
        let ready = instance.graph.ready_set(state.completed)?;
        if !ready.intersection(self.dispatched).is_empty() {
            return Ok(Decision::Abort(FailureReason::DispatchFailed));
        }
        self.dispatched = self.dispatched.union(ready);
        let action = AllocationAction::new(
            ready
                .iter()
                .map(|node| crate::engine::Assignment {
                    node,
                    model: self.plan.model,
                    width: self.plan.widths[node],
                })
                .collect(),
        )?;
        if !fits(state, &action, instance)? {
            return Ok(Decision::Abort(FailureReason::NoFeasibleAction));
        }
        Ok(Decision::Act { action, plan: None })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub state: ExecState,
    pub action: AllocationAction,
    pub outcome: TransitionOutcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plan: Option<PlanRecord>,
}

/// Result and trace of one closed-loop execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub success: bool,
    pub failure: Option<FailureReason>,
    pub final_state: ExecState,
    pub rounds: Vec<RoundRecord>,
}

impl RunOutcome {
    /// Mean planner seconds per decision round, if any round was planned.
    pub fn mean_planner_seconds(&self) -> Option<f64> {
        let times: Vec<f64> = self
            .rounds
            .iter()
            .filter_map(|r| r.plan.as_ref().map(|p| p.seconds))
            .collect();
        if times.is_empty() {
            None
        } else {
            Some(times.iter().sum::<f64>() / times.len() as f64)
        }
    }
}

/// Executes `policy` in closed loop from `(∅, B, D)`. Round `r` samples its
/// outcome from `exec.child(r)`.
pub fn run_policy(instance: &WorkflowInstance, policy: &mut dyn Policy, exec: StreamKey) -> Result<RunOutcome> {
    let mut state = ExecState::initial(instance);
    let mut rounds = Vec::new();
    let finish = |state: ExecState, rounds, failure: Option<FailureReason>| {
        Ok(RunOutcome {
            success: failure.is_none(),
            failure,
            final_state: state,
            rounds,
        })
    };
    let mut round = 0u32;
    loop {
        if state.is_complete(instance) {
            return finish(state, rounds, None);
        }
        let (action, plan) = match policy.decide(&state, instance, round)? {
            Decision::Abort(reason) => return finish(state, rounds, Some(reason)),
            Decision::Act { action, plan } => (action, plan),
        };
        let ready = instance.graph.ready_nodes(state.completed);
        if action.nodes() != ready {
            return Err(Error::Contract(format!(
                "policy assigned {:?}, ready set is {ready:?}",
                action.nodes()
            )));
        }
        // Parametric charges are deterministic, so an estimate overrun is a
        // certain failure. Empirical runs are judged on realized consumption;
        // policies screen actions against their own estimates.
        if instance.mode() == Mode::Parametric && !fits(&state, &action, instance)? {
            return finish(state, rounds, Some(FailureReason::NoFeasibleAction));
        }
        let outcome = sample_transition(&state, &action, instance, &mut exec.child(round as u64).rng())?;
        let next = apply_outcome(&state, &outcome);
        rounds.push(RoundRecord {
            round,
            state,
            action,
            outcome,
            plan,
        });
        state = next;
        if state.remaining_budget < 0 {
            return finish(state, rounds, Some(FailureReason::BudgetExceeded));
        }
        if state.remaining_time < 0 {
            return finish(state, rounds, Some(FailureReason::DeadlineExceeded));
        }
        round += 1;
    }
}

/// Follows `policy` from `state` without recording a trace; returns whether
/// the workflow completes within the remaining budget and time.
pub fn rollout(state: &ExecState, policy: BasePolicy, instance: &WorkflowInstance, rng: &mut SimRng) -> Result<bool> {
    let all = instance.graph.all_nodes();
    let BasePolicy { model, width } = policy;
    let mut completed = state.completed;
    let mut budget = state.remaining_budget;
    let mut time = state.remaining_time;
    loop {
        if completed == all {
            return Ok(true);
        }
        let ready = instance.graph.ready_nodes(completed);
        let mut est_cost = 0;
        let mut est_duration = 0;
        for v in ready.iter() {
            let p = instance.profile(v, model)?;
            est_cost += width as MicroUsd * p.cost;
            est_duration = est_duration.max(instance.batch_latency.apply(p.latency, width).max(1));
        }
        if est_cost > budget || est_duration > time {
            return Ok(false);
        }
        let mut done = NodeSet::EMPTY;
        let mut cost = 0;
        let mut duration = 0;
        for v in ready.iter() {
            let d = draw_node(instance, v, model, width, rng)?;
            if d.succeeded {
                done = done.with(v);
            }
            cost += d.cost;
            duration = duration.max(d.duration);
        }
        completed = completed.union(done);
        budget -= cost;
        time -= duration;
        if budget < 0 || time < 0 {
            return Ok(false);
        }
    }
}
