//! Exact dynamic programming over small parametric instances.
//!
//! Costs and latencies are integers, so the states reachable from `(∅, B, D)`
//! form a finite set and every value is memoized on the exact key
//! `(S, b, h)`. All values share one expectation routine with a fixed
//! summation order; floating-point rounding is monotone, so inequalities
//! that hold between exact values (such as `V* ≥ V^μ`) also hold between the
//! computed ones without tolerance.

use std::cell::RefCell;
use std::collections::{BTreeSet, HashMap};
use std::rc::Rc;

use serde::Serialize;

use crate::engine::{at_least_one, estimate, AllocationAction, ExecState};
use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::instance::{Mode, WorkflowInstance};
use crate::planner::{candidates, full_action_space, portfolio, PlannerConfig};
use crate::policy::BasePolicy;
use crate::units::{MicroUsd, Millis};

pub const ORACLE_MAX_NODES: usize = 12;

type Key = (u64, MicroUsd, Millis);

fn key(s: &ExecState) -> Key {
    (s.completed.bits(), s.remaining_budget, s.remaining_time)
}

/// `η` and `ζ` at one state, with the maxima they are built from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapDiagnostics {
    /// `V*_K(s)`.
    pub optimal: f64,
    /// `max_{a ∈ A_K(s), μ} Q_μ(s, a)`.
    pub best_full: f64,
    /// `max_{a ∈ Ã(s), μ} Q_μ(s, a)`.
    pub best_pruned: f64,
    pub eta: f64,
    pub zeta: f64,
}

/// One state's exact values, as emitted for fixtures.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StateValues {
    pub completed: Vec<usize>,
    pub remaining_budget_usd: f64,
    pub remaining_time_s: f64,
    pub optimal: f64,
    /// `max_μ V^μ(s)`.
    pub best_base: f64,
    pub portfolio_plan: Option<AllocationAction>,
    pub portfolio_value: Option<f64>,
}

/// Memoized exact values for one parametric instance.
///
/// Not `Sync`: caches use interior mutability. Build one oracle per thread.
pub struct ExactOracle<'a> {
    instance: &'a WorkflowInstance,
    config: PlannerConfig,
    portfolio: Vec<BasePolicy>,
    optimal: RefCell<HashMap<Key, f64>>,
    fixed: RefCell<HashMap<(BasePolicy, Key), f64>>,
    planned: RefCell<HashMap<Key, f64>>,
    plans: RefCell<HashMap<Key, (AllocationAction, f64)>>,
    actions: RefCell<HashMap<u64, Rc<Vec<AllocationAction>>>>,
}

impl<'a> ExactOracle<'a> {
    /// `widths` is `K`; `cap` bounds both the full action space at any
    /// visited state and the candidate set used by the exact planner.
    pub fn new(instance: &'a WorkflowInstance, widths: &[u32], cap: usize) -> Result<Self> {
        if instance.mode() != Mode::Parametric {
            return Err(Error::UnsupportedMode("the exact oracle needs parametric statistics"));
        }
        if instance.n_nodes() > ORACLE_MAX_NODES {
            return Err(Error::SizeGuard(format!(
                "{} nodes exceeds the oracle limit of {ORACLE_MAX_NODES}",
                instance.n_nodes()
            )));
        }
        let config = PlannerConfig {
            widths: widths.to_vec(),
            enumeration_cap: cap,
            ..PlannerConfig::default()
        };
        config.validate()?;
        Ok(ExactOracle {
            instance,
            portfolio: portfolio(instance.n_models(), widths),
            config,
            optimal: RefCell::default(),
            fixed: RefCell::default(),
            planned: RefCell::default(),
            plans: RefCell::default(),
            actions: RefCell::default(),
        })
    }

    pub fn portfolio(&self) -> &[BasePolicy] {
        &self.portfolio
    }

    pub fn widths(&self) -> &[u32] {
        &self.config.widths
    }

    /// `A_K(S)`, cached per ready set.
    pub fn full_action_space(&self, state: &ExecState) -> Result<Rc<Vec<AllocationAction>>> {
        let ready = self.instance.graph.ready_set(state.completed)?;
        if ready.is_empty() {
            return Err(Error::Contract("no actions at a completed state".into()));
        }
        if let Some(a) = self.actions.borrow().get(&ready.bits()) {
            return Ok(a.clone());
        }
        let base = (self.instance.n_models() * self.config.widths.len()) as u128;
        let size = base.checked_pow(ready.len() as u32).unwrap_or(u128::MAX);
        if size > self.config.enumeration_cap as u128 {
            return Err(Error::SizeGuard(format!(
                "{size} actions at ready set {ready:?} exceeds the cap of {}",
                self.config.enumeration_cap
            )));
        }
        let all = Rc::new(full_action_space(ready, self.instance.n_models(), &self.config.widths));
        self.actions.borrow_mut().insert(ready.bits(), all.clone());
        Ok(all)
    }

    /// `Σ_U Pr(U | s, a) · f(s′)`, or 0 when `a` is infeasible at `s`.
    /// Subsets are visited in increasing bitmask order over the action's
    /// assignments.
    fn expect(
        &self,
        state: &ExecState,
        action: &AllocationAction,
        mut f: impl FnMut(&ExecState) -> Result<f64>,
    ) -> Result<f64> {
        let (cost, duration) = estimate(action.assignments(), self.instance)?;
        if cost > state.remaining_budget || duration > state.remaining_time {
            return Ok(0.0);
        }
        let mut qs = Vec::with_capacity(action.len());
        for a in action.assignments() {
            qs.push((a.node, at_least_one(self.instance.profile(a.node, a.model)?.p, a.width)));
        }
        let mut total = 0.0;
        for mask in 0u64..(1 << qs.len()) {
            let mut prob = 1.0;
            let mut done = NodeSet::EMPTY;
            for (i, &(node, q)) in qs.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    prob *= q;
                    done = done.with(node);
                } else {
                    prob *= 1.0 - q;
                }
            }
            if prob == 0.0 {
                continue;
            }
            let next = ExecState::new(
                state.completed.union(done),
                state.remaining_budget - cost,
                state.remaining_time - duration,
            );
            total += prob * f(&next)?;
        }
        Ok(total)
    }

    /// `V*_K(s)`.
    pub fn value(&self, state: &ExecState) -> Result<f64> {
        if state.is_complete(self.instance) {
            return Ok(1.0);
        }
        let k = key(state);
        if let Some(&v) = self.optimal.borrow().get(&k) {
            return Ok(v);
        }
        let mut best = 0.0f64;
        for a in self.full_action_space(state)?.iter() {
            best = best.max(self.q_star(state, a)?);
        }
        self.optimal.borrow_mut().insert(k, best);
        Ok(best)
    }

    /// `Q*_K(s, a) = E[V*_K(s′)]`; 0 for an infeasible action.
    pub fn q_star(&self, state: &ExecState, action: &AllocationAction) -> Result<f64> {
        self.expect(state, action, |next| self.value(next))
    }

    /// `V^μ(s)`, defined as `Q_μ(s, μ(s))`.
    pub fn policy_value(&self, state: &ExecState, policy: BasePolicy) -> Result<f64> {
        if state.is_complete(self.instance) {
            return Ok(1.0);
        }
        let k = (policy, key(state));
        if let Some(&v) = self.fixed.borrow().get(&k) {
            return Ok(v);
        }
        let action = policy.action_for(self.instance.graph.ready_nodes(state.completed));
        let v = self.q(state, &action, policy)?;
        self.fixed.borrow_mut().insert(k, v);
        Ok(v)
    }

    /// `Q_μ(s, a) = E[V^μ(s′)]`; 0 for an infeasible action.
    pub fn q(&self, state: &ExecState, action: &AllocationAction, continuation: BasePolicy) -> Result<f64> {
        if state.is_complete(self.instance) {
            return Err(Error::Contract("Q requested at a completed state".into()));
        }
        self.expect(state, action, |next| self.policy_value(next, continuation))
    }

    /// `max_μ Q_μ(s, a)`.
    pub fn portfolio_q(&self, state: &ExecState, action: &AllocationAction) -> Result<f64> {
        let mut best = 0.0f64;
        for &mu in &self.portfolio {
            best = best.max(self.q(state, action, mu)?);
        }
        Ok(best)
    }

    /// `max_μ V^μ(s)`.
    pub fn best_base_value(&self, state: &ExecState) -> Result<f64> {
        let mut best = 0.0f64;
        for &mu in &self.portfolio {
            best = best.max(self.policy_value(state, mu)?);
        }
        Ok(best)
    }

    /// The exact portfolio planner: argmax of `max_μ Q_μ(s, a)` over the
    /// planner's candidate set, ties to the smallest action.
    pub fn portfolio_plan(&self, state: &ExecState) -> Result<(AllocationAction, f64)> {
        let k = key(state);
        if let Some(p) = self.plans.borrow().get(&k) {
            return Ok(p.clone());
        }
        let cands = candidates(state, self.instance, &self.config)?;
        self.best_of(state, &cands).inspect(|plan| {
            self.plans.borrow_mut().insert(k, plan.clone());
        })
    }

    fn best_of(&self, state: &ExecState, actions: &[AllocationAction]) -> Result<(AllocationAction, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in actions.iter().enumerate() {
            let v = self.portfolio_q(state, a)?;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        let (i, v) = best.ok_or_else(|| Error::Contract("empty candidate set".into()))?;
        Ok((actions[i].clone(), v))
    }

    /// `V^{π_exact}(s)`: closed-loop value of re-running the exact
    /// portfolio planner at every state.
    pub fn exact_plan_value(&self, state: &ExecState) -> Result<f64> {
        if state.is_complete(self.instance) {
            return Ok(1.0);
        }
        let k = key(state);
        if let Some(&v) = self.planned.borrow().get(&k) {
            return Ok(v);
        }
        let (action, _) = self.portfolio_plan(state)?;
        let v = self.expect(state, &action, |next| self.exact_plan_value(next))?;
        self.planned.borrow_mut().insert(k, v);
        Ok(v)
    }

    /// Candidate-set gap `η` of `pruned` and continuation gap `ζ` at `state`.
    pub fn gap_diagnostics(&self, state: &ExecState, pruned: &[AllocationAction]) -> Result<GapDiagnostics> {
        let full = self.full_action_space(state)?;
        let (_, best_full) = self.best_of(state, &full)?;
        let (_, best_pruned) = self.best_of(state, pruned)?;
        let optimal = self.value(state)?;
        Ok(GapDiagnostics {
            optimal,
            best_full,
            best_pruned,
            eta: best_full - best_pruned,
            zeta: optimal - best_full,
        })
    }

    /// Every incomplete state reachable from `start` under some action
    /// sequence with positive probability, sorted.
    pub fn reachable_states(&self, start: &ExecState) -> Result<Vec<ExecState>> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![*start];
        while let Some(s) = stack.pop() {
            if s.is_complete(self.instance) || !seen.insert(key(&s)) {
                continue;
            }
            for a in self.full_action_space(&s)?.iter() {
                self.expect(&s, a, |next| {
                    stack.push(*next);
                    Ok(0.0)
                })?;
            }
        }
        Ok(seen
            .into_iter()
            .map(|(bits, b, h)| ExecState::new(NodeSet::from_bits(bits), b, h))
            .collect())
    }

    /// Values at `state` for fixture output.
    pub fn describe(&self, state: &ExecState) -> Result<StateValues> {
        let complete = state.is_complete(self.instance);
        let plan = if complete {
            None
        } else {
            Some(self.portfolio_plan(state)?)
        };
        Ok(StateValues {
            completed: state.completed.iter().collect(),
            remaining_budget_usd: crate::units::micro_to_usd(state.remaining_budget),
            remaining_time_s: crate::units::millis_to_secs(state.remaining_time),
            optimal: self.value(state)?,
            best_base: if complete { 1.0 } else { self.best_base_value(state)? },
            portfolio_value: plan.as_ref().map(|p| p.1),
            portfolio_plan: plan.map(|p| p.0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WorkflowGraph;
    use crate::model::{ModelCatalog, ModelSpec, Profile, ProfileTable};

    fn single(p: f64) -> WorkflowInstance {
        let mut t = ProfileTable::new(1, 1);
        t.set(0, 0, Profile::from_raw(p, 1, 1));
        WorkflowInstance::parametric(
            WorkflowGraph::chain(1),
            ModelCatalog::new(vec![ModelSpec::new("m0", 0.0, 1.0)]),
            t,
        )
    }

    #[test]
    fn single_node_values() {
        let inst = single(0.5);
        let o = ExactOracle::new(&inst, &[1, 2], 4096).unwrap();
        // one round fits: k = 2 gives 0.75
        let s = ExecState::new(NodeSet::EMPTY, 2, 1);
        assert_eq!(o.value(&s).unwrap(), 0.75);
        assert_eq!(o.policy_value(&s, BasePolicy::new(0, 1)).unwrap(), 0.5);
        assert_eq!(o.policy_value(&s, BasePolicy::new(0, 2)).unwrap(), 0.75);
        // two rounds of k = 1 or one of k = 2, both 0.75
        let s = ExecState::new(NodeSet::EMPTY, 2, 2);
        assert_eq!(o.value(&s).unwrap(), 0.75);
        assert_eq!(o.policy_value(&s, BasePolicy::new(0, 1)).unwrap(), 0.75);
        assert_eq!(o.value(&ExecState::new(NodeSet::full(1), 0, 0)).unwrap(), 1.0);
    }

    #[test]
    fn infeasible_first_action_is_worth_zero() {
        let inst = single(0.5);
        let o = ExactOracle::new(&inst, &[1, 2], 4096).unwrap();
        let s = ExecState::new(NodeSet::EMPTY, 1, 5);
        assert_eq!(o.policy_value(&s, BasePolicy::new(0, 2)).unwrap(), 0.0);
        assert_eq!(o.value(&ExecState::new(NodeSet::EMPTY, 0, 5)).unwrap(), 0.0);
    }

    #[test]
    fn antichain_q_matches_hand_enumeration() {
        let mut t = ProfileTable::new(2, 1);
        t.set(0, 0, Profile::from_raw(0.5, 1, 1));
        t.set(1, 0, Profile::from_raw(0.5, 1, 1));
        let inst = WorkflowInstance::parametric(
            WorkflowGraph::new(2, vec![]),
            ModelCatalog::new(vec![ModelSpec::new("m0", 0.0, 1.0)]),
            t,
        );
        let o = ExactOracle::new(&inst, &[1], 4096).unwrap();
        let mu = BasePolicy::new(0, 1);
        // ample budget, two rounds: each node gets two tries
        let s = ExecState::new(NodeSet::EMPTY, 100, 2);
        let a = mu.action_for(NodeSet::full(2));
        assert_eq!(o.q(&s, &a, mu).unwrap(), 0.5625);
        assert_eq!(o.value(&s).unwrap(), 0.5625);
    }

    #[test]
    fn rejects_oversized_instances() {
        let inst = single(0.5);
        assert!(ExactOracle::new(&inst, &[1, 2], 4096).is_ok());
        let big = WorkflowInstance::parametric(
            WorkflowGraph::chain(13),
            ModelCatalog::new(vec![ModelSpec::new("m0", 0.0, 1.0)]),
            ProfileTable::new(13, 1),
        );
        assert!(matches!(ExactOracle::new(&big, &[1], 4096), Err(Error::SizeGuard(_))));
        let wide = WorkflowInstance::parametric(
            WorkflowGraph::new(4, vec![]),
            ModelCatalog::new(vec![ModelSpec::new("m0", 0.0, 1.0)]),
            ProfileTable::new(4, 1),
        );
        let o = ExactOracle::new(&wide, &[1, 2, 4], 10).unwrap();
        assert!(matches!(
            o.value(&ExecState::new(NodeSet::EMPTY, 1, 1)),
            Err(Error::SizeGuard(_))
        ));
    }
}
