//! Monte Carlo portfolio planning.
//!
//! At each state the planner scores every feasible candidate action by
//! simulating it once and then following each base policy of the portfolio
//! `Π0 = {π_{m,k}}`; a candidate's score is its best continuation's success
//! frequency. Only the argmax is executed, after which the planner observes
//! the outcome and replans.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{apply_outcome, draw_node, AllocationAction, Assignment, ExecState};
use crate::error::{Error, Result};
use crate::graph::NodeSet;
use crate::instance::WorkflowInstance;
use crate::policy::{fits, rollout, run_policy, BasePolicy, Decision, PlanRecord, Policy, RunOutcome};
use crate::rng::{domain, StreamKey};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Smallest `(node, model, width)` encoding among equal scores.
    #[default]
    Lexicographic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Sampling-width grid `K`, strictly increasing.
    pub widths: Vec<u32>,
    /// Simulations per (candidate, continuation) pair.
    pub sims_per_pair: u32,
    /// Largest action space that is enumerated in full.
    pub enumeration_cap: usize,
    /// Confidence for the reported Hoeffding radius; not used for selection.
    pub delta: f64,
    pub tie_break: TieBreak,
    /// Score candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            widths: vec![1, 4, 16, 64],
            sims_per_pair: 64,
            enumeration_cap: 4096,
            delta: 0.05,
            tie_break: TieBreak::Lexicographic,
            parallel: true,
        }
    }
}

impl PlannerConfig {
    pub fn with_widths(mut self, widths: Vec<u32>) -> Self {
        self.widths = widths;
        self
    }

    pub fn with_sims(mut self, sims: u32) -> Self {
        self.sims_per_pair = sims;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths[0] == 0 || self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Input(format!(
                "width grid must be non-empty, positive and strictly increasing: {:?}",
                self.widths
            )));
        }
        if self.sims_per_pair == 0 {
            return Err(Error::Input("sims_per_pair must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Input(format!("delta {} outside (0, 1)", self.delta)));
        }
        Ok(())
    }
}

/// `Π0`, ordered by model then width.
pub fn portfolio(n_models: usize, widths: &[u32]) -> Vec<BasePolicy> {
    (0..n_models)
        .flat_map(|m| widths.iter().map(move |&k| BasePolicy::new(m, k)))
        .collect()
}

/// Hoeffding radius `√(ln(2L/δ) / (2N))` for `L` estimates of `N` samples.
pub fn hoeffding_radius(pairs: usize, sims: u32, delta: f64) -> Result<f64> {
    if pairs == 0 || sims == 0 {
        return Err(Error::Input("pair count and sample count must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Input(format!("delta {delta} outside (0, 1)")));
    }
    Ok(((2.0 * pairs as f64 / delta).ln() / (2.0 * sims as f64)).sqrt())
}

fn choice_to_assignment(node: usize, choice: usize, widths: &[u32]) -> Assignment {
    Assignment {
        node,
        model: choice / widths.len(),
        width: widths[choice % widths.len()],
    }
}

fn actions_from_choices(
    ready: &[usize],
    choices: impl IntoIterator<Item = Vec<usize>>,
    widths: &[u32],
) -> Vec<AllocationAction> {
    choices
        .into_iter()
        .map(|c| {
            AllocationAction::from_sorted(
                ready
                    .iter()
                    .zip(c)
                    .map(|(&v, choice)| choice_to_assignment(v, choice, widths))
                    .collect(),
            )
        })
        .collect()
}

/// Every assignment of `(m, k) ∈ M × K` to the ready nodes, in
/// lexicographic order.
pub fn full_action_space(ready: NodeSet, n_models: usize, widths: &[u32]) -> Vec<AllocationAction> {
    let nodes: Vec<usize> = ready.iter().collect();
    let base = n_models * widths.len();
    let mut out = Vec::new();
    let mut digits = vec![0usize; nodes.len()];
    loop {
        out.push(digits.clone());
        // odometer, last node fastest
        let mut i = nodes.len();
        loop {
            if i == 0 {
                return actions_from_choices(&nodes, out, widths);
            }
            i -= 1;
            digits[i] += 1;
            if digits[i] < base {
                break;
            }
            digits[i] = 0;
        }
    }
}

/// Candidate actions at `state`, sorted and deduplicated.
///
/// When `(|M|·|K|)^|R|` is within the cap the whole space is returned.
/// Otherwise: every homogeneous action (one per base policy), plus every
/// action differing from a homogeneous one at a single node.
pub fn candidates(
    state: &ExecState,
    instance: &WorkflowInstance,
    config: &PlannerConfig,
) -> Result<Vec<AllocationAction>> {
    let ready = instance.graph.ready_set(state.completed)?;
    if ready.is_empty() {
        return Err(Error::Contract("no candidates for a completed workflow".into()));
    }
    let base = instance.n_models() * config.widths.len();
    let full_size = (base as u128).checked_pow(ready.len() as u32).unwrap_or(u128::MAX);
    if full_size <= config.enumeration_cap as u128 {
        return Ok(full_action_space(ready, instance.n_models(), &config.widths));
    }
    let nodes: Vec<usize> = ready.iter().collect();
    let r = nodes.len();
    let mut set = BTreeSet::new();
    for c in 0..base {
        let homogeneous = vec![c; r];
        for i in 0..r {
            for alt in (0..base).filter(|&alt| alt != c) {
                let mut dev = homogeneous.clone();
                dev[i] = alt;
                set.insert(dev);
            }
        }
        set.insert(homogeneous);
    }
    Ok(actions_from_choices(&nodes, set, &config.widths))
}

/// Fraction of `sims` simulations that complete the workflow when `action`
/// is executed first and `continuation` is followed afterwards.
/// Replicate `i` draws from `stream.child(i)`.
pub fn mc_value(
    state: &ExecState,
    action: &AllocationAction,
    continuation: BasePolicy,
    sims: u32,
    instance: &WorkflowInstance,
    stream: StreamKey,
) -> Result<f64> {
    if state.is_complete(instance) {
        return Err(Error::Contract("mc_value on a completed workflow".into()));
    }
    if sims == 0 {
        return Err(Error::Input("sims must be at least 1".into()));
    }
    if !fits(state, action, instance)? {
        return Ok(0.0);
    }
    let mut wins = 0u32;
    for i in 0..sims {
        let mut rng = stream.child(i as u64).rng();
        let mut done = NodeSet::EMPTY;
        let mut spent = 0;
        let mut took = 0;
        for a in action.assignments() {
            let d = draw_node(instance, a.node, a.model, a.width, &mut rng)?;
            if d.succeeded {
                done = done.with(a.node);
            }
            spent += d.cost;
            took = took.max(d.duration);
        }
        let next = ExecState::new(
            state.completed.union(done),
            state.remaining_budget - spent,
            state.remaining_time - took,
        );
        if next.within_limits() && rollout(&next, continuation, instance, &mut rng)? {
            wins += 1;
        }
    }
    Ok(wins as f64 / sims as f64)
}

/// Score of one candidate against every continuation of the portfolio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionScore {
    pub action: AllocationAction,
    /// `Q̂_μ(s, a)` in portfolio order.
    pub per_continuation: Vec<f64>,
    /// `max_μ Q̂_μ(s, a)`.
    pub score: f64,
    pub best_continuation: BasePolicy,
}

/// A planning decision with the full score table of feasible candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub action: AllocationAction,
    pub score: f64,
    pub best_continuation: BasePolicy,
    /// Size of the candidate set, feasible or not.
    pub candidates: usize,
    /// Hoeffding radius over all candidate/continuation pairs.
    pub radius: f64,
    pub table: Vec<ActionScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    Chosen(Plan),
    NoFeasible { candidates: usize },
}

/// Filters candidates to the feasible ones, scores each against every base
/// policy and returns the argmax (ties to the lexicographically smallest
/// action). Candidate `c` and continuation `j` draw from
/// `stream.child(c).child(j)`, where `c` indexes the sorted candidate list.
pub fn select_action(
    state: &ExecState,
    instance: &WorkflowInstance,
    config: &PlannerConfig,
    stream: StreamKey,
) -> Result<Selection> {
    config.validate()?;
    let cands = candidates(state, instance, config)?;
    let pi0 = portfolio(instance.n_models(), &config.widths);
    let mut feasible = Vec::new();
    for (idx, a) in cands.iter().enumerate() {
        if fits(state, a, instance)? {
            feasible.push(idx);
        }
    }
    if feasible.is_empty() {
        return Ok(Selection::NoFeasible {
            candidates: cands.len(),
        });
    }

    let score = |&idx: &usize| -> Result<ActionScore> {
        let action = &cands[idx];
        let key = stream.child(idx as u64);
        let per_continuation = pi0
            .iter()
            .enumerate()
            .map(|(j, &mu)| mc_value(state, action, mu, config.sims_per_pair, instance, key.child(j as u64)))
            .collect::<Result<Vec<f64>>>()?;
        let (best, &score) =
            per_continuation.iter().enumerate().fold(
                (0, &f64::NEG_INFINITY),
                |acc, (j, q)| if *q > *acc.1 { (j, q) } else { acc },
            );
        Ok(ActionScore {
            action: action.clone(),
            per_continuation,
            score,
            best_continuation: pi0[best],
        })
    };
    let table: Vec<ActionScore> = if config.parallel {
        feasible.par_iter().map(score).collect::<Result<_>>()?
    } else {
        feasible.iter().map(score).collect::<Result<_>>()?
    };

    // candidates are sorted, so the first maximum is the lexicographic winner
    let mut best = 0;
    for (i, s) in table.iter().enumerate() {
        if s.score > table[best].score {
            best = i;
        }
    }
    let chosen = &table[best];
    Ok(Selection::Chosen(Plan {
        action: chosen.action.clone(),
        score: chosen.score,
        best_continuation: chosen.best_continuation,
        candidates: cands.len(),
        radius: hoeffding_radius(cands.len() * pi0.len(), config.sims_per_pair, config.delta)?,
        table,
    }))
}

/// Closed-loop MCPP as a [`Policy`]. Plans against `planning`, which may
/// hold different (e.g. perturbed) statistics from the executed instance.
pub struct McppPolicy<'a> {
    planning: &'a WorkflowInstance,
    config: &'a PlannerConfig,
    stream: StreamKey,
}

impl<'a> McppPolicy<'a> {
    /// Round `r` plans with `stream.child(r)`.
    pub fn new(planning: &'a WorkflowInstance, config: &'a PlannerConfig, stream: StreamKey) -> Self {
        McppPolicy {
            planning,
            config,
            stream,
        }
    }
}

impl Policy for McppPolicy<'_> {
    fn decide(&mut self, state: &ExecState, _instance: &WorkflowInstance, round: u32) -> Result<Decision> {
        let started = Instant::now();
        let selection = select_action(state, self.planning, self.config, self.stream.child(round as u64))?;
        let seconds = started.elapsed().as_secs_f64();
        Ok(match selection {
            Selection::NoFeasible { .. } => Decision::Abort(crate::policy::FailureReason::NoFeasibleAction),
            Selection::Chosen(plan) => Decision::Act {
                plan: Some(PlanRecord {
                    score: plan.score,
                    best_continuation: plan.best_continuation,
                    candidates: plan.candidates,
                    feasible_candidates: plan.table.len(),
                    radius: plan.radius,
                    seconds,
                }),
                action: plan.action,
            },
        })
    }
}

/// Runs MCPP on `instance` with execution and planning streams derived from
/// `seed`.
pub fn run_mcpp(instance: &WorkflowInstance, config: &PlannerConfig, seed: u64) -> Result<RunOutcome> {
    let root = StreamKey::root(seed);
    run_mcpp_with(
        instance,
        instance,
        config,
        root.child(domain::EXECUTION).child(0),
        root.child(domain::PLANNING).child(0),
    )
}

/// MCPP executing on `execution` while planning against `planning`.
pub fn run_mcpp_with(
    execution: &WorkflowInstance,
    planning: &WorkflowInstance,
    config: &PlannerConfig,
    exec_stream: StreamKey,
    plan_stream: StreamKey,
) -> Result<RunOutcome> {
    config.validate()?;
    let mut policy = McppPolicy::new(planning, config, plan_stream);
    run_policy(execution, &mut policy, exec_stream)
}

/// Applies `action`'s sampled outcome; convenience for callers simulating
/// by hand.
pub fn step(
    state: &ExecState,
    action: &AllocationAction,
    instance: &WorkflowInstance,
    stream: StreamKey,
) -> Result<ExecState> {
    let outcome = crate::engine::sample_transition(state, action, instance, &mut stream.rng())?;
    Ok(apply_outcome(state, &outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WorkflowGraph;
    use crate::model::{ModelCatalog, ModelSpec, Profile, ProfileTable};
    use crate::units::MicroUsd;

    fn catalog(n: usize) -> ModelCatalog {
        ModelCatalog::new((0..n).map(|i| ModelSpec::new(format!("m{i}"), 0.0, 1.0)).collect())
    }

    fn uniform_instance(graph: WorkflowGraph, models: usize, p: f64, cost: MicroUsd, tau: i64) -> WorkflowInstance {
        let mut t = ProfileTable::new(graph.len(), models);
        for v in 0..graph.len() {
            for m in 0..models {
                t.set(v, m, Profile::from_raw(p, cost, tau));
            }
        }
        WorkflowInstance::parametric(graph, catalog(models), t)
    }

    #[test]
    fn candidate_counts() {
        let cfg = PlannerConfig::default().with_widths(vec![1, 4]);
        let inst = uniform_instance(WorkflowGraph::new(1, vec![]), 2, 0.5, 1, 1);
        let s = ExecState::new(NodeSet::EMPTY, 10, 10);
        assert_eq!(candidates(&s, &inst, &cfg).unwrap().len(), 4);

        let cfg = PlannerConfig::default();
        let inst = uniform_instance(WorkflowGraph::new(2, vec![]), 3, 0.5, 1, 1);
        assert_eq!(candidates(&s, &inst, &cfg).unwrap().len(), 144);
    }

    #[test]
    fn pruned_candidates_contain_every_base_action() {
        let cfg = PlannerConfig::default();
        let inst = uniform_instance(WorkflowGraph::new(8, vec![]), 3, 0.5, 1, 1);
        let s = ExecState::new(NodeSet::EMPTY, 10, 10);
        let cands = candidates(&s, &inst, &cfg).unwrap();
        // 12 homogeneous + 12 * 8 nodes * 11 alternatives, all distinct for |R| > 1
        assert_eq!(cands.len(), 12 * (1 + 8 * 11));
        for mu in portfolio(3, &cfg.widths) {
            assert!(cands.contains(&mu.action_for(NodeSet::full(8))));
        }
        assert!(cands.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn full_space_is_sorted_and_complete() {
        let all = full_action_space(NodeSet::from_nodes([1, 3]), 2, &[1, 2]);
        assert_eq!(all.len(), 16);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn mc_value_edge_cases() {
        let inst = uniform_instance(WorkflowGraph::chain(2), 1, 1.0, 2, 2);
        let s = ExecState::new(NodeSet::from_nodes([0]), 2, 2);
        let a = AllocationAction::homogeneous(NodeSet::from_nodes([1]), 0, 1);
        assert_eq!(
            mc_value(&s, &a, BasePolicy::new(0, 4), 16, &inst, StreamKey::root(0)).unwrap(),
            1.0
        );
        let tight = ExecState::new(NodeSet::from_nodes([0]), 1, 2);
        assert_eq!(
            mc_value(&tight, &a, BasePolicy::new(0, 1), 16, &inst, StreamKey::root(0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn hoeffding_values() {
        let r = hoeffding_radius(12, 64, 0.05).unwrap();
        assert!((r - (480f64.ln() / 128.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.2196).abs() < 1e-4);
        let a = hoeffding_radius(1, 100, 0.05).unwrap();
        let b = hoeffding_radius(1, 400, 0.05).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
        assert!(hoeffding_radius(12, 64, 0.01).unwrap() > r);
        assert!(hoeffding_radius(0, 64, 0.05).is_err());
        assert!(hoeffding_radius(1, 64, 1.0).is_err());
    }

    #[test]
    fn no_feasible_action() {
        let inst = uniform_instance(WorkflowGraph::chain(1), 1, 0.5, 5, 1);
        let s = ExecState::new(NodeSet::EMPTY, 0, 10);
        assert_eq!(
            select_action(&s, &inst, &PlannerConfig::default(), StreamKey::root(0)).unwrap(),
            Selection::NoFeasible { candidates: 4 }
        );
        let out = run_mcpp(&inst.with_constraints(0, 10), &PlannerConfig::default(), 1).unwrap();
        assert!(!out.success);
        assert!(out.rounds.is_empty());
    }

    #[test]
    fn trivial_instance_finishes_in_one_round() {
        let inst = uniform_instance(WorkflowGraph::chain(1), 1, 1.0, 1, 1).with_constraints(1000, 1000);
        let out = run_mcpp(&inst, &PlannerConfig::default(), 3).unwrap();
        assert!(out.success);
        assert_eq!(out.rounds.len(), 1);
    }

    #[test]
    fn ties_break_to_smallest_action() {
        // p = 1: every affordable action scores 1.0
        let inst = uniform_instance(WorkflowGraph::new(2, vec![]), 2, 1.0, 1, 1);
        let s = ExecState::new(NodeSet::EMPTY, 1000, 10);
        let cfg = PlannerConfig::default().with_widths(vec![1, 2]).with_sims(4);
        let Selection::Chosen(plan) = select_action(&s, &inst, &cfg, StreamKey::root(0)).unwrap() else {
            panic!("expected a plan")
        };
        assert_eq!(
            plan.action,
            AllocationAction::homogeneous(NodeSet::from_nodes([0, 1]), 0, 1)
        );
    }

    #[test]
    fn parallel_and_serial_scoring_agree() {
        let inst = uniform_instance(WorkflowGraph::new(3, vec![(0, 2)]), 2, 0.45, 3, 2);
        let s = ExecState::new(NodeSet::EMPTY, 40, 9);
        let cfg = PlannerConfig::default().with_widths(vec![1, 2]).with_sims(32);
        let serial = PlannerConfig {
            parallel: false,
            ..cfg.clone()
        };
        let a = select_action(&s, &inst, &cfg, StreamKey::root(5)).unwrap();
        let b = select_action(&s, &inst, &serial, StreamKey::root(5)).unwrap();
        assert_eq!(a, b);
    }
}
