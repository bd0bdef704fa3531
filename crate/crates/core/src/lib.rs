//! Budget- and deadline-constrained execution of DAG workflows, planned
//! online with Monte Carlo portfolio rollouts and checked against an exact
//! dynamic program on small instances.

pub mod engine;
pub mod error;
pub mod graph;
pub mod harness;
pub mod instance;
pub mod io;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod planner;
pub mod policy;
pub mod rng;
pub mod synth;
pub mod units;
pub mod validate;

pub use engine::{
    action_cost, action_duration, apply_outcome, is_feasible, sample_transition, subset_probability, success_prob,
    AllocationAction, Assignment, ExecState, NodeDetail, TransitionOutcome,
};
pub use error::{Error, Result};
pub use graph::{NodeSet, WorkflowGraph, MAX_NODES};
pub use harness::{
    ci_radius, emit_report, estimate_success_probability, m_sweep, sweep, EvalSettings, EvaluationReport, Method,
    MethodFamily, ReportFormat, ReportRow,
};
pub use instance::{BatchLatency, Mode, Statistics, WorkflowInstance};
pub use model::{derive_profile, ModelCatalog, ModelSpec, PoolRecord, PoolTable, Profile, ProfileTable, RolloutPool};
pub use noise::{perturb_success_rate, perturb_token_lengths, NoiseKind, NoiseSpec};
pub use oracle::{ExactOracle, GapDiagnostics};
pub use planner::{
    candidates, hoeffding_radius, mc_value, portfolio, run_mcpp, run_mcpp_with, select_action, ActionScore, McppPolicy,
    Plan, PlannerConfig, Selection, TieBreak,
};
pub use policy::{
    base_action, rollout, run_policy, uniform_plan, BasePolicy, Decision, FailureReason, Policy, RunOutcome,
    UniformPlan, UniformPolicy,
};
pub use rng::{SimRng, StreamKey};
pub use synth::{generate_instance, Shape, SyntheticSpec};
pub use units::{MicroUsd, Millis};
pub use validate::{validate, Violation};
