//! Instance validation.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use crate::graph::MAX_NODES;
use crate::instance::{Statistics, WorkflowInstance};

/// One broken invariant, with enough context to locate it.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    TooManyNodes {
        count: usize,
        max: usize,
    },
    NoModels,
    UnknownEdgeEndpoint {
        from: usize,
        to: usize,
    },
    SelfLoop {
        node: usize,
    },
    DuplicateEdge {
        from: usize,
        to: usize,
    },
    /// Nodes on, or only reachable through, a dependency cycle.
    Cycle {
        nodes: Vec<usize>,
    },
    NonPositiveThroughput {
        model: String,
    },
    NegativePrice {
        model: String,
    },
    MissingProfile {
        node: usize,
        model: String,
    },
    ProbabilityOutOfRange {
        node: usize,
        model: String,
        p: f64,
    },
    NonPositiveTokens {
        node: usize,
        model: String,
    },
    NonPositiveLatency {
        node: usize,
        model: String,
    },
    NegativeCost {
        node: usize,
        model: String,
    },
    EmptyPool {
        node: usize,
        model: String,
    },
    NegativeBudget,
    NegativeDeadline,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            TooManyNodes { count, max } => write!(f, "{count} nodes exceeds the limit of {max}"),
            NoModels => write!(f, "model catalog is empty"),
            UnknownEdgeEndpoint { from, to } => write!(f, "edge ({from}, {to}) references an unknown node"),
            SelfLoop { node } => write!(f, "self-loop on node {node}"),
            DuplicateEdge { from, to } => write!(f, "duplicate edge ({from}, {to})"),
            Cycle { nodes } => write!(f, "dependency cycle blocks nodes {nodes:?}"),
            NonPositiveThroughput { model } => write!(f, "model {model}: throughput must be > 0"),
            NegativePrice { model } => write!(f, "model {model}: price must be >= 0"),
            MissingProfile { node, model } => write!(f, "no profile for node {node}, model {model}"),
            ProbabilityOutOfRange { node, model, p } => {
                write!(f, "node {node}, model {model}: probability {p} outside [0, 1]")
            }
            NonPositiveTokens { node, model } => write!(f, "node {node}, model {model}: tokens must be > 0"),
            NonPositiveLatency { node, model } => write!(f, "node {node}, model {model}: latency must be > 0"),
            NegativeCost { node, model } => write!(f, "node {node}, model {model}: cost must be >= 0"),
            EmptyPool { node, model } => write!(f, "empty pool for node {node}, model {model}"),
            NegativeBudget => write!(f, "budget must be >= 0"),
            NegativeDeadline => write!(f, "deadline must be >= 0"),
        }
    }
}

/// Every invariant violation of `instance`; empty when valid.
// negated comparisons make NaN fail every check
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn validate(instance: &WorkflowInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    let g = &instance.graph;
    let n = g.len();
    if n > MAX_NODES {
        out.push(Violation::TooManyNodes {
            count: n,
            max: MAX_NODES,
        });
        return out;
    }
    if instance.catalog.is_empty() {
        out.push(Violation::NoModels);
    }

    let mut seen = HashSet::new();
    for &(u, v) in g.edges() {
        if u >= n || v >= n {
            out.push(Violation::UnknownEdgeEndpoint { from: u, to: v });
        } else if u == v {
            out.push(Violation::SelfLoop { node: u });
        } else if !seen.insert((u, v)) {
            out.push(Violation::DuplicateEdge { from: u, to: v });
        }
    }
    // self-loops already make their node unschedulable; report them once
    let blocked = g.blocked_nodes();
    if !blocked.is_empty() && !g.edges().iter().any(|&(u, v)| u == v && u < n) {
        out.push(Violation::Cycle {
            nodes: blocked.iter().collect(),
        });
    }

    for m in instance.catalog.models() {
        if !(m.tokens_per_second > 0.0) || !m.tokens_per_second.is_finite() {
            out.push(Violation::NonPositiveThroughput { model: m.id.clone() });
        }
        if !(m.price_per_1k_tokens_usd >= 0.0) {
            out.push(Violation::NegativePrice { model: m.id.clone() });
        }
    }

    let model_id = |m: usize| instance.catalog.get(m).id.clone();
    match &instance.stats {
        Statistics::Parametric(table) => {
            for v in 0..n {
                for m in 0..instance.catalog.len() {
                    let Some(p) = table.get(v, m) else {
                        out.push(Violation::MissingProfile {
                            node: v,
                            model: model_id(m),
                        });
                        continue;
                    };
                    if !(0.0..=1.0).contains(&p.p) {
                        out.push(Violation::ProbabilityOutOfRange {
                            node: v,
                            model: model_id(m),
                            p: p.p,
                        });
                    }
                    if !(p.mean_tokens > 0.0) {
                        out.push(Violation::NonPositiveTokens {
                            node: v,
                            model: model_id(m),
                        });
                    }
                    if p.latency <= 0 {
                        out.push(Violation::NonPositiveLatency {
                            node: v,
                            model: model_id(m),
                        });
                    }
                    if p.cost < 0 {
                        out.push(Violation::NegativeCost {
                            node: v,
                            model: model_id(m),
                        });
                    }
                }
            }
        }
        Statistics::Empirical { pools, .. } => {
            for v in 0..n {
                for m in 0..instance.catalog.len() {
                    let pool = pools.get(v, m);
                    if pool.is_empty() {
                        out.push(Violation::EmptyPool {
                            node: v,
                            model: model_id(m),
                        });
                    }
                    if pool.records().iter().any(|r| r.tokens == 0) {
                        out.push(Violation::NonPositiveTokens {
                            node: v,
                            model: model_id(m),
                        });
                    }
                    if pool.records().iter().any(|r| !(r.latency_s > 0.0)) {
                        out.push(Violation::NonPositiveLatency {
                            node: v,
                            model: model_id(m),
                        });
                    }
                }
            }
        }
    }

    if instance.budget < 0 {
        out.push(Violation::NegativeBudget);
    }
    if instance.deadline < 0 {
        out.push(Violation::NegativeDeadline);
    }
    out
}
