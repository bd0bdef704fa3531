//! The workflow execution instance `(G, M, Φ, B, D)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::WorkflowGraph;
use crate::model::{derive_profile, ModelCatalog, PoolTable, Profile, ProfileTable, RolloutPool};
use crate::units::{MicroUsd, Millis};

/// How the success/length statistics are represented.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Parametric,
    Empirical,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Parametric => "parametric",
            Mode::Empirical => "empirical",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statistics {
    Parametric(ProfileTable),
    /// Pools plus the profiles derived from them, used for feasibility
    /// estimates.
    Empirical {
        pools: PoolTable,
        estimates: ProfileTable,
    },
}

/// Duration of launching `k` parallel samples, given single-attempt latency.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum BatchLatency {
    /// Width-independent: all samples run fully in parallel.
    #[default]
    Ideal,
    /// `τ · (1 + slope · (k − 1))`.
    Linear { slope: f64 },
}

impl BatchLatency {
    #[inline]
    pub fn apply(self, latency: Millis, width: u32) -> Millis {
        match self {
            BatchLatency::Ideal => latency,
            BatchLatency::Linear { slope } => {
                ((latency as f64) * (1.0 + slope * (width.saturating_sub(1)) as f64)).round() as Millis
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkflowInstance {
    pub graph: WorkflowGraph,
    pub catalog: ModelCatalog,
    pub stats: Statistics,
    pub budget: MicroUsd,
    pub deadline: Millis,
    pub batch_latency: BatchLatency,
}

impl WorkflowInstance {
    pub fn parametric(graph: WorkflowGraph, catalog: ModelCatalog, profiles: ProfileTable) -> Self {
        WorkflowInstance {
            graph,
            catalog,
            stats: Statistics::Parametric(profiles),
            budget: 0,
            deadline: 0,
            batch_latency: BatchLatency::Ideal,
        }
    }

    /// Fails if any pool is empty, since estimates cannot be derived.
    pub fn empirical(graph: WorkflowGraph, catalog: ModelCatalog, pools: PoolTable) -> Result<Self> {
        let estimates = derive_profile(&pools, &catalog)?;
        Ok(WorkflowInstance {
            graph,
            catalog,
            stats: Statistics::Empirical { pools, estimates },
            budget: 0,
            deadline: 0,
            batch_latency: BatchLatency::Ideal,
        })
    }

    pub fn with_constraints(mut self, budget: MicroUsd, deadline: Millis) -> Self {
        self.budget = budget;
        self.deadline = deadline;
        self
    }

    pub fn with_batch_latency(mut self, batch_latency: BatchLatency) -> Self {
        self.batch_latency = batch_latency;
        self
    }

    /// Same workflow with different pools, as seen by a planner whose
    /// estimates differ from the execution environment.
    pub fn with_pools(&self, pools: PoolTable) -> Result<Self> {
        let mut out = WorkflowInstance::empirical(self.graph.clone(), self.catalog.clone(), pools)?;
        out.budget = self.budget;
        out.deadline = self.deadline;
        out.batch_latency = self.batch_latency;
        Ok(out)
    }

    pub fn mode(&self) -> Mode {
        match self.stats {
            Statistics::Parametric(_) => Mode::Parametric,
            Statistics::Empirical { .. } => Mode::Empirical,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.graph.len()
    }

    pub fn n_models(&self) -> usize {
        self.catalog.len()
    }

    /// Parametric profiles, or pool-derived estimates in empirical mode.
    pub fn profiles(&self) -> &ProfileTable {
        match &self.stats {
            Statistics::Parametric(t) => t,
            Statistics::Empirical { estimates, .. } => estimates,
        }
    }

    pub fn pools(&self) -> Option<&PoolTable> {
        match &self.stats {
            Statistics::Parametric(_) => None,
            Statistics::Empirical { pools, .. } => Some(pools),
        }
    }

    #[inline]
    pub fn profile(&self, node: usize, model: usize) -> Result<&Profile> {
        self.profiles()
            .get(node, model)
            .ok_or(Error::MissingProfile { node, model })
    }

    #[inline]
    pub(crate) fn pool(&self, node: usize, model: usize) -> Option<&RolloutPool> {
        self.pools().map(|t| t.get(node, model))
    }
}
