//! Seeded synthetic workflows standing in for recorded benchmark pools.
//!
//! Models form a price ladder: each step up costs more per token and runs
//! slower, but succeeds more often. Node difficulty shifts every model's
//! success rate, and weak models fall off much faster on hard nodes, so the
//! most cost-effective model differs across subtasks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{WorkflowGraph, MAX_NODES};
use crate::instance::{Mode, WorkflowInstance};
use crate::model::{ModelCatalog, ModelSpec, PoolRecord, PoolTable, Profile, ProfileTable, RolloutPool};
use crate::rng::{domain, SimRng, StreamKey};
use crate::validate::validate;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Chain,
    /// Repeated fork/join: `0 → {1, 2} → 3 → {4, 5} → 6 …`.
    DiamondStack,
    /// Each forward pair `(i, j)`, `i < j`, is an edge with probability
    /// `p_edge`.
    Random {
        p_edge: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub shape: Shape,
    pub models: usize,
    pub mode: Mode,
    /// Records per `(node, model)` pool in empirical mode.
    pub pool_size: usize,
    /// Single-attempt success range; the logistic skill/difficulty score is
    /// mapped linearly onto it.
    pub p_range: (f64, f64),
    pub tokens_range: (f64, f64),
    /// USD per 1000 output tokens, cheapest to dearest model.
    pub price_range: (f64, f64),
    /// Tokens per second, fastest to slowest model.
    pub throughput_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            nodes: 12,
            shape: Shape::Chain,
            models: 3,
            mode: Mode::Empirical,
            pool_size: 512,
            p_range: (0.0, 0.95),
            tokens_range: (400.0, 2400.0),
            price_range: (0.0005, 0.005),
            throughput_range: (120.0, 30.0),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Input(msg));
        if self.nodes == 0 || self.nodes > MAX_NODES {
            return bad(format!("node count {} outside 1..={MAX_NODES}", self.nodes));
        }
        if self.models == 0 {
            return bad("at least one model is required".into());
        }
        if self.mode == Mode::Empirical && self.pool_size == 0 {
            return bad("pool size must be positive in empirical mode".into());
        }
        let (p0, p1) = self.p_range;
        if !(0.0..=1.0).contains(&p0) || !(0.0..=1.0).contains(&p1) || p0 > p1 {
            return bad(format!("bad success range {:?}", self.p_range));
        }
        let (l0, l1) = self.tokens_range;
        if !(l0 >= 1.0 && l1 >= l0) {
            return bad(format!("bad token range {:?}", self.tokens_range));
        }
        if !(self.price_range.0 >= 0.0 && self.price_range.1 >= 0.0) {
            return bad(format!("bad price range {:?}", self.price_range));
        }
        if !(self.throughput_range.0 > 0.0 && self.throughput_range.1 > 0.0) {
            return bad(format!("bad throughput range {:?}", self.throughput_range));
        }
        if let Shape::Random { p_edge } = self.shape {
            if !(0.0..=1.0).contains(&p_edge) {
                return bad(format!("edge probability {p_edge} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

fn edges(shape: Shape, n: usize, rng: &mut SimRng) -> Vec<(usize, usize)> {
    match shape {
        Shape::Chain => (1..n).map(|v| (v - 1, v)).collect(),
        Shape::DiamondStack => {
            let mut e = Vec::new();
            for v in 1..n {
                match v % 3 {
                    1 | 2 => e.push((v - v % 3, v)),
                    _ => {
                        e.push((v - 2, v));
                        e.push((v - 1, v));
                    }
                }
            }
            e
        }
        Shape::Random { p_edge } => {
            let mut e = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if rng.next_f64() < p_edge {
                        e.push((i, j));
                    }
                }
            }
            e
        }
    }
}

fn lerp((a, b): (f64, f64), t: f64) -> f64 {
    a + (b - a) * t
}

/// Log-spaced interpolation, for prices spanning orders of magnitude.
fn geo((a, b): (f64, f64), t: f64) -> f64 {
    if a > 0.0 && b > 0.0 {
        a * (b / a).powf(t)
    } else {
        lerp((a, b), t)
    }
}

fn build(spec: &SyntheticSpec, stream: StreamKey) -> Result<WorkflowInstance> {
    let mut rng = stream.rng();
    let n = spec.nodes;
    let graph = WorkflowGraph::new(n, edges(spec.shape, n, &mut rng));

    let tier = |m: usize| {
        if spec.models == 1 {
            1.0
        } else {
            m as f64 / (spec.models - 1) as f64
        }
    };
    let catalog = ModelCatalog::new(
        (0..spec.models)
            .map(|m| {
                ModelSpec::new(
                    format!("m{m}"),
                    geo(spec.price_range, tier(m)),
                    lerp(spec.throughput_range, tier(m)),
                )
            })
            .collect(),
    );

    // skills spread over (0, 1); success is a logistic in skill − difficulty,
    // so weak models collapse on hard nodes while strong ones degrade slowly
    let skill = |m: usize| (m + 1) as f64 / (spec.models + 1) as f64;
    let mut stats = Vec::with_capacity(n * spec.models);
    for _ in 0..n {
        let difficulty: f64 = rng.random();
        for m in 0..spec.models {
            let logit = 6.0 * (skill(m) - difficulty) + (rng.random::<f64>() - 0.5);
            let p = lerp(spec.p_range, 1.0 / (1.0 + (-logit).exp()));
            let tokens = lerp(spec.tokens_range, rng.random());
            stats.push((p, tokens));
        }
    }

    match spec.mode {
        Mode::Parametric => {
            let mut t = ProfileTable::new(n, spec.models);
            for (i, &(p, tokens)) in stats.iter().enumerate() {
                let (v, m) = (i / spec.models, i % spec.models);
                t.set(v, m, Profile::from_tokens(p, tokens.round(), catalog.get(m)));
            }
            Ok(WorkflowInstance::parametric(graph, catalog, t))
        }
        Mode::Empirical => {
            let mut pools = PoolTable::new(n, spec.models);
            for (i, &(p, tokens)) in stats.iter().enumerate() {
                let (v, m) = (i / spec.models, i % spec.models);
                pools.set(
                    v,
                    m,
                    synthesize_pool(p, tokens, catalog.get(m), spec.pool_size, &mut rng),
                );
            }
            WorkflowInstance::empirical(graph, catalog, pools)
        }
    }
}

/// `n` records with Bernoulli(`p`) success and token counts spread ±25%
/// around `mean_tokens`; latency is tokens over the model's throughput.
pub fn synthesize_pool<R: Rng>(p: f64, mean_tokens: f64, model: &ModelSpec, n: usize, rng: &mut R) -> RolloutPool {
    let spread = Normal::new(mean_tokens, 0.25 * mean_tokens).expect("finite token spread");
    RolloutPool::new(
        (0..n)
            .map(|_| {
                let success = rng.random::<f64>() < p;
                let tokens = spread.sample(rng).round().clamp(1.0, u32::MAX as f64) as u32;
                PoolRecord {
                    success,
                    tokens,
                    latency_s: tokens as f64 / model.tokens_per_second,
                }
            })
            .collect(),
    )
}

const MAX_ATTEMPTS: u64 = 8;

/// Deterministic in `spec`. Budget and deadline are left at zero.
pub fn generate_instance(spec: &SyntheticSpec) -> Result<WorkflowInstance> {
    spec.check()?;
    let root = StreamKey::root(spec.seed).child(domain::SYNTHETIC);
    let mut last = Vec::new();
    for attempt in 0..MAX_ATTEMPTS {
        let inst = build(spec, root.child(attempt))?;
        last = validate(&inst);
        if last.is_empty() {
            return Ok(inst);
        }
    }
    Err(Error::Invalid(last))
}
