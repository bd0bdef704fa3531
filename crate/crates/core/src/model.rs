//! Model catalog, per-(subtask, model) profiles and rollout pools.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{secs_to_millis, token_cost, MicroUsd, Millis};

/// One base model with its output-token price and generation throughput.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub price_per_1k_tokens_usd: f64,
    pub tokens_per_second: f64,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, price_per_1k_tokens_usd: f64, tokens_per_second: f64) -> Self {
        ModelSpec {
            id: id.into(),
            price_per_1k_tokens_usd,
            tokens_per_second,
        }
    }

    /// Cost of generating `tokens` output tokens.
    pub fn cost_of(&self, tokens: f64) -> MicroUsd {
        token_cost(tokens, self.price_per_1k_tokens_usd)
    }

    /// Wall-clock time to generate `tokens` output tokens, at least 1 ms.
    pub fn latency_of(&self, tokens: f64) -> Millis {
        secs_to_millis(tokens / self.tokens_per_second).max(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelCatalog {
    models: Vec<ModelSpec>,
}

impl ModelCatalog {
    pub fn new(models: Vec<ModelSpec>) -> Self {
        ModelCatalog { models }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, m: usize) -> &ModelSpec {
        &self.models[m]
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.id == id)
    }
}

/// Success and length statistics of one (subtask, model) pair, with the
/// per-attempt cost and latency they imply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Profile {
    /// Single-attempt success probability.
    pub p: f64,
    /// Expected output tokens per attempt.
    pub mean_tokens: f64,
    pub cost: MicroUsd,
    pub latency: Millis,
}

impl Profile {
    /// Derives cost and latency from the model's price and throughput.
    pub fn from_tokens(p: f64, mean_tokens: f64, model: &ModelSpec) -> Self {
        Profile {
            p,
            mean_tokens,
            cost: model.cost_of(mean_tokens),
            latency: model.latency_of(mean_tokens),
        }
    }

    /// A profile with directly specified integer cost and latency.
    pub fn from_raw(p: f64, cost: MicroUsd, latency: Millis) -> Self {
        Profile {
            p,
            mean_tokens: 1.0,
            cost,
            latency,
        }
    }
}

/// Dense `(node, model)` table; a `None` entry is a missing profile.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    n_models: usize,
    entries: Vec<Option<Profile>>,
}

impl ProfileTable {
    pub fn new(n_nodes: usize, n_models: usize) -> Self {
        ProfileTable {
            n_models,
            entries: vec![None; n_nodes * n_models],
        }
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_nodes(&self) -> usize {
        self.entries.len().checked_div(self.n_models).unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, node: usize, model: usize) -> Option<&Profile> {
        if model >= self.n_models {
            return None;
        }
        self.entries.get(node * self.n_models + model)?.as_ref()
    }

    pub fn set(&mut self, node: usize, model: usize, profile: Profile) {
        self.entries[node * self.n_models + model] = Some(profile);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Option<&Profile>)> + '_ {
        let m = self.n_models;
        self.entries
            .iter()
            .enumerate()
            .map(move |(i, p)| (i / m, i % m, p.as_ref()))
    }
}

/// One recorded attempt of a subtask with a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolRecord {
    pub success: bool,
    pub tokens: u32,
    pub latency_s: f64,
}

/// Empirical attempts for one (subtask, model) pair. Simulation resamples
/// records with replacement.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutPool {
    records: Vec<PoolRecord>,
    latency_ms: Vec<Millis>,
}

impl RolloutPool {
    pub fn new(records: Vec<PoolRecord>) -> Self {
        let latency_ms = records.iter().map(|r| secs_to_millis(r.latency_s).max(1)).collect();
        RolloutPool { records, latency_ms }
    }

    pub fn records(&self) -> &[PoolRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    #[inline]
    pub(crate) fn draw(&self, idx: usize) -> (bool, u32, Millis) {
        let r = &self.records[idx];
        (r.success, r.tokens, self.latency_ms[idx])
    }

    /// Raw success fraction and mean token count, no smoothing.
    pub fn derive(&self, model: &ModelSpec) -> Result<Profile> {
        if self.records.is_empty() {
            return Err(Error::Input("cannot derive a profile from an empty pool".into()));
        }
        let n = self.records.len() as f64;
        let p = self.successes() as f64 / n;
        let mean_tokens = self.records.iter().map(|r| r.tokens as f64).sum::<f64>() / n;
        Ok(Profile::from_tokens(p, mean_tokens, model))
    }
}

/// Dense `(node, model)` table of pools; an empty pool means no data.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolTable {
    n_models: usize,
    pools: Vec<RolloutPool>,
}

impl PoolTable {
    pub fn new(n_nodes: usize, n_models: usize) -> Self {
        PoolTable {
            n_models,
            pools: vec![RolloutPool::default(); n_nodes * n_models],
        }
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn n_nodes(&self) -> usize {
        self.pools.len().checked_div(self.n_models).unwrap_or(0)
    }

    #[inline]
    pub fn get(&self, node: usize, model: usize) -> &RolloutPool {
        &self.pools[node * self.n_models + model]
    }

    pub fn set(&mut self, node: usize, model: usize, pool: RolloutPool) {
        self.pools[node * self.n_models + model] = pool;
    }

    pub fn push(&mut self, node: usize, model: usize, record: PoolRecord) {
        let pool = &mut self.pools[node * self.n_models + model];
        let mut records = std::mem::take(&mut pool.records);
        records.push(record);
        *pool = RolloutPool::new(records);
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &RolloutPool)> + '_ {
        let m = self.n_models;
        self.pools.iter().enumerate().map(move |(i, p)| (i / m, i % m, p))
    }

    /// Applies `f` to every pool, producing a new table.
    pub fn map<F>(&self, mut f: F) -> PoolTable
    where
        F: FnMut(usize, usize, &RolloutPool) -> RolloutPool,
    {
        let pools = self.iter().map(|(v, m, p)| f(v, m, p)).collect();
        PoolTable {
            n_models: self.n_models,
            pools,
        }
    }
}

/// Derives the parametric profile of every pair from its pool.
pub fn derive_profile(pools: &PoolTable, catalog: &ModelCatalog) -> Result<ProfileTable> {
    let mut table = ProfileTable::new(pools.n_nodes(), pools.n_models());
    for (v, m, pool) in pools.iter() {
        if pool.is_empty() {
            return Err(Error::Input(format!(
                "empty pool for node {v}, model {}",
                catalog.get(m).id
            )));
        }
        table.set(v, m, pool.derive(catalog.get(m))?);
    }
    Ok(table)
}
