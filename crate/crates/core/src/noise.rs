//! Gaussian perturbation of the pools the planner simulates from.
//!
//! Token lengths are perturbed per sample in space normalized by the pool's
//! longest sample; success rates are perturbed once per pool and realized by
//! flipping as few labels as possible. Inputs are never modified, so
//! execution can keep drawing from the clean pools.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PoolRecord, PoolTable, RolloutPool};
use crate::rng::{domain, SimRng, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    TokenLength,
    SuccessRate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    /// Clip margin: normalized values stay in `[eps, 1 − eps]`.
    pub eps: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            kind,
            sigma,
            eps: 1e-3,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Input(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Input(format!("eps {} outside (0, 0.5)", self.eps)));
        }
        Ok(())
    }

    /// Stream for the pool of `(node, model)`.
    pub fn stream(&self, node: usize, model: usize) -> StreamKey {
        StreamKey::root(self.seed)
            .child(domain::NOISE)
            .child(node as u64)
            .child(model as u64)
    }
}

/// What token-length noise did to one pool.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenPerturbation {
    pub c_max: u32,
    /// The standard normal draw of each record, in record order.
    pub z: Vec<f64>,
}

/// What success-rate noise did to one pool.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuccessPerturbation {
    pub p: f64,
    pub p_tilde: f64,
    /// `round(p̃ · n)`.
    pub target: usize,
    /// Indices of the records whose label changed, ascending.
    pub flipped: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Perturbation {
    Tokens(TokenPerturbation),
    Success(SuccessPerturbation),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoolNoise {
    pub node: usize,
    pub model: usize,
    pub detail: Perturbation,
}

fn gaussian(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

/// `c̃_i = c_max · clip(c_i / c_max + σ z_i, ε, 1 − ε)`, rounded to a
/// positive integer.
pub fn perturb_pool_tokens(
    pool: &RolloutPool,
    sigma: f64,
    eps: f64,
    rng: &mut SimRng,
) -> (RolloutPool, TokenPerturbation) {
    let c_max = pool.records().iter().map(|r| r.tokens).max().unwrap_or(0);
    let mut z = Vec::with_capacity(pool.len());
    let records = pool
        .records()
        .iter()
        .map(|r| {
            let zi = gaussian(rng);
            z.push(zi);
            let x = (r.tokens as f64 / c_max as f64 + sigma * zi).clamp(eps, 1.0 - eps);
            PoolRecord {
                tokens: ((c_max as f64 * x).round() as u32).max(1),
                ..*r
            }
        })
        .collect();
    (RolloutPool::new(records), TokenPerturbation { c_max, z })
}

/// Flips the fewest labels that bring the success count to
/// `round(p_tilde · n)`, choosing uniformly among records of the needed
/// polarity.
pub fn apply_success_target(pool: &RolloutPool, p_tilde: f64, rng: &mut SimRng) -> (RolloutPool, SuccessPerturbation) {
    let n = pool.len();
    let current = pool.successes();
    let target = ((p_tilde * n as f64).round() as usize).min(n);
    // raise: flip failures; lower: flip successes
    let polarity = target < current;
    let mut eligible: Vec<usize> = (0..n).filter(|&i| pool.records()[i].success == polarity).collect();
    let need = target.abs_diff(current);
    // partial Fisher-Yates: the first `need` slots are a uniform sample
    for i in 0..need {
        let j = i + rng.below(eligible.len() - i);
        eligible.swap(i, j);
    }
    let mut flipped = eligible[..need].to_vec();
    flipped.sort_unstable();

    let mut records = pool.records().to_vec();
    for &i in &flipped {
        records[i].success = !records[i].success;
    }
    let p = if n == 0 { 0.0 } else { current as f64 / n as f64 };
    (
        RolloutPool::new(records),
        SuccessPerturbation {
            p,
            p_tilde,
            target,
            flipped,
        },
    )
}

/// `p̃ = clip(p + σ z, ε, 1 − ε)` with one `z` for the pool, then
/// [`apply_success_target`].
pub fn perturb_pool_success(
    pool: &RolloutPool,
    sigma: f64,
    eps: f64,
    rng: &mut SimRng,
) -> (RolloutPool, SuccessPerturbation) {
    let p = if pool.is_empty() {
        0.0
    } else {
        pool.successes() as f64 / pool.len() as f64
    };
    let p_tilde = (p + sigma * gaussian(rng)).clamp(eps, 1.0 - eps);
    apply_success_target(pool, p_tilde, rng)
}

/// Perturbs every pool with its own stream; returns the new table and a
/// per-pool report in `(node, model)` order.
pub fn perturb(pools: &PoolTable, spec: &NoiseSpec) -> Result<(PoolTable, Vec<PoolNoise>)> {
    spec.check()?;
    if let Some((v, m, _)) = pools.iter().find(|(_, _, p)| p.is_empty()) {
        return Err(Error::Input(format!("empty pool for node {v}, model {m}")));
    }
    let mut report = Vec::new();
    let out = pools.map(|node, model, pool| {
        let mut rng = spec.stream(node, model).rng();
        let (new, detail) = match spec.kind {
            NoiseKind::TokenLength => {
                let (p, d) = perturb_pool_tokens(pool, spec.sigma, spec.eps, &mut rng);
                (p, Perturbation::Tokens(d))
            }
            NoiseKind::SuccessRate => {
                let (p, d) = perturb_pool_success(pool, spec.sigma, spec.eps, &mut rng);
                (p, Perturbation::Success(d))
            }
        };
        report.push(PoolNoise { node, model, detail });
        new
    });
    Ok((out, report))
}

pub fn perturb_token_lengths(pools: &PoolTable, spec: &NoiseSpec) -> Result<(PoolTable, Vec<PoolNoise>)> {
    if spec.kind != NoiseKind::TokenLength {
        return Err(Error::Contract(
            "token-length perturbation needs a token_length spec".into(),
        ));
    }
    perturb(pools, spec)
}

pub fn perturb_success_rate(pools: &PoolTable, spec: &NoiseSpec) -> Result<(PoolTable, Vec<PoolNoise>)> {
    if spec.kind != NoiseKind::SuccessRate {
        return Err(Error::Contract(
            "success-rate perturbation needs a success_rate spec".into(),
        ));
    }
    perturb(pools, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(labels: &[bool], tokens: &[u32]) -> RolloutPool {
        RolloutPool::new(
            labels
                .iter()
                .zip(tokens)
                .map(|(&success, &tokens)| PoolRecord {
                    success,
                    tokens,
                    latency_s: tokens as f64 / 10.0,
                })
                .collect(),
        )
    }

    #[test]
    fn zero_sigma_tokens_moves_only_the_maximum() {
        let p = pool(&[true, false, true], &[100, 500, 1000]);
        let (out, d) = perturb_pool_tokens(&p, 0.0, 1e-3, &mut StreamKey::root(0).rng());
        assert_eq!(d.c_max, 1000);
        let tokens: Vec<u32> = out.records().iter().map(|r| r.tokens).collect();
        assert_eq!(tokens, vec![100, 500, 999]);
        assert_eq!(out.records()[1].latency_s, 50.0);
        assert_eq!(out.successes(), 2);
    }

    #[test]
    fn upper_clip() {
        // 0.9 + 0.3 clips to 0.999
        let x = (900.0f64 / 1000.0 + 0.3).clamp(1e-3, 1.0 - 1e-3);
        assert_eq!((1000.0 * x).round(), 999.0);
    }

    #[test]
    fn success_target_flips_minimum() {
        let p = pool(&[true, true, true, true, false, false, false, false], &[1; 8]);
        let (out, d) = apply_success_target(&p, 0.75, &mut StreamKey::root(3).rng());
        assert_eq!(d.target, 6);
        assert_eq!(d.flipped.len(), 2);
        assert!(d.flipped.iter().all(|&i| i >= 4));
        assert_eq!(out.successes(), 6);

        let (same, d) = apply_success_target(&p, 0.5, &mut StreamKey::root(3).rng());
        assert!(d.flipped.is_empty());
        assert_eq!(same, p);

        let (down, d) = apply_success_target(&p, 0.1, &mut StreamKey::root(3).rng());
        assert_eq!((d.target, d.flipped.len(), down.successes()), (1, 3, 1));
    }

    #[test]
    fn table_perturbation_is_seeded_and_leaves_input_alone() {
        let mut t = PoolTable::new(2, 1);
        t.set(0, 0, pool(&[true, false, false, true], &[10, 20, 30, 40]));
        t.set(1, 0, pool(&[false; 4], &[5, 6, 7, 8]));
        let before = t.clone();
        let spec = NoiseSpec::new(NoiseKind::SuccessRate, 0.3, 11);
        let a = perturb_success_rate(&t, &spec).unwrap();
        let b = perturb_success_rate(&t, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(t, before);
        assert_eq!(a.1.len(), 2);
        assert!(perturb_token_lengths(&t, &spec).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        let t = PoolTable::new(1, 1);
        let spec = NoiseSpec::new(NoiseKind::TokenLength, 0.1, 0);
        assert!(perturb(&t, &spec).is_err());
        let mut ok = PoolTable::new(1, 1);
        ok.set(0, 0, pool(&[true], &[3]));
        assert!(perturb(&ok, &NoiseSpec { eps: 0.5, ..spec }).is_err());
        assert!(perturb(&ok, &NoiseSpec { sigma: -1.0, ..spec }).is_err());
    }
}
