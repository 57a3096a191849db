//! Seeded samplers for discounted occupancies and fixed-horizon rollouts.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmp::{policy_probs, PolicyParams, TabularCmp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// One accepted pair per geometric restart, distributed as `d_sa`.
    Discounted,
    /// Every pair of `n_traj` rollouts of `horizon` steps.
    FixedHorizon { horizon: usize, n_traj: usize },
}

/// State-action pairs drawn under one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub pairs: Vec<(usize, usize)>,
    pub source: String,
    pub seed: u64,
    pub mode: SamplingMode,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// Visit counts per state-action pair, row-major `|S| × |A|`.
    pub fn counts(&self, n_states: usize, n_actions: usize) -> Vec<usize> {
        let mut counts = vec![0; n_states * n_actions];
        for &(s, a) in &self.pairs {
            counts[s * n_actions + a] += 1;
        }
        counts
    }

    /// Empirical state-action distribution.
    pub fn empirical(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        let n = self.pairs.len() as f64;
        self.counts(n_states, n_actions)
            .into_iter()
            .map(|c| c as f64 / n)
            .collect()
    }

    pub fn check_bounds(&self, cmp: &TabularCmp) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Validation("sample batch is empty".into()));
        }
        if let Some(&(s, a)) = self
            .pairs
            .iter()
            .find(|(s, a)| *s >= cmp.n_states() || *a >= cmp.n_actions())
        {
            return Err(Error::Dimension(format!("sampled pair ({s}, {a}) is out of range")));
        }
        Ok(())
    }
}

/// Categorical tables for rolling out one policy.
struct Roller<'a> {
    cmp: &'a TabularCmp,
    init: WeightedIndex<f64>,
    actions: Vec<WeightedIndex<f64>>,
    next: Vec<WeightedIndex<f64>>,
}

impl<'a> Roller<'a> {
    fn new(cmp: &'a TabularCmp, probs: &[f64]) -> Result<Self> {
        let weighted = |w: &[f64]| {
            WeightedIndex::new(w.iter().copied())
                .map_err(|e| Error::Validation(format!("cannot sample from {w:?}: {e}")))
        };
        let init = weighted(cmp.init_dist())?;
        let actions = probs
            .chunks(cmp.n_actions())
            .map(weighted)
            .collect::<Result<Vec<_>>>()?;
        let mut next = Vec::with_capacity(cmp.n_pairs());
        for s in 0..cmp.n_states() {
            for a in 0..cmp.n_actions() {
                next.push(weighted(cmp.next_dist(s, a))?);
            }
        }
        Ok(Self {
            cmp,
            init,
            actions,
            next,
        })
    }

    fn start<R: Rng>(&self, rng: &mut R) -> usize {
        self.init.sample(rng)
    }

    fn act<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        self.actions[s].sample(rng)
    }

    fn step<R: Rng>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        self.next[s * self.cmp.n_actions() + a].sample(rng)
    }
}

pub fn sample_discounted(
    cmp: &TabularCmp,
    params: &PolicyParams,
    seed: u64,
    n: usize,
) -> Result<SampleBatch> {
    let probs = policy_probs(cmp, params)?;
    sample_discounted_probs(cmp, &probs, seed, n)
}

/// Draws `n` i.i.d. pairs from the discounted occupancy of a policy table.
///
/// Each draw restarts from `μ`; at every step the rollout continues with
/// probability `γ` and otherwise stops, returning its current pair.
pub fn sample_discounted_probs(
    cmp: &TabularCmp,
    probs: &[f64],
    seed: u64,
    n: usize,
) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::Config("sample size must be positive".into()));
    }
    let roller = Roller::new(cmp, probs)?;
    let gamma = cmp.discount();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut s = roller.start(&mut rng);
        loop {
            let a = roller.act(s, &mut rng);
            if rng.random::<f64>() >= gamma {
                pairs.push((s, a));
                break;
            }
            s = roller.step(s, a, &mut rng);
        }
    }
    Ok(SampleBatch {
        pairs,
        source: String::new(),
        seed,
        mode: SamplingMode::Discounted,
    })
}

pub fn sample_trajectories(
    cmp: &TabularCmp,
    params: &PolicyParams,
    seed: u64,
    n_traj: usize,
    horizon: usize,
) -> Result<SampleBatch> {
    let probs = policy_probs(cmp, params)?;
    sample_trajectories_probs(cmp, &probs, seed, n_traj, horizon)
}

/// Rolls out `n_traj` trajectories of `horizon` steps from `μ` and returns
/// every visited pair in rollout order.
pub fn sample_trajectories_probs(
    cmp: &TabularCmp,
    probs: &[f64],
    seed: u64,
    n_traj: usize,
    horizon: usize,
) -> Result<SampleBatch> {
    if n_traj == 0 || horizon == 0 {
        return Err(Error::Config(
            "trajectory count and horizon must be positive".into(),
        ));
    }
    let roller = Roller::new(cmp, probs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_traj * horizon);
    for _ in 0..n_traj {
        let mut s = roller.start(&mut rng);
        for t in 0..horizon {
            let a = roller.act(s, &mut rng);
            pairs.push((s, a));
            if t + 1 < horizon {
                s = roller.step(s, a, &mut rng);
            }
        }
    }
    Ok(SampleBatch {
        pairs,
        source: String::new(),
        seed,
        mode: SamplingMode::FixedHorizon { horizon, n_traj },
    })
}

/// Total-variation distance between two distributions.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::occupancy;

    fn chain(gamma: f64) -> TabularCmp {
        TabularCmp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], gamma).unwrap()
    }

    #[test]
    fn single_pair_cmp_always_samples_origin() {
        let cmp = TabularCmp::new(1, 1, vec![1.0], vec![1.0], 0.7).unwrap();
        let batch = sample_discounted(&cmp, &PolicyParams::uniform(&cmp), 3, 500).unwrap();
        assert!(batch.pairs.iter().all(|p| *p == (0, 0)));
    }

    #[test]
    fn discounted_sampler_is_deterministic() {
        let cmp = chain(0.9);
        let params = PolicyParams::uniform(&cmp);
        let a = sample_discounted(&cmp, &params, 42, 1000).unwrap();
        let b = sample_discounted(&cmp, &params, 42, 1000).unwrap();
        assert_eq!(a, b);
        let c = sample_discounted(&cmp, &params, 43, 1000).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn discounted_sampler_matches_exact_occupancy() {
        let cmp = chain(0.9);
        let params = PolicyParams::uniform(&cmp);
        let exact = occupancy(&cmp, &params).unwrap();
        let batch = sample_discounted(&cmp, &params, 7, 200_000).unwrap();
        let tv = total_variation(&batch.empirical(2, 1), &exact.d_sa);
        assert!(tv <= 0.01, "tv = {tv}");
    }

    #[test]
    fn horizon_one_draws_initial_states() {
        let cmp = TabularCmp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![0.25, 0.75], 0.9).unwrap();
        let batch = sample_trajectories(&cmp, &PolicyParams::uniform(&cmp), 1, 40_000, 1).unwrap();
        let emp = batch.empirical(2, 1);
        assert!((emp[0] - 0.25).abs() < 0.01);
    }

    #[test]
    fn absorbing_rollouts_stay_in_absorbing_state() {
        let cmp = chain(0.9);
        let batch = sample_trajectories(&cmp, &PolicyParams::uniform(&cmp), 5, 30, 20).unwrap();
        assert_eq!(batch.len(), 600);
        for traj in batch.pairs.chunks(20) {
            assert_eq!(traj[0], (0, 0));
            assert!(traj[1..].iter().all(|p| *p == (1, 0)));
        }
        let again = sample_trajectories(&cmp, &PolicyParams::uniform(&cmp), 5, 30, 20).unwrap();
        assert_eq!(batch, again);
    }

    #[test]
    fn zero_sizes_are_rejected() {
        let cmp = chain(0.5);
        let params = PolicyParams::uniform(&cmp);
        assert!(sample_discounted(&cmp, &params, 0, 0).is_err());
        assert!(sample_trajectories(&cmp, &params, 0, 0, 5).is_err());
        assert!(sample_trajectories(&cmp, &params, 0, 5, 0).is_err());
    }
}
