//! Seeded random instances for property tests and benchmarks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::cmp::{PolicyParams, TabularCmp};

fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // squared uniforms give uneven but strictly positive rows
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(2) + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Dense random CMP with discount drawn from `[0.5, 0.95]`.
pub fn random_cmp<R: Rng>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularCmp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(random_distribution(rng, n_states));
    }
    let init = random_distribution(rng, n_states);
    let gamma = rng.random_range(0.5..0.95);
    TabularCmp::new(n_states, n_actions, transition, init, gamma)
        .expect("random rows are normalized")
}

/// Free logits drawn from `Normal(0, scale²)`.
pub fn random_params<R: Rng>(rng: &mut R, cmp: &TabularCmp, scale: f64) -> PolicyParams {
    let mut params = PolicyParams::uniform(cmp);
    if scale > 0.0 {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        for v in params.free_mut() {
            *v = normal.sample(rng);
        }
    }
    params
}
