//! Reward-based consumers of a policy cover.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cmp::{occupancy, renyi2, renyi2_dist, Occupancy, PolicyParams, TabularCmp};
use crate::error::{Error, Result};
use crate::game::CoverSet;
use crate::grad::PolicyDerivatives;
use crate::sampling::{sample_discounted, SampleBatch};

/// Bounded reward table `R[s][a]` with `|R| ≤ rmax`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardFn {
    pub n_states: usize,
    pub n_actions: usize,
    pub table: Vec<f64>,
    pub rmax: f64,
}

impl RewardFn {
    pub fn new(n_states: usize, n_actions: usize, table: Vec<f64>, rmax: f64) -> Result<Self> {
        if table.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "reward table has {} entries, expected {}",
                table.len(),
                n_states * n_actions
            )));
        }
        if !(rmax > 0.0) || !rmax.is_finite() {
            return Err(Error::Validation(format!("rmax must be positive, got {rmax}")));
        }
        if let Some((i, r)) = table.iter().enumerate().find(|(_, r)| !(r.abs() <= rmax)) {
            return Err(Error::Validation(format!(
                "reward {r} at ({}, {}) exceeds rmax {rmax}",
                i / n_actions,
                i % n_actions
            )));
        }
        Ok(Self {
            n_states,
            n_actions,
            table,
            rmax,
        })
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.n_actions + a]
    }
}

/// Checks that a reward table matches the CMP.
fn check_reward(cmp: &TabularCmp, reward: &RewardFn) -> Result<()> {
    if reward.n_states != cmp.n_states() || reward.n_actions != cmp.n_actions() {
        return Err(Error::Dimension(format!(
            "reward is {}×{}, CMP is {}×{}",
            reward.n_states,
            reward.n_actions,
            cmp.n_states(),
            cmp.n_actions()
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("confidence delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `Rmax / (1 - γ)`, the largest possible absolute return.
pub fn return_scale(reward: &RewardFn, discount: f64) -> f64 {
    reward.rmax / (1.0 - discount)
}

/// `J = Σ d_sa R / (1 - γ)` for a known occupancy.
pub fn exact_return_occ(occ: &Occupancy, reward: &RewardFn, discount: f64) -> f64 {
    occ.d_sa
        .iter()
        .zip(&reward.table)
        .map(|(d, r)| d * r)
        .sum::<f64>()
        / (1.0 - discount)
}

/// Expected discounted return of a softmax policy.
pub fn exact_return(cmp: &TabularCmp, reward: &RewardFn, params: &PolicyParams) -> Result<f64> {
    check_reward(cmp, reward)?;
    let occ = occupancy(cmp, params)?;
    Ok(exact_return_occ(&occ, reward, cmp.discount()))
}

/// Optimal values and a deterministic optimal policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSolution {
    /// `μᵀ V*`, the supremum of the return over all policies.
    pub value: f64,
    pub state_values: Vec<f64>,
    /// Greedy action per state, lowest index on ties.
    pub policy: Vec<usize>,
}

fn evaluate_deterministic(cmp: &TabularCmp, reward: &RewardFn, policy: &[usize]) -> Result<Vec<f64>> {
    let n = cmp.n_states();
    let gamma = cmp.discount();
    let m = DMatrix::from_fn(n, n, |s, next| {
        let id = if s == next { 1.0 } else { 0.0 };
        id - gamma * cmp.prob(s, policy[s], next)
    });
    let r = DVector::from_iterator(n, (0..n).map(|s| reward.get(s, policy[s])));
    let v = m
        .lu()
        .solve(&r)
        .ok_or_else(|| Error::Config("policy evaluation system is singular".into()))?;
    Ok(v.iter().copied().collect())
}

fn q_value(cmp: &TabularCmp, reward: &RewardFn, v: &[f64], s: usize, a: usize) -> f64 {
    let next: f64 = cmp.next_dist(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
    reward.get(s, a) + cmp.discount() * next
}

/// Exact policy iteration.
pub fn optimal_value(cmp: &TabularCmp, reward: &RewardFn) -> Result<OptimalSolution> {
    check_reward(cmp, reward)?;
    let n_a = cmp.n_actions();
    let mut policy = vec![0; cmp.n_states()];
    for _ in 0..10_000 {
        let v = evaluate_deterministic(cmp, reward, &policy)?;
        let mut changed = false;
        for s in 0..cmp.n_states() {
            let current = q_value(cmp, reward, &v, s, policy[s]);
            let (best_a, best_q) = (0..n_a)
                .map(|a| (a, q_value(cmp, reward, &v, s, a)))
                .fold((policy[s], current), |acc, x| if x.1 > acc.1 + 1e-12 { x } else { acc });
            if best_a != policy[s] && best_q > current + 1e-12 {
                policy[s] = best_a;
                changed = true;
            }
        }
        if !changed {
            let value = cmp.init_dist().iter().zip(&v).map(|(m, x)| m * x).sum();
            return Ok(OptimalSolution {
                value,
                state_values: v,
                policy,
            });
        }
    }
    Err(Error::Config("policy iteration did not stabilize".into()))
}

/// Softmax policy playing the optimal action with probability `1 - ε` and a
/// uniformly random action otherwise.
pub fn epsilon_greedy(cmp: &TabularCmp, reward: &RewardFn, epsilon: f64) -> Result<PolicyParams> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1] for a softmax policy, got {epsilon}"
        )));
    }
    let opt = optimal_value(cmp, reward)?;
    let n_a = cmp.n_actions();
    let mut probs = vec![epsilon / n_a as f64; cmp.n_pairs()];
    for (s, a) in opt.policy.iter().enumerate() {
        probs[s * n_a + a] += 1.0 - epsilon;
    }
    PolicyParams::from_probs(cmp.n_states(), n_a, &probs)
}

/// Policies of a two-action CMP that pick `action` with the state-independent
/// probability `i / (n + 1)`, `i = 1..=n`.
pub fn action_discretization(cmp: &TabularCmp, n: usize, action: usize) -> Result<CoverSet> {
    if cmp.n_actions() != 2 || action > 1 {
        return Err(Error::Config(
            "action discretization needs a two-action CMP".into(),
        ));
    }
    let components = (1..=n)
        .map(|i| {
            let p = i as f64 / (n + 1) as f64;
            let row = if action == 0 { [p, 1.0 - p] } else { [1.0 - p, p] };
            let probs: Vec<f64> = (0..cmp.n_states()).flat_map(|_| row).collect();
            PolicyParams::from_probs(cmp.n_states(), 2, &probs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverSet::new(components))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Is,
    Mis,
    OnPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub estimate: f64,
    /// Chebyshev confidence half-width at level `1 - delta`.
    pub bound_radius: f64,
    pub delta: f64,
    pub n_samples: usize,
    pub kind: EstimatorKind,
    /// Exponentiated 2-Rényi divergence of the target to the sampling
    /// distribution.
    pub divergence: f64,
}

/// Chebyshev half-width `(Rmax / (1 - γ)) √(ρ / (δ N))`.
pub fn chebyshev_radius(scale: f64, divergence: f64, delta: f64, n: usize) -> f64 {
    scale * (divergence / (delta * n as f64)).sqrt()
}

/// Variance bound `(Rmax / (1 - γ))² ρ / N` of the importance-sampling
/// estimate.
pub fn is_variance_bound(scale: f64, divergence: f64, n: usize) -> f64 {
    scale * scale * divergence / n as f64
}

/// Importance-sampling estimate from known occupancies.
pub fn is_estimate_occ(
    target: &Occupancy,
    behavior: &Occupancy,
    reward: &RewardFn,
    discount: f64,
    batch: &SampleBatch,
    delta: f64,
) -> Result<EvalResult> {
    check_delta(delta)?;
    if batch.is_empty() {
        return Err(Error::Validation("sample batch is empty".into()));
    }
    let divergence = renyi2(target, behavior)?;
    if !divergence.is_finite() {
        return Err(Error::EstimatorRefused(
            "target occupancy is not absolutely continuous w.r.t. the behavior".into(),
        ));
    }
    let n_a = reward.n_actions;
    let mut total = 0.0;
    for &(s, a) in &batch.pairs {
        let i = s * n_a + a;
        let r = reward.table[i];
        if r != 0.0 && target.d_sa[i] > 0.0 {
            total += target.d_sa[i] / behavior.d_sa[i] * r;
        }
    }
    let n = batch.len();
    let scale = return_scale(reward, discount);
    Ok(EvalResult {
        estimate: total / ((1.0 - discount) * n as f64),
        bound_radius: chebyshev_radius(scale, divergence, delta, n),
        delta,
        n_samples: n,
        kind: EstimatorKind::Is,
        divergence,
    })
}

/// Importance-sampling estimate of `J(target)` from samples of `behavior`.
/// Equal policies give the on-policy Monte-Carlo estimate.
pub fn is_estimate(
    cmp: &TabularCmp,
    reward: &RewardFn,
    target: &PolicyParams,
    behavior: &PolicyParams,
    batch: &SampleBatch,
    delta: f64,
) -> Result<EvalResult> {
    check_reward(cmp, reward)?;
    batch.check_bounds(cmp)?;
    let t = occupancy(cmp, target)?;
    let b = occupancy(cmp, behavior)?;
    let mut result = is_estimate_occ(&t, &b, reward, cmp.discount(), batch, delta)?;
    if target == behavior {
        result.kind = EstimatorKind::OnPolicy;
    }
    Ok(result)
}

/// Sample-size weighted mixture `Φ = Σ (N_k / N) d_k`.
pub fn mixture(behaviors: &[Occupancy], sizes: &[usize]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    let mut phi = vec![0.0; behaviors.first().map_or(0, |b| b.d_sa.len())];
    for (occ, &nk) in behaviors.iter().zip(sizes) {
        let w = nk as f64 / n as f64;
        for (p, d) in phi.iter_mut().zip(&occ.d_sa) {
            *p += w * d;
        }
    }
    phi
}

/// Balance-heuristic multiple importance sampling from known occupancies.
pub fn mis_estimate_occ(
    target: &Occupancy,
    behaviors: &[Occupancy],
    reward: &RewardFn,
    discount: f64,
    batches: &[SampleBatch],
    delta: f64,
) -> Result<EvalResult> {
    check_delta(delta)?;
    if behaviors.is_empty() || behaviors.len() != batches.len() {
        return Err(Error::Dimension(format!(
            "{} behaviors but {} batches",
            behaviors.len(),
            batches.len()
        )));
    }
    if batches.iter().any(|b| b.is_empty()) {
        return Err(Error::Validation("sample batch is empty".into()));
    }
    let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
    let n: usize = sizes.iter().sum();
    let phi = mixture(behaviors, &sizes);
    let divergence = renyi2_dist(&target.d_sa, &phi);
    if !divergence.is_finite() {
        return Err(Error::EstimatorRefused(
            "target puts mass on pairs no behavior visits".into(),
        ));
    }
    let n_a = reward.n_actions;
    let mut total = 0.0;
    for batch in batches {
        for &(s, a) in &batch.pairs {
            let i = s * n_a + a;
            let r = reward.table[i];
            if r != 0.0 && target.d_sa[i] > 0.0 {
                total += target.d_sa[i] / (n as f64 * phi[i]) * r;
            }
        }
    }
    let scale = return_scale(reward, discount);
    Ok(EvalResult {
        estimate: total / (1.0 - discount),
        bound_radius: chebyshev_radius(scale, divergence, delta, n),
        delta,
        n_samples: n,
        kind: EstimatorKind::Mis,
        divergence,
    })
}

/// Multiple importance sampling with one batch per cover component.
pub fn mis_estimate(
    cmp: &TabularCmp,
    reward: &RewardFn,
    target: &PolicyParams,
    behaviors: &CoverSet,
    batches: &[SampleBatch],
    delta: f64,
) -> Result<EvalResult> {
    check_reward(cmp, reward)?;
    for b in batches {
        b.check_bounds(cmp)?;
    }
    let t = occupancy(cmp, target)?;
    let occs = behaviors.occupancies(cmp)?;
    mis_estimate_occ(&t, &occs, reward, cmp.discount(), batches, delta)
}

/// `(Rmax / (1 - γ)) √(ln σ)`, the sub-optimality of the best policy of a
/// σ-compression.
pub fn in_set_suboptimality_bound(scale: f64, sigma: f64) -> f64 {
    scale * sigma.max(1.0).ln().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestInSet {
    pub index: usize,
    pub value: f64,
    pub suboptimality_bound: f64,
    /// Supremum of the return over all policies.
    pub optimal_value: f64,
    pub gap: f64,
    pub within_bound: bool,
}

/// Highest-return member of the cover, checked against the optimal value.
pub fn best_in_set(
    cmp: &TabularCmp,
    reward: &RewardFn,
    cover: &CoverSet,
    sigma: f64,
) -> Result<BestInSet> {
    check_reward(cmp, reward)?;
    let occs = cover.occupancies(cmp)?;
    let mut index = 0;
    let mut value = f64::NEG_INFINITY;
    for (k, occ) in occs.iter().enumerate() {
        let j = exact_return_occ(occ, reward, cmp.discount());
        if j > value {
            index = k;
            value = j;
        }
    }
    let optimal_value = optimal_value(cmp, reward)?.value;
    let bound = in_set_suboptimality_bound(return_scale(reward, cmp.discount()), sigma);
    let gap = optimal_value - value;
    Ok(BestInSet {
        index,
        value,
        suboptimality_bound: bound,
        optimal_value,
        gap,
        within_bound: gap <= bound + 1e-9 * optimal_value.abs().max(1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffPolicyConfig {
    /// Starts per cover component; the first is the component itself.
    pub starts: usize,
    pub start_scale: f64,
    pub max_steps: usize,
    pub rate: f64,
    /// Penalty weight on the squared constraint violation, in units of
    /// `Rmax / (1 - γ)`.
    pub penalty: f64,
    /// Accepted excess of the divergence over `σ` before bisection repair.
    pub constraint_slack: f64,
    pub seed: u64,
}

impl Default for OffPolicyConfig {
    fn default() -> Self {
        Self {
            starts: 10,
            start_scale: 1.0,
            max_steps: 300,
            rate: 0.1,
            penalty: 100.0,
            constraint_slack: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffPolicyResult {
    pub params: PolicyParams,
    /// Cover component whose samples and divergence ball were used.
    pub anchor: usize,
    pub j_is: f64,
    pub epsilon_bound: f64,
    pub divergence: f64,
    /// No start improved on the best cover component.
    pub fallback: bool,
}

/// Importance-sampling objective `Ĵ(θ) = Σ d_θ · g` for one anchor.
struct IsObjective<'a> {
    cmp: &'a TabularCmp,
    anchor: &'a Occupancy,
    /// `emp(s,a) R(s,a) / (d_k(s,a) (1 - γ))`.
    g: Vec<f64>,
    sigma: f64,
    penalty: f64,
}

impl IsObjective<'_> {
    fn j_is(&self, occ: &Occupancy) -> f64 {
        occ.d_sa.iter().zip(&self.g).map(|(d, g)| d * g).sum()
    }

    fn divergence(&self, occ: &Occupancy) -> f64 {
        renyi2_dist(&occ.d_sa, &self.anchor.d_sa)
    }

    fn penalized(&self, occ: &Occupancy) -> f64 {
        let excess = (self.divergence(occ) - self.sigma).max(0.0);
        self.j_is(occ) - self.penalty * excess * excess
    }

    fn value_and_grad(&self, params: &PolicyParams) -> Result<(f64, Vec<f64>)> {
        let derivs = PolicyDerivatives::new(self.cmp, params)?;
        let occ = derivs.occ();
        let excess = (self.divergence(occ) - self.sigma).max(0.0);
        let weights: Vec<f64> = occ
            .d_sa
            .iter()
            .zip(&self.g)
            .zip(&self.anchor.d_sa)
            .map(|((d, g), b)| {
                let mut w = d * g;
                if excess > 0.0 && *d > 0.0 {
                    w -= self.penalty * 2.0 * excess * 2.0 * d * d / b;
                }
                w
            })
            .collect();
        Ok((self.penalized(occ), derivs.weighted_log_grad(&weights)))
    }

    fn ascend(&self, init: PolicyParams, cfg: &OffPolicyConfig) -> Result<PolicyParams> {
        let mut params = init;
        let (mut value, mut grad) = self.value_and_grad(&params)?;
        let mut rate = cfg.rate;
        for _ in 0..cfg.max_steps {
            let mut trial = params.clone();
            for (t, g) in trial.free_mut().iter_mut().zip(&grad) {
                *t += rate * g;
            }
            let (v, g) = self.value_and_grad(&trial)?;
            if v >= value {
                let gain = v - value;
                params = trial;
                value = v;
                grad = g;
                rate = (rate * 1.5).min(cfg.rate * 1e3);
                if gain <= 1e-12 * value.abs().max(1.0) {
                    break;
                }
            } else {
                rate *= 0.5;
                if rate < 1e-12 * cfg.rate {
                    break;
                }
            }
        }
        Ok(params)
    }

    /// Pulls `params` back towards `anchor` until the divergence constraint
    /// holds.
    fn repair(&self, anchor: &PolicyParams, params: PolicyParams, slack: f64) -> Result<PolicyParams> {
        if self.divergence(&occupancy(self.cmp, &params)?) <= self.sigma + slack {
            return Ok(params);
        }
        let at = |t: f64| -> Result<PolicyParams> {
            let free = anchor
                .free()
                .iter()
                .zip(params.free())
                .map(|(a, p)| a + t * (p - a))
                .collect();
            PolicyParams::from_free(params.n_states(), params.n_actions(), free)
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.divergence(&occupancy(self.cmp, &at(mid)?)?) <= self.sigma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        at(lo)
    }
}

/// Maximizes the importance-sampling return over policies within
/// divergence `σ` of some cover component, using that component's samples.
pub fn offpolicy_optimize(
    cmp: &TabularCmp,
    reward: &RewardFn,
    cover: &CoverSet,
    batches: &[SampleBatch],
    sigma: f64,
    delta: f64,
    cfg: &OffPolicyConfig,
) -> Result<OffPolicyResult> {
    check_reward(cmp, reward)?;
    check_delta(delta)?;
    if !(sigma >= 1.0) {
        return Err(Error::InfeasibleSigma(sigma));
    }
    if batches.len() != cover.k() {
        return Err(Error::Dimension(format!(
            "{} components but {} batches",
            cover.k(),
            batches.len()
        )));
    }
    if cfg.starts == 0 {
        return Err(Error::Config("at least one start is required".into()));
    }
    let occs = cover.occupancies(cmp)?;
    let gamma = cmp.discount();
    let scale = return_scale(reward, gamma);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.start_scale.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("start_scale: {e}")))?;

    let mut best: Option<(f64, usize, PolicyParams)> = None;
    let mut best_component: Option<(f64, usize)> = None;
    for (k, (anchor, batch)) in occs.iter().zip(batches).enumerate() {
        batch.check_bounds(cmp)?;
        let nk = batch.len() as f64;
        let g: Vec<f64> = batch
            .counts(cmp.n_states(), cmp.n_actions())
            .iter()
            .zip(&reward.table)
            .zip(&anchor.d_sa)
            .map(|((c, r), d)| {
                if *c == 0 || *d <= 0.0 {
                    0.0
                } else {
                    *c as f64 / nk * r / (d * (1.0 - gamma))
                }
            })
            .collect();
        let objective = IsObjective {
            cmp,
            anchor,
            g,
            sigma,
            penalty: cfg.penalty * scale,
        };
        let own = objective.j_is(anchor);
        if best_component.is_none_or(|(v, _)| own > v) {
            best_component = Some((own, k));
        }
        let component = &cover.components[k];
        for start in 0..cfg.starts {
            let mut init = component.clone();
            if start > 0 {
                for v in init.free_mut() {
                    *v += normal.sample(&mut rng);
                }
            }
            let found = objective.ascend(init, cfg)?;
            let found = objective.repair(component, found, cfg.constraint_slack)?;
            let j = objective.j_is(&occupancy(cmp, &found)?);
            if best.as_ref().is_none_or(|(v, _, _)| j > *v) {
                best = Some((j, k, found));
            }
        }
    }
    let (own_best, own_k) = best_component.expect("cover is non-empty");
    let (j_is, anchor, params, fallback) = match best {
        Some((j, k, p)) if j > own_best => (j, k, p, false),
        _ => (own_best, own_k, cover.components[own_k].clone(), true),
    };
    let divergence = renyi2_dist(&occupancy(cmp, &params)?.d_sa, &occs[anchor].d_sa);
    let nk = batches[anchor].len() as f64;
    Ok(OffPolicyResult {
        params,
        anchor,
        j_is,
        epsilon_bound: scale * (2.0 * sigma / (nk * delta)).sqrt(),
        divergence,
        fallback,
    })
}

/// Weight clipping level of the truncated MIS estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// `M_t = √(N_t / ln N_t)`.
    Adaptive,
    Fixed(f64),
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimistConfig {
    pub iterations: usize,
    pub per_iter_samples: usize,
    /// Overall confidence; iteration `t` uses `δ / (t² K)`.
    pub delta: f64,
    pub truncation: Truncation,
    pub seed: u64,
}

impl Default for OptimistConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            per_iter_samples: 1000,
            delta: 0.1,
            truncation: Truncation::Adaptive,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimistStep {
    pub iteration: usize,
    pub chosen: usize,
    /// Exact return of the chosen policy.
    pub value: f64,
    pub estimate: f64,
    pub bonus: f64,
}

/// Optimistic selection over a finite policy set. Every iteration picks the
/// candidate maximizing its truncated MIS estimate plus an exploration
/// bonus, then samples with it.
pub fn optimistic_select(
    cmp: &TabularCmp,
    reward: &RewardFn,
    candidates: &CoverSet,
    cfg: &OptimistConfig,
) -> Result<Vec<OptimistStep>> {
    check_reward(cmp, reward)?;
    check_delta(cfg.delta)?;
    if cfg.iterations == 0 || cfg.per_iter_samples == 0 {
        return Err(Error::Config("iterations and samples must be positive".into()));
    }
    let occs = candidates.occupancies(cmp)?;
    let gamma = cmp.discount();
    let scale = return_scale(reward, gamma);
    let values: Vec<f64> = occs.iter().map(|o| exact_return_occ(o, reward, gamma)).collect();
    let k = occs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = vec![0usize; cmp.n_pairs()];
    let mut sampled = vec![0usize; k];
    let mut steps = Vec::with_capacity(cfg.iterations);

    for t in 1..=cfg.iterations {
        let n: usize = sampled.iter().sum();
        let mut scores = vec![(0.0, f64::INFINITY); k];
        if n > 0 {
            let phi = mixture(&occs, &sampled);
            let nf = n as f64;
            let clip = match cfg.truncation {
                Truncation::Adaptive if n > 1 => (nf / nf.ln()).sqrt(),
                Truncation::Adaptive | Truncation::Off => f64::INFINITY,
                Truncation::Fixed(m) => m,
            };
            let delta_t = cfg.delta / ((t * t * k) as f64);
            for (i, occ) in occs.iter().enumerate() {
                let divergence = renyi2_dist(&occ.d_sa, &phi);
                let mut total = 0.0;
                for (j, &c) in counts.iter().enumerate() {
                    if c > 0 && occ.d_sa[j] > 0.0 {
                        let w = (occ.d_sa[j] / phi[j]).min(clip);
                        total += c as f64 * w * reward.table[j];
                    }
                }
                let estimate = total / ((1.0 - gamma) * nf);
                let bonus = scale * (divergence * (1.0 / delta_t).ln() / nf).sqrt();
                scores[i] = (estimate, bonus);
            }
        }
        let mut chosen = 0;
        for i in 1..k {
            let (e, b) = scores[i];
            let (be, bb) = scores[chosen];
            if e + b > be + bb {
                chosen = i;
            }
        }
        let batch = sample_discounted(
            cmp,
            &candidates.components[chosen],
            rng.random(),
            cfg.per_iter_samples,
        )?;
        for &(s, a) in &batch.pairs {
            counts[s * cmp.n_actions() + a] += 1;
        }
        sampled[chosen] += batch.len();
        steps.push(OptimistStep {
            iteration: t,
            chosen,
            value: values[chosen],
            estimate: scores[chosen].0,
            bonus: scores[chosen].1,
        });
    }
    Ok(steps)
}

/// First iteration whose chosen policy attains `target` within `tol`.
pub fn first_crossing(steps: &[OptimistStep], target: f64, tol: f64) -> Option<usize> {
    steps
        .iter()
        .find(|s| s.value >= target - tol)
        .map(|s| s.iteration)
}
