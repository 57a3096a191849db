//! Tabular controlled Markov processes, softmax policies and their exact
//! discounted occupancy measures.
//!
//! The state distribution of a policy is the solution of the flow system
//!
//! ```text
//! (I - γ Pπᵀ) d_s = (1 - γ) μ,      Pπ[s][s'] = Σ_a π(a|s) P[s][a][s']
//! ```
//!
//! which sums to one (the `t = 0` term is included), and the state-action
//! distribution is `d_sa[s,a] = π(a|s) d_s[s]`.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::CoverSet;

/// Tolerance for rows of `P` and for `μ` to sum to one.
pub const DISTRIBUTION_TOL: f64 = 1e-9;

/// Behavior masses below this value are treated as zero by the divergence.
pub const DIVERGENCE_FLOOR: f64 = 1e-12;

/// Occupancy entries below this magnitude are roundoff on unreachable states.
const ROUNDOFF_ZERO: f64 = 1e-15;

/// Finite state/action controlled Markov process (an MDP without reward).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularCmp {
    n_states: usize,
    n_actions: usize,
    /// Dense `P[s][a][s']`, s-major, a-major, s'-minor.
    transition: Vec<f64>,
    init_dist: Vec<f64>,
    discount: f64,
}

impl TabularCmp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        init_dist: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Dimension(
                "a CMP needs at least one state and one action".into(),
            ));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if init_dist.len() != n_states {
            return Err(Error::Dimension(format!(
                "init_dist has {} entries, expected {}",
                init_dist.len(),
                n_states
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Validation(format!(
                "discount {discount} must lie in [0, 1)"
            )));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let start = (s * n_actions + a) * n_states;
                let row = &transition[start..start + n_states];
                check_distribution(row).map_err(|why| {
                    Error::Validation(format!("transition row (s={s}, a={a}) {why}"))
                })?;
            }
        }
        check_distribution(&init_dist)
            .map_err(|why| Error::Validation(format!("init_dist {why}")))?;
        Ok(Self {
            n_states,
            n_actions,
            transition,
            init_dist,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    /// Flat transition tensor in s-major, a-major, s'-minor order.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// Next-state distribution `P[s][a][·]`.
    pub fn next_dist(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Copy of this CMP with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.init_dist.clone(),
            discount,
        )
    }
}

fn check_distribution(values: &[f64]) -> std::result::Result<(), String> {
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(format!("has invalid entry {bad}"));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

/// Softmax logit table for one policy.
///
/// Only `|S| × (|A| - 1)` logits are free; the logit of the last action in
/// every state is pinned to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    n_states: usize,
    n_actions: usize,
    /// Row-major `|S| × (|A| - 1)` free logits.
    free: Vec<f64>,
}

impl PolicyParams {
    /// All-zero logits: the uniform policy.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            free: vec![0.0; n_states * n_actions.saturating_sub(1)],
        }
    }

    pub fn uniform(cmp: &TabularCmp) -> Self {
        Self::zeros(cmp.n_states(), cmp.n_actions())
    }

    pub fn from_free(n_states: usize, n_actions: usize, free: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || free.len() != n_states * (n_actions - 1) {
            return Err(Error::Dimension(format!(
                "expected {} free logits for {n_states} states and {n_actions} actions, got {}",
                n_states * n_actions.saturating_sub(1),
                free.len()
            )));
        }
        if free.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("logits must be finite".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            free,
        })
    }

    /// Builds the parameters of a strictly positive stochastic policy given
    /// as a row-major `|S| × |A|` table.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: &[f64]) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "policy table has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        if probs.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::Validation(
                "softmax policies need strictly positive probabilities".into(),
            ));
        }
        let mut free = Vec::with_capacity(n_states * (n_actions - 1));
        for row in probs.chunks(n_actions) {
            let last = row[n_actions - 1].ln();
            free.extend(row[..n_actions - 1].iter().map(|p| p.ln() - last));
        }
        Self::from_free(n_states, n_actions, free)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn free(&self) -> &[f64] {
        &self.free
    }

    pub fn free_mut(&mut self) -> &mut [f64] {
        &mut self.free
    }

    /// Logit of `(s, a)`, zero for the pinned last action.
    pub fn logit(&self, s: usize, a: usize) -> f64 {
        if a + 1 == self.n_actions {
            0.0
        } else {
            self.free[s * (self.n_actions - 1) + a]
        }
    }

    /// Index of the free parameter `(s, a)`, `None` for the pinned action.
    pub fn param_index(&self, s: usize, a: usize) -> Option<usize> {
        (a + 1 < self.n_actions).then(|| s * (self.n_actions - 1) + a)
    }

    pub fn check_shape(&self, cmp: &TabularCmp) -> Result<()> {
        if self.n_states != cmp.n_states() || self.n_actions != cmp.n_actions() {
            return Err(Error::Dimension(format!(
                "policy is {}x{} but the CMP is {}x{}",
                self.n_states,
                self.n_actions,
                cmp.n_states(),
                cmp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Softmax action probabilities `π[s][a]`, row-major `|S| × |A|`.
pub fn policy_probs(cmp: &TabularCmp, params: &PolicyParams) -> Result<Vec<f64>> {
    params.check_shape(cmp)?;
    Ok(softmax_table(params))
}

pub(crate) fn softmax_table(params: &PolicyParams) -> Vec<f64> {
    let n_actions = params.n_actions();
    let mut probs = vec![0.0; params.n_states() * n_actions];
    for (s, row) in probs.chunks_mut(n_actions).enumerate() {
        let max = (0..n_actions)
            .map(|a| params.logit(s, a))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (a, p) in row.iter_mut().enumerate() {
            *p = (params.logit(s, a) - max).exp();
            total += *p;
        }
        row.iter_mut().for_each(|p| *p /= total);
    }
    probs
}

/// Exact discounted state and state-action distributions of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub n_actions: usize,
    pub d_s: Vec<f64>,
    pub d_sa: Vec<f64>,
}

impl Occupancy {
    pub fn pair(&self, s: usize, a: usize) -> f64 {
        self.d_sa[s * self.n_actions + a]
    }

    /// Largest absolute Bellman-flow residual of `d_sa` in `cmp`.
    pub fn flow_residual(&self, cmp: &TabularCmp) -> f64 {
        flow_residual(cmp, &self.d_sa)
    }
}

/// Largest absolute residual of the discounted flow equalities for a
/// state-action vector `ω`.
pub fn flow_residual(cmp: &TabularCmp, omega: &[f64]) -> f64 {
    let (n_s, n_a) = (cmp.n_states(), cmp.n_actions());
    let gamma = cmp.discount();
    let mut inflow: Vec<f64> = cmp.init_dist().iter().map(|m| (1.0 - gamma) * m).collect();
    for s in 0..n_s {
        for a in 0..n_a {
            let w = omega[s * n_a + a];
            if w != 0.0 {
                for (next, p) in cmp.next_dist(s, a).iter().enumerate() {
                    inflow[next] += gamma * w * p;
                }
            }
        }
    }
    (0..n_s)
        .map(|s| {
            let out: f64 = omega[s * n_a..(s + 1) * n_a].iter().sum();
            (out - inflow[s]).abs()
        })
        .fold(0.0, f64::max)
}

/// Solved flow system of one policy, kept around so gradients can reuse the
/// factorization.
pub(crate) struct PolicyFlow {
    pub probs: Vec<f64>,
    pub occ: Occupancy,
    pub lu: LU<f64, Dyn, Dyn>,
}

pub(crate) fn solve_flow(cmp: &TabularCmp, probs: Vec<f64>) -> Result<PolicyFlow> {
    let (n_s, n_a) = (cmp.n_states(), cmp.n_actions());
    let gamma = cmp.discount();
    // Pπ[s][s']
    let mut p_pi = vec![0.0; n_s * n_s];
    for s in 0..n_s {
        for a in 0..n_a {
            let pa = probs[s * n_a + a];
            for (next, p) in cmp.next_dist(s, a).iter().enumerate() {
                p_pi[s * n_s + next] += pa * p;
            }
        }
    }
    let system = DMatrix::from_fn(n_s, n_s, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - gamma * p_pi[j * n_s + i]
    });
    let lu = system.lu();
    let rhs = DVector::from_iterator(n_s, cmp.init_dist().iter().map(|m| (1.0 - gamma) * m));
    let d = lu
        .solve(&rhs)
        .filter(|d| d.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Config("occupancy flow system is singular".into()))?;
    let d_s: Vec<f64> = d
        .iter()
        .map(|v| if v.abs() < ROUNDOFF_ZERO { 0.0 } else { v.max(0.0) })
        .collect();
    let mut d_sa = vec![0.0; n_s * n_a];
    for s in 0..n_s {
        for a in 0..n_a {
            d_sa[s * n_a + a] = probs[s * n_a + a] * d_s[s];
        }
    }
    Ok(PolicyFlow {
        probs,
        occ: Occupancy {
            n_actions: n_a,
            d_s,
            d_sa,
        },
        lu,
    })
}

/// Exact occupancy of a softmax policy.
pub fn occupancy(cmp: &TabularCmp, params: &PolicyParams) -> Result<Occupancy> {
    let probs = policy_probs(cmp, params)?;
    Ok(solve_flow(cmp, probs)?.occ)
}

/// Exact occupancy of an arbitrary stochastic policy table (zeros allowed).
pub fn occupancy_from_probs(cmp: &TabularCmp, probs: &[f64]) -> Result<Occupancy> {
    if probs.len() != cmp.n_pairs() {
        return Err(Error::Dimension(format!(
            "policy table has {} entries, expected {}",
            probs.len(),
            cmp.n_pairs()
        )));
    }
    for row in probs.chunks(cmp.n_actions()) {
        check_distribution(row)
            .map_err(|why| Error::Validation(format!("policy row {why}")))?;
    }
    Ok(solve_flow(cmp, probs.to_vec())?.occ)
}

/// Exponentiated 2-Rényi divergence `Σ target² / behavior` between two
/// distributions on the same support.
///
/// Returns `f64::INFINITY` when the target puts mass where the behavior mass
/// is below [`DIVERGENCE_FLOOR`].
pub fn renyi2_dist(target: &[f64], behavior: &[f64]) -> f64 {
    debug_assert_eq!(target.len(), behavior.len());
    let mut total = 0.0;
    for (&t, &b) in target.iter().zip(behavior) {
        if t <= 0.0 {
            continue;
        }
        if b < DIVERGENCE_FLOOR {
            return f64::INFINITY;
        }
        total += t * t / b;
    }
    total
}

/// `D₂(target ‖ behavior)` on state-action occupancies.
pub fn renyi2(target: &Occupancy, behavior: &Occupancy) -> Result<f64> {
    if target.d_sa.len() != behavior.d_sa.len() {
        return Err(Error::Dimension(format!(
            "occupancies have {} and {} pairs",
            target.d_sa.len(),
            behavior.d_sa.len()
        )));
    }
    Ok(renyi2_dist(&target.d_sa, &behavior.d_sa))
}

/// Value of the cover game for a fixed follower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverValue {
    pub value: f64,
    /// Lowest index attaining the minimum divergence.
    pub active_index: usize,
}

/// `min_k D₂(follower ‖ leader_k)` over precomputed leader occupancies.
pub fn nearest_component(leader: &[Occupancy], follower: &Occupancy) -> CoverValue {
    let mut best = CoverValue {
        value: f64::INFINITY,
        active_index: 0,
    };
    for (k, occ) in leader.iter().enumerate() {
        let value = renyi2_dist(&follower.d_sa, &occ.d_sa);
        if value < best.value {
            best = CoverValue {
                value,
                active_index: k,
            };
        }
    }
    best
}

pub fn cover_value(
    cmp: &TabularCmp,
    leader: &CoverSet,
    follower: &PolicyParams,
) -> Result<CoverValue> {
    if leader.components.is_empty() {
        return Err(Error::Config("leader must hold at least one policy".into()));
    }
    let leader_occs = leader
        .components
        .iter()
        .map(|p| occupancy(cmp, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(nearest_component(&leader_occs, &occupancy(cmp, follower)?))
}
