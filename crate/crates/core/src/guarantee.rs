//! Certified upper bound on the worst-case cover divergence.
//!
//! For a leader with occupancies `d_1, …, d_K` the bound is `B = V²` where
//!
//! ```text
//! V = max_{ω ∈ Ω} min_k Σ_{s,a} ω(s,a) / √d_k(s,a)
//! ```
//!
//! and `Ω` is the Bellman-flow polytope. Since `(Σ g)² ≥ Σ g²` for `g ≥ 0`,
//! `B` dominates `max_{ω ∈ Ω} min_k D₂(ω ‖ d_k)`.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmp::{nearest_component, occupancy, renyi2_dist, Occupancy, PolicyParams, TabularCmp, DIVERGENCE_FLOOR};
use crate::error::{Error, Result};
use crate::game::{ascend_from, random_follower, CoverSet, GdaConfig};
use crate::lp::{solve_lp, LpProblem, VarBound};

/// Largest policy grid accepted by [`brute_force_cover`].
pub const BRUTE_FORCE_LIMIT: usize = 20;
/// Logit scale of the random starts used by [`estimate_global_z`].
const Z_RESTART_SCALE: f64 = 2.0;
/// Smallest action probability when turning an LP witness into logits.
const WITNESS_PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeResult {
    /// Optimum `V` of the flow LP.
    pub lp_value: f64,
    /// Certified bound `B = V²`.
    pub cover_bound: f64,
    /// Maximizing occupancy `ω*`, row-major over `(s, a)`.
    pub witness: Vec<f64>,
    /// Multi-start lower estimate of the true worst-case divergence.
    pub z_estimate: f64,
    /// Some reachable pair had leader mass below the divergence floor.
    pub floor_capped: bool,
    pub lp_residual: f64,
}

/// States reachable from the support of `μ` under some action sequence.
pub fn reachable_states(cmp: &TabularCmp) -> Vec<bool> {
    let n = cmp.n_states();
    let mut seen: Vec<bool> = cmp.init_dist().iter().map(|m| *m > 0.0).collect();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| seen[s]).collect();
    while let Some(s) = queue.pop_front() {
        for a in 0..cmp.n_actions() {
            for (next, p) in cmp.next_dist(s, a).iter().enumerate() {
                if *p > 0.0 && !seen[next] {
                    seen[next] = true;
                    queue.push_back(next);
                }
            }
        }
    }
    seen
}

fn coefficient(d: f64) -> f64 {
    1.0 / d.max(DIVERGENCE_FLOOR).sqrt()
}

/// Whether any reachable pair of any leader occupancy falls below the floor.
pub fn floor_capped(cmp: &TabularCmp, leader: &[Occupancy]) -> bool {
    let reach = reachable_states(cmp);
    let n_a = cmp.n_actions();
    leader.iter().any(|occ| {
        occ.d_sa
            .iter()
            .enumerate()
            .any(|(i, d)| reach[i / n_a] && *d < DIVERGENCE_FLOOR)
    })
}

pub(crate) fn guarantee_lp_from_occs(cmp: &TabularCmp, leader: &[Occupancy]) -> LpProblem {
    let (n_s, n_a) = (cmp.n_states(), cmp.n_actions());
    let n_pairs = n_s * n_a;
    let gamma = cmp.discount();
    let mut lp = LpProblem::new(n_pairs + 1);
    for s in 0..n_s {
        for a in 0..n_a {
            lp.var_names[s * n_a + a] = format!("w_s{s}_a{a}");
        }
    }
    lp.var_names[n_pairs] = "z".into();
    lp.bounds[n_pairs] = VarBound::Free;
    lp.objective[n_pairs] = 1.0;

    for s in 0..n_s {
        let mut row = vec![0.0; n_pairs + 1];
        for a in 0..n_a {
            row[s * n_a + a] += 1.0;
        }
        for sp in 0..n_s {
            for ap in 0..n_a {
                row[sp * n_a + ap] -= gamma * cmp.prob(sp, ap, s);
            }
        }
        lp.add_equality(row, (1.0 - gamma) * cmp.init_dist()[s]);
    }
    for occ in leader {
        let mut row: Vec<f64> = occ.d_sa.iter().map(|d| -coefficient(*d)).collect();
        row.push(1.0);
        lp.add_inequality(row, 0.0);
    }
    lp
}

/// Flow LP whose optimum is the root `V` of the cover bound.
///
/// Variables are `ω(s,a)` in row-major order followed by the free epigraph
/// variable `z`.
pub fn build_guarantee_lp(cmp: &TabularCmp, leader: &CoverSet) -> Result<LpProblem> {
    let occs = leader.occupancies(cmp)?;
    Ok(guarantee_lp_from_occs(cmp, &occs))
}

fn z_config() -> GdaConfig {
    GdaConfig {
        restart_scale: Z_RESTART_SCALE,
        follower_max_steps: 3_000,
        ..GdaConfig::default()
    }
}

pub(crate) fn estimate_z_occs(
    cmp: &TabularCmp,
    leader: &[Occupancy],
    restarts: usize,
    seed: u64,
    extra_init: Option<PolicyParams>,
) -> Result<f64> {
    let cfg = z_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inits: Vec<PolicyParams> = (0..restarts)
        .map(|_| random_follower(&mut rng, cmp, cfg.restart_scale))
        .collect();
    inits.extend(extra_init);
    let mut best = f64::NEG_INFINITY;
    for init in inits {
        let (_, value) = ascend_from(cmp, leader, init, &cfg)?;
        best = best.max(value.value);
    }
    Ok(best)
}

/// Largest cover value found by gradient ascent from `restarts` random
/// follower initializations. A lower estimate of the worst-case divergence.
pub fn estimate_global_z(
    cmp: &TabularCmp,
    leader: &CoverSet,
    restarts: usize,
    seed: u64,
) -> Result<f64> {
    if restarts == 0 {
        return Err(Error::Config("at least one restart is required".into()));
    }
    let occs = leader.occupancies(cmp)?;
    estimate_z_occs(cmp, &occs, restarts, seed, None)
}

/// Softmax parameters of the Markov policy `ω(s,a) / Σ_a ω(s,a)`.
pub fn witness_policy(cmp: &TabularCmp, witness: &[f64]) -> Result<PolicyParams> {
    let n_a = cmp.n_actions();
    let mut probs = Vec::with_capacity(cmp.n_pairs());
    for row in witness[..cmp.n_pairs()].chunks(n_a) {
        let mass: f64 = row.iter().map(|w| w.max(0.0)).sum();
        if mass > 0.0 {
            let floored: Vec<f64> = row
                .iter()
                .map(|w| (w.max(0.0) / mass).max(WITNESS_PROB_FLOOR))
                .collect();
            let total: f64 = floored.iter().sum();
            probs.extend(floored.iter().map(|p| p / total));
        } else {
            probs.extend(std::iter::repeat_n(1.0 / n_a as f64, n_a));
        }
    }
    PolicyParams::from_probs(cmp.n_states(), n_a, &probs)
}

/// Optimum `V` of the flow LP alone.
pub(crate) fn lp_value_occs(cmp: &TabularCmp, leader: &[Occupancy]) -> Result<f64> {
    Ok(solve_lp(&guarantee_lp_from_occs(cmp, leader))?.optimum)
}

pub(crate) fn guarantee_from_occs(
    cmp: &TabularCmp,
    leader: &[Occupancy],
    z_restarts: usize,
    seed: u64,
) -> Result<GuaranteeResult> {
    let lp = guarantee_lp_from_occs(cmp, leader);
    let sol = solve_lp(&lp)?;
    let n_pairs = cmp.n_pairs();
    let witness = sol.witness[..n_pairs].to_vec();
    let v = sol.optimum;

    let witness_init = witness_policy(cmp, &witness)?;
    let witness_occ = occupancy(cmp, &witness_init)?;
    let at_witness = nearest_component(leader, &witness_occ).value;
    let z = estimate_z_occs(cmp, leader, z_restarts, seed, Some(witness_init))?.max(at_witness);

    Ok(GuaranteeResult {
        lp_value: v,
        cover_bound: v * v,
        witness,
        z_estimate: z,
        floor_capped: floor_capped(cmp, leader),
        lp_residual: sol.max_residual,
    })
}

/// Solves the flow LP for `leader` and records a multi-start estimate of
/// the true worst case alongside the certified bound.
pub fn cover_guarantee(
    cmp: &TabularCmp,
    leader: &CoverSet,
    z_restarts: usize,
    seed: u64,
) -> Result<GuaranteeResult> {
    let occs = leader.occupancies(cmp)?;
    guarantee_from_occs(cmp, &occs, z_restarts, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaCertificate {
    /// `B ≤ σ`. A negative answer means "not certified", not "not a cover".
    pub certified: bool,
    pub sigma: f64,
    pub evidence: GuaranteeResult,
}

/// Checks whether `candidate` is certified as a σ-compression.
pub fn is_sigma_compression(
    cmp: &TabularCmp,
    candidate: &CoverSet,
    sigma: f64,
) -> Result<SigmaCertificate> {
    let evidence = cover_guarantee(cmp, candidate, 5, 0)?;
    Ok(SigmaCertificate {
        certified: evidence.cover_bound <= sigma,
        sigma,
        evidence,
    })
}

/// Exact minimum number of grid policies covering the whole grid within `σ`.
pub fn brute_force_cover(cmp: &TabularCmp, grid: &[PolicyParams], sigma: f64) -> Result<usize> {
    if sigma < 1.0 {
        return Err(Error::InfeasibleSigma(sigma));
    }
    if grid.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::GridTooLarge(grid.len(), BRUTE_FORCE_LIMIT));
    }
    if grid.is_empty() {
        return Ok(0);
    }
    let occs: Vec<Occupancy> = grid
        .iter()
        .map(|p| occupancy(cmp, p))
        .collect::<Result<_>>()?;
    let n = grid.len();
    let covers: Vec<u32> = (0..n)
        .map(|j| {
            (0..n)
                .filter(|&i| renyi2_dist(&occs[i].d_sa, &occs[j].d_sa) <= sigma)
                .fold(0u32, |m, i| m | (1 << i))
        })
        .collect();
    let full: u32 = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let mut best = n;
    for subset in 1u32..=full {
        let size = subset.count_ones() as usize;
        if size >= best {
            continue;
        }
        let union = (0..n)
            .filter(|j| subset & (1 << j) != 0)
            .fold(0u32, |m, j| m | covers[j]);
        if union == full {
            best = size;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::{flow_residual, occupancy_from_probs, policy_probs};
    use crate::instances::{random_cmp, random_params};

    fn bandit() -> TabularCmp {
        TabularCmp::new(1, 2, vec![1.0, 1.0], vec![1.0], 0.9).unwrap()
    }

    #[test]
    fn bandit_bound_is_two() {
        let cmp = bandit();
        let leader = CoverSet::new(vec![PolicyParams::uniform(&cmp)]);
        let g = cover_guarantee(&cmp, &leader, 3, 1).unwrap();
        assert!((g.lp_value - 2f64.sqrt()).abs() < 1e-12);
        assert!((g.cover_bound - 2.0).abs() < 1e-12);
        assert!((g.z_estimate - 2.0).abs() < 1e-2, "{}", g.z_estimate);
        assert!(!g.floor_capped);
    }

    #[test]
    fn lp_has_expected_shape() {
        let cmp = bandit();
        let leader = CoverSet::new(vec![PolicyParams::uniform(&cmp); 3]);
        let lp = build_guarantee_lp(&cmp, &leader).unwrap();
        assert_eq!(lp.n_vars(), 3);
        assert_eq!(lp.equalities.len(), 1);
        assert_eq!(lp.inequalities.len(), 3);
        assert!(lp.to_lp_text().contains("z free"));
    }

    #[test]
    fn flow_polytope_carries_unit_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cmp = random_cmp(&mut rng, 4, 3);
        let mut lp = guarantee_lp_from_occs(&cmp, &[]);
        lp.bounds[cmp.n_pairs()] = VarBound::NonNegative;
        lp.objective = vec![1.0; cmp.n_pairs()];
        lp.objective.push(0.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.optimum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_action_cmp_is_covered_by_one_policy() {
        let cmp = TabularCmp::new(2, 1, vec![0.3, 0.7, 0.6, 0.4], vec![0.5, 0.5], 0.8).unwrap();
        let leader = CoverSet::new(vec![PolicyParams::uniform(&cmp)]);
        let g = cover_guarantee(&cmp, &leader, 2, 0).unwrap();
        assert!(g.cover_bound >= 1.0 - 1e-9);
        assert!((g.z_estimate - 1.0).abs() < 1e-12);
        assert!(estimate_global_z(&cmp, &leader, 1, 0).unwrap() - 1.0 < 1e-12);
        assert!(is_sigma_compression(&cmp, &leader, 2.0).unwrap().certified);
    }

    #[test]
    fn duplicates_and_permutations_leave_bound_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cmp = random_cmp(&mut rng, 4, 2);
        let a = random_params(&mut rng, &cmp, 1.0);
        let b = random_params(&mut rng, &cmp, 1.0);
        let one = cover_guarantee(&cmp, &CoverSet::new(vec![a.clone()]), 1, 0).unwrap();
        let dup = cover_guarantee(&cmp, &CoverSet::new(vec![a.clone(), a.clone()]), 1, 0).unwrap();
        assert!((one.lp_value - dup.lp_value).abs() < 1e-9);
        let ab = cover_guarantee(&cmp, &CoverSet::new(vec![a.clone(), b.clone()]), 1, 0).unwrap();
        let ba = cover_guarantee(&cmp, &CoverSet::new(vec![b, a]), 1, 0).unwrap();
        assert!((ab.cover_bound - ba.cover_bound).abs() < 1e-9);
        assert!(ab.lp_value <= one.lp_value + 1e-9);
    }

    #[test]
    fn sigma_below_one_is_never_certified() {
        let cmp = TabularCmp::new(1, 1, vec![1.0], vec![1.0], 0.5).unwrap();
        let leader = CoverSet::new(vec![PolicyParams::uniform(&cmp)]);
        assert!(!is_sigma_compression(&cmp, &leader, 1.0 - 1e-6).unwrap().certified);
    }

    #[test]
    fn bound_dominates_estimate_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for i in 0..20 {
            let cmp = random_cmp(&mut rng, 3, 2);
            let k = 1 + i % 3;
            let leader = CoverSet::new((0..k).map(|_| random_params(&mut rng, &cmp, 1.0)).collect());
            let g = cover_guarantee(&cmp, &leader, 2, i as u64).unwrap();
            assert!(g.cover_bound >= g.z_estimate - 1e-6, "{} < {}", g.cover_bound, g.z_estimate);
            assert!(g.lp_residual <= 1e-8);
        }
    }

    #[test]
    fn witness_is_an_occupancy_of_its_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let cmp = random_cmp(&mut rng, 4, 3);
            let leader = CoverSet::new(vec![random_params(&mut rng, &cmp, 1.0); 2]);
            let g = cover_guarantee(&cmp, &leader, 1, 0).unwrap();
            assert!(flow_residual(&cmp, &g.witness) < 1e-8);
            assert!(g.witness.iter().all(|w| *w >= 0.0));
            // exact policy recovery where the state carries mass
            let n_a = cmp.n_actions();
            let probs: Vec<f64> = g
                .witness
                .chunks(n_a)
                .flat_map(|row| {
                    let m: f64 = row.iter().sum();
                    row.iter()
                        .map(move |w| if m > 0.0 { w / m } else { 1.0 / n_a as f64 })
                        .collect::<Vec<_>>()
                })
                .collect();
            let occ = occupancy_from_probs(&cmp, &probs).unwrap();
            for s in 0..cmp.n_states() {
                if occ.d_s[s] > 1e-8 {
                    for a in 0..n_a {
                        assert!((occ.pair(s, a) - g.witness[s * n_a + a]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn estimate_is_monotone_in_nested_restarts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cmp = random_cmp(&mut rng, 3, 2);
        let leader = CoverSet::new(vec![random_params(&mut rng, &cmp, 1.0)]);
        let mut last = f64::NEG_INFINITY;
        for r in 1..=4 {
            let z = estimate_global_z(&cmp, &leader, r, 17).unwrap();
            assert!(z >= last);
            last = z;
        }
    }

    #[test]
    fn estimate_matches_dense_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cmp = random_cmp(&mut rng, 2, 2);
        let leader = CoverSet::new(vec![random_params(&mut rng, &cmp, 0.5)]);
        let occs = leader.occupancies(&cmp).unwrap();
        let mut grid_max = f64::NEG_INFINITY;
        for i in 0..200 {
            for j in 0..200 {
                let p = (i as f64 + 0.5) / 200.0;
                let q = (j as f64 + 0.5) / 200.0;
                let occ = occupancy_from_probs(&cmp, &[p, 1.0 - p, q, 1.0 - q]).unwrap();
                grid_max = grid_max.max(nearest_component(&occs, &occ).value);
            }
        }
        let z = estimate_global_z(&cmp, &leader, 5, 0).unwrap();
        assert!((z - grid_max).abs() / grid_max <= 0.02, "{z} vs {grid_max}");
    }

    fn cluster_grid(cmp: &TabularCmp) -> Vec<PolicyParams> {
        [0.95, 0.93, 0.97, 0.05, 0.07, 0.03]
            .iter()
            .map(|p| PolicyParams::from_probs(1, 2, &[*p, 1.0 - p]).unwrap())
            .inspect(|params| {
                policy_probs(cmp, params).unwrap();
            })
            .collect()
    }

    #[test]
    fn brute_force_counts_clusters() {
        let cmp = bandit();
        let same = vec![PolicyParams::uniform(&cmp); 5];
        assert_eq!(brute_force_cover(&cmp, &same, 1.5).unwrap(), 1);
        assert_eq!(brute_force_cover(&cmp, &cluster_grid(&cmp), 1.5).unwrap(), 2);
        assert!(matches!(
            brute_force_cover(&cmp, &same, 0.9),
            Err(Error::InfeasibleSigma(_))
        ));
        let big = vec![PolicyParams::uniform(&cmp); 21];
        assert!(matches!(
            brute_force_cover(&cmp, &big, 2.0),
            Err(Error::GridTooLarge(21, 20))
        ));
    }
}
