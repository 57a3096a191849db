//! Exact gradients of log-occupancies by implicit differentiation of the
//! flow system, and the follower/leader gradients of the cover game.
//!
//! Differentiating `(I - γ Pπᵀ) d_s = (1 - γ) μ` with respect to the free
//! logit `θ_p` gives
//!
//! ```text
//! (I - γ Pπᵀ) ∂d_s = γ (∂Pπᵀ/∂θ_p) d_s
//! ```
//!
//! so every parameter costs one extra solve against the factorization that
//! already produced `d_s`. Then `∇ log d_sa = ∇ log π(a|s) + ∇ d_s(s) / d_s(s)`.

use nalgebra::DMatrix;

use crate::cmp::{
    nearest_component, occupancy, solve_flow, softmax_table, CoverValue, Occupancy, PolicyFlow,
    PolicyParams, TabularCmp, DIVERGENCE_FLOOR,
};
use crate::error::{Error, Result};
use crate::game::CoverSet;

/// `G[s][a][p] = ∂ log d_sa(s,a) / ∂θ_p` over the free parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyJacobian {
    pub n_pairs: usize,
    pub n_params: usize,
    /// Pair-major, parameter-minor.
    pub grad_log_dsa: Vec<f64>,
}

impl OccupancyJacobian {
    pub fn get(&self, pair: usize, param: usize) -> f64 {
        self.grad_log_dsa[pair * self.n_params + param]
    }

    /// Row of partial derivatives for one state-action pair.
    pub fn row(&self, pair: usize) -> &[f64] {
        &self.grad_log_dsa[pair * self.n_params..(pair + 1) * self.n_params]
    }
}

/// A solved policy together with the Jacobian of its state distribution.
pub(crate) struct PolicyDerivatives {
    flow: PolicyFlow,
    n_params: usize,
    /// `∂ d_s[s] / ∂θ_p`, state-major.
    state_jac: Vec<f64>,
}

impl PolicyDerivatives {
    pub fn new(cmp: &TabularCmp, params: &PolicyParams) -> Result<Self> {
        params.check_shape(cmp)?;
        let flow = solve_flow(cmp, softmax_table(params))?;
        let rhs = flow_rhs(cmp, &flow, params.n_free());
        let state_jac = if rhs.ncols() == 0 {
            Vec::new()
        } else {
            let sol = flow
                .lu
                .solve(&rhs)
                .ok_or_else(|| Error::Config("occupancy flow system is singular".into()))?;
            row_major(&sol)
        };
        Ok(Self {
            n_params: params.n_free(),
            flow,
            state_jac,
        })
    }

    pub fn occ(&self) -> &Occupancy {
        &self.flow.occ
    }

    /// `Σ_{s,a} w[s,a] ∇ log d_sa(s,a)` without forming the full Jacobian.
    ///
    /// States whose mass is below the divergence floor contribute only their
    /// policy term.
    pub fn weighted_log_grad(&self, weights: &[f64]) -> Vec<f64> {
        let occ = &self.flow.occ;
        let n_a = occ.n_actions;
        let n_s = occ.d_s.len();
        let mut grad = vec![0.0; self.n_params];
        if self.n_params == 0 {
            return grad;
        }
        for s in 0..n_s {
            let row = &weights[s * n_a..(s + 1) * n_a];
            let total: f64 = row.iter().sum();
            // softmax term
            for a0 in 0..n_a - 1 {
                let p = s * (n_a - 1) + a0;
                grad[p] += row[a0] - self.flow.probs[s * n_a + a0] * total;
            }
            // state-distribution term
            let d = occ.d_s[s];
            if total != 0.0 && d >= DIVERGENCE_FLOOR {
                let scale = total / d;
                let jac = &self.state_jac[s * self.n_params..(s + 1) * self.n_params];
                for (g, j) in grad.iter_mut().zip(jac) {
                    *g += scale * j;
                }
            }
        }
        grad
    }

    pub fn jacobian(&self) -> OccupancyJacobian {
        jacobian_from_state(&self.flow, self.n_params, &self.state_jac)
    }
}

/// Right-hand sides `γ (∂Pπᵀ/∂θ_p) d_s`, one column per free parameter.
fn flow_rhs(cmp: &TabularCmp, flow: &PolicyFlow, n_params: usize) -> DMatrix<f64> {
    let (n_s, n_a) = (cmp.n_states(), cmp.n_actions());
    let gamma = cmp.discount();
    let mut rhs = DMatrix::zeros(n_s, n_params);
    if n_params == 0 {
        return rhs;
    }
    let mut mean_next = vec![0.0; n_s];
    for s0 in 0..n_s {
        mean_next.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..n_a {
            let pa = flow.probs[s0 * n_a + a];
            for (next, p) in cmp.next_dist(s0, a).iter().enumerate() {
                mean_next[next] += pa * p;
            }
        }
        let mass = flow.occ.d_s[s0];
        for a0 in 0..n_a - 1 {
            let p = s0 * (n_a - 1) + a0;
            // ∂π(a|s0)/∂θ_p = π(a|s0)(1[a = a0] - π(a0|s0))
            let scale = gamma * mass * flow.probs[s0 * n_a + a0];
            for (next, prob) in cmp.next_dist(s0, a0).iter().enumerate() {
                rhs[(next, p)] = scale * (prob - mean_next[next]);
            }
        }
    }
    rhs
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn jacobian_from_state(flow: &PolicyFlow, n_params: usize, state_jac: &[f64]) -> OccupancyJacobian {
    let occ = &flow.occ;
    let n_a = occ.n_actions;
    let n_s = occ.d_s.len();
    let mut g = vec![0.0; n_s * n_a * n_params];
    for s in 0..n_s {
        let d = occ.d_s[s];
        for a in 0..n_a {
            let row = &mut g[(s * n_a + a) * n_params..(s * n_a + a + 1) * n_params];
            if n_params > 0 {
                for a0 in 0..n_a - 1 {
                    let indicator = if a == a0 { 1.0 } else { 0.0 };
                    row[s * (n_a - 1) + a0] += indicator - flow.probs[s * n_a + a0];
                }
            }
            if d >= DIVERGENCE_FLOOR {
                for (r, j) in row.iter_mut().zip(&state_jac[s * n_params..(s + 1) * n_params]) {
                    *r += j / d;
                }
            }
        }
    }
    OccupancyJacobian {
        n_pairs: n_s * n_a,
        n_params,
        grad_log_dsa: g,
    }
}

/// Jacobian of the log state-action occupancy, one batched solve against
/// the flow factorization.
pub fn occupancy_grad(cmp: &TabularCmp, params: &PolicyParams) -> Result<OccupancyJacobian> {
    Ok(PolicyDerivatives::new(cmp, params)?.jacobian())
}

/// Same Jacobian as [`occupancy_grad`], solving one parameter at a time
/// against the same factorization.
pub fn occupancy_grad_per_param(
    cmp: &TabularCmp,
    params: &PolicyParams,
) -> Result<OccupancyJacobian> {
    params.check_shape(cmp)?;
    let flow = solve_flow(cmp, softmax_table(params))?;
    let n_params = params.n_free();
    let n_s = cmp.n_states();
    let rhs = flow_rhs(cmp, &flow, n_params);
    let mut state_jac = vec![0.0; n_s * n_params];
    for p in 0..n_params {
        let col = flow
            .lu
            .solve(&rhs.column(p).clone_owned())
            .ok_or_else(|| Error::Config("occupancy flow system is singular".into()))?;
        for s in 0..n_s {
            state_jac[s * n_params + p] = col[s];
        }
    }
    Ok(jacobian_from_state(&flow, n_params, &state_jac))
}

/// Weights `(d_target / d_behavior)²·d_behavior = d_target² / d_behavior`.
pub(crate) fn squared_ratio_weights(target: &[f64], behavior: &[f64]) -> Option<Vec<f64>> {
    let mut w = Vec::with_capacity(target.len());
    for (&t, &b) in target.iter().zip(behavior) {
        if t <= 0.0 {
            w.push(0.0);
        } else if b < DIVERGENCE_FLOOR {
            return None;
        } else {
            w.push(t * t / b);
        }
    }
    Some(w)
}

/// Follower ascent direction against precomputed leader occupancies.
pub(crate) fn follower_step_direction(
    leader: &[Occupancy],
    follower: &PolicyDerivatives,
) -> Result<(CoverValue, Vec<f64>)> {
    let cv = nearest_component(leader, follower.occ());
    if !cv.value.is_finite() {
        return Err(Error::NoAscentDirection);
    }
    let mut w = squared_ratio_weights(&follower.occ().d_sa, &leader[cv.active_index].d_sa)
        .ok_or(Error::NoAscentDirection)?;
    w.iter_mut().for_each(|v| *v *= 2.0);
    Ok((cv, follower.weighted_log_grad(&w)))
}

/// `∇_μ f = 2 Σ d_θk (d_μ / d_θk)² ∇_μ log d_μ` with `θk` the active
/// leader component.
pub fn follower_gradient(
    cmp: &TabularCmp,
    leader: &CoverSet,
    follower: &PolicyParams,
) -> Result<Vec<f64>> {
    let leader_occs = leader.occupancies(cmp)?;
    let derivs = PolicyDerivatives::new(cmp, follower)?;
    Ok(follower_step_direction(&leader_occs, &derivs)?.1)
}

/// `∇_θk f = -Σ d_θk (d_μ / d_θk)² ∇_θk log d_θk` for the component at
/// `active_index`.
pub fn leader_gradient(
    cmp: &TabularCmp,
    leader: &CoverSet,
    follower: &PolicyParams,
    active_index: usize,
) -> Result<Vec<f64>> {
    let component = leader.components.get(active_index).ok_or_else(|| {
        Error::Config(format!(
            "active index {active_index} out of range for {} components",
            leader.components.len()
        ))
    })?;
    let follower_occ = occupancy(cmp, follower)?;
    let derivs = PolicyDerivatives::new(cmp, component)?;
    leader_step_direction(&follower_occ, &derivs)
}

pub(crate) fn leader_step_direction(
    follower: &Occupancy,
    component: &PolicyDerivatives,
) -> Result<Vec<f64>> {
    let mut w = squared_ratio_weights(&follower.d_sa, &component.occ().d_sa)
        .ok_or(Error::NoAscentDirection)?;
    w.iter_mut().for_each(|v| *v = -*v);
    Ok(component.weighted_log_grad(&w))
}
