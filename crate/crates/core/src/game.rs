//! Leader–follower cover game solved by gradient descent ascent with the
//! follower fully converged before every leader step.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cmp::{nearest_component, occupancy, CoverValue, Occupancy, PolicyParams, TabularCmp};
use crate::error::{Error, Result};
use crate::grad::{follower_step_direction, leader_step_direction, PolicyDerivatives};

/// Ordered leader policies `(θ₁, …, θ_K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSet {
    pub components: Vec<PolicyParams>,
    /// GDA epochs spent on the current set.
    pub epochs: usize,
}

impl CoverSet {
    pub fn new(components: Vec<PolicyParams>) -> Self {
        Self {
            components,
            epochs: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn validate(&self, cmp: &TabularCmp) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("leader must hold at least one policy".into()));
        }
        self.components.iter().try_for_each(|c| c.check_shape(cmp))
    }

    pub fn occupancies(&self, cmp: &TabularCmp) -> Result<Vec<Occupancy>> {
        self.validate(cmp)?;
        self.components.iter().map(|p| occupancy(cmp, p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdaConfig {
    /// Leader descent rate α.
    pub leader_rate: f64,
    /// Follower ascent rate β.
    pub follower_rate: f64,
    /// Accepted follower steps grow the rate by 1.5× up to this multiple
    /// of `follower_rate`; rejected steps halve it.
    pub follower_rate_growth_cap: f64,
    /// Follower stops once `‖∇_μ f‖∞` falls below this.
    pub follower_tol: f64,
    pub follower_max_steps: usize,
    /// Ascent also stops after `STALL_STEPS` accepted steps in a row that
    /// each raise `f` by less than this fraction of its value.
    pub follower_stall_tol: f64,
    /// Largest epoch-to-epoch change of the best-response value over the
    /// convergence window that still counts as converged.
    pub leader_convergence_tol: f64,
    pub convergence_window: usize,
    pub max_epochs: usize,
    /// Random follower restarts per best response, on top of the warm start.
    pub restarts: usize,
    /// Standard deviation of the logits of a random follower restart.
    pub restart_scale: f64,
    /// Halve the leader rate instead of taking a step that raises the
    /// best-response value by more than `monotone_slack`.
    pub leader_backtracking: bool,
    pub monotone_slack: f64,
    /// Round stops when backtracking drives the leader rate below this.
    pub min_leader_rate: f64,
}

impl Default for GdaConfig {
    fn default() -> Self {
        Self {
            leader_rate: 0.005,
            follower_rate: 0.1,
            follower_rate_growth_cap: 1e3,
            follower_tol: 1e-4,
            follower_max_steps: 2_000,
            follower_stall_tol: 1e-8,
            leader_convergence_tol: 1e-4,
            convergence_window: 10,
            max_epochs: 2_000,
            restarts: 5,
            restart_scale: 1.0,
            leader_backtracking: true,
            monotone_slack: 1e-6,
            min_leader_rate: 1e-6,
        }
    }
}

impl GdaConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("leader_rate", self.leader_rate),
            ("follower_rate", self.follower_rate),
            ("follower_tol", self.follower_tol),
            ("leader_convergence_tol", self.leader_convergence_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.follower_max_steps == 0 || self.max_epochs == 0 || self.convergence_window == 0 {
            return Err(Error::Config(
                "step caps, epoch caps and the convergence window must be positive".into(),
            ));
        }
        if !(self.follower_rate_growth_cap >= 1.0) {
            return Err(Error::Config("follower_rate_growth_cap must be at least 1".into()));
        }
        if self.restart_scale < 0.0 || !(self.follower_stall_tol >= 0.0) {
            return Err(Error::Config("restart_scale and follower_stall_tol must be non-negative".into()));
        }
        Ok(())
    }
}

/// Outcome of the follower's inner maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub follower: PolicyParams,
    pub value: f64,
    pub active_index: usize,
    /// The returned candidate reached `follower_tol`.
    pub converged: bool,
    /// Index of the winning candidate, 0 for the supplied initialization.
    pub candidate: usize,
    pub steps: usize,
}

struct Ascent {
    params: PolicyParams,
    value: CoverValue,
    converged: bool,
    steps: usize,
}

const STALL_STEPS: usize = 20;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Gradient ascent on `f(θ, ·)` from `init`.
///
/// A step that lowers `f` is retried with half the rate; accepted steps
/// grow the rate up to `β · follower_rate_growth_cap`.
fn ascend(
    cmp: &TabularCmp,
    leader: &[Occupancy],
    init: PolicyParams,
    cfg: &GdaConfig,
) -> Result<Ascent> {
    let mut params = init;
    let derivs = PolicyDerivatives::new(cmp, &params)?;
    let (mut value, mut grad) = follower_step_direction(leader, &derivs)?;
    let mut rate = cfg.follower_rate;
    let mut steps = 0;
    let mut converged = false;
    let mut stalled = 0;
    while steps < cfg.follower_max_steps && stalled < STALL_STEPS {
        if inf_norm(&grad) <= cfg.follower_tol {
            converged = true;
            break;
        }
        steps += 1;
        let mut trial = params.clone();
        for (t, g) in trial.free_mut().iter_mut().zip(&grad) {
            *t += rate * g;
        }
        let trial_derivs = PolicyDerivatives::new(cmp, &trial)?;
        let (trial_value, trial_grad) = match follower_step_direction(leader, &trial_derivs) {
            Ok(v) => v,
            Err(Error::NoAscentDirection) => {
                rate *= 0.5;
                continue;
            }
            Err(e) => return Err(e),
        };
        if trial_value.value >= value.value {
            if trial_value.value - value.value < cfg.follower_stall_tol * value.value.abs() {
                stalled += 1;
            } else {
                stalled = 0;
            }
            params = trial;
            value = trial_value;
            grad = trial_grad;
            rate = (rate * 1.5).min(cfg.follower_rate * cfg.follower_rate_growth_cap);
        } else {
            rate *= 0.5;
            if rate < 1e-12 * cfg.follower_rate {
                break;
            }
        }
    }
    if !converged {
        converged = inf_norm(&grad) <= cfg.follower_tol;
    }
    Ok(Ascent {
        params,
        value,
        converged,
        steps,
    })
}

pub(crate) fn random_follower<R: Rng>(rng: &mut R, cmp: &TabularCmp, scale: f64) -> PolicyParams {
    let mut params = PolicyParams::uniform(cmp);
    if scale > 0.0 {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        for v in params.free_mut() {
            *v = normal.sample(rng);
        }
    }
    params
}

/// Single-start ascent returning the final follower and its value.
pub(crate) fn ascend_from(
    cmp: &TabularCmp,
    leader: &[Occupancy],
    init: PolicyParams,
    cfg: &GdaConfig,
) -> Result<(PolicyParams, CoverValue)> {
    let ascent = ascend(cmp, leader, init, cfg)?;
    Ok((ascent.params, ascent.value))
}

/// Best response against precomputed leader occupancies.
pub(crate) fn best_response_occ(
    cmp: &TabularCmp,
    leader: &[Occupancy],
    follower_init: &PolicyParams,
    cfg: &GdaConfig,
    seed: u64,
) -> Result<BestResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inits = vec![follower_init.clone()];
    for _ in 0..cfg.restarts {
        inits.push(random_follower(&mut rng, cmp, cfg.restart_scale));
    }
    let mut best: Option<BestResponse> = None;
    let mut total_steps = 0;
    for (candidate, init) in inits.into_iter().enumerate() {
        let ascent = ascend(cmp, leader, init, cfg)?;
        total_steps += ascent.steps;
        let better = best
            .as_ref()
            .is_none_or(|b| ascent.value.value > b.value);
        if better {
            best = Some(BestResponse {
                follower: ascent.params,
                value: ascent.value.value,
                active_index: ascent.value.active_index,
                converged: ascent.converged,
                candidate,
                steps: 0,
            });
        }
    }
    let mut best = best.expect("at least the initial candidate");
    best.steps = total_steps;
    Ok(best)
}

/// Follower best response: multi-start gradient ascent on
/// `f(θ, μ) = min_k D₂(d_μ ‖ d_θk)`.
///
/// Candidates are the supplied initialization followed by `cfg.restarts`
/// random restarts drawn from `seed`; the highest value wins, ties going to
/// the lowest candidate index.
pub fn best_response(
    cmp: &TabularCmp,
    leader: &CoverSet,
    follower_init: &PolicyParams,
    cfg: &GdaConfig,
    seed: u64,
) -> Result<BestResponse> {
    cfg.validate()?;
    follower_init.check_shape(cmp)?;
    let occs = leader.occupancies(cmp)?;
    best_response_occ(cmp, &occs, follower_init, cfg, seed)
}

/// Per-epoch record of one GDA round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Best-response value `f` at every epoch.
    pub values: Vec<f64>,
    pub active: Vec<usize>,
    /// Leader rate in force at every epoch.
    pub leader_rates: Vec<f64>,
    pub converged: bool,
    pub final_follower: PolicyParams,
    pub final_value: f64,
    pub final_active: usize,
}

fn no_restarts(cfg: &GdaConfig) -> GdaConfig {
    GdaConfig {
        restarts: 0,
        ..cfg.clone()
    }
}

fn window_converged(values: &[f64], window: usize, tol: f64) -> bool {
    if values.len() <= window {
        return false;
    }
    values[values.len() - window - 1..]
        .windows(2)
        .all(|w| (w[1] - w[0]).abs() < tol)
}

/// One GDA round at fixed `K`: repeat best response, active component,
/// leader descent step, until the best-response value settles.
pub fn gda_round(
    cmp: &TabularCmp,
    leader: &CoverSet,
    cfg: &GdaConfig,
    seed: u64,
) -> Result<(CoverSet, RoundTrace)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = random_follower(&mut rng, cmp, cfg.restart_scale);
    gda_round_from(cmp, leader, &init, cfg, rng.random())
}

pub(crate) fn gda_round_from(
    cmp: &TabularCmp,
    leader: &CoverSet,
    follower_init: &PolicyParams,
    cfg: &GdaConfig,
    seed: u64,
) -> Result<(CoverSet, RoundTrace)> {
    cfg.validate()?;
    follower_init.check_shape(cmp)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut leader = leader.clone();
    let mut occs = leader.occupancies(cmp)?;
    let mut br = best_response_occ(cmp, &occs, follower_init, cfg, rng.random())?;
    let mut rate = cfg.leader_rate;
    let mut trace = RoundTrace {
        values: Vec::new(),
        active: Vec::new(),
        leader_rates: Vec::new(),
        converged: false,
        final_follower: br.follower.clone(),
        final_value: br.value,
        final_active: br.active_index,
    };

    for _ in 0..cfg.max_epochs {
        trace.values.push(br.value);
        trace.active.push(br.active_index);
        trace.leader_rates.push(rate);
        leader.epochs += 1;
        if window_converged(&trace.values, cfg.convergence_window, cfg.leader_convergence_tol) {
            trace.converged = true;
            break;
        }

        let k = br.active_index;
        let follower_occ = occupancy(cmp, &br.follower)?;
        let derivs = PolicyDerivatives::new(cmp, &leader.components[k])?;
        let grad = leader_step_direction(&follower_occ, &derivs)?;
        let mut trial = leader.components[k].clone();
        for (t, g) in trial.free_mut().iter_mut().zip(&grad) {
            *t -= rate * g;
        }
        let mut trial_occs = occs.clone();
        trial_occs[k] = occupancy(cmp, &trial)?;
        let next = best_response_occ(cmp, &trial_occs, &br.follower, cfg, rng.random())?;

        if cfg.leader_backtracking && next.value > br.value + cfg.monotone_slack {
            // a higher peak that the current leader already had
            let before = nearest_component(&occs, &occupancy(cmp, &next.follower)?);
            if before.value > br.value + cfg.monotone_slack {
                br = best_response_occ(cmp, &occs, &next.follower, &no_restarts(cfg), 0)?;
                continue;
            }
            rate *= 0.5;
            if rate < cfg.min_leader_rate {
                trace.converged = true;
                break;
            }
            continue;
        }
        leader.components[k] = trial;
        occs = trial_occs;
        br = next;
    }
    trace.final_follower = br.follower;
    trace.final_value = br.value;
    trace.final_active = br.active_index;
    Ok((leader, trace))
}

/// First- and second-order stationarity of a leader/follower pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseReport {
    pub active_index: usize,
    pub value: f64,
    pub leader_grad_norm: f64,
    pub follower_grad_norm: f64,
    pub leader_hessian_min_eig: f64,
    pub follower_hessian_max_eig: f64,
    pub is_dse: bool,
}

/// Symmetrized Hessian from central differences of an exact gradient.
fn hessian_fd(
    x: &PolicyParams,
    h: f64,
    mut grad: impl FnMut(&PolicyParams) -> Result<Vec<f64>>,
) -> Result<DMatrix<f64>> {
    let n = x.n_free();
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = x.clone();
        plus.free_mut()[j] += h;
        let mut minus = x.clone();
        minus.free_mut()[j] -= h;
        let (gp, gm) = (grad(&plus)?, grad(&minus)?);
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

fn eigen_extremes(m: DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = SymmetricEigen::new(m).eigenvalues;
    (eig.min(), eig.max())
}

/// Checks the differential Stackelberg conditions at `(leader, follower)`:
/// both gradients below `grad_tol`, the active leader block positive
/// semidefinite and the follower block negative semidefinite (eigenvalue
/// slack `1e-6`).
pub fn dse_check(
    cmp: &TabularCmp,
    leader: &CoverSet,
    follower: &PolicyParams,
    grad_tol: f64,
) -> Result<DseReport> {
    const EIG_SLACK: f64 = 1e-6;
    const H: f64 = 1e-5;
    let occs = leader.occupancies(cmp)?;
    let follower_occ = occupancy(cmp, follower)?;
    let cv = nearest_component(&occs, &follower_occ);
    if !cv.value.is_finite() {
        return Err(Error::NoAscentDirection);
    }
    let k = cv.active_index;
    let active_occ = &occs[k];

    let follower_grad = |mu: &PolicyParams| -> Result<Vec<f64>> {
        let derivs = PolicyDerivatives::new(cmp, mu)?;
        Ok(follower_step_direction(std::slice::from_ref(active_occ), &derivs)?.1)
    };
    let leader_grad = |theta: &PolicyParams| -> Result<Vec<f64>> {
        let derivs = PolicyDerivatives::new(cmp, theta)?;
        leader_step_direction(&follower_occ, &derivs)
    };

    let follower_grad_norm = inf_norm(&follower_grad(follower)?);
    let leader_grad_norm = inf_norm(&leader_grad(&leader.components[k])?);
    let (leader_min, _) = eigen_extremes(hessian_fd(&leader.components[k], H, leader_grad)?);
    let (_, follower_max) = eigen_extremes(hessian_fd(follower, H, follower_grad)?);
    let is_dse = leader_grad_norm <= grad_tol
        && follower_grad_norm <= grad_tol
        && leader_min >= -EIG_SLACK
        && follower_max <= EIG_SLACK;
    Ok(DseReport {
        active_index: k,
        value: cv.value,
        leader_grad_norm,
        follower_grad_norm,
        leader_hessian_min_eig: leader_min,
        follower_hessian_max_eig: follower_max,
        is_dse,
    })
}
