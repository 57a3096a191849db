//! Policy space compression: grow the leader one policy at a time, play the
//! cover game, certify with the flow LP, stop once the bound meets `σ`.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cmp::TabularCmp;
use crate::error::{Error, Result};
use crate::game::{dse_check, gda_round, CoverSet, DseReport, GdaConfig};
use crate::guarantee::{guarantee_from_occs, lp_value_occs};
use crate::instances::random_params;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PscaConfig {
    pub gda: GdaConfig,
    pub max_k: usize,
    /// Random starts of the worst-case estimate reported each round.
    pub z_restarts: usize,
    /// Logit standard deviation of the first leader policy.
    pub init_scale: f64,
    /// Gradient tolerance of the per-round stationarity report.
    pub dse_tol: f64,
}

impl Default for PscaConfig {
    fn default() -> Self {
        Self {
            gda: GdaConfig::default(),
            max_k: 16,
            z_restarts: 5,
            init_scale: 0.1,
            dse_tol: 1e-3,
        }
    }
}

impl PscaConfig {
    pub fn validate(&self) -> Result<()> {
        self.gda.validate()?;
        if self.max_k == 0 {
            return Err(Error::Config("max_k must be at least 1".into()));
        }
        if self.z_restarts == 0 {
            return Err(Error::Config("z_restarts must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0) || !(self.dse_tol > 0.0) {
            return Err(Error::Config("init_scale and dse_tol must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub cover: CoverSet,
    pub sigma: f64,
    /// LP optimum `V` after each round.
    pub lp_value_trace: Vec<f64>,
    /// Certified bound `B = V²` after each round.
    pub cover_bound_trace: Vec<f64>,
    pub z_estimate_trace: Vec<f64>,
    pub epochs_per_round: Vec<usize>,
    pub gda_converged: Vec<bool>,
    /// The round's GDA leader certified worse than its warm start, which
    /// was kept instead.
    pub kept_warm_start: Vec<bool>,
    /// Best-response value at every epoch of every round.
    pub round_values: Vec<Vec<f64>>,
    pub dse: Vec<DseReport>,
    pub seed: u64,
    pub converged: bool,
    pub config: PscaConfig,
}

impl CompressionReport {
    pub fn k(&self) -> usize {
        self.cover.k()
    }

    pub fn final_bound(&self) -> f64 {
        *self.cover_bound_trace.last().unwrap_or(&f64::INFINITY)
    }
}

/// Runs the compression loop until the certified bound drops to `σ` or the
/// leader reaches `cfg.max_k` policies.
pub fn compress(
    cmp: &TabularCmp,
    sigma: f64,
    cfg: &PscaConfig,
    seed: u64,
) -> Result<CompressionReport> {
    if !(sigma > 1.0) {
        return Err(Error::InfeasibleSigma(sigma));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = CompressionReport {
        cover: CoverSet::new(Vec::new()),
        sigma,
        lp_value_trace: Vec::new(),
        cover_bound_trace: Vec::new(),
        z_estimate_trace: Vec::new(),
        epochs_per_round: Vec::new(),
        gda_converged: Vec::new(),
        kept_warm_start: Vec::new(),
        round_values: Vec::new(),
        dse: Vec::new(),
        seed,
        converged: false,
        config: cfg.clone(),
    };
    let mut leader = CoverSet::new(Vec::new());
    let mut last_follower = None;

    for k in 1..=cfg.max_k {
        let newcomer = match last_follower.take() {
            Some(f) => f,
            None => random_params(&mut rng, cmp, cfg.init_scale),
        };
        leader.components.push(newcomer);
        leader.epochs = 0;

        let warm_value = lp_value_occs(cmp, &leader.occupancies(cmp)?)?;
        let (mut next, trace) = gda_round(cmp, &leader, &cfg.gda, rng.random())?;
        let mut occs = next.occupancies(cmp)?;
        let keep_warm = lp_value_occs(cmp, &occs)? > warm_value;
        if keep_warm {
            debug!("K={k}: GDA leader certifies worse than its warm start, keeping the latter");
            leader.epochs = next.epochs;
            next = leader;
            occs = next.occupancies(cmp)?;
        }
        leader = next;
        let g = guarantee_from_occs(cmp, &occs, cfg.z_restarts, rng.random())?;
        let dse = dse_check(cmp, &leader, &trace.final_follower, cfg.dse_tol)?;
        info!(
            "K={k}: epochs={} f={:.4} V={:.4} B={:.4} z={:.4}",
            leader.epochs, trace.final_value, g.lp_value, g.cover_bound, g.z_estimate
        );
        debug!("K={k}: dse={dse:?}");

        report.lp_value_trace.push(g.lp_value);
        report.cover_bound_trace.push(g.cover_bound);
        report.z_estimate_trace.push(g.z_estimate);
        report.epochs_per_round.push(leader.epochs);
        report.gda_converged.push(trace.converged);
        report.kept_warm_start.push(keep_warm);
        report.round_values.push(trace.values);
        report.dse.push(dse);
        last_follower = Some(trace.final_follower);

        if g.cover_bound <= sigma {
            report.converged = true;
            break;
        }
    }
    report.cover = leader;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guarantee::is_sigma_compression;

    #[test]
    fn single_action_needs_one_policy() {
        let cmp = TabularCmp::new(2, 1, vec![0.5, 0.5, 0.1, 0.9], vec![1.0, 0.0], 0.9).unwrap();
        let report = compress(&cmp, 2.0, &PscaConfig::default(), 0).unwrap();
        assert!(report.converged);
        assert_eq!(report.k(), 1);
        assert_eq!(report.cover_bound_trace.len(), 1);
        assert!(is_sigma_compression(&cmp, &report.cover, 2.0).unwrap().certified);
    }

    #[test]
    fn sigma_at_most_one_is_rejected() {
        let cmp = TabularCmp::new(1, 1, vec![1.0], vec![1.0], 0.5).unwrap();
        assert!(matches!(
            compress(&cmp, 1.0, &PscaConfig::default(), 0),
            Err(Error::InfeasibleSigma(_))
        ));
    }

    #[test]
    fn bandit_compression_is_certified_and_reproducible() {
        let cmp = TabularCmp::new(1, 3, vec![1.0; 3], vec![1.0], 0.9).unwrap();
        let cfg = PscaConfig::default();
        let a = compress(&cmp, 3.5, &cfg, 11).unwrap();
        let b = compress(&cmp, 3.5, &cfg, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.converged);
        assert!(a.final_bound() <= 3.5);
        assert_eq!(a.cover_bound_trace.len(), a.k());
    }
}
