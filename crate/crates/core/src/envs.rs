//! Built-in environments.

use serde::{Deserialize, Serialize};

use crate::cmp::TabularCmp;
use crate::error::{Error, Result};
use crate::tasks::RewardFn;

pub const SWIM_DOWN: usize = 0;
pub const SWIM_UP: usize = 1;

/// River Swim parameters. Swimming down always moves one state left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiverSwimParams {
    pub n_states: usize,
    /// Swim-up outcome in a middle state.
    pub up_forward: f64,
    pub up_stay: f64,
    pub up_backward: f64,
    /// Swim-up outcome in the leftmost state.
    pub first_forward: f64,
    /// Swim-up outcome in the rightmost state.
    pub last_stay: f64,
    pub discount: f64,
    pub rmax: f64,
}

impl Default for RiverSwimParams {
    fn default() -> Self {
        Self {
            n_states: 6,
            up_forward: 0.35,
            up_stay: 0.60,
            up_backward: 0.05,
            first_forward: 0.35,
            last_stay: 0.60,
            discount: 0.95,
            rmax: 100.0,
        }
    }
}

/// River Swim chain with reward `rmax` for swimming up in the last state.
pub fn river_swim(params: &RiverSwimParams) -> Result<(TabularCmp, RewardFn)> {
    let n = params.n_states;
    if n < 2 {
        return Err(Error::Validation("river swim needs at least two states".into()));
    }
    let probs = [
        params.up_forward,
        params.up_stay,
        params.up_backward,
        params.first_forward,
        params.last_stay,
    ];
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Validation(format!(
            "river swim probabilities must lie in [0, 1], got {probs:?}"
        )));
    }
    let mut transition = vec![0.0; n * 2 * n];
    let idx = |s: usize, a: usize, next: usize| (s * 2 + a) * n + next;
    for s in 0..n {
        transition[idx(s, SWIM_DOWN, s.saturating_sub(1))] = 1.0;
        if s == 0 {
            transition[idx(s, SWIM_UP, 1)] = params.first_forward;
            transition[idx(s, SWIM_UP, 0)] = 1.0 - params.first_forward;
        } else if s == n - 1 {
            transition[idx(s, SWIM_UP, s)] = params.last_stay;
            transition[idx(s, SWIM_UP, s - 1)] = 1.0 - params.last_stay;
        } else {
            transition[idx(s, SWIM_UP, s + 1)] = params.up_forward;
            transition[idx(s, SWIM_UP, s)] = params.up_stay;
            transition[idx(s, SWIM_UP, s - 1)] = params.up_backward;
        }
    }
    let mut init = vec![0.0; n];
    init[0] = 1.0;
    let cmp = TabularCmp::new(n, 2, transition, init, params.discount)?;
    let mut table = vec![0.0; n * 2];
    table[(n - 1) * 2 + SWIM_UP] = params.rmax;
    let reward = RewardFn::new(n, 2, table, params.rmax)?;
    Ok((cmp, reward))
}

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;

/// Deterministic grid with moves up, down, left and right. Moves off the
/// grid leave the agent in place; `μ` is uniform.
pub fn gridworld(rows: usize, cols: usize, discount: f64) -> Result<TabularCmp> {
    let n = rows * cols;
    if n < 2 {
        return Err(Error::Validation("gridworld needs at least two cells".into()));
    }
    let mut transition = vec![0.0; n * 4 * n];
    for r in 0..rows {
        for c in 0..cols {
            let s = r * cols + c;
            let targets = [
                if r > 0 { s - cols } else { s },
                if r + 1 < rows { s + cols } else { s },
                if c > 0 { s - 1 } else { s },
                if c + 1 < cols { s + 1 } else { s },
            ];
            for (a, next) in targets.into_iter().enumerate() {
                transition[(s * 4 + a) * n + next] = 1.0;
            }
        }
    }
    TabularCmp::new(n, 4, transition, vec![1.0 / n as f64; n], discount)
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 2] = ["river-swim", "grid-3x3"];

/// Looks up a built-in environment, with its reward when one is defined.
pub fn builtin(name: &str, discount: Option<f64>) -> Result<(TabularCmp, Option<RewardFn>)> {
    match name {
        "river-swim" => {
            let mut params = RiverSwimParams::default();
            if let Some(g) = discount {
                params.discount = g;
            }
            let (cmp, reward) = river_swim(&params)?;
            Ok((cmp, Some(reward)))
        }
        "grid-3x3" => Ok((gridworld(3, 3, discount.unwrap_or(0.95))?, None)),
        other => Err(Error::Config(format!(
            "unknown environment '{other}', expected one of {BUILTIN_NAMES:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmp::{occupancy, occupancy_from_probs, PolicyParams};

    #[test]
    fn river_swim_defaults_are_valid() {
        let (cmp, reward) = river_swim(&RiverSwimParams::default()).unwrap();
        assert_eq!((cmp.n_states(), cmp.n_actions()), (6, 2));
        assert_eq!(cmp.discount(), 0.95);
        for s in 0..6 {
            for a in 0..2 {
                let expected = if (s, a) == (5, SWIM_UP) { 100.0 } else { 0.0 };
                assert_eq!(reward.get(s, a), expected);
            }
        }
    }

    #[test]
    fn swimming_down_stays_home() {
        let (cmp, _) = river_swim(&RiverSwimParams::default()).unwrap();
        let down: Vec<f64> = (0..6).flat_map(|_| [1.0, 0.0]).collect();
        let occ = occupancy_from_probs(&cmp, &down).unwrap();
        assert!(occ.d_s[0] >= 0.99);
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        let params = RiverSwimParams {
            up_forward: 0.5,
            ..RiverSwimParams::default()
        };
        assert!(river_swim(&params).is_err());
        let params = RiverSwimParams {
            first_forward: 1.5,
            ..RiverSwimParams::default()
        };
        assert!(river_swim(&params).is_err());
    }

    #[test]
    fn grid_corners_self_loop_twice() {
        let cmp = gridworld(3, 3, 0.95).unwrap();
        assert_eq!((cmp.n_states(), cmp.n_actions()), (9, 4));
        let loops = (0..4).filter(|&a| cmp.prob(0, a, 0) == 1.0).count();
        assert_eq!(loops, 2);
        assert_eq!(cmp.prob(4, RIGHT, 5), 1.0);
        assert_eq!(cmp.prob(4, UP, 1), 1.0);
    }

    #[test]
    fn uniform_grid_occupancy_is_rotation_symmetric() {
        let cmp = gridworld(3, 3, 0.95).unwrap();
        let occ = occupancy(&cmp, &PolicyParams::uniform(&cmp)).unwrap();
        // 90° clockwise: (r, c) -> (c, 2 - r)
        for r in 0..3 {
            for c in 0..3 {
                let rotated = c * 3 + (2 - r);
                assert!((occ.d_s[r * 3 + c] - occ.d_s[rotated]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn builtin_lookup() {
        assert!(builtin("river-swim", None).unwrap().1.is_some());
        assert_eq!(builtin("grid-3x3", Some(0.9)).unwrap().0.discount(), 0.9);
        assert!(builtin("maze", None).is_err());
    }
}
