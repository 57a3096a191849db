//! Dense-tableau two-phase simplex with Bland's anti-cycling rule.
//!
//! Problems are stated as
//!
//! ```text
//! maximize    cᵀx
//! subject to  A_eq x  = b_eq
//!             A_le x <= b_le
//!             x_j >= 0  or  x_j free
//! ```
//!
//! Free variables are split into a difference of two non-negative columns.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivot elements and ratio-test denominators below this are zero.
const PIVOT_EPS: f64 = 1e-11;
/// Reduced-cost optimality tolerance.
const COST_EPS: f64 = 1e-9;
/// Largest phase-one objective still accepted as feasible.
const FEAS_EPS: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarBound {
    NonNegative,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub var_names: Vec<String>,
    pub bounds: Vec<VarBound>,
    /// Maximized.
    pub objective: Vec<f64>,
    pub equalities: Vec<LinearRow>,
    /// `coeffs · x <= rhs`.
    pub inequalities: Vec<LinearRow>,
}

impl LpProblem {
    /// Empty problem over `n_vars` non-negative variables named `x0, x1, …`.
    pub fn new(n_vars: usize) -> Self {
        Self {
            var_names: (0..n_vars).map(|j| format!("x{j}")).collect(),
            bounds: vec![VarBound::NonNegative; n_vars],
            objective: vec![0.0; n_vars],
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_equality(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.equalities.push(LinearRow { coeffs, rhs });
    }

    pub fn add_inequality(&mut self, coeffs: Vec<f64>, rhs: f64) {
        self.inequalities.push(LinearRow { coeffs, rhs });
    }

    fn check(&self) -> Result<()> {
        let n = self.n_vars();
        if self.bounds.len() != n || self.var_names.len() != n {
            return Err(Error::Dimension(
                "bounds and names must cover every variable".into(),
            ));
        }
        for row in self.equalities.iter().chain(&self.inequalities) {
            if row.coeffs.len() != n {
                return Err(Error::Dimension(format!(
                    "constraint has {} coefficients, expected {n}",
                    row.coeffs.len()
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::Validation("constraint data must be finite".into()));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let dot = |row: &LinearRow| row.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        let eq = self
            .equalities
            .iter()
            .map(|r| (dot(r) - r.rhs).abs())
            .fold(0.0, f64::max);
        let le = self
            .inequalities
            .iter()
            .map(|r| (dot(r) - r.rhs).max(0.0))
            .fold(0.0, f64::max);
        let bounds = x
            .iter()
            .zip(&self.bounds)
            .map(|(v, b)| match b {
                VarBound::NonNegative => (-v).max(0.0),
                VarBound::Free => 0.0,
            })
            .fold(0.0, f64::max);
        eq.max(le).max(bounds)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// CPLEX-LP style text dump for cross-checking with external solvers.
    pub fn to_lp_text(&self) -> String {
        fn terms(out: &mut String, coeffs: &[f64], names: &[String]) {
            let mut first = true;
            for (c, name) in coeffs.iter().zip(names) {
                if *c == 0.0 {
                    continue;
                }
                if first {
                    let _ = write!(out, "{c} {name}");
                    first = false;
                } else if *c < 0.0 {
                    let _ = write!(out, " - {} {name}", -c);
                } else {
                    let _ = write!(out, " + {c} {name}");
                }
            }
            if first {
                out.push('0');
            }
        }
        let mut out = String::from("Maximize\n obj: ");
        terms(&mut out, &self.objective, &self.var_names);
        out.push_str("\nSubject To\n");
        for (i, row) in self.equalities.iter().enumerate() {
            let _ = write!(out, " eq{i}: ");
            terms(&mut out, &row.coeffs, &self.var_names);
            let _ = writeln!(out, " = {}", row.rhs);
        }
        for (i, row) in self.inequalities.iter().enumerate() {
            let _ = write!(out, " le{i}: ");
            terms(&mut out, &row.coeffs, &self.var_names);
            let _ = writeln!(out, " <= {}", row.rhs);
        }
        out.push_str("Bounds\n");
        for (name, b) in self.var_names.iter().zip(&self.bounds) {
            match b {
                VarBound::NonNegative => {
                    let _ = writeln!(out, " {name} >= 0");
                }
                VarBound::Free => {
                    let _ = writeln!(out, " {name} free");
                }
            }
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub optimum: f64,
    pub witness: Vec<f64>,
    /// Largest constraint violation of the witness.
    pub max_residual: f64,
    /// Most positive reduced cost at termination (optimality certificate).
    pub max_reduced_cost: f64,
    pub pivots: usize,
}

struct Tableau {
    /// `rows × (cols + 1)`, last column is the right-hand side.
    rows: Vec<Vec<f64>>,
    /// Objective row holds `z_j - c_j`; negative entries may enter.
    obj: Vec<f64>,
    basis: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.cols]
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Installs the maximization objective `cost` and prices out the basis.
    fn set_objective(&mut self, cost: &[f64]) {
        self.obj = cost.iter().map(|c| -c).collect();
        self.obj.push(0.0);
        for i in 0..self.rows.len() {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                for (o, v) in self.obj.iter_mut().zip(&self.rows[i]) {
                    *o += cb * v;
                }
            }
        }
    }

    /// Primal simplex with Bland's rule over the columns flagged `allowed`.
    fn optimize(&mut self, allowed: &[bool]) -> Result<()> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::LpPivotLimit(MAX_PIVOTS));
            }
            let Some(enter) = (0..self.cols).find(|&j| allowed[j] && self.obj[j] < -COST_EPS)
            else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][enter];
                if a > PIVOT_EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match leave {
                        None => true,
                        Some((l, best)) => {
                            ratio < best - 1e-12
                                || (ratio <= best + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return Err(Error::LpUnbounded),
            }
        }
    }
}

/// Solves `problem` to optimality.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution> {
    problem.check()?;
    let n = problem.n_vars();

    // structural columns: one per non-negative variable, two per free one
    let mut col_of = Vec::with_capacity(n);
    let mut n_struct = 0;
    for b in &problem.bounds {
        col_of.push(n_struct);
        n_struct += match b {
            VarBound::NonNegative => 1,
            VarBound::Free => 2,
        };
    }
    let n_eq = problem.equalities.len();
    let n_le = problem.inequalities.len();
    let m = n_eq + n_le;
    let slack0 = n_struct;
    let art0 = slack0 + n_le;

    // decide which rows need an artificial column
    let mut rows_data: Vec<(Vec<f64>, f64, Option<f64>)> = Vec::with_capacity(m);
    for row in &problem.equalities {
        rows_data.push((row.coeffs.clone(), row.rhs, None));
    }
    for row in &problem.inequalities {
        rows_data.push((row.coeffs.clone(), row.rhs, Some(1.0)));
    }
    let mut needs_art = vec![false; m];
    for (i, (coeffs, rhs, slack)) in rows_data.iter_mut().enumerate() {
        if *rhs < 0.0 {
            coeffs.iter_mut().for_each(|c| *c = -*c);
            *rhs = -*rhs;
            if let Some(s) = slack {
                *s = -*s;
            }
        }
        needs_art[i] = !matches!(slack, Some(s) if *s > 0.0);
    }
    let n_art = needs_art.iter().filter(|b| **b).count();
    let cols = art0 + n_art;

    let mut rows = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    let mut next_art = art0;
    for (i, (coeffs, rhs, slack)) in rows_data.iter().enumerate() {
        let row = &mut rows[i];
        for (j, c) in coeffs.iter().enumerate() {
            row[col_of[j]] += c;
            if problem.bounds[j] == VarBound::Free {
                row[col_of[j] + 1] -= c;
            }
        }
        if let Some(s) = slack {
            row[slack0 + (i - n_eq)] = *s;
        }
        row[cols] = *rhs;
        if needs_art[i] {
            row[next_art] = 1.0;
            basis[i] = next_art;
            next_art += 1;
        } else {
            basis[i] = slack0 + (i - n_eq);
        }
    }

    let mut tab = Tableau {
        rows,
        obj: Vec::new(),
        basis,
        cols,
        pivots: 0,
    };

    // phase one: maximize -Σ artificials
    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        cost[art0..].iter_mut().for_each(|c| *c = -1.0);
        tab.set_objective(&cost);
        tab.optimize(&vec![true; cols])?;
        if tab.obj[cols] < -FEAS_EPS {
            return Err(Error::LpInfeasible);
        }
        // drive zero-level artificials out of the basis, dropping redundant rows
        let mut i = 0;
        while i < tab.rows.len() {
            if tab.basis[i] >= art0 {
                if let Some(j) = (0..art0).find(|&j| tab.rows[i][j].abs() > 1e-9) {
                    tab.pivot(i, j);
                    i += 1;
                } else {
                    tab.rows.remove(i);
                    tab.basis.remove(i);
                }
            } else {
                i += 1;
            }
        }
    }

    // phase two
    let mut cost = vec![0.0; cols];
    for (j, c) in problem.objective.iter().enumerate() {
        cost[col_of[j]] = *c;
        if problem.bounds[j] == VarBound::Free {
            cost[col_of[j] + 1] = -c;
        }
    }
    tab.set_objective(&cost);
    let allowed: Vec<bool> = (0..cols).map(|j| j < art0).collect();
    tab.optimize(&allowed)?;

    let mut values = vec![0.0; cols];
    for (i, &b) in tab.basis.iter().enumerate() {
        values[b] = tab.rows[i][cols];
    }
    let witness: Vec<f64> = (0..n)
        .map(|j| match problem.bounds[j] {
            VarBound::NonNegative => values[col_of[j]].max(0.0),
            VarBound::Free => values[col_of[j]] - values[col_of[j] + 1],
        })
        .collect();
    let max_reduced_cost = (0..art0).map(|j| -tab.obj[j]).fold(f64::NEG_INFINITY, f64::max);
    Ok(LpSolution {
        status: LpStatus::Optimal,
        optimum: problem.objective_value(&witness),
        max_residual: problem.max_residual(&witness),
        max_reduced_cost: max_reduced_cost.max(0.0),
        witness,
        pivots: tab.pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_upper_bound() {
        let mut lp = LpProblem::new(1);
        lp.bounds[0] = VarBound::Free;
        lp.objective[0] = 1.0;
        lp.add_inequality(vec![1.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.optimum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn free_variable_can_go_negative() {
        // maximize -x s.t. x >= -2  (written as -x <= 2)
        let mut lp = LpProblem::new(1);
        lp.bounds[0] = VarBound::Free;
        lp.objective[0] = -1.0;
        lp.add_inequality(vec![-1.0], 2.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.witness[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded_are_reported() {
        let mut lp = LpProblem::new(1);
        lp.objective[0] = 1.0;
        lp.add_equality(vec![1.0], -1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::LpInfeasible)));

        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add_inequality(vec![-1.0, 1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::LpUnbounded)));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.add_equality(vec![1.0, 1.0], 1.0);
        lp.add_equality(vec![2.0, 2.0], 2.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.optimum - 2.0).abs() < 1e-12);
        assert!(sol.max_residual < 1e-12);
    }

    #[test]
    fn degenerate_problem_terminates() {
        // classic Beale-style cycling example for Dantzig's rule
        let mut lp = LpProblem::new(4);
        lp.objective = vec![0.75, -150.0, 0.02, -6.0];
        lp.add_inequality(vec![0.25, -60.0, -0.04, 9.0], 0.0);
        lp.add_inequality(vec![0.5, -90.0, -0.02, 3.0], 0.0);
        lp.add_inequality(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.optimum - 0.05).abs() < 1e-9);
    }

    /// Enumerates all basic solutions of `max cᵀx, Ax <= b, x >= 0`.
    fn vertex_oracle(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> f64 {
        let n = c.len();
        // every constraint as gᵀx <= h, bounds included
        let mut rows: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
        for j in 0..n {
            let mut g = vec![0.0; n];
            g[j] = -1.0;
            rows.push((g, 0.0));
        }
        let total = rows.len();
        let mut best = f64::NEG_INFINITY;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let m = DMatrix::from_fn(n, n, |i, j| rows[idx[i]].0[j]);
            let rhs = DVector::from_iterator(n, idx.iter().map(|&i| rows[i].1));
            if let Some(x) = m.lu().solve(&rhs) {
                let feasible = rows.iter().all(|(g, h)| {
                    g.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= h + 1e-9
                });
                if feasible && x.iter().all(|v| v.is_finite()) {
                    let val: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                    best = best.max(val);
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < total - n + i {
                    idx[i] += 1;
                    for k in i + 1..n {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn random_lps_match_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(2..=6);
            let m = rng.random_range(1..=5);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
            let mut a: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..n).map(|_| rng.random_range(-0.5..1.5)).collect())
                .collect();
            let mut b: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..2.0)).collect();
            // a simplex-like row keeps the region bounded
            a.push(vec![1.0; n]);
            b.push(3.0);
            let mut lp = LpProblem::new(n);
            lp.objective = c.clone();
            for (row, rhs) in a.iter().zip(&b) {
                lp.add_inequality(row.clone(), *rhs);
            }
            let sol = solve_lp(&lp).unwrap();
            let oracle = vertex_oracle(&c, &a, &b);
            assert!((sol.optimum - oracle).abs() < 1e-8, "{} vs {}", sol.optimum, oracle);
            assert!(sol.max_residual < 1e-9);
            assert!(sol.max_reduced_cost < 1e-9);
        }
    }

    #[test]
    fn text_dump_lists_every_row() {
        let mut lp = LpProblem::new(2);
        lp.objective = vec![1.0, -1.0];
        lp.bounds[1] = VarBound::Free;
        lp.add_equality(vec![1.0, 1.0], 1.0);
        lp.add_inequality(vec![0.0, 2.5], 4.0);
        let text = lp.to_lp_text();
        assert!(text.contains("obj: 1 x0 - 1 x1"));
        assert!(text.contains("eq0: 1 x0 + 1 x1 = 1"));
        assert!(text.contains("le0: 2.5 x1 <= 4"));
        assert!(text.contains("x1 free"));
    }
}
