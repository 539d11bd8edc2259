//! Bounded-variable dual simplex method (revised form).
//!
//! Every row `i` gets a logical variable `r_i = a_i x` whose bounds are the
//! row bounds, so the system is `[A | -I] (x, r) = 0` and every variable,
//! structural or logical, is simply boxed. The method starts from the
//! all-logical basis with each structural at the bound that makes its
//! reduced cost dual feasible, which is always possible when every variable
//! has a finite bound on the side its cost points to. Variables without
//! such a bound get an artificial one; if the optimum rests on it the
//! problem is reported unbounded.
//!
//! Only bounds change between branch-and-bound nodes, which keeps the basis
//! dual feasible, so the same solver instance is re-optimized in place.

use std::time::Instant;

use super::lu::BasisFactor;
use super::model::LinearProgram;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const ARTIFICIAL_BOUND: f64 = 1e7;
const REFACTOR_INTERVAL: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The dual objective reached the caller's cutoff before optimality.
    Cutoff,
    IterationLimit,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Free,
}

#[derive(Debug, Clone)]
pub struct DualSimplex {
    n: usize,
    m: usize,
    columns: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<(usize, f64)>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    artificial: Vec<bool>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    position: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    d: Vec<f64>,
    factor: BasisFactor,
    iterations: usize,
    // scratch
    row_buf: Vec<f64>,
    pos_buf: Vec<f64>,
    alpha_row: Vec<f64>,
    alpha_touched: Vec<usize>,
    alpha_mark: Vec<bool>,
    alpha_col: Vec<f64>,
}

impl DualSimplex {
    pub fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_variables();
        let m = lp.num_constraints();
        let mut columns = vec![Vec::new(); n];
        let mut rows = vec![Vec::new(); m];
        for (i, c) in lp.constraints.iter().enumerate() {
            for &(j, a) in &c.terms {
                if a != 0.0 {
                    columns[j].push((i, a));
                    rows[i].push((j, a));
                }
            }
        }
        let mut lower: Vec<f64> = lp.variables.iter().map(|v| v.lower).collect();
        let mut upper: Vec<f64> = lp.variables.iter().map(|v| v.upper).collect();
        lower.extend(lp.constraints.iter().map(|c| c.lower));
        upper.extend(lp.constraints.iter().map(|c| c.upper));
        let mut cost: Vec<f64> = lp.variables.iter().map(|v| v.cost).collect();
        cost.resize(n + m, 0.0);

        let mut s = DualSimplex {
            n,
            m,
            columns,
            rows,
            lower,
            upper,
            artificial: vec![false; n + m],
            d: cost.clone(),
            cost,
            basis: (n..n + m).collect(),
            position: (0..n + m)
                .map(|j| if j >= n { j - n } else { usize::MAX })
                .collect(),
            status: vec![Status::AtLower; n + m],
            x: vec![0.0; n + m],
            factor: BasisFactor::default(),
            iterations: 0,
            row_buf: vec![0.0; m],
            pos_buf: vec![0.0; m],
            alpha_row: vec![0.0; n + m],
            alpha_touched: Vec::new(),
            alpha_mark: vec![false; n + m],
            alpha_col: vec![0.0; m],
        };
        for i in 0..m {
            s.status[n + i] = Status::Basic;
        }
        s.refactor();
        s.place_nonbasics();
        s.compute_primal();
        s
    }

    pub fn num_structurals(&self) -> usize {
        self.n
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    /// Changes the bounds of structural `j`. Call [`Self::solve`] afterwards.
    pub fn set_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        self.lower[j] = lower;
        self.upper[j] = upper;
        self.artificial[j] = false;
        if self.status[j] != Status::Basic {
            self.place_nonbasic(j);
        }
    }

    /// Structural values of the current basic solution.
    pub fn solution(&self) -> Vec<f64> {
        self.x[..self.n].to_vec()
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    /// Re-optimizes from the current basis.
    pub fn solve(
        &mut self,
        cutoff: f64,
        iteration_limit: usize,
        deadline: Option<Instant>,
    ) -> LpStatus {
        self.place_nonbasics();
        self.compute_primal();
        let start = self.iterations;
        loop {
            if self.iterations - start >= iteration_limit {
                return LpStatus::IterationLimit;
            }
            if (self.iterations - start) % 50 == 49 {
                if let Some(deadline) = deadline {
                    if Instant::now() >= deadline {
                        return LpStatus::TimeLimit;
                    }
                }
            }
            if self.objective() >= cutoff {
                return LpStatus::Cutoff;
            }
            let Some(r) = self.choose_leaving_row() else {
                if self.factor.num_updates() > 0 {
                    // Recompute from a fresh factorization before declaring optimality.
                    self.refactor();
                    self.compute_primal();
                    self.compute_duals();
                    self.repair_dual_signs();
                    continue;
                }
                if self.rests_on_artificial_bound() {
                    return LpStatus::Unbounded;
                }
                return LpStatus::Optimal;
            };
            match self.iterate(r) {
                Step::Pivoted => {}
                Step::Infeasible => return LpStatus::Infeasible,
                Step::Retry => {}
            }
        }
    }

    fn rests_on_artificial_bound(&self) -> bool {
        (0..self.n + self.m).any(|j| {
            self.artificial[j]
                && self.status[j] != Status::Basic
                && (self.x[j].abs() >= ARTIFICIAL_BOUND * 0.5)
        })
    }

    fn column(&self, j: usize) -> ColumnRef<'_> {
        if j < self.n {
            ColumnRef::Structural(&self.columns[j])
        } else {
            ColumnRef::Logical(j - self.n)
        }
    }

    fn refactor(&mut self) {
        loop {
            let cols: Vec<Vec<(usize, f64)>> = self
                .basis
                .iter()
                .map(|&j| match self.column(j) {
                    ColumnRef::Structural(c) => c.to_vec(),
                    ColumnRef::Logical(i) => vec![(i, -1.0)],
                })
                .collect();
            match BasisFactor::factor(self.m, &cols) {
                Ok(f) => {
                    self.factor = f;
                    return;
                }
                Err(singular) => {
                    log::debug!(
                        "singular basis, replacing {} columns by logicals",
                        singular.positions.len()
                    );
                    for (&pos, &row) in singular.positions.iter().zip(&singular.rows) {
                        let out = self.basis[pos];
                        self.status[out] = Status::AtLower;
                        self.position[out] = usize::MAX;
                        self.place_nonbasic(out);
                        let logical = self.n + row;
                        self.basis[pos] = logical;
                        self.status[logical] = Status::Basic;
                        self.position[logical] = pos;
                    }
                }
            }
        }
    }

    /// Puts nonbasic `j` on the bound that matches the sign of its reduced cost.
    fn place_nonbasic(&mut self, j: usize) {
        if self.artificial[j] {
            self.artificial[j] = false;
            if self.lower[j].abs() == ARTIFICIAL_BOUND {
                self.lower[j] = f64::NEG_INFINITY;
            }
            if self.upper[j].abs() == ARTIFICIAL_BOUND {
                self.upper[j] = f64::INFINITY;
            }
        }
        let (lo, hi) = (self.lower[j], self.upper[j]);
        let dj = self.d[j];
        let at_lower = || (Status::AtLower, lo);
        let at_upper = || (Status::AtUpper, hi);
        let (status, value) = if lo == hi {
            at_lower()
        } else if dj > DUAL_TOL {
            if lo.is_finite() {
                at_lower()
            } else {
                self.lower[j] = -ARTIFICIAL_BOUND;
                self.artificial[j] = true;
                (Status::AtLower, -ARTIFICIAL_BOUND)
            }
        } else if dj < -DUAL_TOL {
            if hi.is_finite() {
                at_upper()
            } else {
                self.upper[j] = ARTIFICIAL_BOUND;
                self.artificial[j] = true;
                (Status::AtUpper, ARTIFICIAL_BOUND)
            }
        } else if self.status[j] == Status::AtUpper && hi.is_finite() {
            at_upper()
        } else if lo.is_finite() {
            at_lower()
        } else if hi.is_finite() {
            at_upper()
        } else {
            (Status::Free, 0.0)
        };
        self.status[j] = status;
        self.x[j] = value;
    }

    fn place_nonbasics(&mut self) {
        for j in 0..self.n + self.m {
            if self.status[j] != Status::Basic {
                self.place_nonbasic(j);
            }
        }
    }

    /// Recomputes basic values from the nonbasic ones.
    fn compute_primal(&mut self) {
        self.row_buf.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..self.n + self.m {
            if self.status[j] == Status::Basic || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            if j < self.n {
                for &(i, a) in &self.columns[j] {
                    self.row_buf[i] -= a * xj;
                }
            } else {
                self.row_buf[j - self.n] += xj;
            }
        }
        self.factor.ftran(&mut self.row_buf, &mut self.pos_buf);
        for (pos, &j) in self.basis.iter().enumerate() {
            self.x[j] = self.pos_buf[pos];
        }
    }

    /// Recomputes reduced costs from the current basis.
    fn compute_duals(&mut self) {
        for (pos, &j) in self.basis.iter().enumerate() {
            self.pos_buf[pos] = self.cost[j];
        }
        self.factor.btran(&mut self.pos_buf, &mut self.row_buf);
        for j in 0..self.n + self.m {
            if self.status[j] == Status::Basic {
                self.d[j] = 0.0;
                continue;
            }
            self.d[j] = match self.column(j) {
                ColumnRef::Structural(col) => {
                    self.cost[j] - col.iter().map(|&(i, a)| self.row_buf[i] * a).sum::<f64>()
                }
                ColumnRef::Logical(i) => self.cost[j] + self.row_buf[i],
            };
        }
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let v = self.x[j];
        let lo = self.lower[j];
        let hi = self.upper[j];
        if v < lo - PRIMAL_TOL * (1.0 + lo.abs()) {
            lo - v
        } else if v > hi + PRIMAL_TOL * (1.0 + hi.abs()) {
            v - hi
        } else {
            0.0
        }
    }

    fn choose_leaving_row(&self) -> Option<usize> {
        let mut best = None;
        let mut best_inf = 0.0;
        for (pos, &j) in self.basis.iter().enumerate() {
            let inf = self.infeasibility(j);
            if inf > best_inf {
                best_inf = inf;
                best = Some(pos);
            }
        }
        best
    }

    fn compute_alpha_row(&mut self, r: usize) {
        for &j in &self.alpha_touched {
            self.alpha_row[j] = 0.0;
            self.alpha_mark[j] = false;
        }
        self.alpha_touched.clear();
        self.pos_buf.iter_mut().for_each(|v| *v = 0.0);
        self.pos_buf[r] = 1.0;
        self.factor.btran(&mut self.pos_buf, &mut self.row_buf);
        for i in 0..self.m {
            let rho = self.row_buf[i];
            if rho == 0.0 {
                continue;
            }
            for &(j, a) in &self.rows[i] {
                if !self.alpha_mark[j] {
                    self.alpha_mark[j] = true;
                    self.alpha_touched.push(j);
                }
                self.alpha_row[j] += rho * a;
            }
            let logical = self.n + i;
            if !self.alpha_mark[logical] {
                self.alpha_mark[logical] = true;
                self.alpha_touched.push(logical);
            }
            self.alpha_row[logical] -= rho;
        }
    }

    fn compute_alpha_col(&mut self, q: usize) {
        self.row_buf.iter_mut().for_each(|v| *v = 0.0);
        if q < self.n {
            for &(i, a) in &self.columns[q] {
                self.row_buf[i] = a;
            }
        } else {
            self.row_buf[q - self.n] = -1.0;
        }
        self.factor.ftran(&mut self.row_buf, &mut self.alpha_col);
    }

    fn iterate(&mut self, r: usize) -> Step {
        let p = self.basis[r];
        let increase = self.x[p] < self.lower[p];
        let target = if increase { self.lower[p] } else { self.upper[p] };

        self.compute_alpha_row(r);

        // Eligible nonbasics move x_p toward `target`. With x_p = -sum(alpha_j x_j),
        // raising x_p needs alpha_j < 0 for a variable that can increase.
        let eligible = |s: &Self, j: usize| -> bool {
            let a = s.alpha_row[j];
            if a.abs() <= PIVOT_TOL || s.status[j] == Status::Basic || s.lower[j] == s.upper[j] {
                return false;
            }
            let sign = if increase { -a } else { a };
            match s.status[j] {
                Status::AtLower => sign > 0.0,
                Status::AtUpper => sign < 0.0,
                Status::Free => true,
                Status::Basic => false,
            }
        };

        let mut bound = f64::INFINITY;
        for &j in &self.alpha_touched {
            if eligible(self, j) {
                let ratio = (self.d[j].abs() + DUAL_TOL) / self.alpha_row[j].abs();
                bound = bound.min(ratio);
            }
        }
        if bound == f64::INFINITY {
            return Step::Infeasible;
        }
        let mut q = usize::MAX;
        let mut q_alpha = 0.0;
        for &j in &self.alpha_touched {
            if eligible(self, j) {
                let a = self.alpha_row[j].abs();
                if self.d[j].abs() / a <= bound
                    && (a > q_alpha || (a == q_alpha && j < q))
                {
                    q = j;
                    q_alpha = a;
                }
            }
        }

        self.compute_alpha_col(q);
        let pivot = self.alpha_col[r];
        let row_pivot = self.alpha_row[q];
        if (pivot - row_pivot).abs() > 1e-7 * (1.0 + pivot.abs()) || pivot.abs() <= PIVOT_TOL {
            if self.factor.num_updates() == 0 {
                log::debug!("unstable pivot {pivot} vs {row_pivot}");
            } else {
                self.refactor();
                self.compute_primal();
                self.compute_duals();
                self.repair_dual_signs();
                return Step::Retry;
            }
        }

        // primal update
        let delta = (self.x[p] - target) / pivot;
        for (pos, &j) in self.basis.iter().enumerate() {
            let a = self.alpha_col[pos];
            if a != 0.0 {
                self.x[j] -= a * delta;
            }
        }
        self.x[q] += delta;
        self.x[p] = target;

        // dual update
        let mut theta = self.d[q] / pivot;
        // x_p leaves at `target`: its reduced cost -theta must be >= 0 at the
        // lower bound and <= 0 at the upper bound.
        if (increase && theta > 0.0) || (!increase && theta < 0.0) {
            theta = 0.0;
        }
        if theta != 0.0 {
            for &j in &self.alpha_touched {
                if self.status[j] != Status::Basic {
                    self.d[j] -= theta * self.alpha_row[j];
                }
            }
        }
        self.d[q] = 0.0;
        self.d[p] = -theta;

        // basis change
        self.status[p] = if increase {
            Status::AtLower
        } else {
            Status::AtUpper
        };
        self.position[p] = usize::MAX;
        self.status[q] = Status::Basic;
        self.position[q] = r;
        self.basis[r] = q;
        self.factor.update(r, &self.alpha_col);
        self.iterations += 1;

        if self.factor.num_updates() >= REFACTOR_INTERVAL {
            self.refactor();
            self.compute_primal();
            self.compute_duals();
            self.repair_dual_signs();
        }
        Step::Pivoted
    }

    /// After recomputing reduced costs, moves boxed nonbasics whose reduced
    /// cost drifted to the wrong sign onto the other bound.
    fn repair_dual_signs(&mut self) {
        let mut changed = false;
        for j in 0..self.n + self.m {
            let wrong = match self.status[j] {
                Status::AtLower => self.d[j] < -DUAL_TOL,
                Status::AtUpper => self.d[j] > DUAL_TOL,
                _ => false,
            };
            if wrong && self.lower[j] != self.upper[j] {
                let before = self.x[j];
                self.place_nonbasic(j);
                changed |= self.x[j] != before;
            }
        }
        if changed {
            self.compute_primal();
        }
    }
}

enum Step {
    Pivoted,
    Infeasible,
    Retry,
}

enum ColumnRef<'a> {
    Structural(&'a [(usize, f64)]),
    Logical(usize),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::model::LinearProgram;

    fn solve(lp: &LinearProgram) -> (LpStatus, f64, Vec<f64>) {
        let mut s = DualSimplex::new(lp);
        let status = s.solve(f64::INFINITY, 100_000, None);
        (status, s.objective(), s.solution())
    }

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, 0 <= x, y
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, f64::INFINITY, -1.0, false);
        let y = lp.add_variable("y", 0.0, f64::INFINITY, -1.0, false);
        lp.add_constraint("a", vec![(x, 1.0), (y, 2.0)], f64::NEG_INFINITY, 4.0);
        lp.add_constraint("b", vec![(x, 3.0), (y, 1.0)], f64::NEG_INFINITY, 6.0);
        let (status, obj, sol) = solve(&lp);
        assert_eq!(status, LpStatus::Optimal);
        assert!((obj + 2.8).abs() < 1e-9, "{obj}");
        assert!((sol[0] - 1.6).abs() < 1e-9 && (sol[1] - 1.2).abs() < 1e-9, "{sol:?}");
    }

    #[test]
    fn covering_lp_with_equality() {
        // min 2x + 3y s.t. x + y >= 3, x - y = 1, x <= 5
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, 5.0, 2.0, false);
        let y = lp.add_variable("y", 0.0, f64::INFINITY, 3.0, false);
        lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], 3.0, f64::INFINITY);
        lp.add_constraint("e", vec![(x, 1.0), (y, -1.0)], 1.0, 1.0);
        let (status, obj, sol) = solve(&lp);
        assert_eq!(status, LpStatus::Optimal);
        assert!((sol[0] - 2.0).abs() < 1e-9 && (sol[1] - 1.0).abs() < 1e-9);
        assert!((obj - 7.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_lp() {
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, 1.0, 1.0, false);
        lp.add_constraint("c", vec![(x, 1.0)], 2.0, f64::INFINITY);
        assert_eq!(solve(&lp).0, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_lp() {
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, f64::INFINITY, -1.0, false);
        let y = lp.add_variable("y", 0.0, 1.0, 0.0, false);
        lp.add_constraint("c", vec![(x, 1.0), (y, -1.0)], 0.0, f64::INFINITY);
        assert_eq!(solve(&lp).0, LpStatus::Unbounded);
    }

    #[test]
    fn bound_change_reoptimizes() {
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, 10.0, 1.0, false);
        let y = lp.add_variable("y", 0.0, 10.0, 2.0, false);
        lp.add_constraint("c", vec![(x, 1.0), (y, 1.0)], 4.0, f64::INFINITY);
        let mut s = DualSimplex::new(&lp);
        assert_eq!(s.solve(f64::INFINITY, 1000, None), LpStatus::Optimal);
        assert!((s.objective() - 4.0).abs() < 1e-9);
        s.set_bounds(x, 0.0, 1.0);
        assert_eq!(s.solve(f64::INFINITY, 1000, None), LpStatus::Optimal);
        assert!((s.objective() - 7.0).abs() < 1e-9);
        s.set_bounds(x, 0.0, 10.0);
        assert_eq!(s.solve(f64::INFINITY, 1000, None), LpStatus::Optimal);
        assert!((s.objective() - 4.0).abs() < 1e-9);
        assert_eq!(s.solve(3.0, 1000, None), LpStatus::Cutoff);
    }
}
