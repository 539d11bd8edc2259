//! LP-based branch and bound.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::model::LinearProgram;
use super::simplex::{DualSimplex, LpStatus};

/// Distance from the nearest integer below which a value counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Largest constraint violation accepted for an incumbent.
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Processed nodes between two dives inside the tree.
const DIVE_PERIOD: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct MipOptions {
    pub time_limit: Duration,
    /// Absolute optimality gap at which a node is pruned.
    pub abs_gap: f64,
    /// Relative optimality gap at which a node is pruned.
    pub rel_gap: f64,
    pub node_limit: usize,
    /// Simplex iteration cap for a single node.
    pub lp_iteration_limit: usize,
}

impl Default for MipOptions {
    fn default() -> Self {
        MipOptions {
            time_limit: Duration::from_secs(5),
            abs_gap: 1e-7,
            rel_gap: 1e-9,
            node_limit: usize::MAX,
            lp_iteration_limit: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// Stopped on the time limit; the incumbent, if any, is returned.
    TimeLimit,
    /// Stopped on the node limit; the incumbent, if any, is returned.
    NodeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipSolution {
    pub status: MipStatus,
    /// Best integer-feasible assignment found.
    pub values: Option<Vec<f64>>,
    /// Objective of `values`, or infinity without an incumbent.
    pub objective: f64,
    /// Proven lower bound on the optimum.
    pub bound: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
}

#[derive(Debug, Clone)]
struct Node {
    parent: Option<usize>,
    /// Bound change applied on top of the parent's: (variable, lower, upper).
    change: Option<(usize, f64, f64)>,
    depth: usize,
}

#[derive(Debug, PartialEq)]
struct Open {
    bound: f64,
    depth: usize,
    id: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // BinaryHeap is a max-heap: smallest bound first, then deepest, then oldest.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then(self.depth.cmp(&other.depth))
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Search<'a> {
    lp: &'a LinearProgram,
    simplex: DualSimplex,
    integers: Vec<usize>,
    original: Vec<(f64, f64)>,
    /// Variables whose bounds currently differ from the original ones.
    touched: Vec<usize>,
    incumbent: Option<Vec<f64>>,
    incumbent_value: f64,
    options: &'a MipOptions,
}

impl Search<'_> {
    fn gap(&self) -> f64 {
        self.options
            .abs_gap
            .max(self.options.rel_gap * self.incumbent_value.abs())
    }

    fn cutoff(&self) -> f64 {
        if self.incumbent_value.is_finite() {
            self.incumbent_value - self.gap()
        } else {
            f64::INFINITY
        }
    }

    fn reset_bounds(&mut self) {
        for j in self.touched.drain(..) {
            let (lo, hi) = self.original[j];
            self.simplex.set_bounds(j, lo, hi);
        }
    }

    fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.simplex.set_bounds(j, lo, hi);
        self.touched.push(j);
    }

    fn apply_node(&mut self, arena: &[Node], id: usize) {
        self.reset_bounds();
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(n) = cur {
            if let Some(change) = arena[n].change {
                chain.push(change);
            }
            cur = arena[n].parent;
        }
        for &(j, lo, hi) in chain.iter().rev() {
            let (cur_lo, cur_hi) = self.simplex.bounds(j);
            self.set_bounds(j, lo.max(cur_lo), hi.min(cur_hi));
        }
    }

    /// Most fractional integer variable, lowest index on ties.
    fn branching_variable(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.integers {
            let frac = x[j] - x[j].floor();
            let dist = frac.min(1.0 - frac);
            if dist > INTEGRALITY_TOL && best.map_or(true, |(_, d)| dist > d) {
                best = Some((j, dist));
            }
        }
        best.map(|(j, _)| j)
    }

    fn consider(&mut self, mut x: Vec<f64>) -> bool {
        for &j in &self.integers {
            x[j] = x[j].round();
        }
        let violation = self.lp.max_violation(&x);
        if violation > FEASIBILITY_TOL {
            log::debug!("rejecting candidate with violation {violation:e}");
            return false;
        }
        let value = self.lp.objective_value(&x);
        if value < self.incumbent_value {
            self.incumbent_value = value;
            self.incumbent = Some(x);
            true
        } else {
            false
        }
    }

    /// Fixes the integers of `x` rounded by `round` and re-solves the LP.
    fn fix_and_solve(&mut self, x: &[f64], round: fn(f64) -> f64, deadline: Instant) {
        let integers = self.integers.clone();
        for &j in &integers {
            let (lo, hi) = self.original[j];
            let v = round(x[j]).clamp(lo, hi);
            self.set_bounds(j, v, v);
        }
        let status = self.simplex.solve(
            self.cutoff(),
            self.options.lp_iteration_limit,
            Some(deadline),
        );
        if status == LpStatus::Optimal {
            let sol = self.simplex.solution();
            self.consider(sol);
        }
        self.reset_bounds();
    }
}

impl Search<'_> {
    /// Fractional diving from the current node: repeatedly fixes the least
    /// fractional integer to its nearest value (the other side if that LP
    /// fails) until the LP solution is integral. Leaves the node's bounds
    /// reset.
    fn dive(&mut self, mut x: Vec<f64>, deadline: Instant) {
        loop {
            let next = self
                .integers
                .iter()
                .map(|&j| (j, (x[j] - x[j].round()).abs()))
                .filter(|&(_, d)| d > INTEGRALITY_TOL)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            let Some((j, _)) = next else {
                self.consider(x);
                break;
            };
            let near = x[j].round();
            let far = if near > x[j] { near - 1.0 } else { near + 1.0 };
            let (lo, hi) = self.simplex.bounds(j);
            let mut solved = None;
            for v in [near, far] {
                if v < lo || v > hi {
                    continue;
                }
                self.set_bounds(j, v, v);
                let status = self.simplex.solve(
                    self.cutoff(),
                    self.options.lp_iteration_limit,
                    Some(deadline),
                );
                if status == LpStatus::Optimal {
                    solved = Some(self.simplex.solution());
                    break;
                }
                if matches!(status, LpStatus::TimeLimit | LpStatus::IterationLimit) {
                    break;
                }
            }
            match solved {
                Some(sol) => x = sol,
                None => break,
            }
        }
        self.reset_bounds();
    }
}

/// Solves `lp` to optimality (within the gap options) by best-first branch
/// and bound on its integer variables.
pub fn solve_mip(lp: &LinearProgram, options: &MipOptions) -> MipSolution {
    let deadline = Instant::now() + options.time_limit;
    let integers: Vec<usize> = (0..lp.num_variables())
        .filter(|&j| lp.variables[j].integer)
        .collect();
    let original: Vec<(f64, f64)> = lp
        .variables
        .iter()
        .map(|v| {
            if v.integer {
                (v.lower.ceil(), v.upper.floor())
            } else {
                (v.lower, v.upper)
            }
        })
        .collect();
    let mut search = Search {
        lp,
        simplex: DualSimplex::new(lp),
        integers,
        original,
        touched: Vec::new(),
        incumbent: None,
        incumbent_value: f64::INFINITY,
        options,
    };
    for &j in &search.integers.clone() {
        let (lo, hi) = search.original[j];
        search.simplex.set_bounds(j, lo, hi);
    }

    let mut arena = vec![Node {
        parent: None,
        change: None,
        depth: 0,
    }];
    let mut open = BinaryHeap::new();
    open.push(Open {
        bound: f64::NEG_INFINITY,
        depth: 0,
        id: 0,
    });
    let mut processed = 0;
    let mut stop: Option<MipStatus> = None;
    let mut root_bound = f64::NEG_INFINITY;

    while let Some(Open { bound, id, .. }) = open.pop() {
        if bound >= search.cutoff() {
            // Best-first: every remaining node is at least as bad.
            open.clear();
            break;
        }
        if processed >= options.node_limit {
            open.push(Open { bound, depth: arena[id].depth, id });
            stop = Some(MipStatus::NodeLimit);
            break;
        }
        if Instant::now() >= deadline {
            open.push(Open { bound, depth: arena[id].depth, id });
            stop = Some(MipStatus::TimeLimit);
            break;
        }
        processed += 1;
        search.apply_node(&arena, id);
        let status = search
            .simplex
            .solve(search.cutoff(), options.lp_iteration_limit, Some(deadline));
        match status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible | LpStatus::Cutoff => continue,
            LpStatus::Unbounded => {
                if id == 0 {
                    return MipSolution {
                        status: MipStatus::Unbounded,
                        values: None,
                        objective: f64::NEG_INFINITY,
                        bound: f64::NEG_INFINITY,
                        nodes: processed,
                        lp_iterations: search.simplex.iterations(),
                    };
                }
                continue;
            }
            LpStatus::IterationLimit | LpStatus::TimeLimit => {
                open.push(Open { bound, depth: arena[id].depth, id });
                stop = Some(MipStatus::TimeLimit);
                break;
            }
        }
        let value = search.simplex.objective();
        let x = search.simplex.solution();
        if id == 0 {
            root_bound = value;
        }
        match search.branching_variable(&x) {
            None => {
                search.consider(x);
            }
            Some(j) => {
                if id == 0 {
                    search.fix_and_solve(&x, f64::ceil, deadline);
                    search.fix_and_solve(&x, f64::round, deadline);
                }
                if id == 0 || processed % DIVE_PERIOD == 0 {
                    search.dive(x.clone(), deadline);
                }
                if value >= search.cutoff() {
                    continue;
                }
                let depth = arena[id].depth + 1;
                let (lo, hi) = search.simplex.bounds(j);
                let down = (j, lo, x[j].floor());
                let up = (j, x[j].ceil(), hi);
                for change in [down, up] {
                    let child = arena.len();
                    arena.push(Node {
                        parent: Some(id),
                        change: Some(change),
                        depth,
                    });
                    open.push(Open {
                        bound: value,
                        depth,
                        id: child,
                    });
                }
            }
        }
    }
    search.reset_bounds();

    let bound = open
        .iter()
        .map(|o| o.bound)
        .fold(search.incumbent_value, f64::min)
        .max(root_bound.min(search.incumbent_value));
    let status = match (stop, &search.incumbent) {
        (Some(s), _) => s,
        (None, Some(_)) => MipStatus::Optimal,
        (None, None) => MipStatus::Infeasible,
    };
    MipSolution {
        status,
        objective: search.incumbent_value,
        values: search.incumbent,
        bound,
        nodes: processed,
        lp_iterations: search.simplex.iterations(),
    }
}
