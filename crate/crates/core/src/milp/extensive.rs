//! Extensive form of the multistage dispatch problem over a scenario tree.
//!
//! Every tree node `n` carries a block of variables: charged energy `pc_n`,
//! discharged energy `pd_n`, stored energy `x_n` at the start of the step,
//! grid import `e_n` and the overrun indicator `z_n`. The rows are
//!
//! ```text
//! dyn_n : x_n - x_m - rc pc_m + pd_m / rd = 0        (m parent of n)
//! imp_n : e_n - pc_n + pd_n >= w_n
//! ovr_n : e_n - M_n z_n <= E
//! cut_n : pd_n + (w_n - E) z_n >= w_n - E            (only if w_n > E)
//! term_n: 0 <= x_n + rc pc_n - pd_n / rd <= S         (leaves only)
//! ```
//!
//! and the objective is `sum_n pi_n (c_n e_n + C z_n)`. The leaf rows keep
//! the energy left after the last decision within the storage bounds.
//! `cut_n` is implied by the integer rows: without an overrun the battery
//! must cover the excess over `E`. It tightens the relaxation, where the
//! big-M row alone lets `z_n` stay far below one.

use thiserror::Error;

use super::branch::{solve_mip, MipOptions, MipStatus};
use super::model::LinearProgram;
use crate::microgrid::{grid_import, stage_cost, ModelError, SiteConfig};
use crate::tree::{ScenarioTree, TreeError};

/// Slack added to every node's big-M.
pub const BIG_M_MARGIN: f64 = 1e-6;
/// Clearance kept below the subscribed power when the plan avoids the
/// penalty at the root, so that rounding cannot tip the realized import over.
const ROOT_GUARD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("initial state {0} outside the storage bounds")]
    InitialState(f64),
    #[error("hour {0} out of range")]
    Hour(u32),
}

/// Variable indices of one node block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeVars {
    pub pc: usize,
    pub pd: usize,
    pub x: usize,
    pub e: usize,
    pub z: usize,
    /// Charge/discharge indicator, present in strict mode only.
    pub y: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtensiveProblem {
    pub lp: LinearProgram,
    pub vars: Vec<NodeVars>,
    pub parents: Vec<Option<usize>>,
    pub probabilities: Vec<f64>,
    pub netloads: Vec<f64>,
    pub hours: Vec<u32>,
    pub big_m: Vec<f64>,
    pub x0: f64,
    pub site: SiteConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// The time limit was hit; the best assignment found is returned.
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome {
    pub status: SolveStatus,
    /// Expected cost of `values` (EUR).
    pub objective: f64,
    /// Lower bound proven by the search.
    pub bound: f64,
    /// Net battery energy decided at the root (kWh, positive = charge).
    pub root_control: f64,
    pub values: Vec<f64>,
    pub nodes: usize,
    pub lp_iterations: usize,
}

/// Builds the extensive form with the charge/discharge split left free.
pub fn build_extensive(
    tree: &ScenarioTree,
    x0: f64,
    t0_hour: u32,
    site: &SiteConfig,
) -> Result<ExtensiveProblem, BuildError> {
    build(tree, x0, t0_hour, site, false)
}

/// Same as [`build_extensive`] plus binaries forbidding simultaneous
/// charge and discharge.
pub fn build_extensive_strict(
    tree: &ScenarioTree,
    x0: f64,
    t0_hour: u32,
    site: &SiteConfig,
) -> Result<ExtensiveProblem, BuildError> {
    build(tree, x0, t0_hour, site, true)
}

fn build(
    tree: &ScenarioTree,
    x0: f64,
    t0_hour: u32,
    site: &SiteConfig,
    strict: bool,
) -> Result<ExtensiveProblem, BuildError> {
    tree.validate()?;
    site.validate()?;
    if t0_hour >= 24 {
        return Err(BuildError::Hour(t0_hour));
    }
    let b = &site.battery;
    let cap = b.capacity;
    if !(x0.is_finite() && (0.0..=cap).contains(&x0)) {
        return Err(BuildError::InitialState(x0));
    }
    let charge = site.charge_limit();
    let discharge = -site.discharge_limit();
    let tariff = &site.tariff;
    let (rc, rd) = (b.eff_charge, b.eff_discharge);

    let n = tree.len();
    let mut lp = LinearProgram::new();
    let mut vars = Vec::with_capacity(n);
    let mut hours = Vec::with_capacity(n);
    let mut big_m = Vec::with_capacity(n);
    for node in tree.nodes() {
        let id = node.id;
        let pi = node.probability;
        let hour = site.hour_after(t0_hour, node.depth);
        let price = tariff.price_at(hour);
        let (x_lo, x_hi) = if id == 0 { (x0, x0) } else { (0.0, cap) };
        let pc = lp.add_variable(format!("pc_{id}"), 0.0, charge, 0.0, false);
        let pd = lp.add_variable(format!("pd_{id}"), 0.0, discharge, 0.0, false);
        let x = lp.add_variable(format!("x_{id}"), x_lo, x_hi, 0.0, false);
        let e = lp.add_variable(format!("e_{id}"), 0.0, f64::INFINITY, pi * price, false);
        let z = lp.add_variable(format!("z_{id}"), 0.0, 1.0, pi * tariff.penalty, true);
        let y = strict.then(|| lp.add_variable(format!("y_{id}"), 0.0, 1.0, 0.0, true));
        vars.push(NodeVars { pc, pd, x, e, z, y });
        hours.push(hour);
        big_m.push((node.value + charge - tariff.subscribed).max(0.0) + BIG_M_MARGIN);
    }

    for node in tree.nodes() {
        let id = node.id;
        let v = vars[id];
        if let Some(m) = node.parent {
            let p = vars[m];
            lp.add_constraint(
                format!("dyn_{id}"),
                vec![(v.x, 1.0), (p.x, -1.0), (p.pc, -rc), (p.pd, 1.0 / rd)],
                0.0,
                0.0,
            );
        }
        lp.add_constraint(
            format!("imp_{id}"),
            vec![(v.e, 1.0), (v.pc, -1.0), (v.pd, 1.0)],
            node.value,
            f64::INFINITY,
        );
        lp.add_constraint(
            format!("ovr_{id}"),
            vec![(v.e, 1.0), (v.z, -big_m[id])],
            f64::NEG_INFINITY,
            tariff.subscribed,
        );
        let excess = node.value - tariff.subscribed;
        if excess > 0.0 {
            lp.add_constraint(
                format!("cut_{id}"),
                vec![(v.pd, 1.0), (v.z, excess)],
                excess,
                f64::INFINITY,
            );
        }
        if tree.is_leaf(id) {
            lp.add_constraint(
                format!("term_{id}"),
                vec![(v.x, 1.0), (v.pc, rc), (v.pd, -1.0 / rd)],
                0.0,
                cap,
            );
        }
        if let Some(y) = v.y {
            lp.add_constraint(
                format!("chg_{id}"),
                vec![(v.pc, 1.0), (y, -charge)],
                f64::NEG_INFINITY,
                0.0,
            );
            lp.add_constraint(
                format!("dis_{id}"),
                vec![(v.pd, 1.0), (y, discharge)],
                f64::NEG_INFINITY,
                discharge,
            );
        }
    }

    Ok(ExtensiveProblem {
        lp,
        vars,
        parents: tree.nodes().iter().map(|n| n.parent).collect(),
        probabilities: tree.nodes().iter().map(|n| n.probability).collect(),
        netloads: tree.nodes().iter().map(|n| n.value).collect(),
        hours,
        big_m,
        x0,
        site: site.clone(),
    })
}

impl ExtensiveProblem {
    pub fn num_nodes(&self) -> usize {
        self.vars.len()
    }

    /// The assignment that idles the battery and pays every penalty. It
    /// satisfies all rows for any valid input.
    pub fn feasibility_witness(&self) -> Vec<f64> {
        let mut values = vec![0.0; self.lp.num_variables()];
        for (v, &w) in self.vars.iter().zip(&self.netloads) {
            values[v.x] = self.x0;
            values[v.e] = w.max(0.0);
            values[v.z] = 1.0;
        }
        values
    }

    /// Expected cost of `values` evaluated from the stage cost of each node,
    /// with the import recomputed from the battery decisions.
    pub fn recomputed_cost(&self, values: &[f64]) -> f64 {
        let tariff = &self.site.tariff;
        self.vars
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let pb = values[v.pc] - values[v.pd];
                let import = grid_import(self.netloads[n], pb);
                let cost = stage_cost(import, self.hours[n], tariff).expect("hour in range");
                self.probabilities[n] * cost
            })
            .sum()
    }

    fn root_control(&self, values: &[f64]) -> f64 {
        let v = self.vars[0];
        let mut u = values[v.pc] - values[v.pd];
        let subscribed = self.site.tariff.subscribed;
        let import = self.netloads[0] + u;
        if values[v.z] < 0.5 && import > subscribed - ROOT_GUARD {
            u -= import - (subscribed - ROOT_GUARD);
        }
        u.clamp(self.site.discharge_limit(), self.site.charge_limit())
    }

    pub fn solve(&self, options: &MipOptions) -> SolverOutcome {
        let sol = solve_mip(&self.lp, options);
        let (status, values) = match (sol.status, sol.values) {
            (MipStatus::Optimal, Some(values)) => (SolveStatus::Optimal, values),
            (MipStatus::TimeLimit | MipStatus::NodeLimit, Some(values)) => {
                (SolveStatus::TimeLimit, values)
            }
            (MipStatus::TimeLimit | MipStatus::NodeLimit, None) => {
                log::warn!("no incumbent before the limit, falling back to the idle plan");
                (SolveStatus::TimeLimit, self.feasibility_witness())
            }
            (status, _) => {
                log::error!(
                    "extensive problem reported {status:?} after {} nodes ({} rows, {} columns)",
                    sol.nodes,
                    self.lp.num_constraints(),
                    self.lp.num_variables()
                );
                let values = self.feasibility_witness();
                return SolverOutcome {
                    status: SolveStatus::Infeasible,
                    objective: f64::INFINITY,
                    bound: sol.bound,
                    root_control: 0.0,
                    values,
                    nodes: sol.nodes,
                    lp_iterations: sol.lp_iterations,
                };
            }
        };
        SolverOutcome {
            status,
            objective: self.lp.objective_value(&values),
            bound: sol.bound,
            root_control: self.root_control(&values),
            values,
            nodes: sol.nodes,
            lp_iterations: sol.lp_iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgrid::{BatteryParams, Tariff};

    fn site(capacity: f64, power: f64, eff: f64, subscribed: f64) -> SiteConfig {
        SiteConfig::new(
            BatteryParams {
                capacity,
                max_charge: power,
                max_discharge: -power,
                eff_charge: eff,
                eff_discharge: eff,
                initial_soc: 0.0,
            },
            Tariff::two_level(subscribed),
        )
    }

    fn chain(values: &[f64]) -> ScenarioTree {
        let mut tree = ScenarioTree::root_only(values[0]);
        let mut parent = 0;
        for &v in &values[1..] {
            parent = tree.push_child(parent, v, 1.0);
        }
        tree
    }

    #[test]
    fn single_node_block() {
        let problem = build_extensive(&chain(&[10.0]), 0.0, 0, &site(10.0, 10.0, 1.0, 100.0)).unwrap();
        assert_eq!(problem.lp.num_variables(), 5);
        assert_eq!(problem.lp.num_constraints(), 3);
        let out = problem.solve(&MipOptions::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        let v = problem.vars[0];
        assert_eq!(out.values[v.pc], 0.0);
        assert_eq!(out.values[v.pd], 0.0);
        assert!((out.values[v.e] - 10.0).abs() < 1e-9);
        assert!((out.objective - 1.02).abs() < 1e-9);
    }

    #[test]
    fn two_node_chain_arbitrages_the_peak() {
        let problem = build_extensive(&chain(&[0.0, 10.0]), 0.0, 5, &site(10.0, 10.0, 1.0, 100.0)).unwrap();
        let out = problem.solve(&MipOptions::default());
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.objective - 1.02).abs() < 1e-9);
        assert!((out.root_control - 10.0).abs() < 1e-9);
        assert!((problem.recomputed_cost(&out.values) - out.objective).abs() < 1e-9);
    }

    #[test]
    fn big_m_deactivates_overrun_row() {
        let problem = build_extensive(&chain(&[3.0, -2.0, 7.5]), 1.0, 0, &site(5.0, 2.0, 0.9, 4.0)).unwrap();
        for (m, &w) in problem.big_m.iter().zip(&problem.netloads) {
            assert!(*m >= (w + 2.0 - 4.0).max(0.0));
        }
        let witness = problem.feasibility_witness();
        assert!(problem.lp.max_violation(&witness) <= 1e-12);
    }

    #[test]
    fn no_overrun_possible_means_no_binaries_set() {
        let problem = build_extensive(&chain(&[1.0, 2.0, 0.5, 3.0]), 2.0, 7, &site(4.0, 1.0, 0.95, 50.0)).unwrap();
        let out = problem.solve(&MipOptions::default());
        assert!(problem.vars.iter().all(|v| out.values[v.z] == 0.0));
        assert_eq!(out.nodes, 1);
    }

    #[test]
    fn strict_mode_agrees() {
        let mut tree = ScenarioTree::root_only(4.0);
        let a = tree.push_child(0, 9.0, 0.5);
        let b = tree.push_child(0, -3.0, 0.5);
        tree.push_child(a, 6.0, 0.5);
        tree.push_child(b, 8.0, 0.5);
        let s = site(6.0, 3.0, 0.9, 5.0);
        let loose = build_extensive(&tree, 1.0, 8, &s).unwrap().solve(&MipOptions::default());
        let strict_problem = build_extensive_strict(&tree, 1.0, 8, &s).unwrap();
        let strict = strict_problem.solve(&MipOptions::default());
        assert!((loose.objective - strict.objective).abs() < 1e-7);
        for v in &strict_problem.vars {
            assert!(strict.values[v.pc].min(strict.values[v.pd]) <= 1e-9);
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let s = site(10.0, 10.0, 1.0, 100.0);
        assert!(matches!(
            build_extensive(&chain(&[1.0]), 11.0, 0, &s),
            Err(BuildError::InitialState(_))
        ));
        assert!(matches!(build_extensive(&chain(&[1.0]), 1.0, 24, &s), Err(BuildError::Hour(24))));
    }
}
