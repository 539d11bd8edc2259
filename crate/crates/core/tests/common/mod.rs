//! Exhaustive dynamic programming over a 0.1 kWh control grid on a scenario
//! tree, used to check the extensive MILP.
//!
//! Controls are the grid points inside the feasible range plus the two ends
//! of the range when they come from the storage bounds (emptying or filling
//! the battery). A state is then an anchor (initial, empty or full) plus the
//! number of grid units charged and discharged since, so it has an exact
//! integer key.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::Rng;

use mssp_core::microgrid::{feasible_control_range, grid_import, BatteryParams, SiteConfig, Tariff};
use mssp_core::tree::ScenarioTree;

pub const GRID_STEP: f64 = 0.1;
/// Float noise allowed when a grid import lands on the subscribed power.
const IMPORT_TOL: f64 = 1e-9;
const SOC_TOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Anchor {
    Initial,
    Empty,
    Full,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Key {
    anchor: Anchor,
    charged: i32,
    discharged: i32,
}

struct Dp<'a> {
    tree: &'a ScenarioTree,
    site: &'a SiteConfig,
    x0: f64,
    t0_hour: u32,
    memo: Vec<HashMap<Key, f64>>,
}

impl Dp<'_> {
    fn soc(&self, key: Key) -> f64 {
        let b = &self.site.battery;
        let base = match key.anchor {
            Anchor::Initial => self.x0,
            Anchor::Empty => 0.0,
            Anchor::Full => b.capacity,
        };
        base + GRID_STEP * (b.eff_charge * key.charged as f64)
            - GRID_STEP * key.discharged as f64 / b.eff_discharge
    }

    fn stage(&self, node: usize, u: f64) -> f64 {
        let n = self.tree.node(node);
        let tariff: &Tariff = &self.site.tariff;
        let e = grid_import(n.value, u);
        let hour = self.site.hour_after(self.t0_hour, n.depth);
        let over = if e > tariff.subscribed + IMPORT_TOL {
            tariff.penalty
        } else {
            0.0
        };
        tariff.price_at(hour) * e + over
    }

    fn candidates(&self, key: Key) -> Vec<(f64, Key)> {
        let s = self.soc(key);
        let (lo, hi) = feasible_control_range(s, self.site);
        let mut out = Vec::new();
        let k_lo = (lo / GRID_STEP - 1e-9).ceil() as i32;
        let k_hi = (hi / GRID_STEP + 1e-9).floor() as i32;
        for k in k_lo..=k_hi {
            let mut next = key;
            if k > 0 {
                next.charged += k;
            } else {
                next.discharged -= k;
            }
            let ns = self.soc(next);
            if ns >= -SOC_TOL && ns <= self.site.battery.capacity + SOC_TOL {
                out.push((k as f64 * GRID_STEP, next));
            }
        }
        let reset = |anchor| Key {
            anchor,
            charged: 0,
            discharged: 0,
        };
        if lo > self.site.discharge_limit() {
            out.push((lo, reset(Anchor::Empty)));
        }
        if hi < self.site.charge_limit() {
            out.push((hi, reset(Anchor::Full)));
        }
        out
    }

    fn value(&mut self, node: usize, key: Key) -> f64 {
        if let Some(v) = self.memo[node].get(&key) {
            return *v;
        }
        let p = self.tree.node(node).probability;
        let children = self.tree.children(node).to_vec();
        let mut best = f64::INFINITY;
        for (u, next) in self.candidates(key) {
            let mut v = self.stage(node, u);
            for &c in &children {
                v += self.tree.node(c).probability / p * self.value(c, next);
            }
            best = best.min(v);
        }
        self.memo[node].insert(key, best);
        best
    }
}

/// Optimal expected cost over grid controls.
pub fn grid_optimum(tree: &ScenarioTree, x0: f64, t0_hour: u32, site: &SiteConfig) -> f64 {
    let mut dp = Dp {
        tree,
        site,
        x0,
        t0_hour,
        memo: vec![HashMap::new(); tree.len()],
    };
    dp.value(
        0,
        Key {
            anchor: Anchor::Initial,
            charged: 0,
            discharged: 0,
        },
    )
}

/// Gap allowed between the grid optimum and the exact optimum.
pub fn grid_bound(tree: &ScenarioTree, site: &SiteConfig) -> f64 {
    site.tariff.max_price() * GRID_STEP * (tree.horizon() + 1) as f64 + 1e-6
}

fn on_grid(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let k = rng.gen_range((lo / GRID_STEP).round() as i64..=(hi / GRID_STEP).round() as i64);
    k as f64 * GRID_STEP
}

/// A random instance: tree of at most `max_nodes` nodes, netload in
/// [-20, 20], subscribed power in [0, 15], efficiencies in [0.8, 1] and a
/// small battery. Magnitudes lie on the control grid.
pub fn random_instance(
    rng: &mut impl Rng,
    max_nodes: usize,
) -> (ScenarioTree, SiteConfig, f64, u32) {
    let subscribed = on_grid(rng, 0.0, 15.0);
    random_instance_in(rng, max_nodes, subscribed, (-20.0, 20.0))
}

/// Like [`random_instance`] with netload within one kWh of the subscribed
/// power, where the penalty decisions bind.
pub fn tight_instance(
    rng: &mut impl Rng,
    max_nodes: usize,
) -> (ScenarioTree, SiteConfig, f64, u32) {
    let subscribed = on_grid(rng, 1.0, 15.0);
    random_instance_in(rng, max_nodes, subscribed, (subscribed - 1.0, subscribed + 1.0))
}

fn random_instance_in(
    rng: &mut impl Rng,
    max_nodes: usize,
    subscribed: f64,
    (w_lo, w_hi): (f64, f64),
) -> (ScenarioTree, SiteConfig, f64, u32) {
    // Every leaf sits at depth `horizon`; extra branches are added while
    // the node budget still allows completing them.
    let horizon = rng.gen_range(0..=(max_nodes - 1).min(20));
    let mut tree = ScenarioTree::root_only(on_grid(rng, w_lo, w_hi));
    let mut level = vec![0usize];
    for d in 0..horizon {
        let mandatory = level.len() * (horizon - d);
        let mut budget = max_nodes - tree.len() - mandatory;
        let mut next = Vec::new();
        for &parent in &level {
            let mut children = 1;
            while budget >= horizon - d && rng.gen_bool(0.4) {
                budget -= horizon - d;
                children += 1;
            }
            let weights: Vec<f64> = (0..children).map(|_| rng.gen_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let p = tree.node(parent).probability;
            for w in weights {
                next.push(tree.push_child(parent, on_grid(rng, w_lo, w_hi), p * w / total));
            }
        }
        level = next;
    }
    let capacity = on_grid(rng, 0.5, 2.0);
    let power = on_grid(rng, 0.2, 0.8);
    let battery = BatteryParams {
        capacity,
        max_charge: power,
        max_discharge: -power,
        eff_charge: rng.gen_range(0.8..=1.0),
        eff_discharge: rng.gen_range(0.8..=1.0),
        initial_soc: 0.0,
    };
    let site = SiteConfig::new(battery, Tariff::two_level(subscribed));
    let x0 = on_grid(rng, 0.0, capacity);
    (tree, site, x0, rng.gen_range(0..24))
}
