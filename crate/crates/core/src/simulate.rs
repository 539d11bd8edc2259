//! Closed-loop evaluation of a policy along a netload scenario.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microgrid::{
    feasible_control_range, grid_import, is_overrun, stage_cost, step_dynamics, Control,
    ModelError, NetloadSeries, SiteConfig, State,
};

/// Largest projection of a control, or SOC excursion, tolerated silently (kWh).
pub const FEASIBILITY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("sampler: {0}")]
    Sampler(#[from] crate::uncertainty::SamplerError),
    #[error("scenario tree: {0}")]
    Tree(#[from] crate::tree::TreeError),
    #[error("extensive problem: {0}")]
    Build(#[from] crate::milp::BuildError),
    #[error("solver: {0}")]
    Solver(String),
    #[error("policy needs the future netload but none was provided")]
    MissingOracle,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{policy} failed at step {step}: {source}")]
    Policy {
        policy: String,
        step: usize,
        #[source]
        source: PolicyError,
    },
    #[error("{policy} returned the non-finite control {value} at step {step}")]
    NonFinite {
        policy: String,
        step: usize,
        value: f64,
    },
    #[error("state {soc} left the storage bounds at step {step}")]
    StateBounds { step: usize, soc: f64 },
    #[error("empty or out-of-range simulation window {start}..{end} for {len} steps")]
    Window { start: usize, end: usize, len: usize },
    #[error("initial state {0} outside the storage bounds")]
    InitialState(f64),
}

/// Everything a policy may look at when deciding at step `step`.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub step: usize,
    pub state: State,
    /// Hour of day of the current step.
    pub hour: u32,
    /// Observed netload up to and including the current step.
    pub history: &'a [f64],
    /// Steps left in the simulation after the current one.
    pub remaining: usize,
    /// True netload after the current step, for oracle policies only.
    pub oracle: Option<&'a [f64]>,
    pub site: &'a SiteConfig,
}

impl DecisionContext<'_> {
    /// Netload observed at the current step.
    pub fn current_netload(&self) -> f64 {
        *self.history.last().expect("history includes the current step")
    }
}

/// A controller mapping `(x_t, h_t)` to a battery control.
pub trait Policy {
    fn name(&self) -> &str;

    /// Whether the policy reads the true future through the oracle channel.
    fn requires_oracle(&self) -> bool {
        false
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Control, PolicyError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub timestamp: i64,
    pub hour: u32,
    /// Stored energy at the start of the step.
    pub soc: f64,
    /// Control as returned by the policy.
    pub requested: f64,
    /// Control actually applied after projection.
    pub control: f64,
    pub netload: f64,
    pub import: f64,
    pub price: f64,
    pub overrun: bool,
    pub cost: f64,
    /// Wall-clock time spent in the policy (seconds).
    pub decision_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub policy: String,
    pub total_cost: f64,
    pub final_soc: f64,
    /// Steps whose control had to be projected by more than the tolerance.
    pub projections: usize,
    pub steps: Vec<StepRecord>,
}

impl SimulationResult {
    pub fn mean_decision_time(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.decision_time).sum::<f64>() / self.steps.len() as f64
    }

    pub fn controls(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.control).collect()
    }
}

/// Simulates `policy` over the whole series from the configured initial state.
pub fn simulate(
    policy: &mut dyn Policy,
    netload: &NetloadSeries,
    site: &SiteConfig,
) -> Result<SimulationResult, SimulationError> {
    simulate_window(policy, netload, 0..netload.len(), site, site.battery.initial_soc)
}

/// Simulates `policy` over the steps in `window`. Earlier steps of the
/// series are visible to the policy as history.
pub fn simulate_window(
    policy: &mut dyn Policy,
    netload: &NetloadSeries,
    window: Range<usize>,
    site: &SiteConfig,
    initial_soc: f64,
) -> Result<SimulationResult, SimulationError> {
    site.validate()?;
    netload.validate()?;
    let len = netload.len();
    if window.start >= window.end || window.end > len {
        return Err(SimulationError::Window {
            start: window.start,
            end: window.end,
            len,
        });
    }
    let capacity = site.battery.capacity;
    if !(initial_soc.is_finite() && (0.0..=capacity).contains(&initial_soc)) {
        return Err(SimulationError::InitialState(initial_soc));
    }
    let name = policy.name().to_string();
    let oracle = policy.requires_oracle();
    let values = &netload.values;
    let mut soc = initial_soc;
    let mut steps = Vec::with_capacity(window.len());
    let mut projections = 0;
    let mut total = 0.0;

    for t in window.clone() {
        let hour = netload.hour_of(t);
        let ctx = DecisionContext {
            step: t,
            state: State { soc },
            hour,
            history: &values[..=t],
            remaining: window.end - t - 1,
            oracle: oracle.then(|| &values[t + 1..window.end]),
            site,
        };
        let started = Instant::now();
        let decided = policy.decide(&ctx).map_err(|source| SimulationError::Policy {
            policy: name.clone(),
            step: t,
            source,
        })?;
        let decision_time = started.elapsed().as_secs_f64();
        let requested = decided.battery;
        if !requested.is_finite() {
            return Err(SimulationError::NonFinite {
                policy: name,
                step: t,
                value: requested,
            });
        }
        let (lo, hi) = feasible_control_range(soc, site);
        let control = requested
            .clamp(site.discharge_limit(), site.charge_limit())
            .clamp(lo, hi);
        if (control - requested).abs() > FEASIBILITY_TOL {
            projections += 1;
            log::warn!(
                "{name}: control {requested} projected to {control} at step {t} (soc {soc})"
            );
        }
        let w = values[t];
        let import = grid_import(w, control);
        let cost = stage_cost(import, hour, &site.tariff)?;
        total += cost;
        steps.push(StepRecord {
            step: t,
            timestamp: netload.timestamps[t],
            hour,
            soc,
            requested,
            control,
            netload: w,
            import,
            price: site.tariff.price_at(hour),
            overrun: is_overrun(import, &site.tariff),
            cost,
            decision_time,
        });
        let next = step_dynamics(soc, control, &site.battery);
        if !(-FEASIBILITY_TOL..=capacity + FEASIBILITY_TOL).contains(&next) {
            return Err(SimulationError::StateBounds { step: t, soc: next });
        }
        soc = next.clamp(0.0, capacity);
    }
    Ok(SimulationResult {
        policy: name,
        total_cost: total,
        final_soc: soc,
        projections,
        steps,
    })
}
