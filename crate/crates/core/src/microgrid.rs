//! Discrete-time microgrid model: battery dynamics, grid import and the
//! per-step electricity bill.
//!
//! All quantities are per-step energies (kWh). With an hourly step the
//! power limits of the battery coincide numerically with the energy
//! limits, but the conversion is always done through [`SiteConfig`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when a model parameter or input violates its contract.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("grid import must be non-negative, got {0}")]
    NegativeImport(f64),
    #[error("hour of day must be in 0..24, got {0}")]
    HourOutOfRange(u32),
    #[error("invalid netload series: {0}")]
    InvalidSeries(String),
}

fn invalid(name: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Physical parameters of the storage unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    /// Effective capacity (kWh).
    pub capacity: f64,
    /// Maximum charge power (kW, positive).
    pub max_charge: f64,
    /// Maximum discharge power (kW, negative).
    pub max_discharge: f64,
    /// Charge efficiency in (0, 1].
    pub eff_charge: f64,
    /// Discharge efficiency in (0, 1].
    pub eff_discharge: f64,
    /// Stored energy at the start of a simulation (kWh).
    #[serde(default)]
    pub initial_soc: f64,
}

impl BatteryParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return Err(invalid("capacity", format!("must be > 0, got {}", self.capacity)));
        }
        if !(self.max_charge.is_finite() && self.max_charge > 0.0) {
            return Err(invalid("max_charge", format!("must be > 0, got {}", self.max_charge)));
        }
        if !(self.max_discharge.is_finite() && self.max_discharge < 0.0) {
            return Err(invalid(
                "max_discharge",
                format!("must be < 0, got {}", self.max_discharge),
            ));
        }
        for (name, eff) in [
            ("eff_charge", self.eff_charge),
            ("eff_discharge", self.eff_discharge),
        ] {
            if !(eff > 0.0 && eff <= 1.0) {
                return Err(invalid(name, format!("must lie in (0, 1], got {eff}")));
            }
        }
        if !(self.initial_soc >= 0.0 && self.initial_soc <= self.capacity) {
            return Err(invalid(
                "initial_soc",
                format!("must lie in [0, {}], got {}", self.capacity, self.initial_soc),
            ));
        }
        Ok(())
    }
}

/// Hours of the day billed at the off-peak rate under the default tariff.
pub const OFF_PEAK_HOURS: [u32; 15] = [0, 1, 2, 3, 4, 5, 9, 10, 13, 14, 15, 16, 21, 22, 23];
pub const OFF_PEAK_PRICE: f64 = 0.102;
pub const PEAK_PRICE: f64 = 0.153;
/// Fixed penalty for a step whose import exceeds the subscribed power (EUR).
pub const OVERRUN_PENALTY: f64 = 14.31;

/// Time-of-use energy prices plus the subscribed-power overrun penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    /// Price per kWh indexed by hour of day.
    pub prices: [f64; 24],
    /// Fixed penalty charged for every step whose import exceeds `subscribed`.
    pub penalty: f64,
    /// Subscribed import limit per step (kWh).
    pub subscribed: f64,
}

impl Tariff {
    /// The two-level tariff used throughout the benchmark, with the given
    /// subscribed power.
    pub fn two_level(subscribed: f64) -> Self {
        let mut prices = [PEAK_PRICE; 24];
        for h in OFF_PEAK_HOURS {
            prices[h as usize] = OFF_PEAK_PRICE;
        }
        Tariff {
            prices,
            penalty: OVERRUN_PENALTY,
            subscribed,
        }
    }

    pub fn price_at(&self, hour: u32) -> f64 {
        self.prices[(hour % 24) as usize]
    }

    pub fn max_price(&self) -> f64 {
        self.prices.iter().copied().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(p) = self.prices.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(invalid("prices", format!("must be finite and >= 0, got {p}")));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(invalid("penalty", format!("must be >= 0, got {}", self.penalty)));
        }
        if !(self.subscribed.is_finite() && self.subscribed >= 0.0) {
            return Err(invalid(
                "subscribed",
                format!("must be >= 0, got {}", self.subscribed),
            ));
        }
        Ok(())
    }
}

/// Everything needed to simulate and control one microgrid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub battery: BatteryParams,
    pub tariff: Tariff,
    /// Step length in hours.
    pub dt: f64,
    /// Rolling horizon of the stochastic controllers (steps after the current one).
    pub horizon: usize,
}

impl SiteConfig {
    pub fn new(battery: BatteryParams, tariff: Tariff) -> Self {
        SiteConfig {
            battery,
            tariff,
            dt: 1.0,
            horizon: 23,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.battery.validate()?;
        self.tariff.validate()?;
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.horizon < 1 {
            return Err(invalid("horizon", "must be >= 1"));
        }
        Ok(())
    }

    /// Largest energy that may be charged in one step (kWh).
    pub fn charge_limit(&self) -> f64 {
        self.battery.max_charge * self.dt
    }

    /// Largest energy that may be discharged in one step, as a negative number (kWh).
    pub fn discharge_limit(&self) -> f64 {
        self.battery.max_discharge * self.dt
    }

    /// Hour of day of the step that lies `steps` after a step starting at `hour`.
    pub fn hour_after(&self, hour: u32, steps: usize) -> u32 {
        let elapsed = (steps as f64 * self.dt).floor() as u64;
        ((hour as u64 + elapsed) % 24) as u32
    }
}

/// Battery state: energy in storage (kWh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub soc: f64,
}

/// Battery set-point for one step: energy charged (positive) or
/// discharged (negative), in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub battery: f64,
}

impl Control {
    pub const IDLE: Control = Control { battery: 0.0 };

    pub fn new(battery: f64) -> Self {
        Control { battery }
    }
}

/// Observed netload `demand - production` (kWh per step) with wall-clock
/// timestamps in seconds. Timestamps are local wall-clock time so the hour
/// of day can be read off directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetloadSeries {
    pub timestamps: Vec<i64>,
    pub values: Vec<f64>,
}

impl NetloadSeries {
    pub fn new(timestamps: Vec<i64>, values: Vec<f64>) -> Result<Self, ModelError> {
        let series = NetloadSeries { timestamps, values };
        series.validate()?;
        Ok(series)
    }

    /// Hourly series starting at `start` (seconds) with one value per hour.
    pub fn hourly(start: i64, values: Vec<f64>) -> Result<Self, ModelError> {
        let timestamps = (0..values.len() as i64).map(|i| start + 3600 * i).collect();
        Self::new(timestamps, values)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timestamps.len() != self.values.len() {
            return Err(ModelError::InvalidSeries(format!(
                "{} timestamps for {} values",
                self.timestamps.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::InvalidSeries(format!("non-finite value at index {i}")));
        }
        if self.timestamps.len() >= 2 {
            let spacing = self.timestamps[1] - self.timestamps[0];
            if spacing <= 0 {
                return Err(ModelError::InvalidSeries("timestamps must increase".into()));
            }
            for (i, pair) in self.timestamps.windows(2).enumerate() {
                if pair[1] - pair[0] != spacing {
                    return Err(ModelError::InvalidSeries(format!(
                        "irregular spacing between index {} and {}",
                        i,
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn hour_of(&self, index: usize) -> u32 {
        hour_of_day(self.timestamps[index])
    }

    /// Splits the series at `index`: values before it and values from it on.
    pub fn split_at(&self, index: usize) -> (NetloadSeries, NetloadSeries) {
        let head = NetloadSeries {
            timestamps: self.timestamps[..index].to_vec(),
            values: self.values[..index].to_vec(),
        };
        let tail = NetloadSeries {
            timestamps: self.timestamps[index..].to_vec(),
            values: self.values[index..].to_vec(),
        };
        (head, tail)
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }
}

/// Hour of day of a wall-clock timestamp in seconds.
pub fn hour_of_day(timestamp: i64) -> u32 {
    timestamp.div_euclid(3600).rem_euclid(24) as u32
}

/// Stored energy after applying `battery_energy` for one step. The result
/// is not clamped to `[0, capacity]`.
pub fn step_dynamics(soc: f64, battery_energy: f64, battery: &BatteryParams) -> f64 {
    soc + battery.eff_charge * battery_energy.max(0.0)
        + battery_energy.min(0.0) / battery.eff_discharge
}

/// Energy drawn from the grid; exports are clamped to zero.
pub fn grid_import(netload: f64, battery_energy: f64) -> f64 {
    (netload + battery_energy).max(0.0)
}

/// Import above the subscribed power that is still treated as rounding
/// noise when billing (kWh).
pub const OVERRUN_TOL: f64 = 1e-6;

/// `true` when an import is billed the overrun penalty: it exceeds the
/// subscribed power by more than [`OVERRUN_TOL`].
pub fn is_overrun(import: f64, tariff: &Tariff) -> bool {
    import > tariff.subscribed + OVERRUN_TOL
}

/// Bill of one step: energy price plus the penalty when the import exceeds
/// the subscribed power.
pub fn stage_cost(import: f64, hour: u32, tariff: &Tariff) -> Result<f64, ModelError> {
    if import < 0.0 || import.is_nan() {
        return Err(ModelError::NegativeImport(import));
    }
    if hour >= 24 {
        return Err(ModelError::HourOutOfRange(hour));
    }
    let penalty = if is_overrun(import, tariff) {
        tariff.penalty
    } else {
        0.0
    };
    Ok(tariff.prices[hour as usize] * import + penalty)
}

/// Interval of battery energies that keeps both the power limits and the
/// storage bounds satisfied from `soc`.
pub fn feasible_control_range(soc: f64, site: &SiteConfig) -> (f64, f64) {
    let b = &site.battery;
    let lo = site.discharge_limit().max(-b.eff_discharge * soc.max(0.0));
    let hi = site
        .charge_limit()
        .min((b.capacity - soc).max(0.0) / b.eff_charge);
    (lo.min(0.0), hi.max(0.0))
}
