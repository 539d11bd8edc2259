//! Synthetic sites for running the whole pipeline offline.
//!
//! Load is a seasonal sinusoid times a two-hump daily profile plus AR(1)
//! noise, scaled by a day-to-day activity level and a weekend factor, with
//! occasional multi-hour load events on top. Production follows a
//! clear-sky bell between 06:00 and 18:00 scaled by a seasonal factor and
//! an AR(1) cloud cover. Values are energies per 15-minute step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use mssp_core::microgrid::BatteryParams;

use crate::ingest::RawSeries;

pub const RAW_STEP_MINUTES: u32 = 15;
/// 2021-01-01T00:00:00Z
pub const DEFAULT_START: i64 = 1_609_459_200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub id: String,
    /// Mean hourly consumption (kWh).
    pub base_load: f64,
    /// Height of the daily consumption humps (kWh per hour).
    pub daily_amplitude: f64,
    /// Relative amplitude of the yearly load cycle.
    pub seasonal_amplitude: f64,
    /// Peak hourly production on a clear summer day (kWh).
    pub pv_peak: f64,
    /// Standard deviation of the hourly load noise (kWh).
    pub noise_sd: f64,
    /// Lag-one correlation of the load noise between 15-minute steps.
    pub noise_ar: f64,
    /// Standard deviation of the daily activity level around one.
    #[serde(default)]
    pub day_sd: f64,
    /// Activity on Saturdays and Sundays relative to weekdays.
    #[serde(default = "one")]
    pub weekend_factor: f64,
    /// Expected number of load events per day.
    #[serde(default)]
    pub event_rate: f64,
    /// Mean extra consumption during an event (kWh per hour).
    #[serde(default)]
    pub event_size: f64,
    pub battery: BatteryParams,
}

fn one() -> f64 {
    1.0
}

fn battery(capacity: f64, power: f64) -> BatteryParams {
    BatteryParams {
        capacity,
        max_charge: power,
        max_discharge: -power,
        eff_charge: 0.95,
        eff_discharge: 0.95,
        initial_soc: 0.0,
    }
}

/// An office, a house with a large PV array and a small factory.
pub fn default_profiles() -> Vec<SynthProfile> {
    vec![
        SynthProfile {
            id: "office".into(),
            base_load: 30.0,
            daily_amplitude: 25.0,
            seasonal_amplitude: 0.2,
            pv_peak: 20.0,
            noise_sd: 4.0,
            noise_ar: 0.9,
            day_sd: 0.15,
            weekend_factor: 0.4,
            event_rate: 0.5,
            event_size: 15.0,
            battery: battery(60.0, 15.0),
        },
        SynthProfile {
            id: "residential".into(),
            base_load: 6.0,
            daily_amplitude: 8.0,
            seasonal_amplitude: 0.35,
            pv_peak: 14.0,
            noise_sd: 1.5,
            noise_ar: 0.8,
            day_sd: 0.2,
            weekend_factor: 1.2,
            event_rate: 1.0,
            event_size: 4.0,
            battery: battery(20.0, 5.0),
        },
        SynthProfile {
            id: "factory".into(),
            base_load: 80.0,
            daily_amplitude: 40.0,
            seasonal_amplitude: 0.1,
            pv_peak: 35.0,
            noise_sd: 8.0,
            noise_ar: 0.9,
            day_sd: 0.1,
            weekend_factor: 0.5,
            event_rate: 0.7,
            event_size: 30.0,
            battery: battery(120.0, 30.0),
        },
    ]
}

fn daily_shape(hour: f64) -> f64 {
    0.6 * (-(hour - 8.5).powi(2) / 4.0).exp() + (-(hour - 18.5).powi(2) / 6.0).exp()
}

/// Generates `days` days of raw 15-minute load and production.
pub fn generate(profile: &SynthProfile, start: i64, days: usize, seed: u64) -> RawSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_day = 24 * 60 / RAW_STEP_MINUTES as usize;
    let n = days * per_day;
    let step_hours = RAW_STEP_MINUTES as f64 / 60.0;
    let innovation = Normal::new(0.0, 1.0).expect("unit normal");
    let ar = profile.noise_ar;
    let scale = (1.0 - ar * ar).sqrt();
    let mut noise = 0.0;
    let mut cloud = 0.0;
    let mut activity = 0.0;
    let mut event_left = 0usize;
    let mut event_load = 0.0;
    let event_chance = profile.event_rate / per_day as f64;

    let mut raw = RawSeries::default();
    for q in 0..n {
        let ts = start + (q as i64) * 60 * RAW_STEP_MINUTES as i64;
        let day = ts.div_euclid(86_400) as f64;
        let hour = ts.rem_euclid(86_400) as f64 / 3600.0;
        // Epoch day 0 is January 1st; the cycle peaks in mid-winter.
        let season = (2.0 * std::f64::consts::PI * (day % 365.25) / 365.25).cos();
        if q % per_day == 0 {
            activity = 0.5 * activity + 0.866 * innovation.sample(&mut rng);
        }
        // 1970-01-01 was a Thursday.
        let weekend = (ts.div_euclid(86_400) + 3).rem_euclid(7) >= 5;
        let level = (1.0 + profile.day_sd * activity).max(0.2)
            * if weekend { profile.weekend_factor } else { 1.0 };
        noise = ar * noise + scale * innovation.sample(&mut rng);
        cloud = 0.97 * cloud + 0.243 * innovation.sample(&mut rng);
        if event_left == 0 && rng.gen_bool(event_chance.min(1.0)) {
            event_left = rng.gen_range(4..=16);
            event_load = profile.event_size * rng.gen_range(0.5..1.5);
        }
        let event = if event_left > 0 {
            event_left -= 1;
            event_load
        } else {
            0.0
        };

        let load_rate = level
            * (profile.base_load * (1.0 + profile.seasonal_amplitude * season)
                + profile.daily_amplitude * daily_shape(hour))
            + profile.noise_sd * noise
            + event;
        let sun = if (6.0..18.0).contains(&hour) {
            (std::f64::consts::PI * (hour - 6.0) / 12.0).sin()
        } else {
            0.0
        };
        let clear = 0.65 - 0.35 * season;
        let cover = (0.75 + 0.25 * cloud).clamp(0.1, 1.0);
        let pv_rate = profile.pv_peak * sun * clear * cover;

        raw.timestamps.push(ts);
        raw.load.push(load_rate.max(0.0) * step_hours);
        raw.pv.push(pv_rate.max(0.0) * step_hours);
    }
    raw
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let p = &default_profiles()[0];
        let a = generate(p, DEFAULT_START, 3, 7);
        assert_eq!(a.load.len(), 3 * 96);
        assert_eq!(a, generate(p, DEFAULT_START, 3, 7));
        assert_ne!(a, generate(p, DEFAULT_START, 3, 8));
        assert!(a.load.iter().chain(&a.pv).all(|v| v.is_finite() && *v >= 0.0));
        // no production at night
        assert_eq!(a.pv[0], 0.0);
        assert!(a.pv[12 * 4] > 0.0);
    }

    #[test]
    fn residential_site_exports_at_noon() {
        let p = &default_profiles()[1];
        let raw = generate(p, DEFAULT_START + 150 * 86_400, 10, 1);
        let noon_net: f64 = (0..10)
            .map(|d| raw.load[d * 96 + 48] - raw.pv[d * 96 + 48])
            .sum();
        assert!(noon_net < 0.0);
    }
}
