//! Nonparametric autoregressive sampler of future netload.
//!
//! The analog model stores every window of `lags` consecutive training
//! values together with the values that followed it. To sample, the most
//! recent window of the history is compared with the stored ones, and
//! continuations of the nearest windows are replayed, shifted so that they
//! start from the last observed level.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::microgrid::NetloadSeries;
use crate::tree::ScenarioMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("training series has {len} values, at least {needed} are needed")]
    TooShort { len: usize, needed: usize },
    #[error("history has {len} values, the model needs {lags}")]
    ShortHistory { len: usize, lags: usize },
    #[error("requested horizon {requested} exceeds the model horizon {available}")]
    Horizon { requested: usize, available: usize },
    #[error("non-finite value in the history")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Gaussian kernel on the neighbor distance, bandwidth = median distance.
    #[default]
    Kernel,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub lags: usize,
    pub horizon: usize,
    pub neighbors: usize,
    pub weighting: Weighting,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            lags: 48,
            horizon: 23,
            neighbors: 50,
            weighting: Weighting::Kernel,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.lags == 0 {
            return Err(SamplerError::Config("lags must be >= 1".into()));
        }
        if self.horizon == 0 {
            return Err(SamplerError::Config("horizon must be >= 1".into()));
        }
        if self.neighbors == 0 {
            return Err(SamplerError::Config("neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

/// Anything that can draw joint scenarios of future netload from a history.
pub trait ScenarioSampler: Send + Sync {
    /// Number of past values the sampler conditions on.
    fn lags(&self) -> usize;

    /// Longest horizon the sampler can produce.
    fn horizon(&self) -> usize;

    /// Draws `count` equiprobable scenarios of the `horizon` values that
    /// follow `history` (oldest first, last value = current observation).
    fn sample(
        &self,
        history: &[f64],
        horizon: usize,
        count: usize,
        seed: u64,
    ) -> Result<ScenarioMatrix, SamplerError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalogModel {
    config: SamplerConfig,
    /// Normalized lag windows, one per training position.
    windows: Vec<Vec<f64>>,
    /// Last raw value of each window.
    window_ends: Vec<f64>,
    /// The `horizon + 1` raw values following each window.
    continuations: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl AnalogModel {
    pub fn fit(training: &NetloadSeries, config: &SamplerConfig) -> Result<Self, SamplerError> {
        Self::fit_values(&training.values, config)
    }

    pub fn fit_values(values: &[f64], config: &SamplerConfig) -> Result<Self, SamplerError> {
        config.validate()?;
        let (lags, horizon) = (config.lags, config.horizon);
        let needed = lags + horizon + 1;
        if values.len() < needed {
            return Err(SamplerError::TooShort {
                len: values.len(),
                needed,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SamplerError::NonFinite);
        }
        let count = values.len() - lags - horizon;
        let raw: Vec<&[f64]> = (0..count).map(|s| &values[s..s + lags]).collect();

        let mut mean = vec![0.0; lags];
        let mut scale = vec![0.0; lags];
        for k in 0..lags {
            let m = raw.iter().map(|w| w[k]).sum::<f64>() / count as f64;
            let var = raw.iter().map(|w| (w[k] - m).powi(2)).sum::<f64>() / count as f64;
            mean[k] = m;
            let sd = var.sqrt();
            scale[k] = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        let windows = raw
            .iter()
            .map(|w| normalize(w, &mean, &scale))
            .collect();
        let window_ends = raw.iter().map(|w| w[lags - 1]).collect();
        let continuations = (0..count)
            .map(|s| values[s + lags..s + lags + horizon + 1].to_vec())
            .collect();
        Ok(AnalogModel {
            config: config.clone(),
            windows,
            window_ends,
            continuations,
            mean,
            scale,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Number of stored (window, continuation) pairs.
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Stored pairs nearest to the normalized query, as (index, distance),
    /// closest first with ties broken by index.
    pub fn neighbors(&self, history: &[f64]) -> Result<Vec<(usize, f64)>, SamplerError> {
        let lags = self.config.lags;
        if history.len() < lags {
            return Err(SamplerError::ShortHistory {
                len: history.len(),
                lags,
            });
        }
        let recent = &history[history.len() - lags..];
        if recent.iter().any(|v| !v.is_finite()) {
            return Err(SamplerError::NonFinite);
        }
        let query = normalize(recent, &self.mean, &self.scale);
        let mut dist: Vec<(usize, f64)> = self
            .windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let d2: f64 = w.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum();
                (i, d2.sqrt())
            })
            .collect();
        dist.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        dist.truncate(self.config.neighbors.min(dist.len()));
        Ok(dist)
    }

    fn weights(&self, neighbors: &[(usize, f64)]) -> Vec<f64> {
        if self.config.weighting == Weighting::Uniform {
            return vec![1.0; neighbors.len()];
        }
        let mut d: Vec<f64> = neighbors.iter().map(|n| n.1).collect();
        d.sort_by(f64::total_cmp);
        let mid = d.len() / 2;
        let sigma = if d.len() % 2 == 1 {
            d[mid]
        } else {
            0.5 * (d[mid - 1] + d[mid])
        };
        if sigma > 0.0 {
            neighbors
                .iter()
                .map(|n| (-(n.1 * n.1) / (2.0 * sigma * sigma)).exp())
                .collect()
        } else {
            neighbors
                .iter()
                .map(|n| if n.1 == 0.0 { 1.0 } else { 0.0 })
                .collect()
        }
    }
}

fn normalize(window: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    window
        .iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

impl ScenarioSampler for AnalogModel {
    fn lags(&self) -> usize {
        self.config.lags
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn sample(
        &self,
        history: &[f64],
        horizon: usize,
        count: usize,
        seed: u64,
    ) -> Result<ScenarioMatrix, SamplerError> {
        if horizon > self.config.horizon {
            return Err(SamplerError::Horizon {
                requested: horizon,
                available: self.config.horizon,
            });
        }
        if count == 0 {
            return Err(SamplerError::Config("sample count must be >= 1".into()));
        }
        let neighbors = self.neighbors(history)?;
        let weights = self.weights(&neighbors);
        let dist = WeightedIndex::new(&weights).expect("at least one positive weight");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = history[history.len() - 1];
        let rows = (0..count)
            .map(|_| {
                let i = neighbors[dist.sample(&mut rng)].0;
                let shift = last - self.window_ends[i];
                self.continuations[i][..horizon]
                    .iter()
                    .map(|v| v + shift)
                    .collect()
            })
            .collect();
        Ok(ScenarioMatrix::new(rows).expect("finite equiprobable rows"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(lags: usize, horizon: usize, neighbors: usize) -> SamplerConfig {
        SamplerConfig {
            lags,
            horizon,
            neighbors,
            weighting: Weighting::Kernel,
        }
    }

    fn wave(n: usize) -> Vec<f64> {
        (0..n)
            .map(|t| 10.0 * (t as f64 * 0.26).sin() + 0.3 * ((t * 7919) % 13) as f64)
            .collect()
    }

    #[test]
    fn pair_counts() {
        let values = wave(60);
        assert_eq!(AnalogModel::fit_values(&values, &config(48, 5, 3)).unwrap().len(), 7);
        let exact = wave(48 + 5 + 1);
        assert_eq!(AnalogModel::fit_values(&exact, &config(48, 5, 3)).unwrap().len(), 1);
        assert!(matches!(
            AnalogModel::fit_values(&wave(53), &config(48, 5, 3)),
            Err(SamplerError::TooShort { len: 53, needed: 54 })
        ));
    }

    #[test]
    fn exact_window_match_replays_its_continuation() {
        let values = wave(200);
        let model = AnalogModel::fit_values(&values, &config(48, 5, 1)).unwrap();
        let s = 37;
        let history = &values[s..s + 48];
        let m = model.sample(history, 5, 3, 9).unwrap();
        for row in m.rows() {
            assert_eq!(row.as_slice(), &values[s + 48..s + 53]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let values = wave(400);
        let model = AnalogModel::fit_values(&values, &config(24, 8, 20)).unwrap();
        let history = wave(430)[400..].to_vec();
        let a = model.sample(&history, 8, 30, 4).unwrap();
        let b = model.sample(&history, 8, 30, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, model.sample(&history, 8, 30, 5).unwrap());
    }

    #[test]
    fn constant_series_gives_constant_scenarios() {
        let values = vec![4.5; 120];
        let model = AnalogModel::fit_values(&values, &config(48, 23, 10)).unwrap();
        let mut history = vec![4.5; 47];
        history.push(6.0);
        let m = model.sample(&history, 23, 5, 1).unwrap();
        for row in m.rows() {
            assert!(row.iter().all(|&v| v == 6.0));
        }
    }

    #[test]
    fn shorter_horizons_are_prefixes() {
        let values = wave(300);
        let model = AnalogModel::fit_values(&values, &config(48, 23, 5)).unwrap();
        let history = &values[100..160];
        let full = model.sample(history, 23, 4, 2).unwrap();
        let short = model.sample(history, 6, 4, 2).unwrap();
        for (a, b) in full.rows().iter().zip(short.rows()) {
            assert_eq!(&a[..6], b.as_slice());
        }
        assert!(model.sample(history, 24, 4, 2).is_err());
        assert!(model.sample(&values[..20], 5, 4, 2).is_err());
    }

    #[test]
    fn uniform_weights_over_all_pairs_average_to_climatology() {
        let values = wave(150);
        let mut cfg = config(10, 3, 10_000);
        cfg.weighting = Weighting::Uniform;
        let model = AnalogModel::fit_values(&values, &cfg).unwrap();
        let history = &values[..10];
        let last = history[9];
        let expected: Vec<f64> = (0..3)
            .map(|k| {
                (0..model.len())
                    .map(|i| values[i + 10 + k] - values[i + 9] + last)
                    .sum::<f64>()
                    / model.len() as f64
            })
            .collect();
        let m = model.sample(history, 3, 20_000, 3).unwrap();
        for k in 0..3 {
            let mean = m.rows().iter().map(|r| r[k]).sum::<f64>() / 20_000.0;
            assert!((mean - expected[k]).abs() < 0.15, "{mean} vs {}", expected[k]);
        }
    }

    proptest! {
        #[test]
        fn samples_stay_within_shifted_training_range(seed in 0u64..200, start in 0usize..100) {
            let values = wave(250);
            let model = AnalogModel::fit_values(&values, &config(24, 6, 8)).unwrap();
            let mut history = wave(400)[start..start + 30].to_vec();
            history[29] += 3.0;
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m = model.sample(&history, 6, 10, seed).unwrap();
            let nb = model.neighbors(&history).unwrap();
            let lambda = nb
                .iter()
                .map(|&(i, _)| (history[29] - model.window_ends[i]).abs())
                .fold(0.0, f64::max);
            for v in m.rows().iter().flatten() {
                prop_assert!(*v >= lo - lambda - 1e-9 && *v <= hi + lambda + 1e-9);
            }
        }
    }
}
