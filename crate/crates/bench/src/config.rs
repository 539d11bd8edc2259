//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mssp_core::controllers::Algorithm;
use mssp_core::microgrid::{BatteryParams, SiteConfig};
use mssp_core::uncertainty::SamplerConfig;

use crate::ingest::{ingest, to_hourly, ColumnMap, FillPolicy, SiteDataset};
use crate::site::{derive_site_config, TariffTemplate};
use crate::synth::{default_profiles, generate, SynthProfile, DEFAULT_START, RAW_STEP_MINUTES};

fn default_raw_step() -> u32 {
    15
}

fn default_days() -> usize {
    365
}

/// Where the data of one site comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SiteSource {
    Csv {
        id: String,
        /// Relative paths are resolved against the config file's directory.
        path: PathBuf,
        #[serde(default)]
        columns: ColumnMap,
        #[serde(default = "default_raw_step")]
        raw_step_minutes: u32,
        #[serde(default)]
        fill: FillPolicy,
        /// Overrides the experiment-wide battery.
        #[serde(default)]
        battery: Option<BatteryParams>,
    },
    Synthetic {
        /// Name of a built-in profile, or a full profile.
        profile: ProfileRef,
        #[serde(default = "default_days")]
        days: usize,
        #[serde(default)]
        seed: u64,
        /// Overrides the profile's battery.
        #[serde(default)]
        battery: Option<BatteryParams>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileRef {
    Named(String),
    Inline(SynthProfile),
}

impl ProfileRef {
    pub fn resolve(&self) -> Result<SynthProfile> {
        match self {
            ProfileRef::Inline(p) => Ok(p.clone()),
            ProfileRef::Named(name) => default_profiles()
                .into_iter()
                .find(|p| &p.id == name)
                .with_context(|| format!("unknown synthetic profile {name:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sites: Vec<SiteSource>,
    /// Battery for sites that do not set their own.
    pub battery: Option<BatteryParams>,
    pub tariff: TariffTemplate,
    pub algorithms: Vec<Algorithm>,
    pub seed: u64,
    pub sampler: SamplerConfig,
    /// Look-ahead of the optimization-based controllers (steps after the
    /// current one).
    pub horizon: usize,
    pub train_fraction: f64,
    /// Worker threads; 0 uses all cores.
    pub parallelism: usize,
    /// Branch-and-bound time limit per decision (seconds).
    pub time_limit_s: f64,
    /// Truncates every test window to this many steps.
    pub max_test_steps: Option<usize>,
    pub record_trajectories: bool,
    /// Gives every challenger on a site the same seed stream, so that they
    /// see the same scenario draws when their sample counts agree.
    pub shared_samples: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sites: Vec::new(),
            battery: None,
            tariff: TariffTemplate::default(),
            algorithms: Algorithm::ALL.to_vec(),
            seed: 0,
            sampler: SamplerConfig::default(),
            horizon: 23,
            train_fraction: 0.6,
            parallelism: 0,
            time_limit_s: 5.0,
            max_test_steps: None,
            record_trajectories: false,
            shared_samples: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let mut config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for site in &mut config.sites {
            if let SiteSource::Csv { path, .. } = site {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!("train_fraction must lie in (0, 1), got {}", self.train_fraction);
        }
        if !(self.time_limit_s.is_finite() && self.time_limit_s > 0.0) {
            bail!("time_limit_s must be positive, got {}", self.time_limit_s);
        }
        self.sampler.validate()?;
        let mut ids: Vec<&str> = Vec::new();
        for site in &self.sites {
            let id = site.id();
            if ids.contains(&id) {
                bail!("duplicate site id {id:?}");
            }
            ids.push(id);
        }
        Ok(())
    }
}

impl SiteSource {
    pub fn id(&self) -> &str {
        match self {
            SiteSource::Csv { id, .. } => id,
            SiteSource::Synthetic {
                profile: ProfileRef::Named(name),
                ..
            } => name,
            SiteSource::Synthetic {
                profile: ProfileRef::Inline(p),
                ..
            } => &p.id,
        }
    }
}

/// A dataset ready for simulation.
#[derive(Debug, Clone)]
pub struct PreparedSite {
    pub dataset: SiteDataset,
    pub site: SiteConfig,
}

/// Loads or generates every site of the experiment.
pub fn prepare_sites(config: &ExperimentConfig) -> Result<Vec<PreparedSite>> {
    config
        .sites
        .iter()
        .map(|source| {
            let (dataset, battery) = match source {
                SiteSource::Csv {
                    id,
                    path,
                    columns,
                    raw_step_minutes,
                    fill,
                    battery,
                } => {
                    let ds = ingest(path, id, columns, *raw_step_minutes, *fill, config.train_fraction)
                        .with_context(|| format!("site {id}"))?;
                    let battery = battery
                        .or(config.battery)
                        .with_context(|| format!("site {id} has no battery parameters"))?;
                    (ds, battery)
                }
                SiteSource::Synthetic {
                    profile,
                    days,
                    seed,
                    battery,
                } => {
                    let profile = profile.resolve()?;
                    let raw = generate(&profile, DEFAULT_START, *days, *seed);
                    let hourly = to_hourly(&raw, RAW_STEP_MINUTES)?;
                    let ds = SiteDataset::new(&profile.id, hourly, config.train_fraction);
                    (ds, battery.unwrap_or(profile.battery))
                }
            };
            let mut site = derive_site_config(&dataset, &battery, &config.tariff);
            site.horizon = config.horizon;
            site.validate()
                .with_context(|| format!("site {}", dataset.id))?;
            Ok(PreparedSite { dataset, site })
        })
        .collect()
}

/// The offline example: the three built-in synthetic sites.
pub fn synthetic_example(days: usize) -> ExperimentConfig {
    ExperimentConfig {
        sites: default_profiles()
            .into_iter()
            .enumerate()
            .map(|(i, p)| SiteSource::Synthetic {
                profile: ProfileRef::Named(p.id),
                days,
                seed: i as u64 + 1,
                battery: None,
            })
            .collect(),
        ..ExperimentConfig::default()
    }
}
