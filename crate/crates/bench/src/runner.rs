//! Site × algorithm simulations on a bounded worker pool.

use std::ops::Range;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use mssp_core::controllers::{Algorithm, AnyPolicy, PolicyStats};
use mssp_core::milp::MipOptions;
use mssp_core::simulate::{simulate_window, SimulationResult, StepRecord};
use mssp_core::uncertainty::{AnalogModel, ScenarioSampler};

use crate::config::{ExperimentConfig, PreparedSite};
use crate::report::{BenchmarkReport, RunRow, SiteSummary, TimingRow, Trajectory, TrajectoryRow};

/// Seed of the policy run for `algorithm` on the site at `site_index`. It
/// does not depend on which other algorithms are part of the run.
pub fn job_seed(base: u64, site_index: usize, algorithm: Algorithm) -> u64 {
    let alg = Algorithm::ALL.iter().position(|a| *a == algorithm).unwrap_or(0) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(site_index as u64 * Algorithm::ALL.len() as u64 + alg);
    rng.next_u64()
}

/// Seed of a policy run under `config`. With shared samples every
/// challenger on a site gets the seed of MPC.
pub fn policy_seed(config: &ExperimentConfig, site_index: usize, algorithm: Algorithm) -> u64 {
    if config.shared_samples && algorithm.is_challenger() {
        job_seed(config.seed, site_index, Algorithm::Mpc)
    } else {
        job_seed(config.seed, site_index, algorithm)
    }
}

/// Steps simulated for a site: the tail after the training split, possibly
/// truncated.
pub fn test_window(prepared: &PreparedSite, max_steps: Option<usize>) -> Range<usize> {
    let start = prepared.dataset.split;
    let len = prepared.dataset.netload.len();
    let end = match max_steps {
        Some(m) => len.min(start + m),
        None => len,
    };
    start..end
}

pub fn mip_options(config: &ExperimentConfig) -> MipOptions {
    MipOptions {
        time_limit: Duration::from_secs_f64(config.time_limit_s),
        ..MipOptions::default()
    }
}

/// Fits the scenario sampler on the training part of a site.
pub fn fit_sampler(prepared: &PreparedSite, config: &ExperimentConfig) -> Result<Arc<AnalogModel>> {
    let model = AnalogModel::fit_values(prepared.dataset.train(), &config.sampler)
        .with_context(|| format!("fitting the sampler of site {}", prepared.dataset.id))?;
    Ok(Arc::new(model))
}

/// Outcome of one closed-loop run.
pub struct JobOutput {
    pub result: SimulationResult,
    pub stats: Option<PolicyStats>,
    pub wall: Duration,
}

/// Simulates one algorithm on one site over `window`.
pub fn run_job(
    prepared: &PreparedSite,
    algorithm: Algorithm,
    sampler: Option<Arc<dyn ScenarioSampler>>,
    options: MipOptions,
    window: Range<usize>,
    seed: u64,
) -> Result<JobOutput> {
    let started = Instant::now();
    let mut policy = AnyPolicy::new(algorithm, sampler, options, prepared.site.horizon, seed)
        .map_err(anyhow::Error::msg)?;
    let result = simulate_window(
        &mut policy,
        &prepared.dataset.netload,
        window,
        &prepared.site,
        prepared.site.battery.initial_soc,
    )?;
    Ok(JobOutput {
        result,
        stats: policy.stats().cloned(),
        wall: started.elapsed(),
    })
}

fn trajectory_rows(steps: &[StepRecord]) -> Vec<TrajectoryRow> {
    steps
        .iter()
        .map(|s| TrajectoryRow {
            timestamp: s.timestamp,
            soc: s.soc,
            control: s.control,
            netload: s.netload,
            import: s.import,
            price: s.price,
            cost: s.cost,
        })
        .collect()
}

/// Runs every configured algorithm on every site and assembles the report.
/// A failing pair is recorded in the report and does not stop the run.
pub fn run_benchmark(sites: &[PreparedSite], config: &ExperimentConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .context("starting the worker pool")?;
    let options = mip_options(config);
    let needs_sampler = config.algorithms.iter().any(|a| a.is_challenger());

    let samplers: Vec<Result<Arc<AnalogModel>, String>> = pool.install(|| {
        sites
            .par_iter()
            .map(|s| {
                if needs_sampler {
                    fit_sampler(s, config).map_err(|e| format!("{e:#}"))
                } else {
                    Err("no sampler needed".into())
                }
            })
            .collect()
    });

    let jobs: Vec<(usize, Algorithm)> = (0..sites.len())
        .flat_map(|i| config.algorithms.iter().map(move |a| (i, *a)))
        .collect();
    let outputs: Vec<(Result<JobOutput, String>, u64)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, algorithm)| {
                let prepared = &sites[i];
                let seed = policy_seed(config, i, algorithm);
                let sampler = match (&samplers[i], algorithm.is_challenger()) {
                    (Ok(m), true) => Some(m.clone() as Arc<dyn ScenarioSampler>),
                    (Err(e), true) => return (Err(e.clone()), seed),
                    _ => None,
                };
                let window = test_window(prepared, config.max_test_steps);
                log::info!("{} on {}: {} steps", algorithm, prepared.dataset.id, window.len());
                let out = run_job(prepared, algorithm, sampler, options.clone(), window, seed)
                    .map_err(|e| format!("{e:#}"));
                if let Err(e) = &out {
                    log::error!("{} on {} failed: {e}", algorithm, prepared.dataset.id);
                }
                (out, seed)
            })
            .collect()
    });

    let mut results = Vec::with_capacity(jobs.len());
    let mut timing = Vec::with_capacity(jobs.len());
    let mut trajectories = Vec::new();
    for (&(i, algorithm), (out, seed)) in jobs.iter().zip(outputs) {
        let site = sites[i].dataset.id.clone();
        match out {
            Ok(job) => {
                let r = &job.result;
                results.push(RunRow::ok(&site, algorithm, seed, r));
                let max_ms = r
                    .steps
                    .iter()
                    .map(|s| s.decision_time * 1e3)
                    .fold(0.0, f64::max);
                timing.push(TimingRow {
                    site: site.clone(),
                    algorithm,
                    mean_decision_ms: r.mean_decision_time() * 1e3,
                    max_decision_ms: max_ms,
                    wall_s: job.wall.as_secs_f64(),
                    stats: job.stats,
                });
                if config.record_trajectories {
                    trajectories.push(Trajectory {
                        site,
                        algorithm,
                        subscribed: sites[i].site.tariff.subscribed,
                        rows: trajectory_rows(&r.steps),
                    });
                }
            }
            Err(error) => results.push(RunRow::failed(&site, algorithm, seed, error)),
        }
    }

    let summaries = sites
        .iter()
        .map(|s| SiteSummary::new(s, test_window(s, config.max_test_steps)))
        .collect();
    Ok(BenchmarkReport::new(
        config.clone(),
        summaries,
        results,
        trajectories,
        timing,
    ))
}
