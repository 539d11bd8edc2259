use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mssp_bench::config::{prepare_sites, synthetic_example, ExperimentConfig, PreparedSite, SiteSource};
use mssp_bench::ingest::{ingest, write_netload, write_raw, ColumnMap, FillPolicy};
use mssp_bench::report::{emit_report, trajectory_file_name, trajectory_tsv, BenchmarkReport, Trajectory, TrajectoryRow};
use mssp_bench::runner::{fit_sampler, mip_options, policy_seed, run_benchmark, run_job, test_window};
use mssp_bench::synth::{default_profiles, generate, DEFAULT_START};
use mssp_bench::OUT_DIR_ENV;
use mssp_core::controllers::{Algorithm, AnyPolicy};
use mssp_core::microgrid::State;
use mssp_core::milp::{build_extensive, export_lp};
use mssp_core::simulate::DecisionContext;
use mssp_core::uncertainty::ScenarioSampler;

#[derive(Parser)]
#[command(name = "mssp", version, about = "Battery energy management benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw CSV into an hourly netload CSV.
    Ingest {
        input: PathBuf,
        /// Output CSV (timestamp,netload).
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value = "timestamp")]
        timestamp_column: String,
        #[arg(long, default_value = "load")]
        load_column: String,
        #[arg(long, default_value = "pv")]
        pv_column: String,
        /// Factor converting raw values to kWh per raw step.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Raw step in minutes.
        #[arg(long, default_value_t = 15)]
        raw_step: u32,
        /// Interpolate missing raw steps instead of rejecting the file.
        #[arg(long)]
        fill: bool,
    },
    /// Write synthetic raw CSVs and an experiment config using them.
    Synth {
        #[arg(long, env = OUT_DIR_ENV, default_value = "mssp-out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Only this profile (office, residential or factory).
        #[arg(long)]
        profile: Option<String>,
    },
    /// Run a benchmark from an experiment config.
    Run {
        /// Experiment config; the built-in synthetic example when absent.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "mssp-out")]
        out_dir: PathBuf,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        max_test_steps: Option<usize>,
        #[arg(long)]
        trajectories: bool,
        /// Days of data for the built-in example.
        #[arg(long, default_value_t = 60)]
        days: usize,
    },
    /// Check a report JSON and re-emit its CSV and TSV files.
    Report {
        input: PathBuf,
        #[arg(long, env = OUT_DIR_ENV, default_value = "mssp-out")]
        out_dir: PathBuf,
    },
    /// Write the MILP of one decision in LP format.
    ExportLp {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        site: Option<String>,
        #[arg(long, default_value = "2S-SP")]
        algorithm: Algorithm,
        /// Offset of the decision inside the test window.
        #[arg(long, default_value_t = 0)]
        step: usize,
        /// Stored energy at the decision (kWh).
        #[arg(long, default_value_t = 0.0)]
        soc: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        days: usize,
    },
    /// Simulate one algorithm on one site and write its trajectory.
    Simulate {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        site: Option<String>,
        #[arg(long, default_value = "SP")]
        algorithm: Algorithm,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, env = OUT_DIR_ENV, default_value = "mssp-out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 60)]
        days: usize,
    },
}

fn load_config(path: Option<&Path>, days: usize) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(synthetic_example(days)),
    }
}

fn pick_site(config: &ExperimentConfig, id: Option<&str>) -> Result<PreparedSite> {
    let mut config = config.clone();
    if let Some(id) = id {
        config.sites.retain(|s| s.id() == id);
        if config.sites.is_empty() {
            bail!("no site named {id:?} in the config");
        }
    }
    config.sites.truncate(1);
    prepare_sites(&config)?
        .pop()
        .context("the config has no sites")
}

fn sampler_for(
    prepared: &PreparedSite,
    config: &ExperimentConfig,
    algorithm: Algorithm,
) -> Result<Option<Arc<dyn ScenarioSampler>>> {
    Ok(if algorithm.is_challenger() {
        Some(fit_sampler(prepared, config)? as Arc<dyn ScenarioSampler>)
    } else {
        None
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Ingest {
            input,
            output,
            timestamp_column,
            load_column,
            pv_column,
            scale,
            raw_step,
            fill,
        } => {
            let columns = ColumnMap {
                timestamp: timestamp_column,
                load: load_column,
                pv: pv_column,
                scale,
            };
            let fill = if fill { FillPolicy::Linear } else { FillPolicy::Reject };
            let id = input.file_stem().and_then(|s| s.to_str()).unwrap_or("site");
            let ds = ingest(&input, id, &columns, raw_step, fill, 0.6)?;
            let file = std::fs::File::create(&output)
                .with_context(|| format!("creating {}", output.display()))?;
            write_netload(file, &ds.netload)?;
            println!("{}: {} hourly steps, split at {}", ds.id, ds.netload.len(), ds.split);
        }
        Command::Synth {
            out_dir,
            days,
            seed,
            profile,
        } => {
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let mut config = ExperimentConfig::default();
            for (i, p) in default_profiles().into_iter().enumerate() {
                if profile.as_ref().is_some_and(|name| *name != p.id) {
                    continue;
                }
                let raw = generate(&p, DEFAULT_START, days, seed.wrapping_add(i as u64));
                let file_name = format!("{}.csv", p.id);
                let path = out_dir.join(&file_name);
                let file = std::fs::File::create(&path)
                    .with_context(|| format!("creating {}", path.display()))?;
                write_raw(file, &raw)?;
                println!("wrote {}", path.display());
                config.sites.push(SiteSource::Csv {
                    id: p.id.clone(),
                    path: file_name.into(),
                    columns: ColumnMap::default(),
                    raw_step_minutes: 15,
                    fill: FillPolicy::Reject,
                    battery: Some(p.battery),
                });
            }
            if config.sites.is_empty() {
                bail!("unknown profile {:?}", profile.unwrap_or_default());
            }
            let path = out_dir.join("experiment.json");
            std::fs::write(&path, serde_json::to_string_pretty(&config)?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        Command::Run {
            config,
            out_dir,
            parallelism,
            max_test_steps,
            trajectories,
            days,
        } => {
            let mut config = load_config(config.as_deref(), days)?;
            if let Some(p) = parallelism {
                config.parallelism = p;
            }
            if max_test_steps.is_some() {
                config.max_test_steps = max_test_steps;
            }
            config.record_trajectories |= trajectories;
            config.validate()?;
            let sites = prepare_sites(&config)?;
            let report = run_benchmark(&sites, &config)?;
            for path in emit_report(&report, &out_dir)? {
                println!("wrote {}", path.display());
            }
            print!("{}", mssp_bench::report::summary_csv(&report));
        }
        Command::Report { input, out_dir } => {
            let report = BenchmarkReport::load(&input)?;
            report.check_aggregates()?;
            for path in emit_report(&report, &out_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::ExportLp {
            config,
            site,
            algorithm,
            step,
            soc,
            output,
            days,
        } => {
            let config = load_config(config.as_deref(), days)?;
            let prepared = pick_site(&config, site.as_deref())?;
            let window = test_window(&prepared, config.max_test_steps);
            let t = window.start + step;
            if t >= window.end {
                bail!("step {step} is outside the test window of {} steps", window.len());
            }
            let sampler = sampler_for(&prepared, &config, algorithm)?;
            let seed = policy_seed(&config, 0, algorithm);
            let mut policy = AnyPolicy::new(algorithm, sampler, mip_options(&config), prepared.site.horizon, seed)
                .map_err(anyhow::Error::msg)?;
            let values = &prepared.dataset.netload.values;
            let ctx = DecisionContext {
                step: t,
                state: State { soc },
                hour: prepared.dataset.netload.hour_of(t),
                history: &values[..=t],
                remaining: window.end - t - 1,
                oracle: Some(&values[t + 1..window.end]),
                site: &prepared.site,
            };
            let tree = policy
                .scenario_tree(&ctx)?
                .with_context(|| format!("{algorithm} does not solve an optimization problem"))?;
            let problem = build_extensive(&tree, soc, ctx.hour, &prepared.site)?;
            let text = export_lp(&problem);
            match output {
                Some(path) => std::fs::write(&path, text)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Simulate {
            config,
            site,
            algorithm,
            steps,
            out_dir,
            days,
        } => {
            let config = load_config(config.as_deref(), days)?;
            let prepared = pick_site(&config, site.as_deref())?;
            let window = test_window(&prepared, steps.or(config.max_test_steps));
            let sampler = sampler_for(&prepared, &config, algorithm)?;
            let seed = policy_seed(&config, 0, algorithm);
            let out = run_job(&prepared, algorithm, sampler, mip_options(&config), window, seed)?;
            let r = &out.result;
            let trajectory = Trajectory {
                site: prepared.dataset.id.clone(),
                algorithm,
                subscribed: prepared.site.tariff.subscribed,
                rows: r
                    .steps
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
                    .collect(),
            };
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let path = out_dir.join(trajectory_file_name(&trajectory.site, algorithm));
            std::fs::write(&path, trajectory_tsv(&trajectory))
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "{} on {}: cost {:.4} over {} steps, {:.1} ms/it, {} projections",
                algorithm,
                trajectory.site,
                r.total_cost,
                r.steps.len(),
                r.mean_decision_time() * 1e3,
                r.projections
            );
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
