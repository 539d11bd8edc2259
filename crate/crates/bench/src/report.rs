//! Benchmark report: per-site rows, aggregates and the emitted files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mssp_core::controllers::{Algorithm, PolicyStats};
use mssp_core::microgrid::BatteryParams;
use mssp_core::simulate::SimulationResult;

use crate::config::{ExperimentConfig, PreparedSite};

pub const SCHEMA_VERSION: u32 = 1;
pub const HOURS_PER_YEAR: f64 = 8760.0;

/// Names of the emitted files.
pub const REPORT_JSON: &str = "report.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SAVINGS_TSV: &str = "savings.tsv";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSummary {
    pub id: String,
    pub steps: usize,
    pub train_steps: usize,
    /// First simulated step; the test window is the tail of the series.
    pub test_start: usize,
    pub test_steps: usize,
    pub max_netload: f64,
    pub subscribed: f64,
    pub battery: BatteryParams,
}

impl SiteSummary {
    pub fn new(prepared: &PreparedSite, window: std::ops::Range<usize>) -> Self {
        SiteSummary {
            id: prepared.dataset.id.clone(),
            steps: prepared.dataset.netload.len(),
            train_steps: prepared.dataset.split,
            test_start: window.start,
            test_steps: window.len(),
            max_netload: prepared.dataset.netload.max_value().unwrap_or(0.0),
            subscribed: prepared.site.tariff.subscribed,
            battery: prepared.site.battery,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub site: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub ok: bool,
    pub total_cost: Option<f64>,
    pub final_soc: Option<f64>,
    pub overruns: Option<usize>,
    pub projections: Option<usize>,
    pub error: Option<String>,
}

impl RunRow {
    pub fn ok(site: &str, algorithm: Algorithm, seed: u64, r: &SimulationResult) -> Self {
        RunRow {
            site: site.to_string(),
            algorithm,
            seed,
            ok: true,
            total_cost: Some(r.total_cost),
            final_soc: Some(r.final_soc),
            overruns: Some(r.steps.iter().filter(|s| s.overrun).count()),
            projections: Some(r.projections),
            error: None,
        }
    }

    pub fn failed(site: &str, algorithm: Algorithm, seed: u64, error: String) -> Self {
        RunRow {
            site: site.to_string(),
            algorithm,
            seed,
            ok: false,
            total_cost: None,
            final_soc: None,
            overruns: None,
            projections: None,
            error: Some(error),
        }
    }
}

/// Wall-clock measurements, kept apart so that the rest of the report is
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub site: String,
    pub algorithm: Algorithm,
    pub mean_decision_ms: f64,
    pub max_decision_ms: f64,
    pub wall_s: f64,
    pub stats: Option<PolicyStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub timestamp: i64,
    pub soc: f64,
    pub control: f64,
    pub netload: f64,
    pub import: f64,
    pub price: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub site: String,
    pub algorithm: Algorithm,
    pub subscribed: f64,
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub algorithm: Algorithm,
    /// Sites where both this algorithm and HEU completed.
    pub sites: usize,
    pub avg_savings_vs_heu_pct: Option<f64>,
    pub avg_extra_vs_pmpc_pct: Option<f64>,
    /// Mean over sites of the annualized savings.
    pub avg_yearly_savings: Option<f64>,
    /// Savings pooled over all sites, annualized over the pooled test hours.
    pub pooled_yearly_savings: Option<f64>,
    /// Share of sites where this challenger was the cheapest one.
    pub best_fraction: Option<f64>,
    pub failures: usize,
}

/// Mean decision time per algorithm, averaged over sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingAggregate {
    pub algorithm: Algorithm,
    pub mean_decision_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub runs: Vec<TimingRow>,
    pub aggregates: Vec<TimingAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub test_window: String,
    pub config: ExperimentConfig,
    pub sites: Vec<SiteSummary>,
    pub results: Vec<RunRow>,
    pub aggregates: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<Trajectory>,
    pub timing: Timing,
}

/// Relative figures of one algorithm on one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteComparison {
    pub site: String,
    pub algorithm: Algorithm,
    pub cost: f64,
    pub savings_vs_heu_pct: Option<f64>,
    pub extra_vs_pmpc_pct: Option<f64>,
    pub yearly_savings: Option<f64>,
}

fn percent(num: f64, den: f64) -> Option<f64> {
    let v = 100.0 * num / den;
    v.is_finite().then_some(v)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn cost_of(results: &[RunRow], site: &str, algorithm: Algorithm) -> Option<f64> {
    results
        .iter()
        .find(|r| r.site == site && r.algorithm == algorithm)
        .and_then(|r| r.total_cost)
}

/// Per-site relative figures for every completed run.
pub fn site_comparisons(sites: &[SiteSummary], results: &[RunRow]) -> Vec<SiteComparison> {
    let mut out = Vec::new();
    for r in results {
        let Some(cost) = r.total_cost else { continue };
        let Some(site) = sites.iter().find(|s| s.id == r.site) else {
            continue;
        };
        let heu = cost_of(results, &r.site, Algorithm::Heu);
        let pmpc = cost_of(results, &r.site, Algorithm::PerfectMpc);
        out.push(SiteComparison {
            site: r.site.clone(),
            algorithm: r.algorithm,
            cost,
            savings_vs_heu_pct: heu.and_then(|h| percent(h - cost, h)),
            extra_vs_pmpc_pct: pmpc.and_then(|p| percent(cost - p, p)),
            yearly_savings: heu
                .filter(|_| site.test_steps > 0)
                .map(|h| (h - cost) * HOURS_PER_YEAR / site.test_steps as f64),
        });
    }
    out
}

fn mean_time(timing: &[TimingRow], site: &str, algorithm: Algorithm) -> f64 {
    timing
        .iter()
        .find(|t| t.site == site && t.algorithm == algorithm)
        .map_or(f64::INFINITY, |t| t.mean_decision_ms)
}

/// The cheapest challenger on each site. Equal costs go to the lower mean
/// decision time, then to the earlier algorithm.
pub fn best_challengers(
    sites: &[SiteSummary],
    results: &[RunRow],
    timing: &[TimingRow],
) -> BTreeMap<String, Algorithm> {
    let mut best = BTreeMap::new();
    for site in sites {
        let winner = Algorithm::CHALLENGERS
            .iter()
            .filter_map(|&a| cost_of(results, &site.id, a).map(|c| (a, c)))
            .min_by(|(a, ca), (b, cb)| {
                ca.total_cmp(cb)
                    .then(mean_time(timing, &site.id, *a).total_cmp(&mean_time(timing, &site.id, *b)))
                    .then(a.cmp(b))
            });
        if let Some((a, _)) = winner {
            best.insert(site.id.clone(), a);
        }
    }
    best
}

pub fn compute_aggregates(
    algorithms: &[Algorithm],
    sites: &[SiteSummary],
    results: &[RunRow],
    timing: &[TimingRow],
) -> Vec<Aggregate> {
    let comparisons = site_comparisons(sites, results);
    let best = best_challengers(sites, results, timing);
    algorithms
        .iter()
        .map(|&algorithm| {
            let rows: Vec<&SiteComparison> =
                comparisons.iter().filter(|c| c.algorithm == algorithm).collect();
            let with_heu: Vec<&&SiteComparison> =
                rows.iter().filter(|c| c.savings_vs_heu_pct.is_some()).collect();
            let mut pooled = (0.0, 0.0, 0usize);
            for c in &rows {
                if let (Some(h), Some(s)) = (
                    cost_of(results, &c.site, Algorithm::Heu),
                    sites.iter().find(|s| s.id == c.site),
                ) {
                    pooled.0 += h;
                    pooled.1 += c.cost;
                    pooled.2 += s.test_steps;
                }
            }
            let pooled_yearly = (pooled.2 > 0)
                .then(|| (pooled.0 - pooled.1) * HOURS_PER_YEAR / pooled.2 as f64);
            let best_fraction = (algorithm.is_challenger() && !best.is_empty()).then(|| {
                best.values().filter(|a| **a == algorithm).count() as f64 / best.len() as f64
            });
            Aggregate {
                algorithm,
                sites: with_heu.len(),
                avg_savings_vs_heu_pct: mean(rows.iter().filter_map(|c| c.savings_vs_heu_pct)),
                avg_extra_vs_pmpc_pct: mean(rows.iter().filter_map(|c| c.extra_vs_pmpc_pct)),
                avg_yearly_savings: mean(rows.iter().filter_map(|c| c.yearly_savings)),
                pooled_yearly_savings: pooled_yearly,
                best_fraction,
                failures: results
                    .iter()
                    .filter(|r| r.algorithm == algorithm && !r.ok)
                    .count(),
            }
        })
        .collect()
}

pub fn timing_aggregates(algorithms: &[Algorithm], timing: &[TimingRow]) -> Vec<TimingAggregate> {
    algorithms
        .iter()
        .map(|&algorithm| TimingAggregate {
            algorithm,
            mean_decision_ms: mean(
                timing
                    .iter()
                    .filter(|t| t.algorithm == algorithm)
                    .map(|t| t.mean_decision_ms),
            ),
        })
        .collect()
}

impl BenchmarkReport {
    pub fn new(
        config: ExperimentConfig,
        sites: Vec<SiteSummary>,
        results: Vec<RunRow>,
        trajectories: Vec<Trajectory>,
        runs: Vec<TimingRow>,
    ) -> Self {
        let aggregates = compute_aggregates(&config.algorithms, &sites, &results, &runs);
        let timing = Timing {
            aggregates: timing_aggregates(&config.algorithms, &runs),
            runs,
        };
        BenchmarkReport {
            schema_version: SCHEMA_VERSION,
            test_window: "trailing".into(),
            config,
            sites,
            results,
            aggregates,
            trajectories,
            timing,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let report: BenchmarkReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        if report.schema_version != SCHEMA_VERSION {
            bail!(
                "report schema version {} is not supported (expected {SCHEMA_VERSION})",
                report.schema_version
            );
        }
        Ok(report)
    }

    /// Checks that the stored aggregates match their recomputation.
    pub fn check_aggregates(&self) -> Result<()> {
        let again = compute_aggregates(
            &self.config.algorithms,
            &self.sites,
            &self.results,
            &self.timing.runs,
        );
        if again != self.aggregates {
            bail!("stored aggregates differ from the per-site rows");
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without its timing section and with zeroed timing fields.
    pub fn without_timing(&self) -> BenchmarkReport {
        let mut r = self.clone();
        r.timing = Timing {
            runs: Vec::new(),
            aggregates: Vec::new(),
        };
        r
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary table with one row per algorithm.
pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from(
        "algorithm,sites,avg_savings_vs_heu_pct,extra_cost_vs_pmpc_pct,\
         avg_yearly_savings_eur,pooled_yearly_savings_eur,best_fraction,\
         mean_time_ms_per_it,failures\n",
    );
    for a in &report.aggregates {
        let time = report
            .timing
            .aggregates
            .iter()
            .find(|t| t.algorithm == a.algorithm)
            .and_then(|t| t.mean_decision_ms);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            a.algorithm,
            a.sites,
            opt(a.avg_savings_vs_heu_pct),
            opt(a.avg_extra_vs_pmpc_pct),
            opt(a.avg_yearly_savings),
            opt(a.pooled_yearly_savings),
            opt(a.best_fraction),
            opt(time),
            a.failures
        );
    }
    out
}

/// Per-site relative savings, one row per site and algorithm.
pub fn savings_tsv(report: &BenchmarkReport) -> String {
    let mut out = String::from("site\talgorithm\tcost\tsavings_vs_heu_pct\textra_vs_pmpc_pct\n");
    for c in site_comparisons(&report.sites, &report.results) {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            c.site,
            c.algorithm,
            c.cost,
            opt(c.savings_vs_heu_pct),
            opt(c.extra_vs_pmpc_pct)
        );
    }
    out
}

pub fn trajectory_tsv(t: &Trajectory) -> String {
    let mut out = String::from("time\tsoc\tcontrol\tnetload\timport\tprice\tsubscribed\tcost\n");
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.timestamp, r.soc, r.control, r.netload, r.import, r.price, t.subscribed, r.cost
        );
    }
    out
}

pub fn trajectory_file_name(site: &str, algorithm: Algorithm) -> String {
    let safe: String = site
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}_{algorithm}.tsv")
}

fn write(path: PathBuf, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

/// Writes the JSON report, the summary CSV, the savings TSV and one TSV per
/// recorded trajectory. Returns the written paths.
pub fn emit_report(report: &BenchmarkReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut written = Vec::new();
    write(out_dir.join(REPORT_JSON), &report.to_json(), &mut written)?;
    write(out_dir.join(SUMMARY_CSV), &summary_csv(report), &mut written)?;
    write(out_dir.join(SAVINGS_TSV), &savings_tsv(report), &mut written)?;
    if !report.trajectories.is_empty() {
        let dir = out_dir.join(TRAJECTORY_DIR);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for t in &report.trajectories {
            write(
                dir.join(trajectory_file_name(&t.site, t.algorithm)),
                &trajectory_tsv(t),
                &mut written,
            )?;
        }
    }
    Ok(written)
}
