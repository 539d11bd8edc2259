//! The six controllers of the benchmark.
//!
//! | name      | policy          | forecast                          |
//! |-----------|-----------------|-----------------------------------|
//! | `HEU`     | [`Heuristic`]   | none, reacts to the current netload |
//! | `P-MPC`   | [`PerfectMpc`]  | the true future                   |
//! | `MPC`     | [`MsspPolicy`]  | mean of the sampled scenarios     |
//! | `SP`      | [`MsspPolicy`]  | stagewise-reduced scenario tree   |
//! | `2S-SP`   | [`MsspPolicy`]  | fan of all samples                |
//! | `2S-SP-C` | [`MsspPolicy`]  | fan of k-means centroids          |

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::microgrid::{BatteryParams, Control, SiteConfig, State};
use crate::milp::{build_extensive, MipOptions, SolveStatus};
use crate::simulate::{DecisionContext, Policy, PolicyError};
use crate::tree::{
    average_branch, build_fan, cluster_fan, reduce_to_tree, ScenarioMatrix, ScenarioTree,
};
use crate::uncertainty::ScenarioSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "HEU")]
    Heu,
    #[serde(rename = "P-MPC")]
    PerfectMpc,
    #[serde(rename = "MPC")]
    Mpc,
    #[serde(rename = "SP")]
    Sp,
    #[serde(rename = "2S-SP")]
    TwoStage,
    #[serde(rename = "2S-SP-C")]
    TwoStageClustered,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Heu,
        Algorithm::PerfectMpc,
        Algorithm::Mpc,
        Algorithm::Sp,
        Algorithm::TwoStage,
        Algorithm::TwoStageClustered,
    ];

    /// The four sampling-based controllers.
    pub const CHALLENGERS: [Algorithm; 4] = [
        Algorithm::Mpc,
        Algorithm::Sp,
        Algorithm::TwoStage,
        Algorithm::TwoStageClustered,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Heu => "HEU",
            Algorithm::PerfectMpc => "P-MPC",
            Algorithm::Mpc => "MPC",
            Algorithm::Sp => "SP",
            Algorithm::TwoStage => "2S-SP",
            Algorithm::TwoStageClustered => "2S-SP-C",
        }
    }

    pub fn is_challenger(self) -> bool {
        Self::CHALLENGERS.contains(&self)
    }

    /// Default challenger settings, `None` for the two baselines.
    pub fn challenger_config(self) -> Option<ChallengerConfig> {
        let method = match self {
            Algorithm::Mpc => TreeMethod::Averaged,
            Algorithm::Sp => TreeMethod::Reduced,
            Algorithm::TwoStage => TreeMethod::Fan,
            Algorithm::TwoStageClustered => TreeMethod::ClusteredFan,
            Algorithm::Heu | Algorithm::PerfectMpc => return None,
        };
        Some(ChallengerConfig::new(method))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMethod {
    Averaged,
    Fan,
    ClusteredFan,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengerConfig {
    pub method: TreeMethod,
    /// Number of sampled scenarios K.
    pub samples: usize,
    /// Number of clusters K' of the clustered fan.
    pub clusters: usize,
    /// Relative tolerances (construction, reduction) of the reduced tree.
    pub eps: (f64, f64),
    /// Rolling horizon R.
    pub horizon: usize,
}

impl ChallengerConfig {
    pub fn new(method: TreeMethod) -> Self {
        let samples = match method {
            TreeMethod::Averaged | TreeMethod::Reduced => 50,
            TreeMethod::Fan => 20,
            TreeMethod::ClusteredFan => 100,
        };
        ChallengerConfig {
            method,
            samples,
            clusters: 20,
            eps: (0.2, 0.0),
            horizon: 23,
        }
    }

    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = samples;
        self
    }

    /// Builds the tree of this method rooted at the current netload.
    pub fn build_tree(
        &self,
        samples: &ScenarioMatrix,
        root_value: f64,
        seed: u64,
    ) -> Result<ScenarioTree, PolicyError> {
        Ok(match self.method {
            TreeMethod::Averaged => average_branch(samples, root_value),
            TreeMethod::Fan => build_fan(samples, root_value),
            TreeMethod::ClusteredFan => {
                cluster_fan(samples, self.clusters.min(samples.len()), root_value, seed)?
            }
            TreeMethod::Reduced => reduce_to_tree(samples, root_value, self.eps.0, self.eps.1)?,
        })
    }
}

/// Battery energy chosen by the myopic rule: absorb surplus, cover deficit.
pub fn heu_decide(state: State, netload: f64, site: &SiteConfig) -> Control {
    let b: &BatteryParams = &site.battery;
    let s = state.soc;
    let pb = if netload < 0.0 {
        (-netload)
            .min(site.charge_limit())
            .min(((b.capacity - s) / b.eff_charge).max(0.0))
    } else if netload > 0.0 {
        -netload
            .min(-site.discharge_limit())
            .min((b.eff_discharge * s).max(0.0))
    } else {
        0.0
    };
    Control::new(pb)
}

#[derive(Debug, Clone, Default)]
pub struct Heuristic;

impl Policy for Heuristic {
    fn name(&self) -> &str {
        "HEU"
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Control, PolicyError> {
        Ok(heu_decide(ctx.state, ctx.current_netload(), ctx.site))
    }
}

/// Counters shared by the optimization-based controllers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub decisions: usize,
    pub tree_nodes: usize,
    /// Largest |sum of leaf probabilities - 1| over all trees built.
    pub max_probability_error: f64,
    /// Solves stopped by the time limit.
    pub time_limited: usize,
    pub bb_nodes: usize,
}

impl PolicyStats {
    fn record(&mut self, tree: &ScenarioTree, status: SolveStatus, bb_nodes: usize) {
        self.decisions += 1;
        self.tree_nodes += tree.len();
        let err = (tree.leaf_probability_sum() - 1.0).abs();
        self.max_probability_error = self.max_probability_error.max(err);
        if status == SolveStatus::TimeLimit {
            self.time_limited += 1;
        }
        self.bb_nodes += bb_nodes;
    }
}

fn solve_tree(
    tree: &ScenarioTree,
    ctx: &DecisionContext<'_>,
    options: &MipOptions,
    stats: &mut PolicyStats,
) -> Result<Control, PolicyError> {
    let problem = build_extensive(tree, ctx.state.soc, ctx.hour, ctx.site)?;
    let outcome = problem.solve(options);
    stats.record(tree, outcome.status, outcome.nodes);
    match outcome.status {
        SolveStatus::Infeasible => Err(PolicyError::Solver(format!(
            "extensive problem with {} nodes reported infeasible at step {}",
            tree.len(),
            ctx.step
        ))),
        _ => Ok(Control::new(outcome.root_control)),
    }
}

/// Deterministic MPC on the true future netload.
#[derive(Debug, Clone)]
pub struct PerfectMpc {
    pub horizon: usize,
    pub options: MipOptions,
    pub stats: PolicyStats,
}

impl PerfectMpc {
    pub fn new(horizon: usize, options: MipOptions) -> Self {
        PerfectMpc {
            horizon,
            options,
            stats: PolicyStats::default(),
        }
    }
}

impl PerfectMpc {
    /// Chain of the true future netload.
    pub fn scenario_tree(&self, ctx: &DecisionContext<'_>) -> Result<ScenarioTree, PolicyError> {
        let future = ctx.oracle.ok_or(PolicyError::MissingOracle)?;
        let r = self.horizon.min(future.len());
        let mut tree = ScenarioTree::root_only(ctx.current_netload());
        let mut parent = 0;
        for &w in &future[..r] {
            parent = tree.push_child(parent, w, 1.0);
        }
        Ok(tree)
    }
}

impl Policy for PerfectMpc {
    fn name(&self) -> &str {
        "P-MPC"
    }

    fn requires_oracle(&self) -> bool {
        true
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Control, PolicyError> {
        let tree = self.scenario_tree(ctx)?;
        solve_tree(&tree, ctx, &self.options, &mut self.stats)
    }
}

/// Sampling-based controller: draws scenarios, builds a tree, solves the
/// extensive form and applies the root decision.
pub struct MsspPolicy {
    name: String,
    config: ChallengerConfig,
    sampler: Arc<dyn ScenarioSampler>,
    options: MipOptions,
    rng: ChaCha8Rng,
    pub stats: PolicyStats,
}

impl MsspPolicy {
    pub fn new(
        name: impl Into<String>,
        config: ChallengerConfig,
        sampler: Arc<dyn ScenarioSampler>,
        options: MipOptions,
        seed: u64,
    ) -> Self {
        MsspPolicy {
            name: name.into(),
            config,
            sampler,
            options,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stats: PolicyStats::default(),
        }
    }

    pub fn config(&self) -> &ChallengerConfig {
        &self.config
    }

    /// Samples scenarios and builds the tree for the current decision.
    /// Advances the seed stream exactly as a decision does.
    pub fn scenario_tree(&mut self, ctx: &DecisionContext<'_>) -> Result<ScenarioTree, PolicyError> {
        let sample_seed = self.rng.next_u64();
        let cluster_seed = self.rng.next_u64();
        let r = self
            .config
            .horizon
            .min(self.sampler.horizon())
            .min(ctx.remaining);
        let root = ctx.current_netload();
        if r == 0 {
            return Ok(ScenarioTree::root_only(root));
        }
        let samples = self
            .sampler
            .sample(ctx.history, r, self.config.samples, sample_seed)?;
        Ok(self.config.build_tree(&samples, root, cluster_seed)?)
    }
}

impl Policy for MsspPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Control, PolicyError> {
        let tree = self.scenario_tree(ctx)?;
        solve_tree(&tree, ctx, &self.options, &mut self.stats)
    }
}

/// Any of the six controllers behind one type.
pub enum AnyPolicy {
    Heuristic(Heuristic),
    Perfect(PerfectMpc),
    Mssp(MsspPolicy),
}

impl AnyPolicy {
    /// Builds `algorithm` with its default settings. `sampler` is required
    /// for the challengers.
    pub fn new(
        algorithm: Algorithm,
        sampler: Option<Arc<dyn ScenarioSampler>>,
        options: MipOptions,
        horizon: usize,
        seed: u64,
    ) -> Result<Self, String> {
        match algorithm.challenger_config() {
            None if algorithm == Algorithm::Heu => Ok(AnyPolicy::Heuristic(Heuristic)),
            None => Ok(AnyPolicy::Perfect(PerfectMpc::new(horizon, options))),
            Some(mut config) => {
                config.horizon = horizon;
                let sampler =
                    sampler.ok_or_else(|| format!("{algorithm} needs a scenario sampler"))?;
                Ok(AnyPolicy::Mssp(MsspPolicy::new(
                    algorithm.name(),
                    config,
                    sampler,
                    options,
                    seed,
                )))
            }
        }
    }

    pub fn stats(&self) -> Option<&PolicyStats> {
        match self {
            AnyPolicy::Heuristic(_) => None,
            AnyPolicy::Perfect(p) => Some(&p.stats),
            AnyPolicy::Mssp(p) => Some(&p.stats),
        }
    }

    /// Tree the policy would optimize over at `ctx`; `None` for the
    /// heuristic.
    pub fn scenario_tree(
        &mut self,
        ctx: &DecisionContext<'_>,
    ) -> Result<Option<ScenarioTree>, PolicyError> {
        match self {
            AnyPolicy::Heuristic(_) => Ok(None),
            AnyPolicy::Perfect(p) => p.scenario_tree(ctx).map(Some),
            AnyPolicy::Mssp(p) => p.scenario_tree(ctx).map(Some),
        }
    }

    fn inner(&mut self) -> &mut dyn Policy {
        match self {
            AnyPolicy::Heuristic(p) => p,
            AnyPolicy::Perfect(p) => p,
            AnyPolicy::Mssp(p) => p,
        }
    }
}

impl Policy for AnyPolicy {
    fn name(&self) -> &str {
        match self {
            AnyPolicy::Heuristic(p) => p.name(),
            AnyPolicy::Perfect(p) => p.name(),
            AnyPolicy::Mssp(p) => p.name(),
        }
    }

    fn requires_oracle(&self) -> bool {
        matches!(self, AnyPolicy::Perfect(_))
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Control, PolicyError> {
        self.inner().decide(ctx)
    }
}
