//! Experiment configuration, scenario runs and artifact export.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{self, CombinationMatrix, GraphDocument, GraphError};
use crate::influence::{self, InfluenceError, InfluenceMap, InfluencePath};
use crate::io::{self, InfluenceReport, IoError};
use crate::learning::{
    self, LearningError, LearningMode, MsdTrace, OnlineConfig, OnlineRun, ScheduledChange,
};
use crate::observation::{self, LikelihoodModel, ModelDocument, ModelError, ModelParams};
use crate::rng::{derive_seed, tag};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("cannot parse config: {0}")]
    ConfigSyntax(String),
    #[error("unknown plot selector `{0}` (expected msd, map or path)")]
    UnknownSelector(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Influence(#[from] InfluenceError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Full description of a run. Every field has a default, so a config file
/// only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub theta_count: usize,
    pub z_count: usize,
    pub edge_prob: f64,
    pub delta: f64,
    pub mu: f64,
    pub steps: u64,
    pub seed: u64,
    pub mode: LearningMode,
    pub true_theta: usize,
    /// Likelihood probability floor.
    pub epsilon: f64,
    /// Dirichlet concentration of the random likelihood rows.
    pub concentration: f64,
    /// Influence horizon `d`.
    pub d: usize,
    pub tau_edge: f64,
    pub influence_target: usize,
    pub top_paths: usize,
    pub record_beliefs: bool,
    pub schedule: Vec<ScheduledChange>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 30,
            theta_count: 10,
            z_count: 2,
            edge_prob: 0.2,
            delta: 0.1,
            mu: 0.1,
            steps: 14_000,
            seed: 0,
            mode: LearningMode::Known,
            true_theta: 0,
            epsilon: 0.05,
            concentration: 16.0,
            d: 2,
            tau_edge: 0.05,
            influence_target: 0,
            top_paths: 5,
            record_beliefs: false,
            schedule: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let config: Self =
            toml::from_str(text).map_err(|e| ExperimentError::ConfigSyntax(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_toml(&io::read_file(path)?)
    }

    /// Resolved config with every field written out.
    pub fn to_toml(&self) -> Result<String, ExperimentError> {
        self.validate()?;
        toml::to_string(self).map_err(|e| ExperimentError::ConfigSyntax(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |field, reason: String| Err(ExperimentError::Config { field, reason });
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            return bad(
                "seed",
                format!("must be at most {}, got {}", i64::MAX, self.seed),
            );
        }
        if self.n < 2 {
            return bad("n", format!("need at least 2 agents, got {}", self.n));
        }
        if self.theta_count < 2 {
            return bad(
                "theta_count",
                format!("need at least 2, got {}", self.theta_count),
            );
        }
        if self.z_count < 2 {
            return bad("z_count", format!("need at least 2, got {}", self.z_count));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob < 1.0) {
            return bad(
                "edge_prob",
                format!("must lie in (0, 1), got {}", self.edge_prob),
            );
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", format!("must lie in (0, 1), got {}", self.delta));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return bad("mu", format!("must be non-negative, got {}", self.mu));
        }
        if self.true_theta >= self.theta_count {
            return bad("true_theta", format!("{} out of range", self.true_theta));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / self.z_count as f64) {
            return bad(
                "epsilon",
                format!("must lie in (0, 1/z_count), got {}", self.epsilon),
            );
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad(
                "concentration",
                format!("must be positive, got {}", self.concentration),
            );
        }
        if !(self.tau_edge >= 0.0) {
            return bad(
                "tau_edge",
                format!("must be non-negative, got {}", self.tau_edge),
            );
        }
        if self.influence_target >= self.n {
            return bad(
                "influence_target",
                format!("{} out of range", self.influence_target),
            );
        }
        if let Err(LearningError::InvalidParameter { reason, .. }) =
            learning::validate_schedule(&self.schedule)
        {
            return bad("schedule", reason);
        }
        for e in &self.schedule {
            if let ScheduledChange::StateChange { theta, .. } = e {
                if *theta >= self.theta_count {
                    return bad("schedule", format!("state {theta} out of range"));
                }
            }
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            epsilon: self.epsilon,
            concentration: self.concentration,
            true_theta: self.true_theta,
            ..ModelParams::new(self.n, self.theta_count, self.z_count)
        }
    }

    pub fn online_config(&self) -> OnlineConfig {
        OnlineConfig {
            true_theta: self.true_theta,
            edge_prob: self.edge_prob,
            schedule: self.schedule.clone(),
            record_beliefs: self.record_beliefs,
            ..OnlineConfig::new(self.steps, self.delta, self.mu, self.seed)
        }
    }

    pub fn graph_seed(&self) -> u64 {
        derive_seed(self.seed, tag::GRAPH, 0)
    }

    pub fn model_seed(&self) -> u64 {
        derive_seed(self.seed, tag::MODEL, 0)
    }
}

/// Ground truth and likelihoods of a config.
pub fn build_world(
    config: &ExperimentConfig,
) -> Result<(CombinationMatrix, LikelihoodModel), ExperimentError> {
    config.validate()?;
    let a = graph::generate_erdos_renyi(config.n, config.edge_prob, config.graph_seed())?;
    let model = observation::generate_model(&config.model_params(), config.model_seed())?;
    Ok((a, model))
}

/// Files written by a run, plus the in-memory results they hold.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub true_graph: PathBuf,
    pub learned_graph: Option<PathBuf>,
    pub model: PathBuf,
    pub msd_trace: Option<PathBuf>,
    pub belief_trace: Option<PathBuf>,
    pub influence_report: Option<PathBuf>,
    pub trace: Option<MsdTrace>,
    pub influence: Option<InfluenceReport>,
}

impl RunArtifacts {
    pub fn files(&self) -> Vec<&Path> {
        let mut v = vec![
            self.config.as_path(),
            self.true_graph.as_path(),
            self.model.as_path(),
        ];
        v.extend(
            [
                &self.learned_graph,
                &self.msd_trace,
                &self.belief_trace,
                &self.influence_report,
            ]
            .into_iter()
            .flatten()
            .map(|p| p.as_path()),
        );
        v
    }
}

fn prepare_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| {
        ExperimentError::Io(IoError::File {
            path: dir.to_path_buf(),
            source,
        })
    })
}

fn write_world(
    config: &ExperimentConfig,
    a: &CombinationMatrix,
    model: &LikelihoodModel,
    dir: &Path,
) -> Result<(PathBuf, PathBuf, PathBuf), ExperimentError> {
    prepare_dir(dir)?;
    let config_path = dir.join("config.toml");
    io::write_file(&config_path, &config.to_toml()?)?;
    let graph_path = dir.join("true_graph.json");
    io::write_file(
        &graph_path,
        &GraphDocument::from_matrix(a, Some(config.graph_seed())).to_json(),
    )?;
    let model_path = dir.join("model.json");
    io::write_file(
        &model_path,
        &model
            .to_document(config.true_theta, Some(config.model_seed()))
            .to_json(),
    )?;
    Ok((config_path, graph_path, model_path))
}

/// Influence map on `target` and the strongest incoming paths.
pub fn influence_report(
    a: &CombinationMatrix,
    target: usize,
    d: usize,
    delta: f64,
    theta_count: usize,
    top: usize,
) -> Result<InfluenceReport, ExperimentError> {
    let map = influence::influence_map(a, target, d, delta, theta_count)?;
    let top_paths = influence::top_paths_to(a, target, d, delta, theta_count, top)?;
    Ok(InfluenceReport {
        target,
        d,
        delta,
        map,
        top_paths,
    })
}

/// Runs the belief engine alone and records the public beliefs.
pub fn run_simulation(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let (a, model) = build_world(config)?;
    let (config_path, graph_path, model_path) = write_world(config, &a, &model, out_dir)?;
    let mut online = config.online_config();
    online.record_beliefs = true;
    let run = learning::run_online_modes(&a, &model, &online, &[])?;
    let belief_path = out_dir.join("beliefs.csv");
    io::write_file(
        &belief_path,
        &io::belief_trace_csv(&run.beliefs, config.n, config.theta_count),
    )?;
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        config: config_path,
        true_graph: graph_path,
        learned_graph: None,
        model: model_path,
        msd_trace: None,
        belief_trace: Some(belief_path),
        influence_report: None,
        trace: None,
        influence: None,
    })
}

/// Builds the world, runs online learning with the schedule and writes every
/// artifact to `out_dir`.
pub fn run_scenario(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunArtifacts, ExperimentError> {
    let (a, model) = build_world(config)?;
    let (config_path, graph_path, model_path) = write_world(config, &a, &model, out_dir)?;
    let run = learning::run_online(&a, &model, &config.online_config(), config.mode)?;

    let learned_path = out_dir.join("learned_graph.json");
    io::write_file(
        &learned_path,
        &GraphDocument::from_estimate(&run.learner().estimate, Some(config.seed)).to_json(),
    )?;
    let msd_path = out_dir.join("msd.csv");
    io::write_file(&msd_path, &io::msd_trace_csv(run.trace()))?;
    let belief_trace = if config.record_beliefs {
        let p = out_dir.join("beliefs.csv");
        io::write_file(
            &p,
            &io::belief_trace_csv(&run.beliefs, config.n, config.theta_count),
        )?;
        Some(p)
    } else {
        None
    };

    let report = learned_influence(config, &run)?;
    let report_path = out_dir.join("influence.json");
    io::write_file(&report_path, &report.to_json())?;

    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        config: config_path,
        true_graph: graph_path,
        learned_graph: Some(learned_path),
        model: model_path,
        msd_trace: Some(msd_path),
        belief_trace,
        influence_report: Some(report_path),
        trace: Some(run.trace().clone()),
        influence: Some(report),
    })
}

fn learned_influence(
    config: &ExperimentConfig,
    run: &OnlineRun,
) -> Result<InfluenceReport, ExperimentError> {
    let learned = learning::project_to_stochastic(&run.learner().estimate, config.tau_edge)?;
    influence_report(
        &learned,
        config.influence_target,
        config.d,
        config.delta,
        config.theta_count,
        config.top_paths,
    )
}

#[derive(Debug, Clone)]
pub struct ModeComparison {
    pub known: MsdTrace,
    pub vote: MsdTrace,
    pub path: PathBuf,
}

/// Known-state and majority-vote learners on one shared observation stream.
pub fn compare_modes(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ModeComparison, ExperimentError> {
    let (a, model) = build_world(config)?;
    write_world(config, &a, &model, out_dir)?;
    let run = learning::run_online_modes(
        &a,
        &model,
        &config.online_config(),
        &[LearningMode::Known, LearningMode::Vote],
    )?;
    let mut traces = run.traces.into_iter();
    let known = traces.next().expect("two learners");
    let vote = traces.next().expect("two learners");
    let path = out_dir.join("compare.csv");
    io::write_file(&path, &io::compare_csv(&known, &vote))?;
    Ok(ModeComparison { known, vote, path })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Msd,
    Map,
    Path,
}

impl FromStr for PlotKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "msd" => Ok(PlotKind::Msd),
            "map" => Ok(PlotKind::Map),
            "path" => Ok(PlotKind::Path),
            other => Err(ExperimentError::UnknownSelector(other.to_string())),
        }
    }
}

/// Writes plot-ready CSV for the selected result into the run directory.
pub fn emit_plot_data(
    artifacts: &RunArtifacts,
    which: PlotKind,
) -> Result<PathBuf, ExperimentError> {
    let missing = |what: &str| ExperimentError::Config {
        field: "artifacts",
        reason: format!("run has no {what}"),
    };
    let (name, body) = match which {
        PlotKind::Msd => {
            let trace = artifacts
                .trace
                .as_ref()
                .ok_or_else(|| missing("MSD trace"))?;
            ("plot_msd.csv", io::msd_trace_csv(trace))
        }
        PlotKind::Map => {
            let r = artifacts
                .influence
                .as_ref()
                .ok_or_else(|| missing("influence report"))?;
            ("plot_map.csv", io::influence_map_csv(&r.map))
        }
        PlotKind::Path => {
            let r = artifacts
                .influence
                .as_ref()
                .ok_or_else(|| missing("influence report"))?;
            ("plot_path.csv", io::paths_csv(&r.top_paths))
        }
    };
    let path = artifacts.dir.join(name);
    io::write_file(&path, &body)?;
    Ok(path)
}

/// Loads a graph file, accepting learned estimates by projecting them onto
/// left-stochastic matrices.
pub fn load_graph(path: &Path, tau_edge: f64) -> Result<CombinationMatrix, ExperimentError> {
    let doc = GraphDocument::from_json(&io::read_file(path)?)?;
    if doc.learned {
        Ok(learning::project_to_stochastic(
            &doc.weight_matrix()?,
            tau_edge,
        )?)
    } else {
        Ok(doc.to_matrix()?)
    }
}

pub fn load_model(path: &Path) -> Result<LikelihoodModel, ExperimentError> {
    Ok(ModelDocument::from_json(&io::read_file(path)?)?.to_model()?)
}

pub fn write_influence_map(map: &InfluenceMap, path: &Path) -> Result<(), ExperimentError> {
    Ok(io::write_file(path, &io::influence_map_csv(map))?)
}

pub fn write_paths(paths: &[InfluencePath], path: &Path) -> Result<(), ExperimentError> {
    Ok(io::write_file(path, &io::paths_csv(paths))?)
}
