use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use ogl::experiment::{self, ExperimentConfig, PlotKind};
use ogl::influence;
use ogl::io;
use ogl::CombinationMatrix;

#[derive(Parser)]
#[command(
    name = "ogl",
    version,
    about = "Social learning simulation, online graph learning and influence analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the belief engine only and write the belief trace.
    Simulate(Common),
    /// Full online graph learning run with all artifacts.
    Learn(Common),
    /// Influence map on a target agent.
    Influence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<usize>,
        /// Graph file to analyse instead of learning one from the config.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Most influential path from one agent to another.
    Path {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source: usize,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Known-state and majority-vote learners on one observation stream.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; omitted fields take their defaults.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

/// The graph to analyse: a given file, or the one learned from the config.
fn analysis_graph(
    config: &ExperimentConfig,
    graph: Option<&Path>,
    out_dir: &Path,
) -> Result<CombinationMatrix> {
    match graph {
        Some(p) => experiment::load_graph(p, config.tau_edge)
            .with_context(|| format!("loading graph {}", p.display())),
        None => {
            let artifacts = experiment::run_scenario(config, out_dir)?;
            let learned = artifacts.learned_graph.expect("learn run writes a graph");
            Ok(experiment::load_graph(&learned, config.tau_edge)?)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(common) => {
            let config = common.resolve()?;
            let artifacts = experiment::run_simulation(&config, &common.out_dir)?;
            println!("{}", artifacts.belief_trace.unwrap().display());
        }
        Command::Learn(common) => {
            let config = common.resolve()?;
            let artifacts = experiment::run_scenario(&config, &common.out_dir)?;
            for kind in [PlotKind::Msd, PlotKind::Map, PlotKind::Path] {
                experiment::emit_plot_data(&artifacts, kind)?;
            }
            let trace = artifacts.trace.as_ref().unwrap();
            if !trace.records.is_empty() {
                let tail = (trace.records.len() / 10).max(1);
                println!(
                    "final msd {:.6e} (mean of last {tail}: {:.6e})",
                    trace.records.last().unwrap().msd,
                    trace.tail_mean(tail)
                );
            }
            println!("{}", artifacts.dir.display());
        }
        Command::Influence {
            common,
            target,
            graph,
        } => {
            let config = common.resolve()?;
            let a = analysis_graph(&config, graph.as_deref(), &common.out_dir)?;
            let target = target.unwrap_or(config.influence_target);
            let report = experiment::influence_report(
                &a,
                target,
                config.d,
                config.delta,
                config.theta_count,
                config.top_paths,
            )?;
            std::fs::create_dir_all(&common.out_dir)
                .with_context(|| format!("creating {}", common.out_dir.display()))?;
            let map_path = common.out_dir.join(format!("map_{target}.csv"));
            experiment::write_influence_map(&report.map, &map_path)?;
            io::write_file(
                &common.out_dir.join(format!("influence_{target}.json")),
                &report.to_json(),
            )?;
            for l in report.map.ranking().into_iter().take(config.top_paths) {
                let s = report.map.get(l).unwrap();
                println!("{l}\t{:.6e}\t{:.4}", s.raw, s.normalized);
            }
            println!("{}", map_path.display());
        }
        Command::Path {
            common,
            source,
            target,
            graph,
        } => {
            let config = common.resolve()?;
            let a = analysis_graph(&config, graph.as_deref(), &common.out_dir)?;
            let target = target.unwrap_or(config.influence_target);
            let path = influence::most_influential_path(
                &a,
                source,
                target,
                config.d,
                config.delta,
                config.theta_count,
            )?;
            std::fs::create_dir_all(&common.out_dir)
                .with_context(|| format!("creating {}", common.out_dir.display()))?;
            let out = common.out_dir.join(format!("path_{source}_{target}.csv"));
            experiment::write_paths(std::slice::from_ref(&path), &out)?;
            let nodes: Vec<String> = path.nodes.iter().map(|v| v.to_string()).collect();
            println!("{}\t{:.6e}", nodes.join("-"), path.score);
            println!("{}", out.display());
        }
        Command::Compare(common) => {
            let config = common.resolve()?;
            let cmp = experiment::compare_modes(&config, &common.out_dir)?;
            if !cmp.known.records.is_empty() {
                let tail = (cmp.known.records.len() / 10).max(1);
                println!(
                    "steady msd known {:.6e} vote {:.6e}",
                    cmp.known.tail_mean(tail),
                    cmp.vote.tail_mean(tail)
                );
            }
            println!("{}", cmp.path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Wrapped errors often repeat their source in their own message.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
