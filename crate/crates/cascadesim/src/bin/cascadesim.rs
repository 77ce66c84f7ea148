use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use cascadesim::{plot, runner, Axis, ExperimentConfig};
use clap::{Args, Parser, Subcommand};

/// Trace-driven simulator for serving a two-stage model cascade.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write intervals.csv, queries.csv and plans.csv.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run every point of a parameter grid and write sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Swept parameter as `key=v1,v2,...`; repeat for a product grid.
        #[arg(long = "vary", value_name = "KEY=VALUES")]
        vary: Vec<Axis>,
        /// Give every point the base seed instead of a derived one.
        #[arg(long)]
        shared_seed: bool,
    },
    /// Draw threshold, violation ratio and quality from a run's intervals.csv.
    Plot {
        /// Run output directory.
        dir: PathBuf,
        /// SVG file to write (default: <dir>/plot.svg).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    servers: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other config field as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv.split_once('=').with_context(|| format!("cli: expected key=value, got `{kv}`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(policy) = self.policy {
            cfg.policy = policy;
        }
        if let Some(trace) = self.trace {
            cfg.trace = Some(trace);
        }
        if let Some(servers) = self.servers {
            cfg.servers = servers;
        }
        if let Some(out) = self.out {
            cfg.out = out;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { common } => {
            let report = runner::run(&common.load()?)?;
            println!("{report}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { common, vary, shared_seed } => {
            let cfg = common.load()?;
            let points = runner::sweep(&cfg, &vary, shared_seed)?;
            let mut failed = 0;
            for p in &points {
                match &p.result {
                    Ok(s) => println!(
                        "{} seed={} violation_ratio={} mean_quality={}",
                        p.label,
                        p.seed,
                        s.violation_ratio.map_or("-".into(), cascadesim::output::fmt_num),
                        s.mean_quality.map_or("-".into(), cascadesim::output::fmt_num),
                    ),
                    Err(e) => {
                        failed += 1;
                        eprintln!("{} failed: {e}", p.label);
                    }
                }
            }
            println!("{} points, {} failed, sweep.csv in {}", points.len(), failed, cfg.out.display());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Plot { dir, out } => {
            let svg = out.unwrap_or_else(|| dir.join("plot.svg"));
            plot::plot_dir(&dir, &svg)?;
            println!("wrote {}", svg.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
