//! Command-line entry points: train, eval, sweep, replay and serve.

mod config;

pub use config::{apply_override, ConfigError, EvalSection, RunConfig, ServeSection, SweepSection};

use crate::controller::{read_trace, replay_trace, write_trace};
use crate::eval::{emit_report, emit_series, obstacle_sweep_experiment, run_experiment_with, EvalOptions};
use crate::service::{serve, ServiceConfig};
use crate::trainer::train;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dronenav", version, about = "Multi-drone navigation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML config file.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set scenario.n_obstacles=8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Parameter file, or `greedy-oracle` / `rules-only`.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Train a policy with PPO.
    Train(Common),
    /// Evaluate a scenario over seeded episodes.
    Eval(Common),
    /// Evaluate a reach scenario over several obstacle counts.
    Sweep(Common),
    /// Re-run trace logs and check every state hash.
    Replay {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Run the HTTP control service.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Listen address; overrides `serve.addr`.
        #[arg(long)]
        addr: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("error: {0}")]
    Runtime(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Loads the config file, applies overrides and flags, and validates the result.
pub fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.eval.base_seed = s;
        cfg.sweep.base_seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    if let Some(p) = &common.policy {
        cfg.set_policy(p);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(runtime)?;
    std::fs::write(out.join("effective-config.toml"), cfg.to_toml()).map_err(runtime)
}

fn workers(cfg: &RunConfig) -> usize {
    cfg.workers.max(1)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Train(c) => {
            let cfg = resolve(&c)?;
            prepare_out(&c.out, &cfg)?;
            let run = train(&cfg.scenario, &cfg.train, cfg.seed, Some(&c.out), workers(&cfg)).map_err(runtime)?;
            let last = run.curve.last();
            println!(
                "trained {} cycles over {} episodes; final success rate {:.3}; parameters in {}",
                run.cycles,
                run.episodes,
                last.map(|r| r.success_rate).unwrap_or(0.0),
                c.out.join("final.bin").display()
            );
            Ok(())
        }
        Cmd::Eval(c) => {
            let cfg = resolve(&c)?;
            prepare_out(&c.out, &cfg)?;
            let opts = EvalOptions {
                workers: workers(&cfg),
                base_dir: None,
                keep_traces: cfg.eval.traces,
            };
            let (report, traces) =
                run_experiment_with(&cfg.scenario, cfg.eval.episodes, cfg.eval.base_seed, &opts).map_err(runtime)?;
            emit_report(std::slice::from_ref(&report), &cfg.eval.formats, &c.out).map_err(runtime)?;
            if !traces.is_empty() {
                let dir = c.out.join("traces");
                std::fs::create_dir_all(&dir).map_err(runtime)?;
                for t in &traces {
                    let f = std::fs::File::create(dir.join(format!("seed-{}.jsonl", t.seed))).map_err(runtime)?;
                    write_trace(t, std::io::BufWriter::new(f)).map_err(runtime)?;
                }
            }
            println!(
                "{} episodes: success {:.2}%, any hit {:.2}%, all hit {:.2}%, mean cycles {:.2}",
                report.n_episodes,
                report.success_rate,
                report.any_hit_rate,
                report.all_hit_rate,
                report.mean_total_cycles
            );
            Ok(())
        }
        Cmd::Sweep(c) => {
            let cfg = resolve(&c)?;
            prepare_out(&c.out, &cfg)?;
            let opts = EvalOptions {
                workers: workers(&cfg),
                ..Default::default()
            };
            let series = obstacle_sweep_experiment(
                &cfg.scenario,
                &cfg.sweep.counts,
                cfg.sweep.episodes,
                cfg.sweep.base_seed,
                &opts,
            )
            .map_err(runtime)?;
            emit_series(&series, &c.out).map_err(runtime)?;
            for (n, r) in series.counts.iter().zip(&series.reports) {
                println!(
                    "{n:>3} obstacles: success {:.2}%, any hit {:.2}%",
                    r.success_rate, r.any_hit_rate
                );
            }
            Ok(())
        }
        Cmd::Replay { traces } => {
            for path in traces {
                let f = std::fs::File::open(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                let trace =
                    read_trace(std::io::BufReader::new(f)).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                match replay_trace(&trace) {
                    Ok(r) => println!(
                        "{}: {} cycles, {} actions verified, {:?}",
                        path.display(),
                        r.cycles,
                        r.records,
                        r.outcome
                    ),
                    Err(e) if e.is_verification() => {
                        return Err(CliError::Verification(format!("{}: {e}", path.display())))
                    }
                    Err(e) => return Err(runtime(format!("{}: {e}", path.display()))),
                }
            }
            Ok(())
        }
        Cmd::Serve { common, addr } => {
            let cfg = resolve(&common)?;
            let addr = addr.unwrap_or_else(|| cfg.serve.addr.clone());
            let addr = addr
                .parse()
                .map_err(|e| CliError::Config(format!("bad listen address `{addr}`: {e}")))?;
            let service = ServiceConfig {
                tick_rate: cfg.serve.tick_rate,
                event_buffer: cfg.serve.event_buffer,
                base_dir: common.config.as_deref().and_then(Path::parent).map(Path::to_path_buf),
            };
            let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
            rt.block_on(serve(addr, service)).map_err(runtime)
        }
    }
}

/// Parses argv, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
