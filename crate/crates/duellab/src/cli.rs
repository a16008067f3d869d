//! Command-line front end: `run`, `plot`, `validate`, and `presets` verbs
//! over the config, runner, and plot modules.
//!
//! Exit codes: 0 on success, 2 for configuration problems (unreadable,
//! unparseable, or invalid configs and malformed plot inputs), 3 when an
//! experiment cell aborted at runtime (e.g. divergent training).
//!
//! The output directory for `run` resolves in this order: the `-o` flag,
//! the config's `runner.output_dir`, the `DUELLAB_OUT` environment
//! variable, then `./out`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::agent::preset_names;
use crate::config::parse_config;
use crate::error::Error;
use crate::plot::write_plots;
use crate::runner::{aggregate, run_sweep, write_outputs, ExperimentConfig};

/// Name of the environment variable holding the default output directory.
pub const OUT_ENV_VAR: &str = "DUELLAB_OUT";

/// Exit status for configuration errors.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status when at least one run aborted.
pub const EXIT_ABORT: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "duellab",
    about = "Contextual dueling-bandit experiment laboratory",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute every (env x agent x seed) cell of a config and write
    /// runs.csv, summary.csv, timing.csv, and one SVG chart per env.
    Run {
        /// Experiment config file (TOML).
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory (overrides the config and DUELLAB_OUT).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Dotted-path overrides, e.g. --set runner.rounds=100 --set agent.nu=2.0
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Render SVG regret charts from an existing summary.csv.
    Plot {
        /// summary.csv produced by `run`.
        #[arg(short, long)]
        input: PathBuf,
        /// Directory for the SVG files.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Parse and validate a config without running anything.
    Validate {
        /// Experiment config file (TOML).
        #[arg(short, long)]
        config: PathBuf,
    },
    /// List the built-in agent presets.
    Presets,
}

/// Run a parsed command line to completion, returning the process exit code.
pub fn execute(cli: Cli) -> u8 {
    match cli.command {
        Command::Run { config, output, set } => cmd_run(&config, output.as_deref(), &set),
        Command::Plot { input, output } => cmd_plot(&input, &output),
        Command::Validate { config } => cmd_validate(&config),
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            0
        }
    }
}

fn fail(code: u8, err: &Error) -> u8 {
    eprintln!("error: {err}");
    code
}

fn load(config_path: &Path, overrides: &[String]) -> Result<ExperimentConfig, Error> {
    parse_config(config_path, overrides)
}

fn cmd_validate(config_path: &Path) -> u8 {
    match load(config_path, &[]) {
        Ok(cfg) => {
            println!(
                "ok: {} env(s), {} agent(s), {} round(s), {} seed(s)",
                cfg.envs.len(),
                cfg.agents.len(),
                cfg.rounds,
                cfg.seeds.len()
            );
            0
        }
        Err(e) => fail(EXIT_CONFIG, &e),
    }
}

fn cmd_run(config_path: &Path, output: Option<&Path>, overrides: &[String]) -> u8 {
    let mut cfg = match load(config_path, overrides) {
        Ok(cfg) => cfg,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };
    if let Some(dir) = output {
        cfg.output_dir = dir.to_path_buf();
    } else if cfg.output_dir == Path::new("out") {
        if let Some(env_dir) = std::env::var_os(OUT_ENV_VAR) {
            cfg.output_dir = PathBuf::from(env_dir);
        }
    }
    let results = match run_sweep(&cfg) {
        Ok(results) => results,
        Err(e) => return fail(EXIT_ABORT, &e),
    };
    let summary = match aggregate(&results) {
        Ok(summary) => summary,
        Err(e) => return fail(EXIT_ABORT, &e),
    };
    for warning in &summary.warnings {
        eprintln!("warning: {warning}");
    }
    let files = match write_outputs(&results, &summary, &cfg.output_dir) {
        Ok(files) => files,
        Err(e) => return fail(EXIT_ABORT, &e),
    };
    // one line per (env, agent): final mean cumulative average regret
    for curve in &summary.curves {
        let last = curve.mean_cum_avg.last().copied().unwrap_or(f64::NAN);
        let rounds = curve.mean_cum_avg.len();
        println!(
            "{} / {}: mean cumulative average regret {:.4} at round {}",
            curve.env, curve.agent, last, rounds
        );
    }
    let aborted: Vec<&crate::runner::RunResult> =
        results.iter().filter(|r| r.abort.is_some()).collect();
    for r in &aborted {
        let info = r.abort.as_ref().expect("filtered on abort");
        eprintln!(
            "abort: {} / {} seed {} at round {}: {}",
            r.env, r.agent, r.seed, info.round, info.message
        );
    }
    let summary_csv = cfg.output_dir.join("summary.csv");
    match write_plots(&summary_csv, &cfg.output_dir) {
        Ok(mut plots) => {
            let mut all = files;
            all.append(&mut plots);
            for f in all {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => return fail(EXIT_ABORT, &e),
    }
    if aborted.is_empty() {
        0
    } else {
        EXIT_ABORT
    }
}

fn cmd_plot(input: &Path, output: &Path) -> u8 {
    match write_plots(input, output) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => fail(EXIT_CONFIG, &e),
    }
}
