//! A full experiment sweep through the runner: several environments and
//! agents crossed over seeds, executed deterministically (any parallelism
//! yields byte-identical results), then aggregated and written out as the
//! standard CSV/SVG artifacts.
//!
//! ```text
//! cargo run --release --example synthetic_sweep
//! ```

use duellab::env::SyntheticKind;
use duellab::plot::write_plots;
use duellab::runner::{aggregate, run_sweep, write_outputs, AgentSpec, EnvSpec, ExperimentConfig};
use std::path::Path;

fn main() -> duellab::Result<()> {
    let config = ExperimentConfig {
        envs: vec![
            EnvSpec::synthetic("cosine", SyntheticKind::Cosine, 6, 4, false),
            EnvSpec::synthetic("linear", SyntheticKind::Linear, 6, 4, false),
        ],
        agents: vec![
            AgentSpec::preset("nvldb-ucb-asym")?,
            AgentSpec::preset("linear-ucb-asym")?,
        ],
        rounds: 120,
        seeds: vec![0, 1, 2],
        parallelism: 2,
        output_dir: "out/synthetic_sweep".into(),
        timing: false,
    };

    let results = run_sweep(&config)?;
    let summary = aggregate(&results)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }

    for curve in &summary.curves {
        let last = curve.mean_cum_avg.last().copied().unwrap_or(f64::NAN);
        println!(
            "{:<8} / {:<16} mean cumulative average regret {last:.2}",
            curve.env, curve.agent
        );
    }

    let out = Path::new("out/synthetic_sweep");
    let mut written = write_outputs(&results, &summary, out)?;
    written.extend(write_plots(&out.join("summary.csv"), out)?);
    println!("\nartifacts:");
    for p in &written {
        println!("  {}", p.display());
    }
    Ok(())
}
