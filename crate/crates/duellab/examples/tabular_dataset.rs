//! A classification dataset replayed as a preference environment.
//!
//! Each round the environment draws one labelled row, presents one arm per
//! class (the row's features placed in that class's block of a one-vs-all
//! encoding), and answers duels by preferring the arm that matches the
//! row's true label — deterministically here, so every mistake is the
//! agent's fault rather than noise.
//!
//! ```text
//! cargo run --release --example tabular_dataset
//! ```

use duellab::env::{LabelColumn, PreferenceMode, TabularEnv, TabularSchema};
use duellab::runner::{run_single, AgentSpec, EnvSpec};
use std::path::Path;

fn main() -> duellab::Result<()> {
    let csv = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/statlog-mini.csv");
    let schema = TabularSchema {
        label_column: LabelColumn::Name("class".into()),
        ..TabularSchema::default()
    };
    let env = TabularEnv::load(&csv, &schema, PreferenceMode::Deterministic)?;
    println!(
        "loaded {}: {} rows, {} classes, context dimension {}",
        csv.display(),
        env.instances(),
        env.arms(),
        env.context_dim()
    );

    let spec = EnvSpec::tabular("statlog-mini", env);
    let rounds = 250;

    // Variance-aware agent vs its agnostic twin. On a deterministic task
    // the weighting should help or at worst be neutral: confident correct
    // records get amplified, and there is no label noise to mislead it.
    for (name, eps) in [("nvldb-ucb-asym", Some(0.35)), ("nldb-ucb-asym", None)] {
        let mut cfg = duellab::agent::preset(name)?;
        if let Some(e) = eps {
            cfg.epsilon = Some(e);
        }
        let agent = AgentSpec::custom(name, cfg);
        let res = run_single(&spec, &agent, 1, rounds, false)?;
        let cum = res.trace.cum_avg.last().copied().unwrap_or(f64::NAN);
        let errs: f64 = res.trace.r_weak.iter().sum();
        println!(
            "{name:<16} cumulative regret {cum:>7.2}   rounds without the best arm: {errs:.0}/{rounds}"
        );
    }
    Ok(())
}
