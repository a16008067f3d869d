//! Why explore only through the last layer? Speed.
//!
//! The shallow agent keeps a d-dimensional Gram matrix over feature
//! differences and updates its inverse with rank-one steps. The
//! full-gradient baseline does the textbook thing instead: its features
//! are the gradient of the score with respect to *every* parameter, so its
//! Gram matrix is p x p (p = all weights) and must be rebuilt and solved
//! each round. Same selection rule, same training — wildly different cost.
//!
//! ```text
//! cargo run --release --example shallow_vs_full_timing
//! ```

use duellab::env::SyntheticKind;
use duellab::runner::{run_single, AgentSpec, EnvSpec};
use std::time::Instant;

fn main() -> duellab::Result<()> {
    let env = EnvSpec::synthetic("cosine", SyntheticKind::Cosine, 10, 5, false);
    let rounds = 150;

    println!("{rounds} rounds, identical task and seed:\n");
    let mut elapsed = Vec::new();
    for name in ["nvldb-ucb-asym", "ndb-full-gradient"] {
        let agent = AgentSpec::preset(name)?;
        let start = Instant::now();
        let res = run_single(&env, &agent, 0, rounds, true)?;
        let secs = start.elapsed().as_secs_f64();
        elapsed.push(secs);
        let cum = res.trace.cum_avg.last().copied().unwrap_or(f64::NAN);
        println!("{name:<18} {secs:>7.2}s   cumulative regret {cum:.2}");
    }
    println!(
        "\nfull-gradient / shallow wall-clock ratio: {:.1}x",
        elapsed[1] / elapsed[0]
    );
    Ok(())
}
