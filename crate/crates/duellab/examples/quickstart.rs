//! Smallest end-to-end run: one synthetic environment, one preset agent,
//! one seed. Prints how the per-round regret falls as the agent learns.
//!
//! ```text
//! cargo run --release --example quickstart
//! ```

use duellab::env::SyntheticKind;
use duellab::runner::{run_single, AgentSpec, EnvSpec};

fn main() -> duellab::Result<()> {
    // A 5-armed cosine-utility task in 10 dimensions. `symmetrize` stays
    // off: mirrored context halves zero the network's feature map at init
    // and nothing can train (see the network_anatomy example).
    let env = EnvSpec::synthetic("cosine", SyntheticKind::Cosine, 10, 5, false);

    // The flagship preset: neural features, variance-aware weighting,
    // optimistic asymmetric pair selection.
    let agent = AgentSpec::preset("nvldb-ucb-asym")?;

    let rounds = 400;
    let result = run_single(&env, &agent, /* seed */ 0, rounds, false)?;
    if let Some(abort) = &result.abort {
        println!("aborted at round {}: {}", abort.round, abort.message);
        return Ok(());
    }

    println!("env={} agent={} seed={}", result.env, result.agent, result.seed);
    println!("round   mean regret (last 50)");
    for (i, block) in result.trace.r_avg.chunks(50).enumerate() {
        let mean: f64 = block.iter().sum::<f64>() / block.len() as f64;
        println!("{:>5}   {mean:.4}", 50 * i + block.len());
    }
    let last = result.trace.cum_avg.last().copied().unwrap_or(0.0);
    println!("cumulative average regret after {rounds} rounds: {last:.2}");
    Ok(())
}
