//! The six pair-selection rules, side by side on one task.
//!
//! Every agent below shares the same neural feature machinery and
//! variance-aware weighting; only the rule that turns utility estimates
//! and exploration widths into a pair of arms differs:
//!
//! * `*-asym` — pick the empirical best arm first, then the challenger
//!   whose optimistic comparison against it is strongest.
//! * `*-osym` — score unordered pairs jointly and optimistically.
//! * `*-csym` — restrict to arms that could still be best, then duel the
//!   most informative pair among them.
//!
//! Each comes in a deterministic flavor (`ucb`: add `nu` times the
//! confidence width) and a randomized one (`ts`: Gaussian draws whose
//! spread is the width).
//!
//! ```text
//! cargo run --release --example strategies
//! ```

use duellab::agent::preset_names;
use duellab::env::SyntheticKind;
use duellab::runner::{run_single, AgentSpec, EnvSpec};

fn main() -> duellab::Result<()> {
    println!("available presets:");
    for name in preset_names() {
        println!("  {name}");
    }
    println!();

    let env = EnvSpec::synthetic("quadratic", SyntheticKind::Quadratic, 10, 5, false);
    let rounds = 250;
    let seed = 3;

    println!("{rounds} rounds on {}-dim quadratic utilities, seed {seed}:", 10);
    println!("{:<16} {:>22} {:>18}", "strategy", "cum avg regret", "weak regret");
    for strat in ["asym", "osym", "csym"] {
        for family in ["ucb", "ts"] {
            let name = format!("nvldb-{family}-{strat}");
            let agent = AgentSpec::preset(&name)?;
            let res = run_single(&env, &agent, seed, rounds, false)?;
            let cum = res.trace.cum_avg.last().copied().unwrap_or(f64::NAN);
            let weak = res.trace.cum_weak.last().copied().unwrap_or(f64::NAN);
            println!("{name:<16} {cum:>22.2} {weak:>18.2}");
        }
    }
    Ok(())
}
