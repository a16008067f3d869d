//! A tour of the feature network's load-bearing quirks.
//!
//! The network computes f(x) = theta^T phi(x), where phi is a stack of
//! ReLU layers (d -> m -> ... -> m -> d, trailing ReLU, scaled by sqrt(m)).
//! Initialization is structured: every hidden matrix is two identical
//! diagonal blocks, and the final matrix's right column half is the exact
//! negation of its left half. Consequences:
//!
//! 1. Any input whose second half duplicates its first half (x = [z, z],
//!    which is exactly what a synthetic environment's `symmetrize` option
//!    produces) flows through the identical blocks as two equal streams,
//!    so the final pre-activation cancels and the feature map is exactly
//!    zero. With ReLU'(0) = 0, every training gradient dies with it — an
//!    agent fed only such contexts can never learn. Keep `symmetrize` off
//!    for neural agents.
//! 2. On generic inputs the features are nonzero and the initial estimate
//!    theta0^T phi(x) is pure draw-dependent noise, unrelated to any task.
//!    Early training exists to unlearn this noise; the variance floor
//!    epsilon exists so that confident-looking noise cannot flood the Gram
//!    matrix before that happens.
//! 3. Training from a few preference observations visibly reshapes the
//!    estimates; each episode restarts from the frozen anchor
//!    (theta0, W0) that the ridge term pulls toward.
//!
//! ```text
//! cargo run --release --example network_anatomy
//! ```

use duellab::history::{DuelRecord, HistoryEntry};
use duellab::net::{self, NetworkShape, TrainConfig};
use duellab::rng;
use ndarray::Array1;

fn main() -> duellab::Result<()> {
    let d = 6;
    let shape = NetworkShape::new(d, 16, 2)?;
    let mut stream = rng::derive_stream(42, &["anatomy-init"]);
    let params = net::init_network(&shape, &mut stream)?;

    println!(
        "shape: d={}, width m={}, hidden layers={}",
        shape.d, shape.m, shape.hidden_layers
    );
    println!("scalar parameters: {}\n", shape.param_count());

    // 1. duplicated halves sit on the vanishing manifold
    let dup = Array1::from(vec![0.9, -0.3, 0.1, 0.9, -0.3, 0.1]);
    let phi0 = net::feature_map(&shape, &params.layers, dup.view())?;
    println!("duplicated input [z, z] (what `symmetrize` feeds the net):");
    println!(
        "  |phi(x)| = {:.4}  (exactly zero; ReLU'(0)=0 kills every gradient)\n",
        norm(&phi0)
    );

    // 2. generic inputs: features flow, estimates start as noise
    let generic = Array1::from(vec![0.9, -0.3, 0.1, 0.4, -0.7, 0.2]);
    let phi = net::feature_map(&shape, &params.layers, generic.view())?;
    println!("generic input:");
    println!("  |phi(x)| = {:.4}  (nonzero: gradients can flow)", norm(&phi));
    println!(
        "  f(x)     = {:+.4}  (initial estimate is just init noise)\n",
        net::predict(&params, generic.view())?
    );

    // 3. a few preference observations and one training episode
    let mut duels = Vec::new();
    let mut ctx_stream = rng::derive_stream(42, &["anatomy-data"]);
    for round in 1..=30u64 {
        let x1 = unit_vec(d, &mut ctx_stream);
        let x2 = unit_vec(d, &mut ctx_stream);
        // ground truth: prefer larger first coordinate
        let outcome = u8::from(x1[0] >= x2[0]);
        let p1 = net::feature_map(&shape, &params.layers, x1.view())?;
        let p2 = net::feature_map(&shape, &params.layers, x2.view())?;
        duels.push(HistoryEntry {
            record: DuelRecord {
                round,
                idx_first: 0,
                idx_second: 1,
                dphi: &p1 - &p2,
                zeta: 0.5,
                outcome,
            },
            x_first: x1,
            x_second: x2,
        });
    }
    let outcome = net::train_episode(&params, &duels, 1.0, &TrainConfig::default())?;

    let e1 = Array1::from(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let e1n = -&e1;
    let gap_before =
        net::predict(&params, e1.view())? - net::predict(&params, e1n.view())?;
    let gap_after = net::predict(&outcome.params, e1.view())?
        - net::predict(&outcome.params, e1n.view())?;
    println!("after one training episode on 30 duels (prefer larger x[0]):");
    println!("  f(+e1) - f(-e1)   {gap_before:+.4} -> {gap_after:+.4}  (positive: preference learned)");
    Ok(())
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

fn unit_vec<R: rand::Rng + ?Sized>(d: usize, rng_in: &mut R) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_iter((0..d).map(|_| rng_in.random_range(-1.0..1.0)));
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}
