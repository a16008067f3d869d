//! A contextual dueling-bandit laboratory.
//!
//! Each round an environment presents K context vectors, the agent picks a
//! pair of arms, and a single binary preference comes back from a logistic
//! comparison of the true utilities. The flagship agent family estimates
//! utilities with a two-branch feature network trained by manual
//! backpropagation, explores only through the last layer (a d-dimensional
//! Gram matrix of feature differences, maintained by rank-one updates), and
//! optionally reweights every observation by a clamped variance estimate.
//! Six arm-selection rules (three UCB, three Thompson-sampling variants),
//! linear and full-parameter-gradient baselines, synthetic and tabular
//! preference environments, and a deterministic parallel experiment runner
//! with CSV/SVG outputs round out the toolkit.
//!
//! The runnable programs under `examples/` are the best entry points; the
//! `duellab` binary drives full experiments from TOML configs.
//!
//! ```
//! use duellab::{agent, env, rng, runner};
//!
//! let spec = runner::EnvSpec::synthetic("demo", env::SyntheticKind::Cosine, 4, 5, true);
//! let agent = runner::AgentSpec::preset("nvldb-ucb-asym").unwrap();
//! let result = runner::run_single(&spec, &agent, 0, 30, false).unwrap();
//! assert_eq!(result.trace.len(), 30);
//! # let _ = (agent, rng::derive_stream(0, &["doc"]));
//! # let _ = agent::preset_names();
//! ```

pub mod context;
pub mod env;
pub mod error;
pub mod gram;
pub mod history;
pub mod link;
pub mod agent;
pub mod cli;
pub mod config;
pub mod net;
pub mod plot;
pub mod regret;
pub mod rng;
pub mod runner;
pub mod select;

pub use error::{Error, Result};
