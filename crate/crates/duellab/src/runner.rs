//! Experiment orchestration: sweeps over (environment x agent x seed) cells,
//! per-round regret logging, aggregation across seeds, and CSV persistence.
//!
//! Determinism is the organizing principle. Every source of randomness in a
//! cell is a separate stream derived by hashing the seed with string labels
//! (see [`crate::rng::derive_stream`]), so a cell's outcome is a pure
//! function of (env id, agent id, seed) — independent of thread scheduling,
//! sweep composition, and which other cells run. Environment streams omit
//! the agent id, so every agent at a given seed faces the same tasks,
//! contexts, and (up to selection) preference draws: cross-agent comparisons
//! are paired.
//!
//! Wall-clock timing is the one inherently nondeterministic output, so it is
//! opt-in: with `record_timing` off, every elapsed field is written as zero
//! and output files are byte-reproducible.

use crate::agent::{self, AgentConfig, DuelingAgent, VarianceMode};
use crate::env::{Environment, SyntheticEnv, SyntheticKind, TabularEnv};
use crate::error::{Error, Result};
use crate::net::RefitReport;
use crate::regret::{average_regret, weak_regret, RegretTrace};
use crate::rng;
use ndarray::Array1;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// How an [`EnvSpec`] produces its environment.
#[derive(Clone, Debug)]
pub enum EnvSource {
    Synthetic {
        kind: SyntheticKind,
        d: usize,
        arms: usize,
        symmetrize: bool,
        /// Fixed task parameter; `None` draws a fresh one per seed.
        theta: Option<Array1<f64>>,
    },
    /// Dataset environments are deterministic once loaded, so one load is
    /// shared across all cells.
    Tabular(Arc<TabularEnv>),
}

/// A named recipe for building an environment at a given seed.
#[derive(Clone, Debug)]
pub struct EnvSpec {
    pub id: String,
    pub source: EnvSource,
}

fn check_id(what: &str, id: &str) -> Result<()> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    {
        return Err(Error::Config(format!(
            "{what} id {id:?} must be nonempty and use only ascii letters, digits, '-', '_', '.'"
        )));
    }
    Ok(())
}

impl EnvSpec {
    /// A synthetic task whose parameter vector is drawn per seed.
    pub fn synthetic(
        id: &str,
        kind: SyntheticKind,
        d: usize,
        arms: usize,
        symmetrize: bool,
    ) -> Self {
        EnvSpec {
            id: id.to_owned(),
            source: EnvSource::Synthetic {
                kind,
                d,
                arms,
                symmetrize,
                theta: None,
            },
        }
    }

    /// A synthetic task with a pinned parameter vector (same task at every
    /// seed; only contexts and preference draws vary).
    pub fn synthetic_with_theta(
        id: &str,
        kind: SyntheticKind,
        theta: Array1<f64>,
        arms: usize,
        symmetrize: bool,
    ) -> Self {
        let d = theta.len();
        EnvSpec {
            id: id.to_owned(),
            source: EnvSource::Synthetic {
                kind,
                d,
                arms,
                symmetrize,
                theta: Some(theta),
            },
        }
    }

    /// A dataset-backed task.
    pub fn tabular(id: &str, env: TabularEnv) -> Self {
        EnvSpec {
            id: id.to_owned(),
            source: EnvSource::Tabular(Arc::new(env)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_id("env", &self.id)?;
        if let EnvSource::Synthetic {
            kind,
            d,
            arms,
            symmetrize,
            theta,
        } = &self.source
        {
            // build a throwaway instance to reuse the environment's own checks
            let probe = match theta {
                Some(t) => SyntheticEnv::with_theta(*kind, *arms, *symmetrize, t.clone()),
                None => {
                    let mut r = rng::derive_stream(0, &["validate", &self.id]);
                    SyntheticEnv::new(*kind, *d, *arms, *symmetrize, &mut r)
                }
            };
            probe.map(|_| ()).map_err(|e| {
                Error::Config(format!("env {:?} is not constructible: {e}", self.id))
            })?;
        }
        Ok(())
    }

    /// Context dimension the built environment will present.
    pub fn dim(&self) -> usize {
        match &self.source {
            EnvSource::Synthetic { d, .. } => *d,
            EnvSource::Tabular(env) => env.context_dim(),
        }
    }

    fn build(&self, seed: u64) -> Result<Environment> {
        match &self.source {
            EnvSource::Synthetic {
                kind,
                d,
                arms,
                symmetrize,
                theta,
            } => {
                let env = match theta {
                    Some(t) => SyntheticEnv::with_theta(*kind, *arms, *symmetrize, t.clone())?,
                    None => {
                        let mut stream = rng::derive_stream(seed, &["theta", &self.id]);
                        SyntheticEnv::new(*kind, *d, *arms, *symmetrize, &mut stream)?
                    }
                };
                Ok(Environment::Synthetic(env))
            }
            EnvSource::Tabular(env) => Ok(Environment::Tabular((**env).clone())),
        }
    }
}

/// A named agent configuration.
#[derive(Clone, Debug)]
pub struct AgentSpec {
    pub id: String,
    pub config: AgentConfig,
}

impl AgentSpec {
    /// Look up a built-in preset; the preset name becomes the id.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(AgentSpec {
            id: name.to_owned(),
            config: agent::preset(name)?,
        })
    }

    pub fn custom(id: &str, config: AgentConfig) -> Self {
        AgentSpec {
            id: id.to_owned(),
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_id("agent", &self.id)?;
        self.config.validate()
    }
}

/// Why and when a run stopped early.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbortInfo {
    /// 1-based round during which the failure occurred.
    pub round: u64,
    pub message: String,
}

/// Everything one (env, agent, seed) cell produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub env: String,
    pub agent: String,
    pub seed: u64,
    pub trace: RegretTrace,
    /// Present when the run stopped before its round budget; the trace then
    /// holds only the completed rounds.
    pub abort: Option<AbortInfo>,
    /// Total wall-clock of the round loop; zero when timing is off.
    pub total_ms: f64,
    /// Convergence report of the agent's last refit, if any ran.
    pub last_refit: Option<RefitReport>,
}

/// Execute one cell: `rounds` iterations of sample -> select -> duel ->
/// observe, recording average and weak regret each round.
///
/// Errors inside the round loop (numerical failures during training, most
/// commonly) do not propagate: they stop the run and are recorded in
/// `abort`. Errors constructing the environment or agent do propagate —
/// those are configuration mistakes, not runtime accidents.
pub fn run_single(
    env_spec: &EnvSpec,
    agent_spec: &AgentSpec,
    seed: u64,
    rounds: u64,
    record_timing: bool,
) -> Result<RunResult> {
    env_spec.validate()?;
    agent_spec.validate()?;
    if rounds == 0 {
        return Err(Error::InvalidInput("round budget must be at least 1".into()));
    }
    let env = env_spec.build(seed)?;
    let eid = env_spec.id.as_str();
    let aid = agent_spec.id.as_str();
    let mut ctx_stream = rng::derive_stream(seed, &["ctx", eid]);
    let mut duel_stream = rng::derive_stream(seed, &["duel", eid]);
    let mut init_stream = rng::derive_stream(seed, &["agent-init", eid, aid]);
    let mut select_stream = rng::derive_stream(seed, &["agent-select", eid, aid]);
    let mut agent = DuelingAgent::new(agent_spec.config.clone(), env.dim(), &mut init_stream)?;
    let oracle = matches!(agent.config().variance_mode, VarianceMode::Oracle);

    let mut trace = RegretTrace::with_capacity(rounds as usize);
    let mut abort = None;
    let run_start = Instant::now();
    for t in 1..=rounds {
        let round_start = record_timing.then(Instant::now);
        let outcome: Result<(f64, f64)> = (|| {
            let (contexts, truth) = env.sample_contexts(t, &mut ctx_stream)?;
            let (k1, k2) = agent.select(&contexts, &mut select_stream)?;
            let oracle_var = if oracle {
                let p = env.duel_prob(&truth, k1, k2)?;
                Some(p * (1.0 - p))
            } else {
                None
            };
            let o = env.duel(&truth, k1, k2, &mut duel_stream)?;
            agent.observe(o, oracle_var)?;
            Ok((
                average_regret(truth.best_utility, truth.utilities[k1], truth.utilities[k2]),
                weak_regret(truth.best_utility, truth.utilities[k1], truth.utilities[k2]),
            ))
        })();
        match outcome {
            Ok((r_avg, r_weak)) => {
                let elapsed = round_start
                    .map(|s| s.elapsed().as_secs_f64() * 1e3)
                    .unwrap_or(0.0);
                trace.push(r_avg, r_weak, elapsed);
            }
            Err(e) => {
                abort = Some(AbortInfo {
                    round: t,
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let total_ms = if record_timing {
        run_start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    Ok(RunResult {
        env: env_spec.id.clone(),
        agent: agent_spec.id.clone(),
        seed,
        trace,
        abort,
        total_ms,
        last_refit: agent.last_refit(),
    })
}

/// A full sweep: the cross product of environments, agents, and seeds.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub envs: Vec<EnvSpec>,
    pub agents: Vec<AgentSpec>,
    pub rounds: u64,
    pub seeds: Vec<u64>,
    /// Worker threads for the sweep; 1 runs serially.
    pub parallelism: usize,
    pub output_dir: PathBuf,
    /// Record real wall-clock in traces and outputs. Off by default so
    /// repeated runs produce byte-identical files.
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() {
            return Err(Error::Config("no environments configured".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config("no agents configured".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds configured".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        for e in &self.envs {
            e.validate()?;
            if !ids.insert(&e.id) {
                return Err(Error::Config(format!("duplicate env id {:?}", e.id)));
            }
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            a.validate()?;
            if !ids.insert(&a.id) {
                return Err(Error::Config(format!("duplicate agent id {:?}", a.id)));
            }
        }
        Ok(())
    }
}

/// Run every cell of the sweep, in parallel when configured, and return the
/// results sorted by (env, agent, seed) regardless of scheduling order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    let mut cells = Vec::new();
    for env in &config.envs {
        for agent in &config.agents {
            for &seed in &config.seeds {
                cells.push((env, agent, seed));
            }
        }
    }
    let mut results = if config.parallelism == 1 {
        cells
            .iter()
            .map(|(e, a, s)| run_single(e, a, *s, config.rounds, config.timing))
            .collect::<Result<Vec<_>>>()?
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
        pool.install(|| {
            cells
                .par_iter()
                .map(|(e, a, s)| run_single(e, a, *s, config.rounds, config.timing))
                .collect::<Result<Vec<_>>>()
        })?
    };
    results.sort_by(|x, y| {
        (x.env.as_str(), x.agent.as_str(), x.seed).cmp(&(y.env.as_str(), y.agent.as_str(), y.seed))
    });
    Ok(results)
}

/// Mean and sample standard deviation of cumulative average regret across
/// seeds, per round, for one (env, agent) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryCurve {
    pub env: String,
    pub agent: String,
    pub mean_cum_avg: Vec<f64>,
    pub std_cum_avg: Vec<f64>,
}

/// Aggregation output: curves plus human-readable notes about excluded runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub curves: Vec<SummaryCurve>,
    pub warnings: Vec<String>,
}

/// Collapse per-seed results into per-(env, agent) summary curves.
///
/// Aborted runs are excluded (their partial traces would skew the curves)
/// and reported in `warnings`. All surviving traces must share one length.
/// The result is invariant to permutations of `results`: groups are sorted
/// and within-group accumulation happens in seed order.
pub fn aggregate(results: &[RunResult]) -> Result<Aggregate> {
    let mut warnings = Vec::new();
    let mut groups: BTreeMap<(&str, &str), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        if let Some(abort) = &r.abort {
            warnings.push(format!(
                "excluded {}/{} seed {}: aborted at round {}: {}",
                r.env, r.agent, r.seed, abort.round, abort.message
            ));
            continue;
        }
        groups.entry((&r.env, &r.agent)).or_default().push(r);
    }
    let seen: BTreeSet<(&str, &str)> = results
        .iter()
        .map(|r| (r.env.as_str(), r.agent.as_str()))
        .collect();
    for key in &seen {
        if !groups.contains_key(key) {
            warnings.push(format!(
                "no surviving runs for {}/{}; pair absent from summary",
                key.0, key.1
            ));
        }
    }
    if groups.is_empty() {
        return Err(Error::Aggregation("no runs survived aggregation".into()));
    }
    let rounds = groups.values().next().unwrap()[0].trace.len();
    let mut curves = Vec::with_capacity(groups.len());
    for ((env, agent), mut members) in groups {
        members.sort_by_key(|r| r.seed);
        for m in &members {
            if m.trace.len() != rounds {
                return Err(Error::Aggregation(format!(
                    "{}/{} seed {} has {} rounds, expected {}",
                    m.env,
                    m.agent,
                    m.seed,
                    m.trace.len(),
                    rounds
                )));
            }
        }
        let n = members.len() as f64;
        let mut mean = vec![0.0f64; rounds];
        let mut std = vec![0.0f64; rounds];
        for m in &members {
            for (acc, v) in mean.iter_mut().zip(&m.trace.cum_avg) {
                *acc += v;
            }
        }
        for v in &mut mean {
            *v /= n;
        }
        if members.len() > 1 {
            for m in &members {
                for (acc, (v, mu)) in std.iter_mut().zip(m.trace.cum_avg.iter().zip(&mean)) {
                    *acc += (v - mu) * (v - mu);
                }
            }
            for v in &mut std {
                *v = (*v / (n - 1.0)).sqrt();
            }
        }
        curves.push(SummaryCurve {
            env: env.to_owned(),
            agent: agent.to_owned(),
            mean_cum_avg: mean,
            std_cum_avg: std,
        });
    }
    Ok(Aggregate { curves, warnings })
}

pub const RUNS_HEADER: &str = "env,agent,seed,round,r_avg,r_weak,cum_avg,cum_weak,elapsed_ms";
pub const SUMMARY_HEADER: &str = "env,agent,round,mean_cum_avg,std_cum_avg";
pub const TIMING_HEADER: &str =
    "env,agent,seed,total_ms,completed_rounds,abort_round,abort_message";

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Persist a sweep: `runs.csv` (per-round rows), `summary.csv` (mean/std
/// curves), and `timing.csv` (per-run totals and abort diagnostics). Floats
/// are written with 17 significant digits so parsing them back reproduces
/// every bit. Returns the paths written.
pub fn write_outputs(
    results: &[RunResult],
    summary: &Aggregate,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut order: Vec<&RunResult> = results.iter().collect();
    order.sort_by(|x, y| {
        (x.env.as_str(), x.agent.as_str(), x.seed).cmp(&(y.env.as_str(), y.agent.as_str(), y.seed))
    });

    let mut runs = String::from(RUNS_HEADER);
    runs.push('\n');
    for r in &order {
        let t = &r.trace;
        for i in 0..t.len() {
            writeln!(
                runs,
                "{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.env,
                r.agent,
                r.seed,
                i + 1,
                t.r_avg[i],
                t.r_weak[i],
                t.cum_avg[i],
                t.cum_weak[i],
                t.elapsed_ms[i]
            )
            .expect("string write");
        }
    }

    let mut sum = String::from(SUMMARY_HEADER);
    sum.push('\n');
    for c in &summary.curves {
        for (i, (m, s)) in c.mean_cum_avg.iter().zip(&c.std_cum_avg).enumerate() {
            writeln!(sum, "{},{},{},{:.16e},{:.16e}", c.env, c.agent, i + 1, m, s)
                .expect("string write");
        }
    }

    let mut timing = String::from(TIMING_HEADER);
    timing.push('\n');
    for r in &order {
        let (abort_round, abort_message) = match &r.abort {
            // messages are quoted CSV-style since they can contain commas
            Some(a) => (
                a.round.to_string(),
                format!("\"{}\"", a.message.replace('"', "\"\"").replace('\n', " ")),
            ),
            None => (String::new(), String::new()),
        };
        writeln!(
            timing,
            "{},{},{},{:.3},{},{},{}",
            r.env,
            r.agent,
            r.seed,
            r.total_ms,
            r.trace.len(),
            abort_round,
            abort_message
        )
        .expect("string write");
    }

    let mut written = vec![
        write_file(dir, "runs.csv", &runs)?,
        write_file(dir, "summary.csv", &sum)?,
    ];
    // timing.csv only exists when it has something to say: recorded wall
    // clock or abort diagnostics
    if order
        .iter()
        .any(|r| r.total_ms > 0.0 || r.abort.is_some())
    {
        written.push(write_file(dir, "timing.csv", &timing)?);
    }
    Ok(written)
}

/// Read `runs.csv` back into per-run traces (abort and timing diagnostics
/// live in `timing.csv` and are not reconstructed here). Re-verifies that
/// the cumulative columns are exact prefix sums of the per-round columns.
pub fn read_runs(path: &Path) -> Result<Vec<RunResult>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line + 1,
        message,
    };
    let header = match lines.next() {
        Some((i, l)) => l.map_err(|e| parse_err(i, e.to_string()))?,
        None => return Err(parse_err(0, "empty file".into())),
    };
    if header != RUNS_HEADER {
        return Err(parse_err(0, format!("unexpected header {header:?}")));
    }
    let mut out: Vec<RunResult> = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| parse_err(i, e.to_string()))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(parse_err(i, format!("expected 9 fields, got {}", fields.len())));
        }
        let seed: u64 = fields[2]
            .parse()
            .map_err(|e| parse_err(i, format!("bad seed: {e}")))?;
        let round: u64 = fields[3]
            .parse()
            .map_err(|e| parse_err(i, format!("bad round: {e}")))?;
        let mut nums = [0.0f64; 5];
        for (slot, raw) in nums.iter_mut().zip(&fields[4..]) {
            *slot = raw
                .parse()
                .map_err(|e| parse_err(i, format!("bad number {raw:?}: {e}")))?;
        }
        let fresh = out.last().is_none_or(|r| {
            r.env != fields[0] || r.agent != fields[1] || r.seed != seed
        });
        if fresh {
            out.push(RunResult {
                env: fields[0].to_owned(),
                agent: fields[1].to_owned(),
                seed,
                trace: RegretTrace::default(),
                abort: None,
                total_ms: 0.0,
                last_refit: None,
            });
        }
        let current = out.last_mut().expect("pushed above");
        if round != current.trace.len() as u64 + 1 {
            return Err(parse_err(
                i,
                format!("round {round} out of order (expected {})", current.trace.len() + 1),
            ));
        }
        current.trace.push(nums[0], nums[1], nums[4]);
        let got_avg = *current.trace.cum_avg.last().unwrap();
        let got_weak = *current.trace.cum_weak.last().unwrap();
        if got_avg.to_bits() != nums[2].to_bits() || got_weak.to_bits() != nums[3].to_bits() {
            return Err(parse_err(
                i,
                format!(
                    "cumulative columns are not prefix sums: recomputed ({got_avg:.16e}, {got_weak:.16e}), file ({:.16e}, {:.16e})",
                    nums[2], nums[3]
                ),
            ));
        }
    }
    Ok(out)
}
