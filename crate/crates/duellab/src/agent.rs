//! The learner: feature map + Gram matrix + selection rule in one loop.
//!
//! A [`DuelingAgent`] runs a strict select/observe protocol. `select`
//! featurizes the round's contexts under the current parameters, hands
//! per-arm utilities and features to the configured selection rule, and
//! freezes the chosen pair's feature difference. `observe` takes the binary
//! outcome, computes the variance clamp, appends the duel to history, folds
//! the frozen difference into the Gram matrix, and (every `episode_len`
//! rounds) trains on the full history.
//!
//! Three feature modes share this loop: `Neural` uses the two-branch
//! network's output layer (exploration happens in the d-dimensional feature
//! space — the "shallow" part), `Identity` uses raw contexts (the linear
//! baseline family), and `FullGradient` uses the gradient of the score with
//! respect to every parameter (the expensive baseline the shallow method is
//! benchmarked against).

use crate::context::ContextSet;
use crate::error::{Error, Result};
use crate::gram::GramState;
use crate::history::{DuelRecord, HistoryEntry};
use crate::link::LinkFunction;
use crate::net::{self, NetworkParams, NetworkShape, RefitReport, TrainConfig};
use crate::select::{self, ArmScores, SelectionConfig, Strategy};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// Network output layer; Gram matrix lives in d dimensions.
    Neural,
    /// Raw contexts; the generalized-linear baseline.
    Identity,
    /// Gradient of the score with respect to all parameters; Gram matrix
    /// lives in param_count dimensions. Costly by design.
    FullGradient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// Clamp the estimated preference variance: zeta = max(sigma-hat, epsilon).
    Aware,
    /// Ignore variance entirely: zeta = 1.
    Agnostic,
    /// Trust an externally supplied true variance: zeta = max(sqrt(var), epsilon).
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramMaintenance {
    /// Rank-one update with the frozen feature difference at observation
    /// time; the matrix never revisits old records.
    FrozenIncremental,
    /// Re-featurize the whole history under the current parameters and
    /// rebuild the matrix from scratch every round.
    Refresh,
}

/// Everything the agent needs to be built. The network input dimension is
/// not part of the config — it comes from the environment at build time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub feature_mode: FeatureMode,
    pub variance_mode: VarianceMode,
    /// Variance floor; `None` resolves to 1/(2 sqrt(d)) at build time.
    pub epsilon: Option<f64>,
    /// Ridge weight shared by the loss and the Gram matrix.
    pub lambda: f64,
    pub selection: SelectionConfig,
    pub train: TrainConfig,
    /// Hidden width (neural and full-gradient modes).
    pub m: usize,
    /// Number of m-wide hidden layers.
    pub hidden_layers: usize,
    pub maintenance: GramMaintenance,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lambda: ridge weight must be a positive real, got {}",
                self.lambda
            )));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "epsilon: variance floor must be a positive real, got {eps}"
                )));
            }
        }
        self.selection.validate()?;
        self.train.validate()?;
        Ok(())
    }

}

/// The preset catalogue, in the order [`preset_names`] reports it.
const PRESETS: [&str; 15] = [
    "nvldb-ucb-asym",
    "nvldb-ucb-osym",
    "nvldb-ucb-csym",
    "nvldb-ts-asym",
    "nvldb-ts-osym",
    "nvldb-ts-csym",
    "nldb-ucb-asym",
    "nldb-ucb-osym",
    "nldb-ucb-csym",
    "nldb-ts-asym",
    "nldb-ts-osym",
    "nldb-ts-csym",
    "linear-ucb-asym",
    "linear-ucb-csym-aware",
    "ndb-full-gradient",
];

/// Names of all built-in agent presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.to_vec()
}

fn strategy_for(suffix: &str) -> Option<Strategy> {
    Some(match suffix {
        "ucb-asym" => Strategy::UcbAsym,
        "ucb-osym" => Strategy::UcbOsym,
        "ucb-csym" => Strategy::UcbCsym,
        "ts-asym" => Strategy::TsAsym,
        "ts-osym" => Strategy::TsOsym,
        "ts-csym" => Strategy::TsCsym,
        _ => return None,
    })
}

/// Resolve a preset name to its configuration.
///
/// `nvldb-*` are the variance-aware neural agents (one per selection rule),
/// `nldb-*` their variance-agnostic twins. `linear-ucb-asym` and
/// `linear-ucb-csym-aware` are generalized-linear baselines solved to
/// optimality each round. `ndb-full-gradient` explores in full parameter
/// space with a rebuilt Gram matrix — the wall-clock reference point.
pub fn preset(name: &str) -> Result<AgentConfig> {
    let neural_defaults = AgentConfig {
        feature_mode: FeatureMode::Neural,
        variance_mode: VarianceMode::Aware,
        epsilon: None,
        lambda: 1.0,
        selection: SelectionConfig::new(Strategy::UcbAsym, 1.0),
        train: TrainConfig::default(),
        m: 32,
        hidden_layers: 2,
        maintenance: GramMaintenance::FrozenIncremental,
    };
    if let Some(suffix) = name.strip_prefix("nvldb-") {
        if let Some(strategy) = strategy_for(suffix) {
            return Ok(AgentConfig {
                selection: SelectionConfig::new(strategy, 1.0),
                ..neural_defaults
            });
        }
    }
    if let Some(suffix) = name.strip_prefix("nldb-") {
        if let Some(strategy) = strategy_for(suffix) {
            return Ok(AgentConfig {
                variance_mode: VarianceMode::Agnostic,
                selection: SelectionConfig::new(strategy, 1.0),
                ..neural_defaults
            });
        }
    }
    let linear_train = TrainConfig {
        n_steps: 0,
        refit: true,
        ..TrainConfig::default()
    };
    match name {
        "linear-ucb-asym" => Ok(AgentConfig {
            feature_mode: FeatureMode::Identity,
            variance_mode: VarianceMode::Agnostic,
            train: linear_train,
            ..neural_defaults
        }),
        "linear-ucb-csym-aware" => Ok(AgentConfig {
            feature_mode: FeatureMode::Identity,
            variance_mode: VarianceMode::Aware,
            selection: SelectionConfig::new(Strategy::UcbCsym, 1.0),
            train: linear_train,
            ..neural_defaults
        }),
        "ndb-full-gradient" => Ok(AgentConfig {
            feature_mode: FeatureMode::FullGradient,
            variance_mode: VarianceMode::Agnostic,
            maintenance: GramMaintenance::Refresh,
            ..neural_defaults
        }),
        other => Err(Error::Config(format!(
            "unknown agent preset {other:?}; known presets: {}",
            PRESETS.join(", ")
        ))),
    }
}

/// Variance clamp from an estimated utility gap.
///
/// Aware mode turns the gap into a Bernoulli variance through the link
/// (sigma-hat^2 = g(df)(1-g(df))) and floors its square root at `epsilon`;
/// agnostic mode always answers 1; oracle mode floors the square root of
/// the supplied true variance. Returns (sigma_sq, zeta) where sigma_sq is
/// the variance the clamp was built from.
pub fn estimate_zeta(
    mode: VarianceMode,
    epsilon: f64,
    df: f64,
    oracle_variance: Option<f64>,
) -> Result<(f64, f64)> {
    match mode {
        VarianceMode::Agnostic => Ok((LinkFunction::Logistic.deriv(df)?, 1.0)),
        VarianceMode::Aware => {
            let sigma_sq = LinkFunction::Logistic.deriv(df)?;
            Ok((sigma_sq, sigma_sq.sqrt().max(epsilon)))
        }
        VarianceMode::Oracle => {
            let var = oracle_variance.ok_or_else(|| {
                Error::Config(
                    "oracle variance mode needs the environment to supply a true variance"
                        .into(),
                )
            })?;
            if !(var.is_finite() && var >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "oracle variance must be a nonnegative real, got {var}"
                )));
            }
            Ok((var, var.sqrt().max(epsilon)))
        }
    }
}

enum Params {
    Net(NetworkParams),
    Theta { theta: Array1<f64>, theta0: Array1<f64> },
}

struct PendingDuel {
    k1: usize,
    k2: usize,
    dphi: Array1<f64>,
    udiff: f64,
    x_first: Array1<f64>,
    x_second: Array1<f64>,
}

/// One learner bound to one context dimension, running the strict
/// select/observe protocol.
pub struct DuelingAgent {
    cfg: AgentConfig,
    dim: usize,
    epsilon: f64,
    params: Params,
    /// Snapshot of the network at construction; every training episode
    /// restarts its descent here because the episode loss is anchored to
    /// these weights by the ridge term.
    net0: Option<NetworkParams>,
    gram: GramState,
    history: Vec<HistoryEntry>,
    round: u64,
    pending: Option<PendingDuel>,
    last_refit: Option<RefitReport>,
}

impl DuelingAgent {
    /// Build for contexts of dimension `dim`; network weights (if any) are
    /// drawn from the supplied stream.
    pub fn new<R: Rng + ?Sized>(cfg: AgentConfig, dim: usize, rng_in: &mut R) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Err(Error::InvalidInput(
                "context dimension must be at least 1".into(),
            ));
        }
        let epsilon = cfg.epsilon.unwrap_or(0.5 / (dim as f64).sqrt());
        let (params, gram_dim) = match cfg.feature_mode {
            FeatureMode::Identity => (
                Params::Theta {
                    theta: Array1::zeros(dim),
                    theta0: Array1::zeros(dim),
                },
                dim,
            ),
            FeatureMode::Neural | FeatureMode::FullGradient => {
                let shape = NetworkShape::new(dim, cfg.m, cfg.hidden_layers)?;
                let net = net::init_network(&shape, rng_in)?;
                let gram_dim = match cfg.feature_mode {
                    FeatureMode::FullGradient => shape.param_count(),
                    _ => dim,
                };
                (Params::Net(net), gram_dim)
            }
        };
        let gram = GramState::new(gram_dim, cfg.lambda)?;
        let net0 = match &params {
            Params::Net(p) => Some(p.clone()),
            Params::Theta { .. } => None,
        };
        Ok(DuelingAgent {
            cfg,
            dim,
            epsilon,
            params,
            net0,
            gram,
            history: Vec::new(),
            round: 0,
            pending: None,
            last_refit: None,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Resolved variance floor (config value or the 1/(2 sqrt d) default).
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Completed rounds.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn has_pending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn gram(&self) -> &GramState {
        &self.gram
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Network parameters, in the modes that have them.
    pub fn network(&self) -> Option<&NetworkParams> {
        match &self.params {
            Params::Net(p) => Some(p),
            Params::Theta { .. } => None,
        }
    }

    /// The last-layer estimate, whatever the feature mode.
    pub fn theta(&self) -> &Array1<f64> {
        match &self.params {
            Params::Net(p) => &p.theta,
            Params::Theta { theta, .. } => theta,
        }
    }

    /// Convergence report of the most recent refit, if one ran.
    pub fn last_refit(&self) -> Option<RefitReport> {
        self.last_refit
    }

    /// Per-arm utility features under the current parameters (the vectors
    /// whose differences the training loss sees).
    fn utility_features(&self, contexts: &ContextSet) -> Result<Array2<f64>> {
        match &self.params {
            Params::Theta { .. } => Ok(contexts.vectors.clone()),
            Params::Net(p) => {
                let fwd = net::forward_rows(&p.shape, &p.layers, contexts.vectors.view())?;
                Ok(fwd.phi().clone())
            }
        }
    }

    /// Per-arm selection features: what the Gram matrix and widths operate
    /// on. Only the full-gradient mode differs from `utility_features`.
    fn selection_features(&self, contexts: &ContextSet) -> Result<Array2<f64>> {
        match self.cfg.feature_mode {
            FeatureMode::FullGradient => {
                let p = match &self.params {
                    Params::Net(p) => p,
                    Params::Theta { .. } => unreachable!("full-gradient mode has a network"),
                };
                let mut rows = Array2::zeros((contexts.arms(), p.shape.param_count()));
                for (k, mut row) in rows.rows_mut().into_iter().enumerate() {
                    let g = net::score_gradient(p, contexts.arm(k))?;
                    row.assign(&g);
                }
                Ok(rows)
            }
            _ => self.utility_features(contexts),
        }
    }

    /// Pick a pair of arms for this round's contexts. Fails with a protocol
    /// error if the previous duel was never observed.
    pub fn select<R: Rng + ?Sized>(
        &mut self,
        contexts: &ContextSet,
        rng_in: &mut R,
    ) -> Result<(usize, usize)> {
        if self.pending.is_some() {
            return Err(Error::Protocol(
                "select called while a duel is awaiting its outcome".into(),
            ));
        }
        if contexts.dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "contexts have dimension {}, agent was built for {}",
                contexts.dim(),
                self.dim
            )));
        }
        let util_features = self.utility_features(contexts)?;
        let utilities = util_features.dot(self.theta());
        if utilities.iter().any(|u| !u.is_finite()) {
            return Err(Error::NumericalFailure(
                "utility estimates overflowed; training has diverged".into(),
            ));
        }
        let sel_features = match self.cfg.feature_mode {
            FeatureMode::FullGradient => self.selection_features(contexts)?,
            _ => util_features.clone(),
        };
        let scores = ArmScores::new(utilities, sel_features)?;
        let round_now = self.round + 1;
        let (k1, k2) = select::select_pair(
            &self.cfg.selection,
            &scores,
            &self.gram,
            round_now,
            rng_in,
        )?;
        let dphi = &scores.features.row(k1) - &scores.features.row(k2);
        let udiff_features = &util_features.row(k1) - &util_features.row(k2);
        self.pending = Some(PendingDuel {
            k1,
            k2,
            dphi,
            udiff: self.theta().dot(&udiff_features),
            x_first: contexts.arm(k1).to_owned(),
            x_second: contexts.arm(k2).to_owned(),
        });
        Ok((k1, k2))
    }

    /// Variance clamp the pending duel would receive. Exposed separately so
    /// callers can log it; `observe` computes the same value.
    pub fn pending_zeta(&self, oracle_variance: Option<f64>) -> Result<(f64, f64)> {
        let pending = self.pending.as_ref().ok_or_else(|| {
            Error::Protocol("no duel is awaiting an outcome".into())
        })?;
        estimate_zeta(
            self.cfg.variance_mode,
            self.epsilon,
            pending.udiff,
            oracle_variance,
        )
    }

    /// Digest the outcome of the pending duel: record it, fold it into the
    /// Gram matrix, and train when the episode boundary is reached.
    /// `oracle_variance` is only consulted in oracle variance mode.
    pub fn observe(&mut self, outcome: u8, oracle_variance: Option<f64>) -> Result<()> {
        if outcome > 1 {
            return Err(Error::InvalidInput(format!(
                "outcome must be 0 or 1, got {outcome}"
            )));
        }
        let (_, zeta) = self.pending_zeta(oracle_variance)?;
        let pending = self.pending.take().expect("pending checked above");
        let round_now = self.round + 1;
        self.history.push(HistoryEntry {
            record: DuelRecord {
                round: round_now,
                idx_first: pending.k1,
                idx_second: pending.k2,
                dphi: pending.dphi,
                zeta,
                outcome,
            },
            x_first: pending.x_first,
            x_second: pending.x_second,
        });
        if matches!(self.cfg.maintenance, GramMaintenance::FrozenIncremental) {
            let entry = self.history.last().expect("just pushed");
            self.gram
                .rank_one_update(entry.record.dphi.view(), entry.record.zeta)?;
        }
        if round_now % self.cfg.train.episode_len == 0 {
            self.train_now()?;
        }
        if matches!(self.cfg.maintenance, GramMaintenance::Refresh) {
            self.rebuild_gram()?;
        }
        self.round = round_now;
        Ok(())
    }

    fn train_now(&mut self) -> Result<()> {
        match &mut self.params {
            Params::Net(p) => {
                let start = self
                    .net0
                    .as_ref()
                    .expect("network agents keep an initial snapshot");
                let outcome =
                    net::train_episode(start, &self.history, self.cfg.lambda, &self.cfg.train)?;
                *p = outcome.params;
                self.last_refit = outcome.refit.or(self.last_refit);
            }
            Params::Theta { theta, theta0 } => {
                let n = self.history.len();
                let d = self.dim;
                let mut dphi = Array2::<f64>::zeros((n, d));
                let mut outcomes = Vec::with_capacity(n);
                let mut zetas = Vec::with_capacity(n);
                for (i, entry) in self.history.iter().enumerate() {
                    dphi.row_mut(i).assign(&entry.record.dphi);
                    outcomes.push(entry.record.outcome);
                    zetas.push(entry.record.zeta);
                }
                // the same discipline as the network path: descent restarts
                // from the ridge anchor each episode
                let mut next = theta0.clone();
                if self.cfg.train.n_steps > 0 {
                    next = net::glm_gd(
                        dphi.view(),
                        &outcomes,
                        &zetas,
                        self.cfg.lambda,
                        &next,
                        theta0,
                        &self.cfg.train,
                    )?;
                }
                if self.cfg.train.refit {
                    let fit = net::glm_refit(
                        dphi.view(),
                        &outcomes,
                        &zetas,
                        self.cfg.lambda,
                        &next,
                        theta0,
                        self.cfg.train.refit_tol,
                        self.cfg.train.refit_max_iters,
                    )?;
                    next = fit.theta;
                    self.last_refit = Some(fit.report);
                }
                *theta = next;
            }
        }
        Ok(())
    }

    /// Re-featurize every recorded duel under the current parameters and
    /// rebuild the Gram matrix from scratch.
    fn rebuild_gram(&mut self) -> Result<()> {
        let mut rows: Vec<(Array1<f64>, f64)> = Vec::with_capacity(self.history.len());
        for entry in &self.history {
            let dphi = match (&self.cfg.feature_mode, &self.params) {
                (FeatureMode::Identity, _) => &entry.x_first - &entry.x_second,
                (FeatureMode::Neural, Params::Net(p)) => {
                    let a = net::feature_map(&p.shape, &p.layers, entry.x_first.view())?;
                    let b = net::feature_map(&p.shape, &p.layers, entry.x_second.view())?;
                    a - b
                }
                (FeatureMode::FullGradient, Params::Net(p)) => {
                    let a = net::score_gradient(p, entry.x_first.view())?;
                    let b = net::score_gradient(p, entry.x_second.view())?;
                    a - b
                }
                _ => unreachable!("network modes carry a network"),
            };
            rows.push((dphi, entry.record.zeta));
        }
        self.gram = GramState::rebuild(
            self.gram.dim(),
            self.cfg.lambda,
            rows.iter().map(|(v, z)| (v.view(), *z)),
        )?;
        Ok(())
    }
}
