//! Preference environments.
//!
//! An environment does three things each round: present K context vectors,
//! reveal (to the evaluator only) the true utility of every arm, and answer
//! a duel between two chosen arms with a single Bernoulli bit. Two families
//! are provided. Synthetic environments draw fresh uniform contexts every
//! round and score them with a fixed nonlinear utility of x^T Theta.
//! Tabular environments replay a classification dataset: each round picks
//! one instance and offers one arm per class, encoded one-vs-all (the
//! instance's features sit in the block belonging to that class, zeros
//! elsewhere), so guessing the right class is the high-utility arm.
//!
//! Environments are immutable after construction; all randomness flows
//! through explicitly passed streams, so the same stream always reproduces
//! the same rounds.

use crate::context::{symmetrize_context, ContextSet};
use crate::error::{Error, Result};
use crate::link::LinkFunction;
use crate::rng;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// True utilities of one round, for regret accounting. `best_arm` is the
/// lowest-index argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundTruth {
    pub utilities: Vec<f64>,
    pub best_arm: usize,
    pub best_utility: f64,
}

impl RoundTruth {
    pub fn new(utilities: Vec<f64>) -> Result<Self> {
        if utilities.is_empty() {
            return Err(Error::InvalidInput("round has no arms".into()));
        }
        if utilities.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidInput(
                "round utilities contain a non-finite value".into(),
            ));
        }
        let mut best_arm = 0;
        for (k, u) in utilities.iter().enumerate().skip(1) {
            if *u > utilities[best_arm] {
                best_arm = k;
            }
        }
        let best_utility = utilities[best_arm];
        Ok(RoundTruth {
            utilities,
            best_arm,
            best_utility,
        })
    }
}

// ---------------------------------------------------------------------------
// synthetic tasks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// u(x) = cos(3 x^T Theta)
    Cosine,
    /// u(x) = 10 (x^T Theta)^2
    Square,
    /// u(x) = x^T Theta Theta^T x = (x^T Theta)^2
    Quadratic,
    /// u(x) = x^T Theta
    Linear,
}

/// A synthetic task: a hidden parameter vector Theta drawn once uniformly
/// from [-1,1]^d, a nonlinear utility of x^T Theta, and fresh unit-norm
/// contexts every round. With `symmetrize` on (d must be even), raw draws
/// live in d/2 dimensions and are duplicated before normalization, which
/// puts every context on the manifold where the feature network's
/// structured init vanishes exactly.
#[derive(Clone, Debug)]
pub struct SyntheticEnv {
    pub kind: SyntheticKind,
    pub d: usize,
    pub arms: usize,
    pub symmetrize: bool,
    pub link: LinkFunction,
    theta_star: Array1<f64>,
}

impl SyntheticEnv {
    /// Draw Theta from the supplied stream and freeze it.
    pub fn new<R: Rng + ?Sized>(
        kind: SyntheticKind,
        d: usize,
        arms: usize,
        symmetrize: bool,
        rng_in: &mut R,
    ) -> Result<Self> {
        let theta = Array1::from_iter((0..d).map(|_| rng::uniform_sym(rng_in)));
        Self::with_theta(kind, arms, symmetrize, theta)
    }

    /// Build around an explicit Theta (tests and pathological cases).
    pub fn with_theta(
        kind: SyntheticKind,
        arms: usize,
        symmetrize: bool,
        theta_star: Array1<f64>,
    ) -> Result<Self> {
        let d = theta_star.len();
        if d == 0 {
            return Err(Error::InvalidInput(
                "synthetic context dimension must be at least 1".into(),
            ));
        }
        if arms < 2 {
            return Err(Error::InvalidInput(format!(
                "a duel needs at least 2 arms, got {arms}"
            )));
        }
        if symmetrize && d % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "duplicated-halves contexts need an even dimension, got {d}"
            )));
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "synthetic parameter vector contains a non-finite entry".into(),
            ));
        }
        Ok(SyntheticEnv {
            kind,
            d,
            arms,
            symmetrize,
            link: LinkFunction::Logistic,
            theta_star,
        })
    }

    pub fn theta_star(&self) -> ArrayView1<'_, f64> {
        self.theta_star.view()
    }

    /// The task utility at an arbitrary point (not necessarily unit norm).
    pub fn true_utility(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::ShapeMismatch(format!(
                "context has dimension {}, task expects {}",
                x.len(),
                self.d
            )));
        }
        let s = x.dot(&self.theta_star);
        Ok(match self.kind {
            SyntheticKind::Cosine => (3.0 * s).cos(),
            SyntheticKind::Square => 10.0 * s * s,
            SyntheticKind::Quadratic => s * s,
            SyntheticKind::Linear => s,
        })
    }

    pub fn sample_contexts<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng_in: &mut R,
    ) -> Result<(ContextSet, RoundTruth)> {
        if round == 0 {
            return Err(Error::InvalidInput("rounds are numbered from 1".into()));
        }
        let mut vectors = Array2::<f64>::zeros((self.arms, self.d));
        for mut row in vectors.rows_mut() {
            if self.symmetrize {
                let half: Vec<f64> = (0..self.d / 2).map(|_| rng::uniform_sym(rng_in)).collect();
                let x = symmetrize_context(&half, self.d)?;
                for (slot, v) in row.iter_mut().zip(x) {
                    *slot = v;
                }
            } else {
                let raw: Vec<f64> = (0..self.d).map(|_| rng::uniform_sym(rng_in)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::DegenerateContext);
                }
                for (slot, v) in row.iter_mut().zip(raw) {
                    *slot = v / norm;
                }
            }
        }
        let mut utilities = Vec::with_capacity(self.arms);
        for row in vectors.rows() {
            utilities.push(self.true_utility(row)?);
        }
        Ok((
            ContextSet::new(round, vectors)?,
            RoundTruth::new(utilities)?,
        ))
    }

    /// Probability that the first arm wins a duel: g(u_1 - u_2).
    pub fn duel_prob(&self, truth: &RoundTruth, k1: usize, k2: usize) -> Result<f64> {
        let k = truth.utilities.len();
        if k1 >= k || k2 >= k {
            return Err(Error::InvalidInput(format!(
                "duel indices ({k1}, {k2}) out of range for {k} arms"
            )));
        }
        self.link.eval(truth.utilities[k1] - truth.utilities[k2])
    }

    /// Answer a duel: the first arm wins with probability g(u_1 - u_2).
    pub fn duel<R: Rng + ?Sized>(
        &self,
        truth: &RoundTruth,
        k1: usize,
        k2: usize,
        rng_in: &mut R,
    ) -> Result<u8> {
        let p = self.duel_prob(truth, k1, k2)?;
        Ok((rng_in.random::<f64>() < p) as u8)
    }
}

// ---------------------------------------------------------------------------
// tabular (dataset-driven) tasks
// ---------------------------------------------------------------------------

/// How a tabular environment scores and answers duels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum PreferenceMode {
    /// Utilities are label indicators (1 for the instance's class, else 0),
    /// and the logistic comparison is scaled so a label-vs-nonlabel duel
    /// comes out at probability exactly `p` (so p = 0.7 reproduces a 70/30
    /// margin; nonlabel pairs are a fair coin).
    Margin { p: f64 },
    /// Utilities are the class rank (arm k scores k/(arms-1)); the
    /// higher-ranked arm always wins, ties flip a fair coin.
    Deterministic,
}

impl PreferenceMode {
    pub fn validate(&self) -> Result<()> {
        if let PreferenceMode::Margin { p } = self {
            if !(p.is_finite() && *p > 0.5 && *p < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "margin probability must lie strictly between 0.5 and 1, got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Which column of a delimited file holds the class label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

/// Ingestion settings for [`TabularEnv::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub label_column: LabelColumn,
    /// Single ASCII field delimiter.
    pub delimiter: char,
    pub has_header: bool,
}

impl Default for TabularSchema {
    fn default() -> Self {
        TabularSchema {
            label_column: LabelColumn::Index(0),
            delimiter: ',',
            has_header: true,
        }
    }
}

/// A classification dataset posed as a dueling task: each round picks one
/// instance uniformly (with replacement) and offers one arm per class in
/// one-vs-all block encoding. Feature columns are min-max scaled to [0,1]
/// at load time; class labels are sorted lexicographically and indexed in
/// that order.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    features: Array2<f64>,
    labels: Vec<usize>,
    label_names: Vec<String>,
    pub mode: PreferenceMode,
    pub link: LinkFunction,
}

impl TabularEnv {
    /// Build from already-scaled features and mapped labels.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        label_names: Vec<String>,
        mode: PreferenceMode,
    ) -> Result<Self> {
        mode.validate()?;
        let arms = label_names.len();
        if arms < 2 {
            return Err(Error::InvalidInput(format!(
                "a dueling task needs at least 2 classes, got {arms}"
            )));
        }
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if labels.iter().any(|l| *l >= arms) {
            return Err(Error::InvalidInput(
                "a label index exceeds the class count".into(),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset features contain a non-finite value".into(),
            ));
        }
        Ok(TabularEnv {
            features,
            labels,
            label_names,
            mode,
            link: LinkFunction::Logistic,
        })
    }

    /// Read a delimited text file: every column except the label column is
    /// a numeric feature. Errors carry 1-based line numbers.
    pub fn load(path: &Path, schema: &TabularSchema, mode: PreferenceMode) -> Result<Self> {
        if !schema.delimiter.is_ascii() {
            return Err(Error::Config(format!(
                "field delimiter must be a single ASCII character, got {:?}",
                schema.delimiter
            )));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(schema.has_header)
            .delimiter(schema.delimiter as u8)
            .flexible(false)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                other => Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: format!("{other:?}"),
                },
            })?;

        let label_idx = match &schema.label_column {
            LabelColumn::Index(i) => *i,
            LabelColumn::Name(name) => {
                if !schema.has_header {
                    return Err(Error::Config(format!(
                        "label column {name:?} is a name but the file has no header"
                    )));
                }
                let headers = reader.headers().map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: e.to_string(),
                })?;
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "label column {name:?} not found in header [{}]",
                            headers.iter().collect::<Vec<_>>().join(", ")
                        ))
                    })?
            }
        };

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut raw_labels: Vec<String> = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(0);
                Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                }
            })?;
            let line = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(0);
            if label_idx >= record.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!(
                        "label column {label_idx} out of range for {} fields",
                        record.len()
                    ),
                });
            }
            let mut row = Vec::with_capacity(record.len().saturating_sub(1));
            for (i, field) in record.iter().enumerate() {
                if i == label_idx {
                    raw_labels.push(field.trim().to_string());
                    continue;
                }
                let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("field {i} is not numeric: {field:?}"),
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        message: format!("field {i} is not finite: {field:?}"),
                    });
                }
                row.push(value);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!(
                "dataset {} has no data rows",
                path.display()
            )));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(Error::InvalidInput(format!(
                "dataset {} has no feature columns",
                path.display()
            )));
        }

        // min-max scale each column to [0,1]; constant columns collapse to 0
        let mut lo = vec![f64::INFINITY; width];
        let mut hi = vec![f64::NEG_INFINITY; width];
        for row in &rows {
            for (j, v) in row.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        let mut features = Array2::<f64>::zeros((rows.len(), width));
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let range = hi[j] - lo[j];
                features[[i, j]] = if range > 0.0 { (v - lo[j]) / range } else { 0.0 };
            }
        }

        // classes in lexicographic order of their label text
        let mut name_to_idx = BTreeMap::new();
        for name in &raw_labels {
            name_to_idx.entry(name.clone()).or_insert(0usize);
        }
        for (i, (_, slot)) in name_to_idx.iter_mut().enumerate() {
            *slot = i;
        }
        let labels: Vec<usize> = raw_labels.iter().map(|n| name_to_idx[n]).collect();
        let label_names: Vec<String> = name_to_idx.into_keys().collect();

        TabularEnv::new(features, labels, label_names, mode)
    }

    pub fn arms(&self) -> usize {
        self.label_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Dimension of the block-encoded contexts: classes x feature columns.
    pub fn context_dim(&self) -> usize {
        self.arms() * self.feature_dim()
    }

    pub fn instances(&self) -> usize {
        self.features.nrows()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    fn utilities_for(&self, label: usize) -> Vec<f64> {
        (0..self.arms())
            .map(|k| if k == label { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn sample_contexts<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng_in: &mut R,
    ) -> Result<(ContextSet, RoundTruth)> {
        if round == 0 {
            return Err(Error::InvalidInput("rounds are numbered from 1".into()));
        }
        let idx = rng_in.random_range(0..self.instances());
        let inst = self.features.row(idx);
        let norm = inst.dot(&inst).sqrt();
        let arms = self.arms();
        let fdim = self.feature_dim();
        let mut vectors = Array2::<f64>::zeros((arms, arms * fdim));
        for k in 0..arms {
            for (j, v) in inst.iter().enumerate() {
                // an all-zero instance row stays zero (nothing to normalize)
                vectors[[k, k * fdim + j]] = if norm > 0.0 { v / norm } else { 0.0 };
            }
        }
        let truth = RoundTruth::new(self.utilities_for(self.labels[idx]))?;
        Ok((ContextSet::new(round, vectors)?, truth))
    }

    /// Probability that the first arm wins. Margin mode compares scaled
    /// utilities through the logistic link; deterministic mode lets the
    /// higher-ranked arm win outright (ties are a fair coin).
    pub fn duel_prob(&self, truth: &RoundTruth, k1: usize, k2: usize) -> Result<f64> {
        let k = truth.utilities.len();
        if k1 >= k || k2 >= k {
            return Err(Error::InvalidInput(format!(
                "duel indices ({k1}, {k2}) out of range for {k} arms"
            )));
        }
        let (u1, u2) = (truth.utilities[k1], truth.utilities[k2]);
        match self.mode {
            PreferenceMode::Margin { p } => {
                let scale = (p / (1.0 - p)).ln();
                self.link.eval(scale * (u1 - u2))
            }
            PreferenceMode::Deterministic => Ok(if u1 > u2 {
                1.0
            } else if u1 < u2 {
                0.0
            } else {
                0.5
            }),
        }
    }

    /// Answer a duel according to [`Self::duel_prob`].
    pub fn duel<R: Rng + ?Sized>(
        &self,
        truth: &RoundTruth,
        k1: usize,
        k2: usize,
        rng_in: &mut R,
    ) -> Result<u8> {
        let p = self.duel_prob(truth, k1, k2)?;
        Ok((rng_in.random::<f64>() < p) as u8)
    }
}

// ---------------------------------------------------------------------------
// uniform wrapper
// ---------------------------------------------------------------------------

/// Either environment family behind one face; the runner works with this.
#[derive(Clone, Debug)]
pub enum Environment {
    Synthetic(SyntheticEnv),
    Tabular(TabularEnv),
}

impl Environment {
    pub fn dim(&self) -> usize {
        match self {
            Environment::Synthetic(e) => e.d,
            Environment::Tabular(e) => e.context_dim(),
        }
    }

    pub fn arms(&self) -> usize {
        match self {
            Environment::Synthetic(e) => e.arms,
            Environment::Tabular(e) => e.arms(),
        }
    }

    pub fn sample_contexts<R: Rng + ?Sized>(
        &self,
        round: u64,
        rng_in: &mut R,
    ) -> Result<(ContextSet, RoundTruth)> {
        match self {
            Environment::Synthetic(e) => e.sample_contexts(round, rng_in),
            Environment::Tabular(e) => e.sample_contexts(round, rng_in),
        }
    }

    /// Probability that the first arm wins the duel (for oracle-variance
    /// agents, which are told the true Bernoulli variance p(1-p)).
    pub fn duel_prob(&self, truth: &RoundTruth, k1: usize, k2: usize) -> Result<f64> {
        match self {
            Environment::Synthetic(e) => e.duel_prob(truth, k1, k2),
            Environment::Tabular(e) => e.duel_prob(truth, k1, k2),
        }
    }

    pub fn duel<R: Rng + ?Sized>(
        &self,
        truth: &RoundTruth,
        k1: usize,
        k2: usize,
        rng_in: &mut R,
    ) -> Result<u8> {
        match self {
            Environment::Synthetic(e) => e.duel(truth, k1, k2, rng_in),
            Environment::Tabular(e) => e.duel(truth, k1, k2, rng_in),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regret::{average_regret, weak_regret};
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn tiny_tabular(mode: PreferenceMode) -> TabularEnv {
        // three instances, two classes, two features (already in [0,1])
        let features = array![[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]];
        TabularEnv::new(
            features,
            vec![0, 1, 0],
            vec!["a".into(), "b".into()],
            mode,
        )
        .unwrap()
    }

    #[test]
    fn symmetrized_contexts_have_unit_norm_and_duplicated_halves() {
        let mut r = rng::derive_stream(4, &["env-theta"]);
        let env = SyntheticEnv::new(SyntheticKind::Cosine, 6, 4, true, &mut r).unwrap();
        let mut ctx_rng = rng::derive_stream(4, &["env-ctx"]);
        let (ctx, truth) = env.sample_contexts(1, &mut ctx_rng).unwrap();
        assert_eq!(ctx.arms(), 4);
        assert_eq!(ctx.dim(), 6);
        assert_eq!(truth.utilities.len(), 4);
        for row in ctx.vectors.rows() {
            let norm = row.dot(&row).sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert_eq!(row[j].to_bits(), row[j + 3].to_bits());
            }
        }
    }

    #[test]
    fn plain_contexts_have_unit_norm_and_any_dimension() {
        let mut r = rng::derive_stream(9, &["env-theta"]);
        let env = SyntheticEnv::new(SyntheticKind::Linear, 5, 5, false, &mut r).unwrap();
        let mut ctx_rng = rng::derive_stream(9, &["env-ctx"]);
        let (ctx, _) = env.sample_contexts(3, &mut ctx_rng).unwrap();
        assert_eq!((ctx.arms(), ctx.dim()), (5, 5));
        for row in ctx.vectors.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_stream_reproduces_the_context_set() {
        let mut r = rng::derive_stream(12, &["env-theta"]);
        let env = SyntheticEnv::new(SyntheticKind::Square, 4, 3, true, &mut r).unwrap();
        let mut a = rng::derive_stream(12, &["env-ctx"]);
        let mut b = rng::derive_stream(12, &["env-ctx"]);
        let (ca, _) = env.sample_contexts(1, &mut a).unwrap();
        let (cb, _) = env.sample_contexts(1, &mut b).unwrap();
        assert_eq!(ca.vectors, cb.vectors);
    }

    #[test]
    fn utility_formulas() {
        let theta = array![1.0, 0.0, 0.0];
        let x = array![0.3, 0.9, -0.2]; // x . theta = 0.3
        let cases = [
            (SyntheticKind::Cosine, (0.9f64).cos()),
            (SyntheticKind::Square, 0.9),
            (SyntheticKind::Quadratic, 0.09),
            (SyntheticKind::Linear, 0.3),
        ];
        for (kind, want) in cases {
            let env = SyntheticEnv::with_theta(kind, 2, false, theta.clone()).unwrap();
            let got = env.true_utility(x.view()).unwrap();
            assert!((got - want).abs() < 1e-12, "{kind:?}: {got} vs {want}");
        }
    }

    #[test]
    fn zero_theta_cosine_means_zero_regret_forever() {
        let env =
            SyntheticEnv::with_theta(SyntheticKind::Cosine, 3, false, Array1::zeros(4)).unwrap();
        let mut r = rng::derive_stream(1, &["env-ctx"]);
        for t in 1..=5 {
            let (_, truth) = env.sample_contexts(t, &mut r).unwrap();
            assert!(truth.utilities.iter().all(|u| *u == 1.0));
            assert_eq!(
                average_regret(truth.best_utility, truth.utilities[0], truth.utilities[2]),
                0.0
            );
            assert_eq!(
                weak_regret(truth.best_utility, truth.utilities[1], truth.utilities[2]),
                0.0
            );
        }
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        let mut r = rng::derive_stream(0, &["env-theta"]);
        assert!(SyntheticEnv::new(SyntheticKind::Cosine, 5, 4, true, &mut r).is_err()); // odd + symmetrize
        assert!(SyntheticEnv::new(SyntheticKind::Cosine, 4, 1, false, &mut r).is_err()); // one arm
        assert!(SyntheticEnv::new(SyntheticKind::Cosine, 0, 4, false, &mut r).is_err());
        assert!(
            SyntheticEnv::with_theta(SyntheticKind::Linear, 2, false, array![f64::NAN]).is_err()
        );
        assert!(PreferenceMode::Margin { p: 0.5 }.validate().is_err());
        assert!(PreferenceMode::Margin { p: 1.0 }.validate().is_err());
        assert!(PreferenceMode::Margin { p: 0.7 }.validate().is_ok());
    }

    #[test]
    fn block_encoding_is_orthogonal_across_arms_and_unit_norm() {
        let env = tiny_tabular(PreferenceMode::Margin { p: 0.7 });
        let mut r = rng::derive_stream(3, &["env-ctx"]);
        let (ctx, truth) = env.sample_contexts(1, &mut r).unwrap();
        assert_eq!((ctx.arms(), ctx.dim()), (2, 4));
        let a = ctx.arm(0);
        let b = ctx.arm(1);
        assert_eq!(a.dot(&b), 0.0);
        assert!((a.dot(&a).sqrt() - 1.0).abs() < 1e-12);
        // exactly one arm carries utility 1
        assert_eq!(truth.utilities.iter().filter(|u| **u == 1.0).count(), 1);
        assert_eq!(truth.best_utility, 1.0);
    }

    #[test]
    fn margin_duel_frequency_is_calibrated() {
        let env = tiny_tabular(PreferenceMode::Margin { p: 0.7 });
        let truth = RoundTruth::new(vec![1.0, 0.0]).unwrap();
        let mut r = rng::derive_stream(8, &["env-duel"]);
        let n = 100_000;
        let mut wins = 0u32;
        for _ in 0..n {
            wins += env.duel(&truth, 0, 1, &mut r).unwrap() as u32;
        }
        let freq = wins as f64 / n as f64;
        assert!((freq - 0.7).abs() < 0.005, "margin frequency {freq}");
        // nonlabel-vs-nonlabel duels are a fair coin
        let tie = RoundTruth::new(vec![0.0, 0.0]).unwrap();
        let mut heads = 0u32;
        for _ in 0..n {
            heads += env.duel(&tie, 0, 1, &mut r).unwrap() as u32;
        }
        let freq = heads as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.005, "tie frequency {freq}");
    }

    #[test]
    fn deterministic_duels_follow_rank() {
        let env = tiny_tabular(PreferenceMode::Deterministic);
        let mut r = rng::derive_stream(2, &["env-duel"]);
        let (_, truth) = env.sample_contexts(1, &mut r).unwrap();
        // utilities are the one-hot indicator of the drawn row's label
        assert_eq!(truth.utilities.iter().sum::<f64>(), 1.0);
        assert_eq!(truth.utilities[truth.best_arm], 1.0);
        let best = truth.best_arm;
        let other = 1 - best;
        for _ in 0..50 {
            assert_eq!(env.duel(&truth, best, other, &mut r).unwrap(), 1);
            assert_eq!(env.duel(&truth, other, best, &mut r).unwrap(), 0);
        }
        // a tied duel is a fair coin
        let mut ones = 0;
        for _ in 0..2000 {
            ones += env.duel(&truth, other, other, &mut r).unwrap() as u32;
        }
        assert!((ones as f64 / 2000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn load_scales_and_maps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "f1,class,f2").unwrap();
        writeln!(f, "1.0,pos,10").unwrap();
        writeln!(f, "3.0,neg,30").unwrap();
        writeln!(f, "2.0,pos,20").unwrap();
        drop(f);
        let schema = TabularSchema {
            label_column: LabelColumn::Name("class".into()),
            ..TabularSchema::default()
        };
        let env = TabularEnv::load(&path, &schema, PreferenceMode::Margin { p: 0.7 }).unwrap();
        assert_eq!(env.arms(), 2);
        assert_eq!(env.feature_dim(), 2);
        assert_eq!(env.instances(), 3);
        // lexicographic: "neg" -> 0, "pos" -> 1
        assert_eq!(env.label_names(), ["neg", "pos"]);
        assert_eq!(env.labels, vec![1, 0, 1]);
        // min-max scaling sends each column onto [0,1]
        assert_eq!(env.features[[0, 0]], 0.0);
        assert_eq!(env.features[[1, 0]], 1.0);
        assert_eq!(env.features[[2, 0]], 0.5);
        assert_eq!(env.features[[2, 1]], 0.5);
        // same file, same env
        let again = TabularEnv::load(&path, &schema, PreferenceMode::Margin { p: 0.7 }).unwrap();
        assert_eq!(env.features, again.features);
        assert_eq!(env.labels, again.labels);
    }

    #[test]
    fn load_reports_the_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "f1,class").unwrap();
        writeln!(f, "1.0,a").unwrap();
        writeln!(f, "oops,b").unwrap();
        drop(f);
        let schema = TabularSchema {
            label_column: LabelColumn::Index(1),
            ..TabularSchema::default()
        };
        match TabularEnv::load(&path, &schema, PreferenceMode::Deterministic) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
        // an empty file is rejected outright
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "f1,class\n").unwrap();
        assert!(matches!(
            TabularEnv::load(&empty, &schema, PreferenceMode::Deterministic),
            Err(Error::InvalidInput(_))
        ));
        // a label column name without a header is a config error
        let named = TabularSchema {
            label_column: LabelColumn::Name("class".into()),
            has_header: false,
            ..TabularSchema::default()
        };
        assert!(matches!(
            TabularEnv::load(&path, &named, PreferenceMode::Deterministic),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn magic_shaped_file_reports_eleven_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wide.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        for i in 0..6 {
            let label = if i % 2 == 0 { "g" } else { "h" };
            let fields: Vec<String> =
                (0..11).map(|j| format!("{}", (i * 11 + j) as f64 * 0.1)).collect();
            writeln!(f, "{},{label}", fields.join(",")).unwrap();
        }
        drop(f);
        let schema = TabularSchema {
            label_column: LabelColumn::Index(11),
            has_header: false,
            ..TabularSchema::default()
        };
        let env = TabularEnv::load(&path, &schema, PreferenceMode::Margin { p: 0.7 }).unwrap();
        assert_eq!((env.arms(), env.feature_dim()), (2, 11));
        assert_eq!(env.context_dim(), 22);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn square_is_ten_times_quadratic(
            xs in proptest::collection::vec(-2.0f64..2.0, 4),
            ts in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let theta = Array1::from_vec(ts);
            let x = Array1::from_vec(xs);
            let sq = SyntheticEnv::with_theta(SyntheticKind::Square, 2, false, theta.clone())
                .unwrap()
                .true_utility(x.view())
                .unwrap();
            let quad = SyntheticEnv::with_theta(SyntheticKind::Quadratic, 2, false, theta)
                .unwrap()
                .true_utility(x.view())
                .unwrap();
            prop_assert!((sq - 10.0 * quad).abs() <= 1e-12 * sq.abs().max(1.0));
        }

        #[test]
        fn regret_is_zero_only_on_best_pairs(seed in 0u64..300) {
            let mut r = rng::derive_stream(seed, &["env-prop"]);
            let env = SyntheticEnv::new(SyntheticKind::Square, 4, 4, true, &mut r).unwrap();
            let (_, truth) = env.sample_contexts(1, &mut r).unwrap();
            let b = truth.best_arm;
            prop_assert_eq!(
                average_regret(truth.best_utility, truth.utilities[b], truth.utilities[b]),
                0.0
            );
            for k1 in 0..4 {
                for k2 in 0..4 {
                    let ra = average_regret(
                        truth.best_utility,
                        truth.utilities[k1],
                        truth.utilities[k2],
                    );
                    let rw = weak_regret(
                        truth.best_utility,
                        truth.utilities[k1],
                        truth.utilities[k2],
                    );
                    prop_assert!(ra >= 0.0 && rw >= 0.0);
                    // equal-utility pairs make the two formulas coincide up
                    // to a rounding ulp, so compare with a hair of slack
                    prop_assert!(ra - rw >= -1e-12 * rw.abs().max(1.0));
                }
            }
        }
    }
}
