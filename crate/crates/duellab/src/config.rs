//! TOML experiment configuration: parsing, defaults, dotted-path overrides,
//! and resolution into a runnable [`ExperimentConfig`].
//!
//! A config file has one `[runner]` table plus one or more `[[env]]` and
//! `[[agent]]` tables. Every field except the env `id`s (and the
//! synthetic/tabular essentials) has a default, so a minimal file is:
//!
//! ```toml
//! [[env]]
//! id = "cosine"
//! task = "cosine"
//! dim = 10
//!
//! [[agent]]
//! preset = "nvldb-ucb-asym"
//! ```
//!
//! Unknown keys are rejected. Overrides use dotted paths
//! (`runner.rounds=100`, `agent.nu=2.0`, `env.1.arms=7`); a path segment
//! that meets an array and is not an integer applies to every element.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{preset, AgentConfig};
use crate::env::{LabelColumn, PreferenceMode, SyntheticKind, TabularEnv, TabularSchema};
use crate::error::{Error, Result};
use crate::runner::{AgentSpec, EnvSpec, ExperimentConfig};

/// Default experiment horizon (rounds per run).
pub const DEFAULT_ROUNDS: u64 = 2000;
/// Default seed list: 0 through 19.
pub fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}

/// `[runner]` table. All fields optional in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunnerDoc {
    pub rounds: u64,
    pub seeds: Vec<u64>,
    pub parallelism: usize,
    pub output_dir: Option<PathBuf>,
    pub timing: bool,
}

impl Default for RunnerDoc {
    fn default() -> Self {
        RunnerDoc {
            rounds: DEFAULT_ROUNDS,
            seeds: default_seeds(),
            parallelism: 1,
            output_dir: None,
            timing: false,
        }
    }
}

/// How a tabular env decides duels, as written in a config file: the
/// string `"deterministic"` or a bare probability like `0.7`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PreferenceDoc {
    Named(String),
    Margin(f64),
}

/// One `[[env]]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvDoc {
    pub id: String,
    /// `"synthetic"` (default) or `"tabular"`.
    #[serde(default = "EnvDoc::default_kind")]
    pub kind: String,

    // synthetic fields
    /// Utility family: cosine | square | quadratic | linear.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default = "EnvDoc::default_arms")]
    pub arms: usize,
    /// Duplicate-and-normalize contexts so feature maps start at zero.
    #[serde(default = "EnvDoc::default_symmetrize")]
    pub symmetrize: bool,

    // tabular fields
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<PreferenceDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<LabelColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub has_header: Option<bool>,
}

impl EnvDoc {
    fn default_kind() -> String {
        "synthetic".into()
    }
    fn default_arms() -> usize {
        5
    }
    fn default_symmetrize() -> bool {
        true
    }
}

/// One `[[agent]]` table: a preset name plus optional scalar overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDoc {
    pub preset: String,
    /// Distinct id when the same preset appears twice; defaults to the
    /// preset name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_len: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refit: Option<bool>,
}

/// A parsed configuration document, prior to resolution. Serializing it
/// back to TOML and re-parsing yields an equal document.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runner: Option<RunnerDoc>,
    #[serde(default, rename = "env", skip_serializing_if = "Vec::is_empty")]
    pub envs: Vec<EnvDoc>,
    #[serde(default, rename = "agent", skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentDoc>,
}

impl ConfigDoc {
    /// Parse a TOML string into a document, rejecting unknown keys.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Render back to TOML. `parse(render(doc)) == doc`.
    pub fn render(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Turn the document into a validated [`ExperimentConfig`]. Tabular
    /// dataset paths are resolved relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<ExperimentConfig> {
        let runner = self.runner.clone().unwrap_or_default();
        if self.envs.is_empty() {
            return Err(Error::Config("env: at least one [[env]] table required".into()));
        }
        if self.agents.is_empty() {
            return Err(Error::Config(
                "agent: at least one [[agent]] table required".into(),
            ));
        }
        let mut envs = Vec::with_capacity(self.envs.len());
        for (i, doc) in self.envs.iter().enumerate() {
            envs.push(resolve_env(doc, base_dir).map_err(|e| prefix(&format!("env[{i}]"), e))?);
        }
        let mut agents = Vec::with_capacity(self.agents.len());
        for (i, doc) in self.agents.iter().enumerate() {
            agents.push(resolve_agent(doc).map_err(|e| prefix(&format!("agent[{i}]"), e))?);
        }
        let cfg = ExperimentConfig {
            envs,
            agents,
            rounds: runner.rounds,
            seeds: runner.seeds,
            parallelism: runner.parallelism,
            output_dir: runner.output_dir.unwrap_or_else(|| PathBuf::from("out")),
            timing: runner.timing,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn prefix(path: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{path}.{msg}")),
        Error::InvalidInput(msg) => Error::Config(format!("{path}: {msg}")),
        other => Error::Config(format!("{path}: {other}")),
    }
}

fn resolve_env(doc: &EnvDoc, base_dir: &Path) -> Result<EnvSpec> {
    match doc.kind.as_str() {
        "synthetic" => {
            for (key, set) in [
                ("path", doc.path.is_some()),
                ("preference", doc.preference.is_some()),
                ("label_column", doc.label_column.is_some()),
                ("delimiter", doc.delimiter.is_some()),
                ("has_header", doc.has_header.is_some()),
            ] {
                if set {
                    return Err(Error::Config(format!(
                        "{key}: only valid for kind = \"tabular\""
                    )));
                }
            }
            let task = doc
                .task
                .as_deref()
                .ok_or_else(|| Error::Config("task: required for synthetic envs".into()))?;
            let kind = parse_task(task)?;
            let dim = doc
                .dim
                .ok_or_else(|| Error::Config("dim: required for synthetic envs".into()))?;
            let spec = EnvSpec::synthetic(&doc.id, kind, dim, doc.arms, doc.symmetrize);
            spec.validate()?;
            Ok(spec)
        }
        "tabular" => {
            for (key, set) in [("task", doc.task.is_some()), ("dim", doc.dim.is_some())] {
                if set {
                    return Err(Error::Config(format!(
                        "{key}: only valid for kind = \"synthetic\""
                    )));
                }
            }
            let rel = doc
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("path: required for tabular envs".into()))?;
            let path = if rel.is_absolute() {
                rel.clone()
            } else {
                base_dir.join(rel)
            };
            let mode = match &doc.preference {
                None => {
                    return Err(Error::Config(
                        "preference: required for tabular envs (\"deterministic\" or a margin probability)"
                            .into(),
                    ))
                }
                Some(PreferenceDoc::Named(s)) if s == "deterministic" => {
                    PreferenceMode::Deterministic
                }
                Some(PreferenceDoc::Named(s)) => {
                    return Err(Error::Config(format!(
                        "preference: unknown mode {s:?} (expected \"deterministic\" or a probability)"
                    )))
                }
                Some(PreferenceDoc::Margin(p)) => PreferenceMode::Margin { p: *p },
            };
            let schema = TabularSchema {
                label_column: doc.label_column.clone().unwrap_or(LabelColumn::Index(0)),
                delimiter: doc.delimiter.unwrap_or(','),
                has_header: doc.has_header.unwrap_or(true),
            };
            let env = TabularEnv::load(&path, &schema, mode)?;
            let spec = EnvSpec::tabular(&doc.id, env);
            spec.validate()?;
            Ok(spec)
        }
        other => Err(Error::Config(format!(
            "kind: unknown environment kind {other:?} (expected \"synthetic\" or \"tabular\")"
        ))),
    }
}

fn parse_task(task: &str) -> Result<SyntheticKind> {
    Ok(match task {
        "cosine" => SyntheticKind::Cosine,
        "square" => SyntheticKind::Square,
        "quadratic" => SyntheticKind::Quadratic,
        "linear" => SyntheticKind::Linear,
        other => {
            return Err(Error::Config(format!(
                "task: unknown task {other:?} (expected cosine, square, quadratic, or linear)"
            )))
        }
    })
}

fn resolve_agent(doc: &AgentDoc) -> Result<AgentSpec> {
    let mut cfg: AgentConfig =
        preset(&doc.preset).map_err(|e| prefix("preset", Error::Config(e.to_string())))?;
    if let Some(v) = doc.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = doc.nu {
        cfg.selection.nu = v;
    }
    if let Some(v) = doc.epsilon {
        cfg.epsilon = Some(v);
    }
    if let Some(v) = doc.m {
        cfg.m = v;
    }
    if let Some(v) = doc.hidden_layers {
        cfg.hidden_layers = v;
    }
    if let Some(v) = doc.gamma {
        cfg.train.gamma = v;
    }
    if let Some(v) = doc.n_steps {
        cfg.train.n_steps = v;
    }
    if let Some(v) = doc.episode_len {
        cfg.train.episode_len = v;
    }
    if let Some(v) = doc.refit {
        cfg.train.refit = v;
    }
    let id = doc.id.clone().unwrap_or_else(|| doc.preset.clone());
    let spec = AgentSpec::custom(&id, cfg);
    spec.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(msg),
        other => other,
    })?;
    Ok(spec)
}

/// Parse a config file, apply `key=value` overrides, and resolve it.
/// Relative dataset paths resolve against the config file's directory.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc = parse_with_overrides(&text, overrides)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    doc.resolve(base)
}

/// Parse TOML text and apply overrides, returning the typed document.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<ConfigDoc> {
    if overrides.is_empty() {
        return ConfigDoc::parse(text);
    }
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut value = toml::Value::Table(table);
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    value
        .try_into::<ConfigDoc>()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Apply one `dotted.path=value` override to a TOML tree. Array segments
/// accept either an index (`env.0.arms`) or broadcast to all elements
/// (`agent.nu`).
pub fn apply_override(root: &mut toml::Value, item: &str) -> Result<()> {
    let (path, raw) = item.split_once('=').ok_or_else(|| {
        Error::Config(format!("override {item:?} must have the form key.path=value"))
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override {item:?} has an empty key path")));
    }
    let segments: Vec<&str> = path.split('.').collect();
    let leaf = parse_override_value(raw.trim());
    set_path(root, &segments, &leaf, path)
}

fn parse_override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(
    node: &mut toml::Value,
    segments: &[&str],
    leaf: &toml::Value,
    full: &str,
) -> Result<()> {
    let (head, rest) = segments
        .split_first()
        .expect("set_path called with nonempty segments");
    match node {
        toml::Value::Table(table) => {
            if rest.is_empty() {
                table.insert(head.to_string(), leaf.clone());
                return Ok(());
            }
            let child = table
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            set_path(child, rest, leaf, full)
        }
        toml::Value::Array(items) => {
            if let Ok(idx) = head.parse::<usize>() {
                let len = items.len();
                let child = items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!(
                        "override path {full:?}: index {idx} out of range (array has {len} elements)"
                    ))
                })?;
                if rest.is_empty() {
                    *child = leaf.clone();
                    Ok(())
                } else {
                    set_path(child, rest, leaf, full)
                }
            } else {
                if items.is_empty() {
                    return Err(Error::Config(format!(
                        "override path {full:?}: cannot address key {head:?} in an empty array"
                    )));
                }
                for child in items.iter_mut() {
                    set_path(child, segments, leaf, full)?;
                }
                Ok(())
            }
        }
        _ => Err(Error::Config(format!(
            "override path {full:?}: {head:?} does not address a table or array"
        ))),
    }
}
