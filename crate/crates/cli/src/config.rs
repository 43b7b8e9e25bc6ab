//! Run configuration: a flat `key = value` file, `TASKTRANSFER_*`
//! environment overrides and command-line flags, applied in that order
//! over the backend's defaults.
//!
//! Keys are dotted paths (`train.gamma`, `plan.k`, `grid.k_values`). The
//! environment variable for a key is `TASKTRANSFER_` followed by the key
//! uppercased with dots replaced by underscores, e.g.
//! `TASKTRANSFER_TRAIN_GAMMA`. Lists are comma separated.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use tasktransfer::gridworld::EnvConfig;
use tasktransfer::instructions::NUM_INSTRUCTIONS;
use tasktransfer::learner::{json_hash, Backend, TrainConfig};
use tasktransfer::transfer::ClassifierConfig;

use crate::error::CliError;

pub const ENV_PREFIX: &str = "TASKTRANSFER_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSettings {
    pub k: usize,
    pub p: usize,
    pub n_adapt_steps: usize,
    pub adapt_epsilon_decay_steps: usize,
    /// Also sample every base on the holdout instructions.
    pub holdout_grid: bool,
    /// Also train from scratch on each beta instruction.
    pub scratch_baselines: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub k_values: Vec<usize>,
    pub p_values: Vec<usize>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses one per core.
    pub parallel: usize,
    pub out: String,
    pub backend: Backend,
    /// Classifier trainings per `train-transfer` summary.
    pub transfer_runs: usize,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub plan: PlanSettings,
    pub classifier: ClassifierConfig,
    pub grid: GridSpec,
}

impl RunConfig {
    /// Desk-scale defaults for `backend`.
    pub fn defaults(backend: Backend) -> Self {
        RunConfig {
            seed: 0,
            parallel: 0,
            out: "run".into(),
            backend,
            transfer_runs: 5,
            env: EnvConfig::new(4, 0),
            train: TrainConfig::for_backend(backend),
            plan: PlanSettings {
                k: 8,
                p: 8,
                n_adapt_steps: 20_000,
                adapt_epsilon_decay_steps: 20_000,
                holdout_grid: true,
                scratch_baselines: true,
            },
            classifier: ClassifierConfig::default(),
            grid: GridSpec {
                k_values: vec![2, 4, 8],
                p_values: vec![2, 4, 8],
                runs: 5,
            },
        }
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.env.validate().map_err(|e| CliError::Config(format!("env: {e}")))?;
        self.train.validate().map_err(|e| CliError::Config(format!("train: {e}")))?;
        self.classifier
            .validate()
            .map_err(|e| CliError::Config(format!("classifier: {e}")))?;
        if self.train.backend != self.backend {
            return bad("`train.backend` must equal `backend`".into());
        }
        let p = &self.plan;
        if p.k < 2 {
            return bad(format!("`plan.k` must be at least 2, got {}", p.k));
        }
        if p.p < 1 {
            return bad("`plan.p` must be at least 1".into());
        }
        if p.k + p.p >= NUM_INSTRUCTIONS {
            return bad(format!(
                "`plan.k` + `plan.p` = {} must leave a holdout instruction (at most {})",
                p.k + p.p,
                NUM_INSTRUCTIONS - 1
            ));
        }
        if p.n_adapt_steps == 0 {
            return bad("`plan.n_adapt_steps` must be at least 1".into());
        }
        if self.transfer_runs == 0 {
            return bad("`transfer_runs` must be at least 1".into());
        }
        if self.grid.runs == 0 {
            return bad("`grid.runs` must be at least 1".into());
        }
        if self.grid.k_values.is_empty() || self.grid.p_values.is_empty() {
            return bad("`grid.k_values` and `grid.p_values` must not be empty".into());
        }
        if let Some(k) = self.grid.k_values.iter().find(|&&k| k < 2) {
            return bad(format!("`grid.k_values` entries must be at least 2, got {k}"));
        }
        if self.grid.p_values.contains(&0) {
            return bad("`grid.p_values` entries must be at least 1".into());
        }
        Ok(())
    }

    /// Flat `key = value` text, keys sorted. Parsing it back yields the
    /// same config.
    pub fn to_flat(&self) -> String {
        let mut out = String::new();
        for (k, v) in flatten(&serde_json::to_value(self).expect("config serializes")) {
            if k == "train.backend" {
                continue;
            }
            out.push_str(&format!("{k} = {}\n", leaf_text(&v)));
        }
        out
    }
}

/// Explicit command-line settings; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub parallel: Option<usize>,
    pub out: Option<String>,
    pub backend: Option<Backend>,
}

/// Parses flat config text into key/value pairs. Blank lines and text after
/// `#` are ignored.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("config line {}: expected `key = value`", n + 1)))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("config line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

/// Resolves defaults < file < environment < flags and validates.
pub fn resolve(
    file: Option<&Path>,
    environment: &BTreeMap<String, String>,
    flags: &FlagOverrides,
) -> Result<RunConfig, CliError> {
    let mut layer = match file {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_flat(&text)?
        }
        None => BTreeMap::new(),
    };

    let known: Vec<String> = flatten(&serde_json::to_value(RunConfig::defaults(Backend::Tabular)).unwrap())
        .into_iter()
        .map(|(k, _)| k)
        .filter(|k| k != "train.backend")
        .collect();
    for key in &known {
        if let Some(v) = environment.get(&env_var_name(key)) {
            layer.insert(key.clone(), v.clone());
        }
    }
    for var in environment.keys() {
        if var.starts_with(ENV_PREFIX) && !known.iter().any(|k| &env_var_name(k) == var) {
            return Err(CliError::Config(format!("unknown environment override {var}")));
        }
    }
    if let Some(s) = flags.seed {
        layer.insert("seed".into(), s.to_string());
    }
    if let Some(n) = flags.parallel {
        layer.insert("parallel".into(), n.to_string());
    }
    if let Some(o) = &flags.out {
        layer.insert("out".into(), o.clone());
    }
    if let Some(b) = flags.backend {
        layer.insert("backend".into(), b.to_string());
    }

    let backend = match layer.get("backend") {
        Some(b) => b
            .parse::<Backend>()
            .map_err(|e| CliError::Config(format!("`backend`: {e}")))?,
        None => Backend::Tabular,
    };
    let mut value = serde_json::to_value(RunConfig::defaults(backend)).unwrap();
    for (k, v) in &layer {
        if k == "train.backend" {
            return Err(CliError::Config("set `backend`, not `train.backend`".into()));
        }
        set_leaf(&mut value, k, v)?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("config: {e}")))?;
    cfg.train.backend = cfg.backend;
    if !layer.contains_key("env.max_steps") {
        cfg.env.max_steps = 8 * cfg.env.room_size;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn flatten(v: &Value) -> Vec<(String, Value)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => out.push((prefix.to_string(), leaf.clone())),
        }
    }
    let mut out = Vec::new();
    walk("", v, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn leaf_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(leaf_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn set_leaf(root: &mut Value, key: &str, text: &str) -> Result<(), CliError> {
    let unknown = || CliError::Config(format!("unknown config key `{key}`"));
    let mut node = root;
    for part in key.split('.') {
        node = node.as_object_mut().and_then(|m: &mut Map<String, Value>| m.get_mut(part)).ok_or_else(unknown)?;
    }
    if node.is_object() {
        return Err(unknown());
    }
    *node = parse_like(node, text).map_err(|why| CliError::Config(format!("config key `{key}`: {why}, got {text:?}")))?;
    Ok(())
}

/// Parses `text` into a value of the same JSON kind as `template`.
fn parse_like(template: &Value, text: &str) -> Result<Value, String> {
    match template {
        Value::Bool(_) => match text {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err("expected true or false".into()),
        },
        Value::Number(n) if n.is_u64() => text
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| "expected a non-negative integer".into()),
        Value::Number(_) => {
            let x: f64 = text.parse().map_err(|_| "expected a number".to_string())?;
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .ok_or_else(|| "expected a finite number".into())
        }
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::from(0u64));
            if text.trim().is_empty() {
                return Ok(Value::Array(vec![]));
            }
            text.split(',')
                .map(|t| parse_like(&elem, t.trim()))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        _ => Ok(Value::String(text.to_string())),
    }
}
