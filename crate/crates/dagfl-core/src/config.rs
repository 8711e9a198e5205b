//! Run configuration: a flat `key = value` text format with `#` comments.
//!
//! Every field is validated on load and errors carry the offending line
//! number and field name. `effective_text` re-emits the fully resolved
//! configuration; feeding that file back reproduces the identical run.

use std::fmt::Write as _;

use thiserror::Error;

use crate::fl::{PartitionMode, Task};
use crate::selection::FreshnessMode;
use crate::sim::Policy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {field}: {message}")]
    Invalid {
        line: usize,
        field: String,
        message: String,
    },
    #[error("{field}: {message}")]
    Semantic { field: String, message: String },
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Client speed multipliers: drawn from the seed or given explicitly.
#[derive(Debug, Clone, PartialEq)]
pub enum SpeedFactors {
    Auto,
    Explicit(Vec<f64>),
}

/// All experiment knobs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: Task,
    pub samples: usize,
    pub clients: usize,
    pub hidden_units: usize,
    pub signature_groups: usize,
    pub select_n: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub prefilter: Option<usize>,
    pub freshness_mode: FreshnessMode,
    pub partition: PartitionMode,
    pub seed: u64,
    pub max_global_iters: u64,
    pub patience: u32,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub target_accuracy: Option<f64>,
    pub speed_factors: SpeedFactors,
    pub base_epoch_time: f64,
    pub eval_cost_per_sample: f64,
    /// Simulated seconds per similarity-registry query (free by default).
    pub registry_query_cost: f64,
    pub policy: Policy,
    pub trace: bool,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::ToyDigits,
            samples: 1000,
            clients: 10,
            hidden_units: 64,
            signature_groups: 8,
            select_n: 2,
            lambda: 0.5,
            alpha: 0.1,
            prefilter: None,
            freshness_mode: FreshnessMode::Product,
            partition: PartitionMode::Iid,
            seed: 42,
            max_global_iters: 200,
            patience: 5,
            local_epochs: 5,
            lr: 0.01,
            batch_size: 32,
            target_accuracy: None,
            speed_factors: SpeedFactors::Auto,
            base_epoch_time: 1.0,
            eval_cost_per_sample: 1e-3,
            registry_query_cost: 0.0,
            policy: Policy::DagAfl,
            trace: false,
            out_dir: "out".to_string(),
        }
    }
}

fn invalid(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }

    /// Parses the flat format on top of defaults; later keys win.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut config = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| invalid(line, content, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            config.apply(line, key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(
            line: usize,
            field: &str,
            value: &str,
        ) -> Result<T, ConfigError> {
            value
                .parse()
                .map_err(|_| invalid(line, field, format!("cannot parse `{value}`")))
        }
        match key {
            "task" => {
                self.task = match value {
                    "toy-digits" => Task::ToyDigits,
                    "synthetic" => Task::Synthetic,
                    _ => return Err(invalid(line, key, "expected `toy-digits` or `synthetic`")),
                }
            }
            "samples" => self.samples = num(line, key, value)?,
            "clients" => self.clients = num(line, key, value)?,
            "hidden_units" => self.hidden_units = num(line, key, value)?,
            "signature_groups" => self.signature_groups = num(line, key, value)?,
            "select_n" => self.select_n = num(line, key, value)?,
            "lambda" => self.lambda = num(line, key, value)?,
            "alpha" => self.alpha = num(line, key, value)?,
            "prefilter" => {
                self.prefilter = match value {
                    "auto" => None,
                    _ => Some(num(line, key, value)?),
                }
            }
            "freshness_mode" => {
                self.freshness_mode = match value {
                    "product" => FreshnessMode::Product,
                    "tie-break" => FreshnessMode::TieBreak,
                    "ignore" => FreshnessMode::Ignore,
                    _ => {
                        return Err(invalid(
                            line,
                            key,
                            "expected `product`, `tie-break`, or `ignore`",
                        ))
                    }
                }
            }
            "partition" => {
                self.partition = if value == "iid" {
                    PartitionMode::Iid
                } else if let Some(beta) = value.strip_prefix("dirichlet:") {
                    PartitionMode::Dirichlet {
                        beta: num(line, key, beta)?,
                    }
                } else {
                    return Err(invalid(line, key, "expected `iid` or `dirichlet:<beta>`"));
                }
            }
            "seed" => self.seed = num(line, key, value)?,
            "max_global_iters" => self.max_global_iters = num(line, key, value)?,
            "patience" => self.patience = num(line, key, value)?,
            "local_epochs" => self.local_epochs = num(line, key, value)?,
            "lr" => self.lr = num(line, key, value)?,
            "batch_size" => self.batch_size = num(line, key, value)?,
            "target_accuracy" => {
                self.target_accuracy = match value {
                    "none" => None,
                    _ => Some(num(line, key, value)?),
                }
            }
            "speed_factors" => {
                self.speed_factors = if value == "auto" {
                    SpeedFactors::Auto
                } else {
                    let factors = value
                        .split(',')
                        .map(|v| num(line, key, v.trim()))
                        .collect::<Result<Vec<f64>, _>>()?;
                    SpeedFactors::Explicit(factors)
                }
            }
            "base_epoch_time" => self.base_epoch_time = num(line, key, value)?,
            "eval_cost_per_sample" => self.eval_cost_per_sample = num(line, key, value)?,
            "registry_query_cost" => self.registry_query_cost = num(line, key, value)?,
            "policy" => {
                self.policy = Policy::from_name(value)
                    .ok_or_else(|| invalid(line, key, format!("unknown policy `{value}`")))?
            }
            "trace" => {
                self.trace = match value {
                    "true" => true,
                    "false" => false,
                    _ => return Err(invalid(line, key, "expected `true` or `false`")),
                }
            }
            "out_dir" => self.out_dir = value.to_string(),
            _ => return Err(invalid(line, key, "unknown key")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let fail = |field: &str, message: String| {
            Err(ConfigError::Semantic {
                field: field.to_string(),
                message,
            })
        };
        if self.samples < 10 * self.clients.max(1) {
            return fail(
                "samples",
                format!(
                    "need at least {} samples for {} clients",
                    10 * self.clients.max(1),
                    self.clients
                ),
            );
        }
        if self.clients == 0 {
            return fail("clients", "must be at least 1".into());
        }
        if self.hidden_units == 0 {
            return fail("hidden_units", "must be at least 1".into());
        }
        if self.signature_groups == 0 || self.signature_groups > self.hidden_units {
            return fail(
                "signature_groups",
                format!("must be in [1, hidden_units={}]", self.hidden_units),
            );
        }
        if self.select_n == 0 {
            return fail("select_n", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(
                "lambda",
                format!("must be within [0, 1], got {}", self.lambda),
            );
        }
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return fail("alpha", format!("must be positive, got {}", self.alpha));
        }
        if let Some(p) = self.prefilter {
            let (_, n2) = crate::selection::SelectionConfig {
                select_n: self.select_n,
                lambda: self.lambda,
                alpha: self.alpha,
                prefilter: self.prefilter,
                freshness_mode: self.freshness_mode,
            }
            .quotas();
            if p < n2 {
                return fail("prefilter", format!("must be at least N2 = {n2}, got {p}"));
            }
        }
        if let PartitionMode::Dirichlet { beta } = self.partition {
            if beta <= 0.0 || !beta.is_finite() {
                return fail(
                    "partition",
                    format!("dirichlet beta must be positive, got {beta}"),
                );
            }
        }
        if self.max_global_iters == 0 {
            return fail("max_global_iters", "must be at least 1".into());
        }
        if self.patience == 0 {
            return fail("patience", "must be at least 1".into());
        }
        if self.local_epochs == 0 {
            return fail("local_epochs", "must be at least 1".into());
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return fail("lr", format!("must be non-negative, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return fail("target_accuracy", format!("must be within [0, 1], got {t}"));
            }
        }
        if let SpeedFactors::Explicit(factors) = &self.speed_factors {
            if factors.len() != self.clients {
                return fail(
                    "speed_factors",
                    format!("expected {} entries, got {}", self.clients, factors.len()),
                );
            }
            if factors.iter().any(|&f| f <= 0.0 || !f.is_finite()) {
                return fail("speed_factors", "every factor must be positive".into());
            }
        }
        if self.base_epoch_time <= 0.0 || !self.base_epoch_time.is_finite() {
            return fail("base_epoch_time", "must be positive".into());
        }
        if self.eval_cost_per_sample < 0.0 || !self.eval_cost_per_sample.is_finite() {
            return fail("eval_cost_per_sample", "must be non-negative".into());
        }
        if self.registry_query_cost < 0.0 || !self.registry_query_cost.is_finite() {
            return fail("registry_query_cost", "must be non-negative".into());
        }
        Ok(())
    }

    /// The fully resolved configuration in the flat format.
    pub fn effective_text(&self) -> String {
        let mut out = String::new();
        let task = match self.task {
            Task::ToyDigits => "toy-digits",
            Task::Synthetic => "synthetic",
        };
        let _ = writeln!(out, "task = {task}");
        let _ = writeln!(out, "samples = {}", self.samples);
        let _ = writeln!(out, "clients = {}", self.clients);
        let _ = writeln!(out, "hidden_units = {}", self.hidden_units);
        let _ = writeln!(out, "signature_groups = {}", self.signature_groups);
        let _ = writeln!(out, "select_n = {}", self.select_n);
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "alpha = {}", self.alpha);
        match self.prefilter {
            Some(p) => {
                let _ = writeln!(out, "prefilter = {p}");
            }
            None => {
                let _ = writeln!(out, "prefilter = auto");
            }
        }
        let mode = match self.freshness_mode {
            FreshnessMode::Product => "product",
            FreshnessMode::TieBreak => "tie-break",
            FreshnessMode::Ignore => "ignore",
        };
        let _ = writeln!(out, "freshness_mode = {mode}");
        match self.partition {
            PartitionMode::Iid => {
                let _ = writeln!(out, "partition = iid");
            }
            PartitionMode::Dirichlet { beta } => {
                let _ = writeln!(out, "partition = dirichlet:{beta}");
            }
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "max_global_iters = {}", self.max_global_iters);
        let _ = writeln!(out, "patience = {}", self.patience);
        let _ = writeln!(out, "local_epochs = {}", self.local_epochs);
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        match self.target_accuracy {
            Some(t) => {
                let _ = writeln!(out, "target_accuracy = {t}");
            }
            None => {
                let _ = writeln!(out, "target_accuracy = none");
            }
        }
        match &self.speed_factors {
            SpeedFactors::Auto => {
                let _ = writeln!(out, "speed_factors = auto");
            }
            SpeedFactors::Explicit(factors) => {
                let rendered: Vec<String> = factors.iter().map(|f| f.to_string()).collect();
                let _ = writeln!(out, "speed_factors = {}", rendered.join(","));
            }
        }
        let _ = writeln!(out, "base_epoch_time = {}", self.base_epoch_time);
        let _ = writeln!(out, "eval_cost_per_sample = {}", self.eval_cost_per_sample);
        let _ = writeln!(out, "registry_query_cost = {}", self.registry_query_cost);
        let _ = writeln!(out, "policy = {}", self.policy.name());
        let _ = writeln!(out, "trace = {}", self.trace);
        let _ = writeln!(out, "out_dir = {}", self.out_dir);
        out
    }
}
