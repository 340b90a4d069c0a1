use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::{CrossoverParams, MutationParams};
use crate::metrics::SelectionStrategy;
use crate::oracles::{Decode, ProviderConfig, ScorerRuntime};
use crate::population::DnsParams;

/// A configuration value failed validation; `key` is its dotted path.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid value for `{key}`: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    /// Pass rate at or above which a task is made harder.
    pub threshold: f64,
    pub novel_probability: f64,
    pub max_reflections: u32,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            novel_probability: 0.5,
            max_reflections: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub scientist: ProviderConfig,
    pub judge: ProviderConfig,
    pub embedder: ProviderConfig,
    pub subject: ProviderConfig,
    pub reward: ProviderConfig,
    pub embedding_dim: usize,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            scientist: ProviderConfig::default(),
            judge: ProviderConfig::default(),
            embedder: ProviderConfig::default(),
            subject: ProviderConfig::default(),
            reward: ProviderConfig::default(),
            embedding_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn new(name: &str, rows: usize, cols: usize) -> Self {
        Self {
            name: name.to_string(),
            rows,
            cols,
        }
    }
}

/// The desk-scale world: genome layout, seed genomes, and the parameters of
/// the synthetic providers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub tensors: Vec<TensorShape>,
    pub seed_models: usize,
    /// Std of base-genome entries.
    pub base_scale: f64,
    /// Std of each seed's task-vector entries.
    pub seed_scale: f64,
    /// Threshold of the synthetic seed probes.
    pub probe_threshold: f64,
    /// Threshold change of a harder/easier probe variant.
    pub probe_step: f64,
    /// Parameter norm above which the synthetic judge calls a model gibberish.
    pub gibberish_norm_limit: f64,
    /// Neighbour similarity at which the synthetic judge calls a task a duplicate.
    pub novelty_cutoff: f64,
    /// JSON Lines file of seed tasks; synthetic probes are generated when unset.
    pub seed_task_file: Option<PathBuf>,
    /// Directory of prompt overrides, one `<kind>.txt` per prompt.
    pub prompts_dir: Option<PathBuf>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            tensors: vec![
                TensorShape::new("attn", 6, 6),
                TensorShape::new("mlp", 6, 8),
                TensorShape::new("norm", 1, 6),
            ],
            seed_models: 3,
            base_scale: 0.1,
            seed_scale: 1.0,
            probe_threshold: 0.0,
            probe_step: 2.0,
            gibberish_norm_limit: 40.0,
            novelty_cutoff: 0.99,
            seed_task_file: None,
            prompts_dir: None,
        }
    }
}

impl WorldConfig {
    pub fn dimension(&self) -> usize {
        self.tensors.iter().map(|t| t.rows * t.cols).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generations: u64,
    pub active_models: usize,
    pub offspring_per_gen: usize,
    pub active_tasks: usize,
    pub task_interval: u64,
    pub n_gen_tasks: usize,
    pub seed_tasks: usize,
    pub init_tasks: usize,
    pub taskforce_size: usize,
    pub taskforce_strategy: SelectionStrategy,
    pub run_seed: u64,
    pub crossover: CrossoverParams,
    pub mutation: MutationParams,
    pub dns: DnsParams,
    pub task: TaskParams,
    pub providers: ProvidersConfig,
    pub decode: Decode,
    pub sandbox: ScorerRuntime,
    pub world: WorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            generations: 50,
            active_models: 16,
            offspring_per_gen: 8,
            active_tasks: 250,
            task_interval: 5,
            n_gen_tasks: 40,
            seed_tasks: 30,
            init_tasks: 20,
            taskforce_size: 8,
            taskforce_strategy: SelectionStrategy::Coverage,
            run_seed: 0,
            crossover: CrossoverParams::default(),
            mutation: MutationParams::default(),
            dns: DnsParams::default(),
            task: TaskParams::default(),
            providers: ProvidersConfig::default(),
            decode: Decode::default(),
            sandbox: ScorerRuntime::default(),
            world: WorldConfig::default(),
        }
    }
}

fn check(ok: bool, key: &str, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(key, message))
    }
}

fn unit_interval(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check(self.generations >= 1, "generations", "must be >= 1")?;
        check(self.active_models >= 3, "active_models", "must be >= 3")?;
        check(self.offspring_per_gen >= 1, "offspring_per_gen", "must be >= 1")?;
        check(self.active_tasks >= 1, "active_tasks", "must be >= 1")?;
        check(self.task_interval >= 1, "task_interval", "must be >= 1")?;
        check(self.taskforce_size >= 1, "taskforce_size", "must be >= 1")?;
        check(self.run_seed <= i64::MAX as u64, "run_seed", "must be <= 2^63 - 1")?;
        check(
            self.crossover.sigma > 0.0 && self.crossover.sigma.is_finite(),
            "crossover.sigma",
            "must be > 0",
        )?;
        check(self.crossover.mu.is_finite(), "crossover.mu", "must be finite")?;
        check(
            self.crossover.resample_epsilon > 0.0,
            "crossover.resample_epsilon",
            "must be > 0",
        )?;
        check(self.mutation.k >= 1, "mutation.k", "must be >= 1")?;
        check(
            self.mutation.sigma >= 0.0 && self.mutation.sigma.is_finite(),
            "mutation.sigma",
            "must be >= 0",
        )?;
        check(unit_interval(self.mutation.rate), "mutation.rate", "must lie in [0, 1]")?;
        check(self.dns.k >= 1, "dns.k", "must be >= 1")?;
        check(self.dns.alpha_dom.is_finite(), "dns.alpha_dom", "must be finite")?;
        check(unit_interval(self.task.threshold), "task.threshold", "must lie in [0, 1]")?;
        check(
            unit_interval(self.task.novel_probability),
            "task.novel_probability",
            "must lie in [0, 1]",
        )?;
        for (role, p) in [
            ("scientist", &self.providers.scientist),
            ("judge", &self.providers.judge),
            ("embedder", &self.providers.embedder),
            ("subject", &self.providers.subject),
            ("reward", &self.providers.reward),
        ] {
            p.validate(role)
                .map_err(|key| ConfigError::new(key, "missing or out of range"))?;
            check(
                p.seed <= i64::MAX as u64,
                &format!("providers.{role}.seed"),
                "must be <= 2^63 - 1",
            )?;
        }
        check(
            self.providers.embedding_dim >= 1,
            "providers.embedding_dim",
            "must be >= 1",
        )?;
        check(self.decode.max_tokens >= 1, "decode.max_tokens", "must be >= 1")?;
        check(
            self.sandbox.wall_clock_secs > 0.0 && self.sandbox.wall_clock_secs.is_finite(),
            "sandbox.wall_clock_secs",
            "must be > 0",
        )?;
        check(!self.world.tensors.is_empty(), "world.tensors", "needs at least one tensor")?;
        for t in &self.world.tensors {
            check(t.rows >= 1 && t.cols >= 1, "world.tensors", "shapes must be non-empty")?;
        }
        let mut names: Vec<&str> = self.world.tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        check(
            names.len() == self.world.tensors.len(),
            "world.tensors",
            "tensor names must be unique",
        )?;
        check(self.world.seed_models >= 3, "world.seed_models", "must be >= 3")?;
        check(
            self.world.base_scale >= 0.0 && self.world.seed_scale > 0.0,
            "world.seed_scale",
            "scales must be positive",
        )?;
        check(
            self.world.probe_step > 0.0 && self.world.probe_step.is_finite(),
            "world.probe_step",
            "must be > 0",
        )?;
        check(
            self.world.seed_task_file.is_some() || self.seed_tasks >= 1,
            "seed_tasks",
            "must be >= 1 without a seed task file",
        )?;
        Ok(())
    }

    /// Stable digest of the configuration, used to tie run artifacts to it.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}
