//! Seed genomes, seed tasks and provider construction.

use std::collections::BTreeMap;
use std::fs;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::config::RunConfig;
use super::EngineError;
use crate::genome::{GenomeId, Matrix, ModelGenome};
use crate::oracles::synthetic::{axes_signature, HashReward, ProbeScientist, RuleJudge, StatsSubject};
use crate::oracles::{
    normalize, Backend, Embedder, HashEmbedder, JudgeBackend, JudgeClient, PromptSet, Providers,
    RewardModel, Scientist, ScorerSpec, Subject, SyntheticProbe,
};
use crate::taskspace::SeedTask;

fn random_genome<R: Rng + ?Sized>(config: &RunConfig, id: GenomeId, scale: f64, rng: &mut R) -> ModelGenome {
    let normal = Normal::new(0.0, scale.max(0.0)).expect("finite scale");
    let tensors: BTreeMap<String, Matrix> = config
        .world
        .tensors
        .iter()
        .map(|t| {
            let m = Matrix::from_fn(t.rows, t.cols, |_, _| normal.sample(rng));
            (t.name.clone(), m)
        })
        .collect();
    ModelGenome::new(id, tensors)
}

/// Base genome (id 0) and `seed_models` distinct seeds (ids 1..), each the
/// base plus its own Gaussian task vector.
pub fn seed_genomes<R: Rng + ?Sized>(config: &RunConfig, rng: &mut R) -> (ModelGenome, Vec<ModelGenome>) {
    let mut base = random_genome(config, GenomeId(0), config.world.base_scale, rng);
    base.round_to_storage();
    let seeds = (1..=config.world.seed_models as u64)
        .map(|i| {
            let delta = random_genome(config, GenomeId(i), config.world.seed_scale, rng);
            let tensors = base
                .tensors
                .iter()
                .map(|(name, b)| (name.clone(), b + &delta.tensors[name]))
                .collect();
            let mut g = ModelGenome::new(GenomeId(i), tensors);
            g.round_to_storage();
            g
        })
        .collect();
    (base, seeds)
}

pub fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        if normalize(&mut v) > 1e-12 {
            return v;
        }
    }
}

/// A probe task definition with a readable description.
pub fn probe_seed_task(name: &str, probe: SyntheticProbe, difficulty: u8) -> SeedTask {
    SeedTask {
        name: name.to_string(),
        description: format!(
            "Synthetic seed probe {name}: parameters must align with axes {} past threshold {:.4}.",
            axes_signature(&probe.direction),
            probe.threshold
        ),
        capability: "parameter alignment".into(),
        difficulty,
        instruction: format!("Respond to probe {name}."),
        scorer: ScorerSpec::SyntheticProbe(probe),
    }
}

/// Seed tasks from the configured file, or `seed_tasks` random probes.
pub fn seed_tasks<R: Rng + ?Sized>(config: &RunConfig, dim: usize, rng: &mut R) -> Result<Vec<SeedTask>, EngineError> {
    if let Some(path) = &config.world.seed_task_file {
        let text = fs::read_to_string(path)
            .map_err(|e| EngineError::Io(format!("{}: {e}", path.display())))?;
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let task: SeedTask = serde_json::from_str(line).map_err(|e| {
                EngineError::Config(super::ConfigError::new(
                    "world.seed_task_file",
                    format!("line {}: {e}", n + 1),
                ))
            })?;
            task.scorer.validate().map_err(|e| {
                EngineError::Config(super::ConfigError::new(
                    "world.seed_task_file",
                    format!("line {}: {e}", n + 1),
                ))
            })?;
            out.push(task);
        }
        if out.is_empty() {
            return Err(EngineError::Config(super::ConfigError::new(
                "world.seed_task_file",
                "contains no tasks",
            )));
        }
        return Ok(out);
    }
    Ok((0..config.seed_tasks)
        .map(|i| {
            let probe = SyntheticProbe {
                direction: random_direction(dim, rng),
                threshold: config.world.probe_threshold,
                noise_seed: i as u64,
            };
            probe_seed_task(&format!("seed_probe_{i}"), probe, 3)
        })
        .collect())
}

#[cfg(feature = "http")]
fn http_client(cfg: &crate::oracles::ProviderConfig) -> Result<crate::oracles::http::ChatClient, EngineError> {
    crate::oracles::http::ChatClient::new(cfg).map_err(EngineError::Provider)
}

#[cfg(not(feature = "http"))]
fn http_unavailable<T>(role: &str) -> Result<T, EngineError> {
    Err(EngineError::Config(super::ConfigError::new(
        format!("providers.{role}.backend"),
        "this build has no http support",
    )))
}

/// Instantiates every provider role from the configuration.
pub fn build_providers(config: &RunConfig) -> Result<Providers, EngineError> {
    let p = &config.providers;
    let dim = config.world.dimension();
    let mut prompts = PromptSet::default();
    if let Some(dir) = &config.world.prompts_dir {
        prompts = PromptSet::load_dir(dir).map_err(|e| EngineError::Io(format!("{}: {e}", dir.display())))?;
    }
    let prompts = Arc::new(prompts);

    let scientist: Arc<dyn Scientist> = match p.scientist.backend {
        Backend::Synthetic => Arc::new(ProbeScientist::new(dim, p.scientist.seed, config.world.probe_step)),
        #[cfg(feature = "http")]
        Backend::Http => Arc::new(crate::oracles::http::HttpScientist {
            client: http_client(&p.scientist)?,
            decode: crate::oracles::Decode {
                max_tokens: 4096,
                temperature: 0.7,
                top_p: 1.0,
            },
        }),
        #[cfg(not(feature = "http"))]
        Backend::Http => return http_unavailable("scientist"),
    };
    let judge: Arc<dyn JudgeBackend> = match p.judge.backend {
        Backend::Synthetic => Arc::new(RuleJudge {
            norm_limit: config.world.gibberish_norm_limit,
            similarity_cutoff: config.world.novelty_cutoff,
        }),
        #[cfg(feature = "http")]
        Backend::Http => Arc::new(crate::oracles::http::HttpJudge {
            client: http_client(&p.judge)?,
            decode: crate::oracles::Decode {
                max_tokens: 1024,
                ..config.decode
            },
        }),
        #[cfg(not(feature = "http"))]
        Backend::Http => return http_unavailable("judge"),
    };
    let embedder: Arc<dyn Embedder> = match p.embedder.backend {
        Backend::Synthetic => Arc::new(HashEmbedder::new(p.embedding_dim, p.embedder.seed)),
        #[cfg(feature = "http")]
        Backend::Http => Arc::new(crate::oracles::http::HttpEmbedder {
            client: http_client(&p.embedder)?,
            dimension: p.embedding_dim,
        }),
        #[cfg(not(feature = "http"))]
        Backend::Http => return http_unavailable("embedder"),
    };
    let subject: Arc<dyn Subject> = match p.subject.backend {
        Backend::Synthetic => Arc::new(StatsSubject),
        #[cfg(feature = "http")]
        Backend::Http => Arc::new(crate::oracles::http::HttpSubject {
            client: http_client(&p.subject)?,
        }),
        #[cfg(not(feature = "http"))]
        Backend::Http => return http_unavailable("subject"),
    };
    let reward: Arc<dyn RewardModel> = match p.reward.backend {
        Backend::Synthetic => Arc::new(HashReward { seed: p.reward.seed }),
        #[cfg(feature = "http")]
        Backend::Http => Arc::new(crate::oracles::http::HttpReward {
            client: http_client(&p.reward)?,
            prompts: prompts.clone(),
            decode: config.decode,
        }),
        #[cfg(not(feature = "http"))]
        Backend::Http => return http_unavailable("reward"),
    };
    Ok(Providers {
        scientist,
        scientist_retries: p.scientist.retry_budget,
        judge: JudgeClient::new(judge, p.judge.retry_budget),
        embedder,
        subject,
        reward: Some(reward),
        prompts,
        decode: config.decode,
        scorer: config.sandbox.clone(),
    })
}

/// `n` fresh probes drawn from the seed-probe distribution, for measuring
/// generalization outside the evolved task archive.
pub fn holdout_probes(config: &RunConfig, n: usize, seed: u64) -> Vec<SyntheticProbe> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::oracles::mix_key(seed, 0x401d));
    let dim = config.world.dimension();
    (0..n)
        .map(|i| SyntheticProbe {
            direction: random_direction(dim, &mut rng),
            threshold: config.world.probe_threshold,
            noise_seed: i as u64,
        })
        .collect()
}

/// Fraction of probes solved by at least one genome.
pub fn probe_coverage(genomes: &[&ModelGenome], probes: &[SyntheticProbe]) -> f64 {
    if probes.is_empty() {
        return 0.0;
    }
    let solved = probes
        .iter()
        .filter(|p| {
            genomes
                .iter()
                .any(|g| g.project(&p.direction).is_some_and(|v| v >= p.threshold))
        })
        .count();
    solved as f64 / probes.len() as f64
}
