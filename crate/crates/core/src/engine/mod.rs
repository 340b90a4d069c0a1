//! The coevolution loop: model generations, periodic task phases,
//! re-evaluation, historical snapshots and final task-force selection.

mod config;
pub mod world;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use config::{ConfigError, ProvidersConfig, RunConfig, TaskParams, TensorShape, WorldConfig};

use crate::genome::{crossover, mutate_svd, GenomeError, GenomeId, ModelGenome, Operator};
use crate::metrics::{select_task_force, vendi_score, MetricsError, ResponseMatrix, TaskForce};
use crate::oracles::{evaluate_task, mix_key, PromptKind, ProviderError, Providers};
use crate::population::{
    compute_skill_vector, dns_archive_update, gibberish_gate, selection_weights, GateOutcome,
    PopulationError, ScoredSolution, SkillVector, TaskScore,
};
use crate::taskspace::{
    apply_replacement, classify_adaptation, commit_tasks, impossible_gate, novelty_gate,
    propose_initial_task, propose_task, sample_references, validate_task, AdaptationKind,
    CandidateTask, ImpossibleOutcome, TaskArchives, TaskError, TaskId, TaskRecord,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Task(TaskError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("inconsistent state: {0}")]
    Inconsistent(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<TaskError> for EngineError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Provider(p) => EngineError::Provider(p),
            other => EngineError::Task(other),
        }
    }
}

/// Independent random streams; every draw is keyed by
/// (run seed, generation, stream, index) so results do not depend on
/// scheduling and a resumed run continues identically.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Init = 1,
    Offspring = 2,
    Gate = 3,
    TaskPropose = 4,
    TaskValidate = 5,
    TaskForce = 6,
}

fn stream_key(seed: u64, generation: u64, stream: Stream, index: u64) -> u64 {
    mix_key(mix_key(mix_key(seed, generation), stream as u64), index)
}

fn stream_rng(seed: u64, generation: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, generation, stream, index))
}

#[cfg(feature = "parallel")]
fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(usize, &T) -> U,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageNode {
    pub parents: Vec<GenomeId>,
    pub operator: Option<Operator>,
    pub weights: Option<(f64, f64)>,
    pub mutated: Vec<String>,
    pub generation_born: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalSnapshot {
    pub generation: u64,
    pub members: Vec<GenomeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskPhaseRecord {
    pub proposed: usize,
    pub accepted: usize,
    pub harder: usize,
    pub easier: usize,
    pub novel: usize,
    pub rejected_unparseable: usize,
    pub rejected_novelty: usize,
    pub rejected_validation: usize,
    pub replaced_impossible: usize,
    pub vendi_active: f64,
    pub vendi_global: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u64,
    /// Task epoch the generation's models were evaluated on.
    pub task_epoch: u64,
    pub offspring: usize,
    pub discarded_gibberish: usize,
    pub discarded_invalid: usize,
    pub new_models: usize,
    pub archive_size: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub active_coverage: f64,
    pub active_tasks: usize,
    pub global_tasks: usize,
    pub task_phase: Option<TaskPhaseRecord>,
}

/// Audit record of one provider exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub generation: u64,
    pub role: String,
    pub subject: String,
    pub text: String,
}

/// Complete state between generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveState {
    pub run_seed: u64,
    /// Number of completed generations.
    pub generation: u64,
    pub next_genome_id: u64,
    #[serde(skip)]
    pub base: ModelGenome,
    /// Genomes of the active archive and of every historical snapshot.
    #[serde(skip)]
    pub genomes: BTreeMap<GenomeId, ModelGenome>,
    pub archive: Vec<ScoredSolution>,
    pub tasks: TaskArchives,
    pub historical: Vec<HistoricalSnapshot>,
    pub lineage: BTreeMap<GenomeId, LineageNode>,
    pub history: Vec<GenerationRecord>,
}

impl ArchiveState {
    pub fn genome(&self, id: GenomeId) -> Option<&ModelGenome> {
        self.genomes.get(&id)
    }

    /// Ids in the historical snapshots and the active archive, ascending.
    pub fn candidate_pool(&self) -> Vec<GenomeId> {
        let mut ids: BTreeSet<GenomeId> = self.archive.iter().map(|s| s.genome_id).collect();
        for h in &self.historical {
            ids.extend(h.members.iter().copied());
        }
        ids.into_iter().collect()
    }

    /// Seed genomes an id descends from, following the lineage DAG.
    pub fn ancestry(&self, id: GenomeId) -> Result<Vec<GenomeId>, EngineError> {
        let mut stack = vec![id];
        let mut seen = BTreeSet::new();
        let mut roots = BTreeSet::new();
        while let Some(g) = stack.pop() {
            if !seen.insert(g) {
                continue;
            }
            let node = self
                .lineage
                .get(&g)
                .ok_or_else(|| EngineError::Inconsistent(format!("{g} missing from lineage")))?;
            if node.parents.is_empty() {
                roots.insert(g);
            }
            for &p in &node.parents {
                if p >= g {
                    return Err(EngineError::Inconsistent(format!("{g} has non-older parent {p}")));
                }
                stack.push(p);
            }
        }
        Ok(roots.into_iter().collect())
    }

    /// Checks the structural invariants of the state.
    pub fn check(&self, config: &RunConfig) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Inconsistent(m));
        if self.archive.len() > config.active_models {
            return bad(format!("archive holds {} > {}", self.archive.len(), config.active_models));
        }
        self.tasks.check().map_err(EngineError::Inconsistent)?;
        for s in &self.archive {
            if s.skill.task_epoch != self.tasks.epoch || s.skill.len() != self.tasks.active.len() {
                return bad(format!("{} scored on a stale task set", s.genome_id));
            }
        }
        for id in self.candidate_pool() {
            if !self.genomes.contains_key(&id) {
                return bad(format!("{id} has no stored genome"));
            }
            self.ancestry(id)?;
        }
        for h in &self.historical {
            if h.generation % config.task_interval != 0 {
                return bad(format!("historical snapshot at generation {}", h.generation));
            }
        }
        Ok(())
    }
}

fn evaluate_genome(
    genome: &ModelGenome,
    tasks: &[&TaskRecord],
    epoch: u64,
    providers: &Providers,
) -> Result<SkillVector, EngineError> {
    let scores = tasks
        .iter()
        .map(|t| evaluate_task(genome, &t.instruction_template, &t.scorer, providers))
        .collect::<Result<Vec<TaskScore>, _>>()?;
    Ok(compute_skill_vector(&scores, tasks.len(), epoch)?)
}

fn score_all(
    genomes: &[&ModelGenome],
    tasks: &[&TaskRecord],
    epoch: u64,
    providers: &Providers,
) -> Result<Vec<ScoredSolution>, EngineError> {
    par_map(genomes, |_, g| {
        let skill = evaluate_genome(g, tasks, epoch, providers)?;
        Ok(ScoredSolution::new(g.id, skill)?)
    })
    .into_iter()
    .collect()
}

fn lineage_node(g: &ModelGenome) -> LineageNode {
    match &g.lineage {
        Some(l) => LineageNode {
            parents: if l.parents.0 == l.parents.1 {
                vec![l.parents.0]
            } else {
                vec![l.parents.0, l.parents.1]
            },
            operator: Some(l.operator),
            weights: l.weights,
            mutated: l.mutated.clone(),
            generation_born: g.generation_born,
        },
        None => LineageNode {
            parents: Vec::new(),
            operator: None,
            weights: None,
            mutated: Vec::new(),
            generation_born: g.generation_born,
        },
    }
}

fn summarize_archive(archive: &[ScoredSolution]) -> (f64, f64, f64) {
    if archive.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let best = archive.iter().map(|s| s.fitness).fold(f64::NEG_INFINITY, f64::max);
    let mean = archive.iter().map(|s| s.fitness).sum::<f64>() / archive.len() as f64;
    let n = archive[0].skill.len();
    let covered = (0..n).filter(|&j| archive.iter().any(|s| s.skill.bits[j])).count();
    let coverage = if n == 0 { 0.0 } else { covered as f64 / n as f64 };
    (best, mean, coverage)
}

/// Outputs of one generation beyond the new state.
#[derive(Debug, Clone, Default)]
pub struct GenerationLog {
    pub transcripts: Vec<Transcript>,
}

struct Offspring {
    genome: ModelGenome,
}

/// Produces the generation's offspring: parent pair, crossover weights and
/// mutation all come from the offspring's own stream.
fn breed(state: &ArchiveState, config: &RunConfig, g: u64) -> Result<(Vec<Offspring>, usize), EngineError> {
    let parents: Vec<&ModelGenome> = state
        .archive
        .iter()
        .map(|s| {
            state
                .genomes
                .get(&s.genome_id)
                .ok_or_else(|| EngineError::Inconsistent(format!("{} has no genome", s.genome_id)))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(config.offspring_per_gen);
    let mut invalid = 0;
    for i in 0..config.offspring_per_gen as u64 {
        let mut rng = stream_rng(state.run_seed, g, Stream::Offspring, i);
        let (a, b) = if parents.len() >= 2 {
            let pick = sample(&mut rng, parents.len(), 2);
            (pick.index(0), pick.index(1))
        } else {
            (0, 0)
        };
        let (w1, w2) = config.crossover.sample_weights(&mut rng);
        let id = GenomeId(state.next_genome_id + i);
        let child = crossover(
            parents[a],
            parents[b],
            &state.base,
            w1,
            w2,
            config.crossover.resample_epsilon,
            id,
        )?;
        let mut child = mutate_svd(&child, &config.mutation, &mut rng)?.genome;
        child.generation_born = g;
        child.round_to_storage();
        if child.check_finite().is_err() {
            invalid += 1;
            continue;
        }
        out.push(Offspring { genome: child });
    }
    Ok((out, invalid))
}

fn gate_samples(
    genome: &ModelGenome,
    tasks: &[&TaskRecord],
    providers: &Providers,
    rng: &mut ChaCha8Rng,
) -> Result<[(String, String); 3], ProviderError> {
    let picks: Vec<usize> = if tasks.len() >= 3 {
        sample(rng, tasks.len(), 3).into_vec()
    } else {
        (0..3).map(|_| rng.random_range(0..tasks.len())).collect()
    };
    let system = providers.prompts.get(PromptKind::EvalSystem);
    let mut out: [(String, String); 3] = Default::default();
    for (slot, &j) in out.iter_mut().zip(&picks) {
        let instruction = tasks[j].instruction_template.clone();
        let answer = providers.subject.answer(genome, system, &instruction, &providers.decode)?;
        *slot = (instruction, answer);
    }
    Ok(out)
}

/// Runs one generation on a copy of `state`; the input is never modified, so
/// a failed generation leaves nothing half-applied.
pub fn run_generation(
    state: &ArchiveState,
    config: &RunConfig,
    providers: &Providers,
) -> Result<(ArchiveState, GenerationLog), EngineError> {
    let g = state.generation + 1;
    let mut log = GenerationLog::default();
    let active = state.tasks.active_records();
    let epoch = state.tasks.epoch;

    let (offspring, discarded_invalid) = breed(state, config, g)?;
    let n_offspring = config.offspring_per_gen;

    // Evaluate and gate offspring in parallel; results keep offspring order.
    type Judged = Result<(ScoredSolution, GateOutcome, Vec<String>), EngineError>;
    let evaluated: Vec<Judged> =
        par_map(&offspring, |_, o| {
            let skill = evaluate_genome(&o.genome, &active, epoch, providers)?;
            let index = o.genome.id.0 - state.next_genome_id;
            let mut rng = stream_rng(state.run_seed, g, Stream::Gate, index);
            let samples = gate_samples(&o.genome, &active, providers, &mut rng)?;
            let (outcome, transcripts) =
                gibberish_gate(o.genome.id, &samples, &providers.judge, &providers.prompts)?;
            Ok((ScoredSolution::new(o.genome.id, skill)?, outcome, transcripts))
        });
    let mut candidates = Vec::new();
    let mut discarded_gibberish = 0;
    for (o, r) in offspring.iter().zip(evaluated) {
        let (solution, outcome, transcripts) = r?;
        for text in transcripts {
            log.transcripts.push(Transcript {
                generation: g,
                role: "gibberish_judge".into(),
                subject: o.genome.id.to_string(),
                text,
            });
        }
        if outcome.keeps() {
            candidates.push(solution);
        } else {
            discarded_gibberish += 1;
        }
    }

    let pool: Vec<ScoredSolution> = state.archive.iter().chain(&candidates).cloned().collect();
    let weights = selection_weights(&pool, &config.dns);
    let archive = dns_archive_update(
        &state.archive,
        &candidates,
        config.active_models,
        &weights,
        &config.dns,
    )?;

    let mut next = state.clone();
    next.generation = g;
    next.next_genome_id = state.next_genome_id + n_offspring as u64;
    let old: BTreeSet<GenomeId> = state.archive.iter().map(|s| s.genome_id).collect();
    let mut new_models = 0;
    for s in &archive {
        if !old.contains(&s.genome_id) {
            new_models += 1;
            let child = offspring
                .iter()
                .find(|o| o.genome.id == s.genome_id)
                .expect("new archive member is an offspring");
            next.lineage.insert(child.genome.id, lineage_node(&child.genome));
            next.genomes.insert(child.genome.id, child.genome.clone());
        }
    }
    next.archive = archive;
    let (best_fitness, mean_fitness, active_coverage) = summarize_archive(&next.archive);

    let mut task_phase = None;
    if g.is_multiple_of(config.task_interval) {
        next.historical.push(HistoricalSnapshot {
            generation: g,
            members: next.archive.iter().map(|s| s.genome_id).collect(),
        });
        let bits: Vec<Vec<bool>> = next.archive.iter().map(|s| s.skill.bits.clone()).collect();
        let (tasks, record) = task_phase_step(&next.tasks, &bits, g, config, providers, &mut log)?;
        next.tasks = tasks;
        reevaluate_archive(&mut next, providers)?;
        task_phase = Some(record);
    }
    prune_genomes(&mut next);

    next.history.push(GenerationRecord {
        generation: g,
        task_epoch: epoch,
        offspring: n_offspring,
        discarded_gibberish,
        discarded_invalid,
        new_models,
        archive_size: next.archive.len(),
        best_fitness,
        mean_fitness,
        active_coverage,
        active_tasks: state.tasks.active.len(),
        global_tasks: next.tasks.global.len(),
        task_phase,
    });
    Ok((next, log))
}

/// Drops stored genomes that are neither archived nor in a snapshot.
fn prune_genomes(state: &mut ArchiveState) {
    let keep: BTreeSet<GenomeId> = state.candidate_pool().into_iter().collect();
    state.genomes.retain(|id, _| keep.contains(id));
}

/// Re-scores every archived model on the current active task set.
pub fn reevaluate_archive(state: &mut ArchiveState, providers: &Providers) -> Result<(), EngineError> {
    let active = state.tasks.active_records();
    let genomes: Vec<&ModelGenome> = state
        .archive
        .iter()
        .map(|s| &state.genomes[&s.genome_id])
        .collect();
    let scored = score_all(&genomes, &active, state.tasks.epoch, providers)?;
    state.archive = scored;
    Ok(())
}

fn count_kind(record: &mut TaskPhaseRecord, kind: AdaptationKind) {
    match kind {
        AdaptationKind::Harder => record.harder += 1,
        AdaptationKind::Easier => record.easier += 1,
        AdaptationKind::Novel | AdaptationKind::Seed => record.novel += 1,
    }
}

/// Sequentially gates and validates candidates against the global archive
/// plus the candidates already accepted in this batch. Returns records with
/// consecutive ids starting at `tasks.next_id()`.
#[allow(clippy::too_many_arguments)]
fn admit_candidates(
    tasks: &TaskArchives,
    candidates: Vec<(u64, CandidateTask)>,
    g: u64,
    seed: u64,
    config: &RunConfig,
    providers: &Providers,
    record: &mut TaskPhaseRecord,
    log: &mut GenerationLog,
) -> Result<Vec<TaskRecord>, EngineError> {
    let dim = providers.embedder.dimension();
    let mut index = tasks.embedding_index(dim)?;
    let mut accepted: Vec<TaskRecord> = Vec::new();
    let epoch = tasks.epoch + 1;
    for (i, candidate) in candidates {
        for text in &candidate.transcripts {
            log.transcripts.push(Transcript {
                generation: g,
                role: "scientist".into(),
                subject: candidate.name.clone(),
                text: text.clone(),
            });
        }
        let embedding = providers.embedder.embed(&candidate.embedding_text(providers))?;
        let lookup = |id: TaskId| -> Option<Value> {
            let n = tasks.global.len() as u64;
            if id.0 < n {
                tasks.get(id).map(TaskRecord::summary)
            } else {
                accepted.get((id.0 - n) as usize).map(TaskRecord::summary)
            }
        };
        let verdict = novelty_gate(&candidate, &embedding, &index, &lookup, providers)?;
        for text in verdict.transcripts {
            log.transcripts.push(Transcript {
                generation: g,
                role: "novelty_judge".into(),
                subject: candidate.name.clone(),
                text,
            });
        }
        if !verdict.accepted {
            record.rejected_novelty += 1;
            continue;
        }
        let before = candidate.embedding_text(providers);
        let key = stream_key(seed, g, Stream::TaskValidate, i);
        let validated = match validate_task(candidate, providers, config.task.max_reflections, key) {
            Ok(v) => v,
            Err(TaskError::NotValidated { .. } | TaskError::ScientistUnparseable { .. }) => {
                record.rejected_validation += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let text = validated.embedding_text(providers);
        let embedding = if text == before {
            embedding
        } else {
            providers.embedder.embed(&text)?
        };
        let mut unit = embedding;
        crate::oracles::normalize(&mut unit);
        let id = TaskId(tasks.global.len() as u64 + accepted.len() as u64);
        index.insert(id, &unit).map_err(TaskError::Embedding)?;
        count_kind(record, validated.adaptation_kind);
        accepted.push(validated.into_record(id, unit, epoch));
    }
    record.accepted = accepted.len();
    Ok(accepted)
}

fn vendi_of(records: &[&TaskRecord]) -> Result<f64, EngineError> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let e: Vec<Vec<f64>> = records.iter().map(|r| r.embedding.clone()).collect();
    Ok(vendi_score(&e)?)
}

/// Propose, novelty-gate, validate, filter impossible tasks and commit.
fn task_phase_step(
    tasks: &TaskArchives,
    bits: &[Vec<bool>],
    g: u64,
    config: &RunConfig,
    providers: &Providers,
    log: &mut GenerationLog,
) -> Result<(TaskArchives, TaskPhaseRecord), EngineError> {
    let seed = config.run_seed;
    let mut staged = tasks.clone();
    let mut record = TaskPhaseRecord::default();
    let active = tasks.active.clone();
    let rates: Vec<f64> = (0..active.len())
        .map(|j| {
            let solved = bits.iter().filter(|row| row[j]).count();
            if bits.is_empty() {
                0.0
            } else {
                solved as f64 / bits.len() as f64
            }
        })
        .collect();
    for (&id, &rate) in active.iter().zip(&rates) {
        staged.record_pass_rate(id, g, rate);
    }

    let slots: Vec<u64> = (0..config.n_gen_tasks as u64).collect();
    let proposals = if active.is_empty() {
        Vec::new()
    } else {
        par_map(&slots, |_, &i| {
            let mut rng = stream_rng(seed, g, Stream::TaskPropose, i);
            let j = rng.random_range(0..active.len());
            let parent = tasks.get(active[j]).expect("active task in archive");
            let refs = sample_references(tasks, parent.id, 3, &mut rng);
            let kind = classify_adaptation(
                rates[j],
                config.task.threshold,
                config.task.novel_probability,
                &mut rng,
            );
            let key = rng.random::<u64>();
            propose_task(parent, &refs, kind, providers, config.task.max_reflections, key, &mut rng)
        })
    };
    record.proposed = proposals.len();
    let mut candidates = Vec::new();
    for (i, p) in proposals.into_iter().enumerate() {
        match p {
            Ok(c) => candidates.push((i as u64, c)),
            Err(TaskError::ScientistUnparseable { .. }) => record.rejected_unparseable += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let accepted = admit_candidates(tasks, candidates, g, seed, config, providers, &mut record, log)?;

    for (j, &id) in active.iter().enumerate() {
        let column: Vec<bool> = bits.iter().map(|row| row[j]).collect();
        if let ImpossibleOutcome::Replace { with } = impossible_gate(id, &column, &staged) {
            apply_replacement(&mut staged, id, with)?;
            record.replaced_impossible += 1;
        }
    }
    commit_tasks(&mut staged, accepted)?;
    record.vendi_active = vendi_of(&staged.active_records())?;
    record.vendi_global = vendi_of(&staged.global.iter().collect::<Vec<_>>())?;
    Ok((staged, record))
}

/// Builds seed genomes and the initial task pool, then scores the seeds.
pub fn initialize(config: &RunConfig, providers: &Providers) -> Result<(ArchiveState, GenerationLog), EngineError> {
    config.validate()?;
    let seed = config.run_seed;
    let mut log = GenerationLog::default();
    let mut rng = stream_rng(seed, 0, Stream::Init, 0);
    let (base, seeds) = world::seed_genomes(config, &mut rng);
    let dim = config.world.dimension();

    let mut tasks = TaskArchives::new(config.active_tasks);
    let mut seed_records = Vec::new();
    for (i, s) in world::seed_tasks(config, dim, &mut rng)?.into_iter().enumerate() {
        let c: CandidateTask = s.into();
        let mut e = providers.embedder.embed(&c.embedding_text(providers))?;
        crate::oracles::normalize(&mut e);
        seed_records.push(c.into_record(TaskId(i as u64), e, 1));
    }
    let mut staged = tasks.clone();
    staged.global = seed_records.clone();

    // Initial generated tasks, each proposed from the latest accepted one.
    let mut record = TaskPhaseRecord::default();
    let mut generated: Vec<TaskRecord> = Vec::new();
    for i in 0..config.init_tasks as u64 {
        let mut rng = stream_rng(seed, 0, Stream::TaskPropose, i);
        let previous = generated.last().or(seed_records.last());
        let similar = rng.random_bool(0.5);
        let key = rng.random::<u64>();
        record.proposed += 1;
        let c = match propose_initial_task(previous, similar, providers, config.task.max_reflections, key) {
            Ok(c) => c,
            Err(TaskError::ScientistUnparseable { .. }) => {
                record.rejected_unparseable += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let mut view = staged.clone();
        view.global.extend(generated.iter().cloned());
        let mut batch_record = TaskPhaseRecord::default();
        let mut admitted = admit_candidates(&view, vec![(i, c)], 0, seed, config, providers, &mut batch_record, &mut log)?;
        record.rejected_novelty += batch_record.rejected_novelty;
        record.rejected_validation += batch_record.rejected_validation;
        for r in &mut admitted {
            r.epoch = 1;
            count_kind(&mut record, r.adaptation_kind);
        }
        generated.extend(admitted);
    }
    record.accepted = generated.len();
    commit_tasks(&mut tasks, seed_records.into_iter().chain(generated).collect())?;
    record.vendi_active = vendi_of(&tasks.active_records())?;
    record.vendi_global = record.vendi_active;

    let seed_refs: Vec<&ModelGenome> = seeds.iter().collect();
    let scored = score_all(&seed_refs, &tasks.active_records(), tasks.epoch, providers)?;
    let weights = selection_weights(&scored, &config.dns);
    let archive = dns_archive_update(&[], &scored, config.active_models, &weights, &config.dns)?;

    let mut state = ArchiveState {
        run_seed: seed,
        generation: 0,
        next_genome_id: seeds.len() as u64 + 1,
        base,
        genomes: BTreeMap::new(),
        archive,
        tasks,
        historical: Vec::new(),
        lineage: BTreeMap::new(),
        history: Vec::new(),
    };
    state.historical.push(HistoricalSnapshot {
        generation: 0,
        members: state.archive.iter().map(|s| s.genome_id).collect(),
    });
    for s in seeds {
        state.lineage.insert(s.id, lineage_node(&s));
        state.genomes.insert(s.id, s);
    }
    prune_genomes(&mut state);
    log::info!(
        "initialized: {} seed models, {} tasks ({} generated)",
        state.archive.len(),
        state.tasks.global.len(),
        record.accepted
    );
    Ok((state, log))
}

/// Scores every model in the candidate pool on the whole global archive.
pub fn global_response_matrix(state: &ArchiveState, providers: &Providers) -> Result<ResponseMatrix, EngineError> {
    let ids = state.candidate_pool();
    let genomes: Vec<&ModelGenome> = ids.iter().map(|id| &state.genomes[id]).collect();
    let tasks: Vec<&TaskRecord> = state.tasks.global.iter().collect();
    let scored = score_all(&genomes, &tasks, state.tasks.epoch, providers)?;
    Ok(ResponseMatrix::new(
        scored.into_iter().map(|s| s.skill.bits).collect(),
        ids,
        tasks.iter().map(|t| t.id.to_string()).collect(),
    )?)
}

/// Selects the task force from the candidate pool by the configured strategy.
pub fn final_task_force(
    state: &ArchiveState,
    config: &RunConfig,
    providers: &Providers,
) -> Result<(TaskForce, ResponseMatrix), EngineError> {
    let m = global_response_matrix(state, providers)?;
    let n = config.taskforce_size.min(m.n_models());
    let tf = select_task_force(
        &m,
        n,
        config.taskforce_strategy,
        stream_key(config.run_seed, state.generation, Stream::TaskForce, 0),
    )?;
    Ok((tf, m))
}

/// Continues `state` until `config.generations` generations are complete,
/// calling `on_generation` after each.
pub fn continue_run<F>(
    mut state: ArchiveState,
    config: &RunConfig,
    providers: &Providers,
    mut on_generation: F,
) -> Result<ArchiveState, EngineError>
where
    F: FnMut(&ArchiveState, &GenerationLog) -> Result<(), EngineError>,
{
    while state.generation < config.generations {
        let (next, log) = run_generation(&state, config, providers)?;
        on_generation(&next, &log)?;
        let r = next.history.last().expect("generation record");
        log::info!(
            "generation {}: {} new models, best fitness {:.3}, {} active tasks",
            r.generation,
            r.new_models,
            r.best_fitness,
            next.tasks.active.len()
        );
        state = next;
    }
    Ok(state)
}

/// Initializes, evolves for `config.generations` generations and selects
/// the task force.
pub fn run(config: &RunConfig, providers: &Providers) -> Result<(ArchiveState, TaskForce), EngineError> {
    let (state, _) = initialize(config, providers)?;
    let state = continue_run(state, config, providers, |_, _| Ok(()))?;
    let (tf, _) = final_task_force(&state, config, providers)?;
    Ok((state, tf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            generations: 6,
            active_models: 6,
            offspring_per_gen: 4,
            active_tasks: 20,
            task_interval: 3,
            n_gen_tasks: 4,
            seed_tasks: 5,
            init_tasks: 3,
            taskforce_size: 3,
            ..Default::default()
        }
    }

    #[test]
    fn generation_contract() {
        let config = small();
        let providers = world::build_providers(&config).unwrap();
        let (s0, _) = initialize(&config, &providers).unwrap();
        s0.check(&config).unwrap();
        assert_eq!(s0.archive.len(), 3);
        let (s1, _) = run_generation(&s0, &config, &providers).unwrap();
        assert_eq!(s1.generation, 1);
        assert_eq!(s1.history[0].offspring, 4);
        assert_eq!(s1.historical.len(), 1);
        s1.check(&config).unwrap();
        let (s2, _) = run_generation(&s1, &config, &providers).unwrap();
        let (s3, _) = run_generation(&s2, &config, &providers).unwrap();
        assert_eq!(s3.historical.len(), 2);
        assert_eq!(s3.historical[1].generation, 3);
        assert!(s3.history[2].task_phase.is_some());
        assert_eq!(s3.tasks.epoch, s2.tasks.epoch + 1);
        s3.check(&config).unwrap();
    }

    #[test]
    fn run_is_deterministic() {
        let config = small();
        let providers = world::build_providers(&config).unwrap();
        let (a, tfa) = run(&config, &providers).unwrap();
        let (b, tfb) = run(&config, &providers).unwrap();
        assert_eq!(a, b);
        assert_eq!(tfa, tfb);
        assert_eq!(tfa.member_ids.len(), 3);
    }

    #[test]
    fn zero_generations_rejected() {
        let config = RunConfig {
            generations: 0,
            ..small()
        };
        let providers = world::build_providers(&small()).unwrap();
        assert!(matches!(initialize(&config, &providers), Err(EngineError::Config(_))));
    }
}
