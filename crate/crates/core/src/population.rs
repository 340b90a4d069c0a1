//! Skill vectors, fitness, and Dominated Novelty Search selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::GenomeId;
use crate::oracles::{Decision, JudgeClient, JudgeError, PromptKind, PromptSet, ProviderError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PopulationError {
    #[error("expected {expected} scores, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("skill vector is empty")]
    EmptySkillVector,
    #[error("population is empty")]
    EmptyPopulation,
    #[error("skill vectors from task epochs {0} and {1} cannot be compared")]
    EpochMismatch(u64, u64),
    #[error("difficulty weights sum to zero")]
    ZeroTotalWeight,
    #[error("archive capacity must be >= 1")]
    ZeroCapacity,
}

/// Binary record of which active tasks a genome solved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillVector {
    pub bits: Vec<bool>,
    pub task_epoch: u64,
}

impl SkillVector {
    pub fn new(bits: Vec<bool>, task_epoch: u64) -> Self {
        Self { bits, task_epoch }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn solved(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Outcome of scoring one genome on one task. `Failure` covers exceptions in
/// the scorer or provider and counts as unsolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TaskScore {
    Score(f64),
    Failure,
}

pub fn compute_skill_vector(
    per_task_scores: &[TaskScore],
    expected_len: usize,
    task_epoch: u64,
) -> Result<SkillVector, PopulationError> {
    if per_task_scores.len() != expected_len {
        return Err(PopulationError::LengthMismatch {
            expected: expected_len,
            got: per_task_scores.len(),
        });
    }
    let bits = per_task_scores
        .iter()
        .map(|s| matches!(s, TaskScore::Score(v) if *v == 1.0))
        .collect();
    Ok(SkillVector::new(bits, task_epoch))
}

/// Unweighted fraction of tasks solved.
pub fn fitness(skill: &SkillVector) -> Result<f64, PopulationError> {
    if skill.is_empty() {
        return Err(PopulationError::EmptySkillVector);
    }
    Ok(skill.solved() as f64 / skill.len() as f64)
}

/// Fraction of total difficulty weight solved. Falls back to the unweighted
/// fraction when all weights are zero.
pub fn weighted_fitness(
    skill: &SkillVector,
    weights: &DifficultyWeights,
) -> Result<f64, PopulationError> {
    if skill.is_empty() {
        return Err(PopulationError::EmptySkillVector);
    }
    if weights.w.len() != skill.len() {
        return Err(PopulationError::LengthMismatch {
            expected: skill.len(),
            got: weights.w.len(),
        });
    }
    let total: f64 = weights.w.iter().sum();
    if total <= 0.0 {
        return fitness(skill);
    }
    let solved: f64 = skill
        .bits
        .iter()
        .zip(&weights.w)
        .filter(|(b, _)| **b)
        .map(|(_, w)| w)
        .sum();
    Ok(solved / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyWeights {
    pub w: Vec<f64>,
}

impl DifficultyWeights {
    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0; n] }
    }

    pub fn total(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// Per-task fraction of the population that fails the task.
pub fn difficulty_weights(population_bits: &[Vec<bool>]) -> Result<DifficultyWeights, PopulationError> {
    let first = population_bits.first().ok_or(PopulationError::EmptyPopulation)?;
    let n_tasks = first.len();
    let mut fails = vec![0usize; n_tasks];
    for row in population_bits {
        if row.len() != n_tasks {
            return Err(PopulationError::LengthMismatch {
                expected: n_tasks,
                got: row.len(),
            });
        }
        for (f, &b) in fails.iter_mut().zip(row) {
            if !b {
                *f += 1;
            }
        }
    }
    let rows = population_bits.len() as f64;
    Ok(DifficultyWeights {
        w: fails.into_iter().map(|f| f as f64 / rows).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSolution {
    pub genome_id: GenomeId,
    pub skill: SkillVector,
    pub fitness: f64,
    pub novelty: Option<f64>,
}

impl ScoredSolution {
    pub fn new(genome_id: GenomeId, skill: SkillVector) -> Result<Self, PopulationError> {
        let fitness = fitness(&skill)?;
        Ok(Self {
            genome_id,
            skill,
            fitness,
            novelty: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnsParams {
    pub k: usize,
    pub alpha_dom: f64,
    pub use_difficulty_weights: bool,
}

impl Default for DnsParams {
    fn default() -> Self {
        Self {
            k: 3,
            alpha_dom: 999.0,
            use_difficulty_weights: true,
        }
    }
}

/// Weighted fraction (in percent) of tasks `subject` solves that `other` fails.
fn unique_skill_score(subject: &SkillVector, other: &SkillVector, weights: &[f64], total: f64) -> f64 {
    let unique: f64 = subject
        .bits
        .iter()
        .zip(&other.bits)
        .zip(weights)
        .filter(|((s, o), _)| **s && !**o)
        .fold(0.0, |acc, (_, w)| acc + w);
    unique / total * 100.0
}

/// Dominated-novelty score: mean weighted unique-skill score against the `k`
/// closest strictly fitter members of `pool`, or `alpha_dom` when nothing in
/// the pool is fitter.
pub fn dns_novelty_score(
    subject: &ScoredSolution,
    pool: &[ScoredSolution],
    weights: &DifficultyWeights,
    params: &DnsParams,
) -> Result<f64, PopulationError> {
    let epoch = subject.skill.task_epoch;
    if let Some(other) = pool.iter().find(|s| s.skill.task_epoch != epoch) {
        return Err(PopulationError::EpochMismatch(epoch, other.skill.task_epoch));
    }
    if weights.w.len() != subject.skill.len() {
        return Err(PopulationError::LengthMismatch {
            expected: subject.skill.len(),
            got: weights.w.len(),
        });
    }
    let total = weights.total();
    if total <= 0.0 {
        return Err(PopulationError::ZeroTotalWeight);
    }
    let mut scores: Vec<f64> = pool
        .iter()
        .filter(|s| s.fitness > subject.fitness)
        .map(|s| unique_skill_score(&subject.skill, &s.skill, &weights.w, total))
        .collect();
    if scores.is_empty() {
        return Ok(params.alpha_dom);
    }
    scores.sort_by(|a, b| a.total_cmp(b));
    let k = params.k.max(1).min(scores.len());
    Ok(scores[..k].iter().sum::<f64>() / k as f64)
}

/// Difficulty weights for a pool, or uniform weights when disabled or when
/// every task is solved by every member.
pub fn selection_weights(pool: &[ScoredSolution], params: &DnsParams) -> DifficultyWeights {
    let n = pool.first().map_or(0, |s| s.skill.len());
    if !params.use_difficulty_weights || pool.is_empty() {
        return DifficultyWeights::uniform(n);
    }
    let rows: Vec<Vec<bool>> = pool.iter().map(|s| s.skill.bits.clone()).collect();
    match difficulty_weights(&rows) {
        Ok(w) if w.total() > 0.0 => w,
        _ => DifficultyWeights::uniform(n),
    }
}

/// Keeps at most `capacity` solutions from `archive ∪ candidates`: the fittest
/// solution first, then the rest by descending novelty. Equal novelty breaks
/// by higher fitness, then the older genome.
pub fn dns_archive_update(
    archive: &[ScoredSolution],
    candidates: &[ScoredSolution],
    capacity: usize,
    weights: &DifficultyWeights,
    params: &DnsParams,
) -> Result<Vec<ScoredSolution>, PopulationError> {
    if capacity == 0 {
        return Err(PopulationError::ZeroCapacity);
    }
    let pool: Vec<ScoredSolution> = archive.iter().chain(candidates).cloned().collect();
    if pool.is_empty() {
        return Ok(Vec::new());
    }
    let mut scored = Vec::with_capacity(pool.len());
    for s in &pool {
        let novelty = dns_novelty_score(s, &pool, weights, params)?;
        scored.push(ScoredSolution {
            novelty: Some(novelty),
            ..s.clone()
        });
    }
    let best = scored
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| {
            a.fitness
                .total_cmp(&b.fitness)
                .then_with(|| b.genome_id.cmp(&a.genome_id))
        })
        .map(|(i, _)| i)
        .expect("non-empty pool");
    let elite = scored.swap_remove(best);
    scored.sort_by(rank_order);
    let mut out = Vec::with_capacity(capacity.min(scored.len() + 1));
    out.push(elite);
    out.extend(scored.into_iter().take(capacity - 1));
    Ok(out)
}

fn rank_order(a: &ScoredSolution, b: &ScoredSolution) -> Ordering {
    // Adding 0.0 folds -0.0 into 0.0, which total_cmp would otherwise rank lower.
    let na = a.novelty.unwrap_or(f64::NEG_INFINITY) + 0.0;
    let nb = b.novelty.unwrap_or(f64::NEG_INFINITY) + 0.0;
    nb.total_cmp(&na)
        .then_with(|| b.fitness.total_cmp(&a.fitness))
        .then_with(|| a.genome_id.cmp(&b.genome_id))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateOutcome {
    Keep,
    Discard,
    /// Judge never produced a parseable answer; the model is kept.
    KeepUnparseable,
}

impl GateOutcome {
    pub fn keeps(&self) -> bool {
        !matches!(self, GateOutcome::Discard)
    }
}

/// Judge-based minimal criterion: asks whether three sampled responses are
/// gibberish. Only a provider outage is an error.
pub fn gibberish_gate(
    genome_id: GenomeId,
    samples: &[(String, String); 3],
    judge: &JudgeClient,
    prompts: &PromptSet,
) -> Result<(GateOutcome, Vec<String>), ProviderError> {
    let prompt = prompts.render(
        PromptKind::GibberishUser,
        &[
            ("instruction1", samples[0].0.as_str()),
            ("instruction2", samples[1].0.as_str()),
            ("instruction3", samples[2].0.as_str()),
            ("outputs1", samples[0].1.as_str()),
            ("outputs2", samples[1].1.as_str()),
            ("outputs3", samples[2].1.as_str()),
        ],
    );
    let system = prompts.get(PromptKind::GibberishSystem);
    match judge.decide(crate::oracles::JudgeKind::Gibberish, system, &prompt) {
        Ok(verdict) => {
            let outcome = match verdict.decision {
                Decision::Yes => GateOutcome::Discard,
                _ => GateOutcome::Keep,
            };
            Ok((outcome, verdict.transcripts))
        }
        Err(JudgeError::Provider { source, .. }) => Err(source),
        Err(err) => {
            log::warn!("gibberish judge gave no usable answer for {genome_id}; keeping it: {err}");
            Ok((GateOutcome::KeepUnparseable, err.transcripts()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(bits: &[u8]) -> SkillVector {
        SkillVector::new(bits.iter().map(|&b| b == 1).collect(), 0)
    }

    fn sol(id: u64, bits: &[u8]) -> ScoredSolution {
        ScoredSolution::new(GenomeId(id), sv(bits)).unwrap()
    }

    #[test]
    fn skill_vector_from_scores() {
        use TaskScore::*;
        let s = compute_skill_vector(&[Score(1.0), Score(0.0), Score(1.0)], 3, 0).unwrap();
        assert_eq!(s.bits, vec![true, false, true]);
        let s = compute_skill_vector(&[Failure, Score(1.0)], 2, 0).unwrap();
        assert_eq!(s.bits, vec![false, true]);
        let s = compute_skill_vector(&[Failure; 5], 5, 0).unwrap();
        assert_eq!(s.bits, vec![false; 5]);
        assert!(matches!(
            compute_skill_vector(&[Failure], 2, 0),
            Err(PopulationError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(fitness(&sv(&[1, 1, 0, 0])).unwrap(), 0.5);
        assert_eq!(fitness(&sv(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(fitness(&sv(&[1, 0, 0, 1, 0])).unwrap(), 0.4);
        assert_eq!(fitness(&sv(&[])), Err(PopulationError::EmptySkillVector));
    }

    #[test]
    fn difficulty_weight_examples() {
        let w = difficulty_weights(&[vec![true, false], vec![true, true], vec![false, false]]).unwrap();
        assert!((w.w[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w.w[1] - 2.0 / 3.0).abs() < 1e-15);
        let w = difficulty_weights(&[vec![true, true], vec![true, false]]).unwrap();
        assert_eq!(w.w[0], 0.0);
        let w = difficulty_weights(&[vec![false, true]]).unwrap();
        assert_eq!(w.w, vec![1.0, 0.0]);
        assert_eq!(difficulty_weights(&[]), Err(PopulationError::EmptyPopulation));
    }

    #[test]
    fn dns_examples() {
        let params = DnsParams::default();
        let a = sol(1, &[1, 1, 1, 0]);
        let b = sol(2, &[1, 0, 0, 1]);
        let pool = vec![a.clone(), b.clone()];
        let w = DifficultyWeights::uniform(4);
        assert_eq!(dns_novelty_score(&a, &pool, &w, &params).unwrap(), 999.0);
        assert_eq!(dns_novelty_score(&b, &pool, &w, &params).unwrap(), 25.0);
        let c = sol(3, &[1, 0, 0, 0]);
        let pool = vec![a, b, c.clone()];
        assert_eq!(dns_novelty_score(&c, &pool, &w, &params).unwrap(), 0.0);
    }

    #[test]
    fn dns_errors() {
        let params = DnsParams::default();
        let a = sol(1, &[1, 0]);
        let mut b = sol(2, &[1, 1]);
        b.skill.task_epoch = 3;
        assert!(matches!(
            dns_novelty_score(&a, &[b], &DifficultyWeights::uniform(2), &params),
            Err(PopulationError::EpochMismatch(0, 3))
        ));
        assert_eq!(
            dns_novelty_score(&a, &[], &DifficultyWeights { w: vec![0.0, 0.0] }, &params),
            Err(PopulationError::ZeroTotalWeight)
        );
    }

    #[test]
    fn ties_are_not_dominators() {
        let a = sol(1, &[1, 0]);
        let b = sol(2, &[0, 1]);
        let s = dns_novelty_score(&a, &[a.clone(), b], &DifficultyWeights::uniform(2), &DnsParams::default())
            .unwrap();
        assert_eq!(s, 999.0);
    }

    #[test]
    fn archive_update_keeps_elite_and_capacity() {
        let w = DifficultyWeights::uniform(4);
        let params = DnsParams::default();
        let archive = vec![sol(1, &[1, 1, 1, 0]), sol(2, &[1, 0, 0, 0]), sol(3, &[1, 1, 0, 0])];
        let cands = vec![sol(4, &[0, 0, 0, 1])];
        let out = dns_archive_update(&archive, &cands, 2, &w, &params).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].genome_id, GenomeId(1));
        // m4 uniquely solves task 4 against every fitter solution.
        assert_eq!(out[1].genome_id, GenomeId(4));
    }

    #[test]
    fn archive_update_under_capacity_keeps_all() {
        let w = DifficultyWeights::uniform(2);
        let out = dns_archive_update(
            &[sol(1, &[1, 0])],
            &[sol(2, &[0, 1]), sol(3, &[0, 0])],
            5,
            &w,
            &DnsParams::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn archive_update_tie_breaks_by_fitness_then_age() {
        let w = DifficultyWeights::uniform(3);
        // Both m2 and m3 score 0 against the elite; m3 is fitter.
        let archive = vec![sol(1, &[1, 1, 1]), sol(2, &[1, 0, 0]), sol(3, &[1, 1, 0])];
        let out = dns_archive_update(&archive, &[], 2, &w, &DnsParams::default()).unwrap();
        assert_eq!(out[1].genome_id, GenomeId(3));
        let archive = vec![sol(1, &[1, 1, 1]), sol(5, &[1, 0, 0]), sol(4, &[0, 1, 0])];
        let out = dns_archive_update(&archive, &[], 2, &w, &DnsParams::default()).unwrap();
        assert_eq!(out[1].genome_id, GenomeId(4));
    }

    #[test]
    fn selection_weights_fall_back_to_uniform() {
        let pool = vec![sol(1, &[1, 1]), sol(2, &[1, 1])];
        assert_eq!(selection_weights(&pool, &DnsParams::default()).w, vec![1.0, 1.0]);
        let pool = vec![sol(1, &[1, 0]), sol(2, &[1, 1])];
        assert_eq!(selection_weights(&pool, &DnsParams::default()).w, vec![0.0, 0.5]);
    }

    #[test]
    fn gibberish_gate_follows_judge() {
        use crate::oracles::synthetic::ScriptedJudge;
        use std::sync::Arc;
        let samples: [(String, String); 3] = std::array::from_fn(|i| (format!("q{i}"), format!("a{i}")));
        let prompts = PromptSet::default();
        let run = |script: Vec<&str>| {
            let judge = JudgeClient::new(Arc::new(ScriptedJudge::new(script)), 1);
            gibberish_gate(GenomeId(1), &samples, &judge, &prompts).unwrap().0
        };
        assert_eq!(run(vec!["Answer: Yes"]), GateOutcome::Discard);
        assert_eq!(run(vec!["Answer: No"]), GateOutcome::Keep);
        assert_eq!(run(vec!["hm", "unsure"]), GateOutcome::KeepUnparseable);
        let judge = JudgeClient::new(Arc::new(ScriptedJudge::new(Vec::<String>::new())), 1);
        assert!(gibberish_gate(GenomeId(1), &samples, &judge, &prompts).is_err());
    }
}
