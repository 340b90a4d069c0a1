//! Coverage, task-force selection, Vendi score and Best-of-N aggregation.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::GenomeId;
use crate::oracles::{
    Decision, JudgeClient, JudgeKind, PromptKind, PromptSet, ProviderError, RewardModel, Verdict,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("response matrix needs at least one model and one question")]
    Empty,
    #[error("row {row} has {got} entries, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("unknown model id {0}")]
    UnknownModelId(GenomeId),
    #[error("requested {requested} models but only {available} are available")]
    InsufficientModels { requested: usize, available: usize },
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
    #[error("no candidate answers")]
    NoAnswers,
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Correctness of each model (row) on each question (column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub correct: Vec<Vec<bool>>,
    pub model_ids: Vec<GenomeId>,
    pub question_ids: Vec<String>,
}

impl ResponseMatrix {
    pub fn new(
        correct: Vec<Vec<bool>>,
        model_ids: Vec<GenomeId>,
        question_ids: Vec<String>,
    ) -> Result<Self, MetricsError> {
        if correct.is_empty() || question_ids.is_empty() || model_ids.len() != correct.len() {
            return Err(MetricsError::Empty);
        }
        for (row, r) in correct.iter().enumerate() {
            if r.len() != question_ids.len() {
                return Err(MetricsError::Ragged {
                    row,
                    got: r.len(),
                    expected: question_ids.len(),
                });
            }
        }
        Ok(Self {
            correct,
            model_ids,
            question_ids,
        })
    }

    /// Matrix with generated ids `m{i}` / `q{j}`; for tests and demos.
    pub fn from_rows(correct: Vec<Vec<bool>>) -> Result<Self, MetricsError> {
        let n = correct.len();
        let q = correct.first().map_or(0, Vec::len);
        Self::new(
            correct,
            (0..n as u64).map(GenomeId).collect(),
            (0..q).map(|j| format!("q{j}")).collect(),
        )
    }

    pub fn n_models(&self) -> usize {
        self.correct.len()
    }

    pub fn n_questions(&self) -> usize {
        self.question_ids.len()
    }

    pub fn row_index(&self, id: GenomeId) -> Result<usize, MetricsError> {
        self.model_ids
            .iter()
            .position(|&m| m == id)
            .ok_or(MetricsError::UnknownModelId(id))
    }

    pub fn row_mean(&self, row: usize) -> f64 {
        self.correct[row].iter().filter(|&&b| b).count() as f64 / self.n_questions() as f64
    }

    /// Coverage of the given rows.
    pub fn coverage_of_rows(&self, rows: &[usize]) -> f64 {
        let solved = (0..self.n_questions())
            .filter(|&j| rows.iter().any(|&i| self.correct[i][j]))
            .count();
        solved as f64 / self.n_questions() as f64
    }
}

/// Fraction of questions answered correctly by at least one selected model
/// (all models when `subset` is `None`).
pub fn coverage(m: &ResponseMatrix, subset: Option<&[GenomeId]>) -> Result<f64, MetricsError> {
    let rows: Vec<usize> = match subset {
        None => (0..m.n_models()).collect(),
        Some(ids) => ids.iter().map(|&id| m.row_index(id)).collect::<Result<_, _>>()?,
    };
    Ok(m.coverage_of_rows(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Coverage,
    Fitness,
    Random,
}

impl std::str::FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coverage" => Ok(Self::Coverage),
            "fitness" => Ok(Self::Fitness),
            "random" => Ok(Self::Random),
            other => Err(format!("unknown strategy `{other}` (coverage|fitness|random)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskForce {
    pub member_ids: Vec<GenomeId>,
    pub selection_strategy: SelectionStrategy,
    pub achieved_coverage: f64,
}

/// Greedy maximum coverage. Equal marginal gains break by higher row mean,
/// then lower row index.
pub fn greedy_coverage_rows(m: &ResponseMatrix, n: usize) -> Vec<usize> {
    let q = m.n_questions();
    let mut covered = vec![false; q];
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    let means: Vec<f64> = (0..m.n_models()).map(|i| m.row_mean(i)).collect();
    while chosen.len() < n {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..m.n_models() {
            if chosen.contains(&i) {
                continue;
            }
            let gain = (0..q).filter(|&j| !covered[j] && m.correct[i][j]).count();
            let better = match best {
                None => true,
                Some((b, bg)) => gain > bg || (gain == bg && means[i] > means[b]),
            };
            if better {
                best = Some((i, gain));
            }
        }
        let Some((i, _)) = best else { break };
        for (c, &hit) in covered.iter_mut().zip(&m.correct[i]) {
            *c |= hit;
        }
        chosen.push(i);
    }
    chosen
}

/// Selects `n` models by the given strategy. `seed` drives the random
/// strategy only.
pub fn select_task_force(
    m: &ResponseMatrix,
    n: usize,
    strategy: SelectionStrategy,
    seed: u64,
) -> Result<TaskForce, MetricsError> {
    if n > m.n_models() || n == 0 {
        return Err(MetricsError::InsufficientModels {
            requested: n,
            available: m.n_models(),
        });
    }
    let rows = match strategy {
        SelectionStrategy::Coverage => greedy_coverage_rows(m, n),
        SelectionStrategy::Fitness => {
            let mut idx: Vec<usize> = (0..m.n_models()).collect();
            idx.sort_by(|&a, &b| m.row_mean(b).total_cmp(&m.row_mean(a)).then(a.cmp(&b)));
            idx.truncate(n);
            idx
        }
        SelectionStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, m.n_models(), n).into_vec()
        }
    };
    Ok(TaskForce {
        member_ids: rows.iter().map(|&i| m.model_ids[i]).collect(),
        selection_strategy: strategy,
        achieved_coverage: m.coverage_of_rows(&rows),
    })
}

/// exp of the Shannon entropy of the eigenvalues of K/n, K the cosine Gram
/// matrix. Uses the d×d dual matrix when there are more vectors than
/// dimensions (same non-zero spectrum).
pub fn vendi_score(embeddings: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let n = embeddings.len();
    let d = embeddings.first().ok_or(MetricsError::Empty)?.len();
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, e) in embeddings.iter().enumerate() {
        if e.len() != d {
            return Err(MetricsError::DimensionMismatch {
                index: i,
                got: e.len(),
                expected: d,
            });
        }
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (j, v) in e.iter().enumerate() {
            x[(i, j)] = if norm > 0.0 { v / norm } else { 0.0 };
        }
    }
    let gram = if n <= d { &x * x.transpose() } else { x.transpose() * &x } / n as f64;
    let eig = SymmetricEigen::new(gram);
    let entropy: f64 = eig
        .eigenvalues
        .iter()
        .map(|&l| if l > 0.0 { -l * l.ln() } else { 0.0 })
        .sum();
    Ok(entropy.exp())
}

/// Index chosen by a Best-of-N strategy and the number of judge or reward
/// calls it took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BonChoice {
    pub index: usize,
    pub calls: usize,
}

fn candidate_list(answers: &[&str]) -> String {
    answers
        .iter()
        .enumerate()
        .map(|(i, a)| format!("[CANDIDATE {}]\n```\n{a}\n```", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Single-elimination bracket of pairwise judgments; an odd candidate out
/// gets a bye. An unparseable or out-of-range verdict advances the first of
/// the pair.
pub fn bon_divide_conquer(
    question: &str,
    answers: &[String],
    judge: &JudgeClient,
    prompts: &PromptSet,
) -> Result<BonChoice, MetricsError> {
    if answers.is_empty() {
        return Err(MetricsError::NoAnswers);
    }
    let mut alive: Vec<usize> = (0..answers.len()).collect();
    let mut calls = 0;
    let system = prompts.get(PromptKind::BonPairSystem);
    while alive.len() > 1 {
        let mut next = Vec::with_capacity(alive.len().div_ceil(2));
        for pair in alive.chunks(2) {
            let [a, b] = pair else {
                next.push(pair[0]);
                continue;
            };
            let prompt = prompts.render(
                PromptKind::BonPairUser,
                &[
                    ("question", question),
                    ("answer1", &answers[*a]),
                    ("answer2", &answers[*b]),
                ],
            );
            calls += 1;
            let winner = match judge.decide(JudgeKind::BonPair, system, &prompt) {
                Ok(v) if v.decision == Decision::Choice(1) => *b,
                Ok(v) if v.decision == Decision::Choice(0) => *a,
                Ok(v) => {
                    log::warn!("pairwise judge picked {:?}; first candidate advances", v.decision);
                    *a
                }
                Err(e) => {
                    log::warn!("pairwise judge unparseable; first candidate advances: {e}");
                    *a
                }
            };
            next.push(winner);
        }
        alive = next;
    }
    Ok(BonChoice { index: alive[0], calls })
}

/// One judge call over all candidates.
pub fn bon_monarchical(
    question: &str,
    answers: &[String],
    judge: &JudgeClient,
    prompts: &PromptSet,
) -> Result<BonChoice, MetricsError> {
    if answers.is_empty() {
        return Err(MetricsError::NoAnswers);
    }
    if answers.len() == 1 {
        return Ok(BonChoice { index: 0, calls: 0 });
    }
    let refs: Vec<&str> = answers.iter().map(String::as_str).collect();
    let prompt = prompts.render(
        PromptKind::BonMonarchUser,
        &[
            ("question", question),
            ("count", &answers.len().to_string()),
            ("candidates", &candidate_list(&refs)),
        ],
    );
    let index = match judge.decide(JudgeKind::BonMonarch, prompts.get(PromptKind::BonMonarchSystem), &prompt) {
        Ok(Verdict { decision: Decision::Choice(i), .. }) if i < answers.len() => i,
        Ok(v) => {
            log::warn!("monarch judge picked {:?}; using the first candidate", v.decision);
            0
        }
        Err(e) => {
            log::warn!("monarch judge unparseable; using the first candidate: {e}");
            0
        }
    };
    Ok(BonChoice { index, calls: 1 })
}

/// Highest reward wins; ties go to the lowest index.
pub fn bon_reward(question: &str, answers: &[String], reward: &dyn RewardModel) -> Result<BonChoice, MetricsError> {
    if answers.is_empty() {
        return Err(MetricsError::NoAnswers);
    }
    if answers.len() == 1 {
        return Ok(BonChoice { index: 0, calls: 0 });
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, a) in answers.iter().enumerate() {
        let s = reward.reward(question, a)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(BonChoice {
        index: best.0,
        calls: answers.len(),
    })
}

/// Number of pairwise judgments a bracket over `n` candidates makes.
pub fn bracket_calls(n: usize) -> usize {
    n.saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::synthetic::{RuleJudge, ScriptedJudge, TableReward};
    use std::sync::Arc;

    fn bits(rows: &[&[u8]]) -> ResponseMatrix {
        ResponseMatrix::from_rows(rows.iter().map(|r| r.iter().map(|&b| b == 1).collect()).collect()).unwrap()
    }

    #[test]
    fn coverage_examples() {
        let m = bits(&[&[1, 0, 0, 1], &[0, 1, 0, 0], &[0, 0, 0, 1]]);
        assert_eq!(coverage(&m, None).unwrap(), 0.75);
        assert_eq!(coverage(&bits(&[&[1, 1]]), None).unwrap(), 1.0);
        assert_eq!(coverage(&bits(&[&[0, 0], &[0, 0]]), None).unwrap(), 0.0);
        assert_eq!(
            coverage(&m, Some(&[GenomeId(9)])),
            Err(MetricsError::UnknownModelId(GenomeId(9)))
        );
    }

    #[test]
    fn task_force_examples() {
        let m = bits(&[&[1, 0, 0, 1], &[0, 1, 0, 0], &[0, 0, 0, 1]]);
        let tf = select_task_force(&m, 2, SelectionStrategy::Coverage, 0).unwrap();
        assert_eq!(tf.member_ids, vec![GenomeId(0), GenomeId(1)]);
        assert_eq!(tf.achieved_coverage, 0.75);
        for s in [SelectionStrategy::Coverage, SelectionStrategy::Fitness, SelectionStrategy::Random] {
            let tf = select_task_force(&m, 3, s, 1).unwrap();
            let mut ids = tf.member_ids.clone();
            ids.sort();
            assert_eq!(ids, m.model_ids);
        }
        assert!(select_task_force(&m, 4, SelectionStrategy::Coverage, 0).is_err());
    }

    #[test]
    fn vendi_examples() {
        let same = vec![vec![1.0, 0.0, 0.0]; 4];
        assert!((vendi_score(&same).unwrap() - 1.0).abs() < 1e-9);
        let eye: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| (i == j) as u8 as f64).collect()).collect();
        assert!((vendi_score(&eye).unwrap() - 3.0).abs() < 1e-9);
        let mixed = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (a, b): (f64, f64) = (2.0 / 3.0, 1.0 / 3.0);
        let expect = (-(a * a.ln() + b * b.ln())).exp();
        assert!((vendi_score(&mixed).unwrap() - expect).abs() < 1e-9);
        assert!(vendi_score(&[vec![1.0], vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn bracket_prefers_smaller() {
        let judge = JudgeClient::new(Arc::new(RuleJudge::default()), 0);
        let p = PromptSet::default();
        let answers: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
        let c = bon_divide_conquer("q", &answers, &judge, &p).unwrap();
        assert_eq!(answers[c.index], "a");
        assert_eq!(c.calls, 3);
        let c = bon_divide_conquer("q", &answers[..3], &judge, &p).unwrap();
        assert_eq!(c.calls, 2);
        let c = bon_divide_conquer("q", &answers[..1], &judge, &p).unwrap();
        assert_eq!((c.index, c.calls), (0, 0));
    }

    #[test]
    fn monarch_contract() {
        let p = PromptSet::default();
        let answers: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let judge = JudgeClient::new(Arc::new(ScriptedJudge::new(["DECISION: 3"])), 0);
        assert_eq!(bon_monarchical("q", &answers, &judge, &p).unwrap().index, 2);
        let judge = JudgeClient::new(Arc::new(ScriptedJudge::new(["DECISION: 7"])), 0);
        assert_eq!(bon_monarchical("q", &answers, &judge, &p).unwrap().index, 0);
        let judge = JudgeClient::new(Arc::new(ScriptedJudge::new(Vec::<String>::new())), 0);
        assert_eq!(bon_monarchical("q", &answers[..1], &judge, &p).unwrap().calls, 0);
    }

    #[test]
    fn reward_argmax() {
        let answers: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = TableReward(vec![("a".into(), 0.2), ("b".into(), 0.9), ("c".into(), 0.5)]);
        assert_eq!(bon_reward("q", &answers, &r).unwrap().index, 1);
        let r = TableReward(vec![("a".into(), 0.5), ("b".into(), 0.5), ("c".into(), 0.5)]);
        assert_eq!(bon_reward("q", &answers, &r).unwrap().index, 0);
        let r = TableReward(vec![]);
        assert_eq!(bon_reward("q", &answers[..1], &r).unwrap().calls, 0);
    }
}
