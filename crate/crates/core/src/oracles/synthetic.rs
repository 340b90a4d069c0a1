//! Deterministic in-process providers.
//!
//! Everything here derives its randomness from integer hashing of the request
//! and a configured seed, so identical requests give identical answers on
//! every platform and regardless of call order. The scripted providers are
//! the exception: they replay a fixed queue and are single-consumer.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde_json::{json, Value};

use super::embed::{fnv1a, mix64, normalize};
use super::{
    Decode, JudgeBackend, JudgeKind, PromptKind, ProviderError, RewardModel, Scientist,
    ScientistPurpose, ScientistRequest, ScorerSpec, Subject, SyntheticProbe,
};
use crate::genome::ModelGenome;

/// Uniform value in [0, 1) from a 64-bit hash.
fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic pseudo-Gaussian direction: each coordinate is a centred sum
/// of four hashed uniforms, then the vector is scaled to unit length.
pub fn hashed_direction(dim: usize, key: u64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim as u64)
        .map(|i| {
            let base = mix64(key ^ mix64(i.wrapping_mul(4)));
            (0..4u64).map(|j| unit(mix64(base ^ j))).sum::<f64>() - 2.0
        })
        .collect();
    if normalize(&mut v) == 0.0 {
        v[0] = 1.0;
    }
    v
}

/// Scientist backend for probe tasks. Harder/easier variants move the
/// threshold by `step`; novel variants rotate the direction away from the
/// parent's.
#[derive(Debug, Clone)]
pub struct ProbeScientist {
    pub dimension: usize,
    pub seed: u64,
    pub step: f64,
    /// Weight on the parent direction for novel variants.
    pub novel_keep: f64,
    /// Weight on the parent direction for "adapt similar" variants.
    pub similar_keep: f64,
}

impl ProbeScientist {
    pub fn new(dimension: usize, seed: u64, step: f64) -> Self {
        Self {
            dimension,
            seed,
            step,
            novel_keep: 0.3,
            similar_keep: 0.75,
        }
    }

    fn parent_probe(&self, subject: Option<&Value>, key: u64) -> (SyntheticProbe, u8) {
        let parsed = subject.and_then(|s| {
            let spec: ScorerSpec = serde_json::from_value(s.get("scorer")?.clone()).ok()?;
            let difficulty = s
                .get("estimated_human_difficulty")
                .and_then(|d| d.as_str().and_then(|t| t.parse().ok()).or(d.as_u64().map(|x| x as u8)))
                .unwrap_or(3);
            match spec {
                ScorerSpec::SyntheticProbe(p) if p.direction.len() == self.dimension => {
                    Some((p, difficulty))
                }
                _ => None,
            }
        });
        parsed.unwrap_or_else(|| {
            (
                SyntheticProbe {
                    direction: hashed_direction(self.dimension, key),
                    threshold: 0.0,
                    noise_seed: key,
                },
                3,
            )
        })
    }

    fn propose(&self, prompt: PromptKind, subject: Option<&Value>, key: u64) -> Value {
        let (parent, difficulty) = self.parent_probe(subject, key);
        let (probe, difficulty, label) = match prompt {
            PromptKind::TaskHarder => (
                SyntheticProbe {
                    threshold: parent.threshold + self.step,
                    noise_seed: key,
                    ..parent
                },
                (difficulty + 1).min(5),
                "harder",
            ),
            PromptKind::TaskEasier => (
                SyntheticProbe {
                    threshold: parent.threshold - self.step,
                    noise_seed: key,
                    ..parent
                },
                difficulty.saturating_sub(1).max(1),
                "easier",
            ),
            other => {
                let keep = match other {
                    PromptKind::TaskAdaptSimilar | PromptKind::TaskInitialSimilar => self.similar_keep,
                    _ => self.novel_keep,
                };
                let fresh = hashed_direction(self.dimension, key);
                let mut direction: Vec<f64> = parent
                    .direction
                    .iter()
                    .zip(&fresh)
                    .map(|(p, f)| keep * p + (1.0 - keep) * f)
                    .collect();
                if normalize(&mut direction) == 0.0 {
                    direction = fresh;
                }
                (
                    SyntheticProbe {
                        direction,
                        threshold: parent.threshold,
                        noise_seed: key,
                    },
                    difficulty,
                    "novel",
                )
            }
        };
        probe_task_json(&probe, difficulty, label, false)
    }
}

/// The eight largest-magnitude coordinates of a direction as word tokens
/// (`a12p` = coordinate 12, positive), so that text embeddings of probes
/// with similar directions overlap.
pub fn axes_signature(direction: &[f64]) -> String {
    let mut idx: Vec<usize> = (0..direction.len()).collect();
    idx.sort_by(|&a, &b| direction[b].abs().total_cmp(&direction[a].abs()).then(a.cmp(&b)));
    idx.iter()
        .take(8)
        .map(|&i| format!("a{i}{}", if direction[i] >= 0.0 { 'p' } else { 'n' }))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Response JSON for a probe task in the scientist's reply format.
pub fn probe_task_json(probe: &SyntheticProbe, difficulty: u8, label: &str, done: bool) -> Value {
    let name = format!("probe_{:012x}", probe.noise_seed & 0xffff_ffff_ffff);
    json!({
        "name_of_task": name,
        "description_of_task": format!(
            "Synthetic {label} probe {name}: parameters must align with axes {} past threshold {:.4}.",
            axes_signature(&probe.direction),
            probe.threshold
        ),
        "capability_being_measured": "parameter alignment",
        "estimated_human_difficulty": difficulty.to_string(),
        "done": if done { "True" } else { "False" },
        "example_instruction": format!("Respond to probe {name}."),
        "scorer": ScorerSpec::SyntheticProbe(probe.clone()),
    })
}

/// Wraps a response JSON in the THOUGHT / RESPONSE JSON reply format.
pub fn scientist_reply(thought: &str, response: &Value) -> String {
    format!(
        "THOUGHT: {thought}\n\nRESPONSE JSON:\n```json\n{}\n```\n",
        serde_json::to_string_pretty(response).expect("json value")
    )
}

impl Scientist for ProbeScientist {
    fn respond(&self, request: &ScientistRequest) -> Result<String, ProviderError> {
        let key = mix64(request.key ^ self.seed);
        match &request.purpose {
            ScientistPurpose::Propose(kind) => {
                let task = self.propose(*kind, request.subject.as_ref(), key);
                Ok(scientist_reply("Adapting the parent probe.", &task))
            }
            ScientistPurpose::Reflect { .. } => {
                let mut task = request
                    .subject
                    .clone()
                    .ok_or_else(|| ProviderError::BadResponse("reflection without a task".into()))?;
                task["done"] = json!("True");
                Ok(scientist_reply("The task evaluates cleanly; nothing to change.", &task))
            }
            ScientistPurpose::Attempt => Ok("The probe has no textual answer.\nAnswer: 0".into()),
        }
    }
}

/// Replays a fixed list of replies, one per call.
pub struct ScriptedScientist {
    replies: Mutex<VecDeque<String>>,
}

impl ScriptedScientist {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
        }
    }
}

impl Scientist for ScriptedScientist {
    fn respond(&self, _request: &ScientistRequest) -> Result<String, ProviderError> {
        self.replies
            .lock()
            .expect("scripted scientist lock")
            .pop_front()
            .ok_or_else(|| ProviderError::Unavailable("scripted scientist exhausted".into()))
    }
}

/// Rule-based judge over the rendered prompt text.
///
/// * gibberish: "Yes" when any response reports a parameter norm above
///   `norm_limit` (or a non-finite one) or a response is empty;
/// * novelty: "No" when any neighbour's reported similarity is at least
///   `similarity_cutoff`;
/// * task judging: "Yes" for any non-empty submission;
/// * best-of-N: picks the lexicographically smallest candidate.
#[derive(Debug, Clone)]
pub struct RuleJudge {
    pub norm_limit: f64,
    pub similarity_cutoff: f64,
}

impl Default for RuleJudge {
    fn default() -> Self {
        Self {
            norm_limit: 1e3,
            similarity_cutoff: 0.99,
        }
    }
}

fn numbers_after(text: &str, marker: &str) -> Vec<f64> {
    text.match_indices(marker)
        .map(|(pos, _)| {
            let tail = &text[pos + marker.len()..];
            let tok: String = tail
                .trim_start()
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+'))
                .collect();
            tok.parse::<f64>().unwrap_or(f64::NAN)
        })
        .collect()
}

/// Candidate blocks written as `[CANDIDATE i]` followed by a fenced body.
pub fn candidate_blocks(prompt: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = prompt;
    while let Some(pos) = rest.find("[CANDIDATE ") {
        rest = &rest[pos..];
        let body = rest
            .find("```")
            .map(|open| {
                let after = &rest[open + 3..];
                let after = after.split_once('\n').map_or("", |(_, b)| b);
                let end = after.find("```").unwrap_or(after.len());
                after[..end].trim().to_string()
            })
            .unwrap_or_default();
        out.push(body);
        rest = &rest[1..];
    }
    out
}

fn response_blocks(prompt: &str) -> Vec<String> {
    prompt
        .split("[RESPONSE ")
        .skip(1)
        .map(|chunk| {
            chunk
                .split("```")
                .nth(1)
                .map(|b| b.trim().to_string())
                .unwrap_or_default()
        })
        .collect()
}

impl JudgeBackend for RuleJudge {
    fn respond(&self, kind: JudgeKind, _system: &str, prompt: &str) -> Result<String, ProviderError> {
        Ok(match kind {
            JudgeKind::Gibberish => {
                let norms = numbers_after(prompt, "norm=");
                let degenerate = norms.iter().any(|n| !n.is_finite() || *n > self.norm_limit)
                    || response_blocks(prompt).iter().any(|r| r.is_empty());
                format!(
                    "The responses {} coherent.\nAnswer: {}",
                    if degenerate { "are not" } else { "are" },
                    if degenerate { "Yes" } else { "No" }
                )
            }
            JudgeKind::Novelty => {
                let max = numbers_after(prompt, "\"similarity\":")
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max);
                let duplicate = max >= self.similarity_cutoff;
                format!(
                    "Closest similarity {max:.4}.\nDecision: {}",
                    if duplicate { "No" } else { "Yes" }
                )
            }
            JudgeKind::TaskJudge => {
                let submission = prompt
                    .split_once("Submission:")
                    .map(|(_, s)| s.split("Additional Evaluation Criteria").next().unwrap_or(""))
                    .unwrap_or("");
                let ok = !submission.trim().is_empty();
                format!("THOUGHT: checked.\nDECISION: {}", if ok { "Yes" } else { "No" })
            }
            JudgeKind::BonPair | JudgeKind::BonMonarch => {
                let blocks = candidate_blocks(prompt);
                let best = blocks
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
                    .map_or(0, |(i, _)| i);
                format!("THOUGHT: compared.\nDECISION: {}", best + 1)
            }
        })
    }
}

/// Replays a fixed queue of raw judge transcripts.
pub struct ScriptedJudge {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedJudge {
    pub fn new<I, S>(transcripts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(transcripts.into_iter().map(Into::into).collect()),
        }
    }
}

impl JudgeBackend for ScriptedJudge {
    fn respond(&self, _kind: JudgeKind, _system: &str, _prompt: &str) -> Result<String, ProviderError> {
        self.queue
            .lock()
            .expect("scripted judge lock")
            .pop_front()
            .ok_or_else(|| ProviderError::Unavailable("scripted judge exhausted".into()))
    }
}

/// Judge backed by a closure over (kind, prompt).
pub struct FnJudge<F>(pub F);

impl<F> JudgeBackend for FnJudge<F>
where
    F: Fn(JudgeKind, &str) -> String + Send + Sync,
{
    fn respond(&self, kind: JudgeKind, _system: &str, prompt: &str) -> Result<String, ProviderError> {
        Ok((self.0)(kind, prompt))
    }
}

fn genome_digest(genome: &ModelGenome) -> u64 {
    genome
        .tensors
        .values()
        .flat_map(|m| m.iter())
        .fold(mix64(genome.id.0), |h, x| mix64(h ^ x.to_bits()))
}

/// Subject backend whose answer is a canonical report of the genome's
/// parameter statistics, so judges and scorers see a pure function of the
/// genome.
#[derive(Debug, Clone, Default)]
pub struct StatsSubject;

impl Subject for StatsSubject {
    fn answer(
        &self,
        genome: &ModelGenome,
        _system: &str,
        instruction: &str,
        _decode: &Decode,
    ) -> Result<String, ProviderError> {
        let n = genome.dimension().max(1) as f64;
        let flat = genome.flatten();
        let mean = flat.iter().sum::<f64>() / n;
        let max_abs = flat.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let digest = mix64(genome_digest(genome) ^ fnv1a(instruction.as_bytes()));
        Ok(format!(
            "Model {} considered the task (digest {digest:016x}).\nnorm={:.6} mean={mean:.6} max_abs={max_abs:.6}\nAnswer: {}",
            genome.id,
            genome.frobenius_norm(),
            digest % 10
        ))
    }
}

/// Reward backend giving each (question, answer) pair a hashed score in [0, 1).
#[derive(Debug, Clone, Default)]
pub struct HashReward {
    pub seed: u64,
}

impl RewardModel for HashReward {
    fn reward(&self, question: &str, answer: &str) -> Result<f64, ProviderError> {
        Ok(unit(mix64(
            fnv1a(question.as_bytes()) ^ mix64(fnv1a(answer.as_bytes()) ^ self.seed),
        )))
    }
}

/// Reward backend returning fixed scores keyed by answer text.
pub struct TableReward(pub Vec<(String, f64)>);

impl RewardModel for TableReward {
    fn reward(&self, _question: &str, answer: &str) -> Result<f64, ProviderError> {
        self.0
            .iter()
            .find(|(a, _)| a == answer)
            .map(|(_, s)| *s)
            .ok_or_else(|| ProviderError::Unavailable(format!("no reward for `{answer}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{GenomeId, Matrix};
    use std::collections::BTreeMap;

    #[test]
    fn hashed_direction_is_unit_and_stable() {
        let a = hashed_direction(50, 9);
        assert_eq!(a, hashed_direction(50, 9));
        assert!((a.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert_ne!(a, hashed_direction(50, 10));
    }

    #[test]
    fn harder_bumps_difficulty_and_threshold() {
        let sci = ProbeScientist::new(4, 1, 0.5);
        let parent = probe_task_json(
            &SyntheticProbe {
                direction: vec![1.0, 0.0, 0.0, 0.0],
                threshold: 0.2,
                noise_seed: 3,
            },
            5,
            "seed",
            true,
        );
        let out = sci.propose(PromptKind::TaskHarder, Some(&parent), 11);
        assert_eq!(out["estimated_human_difficulty"], "5");
        let spec: ScorerSpec = serde_json::from_value(out["scorer"].clone()).unwrap();
        match spec {
            ScorerSpec::SyntheticProbe(p) => assert!((p.threshold - 0.7).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn stats_subject_is_deterministic() {
        let mut t = BTreeMap::new();
        t.insert("w".to_string(), Matrix::from_row_slice(1, 2, &[3.0, 4.0]));
        let g = ModelGenome::new(GenomeId(3), t);
        let a = StatsSubject.answer(&g, "", "q", &Decode::default()).unwrap();
        assert_eq!(a, StatsSubject.answer(&g, "", "q", &Decode::default()).unwrap());
        assert!(a.contains("norm=5.000000"));
    }

    #[test]
    fn rule_judge_gibberish_and_novelty() {
        let j = RuleJudge {
            norm_limit: 10.0,
            similarity_cutoff: 0.99,
        };
        let p = "[RESPONSE 1]\n```\nnorm=3.0\n```\n[RESPONSE 2]\n```\nnorm=30.0\n```";
        assert!(j.respond(JudgeKind::Gibberish, "", p).unwrap().ends_with("Answer: Yes"));
        let p = "[RESPONSE 1]\n```\nnorm=3.0\n```";
        assert!(j.respond(JudgeKind::Gibberish, "", p).unwrap().ends_with("Answer: No"));
        let p = "[{\"similarity\": 0.995}, {\"similarity\": 0.2}]";
        assert!(j.respond(JudgeKind::Novelty, "", p).unwrap().ends_with("Decision: No"));
        let p = "[{\"similarity\": 0.5}]";
        assert!(j.respond(JudgeKind::Novelty, "", p).unwrap().ends_with("Decision: Yes"));
    }

    #[test]
    fn candidate_block_parsing() {
        let p = "Question:\n```\nq\n```\n[CANDIDATE 1]\n```\nb\n```\n[CANDIDATE 2]\n```\na\n```";
        assert_eq!(candidate_blocks(p), vec!["b".to_string(), "a".to_string()]);
        let j = RuleJudge::default();
        assert!(j.respond(JudgeKind::BonPair, "", p).unwrap().ends_with("DECISION: 2"));
    }
}
