//! Provider contracts for every role that would call a language model, with
//! deterministic synthetic backends and an OpenAI-compatible HTTP backend.

mod embed;
#[cfg(feature = "http")]
pub mod http;
mod prompts;
#[cfg(all(unix, feature = "sandbox"))]
mod sandbox;
mod scorer;
pub mod synthetic;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genome::ModelGenome;

pub use embed::{cosine, normalize, EmbeddingIndex, HashEmbedder};
pub use prompts::{render_template, PromptKind, PromptSet};
pub use scorer::{
    evaluate_task, extract_answer, score, ScoreError, ScorerRuntime, ScorerSpec, Submission,
    SyntheticProbe,
};

/// Derives a sub-key for deterministic per-request randomness.
pub fn mix_key(key: u64, salt: u64) -> u64 {
    embed::mix64(key ^ embed::mix64(salt.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Synthetic,
    Http,
}

/// Connection settings for one provider role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub backend: Backend,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub request_cap: usize,
    pub retry_budget: u32,
    pub timeout_secs: f64,
    pub seed: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Synthetic,
            endpoint: None,
            model_name: None,
            request_cap: 8,
            retry_budget: 2,
            timeout_secs: 120.0,
            seed: 0,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self, role: &str) -> Result<(), String> {
        if self.request_cap < 1 {
            return Err(format!("providers.{role}.request_cap"));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("providers.{role}.timeout_secs"));
        }
        if self.backend == Backend::Http {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(format!("providers.{role}.endpoint"));
            }
            if self.model_name.as_deref().is_none_or(str::is_empty) {
                return Err(format!("providers.{role}.model_name"));
            }
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Decoding settings for subject-model answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decode {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Decode {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            temperature: 0.0,
            top_p: 1.0,
        }
    }
}

/// Which scientist prompt a request came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScientistPurpose {
    Propose(PromptKind),
    Reflect { round: u32, of: u32 },
    Attempt,
}

#[derive(Debug, Clone)]
pub struct ScientistRequest {
    pub purpose: ScientistPurpose,
    pub system: String,
    pub user: String,
    /// JSON summary of the task being adapted, reflected on, or attempted.
    pub subject: Option<serde_json::Value>,
    /// Error or score text from the previous validation round.
    pub feedback: Option<String>,
    /// Deterministic per-request key for synthetic backends.
    pub key: u64,
}

pub trait Scientist: Send + Sync {
    fn respond(&self, request: &ScientistRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Gibberish,
    Novelty,
    TaskJudge,
    BonPair,
    BonMonarch,
}

pub trait JudgeBackend: Send + Sync {
    fn respond(&self, kind: JudgeKind, system: &str, prompt: &str) -> Result<String, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

pub trait Subject: Send + Sync {
    fn answer(
        &self,
        genome: &ModelGenome,
        system: &str,
        instruction: &str,
        decode: &Decode,
    ) -> Result<String, ProviderError>;
}

pub trait RewardModel: Send + Sync {
    fn reward(&self, question: &str, answer: &str) -> Result<f64, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Yes,
    No,
    /// Zero-based index of a selected candidate.
    Choice(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub decision: Decision,
    pub transcripts: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JudgeError {
    #[error("judge output unparseable after {} attempts", .transcripts.len())]
    Unparseable { transcripts: Vec<String> },
    #[error("judge provider failed: {source}")]
    Provider {
        source: ProviderError,
        transcripts: Vec<String>,
    },
}

impl JudgeError {
    pub fn transcripts(&self) -> Vec<String> {
        match self {
            JudgeError::Unparseable { transcripts } | JudgeError::Provider { transcripts, .. } => {
                transcripts.clone()
            }
        }
    }
}

fn clean_line(line: &str) -> String {
    line.chars()
        .filter(|c| !matches!(c, '*' | '`' | '#'))
        .collect::<String>()
        .to_lowercase()
}

fn value_after_marker(transcript: &str, marker: &str) -> Vec<String> {
    let lines: Vec<String> = transcript.lines().map(clean_line).collect();
    let mut found = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        let mut search = line.as_str();
        while let Some(pos) = search.find(marker) {
            let tail = search[pos + marker.len()..].trim();
            let value = if tail.is_empty() {
                lines[i + 1..]
                    .iter()
                    .map(|l| l.trim())
                    .find(|l| !l.is_empty())
                    .unwrap_or("")
                    .to_string()
            } else {
                tail.to_string()
            };
            found.push(value);
            search = &search[pos + marker.len()..];
        }
    }
    found
}

fn strip_quotes(v: &str) -> &str {
    v.trim_start_matches(['"', '\'', '<', '[', '(', ' '])
}

/// Scans a judge transcript for the marker line of `kind`. The scan is
/// case-insensitive and the first parseable occurrence wins.
pub fn parse_decision(kind: JudgeKind, transcript: &str) -> Option<Decision> {
    match kind {
        JudgeKind::Gibberish | JudgeKind::Novelty | JudgeKind::TaskJudge => {
            let marker = if kind == JudgeKind::Gibberish { "answer:" } else { "decision:" };
            value_after_marker(transcript, marker).iter().find_map(|v| {
                let v = strip_quotes(v);
                if v.starts_with("yes") {
                    Some(Decision::Yes)
                } else if v.starts_with("no") {
                    Some(Decision::No)
                } else {
                    None
                }
            })
        }
        JudgeKind::BonPair | JudgeKind::BonMonarch => value_after_marker(transcript, "decision:")
            .iter()
            .find_map(|v| {
                let v = strip_quotes(v);
                let v = v.strip_prefix("candidate").unwrap_or(v).trim();
                let digits: String = v.chars().take_while(|c| c.is_ascii_digit()).collect();
                digits.parse::<usize>().ok().map(|n| Decision::Choice(n.wrapping_sub(1)))
            }),
    }
}

/// Judge backend plus the retry policy for unparseable answers.
#[derive(Clone)]
pub struct JudgeClient {
    backend: Arc<dyn JudgeBackend>,
    retry_budget: u32,
}

impl JudgeClient {
    pub fn new(backend: Arc<dyn JudgeBackend>, retry_budget: u32) -> Self {
        Self {
            backend,
            retry_budget,
        }
    }

    pub fn decide(&self, kind: JudgeKind, system: &str, prompt: &str) -> Result<Verdict, JudgeError> {
        let mut transcripts = Vec::new();
        for _ in 0..=self.retry_budget {
            let raw = match self.backend.respond(kind, system, prompt) {
                Ok(raw) => raw,
                Err(source) => return Err(JudgeError::Provider { source, transcripts }),
            };
            let parsed = parse_decision(kind, &raw);
            transcripts.push(raw);
            if let Some(decision) = parsed {
                return Ok(Verdict {
                    decision,
                    transcripts,
                });
            }
        }
        Err(JudgeError::Unparseable { transcripts })
    }
}

/// All providers a run needs.
#[derive(Clone)]
pub struct Providers {
    pub scientist: Arc<dyn Scientist>,
    pub scientist_retries: u32,
    pub judge: JudgeClient,
    pub embedder: Arc<dyn Embedder>,
    pub subject: Arc<dyn Subject>,
    pub reward: Option<Arc<dyn RewardModel>>,
    pub prompts: Arc<PromptSet>,
    pub decode: Decode,
    pub scorer: ScorerRuntime,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::synthetic::ScriptedJudge;

    #[test]
    fn decision_markers() {
        assert_eq!(
            parse_decision(JudgeKind::TaskJudge, "THOUGHT: fine\nDECISION: Yes"),
            Some(Decision::Yes)
        );
        assert_eq!(
            parse_decision(JudgeKind::Novelty, "**Decision**: \"No\""),
            Some(Decision::No)
        );
        assert_eq!(parse_decision(JudgeKind::Gibberish, "Answer: Yes"), Some(Decision::Yes));
        assert_eq!(parse_decision(JudgeKind::Gibberish, "Answer: No"), Some(Decision::No));
        assert_eq!(parse_decision(JudgeKind::Novelty, "I think it is new."), None);
        assert_eq!(
            parse_decision(JudgeKind::TaskJudge, "DECISION:\n\nYes"),
            Some(Decision::Yes)
        );
        assert_eq!(
            parse_decision(JudgeKind::BonMonarch, "Decision: 3"),
            Some(Decision::Choice(2))
        );
        assert_eq!(
            parse_decision(JudgeKind::BonPair, "DECISION: Candidate 2"),
            Some(Decision::Choice(1))
        );
    }

    #[test]
    fn first_parseable_marker_wins() {
        let t = "Decision: maybe\nDecision: No\nDecision: Yes";
        assert_eq!(parse_decision(JudgeKind::Novelty, t), Some(Decision::No));
    }

    #[test]
    fn retries_until_parseable() {
        let judge = JudgeClient::new(
            Arc::new(ScriptedJudge::new(["hmm", "Decision: Yes"])),
            2,
        );
        let v = judge.decide(JudgeKind::Novelty, "", "").unwrap();
        assert_eq!(v.decision, Decision::Yes);
        assert_eq!(v.transcripts.len(), 2);
    }

    #[test]
    fn unparseable_after_budget() {
        let judge = JudgeClient::new(Arc::new(ScriptedJudge::new(["a", "b", "c"])), 1);
        let err = judge.decide(JudgeKind::Novelty, "", "").unwrap_err();
        assert_eq!(err, JudgeError::Unparseable { transcripts: vec!["a".into(), "b".into()] });
    }

    #[test]
    fn scripted_queue_order() {
        let judge = JudgeClient::new(
            Arc::new(ScriptedJudge::new(["Decision: Yes", "Decision: No"])),
            0,
        );
        assert_eq!(judge.decide(JudgeKind::Novelty, "", "").unwrap().decision, Decision::Yes);
        assert_eq!(judge.decide(JudgeKind::Novelty, "", "").unwrap().decision, Decision::No);
    }

    #[test]
    fn http_requires_endpoint_and_model() {
        let cfg = ProviderConfig {
            backend: Backend::Http,
            ..Default::default()
        };
        assert_eq!(cfg.validate("judge").unwrap_err(), "providers.judge.endpoint");
        let cfg = ProviderConfig {
            backend: Backend::Http,
            endpoint: Some("http://localhost:1".into()),
            ..Default::default()
        };
        assert_eq!(cfg.validate("judge").unwrap_err(), "providers.judge.model_name");
    }
}
