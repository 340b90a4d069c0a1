//! Binary task scorers.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Decision, JudgeClient, JudgeKind, PromptKind, PromptSet, ProviderError, Providers};
use crate::genome::ModelGenome;
use crate::population::TaskScore;

/// Desk-scale stand-in for an LLM task: a genome solves the probe iff the
/// inner product of its flattened parameters with `direction` reaches
/// `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProbe {
    pub direction: Vec<f64>,
    pub threshold: f64,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSpec {
    ExactMatch {
        expected: String,
    },
    NumericTolerance {
        expected: f64,
        tolerance: f64,
    },
    /// A Python `TaskFamily` class run in a sandboxed child process; its
    /// `score(t, submission)` is called with `t = get_tasks()[task_key]`.
    FunctionTests {
        program: String,
        #[serde(default = "default_task_key")]
        task_key: String,
    },
    LlmJudge {
        #[serde(default)]
        criteria: Vec<String>,
    },
    SyntheticProbe(SyntheticProbe),
}

fn default_task_key() -> String {
    "1".to_string()
}

impl ScorerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ScorerSpec::ExactMatch { .. } => "exact_match",
            ScorerSpec::NumericTolerance { .. } => "numeric_tolerance",
            ScorerSpec::FunctionTests { .. } => "function_tests",
            ScorerSpec::LlmJudge { .. } => "llm_judge",
            ScorerSpec::SyntheticProbe(_) => "synthetic_probe",
        }
    }

    /// Checks the payload is well formed for its kind.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ScorerSpec::ExactMatch { expected } if expected.trim().is_empty() => {
                Err("exact_match needs a non-empty expected answer".into())
            }
            ScorerSpec::NumericTolerance {
                expected,
                tolerance,
            } if !expected.is_finite() || !(*tolerance >= 0.0 && tolerance.is_finite()) => {
                Err("numeric_tolerance needs a finite expected value and tolerance >= 0".into())
            }
            ScorerSpec::FunctionTests { program, .. } if program.trim().is_empty() => {
                Err("function_tests needs a program".into())
            }
            ScorerSpec::SyntheticProbe(p) => {
                let norm = p.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
                if p.direction.is_empty() || (norm - 1.0).abs() > 1e-9 {
                    Err(format!("probe direction must be a unit vector (norm {norm})"))
                } else if !p.threshold.is_finite() {
                    Err("probe threshold must be finite".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn needs_genome(&self) -> bool {
        matches!(self, ScorerSpec::SyntheticProbe(_))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Submission<'a> {
    Text(&'a str),
    Genome(&'a ModelGenome),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    /// The scorer itself is broken (syntax error, exception, malformed spec).
    #[error("scorer fault: {0}")]
    ScorerFault(String),
    /// Infrastructure could not run the scorer at all.
    #[error("sandbox failure: {0}")]
    SandboxFailure(String),
    #[error("submission type does not match scorer kind `{0}`")]
    SubmissionMismatch(&'static str),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Limits applied to sandboxed scorer processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerRuntime {
    pub python: String,
    pub wall_clock_secs: f64,
    pub cpu_secs: u64,
    pub memory_mb: u64,
}

impl Default for ScorerRuntime {
    fn default() -> Self {
        Self {
            python: "python3".to_string(),
            wall_clock_secs: 10.0,
            cpu_secs: 10,
            memory_mb: 1024,
        }
    }
}

impl ScorerRuntime {
    pub fn wall_clock(&self) -> Duration {
        Duration::from_secs_f64(self.wall_clock_secs)
    }
}

/// Text after the last `Answer:` marker (case-insensitive), with a
/// surrounding code fence removed; the whole text if no marker is present.
pub fn extract_answer(transcript: &str) -> String {
    let lower = transcript.to_lowercase();
    let tail = match lower.rfind("answer:") {
        Some(pos) => &transcript[pos + "answer:".len()..],
        None => transcript,
    };
    let mut t = tail.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map_or("", |(_, body)| body);
        t = rest.rsplit_once("```").map_or(rest, |(body, _)| body).trim();
    }
    t.to_string()
}

fn binary(ok: bool) -> f64 {
    if ok {
        1.0
    } else {
        0.0
    }
}

/// Grades one submission. Returns exactly 0.0 or 1.0; broken scorers and
/// infrastructure failures are reported as errors, never as 0.
pub fn score(
    spec: &ScorerSpec,
    instruction: &str,
    submission: Submission<'_>,
    runtime: &ScorerRuntime,
    judge: Option<(&JudgeClient, &PromptSet)>,
) -> Result<f64, ScoreError> {
    spec.validate().map_err(ScoreError::ScorerFault)?;
    match (spec, submission) {
        (ScorerSpec::SyntheticProbe(p), Submission::Genome(g)) => {
            let proj = g.project(&p.direction).ok_or_else(|| {
                ScoreError::ScorerFault(format!(
                    "probe dimension {} does not match genome dimension {}",
                    p.direction.len(),
                    g.dimension()
                ))
            })?;
            Ok(binary(proj >= p.threshold))
        }
        (ScorerSpec::SyntheticProbe(_), Submission::Text(_)) => {
            Err(ScoreError::SubmissionMismatch("synthetic_probe"))
        }
        (_, Submission::Genome(_)) => Err(ScoreError::SubmissionMismatch(spec.kind_name())),
        (ScorerSpec::ExactMatch { expected }, Submission::Text(s)) => {
            Ok(binary(expected.trim().to_lowercase() == s.trim().to_lowercase()))
        }
        (
            ScorerSpec::NumericTolerance {
                expected,
                tolerance,
            },
            Submission::Text(s),
        ) => {
            let cleaned = s.trim().trim_end_matches(['.', ',']);
            Ok(match cleaned.parse::<f64>() {
                Ok(v) => binary((v - expected).abs() < *tolerance),
                Err(_) => 0.0,
            })
        }
        (ScorerSpec::LlmJudge { criteria }, Submission::Text(s)) => {
            let (client, prompts) = judge.ok_or_else(|| {
                ScoreError::SandboxFailure("llm_judge scorer needs a judge provider".into())
            })?;
            let criteria = if criteria.is_empty() {
                "None".to_string()
            } else {
                criteria
                    .iter()
                    .map(|c| format!("- {c}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            };
            let prompt = prompts.render(
                PromptKind::JudgeUser,
                &[
                    ("instructions", instruction),
                    ("submission", s),
                    ("criteria", &criteria),
                ],
            );
            match client.decide(JudgeKind::TaskJudge, prompts.get(PromptKind::JudgeSystem), &prompt) {
                Ok(v) => Ok(binary(v.decision == Decision::Yes)),
                Err(e) => Err(ScoreError::ScorerFault(e.to_string())),
            }
        }
        (ScorerSpec::FunctionTests { program, task_key }, Submission::Text(s)) => {
            run_function_tests(program, task_key, s, runtime)
        }
    }
}

#[cfg(all(unix, feature = "sandbox"))]
fn run_function_tests(
    program: &str,
    task_key: &str,
    submission: &str,
    runtime: &ScorerRuntime,
) -> Result<f64, ScoreError> {
    super::sandbox::run_task_family(program, task_key, submission, runtime)
}

#[cfg(not(all(unix, feature = "sandbox")))]
fn run_function_tests(
    _program: &str,
    _task_key: &str,
    _submission: &str,
    _runtime: &ScorerRuntime,
) -> Result<f64, ScoreError> {
    Err(ScoreError::SandboxFailure(
        "process sandbox is not available on this build".into(),
    ))
}

/// Has `genome` attempt one task through the subject provider and grades
/// the attempt. Probe tasks are graded on the genome directly. Scorer faults
/// count as a failed task; an unreachable subject provider is an error.
pub fn evaluate_task(
    genome: &ModelGenome,
    instruction: &str,
    spec: &ScorerSpec,
    providers: &Providers,
) -> Result<TaskScore, ProviderError> {
    let result = if spec.needs_genome() {
        score(spec, instruction, Submission::Genome(genome), &providers.scorer, None)
    } else {
        providers
            .subject
            .answer(
                genome,
                providers.prompts.get(PromptKind::EvalSystem),
                instruction,
                &providers.decode,
            )
            .map_err(ScoreError::from)
            .and_then(|raw| {
                let answer = extract_answer(&raw);
                score(
                    spec,
                    instruction,
                    Submission::Text(&answer),
                    &providers.scorer,
                    Some((&providers.judge, providers.prompts.as_ref())),
                )
            })
    };
    match result {
        Ok(v) => Ok(TaskScore::Score(v)),
        Err(ScoreError::Provider(e)) => Err(e),
        Err(e) => {
            log::debug!("task evaluation failed for {}: {e}", genome.id);
            Ok(TaskScore::Failure)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{GenomeId, Matrix};
    use std::collections::BTreeMap;

    fn rt() -> ScorerRuntime {
        ScorerRuntime::default()
    }

    #[test]
    fn exact_match_trims_and_ignores_case() {
        let spec = ScorerSpec::ExactMatch {
            expected: "C".into(),
        };
        assert_eq!(score(&spec, "", Submission::Text("c "), &rt(), None).unwrap(), 1.0);
        assert_eq!(score(&spec, "", Submission::Text("d"), &rt(), None).unwrap(), 0.0);
    }

    #[test]
    fn numeric_tolerance_is_strict() {
        let spec = ScorerSpec::NumericTolerance {
            expected: 3.03,
            tolerance: 0.05,
        };
        assert_eq!(score(&spec, "", Submission::Text("3.05"), &rt(), None).unwrap(), 1.0);
        assert_eq!(score(&spec, "", Submission::Text("3.2"), &rt(), None).unwrap(), 0.0);
        assert_eq!(score(&spec, "", Submission::Text("three"), &rt(), None).unwrap(), 0.0);
    }

    #[test]
    fn probe_inner_product_rule() {
        let mut t = BTreeMap::new();
        t.insert("w".to_string(), Matrix::from_row_slice(1, 3, &[0.7, -5.0, 2.0]));
        let g = ModelGenome::new(GenomeId(1), t);
        let spec = ScorerSpec::SyntheticProbe(SyntheticProbe {
            direction: vec![1.0, 0.0, 0.0],
            threshold: 0.0,
            noise_seed: 0,
        });
        assert_eq!(score(&spec, "", Submission::Genome(&g), &rt(), None).unwrap(), 1.0);
        assert_eq!(
            score(&spec, "", Submission::Text("x"), &rt(), None),
            Err(ScoreError::SubmissionMismatch("synthetic_probe"))
        );
        let bad = ScorerSpec::SyntheticProbe(SyntheticProbe {
            direction: vec![1.0, 1.0, 0.0],
            threshold: 0.0,
            noise_seed: 0,
        });
        assert!(matches!(
            score(&bad, "", Submission::Genome(&g), &rt(), None),
            Err(ScoreError::ScorerFault(_))
        ));
    }

    #[test]
    fn answer_extraction() {
        assert_eq!(extract_answer("reasoning...\nAnswer: 42"), "42");
        assert_eq!(extract_answer("answer: a\nAnswer: b"), "b");
        assert_eq!(
            extract_answer("Answer:\n```python\ndef f():\n    return 1\n```"),
            "def f():\n    return 1"
        );
        assert_eq!(extract_answer("plain"), "plain");
    }

    #[test]
    fn spec_serialization_is_tagged() {
        let spec = ScorerSpec::NumericTolerance {
            expected: 1.5,
            tolerance: 0.1,
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"numeric_tolerance\""));
        let back: ScorerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
