//! Task archives and the task-evolution pipeline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::oracles::{
    cosine, extract_answer, score, Decision, EmbeddingIndex, JudgeError, JudgeKind, PromptKind, ProviderError,
    Providers, ScientistPurpose, ScientistRequest, ScoreError, ScorerSpec, Submission,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("scientist reply unparseable after {attempts} attempts: {reason}")]
    ScientistUnparseable { attempts: u32, reason: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("scorer sandbox failure: {0}")]
    Sandbox(String),
    #[error("task not accepted after {rounds} reflection rounds: {reason}")]
    NotValidated { rounds: u32, reason: String },
    #[error("embedding error: {0}")]
    Embedding(String),
    #[error("task {0} is not in the archive")]
    UnknownTask(TaskId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{:05}", self.0)
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('t').unwrap_or(s);
        digits
            .parse()
            .map(TaskId)
            .map_err(|_| format!("invalid task id `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationKind {
    Seed,
    Harder,
    Easier,
    Novel,
}

impl AdaptationKind {
    pub fn name(self) -> &'static str {
        match self {
            AdaptationKind::Seed => "seed",
            AdaptationKind::Harder => "harder",
            AdaptationKind::Easier => "easier",
            AdaptationKind::Novel => "novel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationType {
    IncreaseDifficulty,
    DecreaseDifficulty,
    Novel,
}

impl AdaptationType {
    pub fn kind(self) -> AdaptationKind {
        match self {
            AdaptationType::IncreaseDifficulty => AdaptationKind::Harder,
            AdaptationType::DecreaseDifficulty => AdaptationKind::Easier,
            AdaptationType::Novel => AdaptationKind::Novel,
        }
    }
}

/// One committed task. Immutable once in the global archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: TaskId,
    pub name: String,
    pub description: String,
    pub capability_tag: String,
    pub estimated_difficulty: u8,
    pub instruction_template: String,
    pub scorer: ScorerSpec,
    pub embedding: Vec<f64>,
    pub parent_id: Option<TaskId>,
    pub adaptation_kind: AdaptationKind,
    /// Task epoch in which the record was committed.
    pub epoch: u64,
    pub reflections: u32,
}

impl TaskRecord {
    /// JSON summary in the scientist's response format.
    pub fn summary(&self) -> Value {
        let mut v = json!({
            "name_of_task": self.name,
            "description_of_task": self.description,
            "capability_being_measured": self.capability_tag,
            "estimated_human_difficulty": self.estimated_difficulty.to_string(),
            "example_instruction": self.instruction_template,
        });
        match &self.scorer {
            ScorerSpec::FunctionTests { program, .. } => v["task_family"] = json!(program),
            other => v["scorer"] = serde_json::to_value(other).expect("scorer json"),
        }
        v
    }

    pub fn embedding_text(&self, providers: &Providers) -> String {
        embedding_text(
            providers,
            &self.name,
            &self.description,
            &self.capability_tag,
            self.estimated_difficulty,
            &self.instruction_template,
        )
    }

    fn check(&self) -> Result<(), String> {
        if !(1..=5).contains(&self.estimated_difficulty) {
            return Err(format!("{}: difficulty {} outside 1..=5", self.id, self.estimated_difficulty));
        }
        let norm = self.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(format!("{}: embedding norm {norm}", self.id));
        }
        if self.parent_id.is_none() != (self.adaptation_kind == AdaptationKind::Seed) {
            return Err(format!("{}: parent must be absent exactly for seed tasks", self.id));
        }
        Ok(())
    }
}

fn embedding_text(
    providers: &Providers,
    name: &str,
    description: &str,
    capability: &str,
    difficulty: u8,
    instruction: &str,
) -> String {
    providers.prompts.render(
        PromptKind::TaskEmbedding,
        &[
            ("name_of_task", name),
            ("description_of_task", description),
            ("capability_being_measured", capability),
            ("estimated_human_difficulty", &difficulty.to_string()),
            ("example_instruction", instruction),
        ],
    )
}

/// Task definition supplied up front rather than generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedTask {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub capability: String,
    #[serde(default = "default_difficulty")]
    pub difficulty: u8,
    pub instruction: String,
    pub scorer: ScorerSpec,
}

fn default_difficulty() -> u8 {
    3
}

/// A proposed task that has not been committed yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTask {
    pub name: String,
    pub description: String,
    pub capability_tag: String,
    pub estimated_difficulty: u8,
    pub instruction: String,
    pub scorer: ScorerSpec,
    pub done: bool,
    pub parent_id: Option<TaskId>,
    pub adaptation_kind: AdaptationKind,
    pub reflections: u32,
    /// Raw scientist replies, oldest first.
    pub transcripts: Vec<String>,
}

impl CandidateTask {
    pub fn summary(&self) -> Value {
        let mut v = json!({
            "name_of_task": self.name,
            "description_of_task": self.description,
            "capability_being_measured": self.capability_tag,
            "estimated_human_difficulty": self.estimated_difficulty.to_string(),
            "done": if self.done { "True" } else { "False" },
            "example_instruction": self.instruction,
        });
        match &self.scorer {
            ScorerSpec::FunctionTests { program, .. } => v["task_family"] = json!(program),
            other => v["scorer"] = serde_json::to_value(other).expect("scorer json"),
        }
        v
    }

    pub fn embedding_text(&self, providers: &Providers) -> String {
        embedding_text(
            providers,
            &self.name,
            &self.description,
            &self.capability_tag,
            self.estimated_difficulty,
            &self.instruction,
        )
    }

    pub fn into_record(self, id: TaskId, embedding: Vec<f64>, epoch: u64) -> TaskRecord {
        TaskRecord {
            id,
            name: self.name,
            description: self.description,
            capability_tag: self.capability_tag,
            estimated_difficulty: self.estimated_difficulty,
            instruction_template: self.instruction,
            scorer: self.scorer,
            embedding,
            parent_id: self.parent_id,
            adaptation_kind: self.adaptation_kind,
            epoch,
            reflections: self.reflections,
        }
    }
}

impl From<SeedTask> for CandidateTask {
    fn from(s: SeedTask) -> Self {
        CandidateTask {
            name: s.name,
            description: s.description,
            capability_tag: s.capability,
            estimated_difficulty: s.difficulty.clamp(1, 5),
            instruction: s.instruction,
            scorer: s.scorer,
            done: true,
            parent_id: None,
            adaptation_kind: AdaptationKind::Seed,
            reflections: 0,
            transcripts: Vec::new(),
        }
    }
}

/// Active working set plus the append-only global archive. A task's id is
/// its position in `global`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskArchives {
    pub q_max: usize,
    pub active: Vec<TaskId>,
    pub global: Vec<TaskRecord>,
    pub epoch: u64,
    /// Per-task (generation, pass rate) observations, kept beside the
    /// immutable records.
    pub pass_rates: BTreeMap<TaskId, Vec<(u64, f64)>>,
}

impl TaskArchives {
    pub fn new(q_max: usize) -> Self {
        Self {
            q_max,
            active: Vec::new(),
            global: Vec::new(),
            epoch: 0,
            pass_rates: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: TaskId) -> Option<&TaskRecord> {
        self.global.get(id.0 as usize).filter(|r| r.id == id)
    }

    pub fn next_id(&self) -> TaskId {
        TaskId(self.global.len() as u64)
    }

    pub fn active_records(&self) -> Vec<&TaskRecord> {
        self.active.iter().map(|&id| &self.global[id.0 as usize]).collect()
    }

    pub fn is_active(&self, id: TaskId) -> bool {
        self.active.contains(&id)
    }

    pub fn record_pass_rate(&mut self, id: TaskId, generation: u64, rate: f64) {
        self.pass_rates.entry(id).or_default().push((generation, rate));
    }

    /// Cosine index over every global task.
    pub fn embedding_index(&self, dim: usize) -> Result<EmbeddingIndex<TaskId>, TaskError> {
        let mut idx = EmbeddingIndex::new(dim);
        for r in &self.global {
            idx.insert(r.id, &r.embedding).map_err(TaskError::Embedding)?;
        }
        Ok(idx)
    }

    /// Checks the structural invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.active.len() > self.q_max {
            return Err(format!("{} active tasks exceed capacity {}", self.active.len(), self.q_max));
        }
        let mut seen = BTreeSet::new();
        for &id in &self.active {
            if self.get(id).is_none() {
                return Err(format!("active task {id} missing from the global archive"));
            }
            if !seen.insert(id) {
                return Err(format!("task {id} active twice"));
            }
        }
        for (i, r) in self.global.iter().enumerate() {
            if r.id.0 != i as u64 {
                return Err(format!("global archive position {i} holds {}", r.id));
            }
            r.check()?;
            if let Some(p) = r.parent_id {
                if p >= r.id {
                    return Err(format!("{} has parent {p} that is not older", r.id));
                }
            }
        }
        Ok(())
    }
}

/// Maps an average pass rate to the kind of adaptation a task needs.
pub fn classify_adaptation<R: Rng + ?Sized>(
    pass_rate: f64,
    threshold: f64,
    novel_probability: f64,
    rng: &mut R,
) -> AdaptationType {
    if pass_rate >= threshold {
        AdaptationType::IncreaseDifficulty
    } else if pass_rate <= 0.0 {
        AdaptationType::DecreaseDifficulty
    } else if rng.random_bool(novel_probability.clamp(0.0, 1.0)) {
        AdaptationType::Novel
    } else {
        AdaptationType::IncreaseDifficulty
    }
}

/// Fields parsed out of one scientist reply.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub thought: String,
    pub name: String,
    pub description: String,
    pub capability: String,
    pub difficulty: u8,
    pub instruction: String,
    pub scorer: ScorerSpec,
    pub done: bool,
}

/// Escapes raw control characters inside JSON string literals, a common
/// defect in model-written JSON.
fn escape_raw_controls(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_str = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_str {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            } else if c == '\n' {
                out.push_str("\\n");
                continue;
            } else if c == '\r' {
                continue;
            } else if c == '\t' {
                out.push_str("\\t");
                continue;
            }
        } else if c == '"' {
            in_str = true;
        }
        out.push(c);
    }
    out
}

fn json_block(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let body = &text[start..=end];
    serde_json::from_str(body)
        .ok()
        .or_else(|| serde_json::from_str(&escape_raw_controls(body)).ok())
}

fn field_string(v: &Value, key: &str) -> Option<String> {
    match v.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

fn field_bool(v: &Value, key: &str) -> bool {
    match v.get(key) {
        Some(Value::Bool(b)) => *b,
        Some(Value::String(s)) => s.trim().eq_ignore_ascii_case("true"),
        _ => false,
    }
}

/// Parses a reply of the form `THOUGHT: ... RESPONSE JSON: {...}`. The JSON
/// may be fenced; values may be strings or bare JSON scalars. The scorer is
/// either a `scorer` object or a `task_family` Python program.
pub fn parse_scientist_reply(text: &str) -> Result<ParsedReply, String> {
    let lower = text.to_lowercase();
    let marker = lower
        .find("response json")
        .ok_or_else(|| "no RESPONSE JSON section".to_string())?;
    let thought = lower
        .find("thought:")
        .filter(|&t| t < marker)
        .map(|t| text[t + "thought:".len()..marker].trim().to_string())
        .unwrap_or_default();
    let v = json_block(&text[marker..]).ok_or_else(|| "RESPONSE JSON is not a JSON object".to_string())?;
    let need = |key: &str| field_string(&v, key).ok_or_else(|| format!("missing field `{key}`"));
    let name = need("name_of_task")?;
    let description = need("description_of_task")?;
    let capability = field_string(&v, "capability_being_measured").unwrap_or_default();
    let difficulty = field_string(&v, "estimated_human_difficulty")
        .and_then(|d| d.trim().trim_matches('"').parse::<f64>().ok())
        .map(|d| d.round().clamp(1.0, 5.0) as u8)
        .ok_or_else(|| "missing or non-numeric `estimated_human_difficulty`".to_string())?;
    let instruction = need("example_instruction")?;
    let scorer = match v.get("scorer") {
        Some(Value::String(s)) => serde_json::from_str::<ScorerSpec>(s).map_err(|e| format!("scorer: {e}"))?,
        Some(obj) => serde_json::from_value::<ScorerSpec>(obj.clone()).map_err(|e| format!("scorer: {e}"))?,
        None => ScorerSpec::FunctionTests {
            program: need("task_family")?,
            task_key: "1".into(),
        },
    };
    if name.trim().is_empty() || instruction.trim().is_empty() {
        return Err("empty name or instruction".into());
    }
    Ok(ParsedReply {
        thought,
        name,
        description,
        capability,
        difficulty,
        instruction,
        scorer,
        done: field_bool(&v, "done"),
    })
}

fn apply_reply(candidate: &mut CandidateTask, parsed: ParsedReply) {
    candidate.name = parsed.name;
    candidate.description = parsed.description;
    candidate.capability_tag = parsed.capability;
    candidate.estimated_difficulty = parsed.difficulty;
    candidate.instruction = parsed.instruction;
    candidate.scorer = parsed.scorer;
    candidate.done = parsed.done;
}

/// Asks the scientist, re-asking on unparseable replies within the
/// provider's retry budget.
fn ask_scientist(
    providers: &Providers,
    mut request: ScientistRequest,
) -> Result<(ParsedReply, Vec<String>), TaskError> {
    let mut transcripts = Vec::new();
    let mut reason = String::new();
    let attempts = providers.scientist_retries + 1;
    for attempt in 0..attempts {
        let reply = providers.scientist.respond(&request)?;
        match parse_scientist_reply(&reply) {
            Ok(parsed) => {
                transcripts.push(reply);
                return Ok((parsed, transcripts));
            }
            Err(e) => {
                log::debug!("scientist reply rejected: {e}");
                reason = e;
                transcripts.push(reply);
                request.key = crate::oracles::mix_key(request.key, attempt as u64 + 1);
            }
        }
    }
    Err(TaskError::ScientistUnparseable { attempts, reason })
}

fn system_prompt(providers: &Providers, max_reflections: u32) -> String {
    providers
        .prompts
        .render(PromptKind::TaskSystem, &[("num_rounds", &max_reflections.to_string())])
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json value")
}

/// Proposes an adaptation of `parent` with three reference tasks as context.
/// Novel adaptations use the "completely novel" or the "adapt similar"
/// prompt with equal probability.
pub fn propose_task<R: Rng + ?Sized>(
    parent: &TaskRecord,
    references: &[&TaskRecord],
    kind: AdaptationType,
    providers: &Providers,
    max_reflections: u32,
    key: u64,
    rng: &mut R,
) -> Result<CandidateTask, TaskError> {
    let prompt = match kind {
        AdaptationType::IncreaseDifficulty => PromptKind::TaskHarder,
        AdaptationType::DecreaseDifficulty => PromptKind::TaskEasier,
        AdaptationType::Novel => {
            if rng.random_bool(0.5) {
                PromptKind::TaskNovel
            } else {
                PromptKind::TaskAdaptSimilar
            }
        }
    };
    let parent_json = parent.summary();
    let others = Value::Array(references.iter().map(|r| r.summary()).collect());
    let user = providers.prompts.render(
        prompt,
        &[
            ("original_task_json", &pretty(&parent_json)),
            ("other_task_jsons", &pretty(&others)),
        ],
    );
    let request = ScientistRequest {
        purpose: ScientistPurpose::Propose(prompt),
        system: system_prompt(providers, max_reflections),
        user,
        subject: Some(parent_json),
        feedback: None,
        key,
    };
    let (parsed, transcripts) = ask_scientist(providers, request)?;
    let mut c = CandidateTask {
        name: String::new(),
        description: String::new(),
        capability_tag: String::new(),
        estimated_difficulty: 1,
        instruction: String::new(),
        scorer: parsed.scorer.clone(),
        done: false,
        parent_id: Some(parent.id),
        adaptation_kind: kind.kind(),
        reflections: 0,
        transcripts,
    };
    apply_reply(&mut c, parsed);
    Ok(c)
}

/// Generates one initialization task from the previously generated one.
/// Without a parent the task is recorded as a root (seed) task.
pub fn propose_initial_task(
    previous: Option<&TaskRecord>,
    similar: bool,
    providers: &Providers,
    max_reflections: u32,
    key: u64,
) -> Result<CandidateTask, TaskError> {
    let prompt = if similar {
        PromptKind::TaskInitialSimilar
    } else {
        PromptKind::TaskInitialNovel
    };
    let prev = previous.map(TaskRecord::summary);
    let user = providers.prompts.render(
        prompt,
        &[("prev_json", &prev.as_ref().map_or_else(|| "{}".to_string(), pretty))],
    );
    let request = ScientistRequest {
        purpose: ScientistPurpose::Propose(prompt),
        system: system_prompt(providers, max_reflections),
        user,
        subject: prev,
        feedback: None,
        key,
    };
    let (parsed, transcripts) = ask_scientist(providers, request)?;
    let mut c = CandidateTask {
        name: String::new(),
        description: String::new(),
        capability_tag: String::new(),
        estimated_difficulty: 1,
        instruction: String::new(),
        scorer: parsed.scorer.clone(),
        done: false,
        parent_id: previous.map(|p| p.id),
        adaptation_kind: if previous.is_some() {
            AdaptationKind::Novel
        } else {
            AdaptationKind::Seed
        },
        reflections: 0,
        transcripts,
    };
    apply_reply(&mut c, parsed);
    Ok(c)
}

/// Outcome of the novelty gate.
#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyVerdict {
    pub accepted: bool,
    pub neighbors: Vec<(TaskId, f64)>,
    pub transcripts: Vec<String>,
}

/// Compares a candidate with its three nearest archived tasks and asks the
/// judge whether it is new. An empty archive accepts without a judge call;
/// an unparseable judge rejects.
pub fn novelty_gate(
    candidate: &CandidateTask,
    embedding: &[f64],
    index: &EmbeddingIndex<TaskId>,
    lookup: &dyn Fn(TaskId) -> Option<Value>,
    providers: &Providers,
) -> Result<NoveltyVerdict, TaskError> {
    if index.is_empty() {
        return Ok(NoveltyVerdict {
            accepted: true,
            neighbors: Vec::new(),
            transcripts: Vec::new(),
        });
    }
    let neighbors = index.top_k(embedding, 3);
    let closest: Vec<Value> = neighbors
        .iter()
        .map(|&(id, sim)| {
            let mut v = lookup(id).unwrap_or_else(|| json!({}));
            v["similarity"] = json!((sim * 1e6).round() / 1e6);
            v
        })
        .collect();
    let mut new_task = candidate.summary();
    if let Some(obj) = new_task.as_object_mut() {
        obj.remove("done");
    }
    let prompt = providers.prompts.render(
        PromptKind::NoveltyUser,
        &[
            ("new_task", &pretty(&new_task)),
            ("closest_tasks", &pretty(&Value::Array(closest))),
        ],
    );
    let system = providers.prompts.get(PromptKind::NoveltySystem);
    Ok(match providers.judge.decide(JudgeKind::Novelty, system, &prompt) {
        Ok(v) => NoveltyVerdict {
            accepted: v.decision == Decision::Yes,
            neighbors,
            transcripts: v.transcripts,
        },
        Err(JudgeError::Provider { source, .. }) => return Err(TaskError::Provider(source)),
        Err(e) => {
            log::warn!("novelty judge unparseable for `{}`; rejecting: {e}", candidate.name);
            NoveltyVerdict {
                accepted: false,
                neighbors,
                transcripts: e.transcripts(),
            }
        }
    })
}

/// One trial of a candidate's scorer: the scientist attempts the task and the
/// scorer grades the attempt. Returns whether the scorer ran cleanly and the
/// feedback text for the reflection prompt.
fn trial(candidate: &CandidateTask, providers: &Providers, key: u64) -> Result<(bool, String), TaskError> {
    if let Err(e) = candidate.scorer.validate() {
        return Ok((false, format!("Scorer specification is invalid: {e}")));
    }
    if candidate.scorer.needs_genome() {
        return Ok((true, "Scorer specification is well formed.".to_string()));
    }
    let request = ScientistRequest {
        purpose: ScientistPurpose::Attempt,
        system: providers.prompts.get(PromptKind::EvalSystem).to_string(),
        user: candidate.instruction.clone(),
        subject: Some(candidate.summary()),
        feedback: None,
        key,
    };
    let attempt = providers.scientist.respond(&request)?;
    let answer = extract_answer(&attempt);
    match score(
        &candidate.scorer,
        &candidate.instruction,
        Submission::Text(&answer),
        &providers.scorer,
        Some((&providers.judge, providers.prompts.as_ref())),
    ) {
        Ok(v) => Ok((
            true,
            format!("Agent answer:\n{answer}\n\nScore: {v}"),
        )),
        Err(ScoreError::ScorerFault(e)) => Ok((false, format!("Error while scoring the task: {e}"))),
        Err(ScoreError::SubmissionMismatch(k)) => {
            Ok((false, format!("Scorer of kind {k} cannot grade a text submission")))
        }
        Err(ScoreError::SandboxFailure(e)) => Err(TaskError::Sandbox(e)),
        Err(ScoreError::Provider(e)) => Err(TaskError::Provider(e)),
    }
}

/// Reflection loop: accept when the scorer runs cleanly and the scientist
/// has marked the task done; otherwise feed the trial result back, at most
/// `max_reflections` times.
pub fn validate_task(
    mut candidate: CandidateTask,
    providers: &Providers,
    max_reflections: u32,
    key: u64,
) -> Result<CandidateTask, TaskError> {
    let mut round = 0;
    loop {
        let (clean, feedback) = trial(&candidate, providers, crate::oracles::mix_key(key, 2 * round as u64))?;
        if clean && candidate.done {
            candidate.reflections = round;
            return Ok(candidate);
        }
        if round >= max_reflections {
            return Err(TaskError::NotValidated {
                rounds: round,
                reason: if clean {
                    "scientist never marked the task done".into()
                } else {
                    feedback
                },
            });
        }
        round += 1;
        let user = providers.prompts.render(
            PromptKind::TaskReflection,
            &[
                ("current_round", &round.to_string()),
                ("num_rounds", &max_reflections.to_string()),
                ("eval_response", &feedback),
            ],
        );
        let request = ScientistRequest {
            purpose: ScientistPurpose::Reflect {
                round,
                of: max_reflections,
            },
            system: system_prompt(providers, max_reflections),
            user,
            subject: Some(candidate.summary()),
            feedback: Some(feedback),
            key: crate::oracles::mix_key(key, 2 * round as u64 + 1),
        };
        let (parsed, transcripts) = ask_scientist(providers, request)?;
        candidate.transcripts.extend(transcripts);
        apply_reply(&mut candidate, parsed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpossibleOutcome {
    Keep,
    Replace { with: TaskId },
}

/// Minimal criterion for tasks: a task nobody solves is swapped for its
/// nearest ancestor that is not already active. Seed tasks, and tasks whose
/// ancestors are all active, are kept.
pub fn impossible_gate(task: TaskId, bits: &[bool], archives: &TaskArchives) -> ImpossibleOutcome {
    if bits.iter().any(|&b| b) {
        return ImpossibleOutcome::Keep;
    }
    let mut cursor = archives.get(task).and_then(|r| r.parent_id);
    while let Some(p) = cursor {
        if !archives.is_active(p) {
            return ImpossibleOutcome::Replace { with: p };
        }
        cursor = archives.get(p).and_then(|r| r.parent_id);
    }
    ImpossibleOutcome::Keep
}

/// Replaces the active slot holding `task` in place.
pub fn apply_replacement(archives: &mut TaskArchives, task: TaskId, with: TaskId) -> Result<(), TaskError> {
    if archives.get(with).is_none() {
        return Err(TaskError::UnknownTask(with));
    }
    let slot = archives
        .active
        .iter()
        .position(|&t| t == task)
        .ok_or(TaskError::UnknownTask(task))?;
    archives.active[slot] = with;
    Ok(())
}

/// Appends accepted tasks to the global archive, makes them the newest
/// active tasks, evicts the oldest active entries beyond capacity and
/// advances the epoch. Records must carry consecutive ids starting at
/// `archives.next_id()`.
pub fn commit_tasks(archives: &mut TaskArchives, accepted: Vec<TaskRecord>) -> Result<(), TaskError> {
    for (offset, r) in accepted.iter().enumerate() {
        let expect = TaskId(archives.global.len() as u64 + offset as u64);
        if r.id != expect {
            return Err(TaskError::UnknownTask(r.id));
        }
    }
    for r in accepted {
        archives.active.push(r.id);
        archives.global.push(r);
    }
    if archives.active.len() > archives.q_max {
        let excess = archives.active.len() - archives.q_max;
        archives.active.drain(..excess);
    }
    archives.epoch += 1;
    Ok(())
}

/// Uniformly samples up to `n` active tasks other than `exclude` (falling
/// back to including it when too few remain).
pub fn sample_references<'a, R: Rng + ?Sized>(
    archives: &'a TaskArchives,
    exclude: TaskId,
    n: usize,
    rng: &mut R,
) -> Vec<&'a TaskRecord> {
    let pool: Vec<&TaskRecord> = archives
        .active_records()
        .into_iter()
        .filter(|r| r.id != exclude)
        .collect();
    let pool = if pool.len() >= n {
        pool
    } else {
        archives.active_records()
    };
    let take = n.min(pool.len());
    sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect()
}

/// Exhaustive cosine scan, used to cross-check the index.
pub fn exhaustive_top_k(global: &[TaskRecord], query: &[f64], k: usize) -> Vec<(TaskId, f64)> {
    let mut all: Vec<(TaskId, f64)> = global.iter().map(|r| (r.id, cosine(&r.embedding, query))).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}
