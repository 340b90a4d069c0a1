//! OpenAI-compatible HTTP providers.

use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{
    normalize, Decode, Embedder, JudgeBackend, JudgeKind, PromptKind, PromptSet, ProviderConfig,
    ProviderError, RewardModel, Scientist, ScientistRequest, Subject,
};
use crate::genome::ModelGenome;

pub const API_KEY_VAR: &str = "ACDC_API_KEY";

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Shared transport: request cap, timeout, bearer auth, bounded retries.
#[derive(Clone)]
pub struct ChatClient {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry_budget: u32,
    timeout: Duration,
    gate: Arc<Gate>,
}

impl ChatClient {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let endpoint = config
            .endpoint
            .clone()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| ProviderError::Unavailable("http provider has no endpoint".into()))?;
        let model = config
            .model_name
            .clone()
            .filter(|m| !m.is_empty())
            .ok_or_else(|| ProviderError::Unavailable("http provider has no model_name".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model,
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            retry_budget: config.retry_budget,
            timeout: config.timeout(),
            gate: Arc::new(Gate::new(config.request_cap)),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn post_once(&self, path: &str, body: &Value) -> Result<Value, (ProviderError, bool)> {
        let _permit = self.gate.acquire();
        let url = format!("{}{path}", self.endpoint);
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err((ProviderError::Timeout(self.timeout), true)),
            Err(e) => return Err((ProviderError::Unavailable(e.to_string()), true)),
        };
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (ProviderError::BadResponse(e.to_string()), true))?;
        if status == 429 || status >= 500 {
            return Err((ProviderError::Unavailable(format!("HTTP {status}: {text}")), true));
        }
        if status >= 400 {
            return Err((ProviderError::Unavailable(format!("HTTP {status}: {text}")), false));
        }
        serde_json::from_str(&text)
            .map_err(|e| (ProviderError::BadResponse(format!("{e}: {text}")), false))
    }

    /// POSTs `body` to `{endpoint}{path}`, retrying transient failures at
    /// most `retry_budget` times.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Ok(v) => return Ok(v),
                Err((e, transient)) => {
                    if !transient || attempt >= self.retry_budget {
                        return Err(e);
                    }
                    attempt += 1;
                    log::warn!("retrying {path} after: {e}");
                    thread::sleep(Duration::from_millis(200 * (1 << attempt.min(5))));
                }
            }
        }
    }

    pub fn chat_with_model(
        &self,
        model: &str,
        system: &str,
        user: &str,
        decode: &Decode,
    ) -> Result<String, ProviderError> {
        let mut messages = Vec::new();
        if !system.is_empty() {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": user}));
        let body = json!({
            "model": model,
            "messages": messages,
            "temperature": decode.temperature,
            "top_p": decode.top_p,
            "max_tokens": decode.max_tokens,
        });
        let v = self.post("/v1/chat/completions", &body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse(format!("no message content in {v}")))
    }

    pub fn chat(&self, system: &str, user: &str, decode: &Decode) -> Result<String, ProviderError> {
        self.chat_with_model(&self.model, system, user, decode)
    }
}

pub struct HttpScientist {
    pub client: ChatClient,
    pub decode: Decode,
}

impl Scientist for HttpScientist {
    fn respond(&self, request: &ScientistRequest) -> Result<String, ProviderError> {
        self.client.chat(&request.system, &request.user, &self.decode)
    }
}

pub struct HttpJudge {
    pub client: ChatClient,
    pub decode: Decode,
}

impl JudgeBackend for HttpJudge {
    fn respond(&self, _kind: JudgeKind, system: &str, prompt: &str) -> Result<String, ProviderError> {
        self.client.chat(system, prompt, &self.decode)
    }
}

/// Subject model served over HTTP. A `{genome_id}` placeholder in the model
/// name selects a per-genome deployment.
pub struct HttpSubject {
    pub client: ChatClient,
}

impl Subject for HttpSubject {
    fn answer(
        &self,
        genome: &ModelGenome,
        system: &str,
        instruction: &str,
        decode: &Decode,
    ) -> Result<String, ProviderError> {
        let model = self.client.model().replace("{genome_id}", &genome.id.to_string());
        self.client.chat_with_model(&model, system, instruction, decode)
    }
}

pub struct HttpEmbedder {
    pub client: ChatClient,
    pub dimension: usize,
}

impl Embedder for HttpEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = json!({"model": self.client.model(), "input": text});
        let v = self.client.post("/v1/embeddings", &body)?;
        let mut out: Vec<f64> = v
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::BadResponse("no embedding in response".into()))?
            .iter()
            .map(|x| x.as_f64().unwrap_or(f64::NAN))
            .collect();
        if out.len() != self.dimension || out.iter().any(|x| !x.is_finite()) {
            return Err(ProviderError::BadResponse(format!(
                "embedding of dimension {} (expected {})",
                out.len(),
                self.dimension
            )));
        }
        if normalize(&mut out) == 0.0 {
            return Err(ProviderError::BadResponse("zero embedding".into()));
        }
        Ok(out)
    }
}

/// Reward model behind a chat endpoint that replies with a bare number.
pub struct HttpReward {
    pub client: ChatClient,
    pub prompts: Arc<PromptSet>,
    pub decode: Decode,
}

fn first_number(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .filter(|t| t.chars().any(|c| c.is_ascii_digit()))
        .find_map(|t| t.parse::<f64>().ok())
}

impl RewardModel for HttpReward {
    fn reward(&self, question: &str, answer: &str) -> Result<f64, ProviderError> {
        let prompt = self
            .prompts
            .render(PromptKind::RewardUser, &[("question", question), ("answer", answer)]);
        let reply = self.client.chat("", &prompt, &self.decode)?;
        first_number(&reply).ok_or_else(|| ProviderError::BadResponse(format!("no score in `{reply}`")))
    }
}
