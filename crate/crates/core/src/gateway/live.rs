//! OpenAI-compatible HTTP backends (`/chat/completions`, `/embeddings`).

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, CompletionBackend, CompletionRequest, EmbeddingBackend, PromptBundle};

pub const ENV_API_BASE: &str = "TOMUQ_API_BASE";
pub const ENV_API_KEY: &str = "TOMUQ_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub base_url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub embedding_model: Option<String>,
    pub timeout: Duration,
    /// Minimum spacing between consecutive requests.
    pub min_interval: Duration,
}

impl LiveConfig {
    /// Reads the base URL and key from `TOMUQ_API_BASE` / `TOMUQ_API_KEY`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, BackendError> {
        let base_url =
            std::env::var(ENV_API_BASE).map_err(|_| BackendError::Rejected(format!("{ENV_API_BASE} is not set")))?;
        Ok(Self {
            base_url,
            api_key: std::env::var(ENV_API_KEY).ok(),
            model: model.into(),
            embedding_model: None,
            timeout: Duration::from_secs(120),
            min_interval: Duration::ZERO,
        })
    }
}

pub struct LiveBackend {
    config: LiveConfig,
    id: String,
    embedding_id: String,
    client: reqwest::blocking::Client,
    next_slot: Mutex<Instant>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let base = config.base_url.trim_end_matches('/');
        let id = format!("live:{base}:{}", config.model);
        let embedding_id = format!("live:{base}:{}", config.embedding_model.as_deref().unwrap_or("-"));
        Ok(Self {
            config,
            id,
            embedding_id,
            client,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.base_url.trim_end_matches('/'))
    }

    fn wait_for_slot(&self) {
        if self.config.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().expect("rate limiter lock");
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + self.config.min_interval;
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<reqwest::blocking::Response, BackendError> {
        self.wait_for_slot();
        let mut request = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let detail = format!("HTTP {status}: {}", response.text().unwrap_or_default());
        // Rate limits and server faults are worth retrying.
        if status.as_u16() == 429 || status.is_server_error() {
            Err(BackendError::Transport(detail))
        } else {
            Err(BackendError::Rejected(detail))
        }
    }
}

impl CompletionBackend for LiveBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.prompt.system_text},
                {"role": "user", "content": request.prompt.user_text},
            ],
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_new_tokens,
            "n": 1,
        });
        let parsed: ChatResponse = self
            .post("chat/completions", &body)?
            .json()
            .map_err(|e| BackendError::Transport(format!("bad completion payload: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transport("completion payload has no content".into()))
    }
}

impl EmbeddingBackend for LiveBackend {
    fn backend_id(&self) -> &str {
        &self.embedding_id
    }

    fn embed(&self, prompt: &PromptBundle) -> Result<Vec<f64>, BackendError> {
        let model = self
            .config
            .embedding_model
            .as_ref()
            .ok_or_else(|| BackendError::Rejected("no embedding model configured".into()))?;
        let input = format!("{}\n\n{}", prompt.system_text, prompt.user_text);
        let parsed: EmbeddingResponse = self
            .post("embeddings", &json!({"model": model, "input": input}))?
            .json()
            .map_err(|e| BackendError::Transport(format!("bad embedding payload: {e}")))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| BackendError::Transport("embedding payload has no data".into()))
    }
}
