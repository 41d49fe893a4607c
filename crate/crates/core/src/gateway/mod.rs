//! Access to generative and embedding models.
//!
//! [`Gateway`] wraps a completion backend and an optional embedding backend
//! with a content-addressed cache and retry handling. Backends are either
//! live (OpenAI-compatible HTTP, see [`live`]) or synthetic (see
//! [`synthetic`]).

pub mod cache;
pub mod live;
pub mod parse;
pub mod prompt;
pub mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::Cache;
pub use parse::{parse_certainty, Certainty, ParseFailure};
pub use prompt::{build_prompt, PromptBundle, PromptError, PromptOptions, Task};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
    #[error("unknown prompt for dialogue {dialogue_id:?} ({task:?})")]
    UnknownPrompt { dialogue_id: String, task: Task },
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("sample {sample_index}: {source}")]
    Sample {
        sample_index: u32,
        #[source]
        source: BackendError,
    },
    #[error("embedding: {0}")]
    Embedding(#[source] BackendError),
    #[error("no embedding backend configured")]
    NoEmbeddingBackend,
    #[error("embedding contains non-finite values")]
    NonFiniteEmbedding,
    #[error("invalid sampling options: {0}")]
    InvalidSampling(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingOptions {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub n_samples: u32,
    pub retry_limit: u32,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_new_tokens: 256,
            n_samples: 1,
            retry_limit: 3,
        }
    }
}

impl SamplingOptions {
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            ..Self::default()
        }
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidSampling(format!(
                "temperature {}",
                self.temperature
            )));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::InvalidSampling("n_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSample {
    pub raw_text: String,
    pub parsed: Option<Certainty>,
    pub valid: bool,
    pub sample_index: u32,
    pub backend_id: String,
}

impl ForecastSample {
    fn from_text(raw_text: String, sample_index: u32, backend_id: &str) -> Self {
        let parsed = parse_certainty(&raw_text).ok();
        Self {
            valid: parsed.is_some(),
            parsed,
            raw_text,
            sample_index,
            backend_id: backend_id.to_string(),
        }
    }

    pub fn probability(&self) -> Option<f64> {
        self.parsed.map(Certainty::probability)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub backend_id: String,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// `[self, other]` as one vector.
    pub fn concat(&self, other: &FeatureVector) -> FeatureVector {
        let mut values = Vec::with_capacity(self.dim() + other.dim());
        values.extend_from_slice(&self.values);
        values.extend_from_slice(&other.values);
        FeatureVector {
            values,
            backend_id: format!("{}+{}", self.backend_id, other.backend_id),
        }
    }
}

/// One request for one sample; `attempt` counts re-requests of the same
/// sample index.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a PromptBundle,
    pub sampling: &'a SamplingOptions,
    pub sample_index: u32,
    pub attempt: u32,
}

pub trait CompletionBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;
}

pub trait EmbeddingBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn embed(&self, prompt: &PromptBundle) -> Result<Vec<f64>, BackendError>;
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub backend_calls: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_lookups: AtomicU64,
}

impl GatewayStats {
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hit_ratio(&self) -> f64 {
        let lookups = self.cache_lookups.load(Ordering::Relaxed);
        if lookups == 0 {
            return 0.0;
        }
        self.cache_hits.load(Ordering::Relaxed) as f64 / lookups as f64
    }
}

pub struct Gateway {
    completion: Arc<dyn CompletionBackend>,
    embedding: Option<Arc<dyn EmbeddingBackend>>,
    cache: Option<Cache>,
    retry_delay: Duration,
    embed_retry_limit: u32,
    stats: GatewayStats,
}

impl Gateway {
    pub fn new(completion: Arc<dyn CompletionBackend>) -> Self {
        Self {
            completion,
            embedding: None,
            cache: None,
            retry_delay: Duration::ZERO,
            embed_retry_limit: 3,
            stats: GatewayStats::default(),
        }
    }

    pub fn with_embedding(mut self, embedding: Arc<dyn EmbeddingBackend>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_cache(mut self, cache: Cache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Base delay before a transport retry; doubles per attempt.
    pub fn with_retry_delay(mut self, delay: Duration) -> Self {
        self.retry_delay = delay;
        self
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn completion_backend_id(&self) -> &str {
        self.completion.backend_id()
    }

    fn backoff(&self, attempt: u32) {
        if !self.retry_delay.is_zero() {
            std::thread::sleep(self.retry_delay * 2u32.saturating_pow(attempt.min(16)));
        }
    }

    fn lookup_text(&self, key: &str) -> Option<String> {
        let cache = self.cache.as_ref()?;
        self.stats.cache_lookups.fetch_add(1, Ordering::Relaxed);
        let hit = cache.get_text(key);
        if hit.is_some() {
            self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    fn completion_key(&self, prompt: &PromptBundle, sampling: &SamplingOptions, sample_index: u32) -> String {
        Cache::key(&[
            b"completion",
            self.completion.backend_id().as_bytes(),
            prompt.fingerprint.as_bytes(),
            &sample_index.to_le_bytes(),
            &sampling.temperature.to_le_bytes(),
            &sampling.max_new_tokens.to_le_bytes(),
        ])
    }

    /// Draws `sampling.n_samples` samples. Unparseable completions are
    /// re-requested up to `retry_limit` times and then kept as invalid
    /// samples; transport failures that exhaust the same budget are errors.
    pub fn complete(
        &self,
        prompt: &PromptBundle,
        sampling: &SamplingOptions,
    ) -> Result<Vec<ForecastSample>, GatewayError> {
        sampling.validate()?;
        (0..sampling.n_samples)
            .map(|i| self.sample(prompt, sampling, i))
            .collect()
    }

    fn sample(
        &self,
        prompt: &PromptBundle,
        sampling: &SamplingOptions,
        sample_index: u32,
    ) -> Result<ForecastSample, GatewayError> {
        let backend_id = self.completion.backend_id();
        let key = self.completion_key(prompt, sampling, sample_index);
        if let Some(text) = self.lookup_text(&key) {
            return Ok(ForecastSample::from_text(text, sample_index, backend_id));
        }

        let mut last_text = None;
        let mut last_error = None;
        for attempt in 0..=sampling.retry_limit {
            let request = CompletionRequest {
                prompt,
                sampling,
                sample_index,
                attempt,
            };
            self.stats.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.completion.complete(&request) {
                Ok(text) => {
                    let valid = parse_certainty(&text).is_ok();
                    last_text = Some(text);
                    if valid {
                        break;
                    }
                    log::debug!(
                        "sample {sample_index} of {} unparseable (attempt {attempt})",
                        prompt.dialogue_id
                    );
                }
                Err(e) if e.is_retryable() => {
                    log::warn!(
                        "sample {sample_index} of {}: {e} (attempt {attempt})",
                        prompt.dialogue_id
                    );
                    last_error = Some(e);
                    self.backoff(attempt);
                }
                Err(source) => return Err(GatewayError::Sample { sample_index, source }),
            }
        }

        let Some(text) = last_text else {
            return Err(GatewayError::Sample {
                sample_index,
                source: last_error.unwrap_or_else(|| BackendError::Transport("no attempts made".into())),
            });
        };
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put_text(&key, &text) {
                log::warn!("cache write failed: {e}");
            }
        }
        Ok(ForecastSample::from_text(text, sample_index, backend_id))
    }

    pub fn embed(&self, prompt: &PromptBundle) -> Result<FeatureVector, GatewayError> {
        let backend = self.embedding.as_ref().ok_or(GatewayError::NoEmbeddingBackend)?;
        let backend_id = backend.backend_id().to_string();
        let key = Cache::key(&[b"embedding", backend_id.as_bytes(), prompt.fingerprint.as_bytes()]);
        if let Some(cache) = &self.cache {
            self.stats.cache_lookups.fetch_add(1, Ordering::Relaxed);
            if let Some(values) = cache.get_vector(&key) {
                self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(FeatureVector { values, backend_id });
            }
        }

        let mut attempt = 0;
        let values = loop {
            self.stats.backend_calls.fetch_add(1, Ordering::Relaxed);
            match backend.embed(prompt) {
                Ok(values) => break values,
                Err(e) if e.is_retryable() && attempt < self.embed_retry_limit => {
                    log::warn!("embedding {}: {e} (attempt {attempt})", prompt.dialogue_id);
                    self.backoff(attempt);
                    attempt += 1;
                }
                Err(e) => return Err(GatewayError::Embedding(e)),
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::NonFiniteEmbedding);
        }
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put_vector(&key, &values) {
                log::warn!("cache write failed: {e}");
            }
        }
        Ok(FeatureVector { values, backend_id })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    /// Replays a script of responses, one per call.
    struct Scripted {
        script: Mutex<Vec<Result<String, BackendError>>>,
    }

    impl Scripted {
        fn new(mut script: Vec<Result<String, BackendError>>) -> Self {
            script.reverse();
            Self {
                script: Mutex::new(script),
            }
        }
    }

    impl CompletionBackend for Scripted {
        fn backend_id(&self) -> &str {
            "scripted"
        }

        fn complete(&self, _: &CompletionRequest<'_>) -> Result<String, BackendError> {
            self.script
                .lock()
                .unwrap()
                .pop()
                .unwrap_or_else(|| Err(BackendError::Transport("script exhausted".into())))
        }
    }

    fn prompt() -> PromptBundle {
        PromptBundle {
            system_text: "s".into(),
            user_text: "u".into(),
            task: Task::OneTuq,
            dialogue_id: "d".into(),
            include_demographics: false,
            fingerprint: "f".repeat(64),
        }
    }

    fn options(retry_limit: u32) -> SamplingOptions {
        SamplingOptions {
            retry_limit,
            ..SamplingOptions::default()
        }
    }

    #[test]
    fn prose_without_keyword_is_invalid_sample() {
        let gw = Gateway::new(Arc::new(Scripted::new(vec![Ok("I think they are happy.".into())])));
        let samples = gw.complete(&prompt(), &options(0)).unwrap();
        assert_eq!(samples.len(), 1);
        assert!(!samples[0].valid);
        assert_eq!(samples[0].parsed, None);
    }

    #[test]
    fn invalid_samples_are_retried() {
        let gw = Gateway::new(Arc::new(Scripted::new(vec![
            Ok("hmm".into()),
            Err(BackendError::Transport("reset".into())),
            Ok("CERTAINTY = 9".into()),
        ])));
        let samples = gw.complete(&prompt(), &options(3)).unwrap();
        assert_eq!(samples[0].probability(), Some(0.9));
        assert_eq!(gw.stats().backend_calls(), 3);
    }

    #[test]
    fn transport_failure_after_retries_names_sample() {
        let gw = Gateway::new(Arc::new(Scripted::new(vec![
            Ok("CERTAINTY = 2".into()),
            Err(BackendError::Transport("down".into())),
            Err(BackendError::Transport("down".into())),
        ])));
        let err = gw.complete(&prompt(), &options(1).with_samples(2)).unwrap_err();
        assert!(matches!(err, GatewayError::Sample { sample_index: 1, .. }));
    }

    #[test]
    fn rejected_request_is_not_retried() {
        let gw = Gateway::new(Arc::new(Scripted::new(vec![Err(BackendError::Rejected("401".into()))])));
        assert!(gw.complete(&prompt(), &options(5)).is_err());
        assert_eq!(gw.stats().backend_calls(), 1);
    }

    #[test]
    fn warm_cache_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let cold = Gateway::new(Arc::new(Scripted::new(vec![
            Ok("CERTAINTY = 4".into()),
            Ok("CERTAINTY = 6".into()),
        ])))
        .with_cache(Cache::open(dir.path()).unwrap());
        let first = cold.complete(&prompt(), &options(0).with_samples(2)).unwrap();

        let warm = Gateway::new(Arc::new(Scripted::new(vec![]))).with_cache(Cache::open(dir.path()).unwrap());
        // Same backend id, so the keys match.
        let second = warm.complete(&prompt(), &options(0).with_samples(2)).unwrap();
        assert_eq!(first, second);
        assert_eq!(warm.stats().backend_calls(), 0);
        assert_eq!(warm.stats().cache_hit_ratio(), 1.0);

        // Greedy sampling is keyed separately.
        assert!(warm
            .complete(
                &prompt(),
                &SamplingOptions {
                    retry_limit: 0,
                    ..SamplingOptions::greedy()
                }
            )
            .is_err());
    }

    #[test]
    fn rejects_bad_sampling_options() {
        let gw = Gateway::new(Arc::new(Scripted::new(vec![])));
        assert!(matches!(
            gw.complete(&prompt(), &options(0).with_samples(0)),
            Err(GatewayError::InvalidSampling(_))
        ));
        let negative = SamplingOptions {
            temperature: -1.0,
            ..SamplingOptions::default()
        };
        assert!(gw.complete(&prompt(), &negative).is_err());
        assert!(matches!(gw.embed(&prompt()), Err(GatewayError::NoEmbeddingBackend)));
    }
}
