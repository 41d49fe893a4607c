//! Deterministic offline backends driven by known target values.
//!
//! The completion backend answers with `CERTAINTY = k`, where
//! `k = clamp(round(10·(truth + ε)), 1, 10)` and `ε ~ Normal(0, σ)`. The
//! embedding backend returns uniform noise in `[-1, 1)/√dim` (so the vector
//! norm stays near that of a unit-normalized embedding) with the truth (plus
//! independent noise) planted in coordinate 0, and optional extra planted
//! coordinates. Every random draw comes from a ChaCha stream keyed by
//! `(seed, fingerprint, sample_index, attempt)`, so outputs are identical
//! across processes.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{BackendError, CompletionBackend, CompletionRequest, EmbeddingBackend, PromptBundle, Task};

pub const DEFAULT_EMBED_DIM: usize = 768;

const RATIONALES: &[&str] = &[
    "The speaker's replies are short but friendly, and they keep the exchange going.",
    "Tone and word choice suggest mixed feelings; there are some warm moments and some hesitation.",
    "Weighing the back-and-forth, the speaker seems engaged without being effusive.",
    "The conversation stays polite throughout, which says less than it might seem about their feelings.",
];

const PROSE_ONLY: &str = "It is hard to say how the speaker feels; the conversation gives few cues either way.";

/// What a synthetic backend knows about one prompt target.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    /// Target probability (or difference) the backend responds to.
    pub value: f64,
    /// Extra `(coordinate, value)` pairs written into the embedding.
    pub planted: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyntheticTruth {
    entries: HashMap<(String, Task), TruthEntry>,
}

impl SyntheticTruth {
    pub fn insert(&mut self, dialogue_id: impl Into<String>, task: Task, entry: TruthEntry) {
        self.entries.insert((dialogue_id.into(), task), entry);
    }

    pub fn get(&self, dialogue_id: &str, task: Task) -> Option<&TruthEntry> {
        self.entries.get(&(dialogue_id.to_string(), task))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    id: String,
    seed: u64,
    sigma: f64,
    embed_dim: usize,
    invalid_rate: f64,
    truth: Arc<SyntheticTruth>,
}

impl SyntheticBackend {
    pub fn new(seed: u64, sigma: f64, truth: Arc<SyntheticTruth>) -> Self {
        let mut backend = Self {
            id: String::new(),
            seed,
            sigma,
            embed_dim: DEFAULT_EMBED_DIM,
            invalid_rate: 0.0,
            truth,
        };
        backend.refresh_id();
        backend
    }

    pub fn with_embed_dim(mut self, dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        self.embed_dim = dim;
        self.refresh_id();
        self
    }

    /// Probability that a completion is prose without a certainty report.
    pub fn with_invalid_rate(mut self, rate: f64) -> Self {
        self.invalid_rate = rate.clamp(0.0, 1.0);
        self.refresh_id();
        self
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn refresh_id(&mut self) {
        self.id = format!(
            "synthetic:{}:{}:{}:{}",
            self.seed, self.sigma, self.embed_dim, self.invalid_rate
        );
    }

    fn truth_for(&self, prompt: &PromptBundle) -> Result<&TruthEntry, BackendError> {
        self.truth
            .get(&prompt.dialogue_id, prompt.task)
            .ok_or_else(|| BackendError::UnknownPrompt {
                dialogue_id: prompt.dialogue_id.clone(),
                task: prompt.task,
            })
    }

    fn stream(&self, tag: &str, fingerprint: &str, index: u32, attempt: u32) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"tomuq-synthetic");
        hasher.update(self.seed.to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.update(fingerprint.as_bytes());
        hasher.update(index.to_le_bytes());
        hasher.update(attempt.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn noise(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sigma > 0.0 {
            Normal::new(0.0, self.sigma).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    }
}

/// `clamp(round(10·x), 1, 10)`.
pub fn certainty_level(x: f64) -> u8 {
    (10.0 * x).round().clamp(1.0, 10.0) as u8
}

impl CompletionBackend for SyntheticBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let truth = self.truth_for(request.prompt)?;
        // Greedy decoding: one answer per prompt regardless of sample index.
        let (index, attempt) = if request.sampling.is_greedy() {
            (0, 0)
        } else {
            (request.sample_index, request.attempt)
        };
        let mut rng = self.stream("completion", &request.prompt.fingerprint, index, attempt);
        let eps = self.noise(&mut rng);
        let rationale = RATIONALES[rng.random_range(0..RATIONALES.len())];
        if self.invalid_rate > 0.0 && rng.random::<f64>() < self.invalid_rate {
            return Ok(PROSE_ONLY.to_string());
        }
        let k = certainty_level(truth.value + eps);
        Ok(format!("{rationale}\nCERTAINTY = {k}"))
    }
}

impl EmbeddingBackend for SyntheticBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn embed(&self, prompt: &PromptBundle) -> Result<Vec<f64>, BackendError> {
        let truth = self.truth_for(prompt)?;
        let mut rng = self.stream("embedding", &prompt.fingerprint, 0, 0);
        let eps = self.noise(&mut rng);
        let scale = 1.0 / (self.embed_dim.max(1) as f64).sqrt();
        let mut values: Vec<f64> = (0..self.embed_dim)
            .map(|_| scale * rng.random_range(-1.0..1.0))
            .collect();
        values[0] = truth.value + eps;
        for &(coord, value) in &truth.planted {
            if coord < values.len() {
                values[coord] = value;
            }
        }
        Ok(values)
    }
}
