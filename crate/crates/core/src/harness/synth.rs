//! Synthetic worlds with known targets, for offline runs and tests.
//!
//! Each dialogue gets a true outcome probability `p ~ Uniform(0, 1)` and a
//! false uncertainty `f ~ Normal(0, 0.15)`; the perceiver's forecast is
//! `P = clamp(p + f, 0, 1)`. Both are written as 1..=100 Likert ratings, so
//! the calibration step recovers them up to rank quantization. Backend
//! truths are then taken from the calibrated targets.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::SignalKind;
use crate::calibrate::{calibrate_corpus, CalibrateError, CalibratedTarget};
use crate::corpus::{Corpus, CorpusTag, DemographicProfile, DialogueRecord, LikertAnnotation, Perspective, Turn};
use crate::gateway::synthetic::{SyntheticBackend, SyntheticTruth, TruthEntry};
use crate::gateway::Task;

pub const SYNTHETIC_QUESTION: &str = "likes_partner";
pub const FUN_SD: f64 = 0.15;
pub const LIKERT_MAX: i64 = 100;

const LINES: &[&str] = &[
    "Hi there, how has your week been?",
    "Pretty good, I went hiking on Saturday.",
    "Oh nice, where did you go?",
    "Up the ridge trail north of town. The view was great.",
    "I have been meaning to try that one.",
    "You should, it is not too steep.",
    "Do you do a lot of outdoor stuff?",
    "Mostly running, but I am trying to branch out.",
    "What do you do for work?",
    "I teach middle school science.",
    "That sounds fun and exhausting at the same time.",
    "It is both, honestly.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDialogue {
    pub dialogue_id: String,
    /// Drawn outcome probability.
    pub p: f64,
    /// Drawn forecast of the perceiver.
    #[serde(rename = "P")]
    pub forecast: f64,
    pub fun: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub n_dialogues: usize,
    pub sigma: f64,
    pub dialogues: Vec<WorldDialogue>,
    pub corpus: Corpus,
}

fn likert(x: f64) -> i64 {
    1 + (x * (LIKERT_MAX - 1) as f64).round() as i64
}

/// Builds a world of `n_dialogues ≥ 4` two-speaker chats.
pub fn synth_world(seed: u64, n_dialogues: usize, sigma: f64) -> SyntheticWorld {
    assert!(n_dialogues >= 4, "a synthetic world needs at least 4 dialogues");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fun_dist = Normal::new(0.0, FUN_SD).expect("valid sd");
    let width = n_dialogues.to_string().len();
    let mut dialogues = Vec::with_capacity(n_dialogues);
    let mut records = Vec::with_capacity(n_dialogues);
    for i in 0..n_dialogues {
        let id = format!("syn-{i:0width$}");
        let p: f64 = rng.random();
        let forecast = (p + fun_dist.sample(&mut rng)).clamp(0.0, 1.0);
        let n_turns = rng.random_range(2..=6);
        let start = rng.random_range(0..LINES.len());
        let turns = (0..n_turns)
            .map(|t| Turn {
                speaker: if t % 2 == 0 { "a" } else { "b" }.to_string(),
                text: LINES[(start + t) % LINES.len()].to_string(),
            })
            .collect();
        let mut speakers = BTreeMap::new();
        for speaker in ["a", "b"] {
            speakers.insert(
                speaker.to_string(),
                DemographicProfile {
                    age: Some(rng.random_range(20..70)),
                    ..Default::default()
                },
            );
        }
        let annotation = |rater: &str, perspective, value| LikertAnnotation {
            question_key: SYNTHETIC_QUESTION.to_string(),
            rater_id: rater.to_string(),
            subject_id: "b".to_string(),
            value,
            scale_min: 1,
            scale_max: LIKERT_MAX,
            perspective,
        };
        records.push(DialogueRecord {
            id: id.clone(),
            corpus_tag: CorpusTag::Synthetic,
            turns,
            speakers,
            annotations: vec![
                annotation("b", Perspective::SelfReport, likert(p)),
                annotation("a", Perspective::PerceptionOfOther, likert(forecast)),
            ],
        });
        dialogues.push(WorldDialogue {
            dialogue_id: id,
            p,
            forecast,
            fun: forecast - p,
        });
    }
    let corpus = Corpus::new(records).expect("generated records are valid");
    SyntheticWorld {
        seed,
        n_dialogues,
        sigma,
        dialogues,
        corpus,
    }
}

/// Deterministic value in `[0, 1)` keyed by `(seed, label, dialogue_id)`.
fn keyed_unit(seed: u64, label: &str, dialogue_id: &str) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(b"tomuq-world");
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update([0]);
    hasher.update(dialogue_id.as_bytes());
    let digest = hasher.finalize();
    let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

/// Backend truths for every prompt side a target supports: the one-TUQ and
/// world-side prompts answer with `p`, the two-TUQ prompt with `P`.
pub fn synthetic_truth(targets: &[CalibratedTarget], seed: u64, signal: SignalKind) -> SyntheticTruth {
    let mut truth = SyntheticTruth::default();
    for t in targets {
        let sign = if keyed_unit(seed, "sign", &t.dialogue_id) < 0.5 {
            -1.0
        } else {
            1.0
        };
        let scramble = |label: &str| vec![(0, keyed_unit(seed, label, &t.dialogue_id))];
        if let Some(p) = t.p {
            truth.insert(
                &t.dialogue_id,
                Task::OneTuq,
                TruthEntry {
                    value: p,
                    planted: vec![],
                },
            );
            let planted = match (signal, t.fun) {
                (SignalKind::Entangled, Some(_)) => {
                    let mut planted = scramble("world0");
                    planted.push((1, sign));
                    planted
                }
                _ => vec![],
            };
            truth.insert(&t.dialogue_id, Task::FunqWorldSide, TruthEntry { value: p, planted });
        }
        if let Some(forecast) = t.forecast {
            let planted = match (signal, t.fun) {
                (SignalKind::Entangled, Some(fun)) => {
                    let mut planted = scramble("forecast0");
                    planted.push((1, sign * fun));
                    planted
                }
                _ => vec![],
            };
            truth.insert(
                &t.dialogue_id,
                Task::TwoTuq,
                TruthEntry {
                    value: forecast,
                    planted,
                },
            );
        }
    }
    truth
}

impl SyntheticWorld {
    pub fn targets(&self) -> Result<Vec<CalibratedTarget>, CalibrateError> {
        calibrate_corpus(&self.corpus, SYNTHETIC_QUESTION)
    }

    /// Completion and embedding backend wired to the calibrated targets.
    pub fn backend(&self, signal: SignalKind, embed_dim: usize) -> Result<SyntheticBackend, CalibrateError> {
        let truth = synthetic_truth(&self.targets()?, self.seed, signal);
        Ok(SyntheticBackend::new(self.seed, self.sigma, Arc::new(truth)).with_embed_dim(embed_dim))
    }
}
