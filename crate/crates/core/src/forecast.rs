//! Point estimates from sampled forecasts: direct forecasting, Bag of
//! Thoughts, two-step false-uncertainty composition, and the binary belief
//! classification case study.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Certainty, ForecastSample, Gateway, GatewayError, PromptBundle, SamplingOptions, Task};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("no parseable forecast for dialogue {dialogue_id:?}")]
    NoParseableForecast { dialogue_id: String },
    #[error("dialogue mismatch: {left:?} vs {right:?}")]
    DialogueMismatch { left: String, right: String },
    #[error("forecast {0} is not on the 10-point grid")]
    OffGrid(f64),
    #[error("length mismatch: {predictions} predictions, {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no predictions to score")]
    Empty,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Task an estimate answers, including the composed false-uncertainty task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateTask {
    OneTuq,
    TwoTuq,
    FunqWorldSide,
    Funq,
}

impl From<Task> for EstimateTask {
    fn from(task: Task) -> Self {
        match task {
            Task::OneTuq => EstimateTask::OneTuq,
            Task::TwoTuq => EstimateTask::TwoTuq,
            Task::FunqWorldSide => EstimateTask::FunqWorldSide,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEstimate {
    pub dialogue_id: String,
    pub task: EstimateTask,
    pub value: f64,
    pub method_tag: String,
    pub n_used: usize,
}

/// Mean of the valid samples. Invalid samples are skipped and excluded from
/// `n_used`.
pub fn aggregate_samples(
    prompt: &PromptBundle,
    samples: &[ForecastSample],
    method_tag: &str,
) -> Result<ForecastEstimate, ForecastError> {
    let valid: Vec<f64> = samples.iter().filter_map(ForecastSample::probability).collect();
    if valid.is_empty() {
        return Err(ForecastError::NoParseableForecast {
            dialogue_id: prompt.dialogue_id.clone(),
        });
    }
    Ok(ForecastEstimate {
        dialogue_id: prompt.dialogue_id.clone(),
        task: prompt.task.into(),
        value: valid.iter().sum::<f64>() / valid.len() as f64,
        method_tag: method_tag.to_string(),
        n_used: valid.len(),
    })
}

/// One sample, taken as is.
pub fn direct_forecast(
    gateway: &Gateway,
    prompt: &PromptBundle,
    sampling: &SamplingOptions,
) -> Result<ForecastEstimate, ForecastError> {
    let sampling = sampling.with_samples(1);
    let tag = if sampling.is_greedy() { "df_greedy" } else { "df" };
    aggregate_samples(prompt, &gateway.complete(prompt, &sampling)?, tag)
}

/// Default number of chain-of-thought samples averaged by [`bag_of_thoughts`].
pub const DEFAULT_BOT_N: u32 = 10;

/// Averages `sampling.n_samples` independently sampled forecasts.
pub fn bag_of_thoughts(
    gateway: &Gateway,
    prompt: &PromptBundle,
    sampling: &SamplingOptions,
) -> Result<ForecastEstimate, ForecastError> {
    let samples = gateway.complete(prompt, sampling)?;
    aggregate_samples(prompt, &samples, &format!("bot{}", sampling.n_samples))
}

/// `FUn^ = P^ - p^` from an interlocutor-side and a world-side estimate.
pub fn estimate_funq_two_step(
    interlocutor: &ForecastEstimate,
    world: &ForecastEstimate,
) -> Result<ForecastEstimate, ForecastError> {
    if interlocutor.dialogue_id != world.dialogue_id {
        return Err(ForecastError::DialogueMismatch {
            left: interlocutor.dialogue_id.clone(),
            right: world.dialogue_id.clone(),
        });
    }
    Ok(ForecastEstimate {
        dialogue_id: interlocutor.dialogue_id.clone(),
        task: EstimateTask::Funq,
        value: interlocutor.value - world.value,
        method_tag: format!("two_step({}|{})", interlocutor.method_tag, world.method_tag),
        n_used: interlocutor.n_used.min(world.n_used),
    })
}

/// Answers above 5 on the 10-point scale predict a positive outcome.
pub fn classify_belief(forecast: f64) -> Result<bool, ForecastError> {
    let level = Certainty::from_probability(forecast).ok_or(ForecastError::OffGrid(forecast))?;
    Ok(level.level() > 5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub f1: f64,
}

pub fn classification_metrics(predictions: &[bool], labels: &[bool]) -> Result<ClassificationMetrics, ForecastError> {
    if predictions.len() != labels.len() {
        return Err(ForecastError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(ForecastError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&pred, &label) in predictions.iter().zip(labels) {
        correct += usize::from(pred == label);
        match (pred, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    // 2PR / (P + R) written as one exact ratio of counts.
    let denominator = 2 * tp + fp + fn_;
    let f1 = if denominator == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denominator as f64
    };
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / predictions.len() as f64,
        f1,
    })
}
