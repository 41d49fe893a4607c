//! "More than chance" calibration of Likert annotations.
//!
//! A belief magnitude `m` is mapped to the exceedance probability of `m`
//! against the pool `M` of all self-reported magnitudes for the same
//! question. Perceptions `m'` of another speaker's belief are mapped against
//! the same self-report pool, so both land on the scale of one outcome.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DialogueRecord, Perspective};
use crate::questions;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("no {perspective:?} annotations for question {question_key:?}")]
    EmptyPool {
        question_key: String,
        perspective: Perspective,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How ties between `m` and pool values are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Ties count half.
    #[default]
    Midrank,
    /// Only strictly smaller pool values count.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExceedancePool {
    pub question_key: String,
    /// Sorted ascending.
    values: Vec<f64>,
}

impl ExceedancePool {
    pub fn from_values(question_key: impl Into<String>, mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        values.sort_by(f64::total_cmp);
        Some(Self {
            question_key: question_key.into(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Averages matching annotation values per `(dialogue, rater)`; third-party
/// ratings are averaged per dialogue instead.
fn dialogue_values(record: &DialogueRecord, question_key: &str, perspective: Perspective) -> Vec<f64> {
    let mut by_rater: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for ann in &record.annotations {
        if ann.question_key != question_key || ann.perspective != perspective {
            continue;
        }
        let rater = if perspective == Perspective::ThirdParty {
            ""
        } else {
            ann.rater_id.as_str()
        };
        let slot = by_rater.entry(rater).or_insert((0.0, 0));
        slot.0 += ann.value as f64;
        slot.1 += 1;
    }
    by_rater.values().map(|(sum, n)| sum / *n as f64).collect()
}

pub fn build_pool(
    corpus: &Corpus,
    question_key: &str,
    perspective: Perspective,
) -> Result<ExceedancePool, CalibrateError> {
    let values = corpus
        .records()
        .iter()
        .flat_map(|r| dialogue_values(r, question_key, perspective))
        .collect();
    ExceedancePool::from_values(question_key, values).ok_or_else(|| CalibrateError::EmptyPool {
        question_key: question_key.to_string(),
        perspective,
    })
}

/// `(#{M < m} + ½·#{M = m}) / |M|`.
pub fn exceedance_probability(m: f64, pool: &ExceedancePool) -> f64 {
    exceedance_probability_with(m, pool, TieRule::Midrank)
}

pub fn exceedance_probability_with(m: f64, pool: &ExceedancePool, rule: TieRule) -> f64 {
    let below = pool.values.partition_point(|&v| v < m);
    let not_above = pool.values.partition_point(|&v| v <= m);
    let ties = (not_above - below) as f64;
    let count = match rule {
        TieRule::Midrank => below as f64 + 0.5 * ties,
        TieRule::Strict => below as f64,
    };
    count / pool.len() as f64
}

/// Calibrated outcome probabilities for one `(dialogue, question)` pair.
///
/// `p` is the ground truth derived from the self-report; `forecast` is the
/// interlocutor's forecast derived from a perception of that belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTarget {
    pub dialogue_id: String,
    pub question_key: String,
    pub outcome_statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fun: Option<f64>,
}

impl CalibratedTarget {
    fn new(
        dialogue_id: String,
        question_key: String,
        outcome_statement: String,
        p: Option<f64>,
        forecast: Option<f64>,
    ) -> Self {
        let fun = match (p, forecast) {
            (Some(p), Some(big_p)) => Some(big_p - p),
            _ => None,
        };
        Self {
            dialogue_id,
            question_key,
            outcome_statement,
            p,
            forecast,
            fun,
        }
    }
}

pub fn calibrate_corpus(corpus: &Corpus, question_key: &str) -> Result<Vec<CalibratedTarget>, CalibrateError> {
    calibrate_corpus_with(corpus, question_key, TieRule::Midrank)
}

/// Ground truth comes from self-reports when the question has any, and from
/// averaged third-party ratings otherwise.
pub fn calibrate_corpus_with(
    corpus: &Corpus,
    question_key: &str,
    rule: TieRule,
) -> Result<Vec<CalibratedTarget>, CalibrateError> {
    let truth_perspective = [Perspective::SelfReport, Perspective::ThirdParty]
        .into_iter()
        .find(|&p| build_pool(corpus, question_key, p).is_ok())
        .ok_or_else(|| CalibrateError::EmptyPool {
            question_key: question_key.to_string(),
            perspective: Perspective::SelfReport,
        })?;
    let pool = build_pool(corpus, question_key, truth_perspective)?;
    let mean = |values: Vec<f64>| -> Option<f64> {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };

    let mut targets = Vec::new();
    for record in corpus.records() {
        let truth = mean(dialogue_values(record, question_key, truth_perspective));
        let perceived = mean(dialogue_values(record, question_key, Perspective::PerceptionOfOther));
        if truth.is_none() && perceived.is_none() {
            continue;
        }
        let p = truth.map(|m| exceedance_probability_with(m, &pool, rule));
        let forecast = perceived.map(|m| exceedance_probability_with(m, &pool, rule));
        targets.push(CalibratedTarget::new(
            record.id.clone(),
            question_key.to_string(),
            statement_for(record, question_key),
            p,
            forecast,
        ));
    }
    Ok(targets)
}

fn statement_for(record: &DialogueRecord, question_key: &str) -> String {
    let labels = record.speaker_labels();
    let subject_id = record
        .annotations
        .iter()
        .find(|a| a.question_key == question_key)
        .map(|a| a.subject_id.as_str());
    let subject = subject_id
        .and_then(|id| labels.get(id).cloned())
        .unwrap_or_else(|| "the speaker".to_string());
    let other = labels
        .iter()
        .find(|(id, _)| Some(id.as_str()) != subject_id)
        .map(|(_, l)| l.clone())
        .unwrap_or_else(|| "their partner".to_string());
    questions::outcome_statement(question_key, &subject, &other)
}

#[derive(Serialize)]
struct TargetAuditRow<'a> {
    dialogue_id: &'a str,
    question_key: &'a str,
    p: Option<f64>,
    #[serde(rename = "P")]
    forecast: Option<f64>,
    fun: Option<f64>,
}

/// Writes `{dialogue_id, question_key, p, P, fun}` lines for audit.
pub fn export_targets(path: &Path, targets: &[CalibratedTarget]) -> Result<(), CalibrateError> {
    let io_err = |source| CalibrateError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for t in targets {
        let row = TargetAuditRow {
            dialogue_id: &t.dialogue_id,
            question_key: &t.question_key,
            p: t.p,
            forecast: t.forecast,
            fun: t.fun,
        };
        writeln!(out, "{}", serde_json::to_string(&row).expect("row serializes")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// `(P - O)^2` for a binary outcome.
pub fn brier_score(forecast: f64, outcome: bool) -> f64 {
    let o = if outcome { 1.0 } else { 0.0 };
    (forecast - o).powi(2)
}
