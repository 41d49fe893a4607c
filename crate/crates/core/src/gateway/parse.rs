//! Extraction of `CERTAINTY = k` reports from free-text completions.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A certainty report on the 1..=10 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Certainty(u8);

impl Certainty {
    pub fn new(k: u8) -> Option<Self> {
        (1..=10).contains(&k).then_some(Self(k))
    }

    /// Maps a probability on the 0.1 grid back to its level.
    pub fn from_probability(p: f64) -> Option<Self> {
        let k = (p * 10.0).round();
        if (p * 10.0 - k).abs() > 1e-9 || !(1.0..=10.0).contains(&k) {
            return None;
        }
        Self::new(k as u8)
    }

    pub fn level(self) -> u8 {
        self.0
    }

    pub fn probability(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl TryFrom<u8> for Certainty {
    type Error = String;

    fn try_from(k: u8) -> Result<Self, Self::Error> {
        Self::new(k).ok_or_else(|| format!("certainty level {k} outside 1..=10"))
    }
}

impl From<Certainty> for u8 {
    fn from(c: Certainty) -> u8 {
        c.0
    }
}

impl fmt::Display for Certainty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CERTAINTY = {}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("keyword absent")]
    KeywordAbsent,
    #[error("keyword present but no number follows it")]
    MissingValue,
    #[error("value {0} is not an integer")]
    NotInteger(String),
    #[error("value {0} outside 1..=10")]
    OutOfRange(String),
}

static REPORT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bcertainty[\s:=*]*(-?\d+(?:\.\d+)?)").expect("valid regex"));
static KEYWORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bcertainty\b").expect("valid regex"));

/// Takes the last `CERTAINTY <sep> <number>` report in `text`. Separators are
/// any run of whitespace, `:`, `=` or markdown `*`.
pub fn parse_certainty(text: &str) -> Result<Certainty, ParseFailure> {
    let Some(caps) = REPORT.captures_iter(text).last() else {
        return Err(if KEYWORD.is_match(text) {
            ParseFailure::MissingValue
        } else {
            ParseFailure::KeywordAbsent
        });
    };
    let raw = &caps[1];
    if raw.contains('.') {
        return Err(ParseFailure::NotInteger(raw.to_string()));
    }
    raw.parse::<i64>()
        .ok()
        .and_then(|k| u8::try_from(k).ok())
        .and_then(Certainty::new)
        .ok_or_else(|| ParseFailure::OutOfRange(raw.to_string()))
}
