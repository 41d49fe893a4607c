//! Annotated dialogue corpora.
//!
//! Corpora live on disk as line-delimited JSON, one [`DialogueRecord`] per
//! line. Likert annotations are stored as raw integers; mapping them to
//! probabilities is the job of [`crate::calibrate`].

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default transcript budget in characters (roughly 5K tokens at 4 chars/token).
pub const DEFAULT_CHAR_BUDGET: usize = 20_000;

/// Rater id reserved for third-party (crowd-worker) labels.
pub const ANNOTATOR_ID: &str = "annotator";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record ({field}): {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate dialogue id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: value out of scale for {question_key:?}: {value} not in [{min}, {max}]")]
    OutOfScale {
        line: usize,
        question_key: String,
        value: i64,
        min: i64,
        max: i64,
    },
    #[error("line {line}: expected corpus tag {expected:?}, found {found:?}")]
    TagMismatch {
        line: usize,
        expected: CorpusTag,
        found: CorpusTag,
    },
    #[error("train_n ({train_n}) must be smaller than the corpus size ({size})")]
    SplitTooLarge { train_n: usize, size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusTag {
    Negotiation,
    Social,
    TaskOriented,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perspective {
    SelfReport,
    PerceptionOfOther,
    ThirdParty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub race: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub education: Option<String>,
}

impl DemographicProfile {
    pub fn is_empty(&self) -> bool {
        self.age.is_none() && self.sex.is_none() && self.race.is_none() && self.education.is_none()
    }
}

/// One Likert rating. `subject_id` is whose belief the rating describes;
/// `rater_id` is who produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertAnnotation {
    pub question_key: String,
    pub rater_id: String,
    pub subject_id: String,
    pub value: i64,
    pub scale_min: i64,
    pub scale_max: i64,
    pub perspective: Perspective,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub id: String,
    pub corpus_tag: CorpusTag,
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub speakers: BTreeMap<String, DemographicProfile>,
    #[serde(default)]
    pub annotations: Vec<LikertAnnotation>,
}

impl DialogueRecord {
    /// Speaker ids in order of first appearance, followed by any speakers
    /// that only appear in the demographics map.
    pub fn speaker_order(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        for turn in &self.turns {
            if seen.insert(turn.speaker.as_str()) {
                order.push(turn.speaker.as_str());
            }
        }
        for id in self.speakers.keys() {
            if seen.insert(id.as_str()) {
                order.push(id.as_str());
            }
        }
        order
    }

    /// Stable pseudonyms used in transcripts and prompts.
    pub fn speaker_labels(&self) -> BTreeMap<String, String> {
        self.speaker_order()
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id.to_string(), speaker_label(self.corpus_tag, i)))
            .collect()
    }

    pub fn label_of(&self, speaker_id: &str) -> Option<String> {
        self.speaker_labels().remove(speaker_id)
    }

    fn has_speaker(&self, id: &str) -> bool {
        self.speakers.contains_key(id) || self.turns.iter().any(|t| t.speaker == id)
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let malformed = |field: &str, message: String| CorpusError::Malformed {
            line,
            field: field.to_string(),
            message,
        };
        if self.id.is_empty() {
            return Err(malformed("id", "empty id".into()));
        }
        if self.turns.is_empty() {
            return Err(malformed("turns", "dialogue has no turns".into()));
        }
        for (id, profile) in &self.speakers {
            if let Some(age) = profile.age {
                if age > 130 {
                    return Err(malformed("speakers", format!("age {age} of {id:?} outside [0, 130]")));
                }
            }
        }
        for ann in &self.annotations {
            if ann.scale_max <= ann.scale_min {
                return Err(malformed(
                    "annotations",
                    format!("scale_max {} not above scale_min {}", ann.scale_max, ann.scale_min),
                ));
            }
            if ann.value < ann.scale_min || ann.value > ann.scale_max {
                return Err(CorpusError::OutOfScale {
                    line,
                    question_key: ann.question_key.clone(),
                    value: ann.value,
                    min: ann.scale_min,
                    max: ann.scale_max,
                });
            }
            for (field, id) in [("rater_id", &ann.rater_id), ("subject_id", &ann.subject_id)] {
                if id != ANNOTATOR_ID && !self.has_speaker(id) {
                    return Err(malformed(
                        &format!("annotations.{field}"),
                        format!("unknown speaker {id:?}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn speaker_label(tag: CorpusTag, index: usize) -> String {
    match (tag, index) {
        (CorpusTag::TaskOriented, 0) => "User".to_string(),
        (CorpusTag::TaskOriented, 1) => "Assistant".to_string(),
        _ => {
            let letter = (b'A' + (index % 26) as u8) as char;
            if index < 26 {
                format!("Speaker {letter}")
            } else {
                format!("Speaker {letter}{}", index / 26)
            }
        }
    }
}

/// An in-memory corpus. Read-only after load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<DialogueRecord>,
    index: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn new(records: Vec<DialogueRecord>) -> Result<Self, CorpusError> {
        let mut index = BTreeMap::new();
        for (i, record) in records.iter().enumerate() {
            record.validate(i + 1)?;
            if index.insert(record.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: record.id.clone(),
                });
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[DialogueRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DialogueRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    /// Dialogue ids in lexicographic order.
    pub fn sorted_ids(&self) -> Vec<&str> {
        self.index.keys().map(String::as_str).collect()
    }

    /// Hex SHA-256 of the canonical line-delimited serialization.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for record in &self.records {
            let line = serde_json::to_string(record).expect("records serialize");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Loads a line-delimited corpus, validating every record. Blank lines are
/// skipped. When `expected_tag` is given every record must carry it.
pub fn load_corpus(path: &Path, expected_tag: Option<CorpusTag>) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DialogueRecord = serde_json::from_str(&line).map_err(|e| {
            let message = e.to_string();
            CorpusError::Malformed {
                line: line_no,
                field: field_from_serde_message(&message),
                message,
            }
        })?;
        if let Some(expected) = expected_tag {
            if record.corpus_tag != expected {
                return Err(CorpusError::TagMismatch {
                    line: line_no,
                    expected,
                    found: record.corpus_tag,
                });
            }
        }
        record.validate(line_no)?;
        if !ids.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    if records.is_empty() {
        log::warn!("corpus {} is empty", path.display());
    }
    Corpus::new(records)
}

// serde_json reports e.g. "missing field `turns` at line 1 column 40".
fn field_from_serde_message(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "record".to_string())
}

pub fn save_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for record in corpus.records() {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub train_n: usize,
}

impl SplitSpec {
    /// Hex SHA-256 over the seed and both id sets.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for id in &self.train_ids {
            hasher.update(b"train:");
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        for id in &self.test_ids {
            hasher.update(b"test:");
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

pub fn make_split(corpus: &Corpus, seed: u64, train_n: usize) -> Result<SplitSpec, CorpusError> {
    split_ids(corpus.sorted_ids(), seed, train_n)
}

/// Seeded split over an arbitrary id set. Ids are sorted before shuffling so
/// the result depends only on the set, the seed and `train_n`.
pub fn split_ids<S: AsRef<str>>(
    ids: impl IntoIterator<Item = S>,
    seed: u64,
    train_n: usize,
) -> Result<SplitSpec, CorpusError> {
    let mut ids: Vec<String> = ids.into_iter().map(|s| s.as_ref().to_string()).collect();
    ids.sort();
    ids.dedup();
    if train_n >= ids.len() {
        return Err(CorpusError::SplitTooLarge {
            train_n,
            size: ids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let test_ids = ids.split_off(train_n).into_iter().collect();
    Ok(SplitSpec {
        seed,
        train_ids: ids.into_iter().collect(),
        test_ids,
        train_n,
    })
}

/// Renders turns as `Label: text` lines, keeping whole turns while the
/// cumulative length (newlines included) stays within `char_budget`. A first
/// turn that alone exceeds the budget keeps its label and the first
/// `char_budget` characters of its text.
pub fn render_transcript(dialogue: &DialogueRecord, char_budget: usize) -> String {
    let labels = dialogue.speaker_labels();
    let mut out = String::new();
    let mut used = 0usize;
    for (i, turn) in dialogue.turns.iter().enumerate() {
        let label = &labels[&turn.speaker];
        let line_len = label.chars().count() + 2 + turn.text.chars().count();
        let sep = usize::from(i > 0);
        if used + sep + line_len > char_budget {
            if i == 0 {
                let cut: String = turn.text.chars().take(char_budget).collect();
                let _ = write!(out, "{label}: {cut}");
            }
            break;
        }
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{label}: {}", turn.text);
        used += sep + line_len;
    }
    out
}

/// One sentence describing the present demographic fields, in the order
/// age, sex, race, education. Empty profiles render as "".
pub fn render_demographics(profile: &DemographicProfile, speaker_label: &str) -> String {
    if profile.is_empty() {
        return String::new();
    }
    let mut core = Vec::new();
    if let Some(age) = profile.age {
        core.push(format!("{} {age}-year-old", article_for_number(age)));
    }
    if let Some(sex) = &profile.sex {
        core.push(sex.clone());
    }
    let mut description = core.join(" ");
    if let Some(race) = &profile.race {
        if description.is_empty() {
            description = race.clone();
        } else {
            let _ = write!(description, ", {race},");
        }
    }
    match &profile.education {
        Some(edu) if description.is_empty() => {
            format!("{speaker_label} has {} {edu} education.", article_for_word(edu))
        }
        Some(edu) => {
            let description = description.trim_end_matches(',');
            let joiner = if profile.race.is_some() { ", " } else { " " };
            format!(
                "{speaker_label} is {description}{joiner}with {} {edu} education.",
                article_for_word(edu)
            )
        }
        None => format!("{speaker_label} is {}.", description.trim_end_matches(',')),
    }
}

fn article_for_number(n: u32) -> &'static str {
    let digits = n.to_string();
    if digits.starts_with('8') || n == 11 || n == 18 {
        "an"
    } else {
        "a"
    }
}

fn article_for_word(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dialogue(id: &str, turns: &[(&str, &str)]) -> DialogueRecord {
        DialogueRecord {
            id: id.to_string(),
            corpus_tag: CorpusTag::Social,
            turns: turns
                .iter()
                .map(|(s, t)| Turn {
                    speaker: s.to_string(),
                    text: t.to_string(),
                })
                .collect(),
            speakers: BTreeMap::new(),
            annotations: vec![],
        }
    }

    fn annotation(value: i64, min: i64, max: i64) -> LikertAnnotation {
        LikertAnnotation {
            question_key: "likes_partner".into(),
            rater_id: "a".into(),
            subject_id: "a".into(),
            value,
            scale_min: min,
            scale_max: max,
            perspective: Perspective::SelfReport,
        }
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file
    }

    #[test]
    fn loads_valid_records_in_order() {
        let lines: Vec<String> = ["d2", "d1", "d3"]
            .iter()
            .map(|id| serde_json::to_string(&dialogue(id, &[("a", "hi")])).unwrap())
            .collect();
        let file = write_lines(&lines);
        let corpus = load_corpus(file.path(), Some(CorpusTag::Social)).unwrap();
        assert_eq!(corpus.len(), 3);
        let ids: Vec<_> = corpus.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["d2", "d1", "d3"]);
    }

    #[test]
    fn rejects_value_out_of_scale() {
        let mut d = dialogue("d1", &[("a", "hi")]);
        d.annotations.push(annotation(8, 1, 5));
        let file = write_lines(&[serde_json::to_string(&d).unwrap()]);
        let err = load_corpus(file.path(), None).unwrap_err();
        assert!(matches!(err, CorpusError::OutOfScale { line: 1, value: 8, .. }));
        assert!(err.to_string().contains("value out of scale"));
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let file = write_lines(&[]);
        assert!(load_corpus(file.path(), None).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_names_line_and_field() {
        let good = serde_json::to_string(&dialogue("d1", &[("a", "hi")])).unwrap();
        let bad = r#"{"id":"d2","corpus_tag":"social"}"#.to_string();
        let file = write_lines(&[good, bad]);
        match load_corpus(file.path(), None).unwrap_err() {
            CorpusError::Malformed { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "turns");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_unknown_speakers() {
        let d = serde_json::to_string(&dialogue("d1", &[("a", "hi")])).unwrap();
        let file = write_lines(&[d.clone(), d]);
        assert!(matches!(
            load_corpus(file.path(), None).unwrap_err(),
            CorpusError::DuplicateId { line: 2, .. }
        ));

        let mut d = dialogue("d1", &[("a", "hi")]);
        let mut ann = annotation(3, 1, 5);
        ann.rater_id = "ghost".into();
        d.annotations.push(ann);
        let file = write_lines(&[serde_json::to_string(&d).unwrap()]);
        assert!(matches!(
            load_corpus(file.path(), None).unwrap_err(),
            CorpusError::Malformed { .. }
        ));
    }

    #[test]
    fn annotator_id_is_reserved_rater() {
        let mut d = dialogue("d1", &[("u", "hi")]);
        let mut ann = annotation(3, 1, 5);
        ann.rater_id = ANNOTATOR_ID.into();
        ann.subject_id = "u".into();
        ann.perspective = Perspective::ThirdParty;
        d.annotations.push(ann);
        assert!(Corpus::new(vec![d]).is_ok());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let records = (0..200).map(|i| dialogue(&format!("d{i:03}"), &[("a", "x")])).collect();
        let corpus = Corpus::new(records).unwrap();
        let split = make_split(&corpus, 1, 100).unwrap();
        assert_eq!(split.train_ids.len(), 100);
        assert_eq!(split.test_ids.len(), 100);
        assert_eq!(split, make_split(&corpus, 1, 100).unwrap());
        assert_ne!(split, make_split(&corpus, 2, 100).unwrap());
        assert!(matches!(
            make_split(&corpus, 1, 200),
            Err(CorpusError::SplitTooLarge { .. })
        ));
    }

    #[test]
    fn transcript_without_truncation() {
        let d = dialogue("d", &[("a", "Hello there."), ("b", "Hi!")]);
        assert_eq!(render_transcript(&d, 10_000), "Speaker A: Hello there.\nSpeaker B: Hi!");
    }

    #[test]
    fn transcript_keeps_whole_turns_within_budget() {
        let long = "x".repeat(8000);
        let d = dialogue("d", &[("a", &long), ("b", &long), ("a", &long)]);
        let out = render_transcript(&d, 20_000);
        // Each line is 11 label chars + 8000 text chars; the third would push
        // the cumulative count to 24_035.
        assert_eq!(out.lines().count(), 2);
        assert_eq!(out.chars().count(), 2 * 8011 + 1);
    }

    #[test]
    fn transcript_hard_cuts_oversized_first_turn() {
        let long = "y".repeat(30_000);
        let d = dialogue("d", &[("a", &long)]);
        let out = render_transcript(&d, 20_000);
        assert_eq!(out, format!("Speaker A: {}", "y".repeat(20_000)));
    }

    #[test]
    fn task_oriented_labels() {
        let mut d = dialogue("d", &[("usr", "Book a hotel."), ("sys", "Sure.")]);
        d.corpus_tag = CorpusTag::TaskOriented;
        assert_eq!(render_transcript(&d, 100), "User: Book a hotel.\nAssistant: Sure.");
    }

    #[test]
    fn demographics_sentences() {
        let p = DemographicProfile {
            age: Some(34),
            sex: Some("female".into()),
            race: None,
            education: Some("college".into()),
        };
        assert_eq!(
            render_demographics(&p, "Speaker A"),
            "Speaker A is a 34-year-old female with a college education."
        );
        assert_eq!(render_demographics(&DemographicProfile::default(), "Speaker A"), "");
        let p = DemographicProfile {
            race: Some("Asian".into()),
            ..Default::default()
        };
        assert_eq!(render_demographics(&p, "the user"), "the user is Asian.");
        let p = DemographicProfile {
            age: Some(81),
            sex: Some("male".into()),
            race: Some("White".into()),
            education: Some("undergraduate".into()),
        };
        assert_eq!(
            render_demographics(&p, "Speaker B"),
            "Speaker B is an 81-year-old male, White, with an undergraduate education."
        );
        let p = DemographicProfile {
            education: Some("high school".into()),
            ..Default::default()
        };
        assert_eq!(
            render_demographics(&p, "Speaker B"),
            "Speaker B has a high school education."
        );
    }

    fn arb_dialogue(id: String) -> impl Strategy<Value = DialogueRecord> {
        prop::collection::vec((0usize..3, "[a-z ]{0,40}"), 1..8).prop_map(move |turns| DialogueRecord {
            id: id.clone(),
            corpus_tag: CorpusTag::Negotiation,
            turns: turns
                .into_iter()
                .map(|(s, text)| Turn {
                    speaker: format!("s{s}"),
                    text,
                })
                .collect(),
            speakers: BTreeMap::new(),
            annotations: vec![],
        })
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_sized(n in 2usize..60, seed in any::<u64>(), frac in 0.0f64..1.0) {
            let train_n = ((n - 1) as f64 * frac) as usize;
            let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
            let split = split_ids(&ids, seed, train_n).unwrap();
            prop_assert_eq!(split.train_ids.len(), train_n);
            prop_assert_eq!(split.train_ids.len() + split.test_ids.len(), n);
            prop_assert!(split.train_ids.is_disjoint(&split.test_ids));
            let mut reversed = ids.clone();
            reversed.reverse();
            prop_assert_eq!(split, split_ids(&reversed, seed, train_n).unwrap());
        }

        #[test]
        fn transcript_respects_budget(d in arb_dialogue("p".into()), budget in 1usize..200) {
            let out = render_transcript(&d, budget);
            let longest_label = d.speaker_labels().values().map(|l| l.chars().count()).max().unwrap();
            prop_assert!(out.chars().count() <= budget + longest_label + 2);
        }

        #[test]
        fn save_then_load_is_identity(ds in prop::collection::vec(arb_dialogue(String::new()), 0..6)) {
            let records: Vec<_> = ds.into_iter().enumerate().map(|(i, mut d)| { d.id = format!("d{i}"); d }).collect();
            let corpus = Corpus::new(records).unwrap();
            let file = tempfile::NamedTempFile::new().unwrap();
            save_corpus(file.path(), &corpus).unwrap();
            prop_assert_eq!(load_corpus(file.path(), None).unwrap(), corpus);
        }
    }
}
