//! Prompt construction.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    render_demographics, render_transcript, CorpusTag, DialogueRecord, Perspective, DEFAULT_CHAR_BUDGET,
};
use crate::questions;

pub const SYSTEM_PROMPT: &str = "You are TheoryOfMindGPT, an expert language model at using your \
theory-of-mind capabilities to predict the beliefs and actions of others in human conversations. \
You will be given a potentially unfinished conversation between two speakers. Put yourself in the \
mindset of the speakers and try to reason about the requested conversation outcome. Use the keyword \
\"CERTAINTY\" to report your prediction for the outcome of interest. Report your answer on a scale \
from 1 to 10 with 1 indicating \"not likely at all\" and 10 indicating \"almost certainly\". For \
example, \"CERTAINTY = 7\".";

pub const STEP_BY_STEP_SUFFIX: &str = "Let's think step by step, but keep your answer concise (less than 100 words).";

const FAST_FORWARD: &str = "Now, fast-forward to the end of the conversation.";

/// Which belief a prompt asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// A speaker's uncertainty about their own belief.
    OneTuq,
    /// A speaker's uncertainty about their partner's belief.
    TwoTuq,
    /// The same outcome as `TwoTuq`, asked from outside the conversation.
    FunqWorldSide,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::OneTuq => "one_tuq",
            Task::TwoTuq => "two_tuq",
            Task::FunqWorldSide => "funq_world_side",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("question {question_key:?} is not defined for {corpus_tag:?} corpora")]
    UnknownQuestion {
        question_key: String,
        corpus_tag: CorpusTag,
    },
    #[error("question {question_key:?} has no {task:?} form")]
    UnsupportedTask { question_key: String, task: Task },
    #[error("dialogue {dialogue_id:?} has no {perspective:?} annotation for {question_key:?}")]
    MissingAnnotation {
        dialogue_id: String,
        question_key: String,
        perspective: Perspective,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptOptions {
    pub include_demographics: bool,
    pub char_budget: usize,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            include_demographics: false,
            char_budget: DEFAULT_CHAR_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub task: Task,
    pub dialogue_id: String,
    pub include_demographics: bool,
    /// Hex SHA-256 over every other field.
    pub fingerprint: String,
}

impl PromptBundle {
    fn new(
        system_text: String,
        user_text: String,
        task: Task,
        dialogue_id: String,
        include_demographics: bool,
    ) -> Self {
        let mut hasher = Sha256::new();
        for part in [
            system_text.as_str(),
            user_text.as_str(),
            task.as_str(),
            dialogue_id.as_str(),
            if include_demographics { "dem" } else { "nodem" },
        ] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        Self {
            fingerprint: hex::encode(hasher.finalize()),
            system_text,
            user_text,
            task,
            dialogue_id,
            include_demographics,
        }
    }
}

fn preamble(tag: CorpusTag) -> &'static str {
    match tag {
        CorpusTag::TaskOriented => {
            "In the following conversation segment, a human user is interacting with an AI task assistant."
        }
        CorpusTag::Negotiation => {
            "In the following conversation segment, two campers are negotiating how to split a shared \
             supply of food, water, and firewood."
        }
        CorpusTag::Social => {
            "In the following conversation segment, two strangers are getting to know each other over a video call."
        }
        CorpusTag::Synthetic => "In the following conversation segment, two speakers are chatting.",
    }
}

// "User" reads as "the user" inside a sentence.
fn referent(label: &str) -> String {
    match label {
        "User" | "Assistant" => format!("the {}", label.to_lowercase()),
        other => other.to_string(),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// The belief holder and the other party, as speaker ids.
struct Roles {
    holder: String,
    other: Option<String>,
}

fn resolve_roles(dialogue: &DialogueRecord, question_key: &str, task: Task) -> Result<Roles, PromptError> {
    let find = |perspective: Perspective| {
        dialogue
            .annotations
            .iter()
            .find(|a| a.question_key == question_key && a.perspective == perspective)
    };
    let other_than = |id: &str| {
        dialogue
            .speaker_order()
            .into_iter()
            .find(|s| *s != id)
            .map(str::to_string)
    };
    let missing = |perspective| PromptError::MissingAnnotation {
        dialogue_id: dialogue.id.clone(),
        question_key: question_key.to_string(),
        perspective,
    };
    match task {
        Task::OneTuq => {
            let ann = find(Perspective::SelfReport)
                .or_else(|| find(Perspective::ThirdParty))
                .ok_or_else(|| missing(Perspective::SelfReport))?;
            Ok(Roles {
                holder: ann.subject_id.clone(),
                other: other_than(&ann.subject_id),
            })
        }
        // The perceiver holds the belief about the subject's belief.
        Task::TwoTuq => {
            let ann = find(Perspective::PerceptionOfOther).ok_or_else(|| missing(Perspective::PerceptionOfOther))?;
            Ok(Roles {
                holder: ann.rater_id.clone(),
                other: Some(ann.subject_id.clone()),
            })
        }
        // World side asks about the subject's belief directly; `holder` is
        // the subject here and `other` the perceiver.
        Task::FunqWorldSide => {
            if let Some(ann) = find(Perspective::PerceptionOfOther) {
                return Ok(Roles {
                    holder: ann.subject_id.clone(),
                    other: Some(ann.rater_id.clone()),
                });
            }
            let ann = find(Perspective::SelfReport).ok_or_else(|| missing(Perspective::SelfReport))?;
            Ok(Roles {
                holder: ann.subject_id.clone(),
                other: other_than(&ann.subject_id),
            })
        }
    }
}

fn question_text(question_key: &str, task: Task, holder: &str, other: &str) -> String {
    match (question_key, task) {
        ("likes_partner", Task::OneTuq) => {
            format!("How certain is {holder} that they ({holder}) like {other} more than would occur by chance?")
        }
        ("likes_partner", Task::TwoTuq) => {
            format!("How certain is {holder} that {other} likes {holder} more than would occur by chance?")
        }
        ("likes_partner", Task::FunqWorldSide) => {
            format!("How likely is it that {holder} likes {other} more than would occur by chance?")
        }
        (_, _) => {
            format!("How certain is {holder} that they ({holder}) are more satisfied than would occur by chance?")
        }
    }
}

/// Builds the system and user prompt for one dialogue and task.
pub fn build_prompt(
    task: Task,
    dialogue: &DialogueRecord,
    question_key: &str,
    options: &PromptOptions,
) -> Result<PromptBundle, PromptError> {
    let spec = questions::lookup(question_key, dialogue.corpus_tag).ok_or_else(|| PromptError::UnknownQuestion {
        question_key: question_key.to_string(),
        corpus_tag: dialogue.corpus_tag,
    })?;
    if task != Task::OneTuq && !spec.second_order {
        return Err(PromptError::UnsupportedTask {
            question_key: question_key.to_string(),
            task,
        });
    }
    let roles = resolve_roles(dialogue, question_key, task)?;
    let labels = dialogue.speaker_labels();
    let label = |id: &str| labels.get(id).cloned().unwrap_or_else(|| id.to_string());
    let holder_label = label(&roles.holder);
    let holder = referent(&holder_label);
    let other = roles
        .other
        .as_deref()
        .map(|id| referent(&label(id)))
        .unwrap_or_else(|| "their partner".to_string());

    let mut user_text = preamble(dialogue.corpus_tag).to_string();
    if options.include_demographics {
        if let Some(profile) = dialogue.speakers.get(&roles.holder) {
            let sentence = render_demographics(profile, &capitalize(&holder));
            if !sentence.is_empty() {
                user_text.push(' ');
                user_text.push_str(&sentence);
            }
        }
    }
    user_text.push_str("\n\n");
    user_text.push_str(&render_transcript(dialogue, options.char_budget));
    user_text.push_str("\n\n");
    user_text.push_str(FAST_FORWARD);
    user_text.push(' ');
    user_text.push_str(&question_text(question_key, task, &holder, &other));
    user_text.push(' ');
    user_text.push_str(STEP_BY_STEP_SUFFIX);

    Ok(PromptBundle::new(
        SYSTEM_PROMPT.to_string(),
        user_text,
        task,
        dialogue.id.clone(),
        options.include_demographics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DemographicProfile, LikertAnnotation, Turn, ANNOTATOR_ID};

    fn ann(key: &str, rater: &str, subject: &str, perspective: Perspective) -> LikertAnnotation {
        LikertAnnotation {
            question_key: key.into(),
            rater_id: rater.into(),
            subject_id: subject.into(),
            value: 3,
            scale_min: 1,
            scale_max: 5,
            perspective,
        }
    }

    fn multiwoz() -> DialogueRecord {
        DialogueRecord {
            id: "mwoz-1".into(),
            corpus_tag: CorpusTag::TaskOriented,
            turns: vec![
                Turn {
                    speaker: "usr".into(),
                    text: "I need a cheap hotel.".into(),
                },
                Turn {
                    speaker: "sys".into(),
                    text: "The Alpha guesthouse is cheap.".into(),
                },
            ],
            speakers: [(
                "usr".to_string(),
                DemographicProfile {
                    age: Some(40),
                    ..Default::default()
                },
            )]
            .into(),
            annotations: vec![ann("user_satisfaction", ANNOTATOR_ID, "usr", Perspective::ThirdParty)],
        }
    }

    fn candor() -> DialogueRecord {
        DialogueRecord {
            id: "candor-1".into(),
            corpus_tag: CorpusTag::Social,
            turns: vec![
                Turn {
                    speaker: "a".into(),
                    text: "Where are you from?".into(),
                },
                Turn {
                    speaker: "b".into(),
                    text: "Ohio, you?".into(),
                },
            ],
            speakers: Default::default(),
            annotations: vec![
                ann("likes_partner", "b", "b", Perspective::SelfReport),
                ann("likes_partner", "a", "b", Perspective::PerceptionOfOther),
            ],
        }
    }

    #[test]
    fn multiwoz_one_tuq_question() {
        let prompt = build_prompt(
            Task::OneTuq,
            &multiwoz(),
            "user_satisfaction",
            &PromptOptions::default(),
        )
        .unwrap();
        assert!(prompt.system_text.starts_with("You are TheoryOfMindGPT"));
        assert!(prompt.user_text.starts_with(
            "In the following conversation segment, a human user is interacting with an AI task assistant.\n\n"
        ));
        assert!(prompt
            .user_text
            .contains("User: I need a cheap hotel.\nAssistant: The Alpha guesthouse is cheap."));
        assert!(prompt.user_text.ends_with(
            "Now, fast-forward to the end of the conversation. How certain is the user that they (the user) \
             are more satisfied than would occur by chance? Let's think step by step, but keep your answer \
             concise (less than 100 words)."
        ));
    }

    #[test]
    fn demographics_flag() {
        let off = build_prompt(
            Task::OneTuq,
            &multiwoz(),
            "user_satisfaction",
            &PromptOptions::default(),
        )
        .unwrap();
        assert!(!off.user_text.contains("year-old"));
        let options = PromptOptions {
            include_demographics: true,
            ..Default::default()
        };
        let on = build_prompt(Task::OneTuq, &multiwoz(), "user_satisfaction", &options).unwrap();
        assert!(on.user_text.contains("assistant. The user is a 40-year-old.\n\nUser:"));
        assert_ne!(on.fingerprint, off.fingerprint);
    }

    #[test]
    fn fingerprint_is_deterministic() {
        let a = build_prompt(Task::TwoTuq, &candor(), "likes_partner", &PromptOptions::default()).unwrap();
        let b = build_prompt(Task::TwoTuq, &candor(), "likes_partner", &PromptOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint.len(), 64);
    }

    #[test]
    fn social_question_forms() {
        let opts = PromptOptions::default();
        let one = build_prompt(Task::OneTuq, &candor(), "likes_partner", &opts).unwrap();
        assert!(one.user_text.contains(
            "How certain is Speaker B that they (Speaker B) like Speaker A more than would occur by chance?"
        ));
        let two = build_prompt(Task::TwoTuq, &candor(), "likes_partner", &opts).unwrap();
        assert!(two
            .user_text
            .contains("How certain is Speaker A that Speaker B likes Speaker A more than would occur by chance?"));
        let world = build_prompt(Task::FunqWorldSide, &candor(), "likes_partner", &opts).unwrap();
        assert!(world
            .user_text
            .contains("How likely is it that Speaker B likes Speaker A more than would occur by chance?"));
    }

    #[test]
    fn unknown_question_and_task_errors() {
        let opts = PromptOptions::default();
        assert!(matches!(
            build_prompt(Task::OneTuq, &multiwoz(), "likes_partner", &opts),
            Err(PromptError::UnknownQuestion { .. })
        ));
        assert!(matches!(
            build_prompt(Task::TwoTuq, &multiwoz(), "user_satisfaction", &opts),
            Err(PromptError::UnsupportedTask { .. })
        ));
        let mut d = candor();
        d.annotations.truncate(1);
        assert!(matches!(
            build_prompt(Task::TwoTuq, &d, "likes_partner", &opts),
            Err(PromptError::MissingAnnotation { .. })
        ));
    }
}
