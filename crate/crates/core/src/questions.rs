//! Question keys understood by the prompt templates, and the outcome each
//! one asks about.

use crate::corpus::CorpusTag;

/// Which prompt forms a question key supports.
#[derive(Debug, Clone, Copy)]
pub struct QuestionSpec {
    pub key: &'static str,
    pub corpus_tags: &'static [CorpusTag],
    /// Supports the second-order and world-side (FUnQ) prompt forms.
    pub second_order: bool,
}

pub const QUESTIONS: &[QuestionSpec] = &[
    QuestionSpec {
        key: "self_satisfaction",
        corpus_tags: &[CorpusTag::Negotiation],
        second_order: false,
    },
    QuestionSpec {
        key: "user_satisfaction",
        corpus_tags: &[CorpusTag::TaskOriented],
        second_order: false,
    },
    QuestionSpec {
        key: "likes_partner",
        corpus_tags: &[CorpusTag::Social, CorpusTag::Synthetic],
        second_order: true,
    },
];

pub fn lookup(key: &str, tag: CorpusTag) -> Option<&'static QuestionSpec> {
    QUESTIONS.iter().find(|q| q.key == key && q.corpus_tags.contains(&tag))
}

/// Human-readable outcome for a question key, with placeholders filled by
/// the subject (belief holder) and the other party.
pub fn outcome_statement(key: &str, subject: &str, other: &str) -> String {
    match key {
        "self_satisfaction" | "user_satisfaction" => {
            format!("whether {subject} is more satisfied than would occur by chance")
        }
        "likes_partner" => format!("whether {subject} likes {other} more than would occur by chance"),
        other_key => format!("whether {subject}'s {other_key} rating is more extreme than would occur by chance"),
    }
}
