//! Dialog transcripts and everything derived from them before modelling:
//! tokenization, the unified vocabulary, slot lexicon and delexicalization,
//! the action inventory, context tracking and per-turn features.

mod actions;
mod embedding;
mod features;
mod lexicon;
mod transcript;
mod vocab;

pub use actions::{assign_actions, extract_action_set, ActionId, ActionSet, DEFAULT_FALLBACK};
pub use embedding::EmbeddingTable;
pub use features::{
    featurize_turn, track_context, BowVector, ContextFeatures, ContextSlots, ContextTracker, FeaturizedDialog,
    Featurizer, TurnFeatures, CONTEXT_DIM,
};
pub use lexicon::{delexicalize, Lexicon};
pub use transcript::{
    apply_labels, parse_dialogs, parse_labels, write_dialogs, write_labels, CORPUS_FORMAT_VERSION, LABEL_FORMAT_VERSION,
};
pub use vocab::{build_vocabulary, Vocabulary, NUM_RESERVED, SILENCE, SILENCE_ID, UNK, UNK_ID};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Marker used by bAbI-style transcripts for an empty user turn.
pub const SILENCE_MARKER: &str = "<SILENCE>";

/// System utterances starting with this token are API calls.
pub const API_CALL: &str = "api_call";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OodLabel {
    Ind,
    TurnOod,
    SegmentOod,
}

impl OodLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            OodLabel::Ind => "IND",
            OodLabel::TurnOod => "TURN_OOD",
            OodLabel::SegmentOod => "SEGMENT_OOD",
        }
    }
}

impl fmt::Display for OodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OodLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "IND" => Ok(OodLabel::Ind),
            "TURN_OOD" => Ok(OodLabel::TurnOod),
            "SEGMENT_OOD" => Ok(OodLabel::SegmentOod),
            other => Err(Error::InvalidValue(format!("unknown OOD label `{other}`"))),
        }
    }
}

/// One knowledge-base line, e.g. `resto_1 R_phone resto_1_phone`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KbFact {
    pub text: String,
}

impl KbFact {
    pub fn new(text: impl Into<String>) -> Self {
        KbFact { text: text.into() }
    }

    /// `(subject, relation, object)` when the fact has exactly three fields.
    pub fn triple(&self) -> Option<(&str, &str, &str)> {
        let mut it = self.text.split_whitespace();
        let t = (it.next()?, it.next()?, it.next()?);
        it.next().is_none().then_some(t)
    }
}

/// A user utterance and the system response that follows it.
#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    /// User text exactly as it appears in the transcript.
    pub user_text: String,
    pub user_tokens: Vec<String>,
    pub system_utterance: String,
    pub system_action: Option<ActionId>,
    pub ood_label: OodLabel,
    /// Facts printed before this exchange (API call results).
    pub kb_facts: Vec<KbFact>,
    /// Segment-level prefix added by augmentation.
    pub interjection: Option<String>,
}

impl Turn {
    pub fn new(user_text: impl Into<String>, system_utterance: impl Into<String>) -> Self {
        let user_text = user_text.into();
        let user_tokens = tokenize(&user_text);
        Turn {
            user_text,
            user_tokens,
            system_utterance: system_utterance.into(),
            system_action: None,
            ood_label: OodLabel::Ind,
            kb_facts: Vec::new(),
            interjection: None,
        }
    }

    pub fn is_silence(&self) -> bool {
        self.user_tokens.len() == 1 && self.user_tokens[0] == SILENCE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialog {
    pub id: usize,
    pub turns: Vec<Turn>,
    /// Facts after the last exchange, kept so that transcripts round-trip.
    pub trailing_facts: Vec<KbFact>,
}

impl Dialog {
    pub fn new(id: usize, turns: Vec<Turn>) -> Self {
        Dialog { id, turns, trailing_facts: Vec::new() }
    }
}

fn is_separated_punct(c: char) -> bool {
    matches!(c, '.' | ',' | '?' | '!' | ';' | ':' | '(' | ')' | '"')
}

/// Lowercases and splits on whitespace after detaching punctuation.
/// Empty input and the transcript silence marker both become `[SILENCE]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if is_separated_punct(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.extend(c.to_lowercase());
        }
    }
    let tokens: Vec<String> = spaced.split_whitespace().map(str::to_owned).collect();
    if tokens.is_empty() {
        vec![SILENCE.to_owned()]
    } else {
        tokens
    }
}
