use std::collections::HashMap;
use std::fmt::Write as _;

use super::Dialog;
use crate::error::{Error, Result};

/// Relation used for restaurant names when seeding from KB facts.
pub const NAME_SLOT: &str = "R_name";

/// Slot-type → value table used for delexicalization and context tracking.
/// Values are matched as whitespace-separated token sequences.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<(String, String)>,
    lookup: HashMap<Vec<String>, usize>,
    slot_names: Vec<String>,
    value_slot: Vec<usize>,
    max_len: usize,
}

/// One piece of a segmented token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Value { slot: usize, start: usize, len: usize },
    Token(usize),
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry. Values that are already present keep their first slot.
    pub fn insert(&mut self, slot_type: &str, value: &str) -> Result<()> {
        let key: Vec<String> = value.split_whitespace().map(str::to_owned).collect();
        if key.is_empty() {
            return Err(Error::InvalidValue(format!("empty lexicon value for slot `{slot_type}`")));
        }
        if self.lookup.contains_key(&key) {
            return Ok(());
        }
        let slot = match self.slot_names.iter().position(|s| s == slot_type) {
            Some(i) => i,
            None => {
                self.slot_names.push(slot_type.to_owned());
                self.slot_names.len() - 1
            }
        };
        self.max_len = self.max_len.max(key.len());
        self.lookup.insert(key, self.entries.len());
        self.entries.push((slot_type.to_owned(), key_text(value)));
        self.value_slot.push(slot);
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (slot, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse { line: idx + 1, message: "expected `slot_type<TAB>value`".into() })?;
            lex.insert(slot, value).map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        }
        Ok(lex)
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        for (slot, value) in &self.entries {
            let _ = writeln!(out, "{slot}\t{value}");
        }
        out
    }

    /// Seeds a lexicon from KB fact triples: relation → object, plus
    /// [`NAME_SLOT`] → subject.
    pub fn from_kb_facts(dialogs: &[Dialog]) -> Self {
        let mut lex = Lexicon::new();
        let facts =
            dialogs.iter().flat_map(|d| d.turns.iter().flat_map(|t| t.kb_facts.iter()).chain(d.trailing_facts.iter()));
        for fact in facts {
            if let Some((subject, relation, object)) = fact.triple() {
                // Subject and object are single tokens, so insert cannot fail.
                let _ = lex.insert(NAME_SLOT, subject);
                let _ = lex.insert(relation, object);
            }
        }
        lex
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn slot_names(&self) -> &[String] {
        &self.slot_names
    }

    /// Leftmost-longest segmentation of `tokens` into lexicon values and
    /// plain tokens.
    pub fn segment<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<Segment> {
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        let mut key: Vec<String> = Vec::with_capacity(self.max_len);
        while i < tokens.len() {
            let longest = self.max_len.min(tokens.len() - i);
            let mut hit = None;
            for len in (1..=longest).rev() {
                key.clear();
                key.extend(tokens[i..i + len].iter().map(|t| t.as_ref().to_owned()));
                if let Some(&entry) = self.lookup.get(&key) {
                    hit = Some((entry, len));
                    break;
                }
            }
            match hit {
                Some((entry, len)) => {
                    out.push(Segment::Value { slot: self.value_slot[entry], start: i, len });
                    i += len;
                }
                None => {
                    out.push(Segment::Token(i));
                    i += 1;
                }
            }
        }
        out
    }

    /// Slot types mentioned anywhere in `tokens`.
    pub fn mentioned_slots<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<&str> {
        self.segment(tokens)
            .into_iter()
            .filter_map(|s| match s {
                Segment::Value { slot, .. } => Some(self.slot_names[slot].as_str()),
                Segment::Token(_) => None,
            })
            .collect()
    }
}

fn key_text(value: &str) -> String {
    value.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Replaces every lexicon value in `utterance` with its slot type,
/// leftmost-longest first.
pub fn delexicalize(utterance: &str, lexicon: &Lexicon) -> String {
    let tokens: Vec<&str> = utterance.split_whitespace().collect();
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len());
    for seg in lexicon.segment(&tokens) {
        match seg {
            Segment::Value { slot, .. } => out.push(&lexicon.slot_names[slot]),
            Segment::Token(i) => out.push(tokens[i]),
        }
    }
    out.join(" ")
}
