use std::collections::{BTreeSet, HashMap};

use sha2::{Digest, Sha256};

use super::Dialog;

pub const UNK: &str = "<unk>";
pub const SILENCE: &str = "<silence>";
pub const UNK_ID: usize = 0;
pub const SILENCE_ID: usize = 1;
pub const NUM_RESERVED: usize = 2;

/// Token index shared by every corpus a model sees. Index 0 is UNK, index 1
/// is SILENCE, and the remaining tokens follow in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> =
            tokens.into_iter().map(|t| t.as_ref().to_owned()).filter(|t| t != UNK && t != SILENCE).collect();
        let tokens: Vec<String> = [UNK.to_owned(), SILENCE.to_owned()].into_iter().chain(set).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Index of `token`, or UNK when absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }
}

/// Unified vocabulary over the user tokens of every supplied corpus.
pub fn build_vocabulary(corpora: &[&[Dialog]]) -> Vocabulary {
    Vocabulary::from_tokens(
        corpora.iter().flat_map(|c| c.iter()).flat_map(|d| d.turns.iter()).flat_map(|t| t.user_tokens.iter()),
    )
}
