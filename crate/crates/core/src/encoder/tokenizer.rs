//! Word-level tokenizer: lowercased whitespace/punctuation splitting over a
//! frequency-ranked vocabulary with five reserved ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Padding token id.
pub const PAD: u32 = 0;
/// Unknown-word token id.
pub const UNK: u32 = 1;
/// Classification token id, prepended to every sequence.
pub const CLS: u32 = 2;
/// Separator token id, appended to every sequence.
pub const SEP: u32 = 3;
/// Mask token id used by masked-language-model training.
pub const MASK: u32 = 4;
/// Number of reserved ids preceding the first real word id.
pub const RESERVED_TOKENS: usize = 5;

const RESERVED_NAMES: [&str; RESERVED_TOKENS] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Frequency-ranked word list; word `i` has token id `RESERVED_TOKENS + i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from raw texts: words ranked by descending frequency, ties by
    /// lexicographic order, truncated to `max_words` entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Vocabulary {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for word in split_words(text) {
                *counts.entry(word).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);
        Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w)).expect("ranked words are unique")
    }

    /// Build from an explicit word list (checkpoint loading, tests).
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Vocabulary> {
        let words: Vec<String> = words.into_iter().collect();
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), (RESERVED_TOKENS + i) as u32).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "duplicate vocabulary word `{w}`"
                )));
            }
        }
        Ok(Vocabulary { words, index })
    }

    /// Total id space: reserved ids plus ranked words.
    pub fn size(&self) -> usize {
        RESERVED_TOKENS + self.words.len()
    }

    /// Token id for a (already lowercased/split) word; UNK when absent.
    pub fn id_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Surface form for any id, including reserved markers.
    pub fn word_of(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < RESERVED_TOKENS {
            Some(RESERVED_NAMES[id])
        } else {
            self.words.get(id - RESERVED_TOKENS).map(String::as_str)
        }
    }

    /// The ranked word list (without reserved markers).
    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Vocabulary> {
        Vocabulary::from_words(words)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.words
    }
}

/// Lowercase and split on everything non-alphanumeric (whitespace and
/// punctuation alike).
pub fn split_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Tokenize to ids: `[CLS] words… [SEP]`, unknowns mapped to UNK, words
/// truncated to `max_tokens − 2` so both markers always survive.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_tokens: usize) -> Vec<u32> {
    let budget = max_tokens.saturating_sub(2);
    let mut ids = Vec::with_capacity(max_tokens.min(budget + 2));
    ids.push(CLS);
    ids.extend(
        split_words(text)
            .iter()
            .take(budget)
            .map(|w| vocab.id_of(w)),
    );
    ids.push(SEP);
    ids
}
