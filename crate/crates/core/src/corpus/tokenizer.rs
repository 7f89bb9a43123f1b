use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const EOS: &str = "<eos>";
pub const SPECIALS: [&str; 2] = [PAD, EOS];

/// Closed-world word-level tokenizer. Ids 0 and 1 are `<pad>` and `<eos>`;
/// the remaining words follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Tokenizer {
    fn from(words: Vec<String>) -> Self {
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, ids }
    }
}

impl From<Tokenizer> for Vec<String> {
    fn from(t: Tokenizer) -> Self {
        t.words
    }
}

impl Tokenizer {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_string())
            .filter(|w| !SPECIALS.contains(&w.as_str()))
            .collect();
        let words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).chain(set).collect();
        Self::from(words)
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn eos_id(&self) -> usize {
        1
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.ids.get(word).copied().ok_or_else(|| Error::Tokenizer(word.to_string()))
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Splits on single spaces and maps each word to its id.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        text.split(' ').map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&i| self.word(i).ok_or_else(|| Error::Input(format!("token id {i} outside vocabulary"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first_then_sorted() {
        let t = Tokenizer::from_words(["zeta", "alpha", "alpha", "<eos>"]);
        assert_eq!(t.words(), &["<pad>", "<eos>", "alpha", "zeta"]);
        assert_eq!(t.vocab_size(), 2 + 2);
    }

    #[test]
    fn round_trip_and_empty() {
        let t = Tokenizer::from_words(["the", "cat", "sat", "."]);
        let ids = t.tokenize("the cat sat .").unwrap();
        assert_eq!(t.detokenize(&ids).unwrap(), "the cat sat .");
        assert!(t.tokenize("").unwrap().is_empty());
    }

    #[test]
    fn oov_names_the_word() {
        let t = Tokenizer::from_words(["the"]);
        match t.tokenize("the dog") {
            Err(Error::Tokenizer(w)) => assert_eq!(w, "dog"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
