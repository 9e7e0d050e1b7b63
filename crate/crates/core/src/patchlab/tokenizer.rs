//! Word-level tokenizer with byte fallback.
//!
//! Text is split into maximal alphanumeric runs and single punctuation
//! characters; whitespace only separates. Pieces missing from the vocabulary
//! are encoded as their UTF-8 bytes (`<0xNN>` tokens, ids 0..=255).

use std::collections::{BTreeSet, HashMap};

pub const TOKENIZER_VERSION: &str = "word-bytes-v1";
const BYTE_TOKENS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Split text into word / punctuation pieces.
pub fn pieces(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push(&text[s..i]);
        }
        if !ch.is_whitespace() {
            out.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = word_start {
        out.push(&text[s..]);
    }
    out
}

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

impl Tokenizer {
    /// Vocabulary: the 256 byte tokens, then the sorted set of pieces found in
    /// `texts` plus the letters `A`..=`Z`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: BTreeSet<String> = ('A'..='Z').map(String::from).collect();
        for t in texts {
            words.extend(pieces(t).into_iter().map(str::to_string));
        }
        let tokens = (0..=255u8)
            .map(byte_token)
            .chain(words.into_iter().filter(|w| !is_byte_token(w)))
            .collect();
        Self::from_tokens(tokens).expect("generated vocabulary is unique")
    }

    /// Rebuild from a serialized token list. The first 256 entries must be the
    /// byte tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, String> {
        if tokens.len() < BYTE_TOKENS {
            return Err(format!("vocabulary has {} tokens, need at least 256", tokens.len()));
        }
        for (b, t) in tokens.iter().take(BYTE_TOKENS).enumerate() {
            if *t != byte_token(b as u8) {
                return Err(format!("token {b} must be {}", byte_token(b as u8)));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(format!("duplicate token `{t}`"));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token_id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for p in pieces(text) {
            match self.index.get(p) {
                Some(&id) if id as usize >= BYTE_TOKENS => out.push(id),
                _ => out.extend(p.bytes().map(u32::from)),
            }
        }
        out
    }

    /// Ids of whole-word (alphanumeric) vocabulary entries.
    pub fn word_ids(&self) -> Vec<u32> {
        (BYTE_TOKENS..self.tokens.len())
            .filter(|&i| self.tokens[i].chars().all(char::is_alphanumeric))
            .map(|i| i as u32)
            .collect()
    }
}

fn is_byte_token(s: &str) -> bool {
    s.len() == 6 && s.starts_with("<0x") && s.ends_with('>')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            pieces("1. Go to garden, then: Answer:"),
            vec!["1", ".", "Go", "to", "garden", ",", "then", ":", "Answer", ":"]
        );
        assert_eq!(pieces("  "), Vec::<&str>::new());
    }

    #[test]
    fn byte_fallback() {
        let t = Tokenizer::from_texts(["dig a hole"]);
        assert_eq!(t.encode("dig").len(), 1);
        let unknown = t.encode("xyz");
        assert_eq!(unknown, vec![b'x' as u32, b'y' as u32, b'z' as u32]);
        assert!(t.token_id("A").is_some());
    }

    #[test]
    fn token_list_round_trip() {
        let t = Tokenizer::from_texts(["plant the tree.", "water it"]);
        let back = Tokenizer::from_tokens(t.tokens().to_vec()).unwrap();
        assert_eq!(t, back);
        assert!(Tokenizer::from_tokens(vec!["x".into()]).is_err());
    }
}
