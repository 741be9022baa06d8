//! Word/punctuation tokenizer with a fixed dictionary and hashed ids for
//! everything else. Needs no vocabulary files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SpecialTokens, TokenizedSample};
use crate::error::TokenizerError;

pub(crate) const SPECIALS: SpecialTokens = SpecialTokens {
    bos: 0,
    pad: 1,
    eos: 2,
    unk: 3,
    mask: 4,
};

const FIRST_FREE_ID: u32 = 5;

/// Multi-character operators kept as one token.
const OPERATORS: [&str; 19] = [
    "->", "++", "--", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "::", "+=", "-=", "*=",
    "/=", "|=", "&=", "^=",
];

/// Keywords, common library names and punctuation of C, in id order.
pub const C_DICTIONARY: &[&str] = &[
    "NULL", "nullptr", "if", "else", "return", "for", "while", "do", "switch", "case", "break",
    "continue", "goto", "sizeof", "struct", "union", "enum", "typedef", "static", "const",
    "unsigned", "signed", "void", "char", "short", "int", "long", "float", "double", "bool",
    "size_t", "malloc", "calloc", "realloc", "free", "memcpy", "memset", "strcpy", "strlen",
    "printf", "fprintf", "assert", "p", "q", "ptr", "buf", "len", "n", "i", "0", "1", "(", ")",
    "{", "}", "[", "]", ";", ",", ".", "*", "&", "=", "+", "-", "/", "%", "!", "<", ">", "?",
    ":", "->", "++", "--", "==", "!=", "<=", ">=", "&&", "||",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackTokenizer {
    vocab_size: usize,
    dictionary: BTreeMap<String, u32>,
}

impl FallbackTokenizer {
    pub fn new(vocab_size: usize, dictionary: BTreeMap<String, u32>) -> Result<Self, TokenizerError> {
        for (word, &id) in &dictionary {
            if id < FIRST_FREE_ID || id as usize >= vocab_size {
                return Err(TokenizerError::Invalid(format!(
                    "dictionary id {id} for {word:?} must lie in [{FIRST_FREE_ID}, {vocab_size})"
                )));
            }
        }
        let tok = Self {
            vocab_size,
            dictionary,
        };
        if tok.hash_base() as usize >= vocab_size {
            return Err(TokenizerError::Invalid(format!(
                "vocab_size {vocab_size} leaves no room for hashed ids"
            )));
        }
        Ok(tok)
    }

    /// The [`C_DICTIONARY`] words at consecutive ids after the specials.
    pub fn c_default(vocab_size: usize) -> Result<Self, TokenizerError> {
        let dictionary = C_DICTIONARY
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), FIRST_FREE_ID + i as u32))
            .collect();
        Self::new(vocab_size, dictionary)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dictionary(&self) -> &BTreeMap<String, u32> {
        &self.dictionary
    }

    fn hash_base(&self) -> u32 {
        self.dictionary
            .values()
            .max()
            .map_or(FIRST_FREE_ID, |&m| m + 1)
    }

    pub fn token_id(&self, word: &str) -> u32 {
        if let Some(&id) = self.dictionary.get(word) {
            return id;
        }
        let base = self.hash_base() as u64;
        let span = self.vocab_size as u64 - base;
        (base + fnv1a(word.as_bytes()) % span) as u32
    }

    pub fn content_ids(&self, text: &str, limit: usize) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in split_words(text) {
            if ids.len() >= limit {
                break;
            }
            ids.push(self.token_id(word));
        }
        ids
    }

    pub fn encode(&self, text: &str, max_length: usize) -> TokenizedSample {
        let content = self.content_ids(text, max_length.saturating_sub(2));
        TokenizedSample::assemble(&content, &SPECIALS, max_length)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Identifier/number runs, known operators, and single punctuation chars.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
            continue;
        }
        let len = if is_word_char(c) {
            rest.find(|ch: char| !is_word_char(ch)).unwrap_or(rest.len())
        } else if let Some(op) = OPERATORS.iter().find(|op| rest.starts_with(*op)) {
            op.len()
        } else {
            c.len_utf8()
        };
        out.push(&rest[..len]);
        rest = &rest[len..];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab() -> FallbackTokenizer {
        let dict = [("a".to_string(), 5), ("b".to_string(), 6)].into_iter().collect();
        FallbackTokenizer::new(64, dict).unwrap()
    }

    #[test]
    fn dictionary_words() {
        let s = ab().encode("a b", 6);
        assert_eq!(s.token_ids, vec![0, 5, 6, 2, 1, 1]);
        assert_eq!(s.true_length, 4);
    }

    #[test]
    fn empty_input() {
        let s = ab().encode("", 4);
        assert_eq!(s.token_ids, vec![0, 2, 1, 1]);
        assert_eq!(s.attention_mask, vec![1, 1, 0, 0]);
    }

    #[test]
    fn deterministic_and_in_range() {
        let t = ab();
        let x = t.encode("foo->bar[i] = baz_2;", 16);
        assert_eq!(x, t.encode("foo->bar[i] = baz_2;", 16));
        assert!(x.token_ids.iter().all(|&id| (id as usize) < 64));
        assert!(x.token_ids[1..x.true_length - 1].iter().all(|&id| id >= 7));
    }

    #[test]
    fn splits_c_source() {
        assert_eq!(
            split_words("if (p->next != NULL) *p++ = 0;"),
            vec!["if", "(", "p", "->", "next", "!=", "NULL", ")", "*", "p", "++", "=", "0", ";"]
        );
    }

    #[test]
    fn c_dictionary_is_injective() {
        let t = FallbackTokenizer::c_default(1024).unwrap();
        assert_eq!(t.dictionary().len(), C_DICTIONARY.len());
        assert_ne!(t.token_id("NULL"), t.token_id("malloc"));
    }

    #[test]
    fn rejects_bad_dictionary() {
        let dict = [("a".to_string(), 2)].into_iter().collect();
        assert!(FallbackTokenizer::new(64, dict).is_err());
        let dict = [("a".to_string(), 63)].into_iter().collect();
        assert!(FallbackTokenizer::new(64, dict).is_err());
    }

    proptest! {
        #[test]
        fn prefix_extension_never_shortens(a in "[a-z0-9 ;*()=>-]{0,40}", b in "[a-z0-9 ;*()=>-]{0,40}") {
            let t = FallbackTokenizer::c_default(512).unwrap();
            let short = t.encode(&a, 24);
            let long = t.encode(&format!("{a}{b}"), 24);
            prop_assert!(long.true_length >= short.true_length);
        }
    }
}
