//! Source text → fixed-length token ids plus attention mask.
//!
//! Two tokenizers share one output contract ([`TokenizedSample`]):
//! a byte-level BPE compatible with RoBERTa-family vocabulary files, and a
//! small word/punctuation tokenizer that needs no external files.

mod bpe;
mod fallback;

use serde::{Deserialize, Serialize};

pub use bpe::{byte_to_unicode, load_vocab, pretokenize, BpeVocab};
pub use fallback::{FallbackTokenizer, C_DICTIONARY};

/// Default sequence length for the full-size encoder.
pub const DEFAULT_MAX_LENGTH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
    pub unk: u32,
    pub mask: u32,
}

/// One encoded function.
///
/// `token_ids` and `attention_mask` always have exactly `max_length`
/// entries; the mask is a run of ones (`true_length` of them) followed by
/// zeros, and every masked position holds the pad id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSample {
    pub token_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenizedSample {
    /// Frames `content` with bos/eos, keeps the head when it does not fit,
    /// and pads to `max_length`.
    pub fn assemble(content: &[u32], specials: &SpecialTokens, max_length: usize) -> Self {
        assert!(max_length >= 2, "max_length must leave room for bos and eos");
        let keep = content.len().min(max_length - 2);
        let mut token_ids = Vec::with_capacity(max_length);
        token_ids.push(specials.bos);
        token_ids.extend_from_slice(&content[..keep]);
        token_ids.push(specials.eos);
        let true_length = token_ids.len();
        token_ids.resize(max_length, specials.pad);
        let mut attention_mask = vec![1u8; true_length];
        attention_mask.resize(max_length, 0);
        Self {
            token_ids,
            attention_mask,
            true_length,
        }
    }

    pub fn max_length(&self) -> usize {
        self.token_ids.len()
    }

    /// The unpadded prefix, including bos and eos.
    pub fn active_ids(&self) -> &[u32] {
        &self.token_ids[..self.true_length]
    }
}

/// Either tokenizer behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    Bpe(BpeVocab),
    Fallback(FallbackTokenizer),
}

impl Tokenizer {
    pub fn encode(&self, text: &str, max_length: usize) -> TokenizedSample {
        match self {
            Tokenizer::Bpe(v) => v.encode(text, max_length),
            Tokenizer::Fallback(f) => f.encode(text, max_length),
        }
    }

    pub fn encode_batch<S: AsRef<str>>(&self, texts: &[S], max_length: usize) -> Vec<TokenizedSample> {
        texts.iter().map(|t| self.encode(t.as_ref(), max_length)).collect()
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Bpe(v) => v.vocab_size(),
            Tokenizer::Fallback(f) => f.vocab_size(),
        }
    }

    pub fn specials(&self) -> SpecialTokens {
        match self {
            Tokenizer::Bpe(v) => v.specials,
            Tokenizer::Fallback(_) => fallback::SPECIALS,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SPECIALS: SpecialTokens = SpecialTokens {
        bos: 0,
        pad: 1,
        eos: 2,
        unk: 3,
        mask: 4,
    };

    #[test]
    fn assemble_empty() {
        let s = TokenizedSample::assemble(&[], &SPECIALS, 6);
        assert_eq!(s.token_ids, vec![0, 2, 1, 1, 1, 1]);
        assert_eq!(s.attention_mask, vec![1, 1, 0, 0, 0, 0]);
        assert_eq!(s.true_length, 2);
    }

    #[test]
    fn assemble_truncates_head_and_keeps_eos() {
        let s = TokenizedSample::assemble(&[10, 11, 12, 13, 14], &SPECIALS, 5);
        assert_eq!(s.token_ids, vec![0, 10, 11, 12, 2]);
        assert_eq!(s.true_length, 5);
        assert!(s.attention_mask.iter().all(|&m| m == 1));
    }

    proptest! {
        #[test]
        fn assembled_shape_contract(content in prop::collection::vec(5u32..100, 0..40), max_length in 2usize..32) {
            let s = TokenizedSample::assemble(&content, &SPECIALS, max_length);
            prop_assert_eq!(s.token_ids.len(), max_length);
            prop_assert_eq!(s.attention_mask.len(), max_length);
            prop_assert!(s.true_length >= 2 && s.true_length <= max_length);
            prop_assert_eq!(s.attention_mask.iter().map(|&m| m as usize).sum::<usize>(), s.true_length);
            for i in 0..max_length {
                prop_assert_eq!(s.attention_mask[i] == 1, i < s.true_length);
                if i >= s.true_length {
                    prop_assert_eq!(s.token_ids[i], SPECIALS.pad);
                }
            }
            prop_assert_eq!(s.token_ids[s.true_length - 1], SPECIALS.eos);
        }
    }
}
