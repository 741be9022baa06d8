//! Byte-level BPE over RoBERTa/CodeBERT-style `vocab.json` + `merges.txt`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;

use super::{SpecialTokens, TokenizedSample};
use crate::error::TokenizerError;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const MASK: &str = "<mask>";

#[derive(Debug, Clone, PartialEq)]
pub struct BpeVocab {
    token_to_id: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    pub specials: SpecialTokens,
}

/// GPT-2's reversible byte → printable-char table.
pub fn byte_to_unicode() -> &'static [char; 256] {
    static TABLE: OnceLock<[char; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let printable = |b: u32| {
            (u32::from(b'!')..=u32::from(b'~')).contains(&b)
                || (0xA1..=0xAC).contains(&b)
                || (0xAE..=0xFF).contains(&b)
        };
        let mut table = ['\0'; 256];
        let mut next = 256u32;
        for b in 0..256u32 {
            table[b as usize] = if printable(b) {
                char::from_u32(b).expect("latin-1")
            } else {
                let c = char::from_u32(next).expect("below surrogates");
                next += 1;
                c
            };
        }
        table
    })
}

fn pretoken_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+")
            .expect("valid pattern")
    })
}

fn is_contraction(s: &str) -> bool {
    matches!(s, "'s" | "'t" | "'re" | "'ve" | "'m" | "'ll" | "'d")
}

/// GPT-2 pre-tokenisation.
///
/// The reference pattern ends in `\s+(?!\S)|\s+`; without look-ahead we
/// match `\s+` greedily and then hand the last whitespace character of a run
/// to the following word, which is what the look-ahead achieves.
pub fn pretokenize(text: &str) -> Vec<String> {
    let raw: Vec<&str> = pretoken_regex().find_iter(text).map(|m| m.as_str()).collect();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let piece = raw[i];
        let is_ws = piece.chars().all(char::is_whitespace);
        let next = raw.get(i + 1).copied();
        let followed_by_word = next.is_some_and(|n| !n.starts_with(char::is_whitespace));
        if is_ws && followed_by_word && piece.chars().count() > 1 {
            let (last_at, last) = piece.char_indices().last().expect("non-empty");
            out.push(piece[..last_at].to_string());
            let next = next.expect("checked above");
            if last == ' ' && !is_contraction(next) {
                out.push(format!(" {next}"));
                i += 2;
            } else {
                out.push(last.to_string());
                i += 1;
            }
            continue;
        }
        out.push(piece.to_string());
        i += 1;
    }
    out
}

/// Vocabulary entries in file order, so duplicates can be detected.
struct OrderedEntries(Vec<(String, u32)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = OrderedEntries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object mapping tokens to ids")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut v = Vec::new();
                while let Some(entry) = map.next_entry::<String, u32>()? {
                    v.push(entry);
                }
                Ok(OrderedEntries(v))
            }
        }
        d.deserialize_map(V)
    }
}

/// Reads a JSON token→id map and a ranked merges file.
pub fn load_vocab(vocab_path: &Path, merges_path: &Path) -> Result<BpeVocab, TokenizerError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|source| TokenizerError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let vocab_text = read(vocab_path)?;
    let entries: OrderedEntries =
        serde_json::from_str(&vocab_text).map_err(|e| TokenizerError::Malformed {
            path: vocab_path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;

    let merges_text = read(merges_path)?;
    let mut merges = Vec::new();
    for (n, line) in merges_text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || (n == 0 && line.starts_with("#version")) {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                merges.push((a.to_string(), b.to_string()))
            }
            _ => {
                return Err(TokenizerError::Malformed {
                    path: merges_path.to_path_buf(),
                    line: n + 1,
                    msg: format!("expected two space-separated symbols, got {line:?}"),
                })
            }
        }
    }
    BpeVocab::from_parts(entries.0, merges)
}

impl BpeVocab {
    /// Builds and validates a vocabulary from `(token, id)` pairs and merges
    /// in priority order.
    pub fn from_parts(
        entries: Vec<(String, u32)>,
        merges: Vec<(String, String)>,
    ) -> Result<Self, TokenizerError> {
        let mut token_to_id = HashMap::with_capacity(entries.len());
        for (tok, id) in entries {
            if token_to_id.insert(tok.clone(), id).is_some() {
                return Err(TokenizerError::DuplicateToken(tok));
            }
        }
        let n = token_to_id.len();
        let mut seen = vec![false; n];
        for (tok, &id) in &token_to_id {
            match seen.get_mut(id as usize) {
                Some(slot) if !*slot => *slot = true,
                Some(_) => {
                    return Err(TokenizerError::Invalid(format!(
                        "id {id} is assigned to more than one token (last: {tok:?})"
                    )))
                }
                None => {
                    return Err(TokenizerError::Invalid(format!(
                        "id {id} of {tok:?} is outside [0, {n})"
                    )))
                }
            }
        }
        let special = |name: &'static str| {
            token_to_id
                .get(name)
                .copied()
                .ok_or(TokenizerError::MissingSpecial(name))
        };
        let specials = SpecialTokens {
            bos: special(BOS)?,
            eos: special(EOS)?,
            pad: special(PAD)?,
            unk: special(UNK)?,
            mask: special(MASK)?,
        };

        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let joined = format!("{a}{b}");
            if !token_to_id.contains_key(&joined) {
                return Err(TokenizerError::Invalid(format!(
                    "merge {a:?} + {b:?} produces {joined:?}, which is not in the vocabulary"
                )));
            }
            ranks.entry((a.clone(), b.clone())).or_insert(rank);
        }
        Ok(Self {
            token_to_id,
            merges,
            ranks,
            specials,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_to_id.len()
    }

    /// `(token, id)` pairs ordered by id.
    pub fn entries(&self) -> Vec<(String, u32)> {
        let mut out: Vec<(String, u32)> = self.token_to_id.iter().map(|(t, &i)| (t.clone(), i)).collect();
        out.sort_by_key(|e| e.1);
        out
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    /// Applies ranked merges to one pre-token (already byte-mapped).
    pub fn bpe(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == a && &symbols[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Content token ids (no bos/eos), stopping once `limit` are produced.
    pub fn content_ids(&self, text: &str, limit: usize) -> Vec<u32> {
        let table = byte_to_unicode();
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            if ids.len() >= limit {
                break;
            }
            let mapped: String = piece.bytes().map(|b| table[b as usize]).collect();
            for sym in self.bpe(&mapped) {
                ids.push(self.token_id(&sym).unwrap_or(self.specials.unk));
            }
        }
        ids.truncate(limit);
        ids
    }

    pub fn encode(&self, text: &str, max_length: usize) -> TokenizedSample {
        let content = self.content_ids(text, max_length.saturating_sub(2));
        TokenizedSample::assemble(&content, &self.specials, max_length)
    }
}
