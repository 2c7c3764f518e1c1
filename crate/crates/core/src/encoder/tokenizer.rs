//! Whitespace + punctuation pre-tokenizer with a corpus-built word-piece
//! vocabulary. Every token keeps its byte offsets into the source text so
//! that extracted spans can be mapped back to the original substring.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{DstError, Result};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const SEP: u32 = 2;
pub const MASK: u32 = 3;
pub const UNK: u32 = 4;
pub const USR: u32 = 5;
pub const SYS: u32 = 6;
pub const SPECIAL_TOKENS: [&str; 7] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]", "[USR]", "[SYS]"];
pub const NUM_SPECIAL: u32 = SPECIAL_TOKENS.len() as u32;

const CONTINUATION: &str = "##";

pub fn is_special(id: u32) -> bool {
    id < NUM_SPECIAL
}

/// A lowercased word or punctuation mark with byte offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on whitespace; every non-alphanumeric character stands alone.
pub fn pre_tokenize(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut word_start: Option<usize> = None;
    let flush = |pieces: &mut Vec<Piece>, start: &mut Option<usize>, end: usize| {
        if let Some(s) = start.take() {
            pieces.push(Piece {
                text: text[s..end].to_lowercase(),
                start: s,
                end,
            });
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
        } else {
            flush(&mut pieces, &mut word_start, i);
            if !c.is_whitespace() {
                let end = i + c.len_utf8();
                pieces.push(Piece {
                    text: text[i..end].to_lowercase(),
                    start: i,
                    end,
                });
            }
        }
    }
    flush(&mut pieces, &mut word_start, text.len());
    pieces
}

/// The canonical surface form `detokenize` produces for in-vocabulary text.
pub fn normalize_spacing(text: &str) -> String {
    pre_tokenize(text)
        .into_iter()
        .map(|p| p.text)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Tokenizer {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(DstError::parse("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(DstError::parse("vocabulary", format!("expected {s} at line {}", i + 1)));
            }
        }
        Ok(Tokenizer { tokens, index })
    }

    /// Builds a vocabulary from texts: reserved tokens, then every character
    /// seen (as a word start and as a continuation piece), then whole words
    /// by descending frequency up to `max_words`.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_words: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut chars: BTreeMap<String, ()> = BTreeMap::new();
        for text in texts {
            for piece in pre_tokenize(text) {
                for c in piece.text.chars() {
                    chars.insert(c.to_string(), ());
                }
                *counts.entry(piece.text).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for c in chars.keys() {
            tokens.push(c.clone());
            tokens.push(format!("{CONTINUATION}{c}"));
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| w.chars().count() > 1).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        tokens.extend(words.into_iter().take(max_words).map(|(w, _)| w));
        Tokenizer::from_tokens(tokens).expect("built vocabulary is well formed")
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Non-special tokens, used as the random-word vocabulary.
    pub fn words(&self) -> Vec<String> {
        self.tokens[NUM_SPECIAL as usize..]
            .iter()
            .filter(|t| !t.starts_with(CONTINUATION))
            .cloned()
            .collect()
    }

    /// Greedy longest-match word pieces; the whole word maps to `[UNK]`
    /// when some suffix cannot be matched.
    fn word_pieces(&self, piece: &Piece, out: &mut Vec<Token>) {
        if let Some(id) = self.id(&piece.text) {
            out.push(Token {
                id,
                start: piece.start,
                end: piece.end,
            });
            return;
        }
        let word = piece.text.as_str();
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let mut found = Vec::new();
        let mut from = 0;
        while from + 1 < bounds.len() {
            let mut matched = None;
            for to in (from + 1..bounds.len()).rev() {
                let sub = &word[bounds[from]..bounds[to]];
                let key = if from == 0 {
                    sub.to_string()
                } else {
                    format!("{CONTINUATION}{sub}")
                };
                if let Some(id) = self.id(&key) {
                    matched = Some((id, to));
                    break;
                }
            }
            let Some((id, to)) = matched else {
                out.push(Token {
                    id: UNK,
                    start: piece.start,
                    end: piece.end,
                });
                return;
            };
            found.push((id, bounds[from], bounds[to]));
            from = to;
        }
        // Offsets refer to the lowercased word; they coincide with the source
        // text for every character whose lowercase form has the same length.
        let same_len = piece.end - piece.start == word.len();
        for (id, s, e) in found {
            let (start, end) = if same_len {
                (piece.start + s, piece.start + e)
            } else {
                (piece.start, piece.end)
            };
            out.push(Token { id, start, end });
        }
    }

    pub fn tokenize_with_offsets(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::new();
        for piece in pre_tokenize(text) {
            self.word_pieces(&piece, &mut out);
        }
        out
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenize_with_offsets(text).into_iter().map(|t| t.id).collect()
    }

    /// Joins token strings; continuation pieces attach to the previous token
    /// and special tokens are dropped.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if is_special(id) && id != UNK {
                continue;
            }
            let t = self.token(id);
            if let Some(rest) = t.strip_prefix(CONTINUATION).filter(|r| !r.is_empty()) {
                out.push_str(rest);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(t);
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Tokenizer::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| DstError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
        Tokenizer::from_text(&text)
    }
}

/// Position of the last occurrence of `needle` in `haystack`.
pub fn find_last(haystack: &[u32], needle: &[u32]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).rev().find(|&i| &haystack[i..i + needle.len()] == needle)
}
