//! Tokenization, vocabulary construction, and id encoding.
//!
//! The tokenizer is word-level and deterministic: lowercase, split on whitespace,
//! and split punctuation characters into single-character tokens. The vocabulary
//! reserves seven special ids (`[PAD]`=0 … `[EOS]`=6) and assigns the remaining
//! ids densely by descending corpus frequency with a lexicographic tie-break.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;
pub const MASK: u32 = 4;
pub const BOS: u32 = 5;
pub const EOS: u32 = 6;

/// Surfaces of the special tokens, indexed by id.
pub const SPECIALS: [&str; 7] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BOS]", "[EOS]"];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("vocabulary file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary file {path} line {line}: expected special token {expected:?}, found {found:?}")]
    BadSpecial {
        path: String,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("vocabulary file {path} line {line}: duplicate token {token:?}")]
    DuplicateToken {
        path: String,
        line: usize,
        token: String,
    },
    #[error("vocabulary file {path}: fewer than {} lines (specials missing)", SPECIALS.len())]
    MissingSpecials { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Word,
    Punctuation,
    Special,
}

/// One surface token. Word and punctuation tokens are lowercase; special tokens
/// come only from [`SPECIALS`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn word(surface: impl Into<String>) -> Self {
        Token { surface: surface.into(), kind: TokenKind::Word }
    }

    pub fn punct(surface: impl Into<String>) -> Self {
        Token { surface: surface.into(), kind: TokenKind::Punctuation }
    }

    pub fn special(id: u32) -> Self {
        Token { surface: SPECIALS[id as usize].to_string(), kind: TokenKind::Special }
    }

    pub fn is_word(&self) -> bool {
        self.kind == TokenKind::Word
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Lowercase and split `text` into word and punctuation tokens.
///
/// Words are maximal runs of alphanumeric characters; every other
/// non-whitespace character becomes a single-character punctuation token.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(|c| c.to_lowercase()) {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(Token::word(std::mem::take(&mut word)));
            }
            if !ch.is_whitespace() {
                tokens.push(Token::punct(ch.to_string()));
            }
        }
    }
    if !word.is_empty() {
        tokens.push(Token::word(word));
    }
    tokens
}

/// Join word surfaces with single spaces (the inverse of [`tokenize`] on
/// word-only token sequences).
pub fn join_surfaces(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
}

/// Bijective token ↔ id map with the seven reserved specials at ids 0–6.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_of: HashMap<String, u32>,
    token_of: Vec<String>,
}

impl Vocabulary {
    /// Build from tokenized sentences: specials first, then every token with
    /// frequency ≥ `min_count`, ordered by descending frequency then
    /// lexicographically.
    pub fn build(corpus: &[Vec<Token>], min_count: usize) -> Vocabulary {
        assert!(min_count >= 1, "min_count must be >= 1");
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for sent in corpus {
            for tok in sent {
                if tok.kind != TokenKind::Special {
                    *freq.entry(tok.surface.as_str()).or_insert(0) += 1;
                }
            }
        }
        let mut by_freq: Vec<(&str, usize)> =
            freq.into_iter().filter(|&(_, c)| c >= min_count).collect();
        by_freq.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let mut vocab = Vocabulary { id_of: HashMap::new(), token_of: Vec::new() };
        for s in SPECIALS {
            vocab.push(s.to_string());
        }
        for (surface, _) in by_freq {
            vocab.push(surface.to_string());
        }
        vocab
    }

    fn push(&mut self, surface: String) {
        let id = self.token_of.len() as u32;
        let prev = self.id_of.insert(surface.clone(), id);
        debug_assert!(prev.is_none(), "duplicate vocabulary entry {surface:?}");
        self.token_of.push(surface);
    }

    pub fn size(&self) -> usize {
        self.token_of.len()
    }

    /// Id for a surface, or [`UNK`] when absent.
    pub fn id_or_unk(&self, surface: &str) -> u32 {
        self.id_of.get(surface).copied().unwrap_or(UNK)
    }

    pub fn id_of(&self, surface: &str) -> Option<u32> {
        self.id_of.get(surface).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.token_of.get(id as usize).map(|s| s.as_str())
    }

    /// Render ids as surfaces, skipping nothing; unknown ids render as `[UNK]`.
    pub fn surfaces(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token_of(id).unwrap_or(SPECIALS[UNK as usize]).to_string())
            .collect()
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut out = String::with_capacity(self.token_of.len() * 8);
        for tok in &self.token_of {
            out.push_str(tok);
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| TextError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        file.write_all(out.as_bytes()).map_err(|e| TextError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Vocabulary, TextError> {
        let body = fs::read_to_string(path).map_err(|e| TextError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut vocab = Vocabulary { id_of: HashMap::new(), token_of: Vec::new() };
        let mut lines = 0usize;
        for (i, line) in body.lines().enumerate() {
            lines += 1;
            if i < SPECIALS.len() && line != SPECIALS[i] {
                return Err(TextError::BadSpecial {
                    path: path.display().to_string(),
                    line: i + 1,
                    expected: SPECIALS[i].to_string(),
                    found: line.to_string(),
                });
            }
            if vocab.id_of.contains_key(line) {
                return Err(TextError::DuplicateToken {
                    path: path.display().to_string(),
                    line: i + 1,
                    token: line.to_string(),
                });
            }
            vocab.push(line.to_string());
        }
        if lines < SPECIALS.len() {
            return Err(TextError::MissingSpecials { path: path.display().to_string() });
        }
        Ok(vocab)
    }
}

/// Encode tokens as `[CLS] ids… [SEP]` truncated and right-padded to exactly
/// `max_len`. Truncation keeps the leading tokens; the trailing `[SEP]` is
/// always preserved.
pub fn encode_ids(tokens: &[Token], vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    assert!(max_len >= 3, "max_len must be >= 3");
    let keep = tokens.len().min(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    for tok in &tokens[..keep] {
        ids.push(vocab.id_or_unk(&tok.surface));
    }
    ids.push(SEP);
    ids.resize(max_len, PAD);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<Token> {
        s.split_whitespace().map(Token::word).collect()
    }

    #[test]
    fn tokenize_empty_is_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_lowercases_and_splits_punctuation() {
        let toks = tokenize("Do I need a visa?");
        let surfaces: Vec<&str> = toks.iter().map(|t| t.surface.as_str()).collect();
        assert_eq!(surfaces, ["do", "i", "need", "a", "visa", "?"]);
        assert_eq!(toks[5].kind, TokenKind::Punctuation);
        assert_eq!(toks[0].kind, TokenKind::Word);
    }

    #[test]
    fn tokenize_single_word_identity() {
        assert_eq!(tokenize("hello"), vec![Token::word("hello")]);
    }

    #[test]
    fn tokenize_keeps_digits_in_words() {
        let surfaces: Vec<String> =
            tokenize("at least 89 dead").into_iter().map(|t| t.surface).collect();
        assert_eq!(surfaces, ["at", "least", "89", "dead"]);
    }

    #[test]
    fn tokenize_idempotent_on_rejoined_words() {
        let toks = tokenize("deep neural networks enable learning");
        let rejoined = join_surfaces(&toks);
        assert_eq!(tokenize(&rejoined), toks);
    }

    #[test]
    fn empty_corpus_vocab_is_exactly_specials() {
        let v = Vocabulary::build(&[], 1);
        assert_eq!(v.size(), 7);
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.token_of(i as u32), Some(*s));
        }
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let corpus = vec![words("a b"), words("a")];
        let v = Vocabulary::build(&corpus, 2);
        assert_eq!(v.size(), 8);
        assert_eq!(v.id_of("a"), Some(7));
        assert_eq!(v.id_of("b"), None);
    }

    #[test]
    fn frequency_then_lexicographic_order() {
        let corpus = vec![words("a b"), words("a")];
        let v = Vocabulary::build(&corpus, 1);
        assert_eq!(v.size(), 9);
        assert!(v.id_of("a").unwrap() < v.id_of("b").unwrap());
    }

    #[test]
    fn ids_are_a_bijection() {
        let corpus = vec![words("x y z y z z")];
        let v = Vocabulary::build(&corpus, 1);
        for id in 0..v.size() as u32 {
            let tok = v.token_of(id).unwrap();
            assert_eq!(v.id_of(tok), Some(id));
        }
    }

    #[test]
    fn encode_empty_sentence() {
        let v = Vocabulary::build(&[], 1);
        assert_eq!(encode_ids(&[], &v, 4), vec![CLS, SEP, PAD, PAD]);
    }

    #[test]
    fn encode_unknown_maps_to_unk() {
        let v = Vocabulary::build(&[], 1);
        assert_eq!(encode_ids(&words("hello"), &v, 4), vec![CLS, UNK, SEP, PAD]);
    }

    #[test]
    fn encode_truncates_and_keeps_sep() {
        let v = Vocabulary::build(&[], 1);
        let long: Vec<Token> = (0..40).map(|i| Token::word(format!("w{i}"))).collect();
        let ids = encode_ids(&long, &v, 32);
        assert_eq!(ids.len(), 32);
        assert_eq!(ids[0], CLS);
        assert_eq!(ids[31], SEP);
        assert!(!ids.contains(&PAD));
    }

    #[test]
    fn vocab_file_round_trip() {
        let corpus = vec![words("alpha beta gamma alpha")];
        let v = Vocabulary::build(&corpus, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.size(), v.size());
        for id in 0..v.size() as u32 {
            assert_eq!(loaded.token_of(id), v.token_of(id));
        }
    }

    #[test]
    fn vocab_load_rejects_bad_specials() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        fs::write(&path, "[PAD]\n[UNK]\nnope\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(TextError::BadSpecial { line: 3, .. })
        ));
    }
}
