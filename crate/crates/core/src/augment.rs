//! EDA-style augmentation: synonym replacement, random deletion, token reordering.
//!
//! Every operation is a pure function of (tokens, seed, protected indices), so
//! augmented corpora are reproducible. Protected indices shield the masked and
//! gold phrase positions of a training pair from being rewritten, deleted, or
//! chosen as swap targets.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::text::Token;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("lexicon file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("lexicon file {path} line {line}: expected `word<TAB>syn1,syn2,...`, got {found:?}")]
    Malformed { path: String, line: usize, found: String },
}

/// Synonym lexicon: word → non-empty synonym list.
pub type Lexicon = HashMap<String, Vec<String>>;

/// Parse a lexicon file with `word<TAB>syn1,syn2,...` lines.
pub fn load_lexicon(path: &Path) -> Result<Lexicon, AugmentError> {
    let body = fs::read_to_string(path).map_err(|e| AugmentError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut lexicon = Lexicon::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = || AugmentError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            found: line.to_string(),
        };
        let (word, rest) = line.split_once('\t').ok_or_else(malformed)?;
        let syns: Vec<String> = rest
            .split(',')
            .map(|s| s.trim().to_lowercase())
            .filter(|s| !s.is_empty())
            .collect();
        if word.trim().is_empty() || syns.is_empty() {
            return Err(malformed());
        }
        lexicon.insert(word.trim().to_lowercase(), syns);
    }
    Ok(lexicon)
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Per-token synonym replacement probability.
    pub synonym_prob: f64,
    /// Per-token deletion probability.
    pub delete_prob: f64,
    /// Number of random transpositions.
    pub reorder_swaps: usize,
    pub seed: u64,
    pub lexicon: Lexicon,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        // Synonym replacement on, deletion and reordering off: the combination
        // settings did not help in ablations.
        AugmentConfig {
            synonym_prob: 0.1,
            delete_prob: 0.0,
            reorder_swaps: 0,
            seed: 0,
            lexicon: Lexicon::new(),
        }
    }
}

impl AugmentConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        AugmentConfig { seed, ..self.clone() }
    }

    pub fn is_identity(&self) -> bool {
        (self.synonym_prob == 0.0 || self.lexicon.is_empty())
            && self.delete_prob == 0.0
            && self.reorder_swaps == 0
    }
}

/// splitmix64 step; used to derive independent per-stage and per-pair seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(cfg: &AugmentConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed)
}

/// Replace each unprotected word token having a lexicon entry with probability
/// `synonym_prob` by a uniformly chosen synonym.
pub fn synonym_replace(
    tokens: &[Token],
    cfg: &AugmentConfig,
    protected: &HashSet<usize>,
) -> Vec<Token> {
    let mut rng = rng_for(cfg);
    let mut out = tokens.to_vec();
    if cfg.synonym_prob <= 0.0 || cfg.lexicon.is_empty() {
        return out;
    }
    for (i, tok) in out.iter_mut().enumerate() {
        if protected.contains(&i) || !tok.is_word() {
            continue;
        }
        let Some(syns) = cfg.lexicon.get(&tok.surface) else { continue };
        if rng.random::<f64>() < cfg.synonym_prob {
            let pick = syns[rng.random_range(0..syns.len())].clone();
            *tok = Token::word(pick);
        }
    }
    out
}

/// Delete each unprotected token with probability `delete_prob`, always
/// retaining at least one token. Returns the surviving tokens and their
/// original indices.
pub fn random_delete_indexed(
    tokens: &[Token],
    cfg: &AugmentConfig,
    protected: &HashSet<usize>,
) -> (Vec<Token>, Vec<usize>) {
    let mut rng = rng_for(cfg);
    let mut kept: Vec<usize> = Vec::with_capacity(tokens.len());
    let mut first_unprotected = None;
    for i in 0..tokens.len() {
        if protected.contains(&i) {
            kept.push(i);
            continue;
        }
        if first_unprotected.is_none() {
            first_unprotected = Some(i);
        }
        if cfg.delete_prob <= 0.0 || rng.random::<f64>() >= cfg.delete_prob {
            kept.push(i);
        }
    }
    if kept.is_empty() {
        if let Some(first) = first_unprotected {
            kept.push(first);
        }
    }
    let out = kept.iter().map(|&i| tokens[i].clone()).collect();
    (out, kept)
}

pub fn random_delete(
    tokens: &[Token],
    cfg: &AugmentConfig,
    protected: &HashSet<usize>,
) -> Vec<Token> {
    random_delete_indexed(tokens, cfg, protected).0
}

/// Perform `reorder_swaps` transpositions of two distinct unprotected positions.
pub fn token_reorder(
    tokens: &[Token],
    cfg: &AugmentConfig,
    protected: &HashSet<usize>,
) -> Vec<Token> {
    let mut rng = rng_for(cfg);
    let mut out = tokens.to_vec();
    let free: Vec<usize> = (0..tokens.len()).filter(|i| !protected.contains(i)).collect();
    if free.len() < 2 {
        return out;
    }
    for _ in 0..cfg.reorder_swaps {
        let a = rng.random_range(0..free.len());
        let mut b = rng.random_range(0..free.len() - 1);
        if b >= a {
            b += 1;
        }
        out.swap(free[a], free[b]);
    }
    out
}

/// Apply SR → RD → RS with per-stage derived seeds. Returns the augmented
/// tokens and the mapping from surviving output positions to input positions
/// (identity except across deletion).
pub fn apply_indexed(
    tokens: &[Token],
    cfg: &AugmentConfig,
    protected: &HashSet<usize>,
) -> (Vec<Token>, Vec<usize>) {
    let sr = synonym_replace(tokens, &cfg.with_seed(derive_seed(cfg.seed, 1)), protected);
    let (rd, kept) =
        random_delete_indexed(&sr, &cfg.with_seed(derive_seed(cfg.seed, 2)), protected);
    let remapped: HashSet<usize> = kept
        .iter()
        .enumerate()
        .filter(|(_, old)| protected.contains(old))
        .map(|(new, _)| new)
        .collect();
    let rs = token_reorder(&rd, &cfg.with_seed(derive_seed(cfg.seed, 3)), &remapped);
    (rs, kept)
}

pub fn apply(tokens: &[Token], cfg: &AugmentConfig, protected: &HashSet<usize>) -> Vec<Token> {
    apply_indexed(tokens, cfg, protected).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s)
    }

    fn lex(pairs: &[(&str, &[&str])]) -> Lexicon {
        pairs
            .iter()
            .map(|(w, ss)| (w.to_string(), ss.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    #[test]
    fn empty_lexicon_is_identity() {
        let cfg = AugmentConfig { synonym_prob: 1.0, ..AugmentConfig::default() };
        let tokens = toks("big cat");
        assert_eq!(synonym_replace(&tokens, &cfg, &HashSet::new()), tokens);
    }

    #[test]
    fn zero_probability_is_identity() {
        let cfg = AugmentConfig {
            synonym_prob: 0.0,
            lexicon: lex(&[("big", &["large"])]),
            ..AugmentConfig::default()
        };
        let tokens = toks("big cat");
        assert_eq!(synonym_replace(&tokens, &cfg, &HashSet::new()), tokens);
    }

    #[test]
    fn forced_replacement_single_synonym() {
        let cfg = AugmentConfig {
            synonym_prob: 1.0,
            lexicon: lex(&[("big", &["large"])]),
            ..AugmentConfig::default()
        };
        let out = synonym_replace(&toks("big cat"), &cfg, &HashSet::new());
        assert_eq!(out, toks("large cat"));
    }

    #[test]
    fn protected_tokens_never_replaced() {
        let cfg = AugmentConfig {
            synonym_prob: 1.0,
            lexicon: lex(&[("big", &["large"]), ("cat", &["feline"])]),
            ..AugmentConfig::default()
        };
        let out = synonym_replace(&toks("big cat"), &cfg, &HashSet::from([0]));
        assert_eq!(out, toks("big feline"));
    }

    #[test]
    fn delete_zero_prob_identity() {
        let cfg = AugmentConfig { delete_prob: 0.0, ..AugmentConfig::default() };
        let tokens = toks("a b c");
        assert_eq!(random_delete(&tokens, &cfg, &HashSet::new()), tokens);
    }

    #[test]
    fn delete_all_keeps_first_unprotected() {
        let cfg = AugmentConfig { delete_prob: 1.0, ..AugmentConfig::default() };
        let out = random_delete(&toks("a b c"), &cfg, &HashSet::new());
        assert_eq!(out, toks("a"));
    }

    #[test]
    fn delete_all_with_protection() {
        let cfg = AugmentConfig { delete_prob: 1.0, ..AugmentConfig::default() };
        let out = random_delete(&toks("a b c"), &cfg, &HashSet::from([1]));
        assert_eq!(out, toks("b"));
    }

    #[test]
    fn reorder_zero_swaps_identity() {
        let cfg = AugmentConfig { reorder_swaps: 0, ..AugmentConfig::default() };
        let tokens = toks("a b c");
        assert_eq!(token_reorder(&tokens, &cfg, &HashSet::new()), tokens);
    }

    #[test]
    fn reorder_needs_two_free_positions() {
        let cfg = AugmentConfig { reorder_swaps: 5, ..AugmentConfig::default() };
        let tokens = toks("a b");
        assert_eq!(token_reorder(&tokens, &cfg, &HashSet::from([0])), tokens);
    }

    #[test]
    fn reorder_single_possible_swap() {
        let cfg = AugmentConfig { reorder_swaps: 1, ..AugmentConfig::default() };
        let out = token_reorder(&toks("a b"), &cfg, &HashSet::new());
        assert_eq!(out, toks("b a"));
    }

    #[test]
    fn all_disabled_composition_is_identity() {
        let cfg = AugmentConfig {
            synonym_prob: 0.0,
            delete_prob: 0.0,
            reorder_swaps: 0,
            ..AugmentConfig::default()
        };
        let tokens = toks("one two three");
        assert_eq!(apply(&tokens, &cfg, &HashSet::new()), tokens);
    }

    #[test]
    fn lexicon_file_parses_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        std::fs::write(&path, "big\tlarge,huge\ncat\tfeline\n").unwrap();
        let lexicon = load_lexicon(&path).unwrap();
        assert_eq!(lexicon["big"], vec!["large", "huge"]);
        assert_eq!(lexicon["cat"], vec!["feline"]);

        std::fs::write(&path, "nosynonyms\t\n").unwrap();
        assert!(matches!(load_lexicon(&path), Err(AugmentError::Malformed { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn deterministic_under_seed(seed in any::<u64>(), words in proptest::collection::vec("[a-f]{1,4}", 0..12)) {
            let tokens: Vec<Token> = words.iter().map(Token::word).collect();
            let cfg = AugmentConfig {
                synonym_prob: 0.5,
                delete_prob: 0.3,
                reorder_swaps: 2,
                seed,
                lexicon: lex(&[("aa", &["zz", "yy"]), ("b", &["q"])]),
            };
            let protected = HashSet::from([0usize]);
            prop_assert_eq!(apply(&tokens, &cfg, &protected), apply(&tokens, &cfg, &protected));
        }

        #[test]
        fn reorder_preserves_multiset(seed in any::<u64>(), words in proptest::collection::vec("[a-d]{1,3}", 2..10), swaps in 0usize..5) {
            let tokens: Vec<Token> = words.iter().map(Token::word).collect();
            let cfg = AugmentConfig { reorder_swaps: swaps, seed, ..AugmentConfig::default() };
            let out = token_reorder(&tokens, &cfg, &HashSet::new());
            let mut a: Vec<String> = tokens.iter().map(|t| t.surface.clone()).collect();
            let mut b: Vec<String> = out.iter().map(|t| t.surface.clone()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn delete_output_is_subsequence(seed in any::<u64>(), words in proptest::collection::vec("[a-d]{1,3}", 1..10)) {
            let tokens: Vec<Token> = words.iter().map(Token::word).collect();
            let cfg = AugmentConfig { delete_prob: 0.5, seed, ..AugmentConfig::default() };
            let (out, kept) = random_delete_indexed(&tokens, &cfg, &HashSet::new());
            prop_assert!(!out.is_empty());
            prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
            for (pos, &old) in kept.iter().enumerate() {
                prop_assert_eq!(&out[pos], &tokens[old]);
            }
        }

        #[test]
        fn protected_positions_unmoved_by_reorder(seed in any::<u64>(), swaps in 1usize..6) {
            let tokens = toks("p q r s t");
            let protected = HashSet::from([1usize, 3]);
            let cfg = AugmentConfig { reorder_swaps: swaps, seed, ..AugmentConfig::default() };
            let out = token_reorder(&tokens, &cfg, &protected);
            prop_assert_eq!(&out[1], &tokens[1]);
            prop_assert_eq!(&out[3], &tokens[3]);
        }
    }
}
