//! Training-instance construction: duplicate-and-mask pairs, MLM corruption,
//! and padded batches.
//!
//! A pair holds a sentence `s` and its copy `s̃` with the top-ranked phrase
//! tokens replaced by `[MASK]` (one mask per covered token), so the masked
//! phrases are exactly the difference between the two id sequences. The
//! reconstruction target is `[BOS]` + the phrase tokens in sentence order
//! (multiple phrases separated by `[SEP]`) + `[EOS]`.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{self, AugmentConfig};
use crate::phrase::{PhraseRanking, PhraseSpan};
use crate::text::{encode_ids, Token, Vocabulary, BOS, CLS, EOS, MASK, PAD, SEP};

#[derive(Debug, Error)]
pub enum PairError {
    #[error("sentence {id:?} has no maskable phrase")]
    NoMaskablePhrase { id: String },
    #[error("corpus {path} line {line}: {reason}")]
    BadCorpusLine { path: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("span {start}..{end} out of bounds for {len} tokens")]
    BadSpan { start: usize, end: usize, len: usize },
}

/// One training instance. `masked_spans` are positions into the id sequences
/// (offset by one for the leading `[CLS]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: String,
    pub s_ids: Vec<u32>,
    pub s_tilde_ids: Vec<u32>,
    pub masked_spans: Vec<(usize, usize)>,
    pub target_ids: Vec<u32>,
}

/// MLM-corrupted copy of an id sequence; `labels` hold the original id at
/// corrupted positions and −1 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmInstance {
    pub input_ids: Vec<u32>,
    pub labels: Vec<i64>,
}

/// Padded matrices for one training step; all rows of a matrix share a width.
#[derive(Debug, Clone)]
pub struct Batch {
    pub s: Vec<Vec<u32>>,
    pub s_tilde: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
    pub mlm_inputs: Vec<Vec<u32>>,
    pub mlm_labels: Vec<Vec<i64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// `true` exactly at non-`[PAD]` positions.
pub fn pad_mask(rows: &[Vec<u32>]) -> Vec<Vec<bool>> {
    rows.iter().map(|row| row.iter().map(|&id| id != PAD).collect()).collect()
}

/// Build the masked pair for `tokens` from its phrase ranking, selecting the
/// `min(top_k, ranking.len())` best spans. Spans that fall entirely beyond the
/// truncation point are dropped; an empty selection is an error so callers can
/// skip the sentence.
pub fn duplicate_and_mask(
    id: &str,
    tokens: &[Token],
    ranking: &PhraseRanking,
    top_k: usize,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<SentencePair, PairError> {
    assert!(top_k >= 1, "top_k must be >= 1");
    let keep = tokens.len().min(max_len - 2);
    for span in &ranking.phrases {
        if span.end > tokens.len() {
            return Err(PairError::BadSpan { start: span.start, end: span.end, len: tokens.len() });
        }
    }
    let mut selected: Vec<PhraseSpan> = ranking
        .phrases
        .iter()
        .take(top_k)
        .filter_map(|span| {
            // Clip to the tokens that survive truncation.
            let end = span.end.min(keep);
            (span.start < end).then_some(PhraseSpan { start: span.start, end, ..*span })
        })
        .collect();
    if selected.is_empty() {
        return Err(PairError::NoMaskablePhrase { id: id.to_string() });
    }
    selected.sort_by_key(|s| s.start);

    let mut masked_tokens = tokens[..keep].to_vec();
    for span in &selected {
        for tok in &mut masked_tokens[span.start..span.end] {
            *tok = Token::special(MASK);
        }
    }

    let mut target_ids = vec![BOS];
    for (i, span) in selected.iter().enumerate() {
        if i > 0 {
            target_ids.push(SEP);
        }
        for tok in &tokens[span.start..span.end] {
            target_ids.push(vocab.id_or_unk(&tok.surface));
        }
    }
    target_ids.push(EOS);

    Ok(SentencePair {
        id: id.to_string(),
        s_ids: encode_ids(tokens, vocab, max_len),
        s_tilde_ids: encode_ids(&masked_tokens, vocab, max_len),
        masked_spans: selected.iter().map(|s| (s.start + 1, s.end + 1)).collect(),
        target_ids,
    })
}

/// Duplicate-and-mask, then augment `s` and `s̃` independently with per-side
/// derived seeds. Masked/gold positions are protected; `masked_spans` are
/// recomputed from the final `[MASK]` positions in `s̃`.
pub fn masked_pair_augmented(
    id: &str,
    tokens: &[Token],
    ranking: &PhraseRanking,
    top_k: usize,
    vocab: &Vocabulary,
    max_len: usize,
    aug: &AugmentConfig,
    pair_seed: u64,
) -> Result<SentencePair, PairError> {
    let base = duplicate_and_mask(id, tokens, ranking, top_k, vocab, max_len)?;
    if aug.is_identity() {
        return Ok(base);
    }
    let keep = tokens.len().min(max_len - 2);
    let protected: HashSet<usize> = base
        .masked_spans
        .iter()
        .flat_map(|&(start, end)| (start - 1)..(end - 1))
        .collect();

    let s_tokens = tokens[..keep].to_vec();
    let mut s_tilde_tokens = s_tokens.clone();
    for &i in &protected {
        s_tilde_tokens[i] = Token::special(MASK);
    }

    let s_aug = augment::apply(
        &s_tokens,
        &aug.with_seed(augment::derive_seed(pair_seed, 0x5)),
        &protected,
    );
    let (st_aug, _) = augment::apply_indexed(
        &s_tilde_tokens,
        &aug.with_seed(augment::derive_seed(pair_seed, 0x6)),
        &protected,
    );

    let s_tilde_ids = encode_ids(&st_aug, vocab, max_len);
    let masked_spans = mask_runs(&s_tilde_ids);
    Ok(SentencePair {
        s_ids: encode_ids(&s_aug, vocab, max_len),
        s_tilde_ids,
        masked_spans,
        ..base
    })
}

/// Maximal runs of `[MASK]` in an id sequence, as (start, end) positions.
fn mask_runs(ids: &[u32]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (i, &id) in ids.iter().enumerate() {
        if id == MASK {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            runs.push((s, i));
        }
    }
    if let Some(s) = start {
        runs.push((s, ids.len()));
    }
    runs
}

/// BERT-style corruption: select each non-special position with probability
/// `mask_rate`; of the selected, 80% become `[MASK]`, 10% a uniform random
/// vocabulary id, 10% stay unchanged.
pub fn mlm_corrupt(ids: &[u32], vocab: &Vocabulary, mask_rate: f64, seed: u64) -> MlmInstance {
    assert!((0.0..=1.0).contains(&mask_rate), "mask_rate must be in [0,1]");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut input_ids = ids.to_vec();
    let mut labels = vec![-1i64; ids.len()];
    let vocab_size = vocab.size() as u32;
    for (i, &id) in ids.iter().enumerate() {
        if id <= EOS {
            continue; // specials ([PAD]..[EOS]) are never corrupted
        }
        if rng.random::<f64>() >= mask_rate {
            continue;
        }
        labels[i] = id as i64;
        let branch = rng.random::<f64>();
        if branch < 0.8 {
            input_ids[i] = MASK;
        } else if branch < 0.9 {
            input_ids[i] = rng.random_range(0..vocab_size);
        }
    }
    MlmInstance { input_ids, labels }
}

/// Pad pairs into matrices and corrupt `s` for the MLM objective. Targets are
/// padded to the widest target in the batch; `s`/`s̃` rows already share
/// `max_len`.
pub fn build_batch(
    pairs: &[SentencePair],
    vocab: &Vocabulary,
    mask_rate: f64,
    seed: u64,
) -> Batch {
    assert!(!pairs.is_empty(), "build_batch of no pairs");
    let target_width = pairs.iter().map(|p| p.target_ids.len()).max().unwrap();
    let mut batch = Batch {
        s: Vec::with_capacity(pairs.len()),
        s_tilde: Vec::with_capacity(pairs.len()),
        targets: Vec::with_capacity(pairs.len()),
        mlm_inputs: Vec::with_capacity(pairs.len()),
        mlm_labels: Vec::with_capacity(pairs.len()),
    };
    for (row, pair) in pairs.iter().enumerate() {
        debug_assert_eq!(pair.s_ids.len(), pair.s_tilde_ids.len());
        let mut target = pair.target_ids.clone();
        target.resize(target_width, PAD);
        let mlm = mlm_corrupt(&pair.s_ids, vocab, mask_rate, augment::derive_seed(seed, row as u64));
        batch.s.push(pair.s_ids.clone());
        batch.s_tilde.push(pair.s_tilde_ids.clone());
        batch.targets.push(target);
        batch.mlm_inputs.push(mlm.input_ids);
        batch.mlm_labels.push(mlm.labels);
    }
    batch
}

/// One corpus sentence as stored in JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusLine {
    pub id: String,
    pub text: String,
}

/// Stream a `{"id":…,"text":…}` JSONL corpus.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusLine>, PairError> {
    let file = fs::File::open(path).map_err(|e| PairError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PairError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine =
            serde_json::from_str(&line).map_err(|e| PairError::BadCorpusLine {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        lines.push(parsed);
    }
    Ok(lines)
}

/// Cached pair record with `spans` serialized as `[start, end]` arrays.
#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    id: String,
    s_ids: Vec<u32>,
    s_tilde_ids: Vec<u32>,
    target_ids: Vec<u32>,
    spans: Vec<(usize, usize)>,
}

pub fn write_pairs(path: &Path, pairs: &[SentencePair]) -> Result<(), PairError> {
    let io_err = |e| PairError::Io { path: path.display().to_string(), source: e };
    let mut out = fs::File::create(path).map_err(io_err)?;
    for pair in pairs {
        let record = PairRecord {
            id: pair.id.clone(),
            s_ids: pair.s_ids.clone(),
            s_tilde_ids: pair.s_tilde_ids.clone(),
            target_ids: pair.target_ids.clone(),
            spans: pair.masked_spans.clone(),
        };
        let line = serde_json::to_string(&record).expect("pair serialization");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<SentencePair>, PairError> {
    let file = fs::File::open(path).map_err(|e| PairError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| PairError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord =
            serde_json::from_str(&line).map_err(|e| PairError::BadCorpusLine {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        pairs.push(SentencePair {
            id: record.id,
            s_ids: record.s_ids,
            s_tilde_ids: record.s_tilde_ids,
            masked_spans: record.spans,
            target_ids: record.target_ids,
        });
    }
    Ok(pairs)
}
