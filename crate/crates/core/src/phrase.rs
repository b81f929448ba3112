//! RAKE phrase extraction and ranking.
//!
//! Sentences are split into candidate phrases at stopwords and punctuation.
//! Each word scores deg(w)/freq(w) over the sentence's candidate phrases
//! (deg counts co-occurrence including the word itself), and a phrase scores
//! the sum of its word scores. Externally supplied span files cover the
//! parse-tree masking variant without a constituency parser.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::text::Token;

#[derive(Debug, Error)]
pub enum PhraseError {
    #[error("span file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("span file {path} line {line}: expected `sentence_id start end [score]`, got {found:?}")]
    Malformed { path: String, line: usize, found: String },
    #[error("span file {path} line {line}: sentence {id:?} has {len} tokens but span is {start}..{end}")]
    OutOfBounds {
        path: String,
        line: usize,
        id: String,
        len: usize,
        start: usize,
        end: usize,
    },
    #[error("span file {path} line {line}: unknown sentence id {id:?}")]
    UnknownSentence { path: String, line: usize, id: String },
}

/// Half-open token range `[start, end)` with a RAKE score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhraseSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl PhraseSpan {
    pub fn new(start: usize, end: usize, score: f64) -> Self {
        debug_assert!(start < end);
        PhraseSpan { start, end, score }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// Per-word degree and frequency over the candidate phrases of one sentence.
#[derive(Debug, Default, Clone)]
pub struct WordStats {
    pub deg: HashMap<String, u64>,
    pub freq: HashMap<String, u64>,
}

impl WordStats {
    /// deg(w)/freq(w); ≥ 1 for every observed word.
    pub fn word_score(&self, word: &str) -> f64 {
        match (self.deg.get(word), self.freq.get(word)) {
            (Some(&d), Some(&f)) if f > 0 => d as f64 / f as f64,
            _ => 0.0,
        }
    }
}

/// Spans sorted by descending score, ties broken by ascending start index.
#[derive(Debug, Clone, Default)]
pub struct PhraseRanking {
    pub phrases: Vec<PhraseSpan>,
}

impl PhraseRanking {
    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

/// Stopword set; `Stopwords::default()` bundles a minimal English function-word
/// list, `Stopwords::load` reads one word per line.
#[derive(Debug, Clone)]
pub struct Stopwords {
    set: HashSet<String>,
}

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "cannot", "could", "did", "do", "does", "doing", "down", "during", "each",
    "few", "for", "from", "further", "had", "has", "have", "having", "he", "her", "here",
    "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just",
    "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was",
    "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will",
    "with", "would", "you", "your", "yours",
];

impl Default for Stopwords {
    fn default() -> Self {
        Stopwords { set: DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect() }
    }
}

impl Stopwords {
    pub fn empty() -> Self {
        Stopwords { set: HashSet::new() }
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Stopwords { set: words.into_iter().map(|w| w.into().to_lowercase()).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, PhraseError> {
        let body = fs::read_to_string(path).map_err(|e| PhraseError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(Self::from_words(body.lines().map(str::trim).filter(|l| !l.is_empty())))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.set.contains(word)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

/// Maximal runs of tokens that are neither stopwords nor punctuation,
/// as unscored spans (score 0).
pub fn extract_candidates(tokens: &[Token], stopwords: &Stopwords) -> Vec<PhraseSpan> {
    let mut spans = Vec::new();
    let mut run_start: Option<usize> = None;
    for (i, tok) in tokens.iter().enumerate() {
        let breaks = !tok.is_word() || stopwords.contains(&tok.surface);
        if breaks {
            if let Some(start) = run_start.take() {
                spans.push(PhraseSpan { start, end: i, score: 0.0 });
            }
        } else if run_start.is_none() {
            run_start = Some(i);
        }
    }
    if let Some(start) = run_start {
        spans.push(PhraseSpan { start, end: tokens.len(), score: 0.0 });
    }
    spans
}

/// Degree/frequency tallies: each occurrence of `w` in a candidate phrase of
/// length `L` adds `L` to deg(w) and 1 to freq(w).
pub fn score_words(candidates: &[PhraseSpan], tokens: &[Token]) -> WordStats {
    let mut stats = WordStats::default();
    for span in candidates {
        let len = span.len() as u64;
        for tok in &tokens[span.start..span.end] {
            *stats.deg.entry(tok.surface.clone()).or_insert(0) += len;
            *stats.freq.entry(tok.surface.clone()).or_insert(0) += 1;
        }
    }
    stats
}

/// Score each candidate as the sum of its word scores and keep the `top_k`
/// best, sorted by descending score with ties broken by ascending start.
pub fn rank_phrases(
    candidates: &[PhraseSpan],
    stats: &WordStats,
    tokens: &[Token],
    top_k: usize,
) -> PhraseRanking {
    assert!(top_k >= 1, "top_k must be >= 1");
    let mut scored: Vec<PhraseSpan> = candidates
        .iter()
        .map(|span| {
            let score: f64 =
                tokens[span.start..span.end].iter().map(|t| stats.word_score(&t.surface)).sum();
            PhraseSpan { score, ..*span }
        })
        .collect();
    scored.sort_by(|a, b| {
        b.score.partial_cmp(&a.score).expect("phrase scores are finite").then(a.start.cmp(&b.start))
    });
    scored.truncate(top_k);
    PhraseRanking { phrases: scored }
}

/// Extract, score, and rank in one pass.
pub fn rake(tokens: &[Token], stopwords: &Stopwords, top_k: usize) -> PhraseRanking {
    let candidates = extract_candidates(tokens, stopwords);
    let stats = score_words(&candidates, tokens);
    rank_phrases(&candidates, &stats, tokens, top_k)
}

/// Parse a span file (`sentence_id start end [score]` per line, `#` comments)
/// and bounds-check every span against `sentence_lens`.
pub fn load_external_spans(
    path: &Path,
    sentence_lens: &HashMap<String, usize>,
) -> Result<BTreeMap<String, Vec<PhraseSpan>>, PhraseError> {
    let body = fs::read_to_string(path).map_err(|e| PhraseError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut spans: BTreeMap<String, Vec<PhraseSpan>> = BTreeMap::new();
    for (i, raw) in body.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let malformed = || PhraseError::Malformed {
            path: path.display().to_string(),
            line: line_no,
            found: raw.to_string(),
        };
        if fields.len() < 3 || fields.len() > 4 {
            return Err(malformed());
        }
        let id = fields[0].to_string();
        let start: usize = fields[1].parse().map_err(|_| malformed())?;
        let end: usize = fields[2].parse().map_err(|_| malformed())?;
        let score: f64 = match fields.get(3) {
            Some(s) => s.parse().map_err(|_| malformed())?,
            None => 1.0,
        };
        if !(score >= 0.0) {
            return Err(malformed());
        }
        let len = *sentence_lens.get(&id).ok_or_else(|| PhraseError::UnknownSentence {
            path: path.display().to_string(),
            line: line_no,
            id: id.clone(),
        })?;
        if start >= end || end > len {
            return Err(PhraseError::OutOfBounds {
                path: path.display().to_string(),
                line: line_no,
                id,
                len,
                start,
                end,
            });
        }
        spans.entry(id).or_default().push(PhraseSpan { start, end, score });
    }
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s)
    }

    #[test]
    fn candidates_split_at_stopwords() {
        let tokens = toks("the cat");
        let stop = Stopwords::from_words(["the"]);
        let spans = extract_candidates(&tokens, &stop);
        assert_eq!(spans.len(), 1);
        assert_eq!((spans[0].start, spans[0].end), (1, 2));
    }

    #[test]
    fn candidates_two_runs() {
        let tokens = toks("deep neural networks enable deep learning");
        let stop = Stopwords::from_words(["enable"]);
        let spans = extract_candidates(&tokens, &stop);
        assert_eq!(spans.len(), 2);
        assert_eq!((spans[0].start, spans[0].end), (0, 3));
        assert_eq!((spans[1].start, spans[1].end), (4, 6));
    }

    #[test]
    fn all_stopwords_yield_nothing() {
        let tokens = toks("the of");
        let stop = Stopwords::from_words(["the", "of"]);
        assert!(extract_candidates(&tokens, &stop).is_empty());
    }

    #[test]
    fn punctuation_breaks_candidates() {
        let tokens = toks("red apples, green pears");
        let spans = extract_candidates(&tokens, &Stopwords::empty());
        assert_eq!(spans.len(), 2);
        assert_eq!((spans[0].start, spans[0].end), (0, 2));
        assert_eq!((spans[1].start, spans[1].end), (3, 5));
    }

    #[test]
    fn single_word_phrase_stats() {
        let tokens = toks("hello");
        let spans = extract_candidates(&tokens, &Stopwords::empty());
        let stats = score_words(&spans, &tokens);
        assert_eq!(stats.deg["hello"], 1);
        assert_eq!(stats.freq["hello"], 1);
    }

    #[test]
    fn cooccurrence_includes_self() {
        let tokens = toks("deep neural networks enable deep learning");
        let stop = Stopwords::from_words(["enable"]);
        let spans = extract_candidates(&tokens, &stop);
        let stats = score_words(&spans, &tokens);
        assert_eq!(stats.deg["deep"], 5);
        assert_eq!(stats.freq["deep"], 2);
        assert_eq!(stats.deg["neural"], 3);
        assert_eq!(stats.freq["neural"], 1);
    }

    #[test]
    fn empty_candidates_empty_stats() {
        let stats = score_words(&[], &[]);
        assert!(stats.deg.is_empty());
        assert!(stats.freq.is_empty());
    }

    #[test]
    fn rank_example_top1() {
        let tokens = toks("deep neural networks enable deep learning");
        let stop = Stopwords::from_words(["enable"]);
        let ranking = rake(&tokens, &stop, 1);
        assert_eq!(ranking.len(), 1);
        let top = ranking.phrases[0];
        assert_eq!((top.start, top.end), (0, 3));
        assert!((top.score - 8.5).abs() < 1e-12);
    }

    #[test]
    fn rank_fewer_than_top_k() {
        let tokens = toks("hello");
        let ranking = rake(&tokens, &Stopwords::empty(), 3);
        assert_eq!(ranking.len(), 1);
        assert!((ranking.phrases[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_break_by_position() {
        // "alpha beta , gamma delta": two two-word phrases of all-distinct
        // words score identically (2.0 + 2.0).
        let tokens = toks("alpha beta, gamma delta");
        let ranking = rake(&tokens, &Stopwords::empty(), 2);
        assert_eq!(ranking.len(), 2);
        assert_eq!(ranking.phrases[0].start, 0);
        assert_eq!(ranking.phrases[1].start, 3);
        assert_eq!(ranking.phrases[0].score, ranking.phrases[1].score);
    }

    #[test]
    fn word_scores_at_least_one() {
        let tokens = toks("a b c a b a");
        let spans = extract_candidates(&tokens, &Stopwords::empty());
        let stats = score_words(&spans, &tokens);
        for word in stats.freq.keys() {
            assert!(stats.word_score(word) >= 1.0, "wordScore({word}) < 1");
        }
    }

    #[test]
    fn span_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spans.txt");
        let mut lens = HashMap::new();
        lens.insert("s1".to_string(), 6usize);

        std::fs::write(&path, "").unwrap();
        assert!(load_external_spans(&path, &lens).unwrap().is_empty());

        std::fs::write(&path, "# comment\ns1 2 4 1.0\ns1 0 1\n").unwrap();
        let spans = load_external_spans(&path, &lens).unwrap();
        assert_eq!(spans["s1"].len(), 2);
        assert_eq!((spans["s1"][0].start, spans["s1"][0].end), (2, 4));
        assert_eq!(spans["s1"][0].score, 1.0);
        assert_eq!(spans["s1"][1].score, 1.0);

        std::fs::write(&path, "s1 5 9\n").unwrap();
        assert!(matches!(
            load_external_spans(&path, &lens),
            Err(PhraseError::OutOfBounds { line: 1, .. })
        ));

        std::fs::write(&path, "s1 nope 4\n").unwrap();
        assert!(matches!(
            load_external_spans(&path, &lens),
            Err(PhraseError::Malformed { line: 1, .. })
        ));

        std::fs::write(&path, "s9 0 1\n").unwrap();
        assert!(matches!(
            load_external_spans(&path, &lens),
            Err(PhraseError::UnknownSentence { line: 1, .. })
        ));
    }
}
