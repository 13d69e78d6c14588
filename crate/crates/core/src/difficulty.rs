//! Sentence difficulty heuristics: length, normalized word rarity, Flesch
//! Reading Ease, and a seeded uniform control.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{SentenceRecord, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    Length,
    WordRarity,
    #[serde(rename = "FRE")]
    Fre,
    Random,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Length, Metric::WordRarity, Metric::Fre, Metric::Random];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Length => "Length",
            Metric::WordRarity => "WordRarity",
            Metric::Fre => "FRE",
            Metric::Random => "Random",
        }
    }

    /// Sort key where smaller means easier. High FRE is easy text, so its
    /// sign is flipped; every other metric already grows with difficulty.
    pub fn easy_first_key(self, value: f64) -> f64 {
        match self {
            Metric::Fre => -value,
            _ => value,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown difficulty metric {s:?}")))
    }
}

/// Denominator of the relative frequency inside word rarity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RarityNormalizer {
    /// Total word occurrences in the corpus; count/N is a relative frequency.
    #[default]
    Tokens,
    /// Number of distinct word types.
    Types,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub sentence_id: u32,
    pub metric: Metric,
    pub value: f64,
}

fn non_empty(s: &SentenceRecord) -> Result<usize> {
    if s.words.is_empty() {
        return Err(Error::Sentence {
            id: s.id,
            message: "sentence has no words".into(),
        });
    }
    Ok(s.words.len())
}

pub fn length_score(s: &SentenceRecord) -> Result<f64> {
    non_empty(s).map(|n| n as f64)
}

/// Mean negative log relative frequency of the sentence's words.
///
/// Summed per distinct word with weight `n_w / |S|`, so repeating a sentence
/// any number of times yields a bit-identical value.
pub fn rarity_score(s: &SentenceRecord, vocab: &Vocabulary, normalizer: RarityNormalizer) -> Result<f64> {
    let len = non_empty(s)?;
    let n = match normalizer {
        RarityNormalizer::Tokens => vocab.total_tokens,
        RarityNormalizer::Types => vocab.word_types,
    };
    if n == 0 {
        return Err(Error::Sentence {
            id: s.id,
            message: "rarity normalizer is zero".into(),
        });
    }
    let mut occurrences: BTreeMap<&str, u64> = BTreeMap::new();
    for w in &s.words {
        *occurrences.entry(w.as_str()).or_default() += 1;
    }
    let mut acc = 0.0;
    for (w, k) in occurrences {
        let c = vocab.count(w);
        if c == 0 {
            return Err(Error::Sentence {
                id: s.id,
                message: format!("word {w:?} has zero corpus count"),
            });
        }
        acc += (k as f64 / len as f64) * (c as f64 / n as f64).ln();
    }
    Ok(-acc)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group syllable estimate: count runs of `aeiouy`, drop a final
/// silent `e` when another vowel group exists, never return less than 1.
pub fn syllables(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let mut groups = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = letters.len();
    let silent_e = n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]);
    if silent_e && groups > 1 {
        groups -= 1;
    }
    groups.max(1)
}

/// Flesch Reading Ease for a single sentence given its word and syllable
/// totals.
pub fn fre_from_counts(words: usize, syllables: usize) -> f64 {
    let asl = words as f64;
    let asw = syllables as f64 / words as f64;
    206.835 - 1.015 * asl - 84.6 * asw
}

pub fn fre_score(s: &SentenceRecord) -> Result<f64> {
    let n = non_empty(s)?;
    let syl: usize = s.words.iter().map(|w| syllables(w)).sum();
    Ok(fre_from_counts(n, syl))
}

/// Uniform draw in [0, 1) that depends only on `(seed, sentence_id)`.
pub fn random_score(sentence_id: u32, seed: u64) -> f64 {
    rng::unit_interval(rng::derive_seed(seed, &[u64::from(sentence_id)]))
}

#[derive(Debug, Clone, Copy)]
pub struct ScoringContext<'a> {
    pub vocab: &'a Vocabulary,
    pub normalizer: RarityNormalizer,
    pub seed: u64,
}

pub fn score_sentence(s: &SentenceRecord, metric: Metric, ctx: &ScoringContext<'_>) -> Result<f64> {
    match metric {
        Metric::Length => length_score(s),
        Metric::WordRarity => rarity_score(s, ctx.vocab, ctx.normalizer),
        Metric::Fre => fre_score(s),
        Metric::Random => Ok(random_score(s.id, ctx.seed)),
    }
}

/// Score every record; output order follows input order.
pub fn score_corpus(
    records: &[SentenceRecord],
    metric: Metric,
    ctx: &ScoringContext<'_>,
) -> Result<Vec<DifficultyScore>> {
    records
        .iter()
        .map(|r| {
            Ok(DifficultyScore {
                sentence_id: r.id,
                metric,
                value: score_sentence(r, metric, ctx)?,
            })
        })
        .collect()
}

/// `sentence_id \t metric \t value` lines. Values use Rust's shortest
/// round-trip float formatting.
pub fn write_scores_tsv(path: &Path, scores: &[DifficultyScore]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in scores {
        writeln!(w, "{}\t{}\t{:?}", s.sentence_id, s.metric, s.value).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores_tsv(path: &Path) -> Result<Vec<DifficultyScore>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad("expected 3 tab-separated fields"));
        }
        out.push(DifficultyScore {
            sentence_id: cols[0].parse().map_err(|_| bad("bad sentence id"))?,
            metric: cols[1].parse()?,
            value: cols[2].parse().map_err(|_| bad("bad value"))?,
        });
    }
    Ok(out)
}
