use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tokenizer::{tokenize, TokenKind};
use super::SentenceRecord;
use crate::error::{Error, Result};

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[MASK]", "[UNK]", "[CLS]", "[SEP]"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum SpecialId {
    Pad = 0,
    Mask = 1,
    Unk = 2,
    Cls = 3,
    Sep = 4,
}

impl SpecialId {
    pub const COUNT: u32 = 5;

    pub fn id(self) -> u32 {
        self as u32
    }
}

/// Word-level vocabulary with corpus frequencies.
///
/// Ids `0..5` are the special tokens. `total_tokens` and `word_types` are
/// computed before the frequency cutoff and count word tokens only;
/// punctuation is in the vocabulary but never enters the rarity statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    /// Pre-cutoff corpus frequency per id; zero for specials.
    counts: Vec<u64>,
    /// Pooled frequency of every word occurrence that maps to UNK.
    pub unk_count: u64,
    pub total_tokens: u64,
    pub word_types: u64,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<u64>, unk_count: u64, total_tokens: u64, word_types: u64) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            counts,
            unk_count,
            total_tokens,
            word_types,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index
            .get(token)
            .copied()
            .unwrap_or(SpecialId::Unk.id())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Corpus frequency of a word; out-of-vocabulary words get the pooled
    /// UNK count.
    pub fn count(&self, word: &str) -> u64 {
        match self.index.get(word) {
            Some(&id) if id >= SpecialId::COUNT => self.counts[id as usize],
            _ => self.unk_count,
        }
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn assign_ids(&self, records: &mut [SentenceRecord]) {
        for r in records {
            r.token_ids = self.encode(&r.tokens);
        }
    }

    pub fn is_special(id: u32) -> bool {
        id < SpecialId::COUNT
    }
}

/// Build a vocabulary keeping at most `cap` non-special entries whose
/// frequency is at least `cutoff`. Ties in frequency go to the
/// lexicographically smaller token.
pub fn build_vocab(records: &[SentenceRecord], cutoff: u64, cap: usize) -> Result<Vocabulary> {
    if cap < SPECIAL_TOKENS.len() {
        return Err(Error::config(format!(
            "vocabulary cap {cap} is smaller than the {} special tokens",
            SPECIAL_TOKENS.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::config("cannot build a vocabulary from zero records"));
    }
    // BTreeMap keeps the iteration order independent of hashing.
    let mut freq: BTreeMap<&str, (u64, bool)> = BTreeMap::new();
    let mut total_tokens = 0u64;
    for r in records {
        for t in &r.tokens {
            let is_word = r.words.iter().any(|w| w == t)
                || tokenize(t).first().is_some_and(|k| k.kind == TokenKind::Word);
            let e = freq.entry(t.as_str()).or_insert((0, is_word));
            e.0 += 1;
            if is_word {
                total_tokens += 1;
            }
        }
    }
    let word_types = freq.values().filter(|(_, w)| *w).count() as u64;

    let mut ranked: Vec<(&str, u64, bool)> = freq
        .iter()
        .map(|(&t, &(c, w))| (t, c, w))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut counts = vec![0u64; tokens.len()];
    let mut unk_count = 0u64;
    let mut kept = 0usize;
    for (t, c, is_word) in ranked {
        if c >= cutoff.max(1) && kept < cap && !SPECIAL_TOKENS.contains(&t) {
            tokens.push(t.to_string());
            counts.push(c);
            kept += 1;
        } else if is_word {
            unk_count += c;
        }
    }
    Ok(Vocabulary::from_parts(tokens, counts, unk_count, total_tokens, word_types))
}

/// `id \t token \t count` lines preceded by `#unk_count`, `#total_tokens` and
/// `#word_types` header lines.
pub fn write_vocab_tsv(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#unk_count\t{}", vocab.unk_count).map_err(io)?;
    writeln!(w, "#total_tokens\t{}", vocab.total_tokens).map_err(io)?;
    writeln!(w, "#word_types\t{}", vocab.word_types).map_err(io)?;
    for (i, (t, c)) in vocab.tokens.iter().zip(&vocab.counts).enumerate() {
        writeln!(w, "{i}\t{t}\t{c}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_vocab_tsv(path: &Path) -> Result<Vocabulary> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    let mut counts = Vec::new();
    let (mut unk, mut total, mut types) = (0, 0, 0);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: m.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() == 2 {
            let v: u64 = cols[1].parse().map_err(|_| bad("bad header value"))?;
            match cols[0] {
                "#unk_count" => unk = v,
                "#total_tokens" => total = v,
                "#word_types" => types = v,
                _ => return Err(bad("unknown header")),
            }
            continue;
        }
        if cols.len() != 3 {
            return Err(bad("expected 3 tab-separated fields"));
        }
        let id: usize = cols[0].parse().map_err(|_| bad("bad id"))?;
        if id != tokens.len() {
            return Err(bad("ids must be dense and ascending"));
        }
        tokens.push(cols[1].to_string());
        counts.push(cols[2].parse().map_err(|_| bad("bad count"))?);
    }
    if tokens.len() < SPECIAL_TOKENS.len()
        || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
    {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "special tokens missing from ids 0-4".into(),
        });
    }
    Ok(Vocabulary::from_parts(tokens, counts, unk, total, types))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_str, IngestConfig, Label};

    fn recs(lines: &[&str]) -> Vec<SentenceRecord> {
        ingest_str(&lines.join("\n"), Label::SL, "t", &IngestConfig::default(), 0)
            .unwrap()
            .records
    }

    #[test]
    fn counts_and_total() {
        let v = build_vocab(&recs(&["a a b", "a b"]), 1, 100).unwrap();
        assert_eq!(v.count("a"), 3);
        assert_eq!(v.count("b"), 2);
        assert_eq!(v.total_tokens, 5);
        assert_eq!(v.word_types, 2);
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("b"), 6);
    }

    #[test]
    fn specials_occupy_first_ids() {
        let v = build_vocab(&recs(&["x"]), 1, 10).unwrap();
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            assert_eq!(v.id(s), i as u32);
        }
        assert_eq!(v.id("never-seen"), SpecialId::Unk.id());
    }

    #[test]
    fn high_cutoff_leaves_only_specials() {
        let v = build_vocab(&recs(&["a a b", "a b"]), 10, 100).unwrap();
        assert_eq!(v.len(), SPECIAL_TOKENS.len());
        assert_eq!(v.unk_count, 5);
        assert_eq!(v.count("a"), 5);
        assert_eq!(v.total_tokens, 5);
    }

    #[test]
    fn cap_tie_keeps_lexicographically_smaller() {
        // q, r, s, t occur 3 times; alpha and zeta tie at 2 for the fifth slot
        let lines = ["q q q zeta alpha zeta alpha", "r r r s s s t t t"];
        let v = build_vocab(&recs(&lines), 1, 6).unwrap();
        assert!(v.contains("alpha") && v.contains("zeta"));
        let v = build_vocab(&recs(&lines), 1, 5).unwrap();
        assert!(v.contains("alpha"));
        assert!(!v.contains("zeta"));
        assert_eq!(v.count("zeta"), v.unk_count);
        assert_eq!(v.unk_count, 2);
    }

    #[test]
    fn cap_below_special_count_is_rejected() {
        assert!(matches!(build_vocab(&recs(&["a"]), 1, 4), Err(Error::Config(_))));
    }

    #[test]
    fn punctuation_is_in_vocab_but_not_in_totals() {
        let v = build_vocab(&recs(&["a , a .", "b ."]), 1, 100).unwrap();
        assert!(v.contains(".") && v.contains(","));
        assert_eq!(v.total_tokens, 3);
        assert_eq!(v.word_types, 2);
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocab(&recs(&["a a b", "a b ."]), 1, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        write_vocab_tsv(&p, &v).unwrap();
        assert_eq!(read_vocab_tsv(&p).unwrap(), v);
    }
}
