//! Labeled corpus ingestion, vocabulary, splits and class statistics.

mod ingest;
mod split;
pub mod tokenizer;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use ingest::{
    ingest, ingest_str, read_records_tsv, write_records_tsv, ClassSource, IngestConfig,
    IngestIssue, Ingested,
};
pub use split::{split, CorpusSplit, SplitRatios};
pub use vocab::{build_vocab, read_vocab_tsv, write_vocab_tsv, SpecialId, Vocabulary, SPECIAL_TOKENS};

/// Article-level register label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    SL,
    EL,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::SL, Label::EL];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::SL => "SL",
            Label::EL => "EL",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SL" => Ok(Label::SL),
            "EL" => Ok(Label::EL),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// One sentence of the corpus.
///
/// `tokens` is the full stream fed to the model (words and punctuation);
/// `words` holds only the word tokens and is what the difficulty heuristics
/// see. `token_ids` runs parallel to `tokens` and is empty until
/// [`Vocabulary::assign_ids`] has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: u32,
    pub article_id: u64,
    pub label: Label,
    pub text: String,
    pub tokens: Vec<String>,
    pub words: Vec<String>,
    pub token_ids: Vec<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub sentences: u64,
    /// Model-stream tokens, punctuation included.
    pub tokens: u64,
    pub words: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sl: ClassStats,
    pub el: ClassStats,
}

impl CorpusStats {
    pub fn class(&self, label: Label) -> &ClassStats {
        match label {
            Label::SL => &self.sl,
            Label::EL => &self.el,
        }
    }

    pub fn total_sentences(&self) -> u64 {
        self.sl.sentences + self.el.sentences
    }
}

pub fn corpus_stats(records: &[SentenceRecord]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for r in records {
        let c = match r.label {
            Label::SL => &mut stats.sl,
            Label::EL => &mut stats.el,
        };
        c.sentences += 1;
        c.tokens += r.tokens.len() as u64;
        c.words += r.words.len() as u64;
    }
    stats
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parsing() {
        assert_eq!("sl".parse::<Label>().unwrap(), Label::SL);
        assert_eq!(" EL ".parse::<Label>().unwrap(), Label::EL);
        assert!(matches!(
            "XL".parse::<Label>(),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn stats_on_fixture() {
        let recs = fixtures::five_records();
        let s = corpus_stats(&recs);
        assert_eq!(s.sl.sentences, 2);
        assert_eq!(s.el.sentences, 3);
        assert_eq!(s.total_sentences(), recs.len() as u64);
        // "The cat sat." + "It was happy."
        assert_eq!(s.sl.words, 6);
        assert_eq!(s.sl.tokens, 8);
    }

    #[test]
    fn stats_on_empty_corpus() {
        assert_eq!(corpus_stats(&[]), CorpusStats::default());
    }
}
