use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::tokenizer::{tokenize, TokenKind};
use super::{Label, SentenceRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Sentences longer than this many stream tokens are truncated.
    pub max_tokens: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { max_tokens: 128 }
    }
}

/// One class of the corpus: a file, or a directory whose files are read in
/// name order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSource {
    pub label: String,
    pub path: PathBuf,
}

/// A line that could not be turned into a record. Ingestion continues past it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestIssue {
    pub source: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub records: Vec<SentenceRecord>,
    pub issues: Vec<IngestIssue>,
    /// Articles that produced no admitted sentence.
    pub empty_articles: usize,
}

struct ArticleState {
    id: u64,
    admitted: usize,
}

struct Reader<'a> {
    label: Label,
    source: &'a str,
    config: &'a IngestConfig,
    next_id: u32,
    next_auto_article: u64,
    current: Option<ArticleState>,
    out: Ingested,
}

impl Reader<'_> {
    fn close_article(&mut self) {
        if let Some(a) = self.current.take() {
            if a.admitted == 0 {
                warn!(
                    "{}: article {} has no non-empty sentences, nothing emitted",
                    self.source, a.id
                );
                self.out.empty_articles += 1;
            }
        }
    }

    fn open_article(&mut self, id: u64) {
        self.close_article();
        self.current = Some(ArticleState { id, admitted: 0 });
        self.next_auto_article = self.next_auto_article.max(id + 1);
    }

    fn issue(&mut self, line: usize, message: impl Into<String>) {
        self.out.issues.push(IngestIssue {
            source: self.source.to_string(),
            line,
            message: message.into(),
        });
    }

    fn line(&mut self, lineno: usize, raw: &[u8]) {
        let text = match std::str::from_utf8(raw) {
            Ok(t) => t.trim_end_matches('\r'),
            Err(e) => {
                self.issue(lineno, format!("invalid UTF-8: {e}"));
                return;
            }
        };
        let trimmed = text.trim();
        if trimmed.is_empty() {
            if self.current.as_ref().is_some_and(|a| a.admitted > 0) {
                self.close_article();
            }
            return;
        }
        if let Some(rest) = trimmed.strip_prefix("#article") {
            let rest = rest.trim();
            match rest.split_whitespace().next().map(str::parse::<u64>) {
                Some(Ok(id)) => self.open_article(id),
                _ => {
                    self.close_article();
                    self.issue(lineno, format!("malformed article header {trimmed:?}"));
                }
            }
            return;
        }
        if trimmed.chars().any(|c| c.is_control() && c != '\t') {
            self.issue(lineno, "control character in sentence");
            return;
        }
        if self.current.is_none() {
            let id = self.next_auto_article;
            self.open_article(id);
        }
        let text = trimmed.replace('\t', " ");
        let mut tokens = Vec::new();
        let mut words = Vec::new();
        for tok in tokenize(&text).into_iter().take(self.config.max_tokens) {
            if tok.kind == TokenKind::Word {
                words.push(tok.text.to_string());
            }
            tokens.push(tok.text.to_string());
        }
        if words.is_empty() {
            return;
        }
        let article = self.current.as_mut().expect("article opened above");
        article.admitted += 1;
        self.out.records.push(SentenceRecord {
            id: self.next_id,
            article_id: article.id,
            label: self.label,
            text,
            tokens,
            words,
            token_ids: Vec::new(),
        });
        self.next_id += 1;
    }
}

/// Ingest one class from in-memory text. Record ids start at `first_id`.
pub fn ingest_str(
    text: &str,
    label: Label,
    source: &str,
    config: &IngestConfig,
    first_id: u32,
) -> Result<Ingested> {
    let mut reader = Reader {
        label,
        source,
        config,
        next_id: first_id,
        next_auto_article: 0,
        current: None,
        out: Ingested::default(),
    };
    for (i, raw) in text.as_bytes().split(|&b| b == b'\n').enumerate() {
        reader.line(i + 1, raw);
    }
    reader.close_article();
    Ok(reader.out)
}

fn class_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.is_file() {
                files.push(p);
            }
        }
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

/// Ingest every class source in order; ids are sequential across sources.
pub fn ingest(sources: &[ClassSource], config: &IngestConfig) -> Result<Ingested> {
    // Labels are validated up front so a typo fails before any reading.
    let labels = sources
        .iter()
        .map(|s| s.label.parse::<Label>())
        .collect::<Result<Vec<_>>>()?;
    if config.max_tokens == 0 {
        return Err(Error::config("max_tokens must be positive"));
    }
    let mut all = Ingested::default();
    for (src, label) in sources.iter().zip(labels) {
        let mut next_auto_article = 0;
        for file in class_files(&src.path)? {
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let name = file.display().to_string();
            let mut reader = Reader {
                label,
                source: &name,
                config,
                next_id: all.records.len() as u32,
                next_auto_article,
                current: None,
                out: Ingested::default(),
            };
            for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
                reader.line(i + 1, raw);
            }
            reader.close_article();
            next_auto_article = reader.next_auto_article;
            all.records.extend(reader.out.records);
            all.issues.extend(reader.out.issues);
            all.empty_articles += reader.out.empty_articles;
        }
    }
    Ok(all)
}

/// `id \t article_id \t label \t text \t tokens \t token_ids`, tokens and ids
/// space-separated.
pub fn write_records_tsv(path: &Path, records: &[SentenceRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let ids = r
            .token_ids
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            r.article_id,
            r.label,
            r.text,
            r.tokens.join(" "),
            ids
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records_tsv(path: &Path) -> Result<Vec<SentenceRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 tab-separated fields"));
        }
        let tokens: Vec<String> = cols[4].split(' ').filter(|t| !t.is_empty()).map(String::from).collect();
        let words = tokens
            .iter()
            .filter(|t| tokenize(t).first().is_some_and(|k| k.kind == TokenKind::Word))
            .cloned()
            .collect();
        let token_ids = cols[5]
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<u32>().map_err(|_| bad("bad token id")))
            .collect::<Result<Vec<_>>>()?;
        out.push(SentenceRecord {
            id: cols[0].parse().map_err(|_| bad("bad sentence id"))?,
            article_id: cols[1].parse().map_err(|_| bad("bad article id"))?,
            label: cols[2].parse()?,
            text: cols[3].to_string(),
            tokens,
            words,
            token_ids,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures;

    #[test]
    fn twilight_sentence_has_eight_words() {
        let out = ingest_str(
            "She is the author of the Twilight series.\n",
            Label::SL,
            "t",
            &IngestConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].label, Label::SL);
        assert_eq!(out.records[0].words.len(), 8);
        assert_eq!(out.records[0].tokens.len(), 9);
    }

    #[test]
    fn empty_article_emits_nothing() {
        let out = ingest_str("#article 3\n\n...\n\n#article 4\n", Label::EL, "t", &IngestConfig::default(), 0)
            .unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.empty_articles, 2);
    }

    #[test]
    fn fixture_labels_partition_two_three() {
        let recs = fixtures::five_records();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs.iter().filter(|r| r.label == Label::SL).count(), 2);
        assert_eq!(recs.iter().filter(|r| r.label == Label::EL).count(), 3);
        let ids: Vec<u32> = recs.iter().map(|r| r.id).collect();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
        assert!(recs.iter().all(|r| r.article_id == 1));
    }

    #[test]
    fn blank_lines_separate_articles() {
        let out = ingest_str("a b\nc d\n\n\ne f\n", Label::SL, "t", &IngestConfig::default(), 10).unwrap();
        let arts: Vec<u64> = out.records.iter().map(|r| r.article_id).collect();
        assert_eq!(arts, vec![0, 0, 1]);
        assert_eq!(out.records[0].id, 10);
    }

    #[test]
    fn malformed_header_is_a_line_level_issue() {
        let out = ingest_str("#article x\nfine sentence\n", Label::SL, "src", &IngestConfig::default(), 0)
            .unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.issues.len(), 1);
        assert_eq!(out.issues[0].line, 1);
    }

    #[test]
    fn invalid_utf8_reports_line_number() {
        let mut bytes = b"ok line\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, b'\n']);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sl.txt");
        fs::write(&p, bytes).unwrap();
        let out = ingest(
            &[ClassSource { label: "SL".into(), path: p }],
            &IngestConfig::default(),
        )
        .unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.issues[0].line, 2);
    }

    #[test]
    fn unknown_label_is_fatal() {
        let err = ingest(
            &[ClassSource { label: "ZZ".into(), path: "/nonexistent".into() }],
            &IngestConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownLabel(_)));
    }

    #[test]
    fn truncates_long_sentences() {
        let long = (0..200).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let out = ingest_str(&long, Label::EL, "t", &IngestConfig::default(), 0).unwrap();
        assert_eq!(out.records[0].tokens.len(), 128);
        assert_eq!(out.records[0].words.len(), 128);
    }

    #[test]
    fn tsv_round_trip() {
        let recs = fixtures::five_records();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("records.tsv");
        write_records_tsv(&p, &recs).unwrap();
        assert_eq!(read_records_tsv(&p).unwrap(), recs);
    }
}
