//! Corpus ingestion and statistics.
//!
//! A corpus is an ordered (sorted by id) collection of documents read either
//! from a jsonl file (`{"id", "text", "source"?}` per line) or from a
//! directory of plaintext files, where the relative path becomes the id.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retrieval unit of the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub source: String,
    /// Number of Unicode scalar values in `text`.
    pub char_length: usize,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, source: impl Into<String>) -> Self {
        let text = text.into();
        let char_length = text.chars().count();
        Document {
            id: id.into(),
            text,
            source: source.into(),
            char_length,
        }
    }
}

/// Wire format for corpus jsonl records.
#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

/// An immutable document collection with deterministic (id-sorted) order.
#[derive(Debug, Clone)]
pub struct Corpus {
    name: String,
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from documents, sorting by id and rejecting duplicates.
    pub fn from_documents(name: impl Into<String>, mut documents: Vec<Document>) -> Result<Self> {
        documents.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in documents.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateDocId {
                    id: pair[0].id.clone(),
                });
            }
        }
        let by_id = documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.clone(), i))
            .collect();
        Ok(Corpus {
            name: name.into(),
            documents,
            by_id,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Documents in id-sorted order.
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.by_id.get(id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Writes the corpus as jsonl, one `{"id","text","source"}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for doc in &self.documents {
            let record = DocumentRecord {
                id: doc.id.clone(),
                text: doc.text.clone(),
                source: Some(doc.source.clone()),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Input layout accepted by [`ingest_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    PlaintextDir,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "dir" | "plaintext_dir" => Ok(CorpusFormat::PlaintextDir),
            other => Err(Error::Config(format!(
                "unknown corpus format {other:?} (expected \"jsonl\" or \"dir\")"
            ))),
        }
    }
}

/// Result of ingestion: the corpus plus how many empty records were dropped.
#[derive(Debug)]
pub struct Ingestion {
    pub corpus: Corpus,
    /// Records dropped because their text was empty or whitespace-only.
    pub skipped_empty: usize,
}

/// Reads a corpus from disk. Empty/whitespace-only texts are dropped and
/// counted; duplicate ids are a hard error.
pub fn ingest_corpus(path: &Path, format: CorpusFormat) -> Result<Ingestion> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let (documents, skipped_empty) = match format {
        CorpusFormat::Jsonl => read_jsonl(path)?,
        CorpusFormat::PlaintextDir => read_plaintext_dir(path)?,
    };
    let corpus = Corpus::from_documents(name, documents)?;
    Ok(Ingestion {
        corpus,
        skipped_empty,
    })
}

fn read_jsonl(path: &Path) -> Result<(Vec<Document>, usize)> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    let mut skipped = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if record.text.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let source = record
            .source
            .unwrap_or_else(|| path.to_string_lossy().into_owned());
        documents.push(Document::new(record.id, record.text, source));
    }
    Ok((documents, skipped))
}

fn read_plaintext_dir(root: &Path) -> Result<(Vec<Document>, usize)> {
    let mut documents = Vec::new();
    let mut skipped = 0usize;
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io {
            path: root.to_path_buf(),
            source: e.into(),
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let text = std::fs::read_to_string(entry.path()).map_err(|source| Error::Io {
            path: entry.path().to_path_buf(),
            source,
        })?;
        if text.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .into_owned();
        documents.push(Document::new(rel.clone(), text, rel));
    }
    Ok((documents, skipped))
}

/// Corpus-level statistics (document count and mean character length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_char_length: f64,
}

/// Computes [`CorpusStats`]; an empty corpus yields an average of 0 by
/// convention.
pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let doc_count = corpus.len();
    let avg_char_length = if doc_count == 0 {
        0.0
    } else {
        let total: usize = corpus.documents().iter().map(|d| d.char_length).sum();
        total as f64 / doc_count as f64
    };
    CorpusStats {
        doc_count,
        avg_char_length,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_temp_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f.flush().unwrap();
        f
    }

    #[test]
    fn ingest_three_records_sorted() {
        let f = write_temp_jsonl(&[
            r#"{"id":"b","text":"beta"}"#,
            r#"{"id":"a","text":"alpha"}"#,
            r#"{"id":"c","text":"gamma","source":"s"}"#,
        ]);
        let ingestion = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        let ids: Vec<&str> = ingestion
            .corpus
            .documents()
            .iter()
            .map(|d| d.id.as_str())
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(ingestion.skipped_empty, 0);
    }

    #[test]
    fn ingest_drops_and_counts_empty_text() {
        let f = write_temp_jsonl(&[
            r#"{"id":"a","text":"x"}"#,
            r#"{"id":"b","text":"   "}"#,
            r#"{"id":"c","text":"y"}"#,
            r#"{"id":"d","text":"z"}"#,
            r#"{"id":"e","text":"w"}"#,
        ]);
        let ingestion = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(ingestion.corpus.len(), 4);
        assert_eq!(ingestion.skipped_empty, 1);
    }

    #[test]
    fn ingest_duplicate_id_is_hard_error() {
        let f = write_temp_jsonl(&[
            r#"{"id":"a","text":"x"}"#,
            r#"{"id":"a","text":"y"}"#,
        ]);
        let err = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        match err {
            Error::DuplicateDocId { id } => assert_eq!(id, "a"),
            other => panic!("expected DuplicateDocId, got {other:?}"),
        }
    }

    #[test]
    fn ingest_reports_malformed_line_number() {
        let f = write_temp_jsonl(&[r#"{"id":"a","text":"x"}"#, "not json"]);
        let err = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap_err();
        match err {
            Error::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn ingest_unreadable_path() {
        let err =
            ingest_corpus(Path::new("/nonexistent/corpus.jsonl"), CorpusFormat::Jsonl).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn ingest_plaintext_dir_uses_relative_path_id() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("one.txt"), "hello").unwrap();
        std::fs::write(dir.path().join("sub/two.txt"), "world").unwrap();
        std::fs::write(dir.path().join("empty.txt"), "  \n").unwrap();
        let ingestion = ingest_corpus(dir.path(), CorpusFormat::PlaintextDir).unwrap();
        let ids: Vec<&str> = ingestion
            .corpus
            .documents()
            .iter()
            .map(|d| d.id.as_str())
            .collect();
        assert_eq!(ids, ["one.txt", "sub/two.txt"]);
        assert_eq!(ingestion.skipped_empty, 1);
    }

    #[test]
    fn stats_mean_and_degenerate_case() {
        let corpus = Corpus::from_documents(
            "t",
            vec![Document::new("a", "abcd", "s"), Document::new("b", "abcdef", "s")],
        )
        .unwrap();
        let stats = corpus_stats(&corpus);
        assert_eq!(stats.doc_count, 2);
        assert_eq!(stats.avg_char_length, 5.0);

        let empty = Corpus::from_documents("e", vec![]).unwrap();
        let stats = corpus_stats(&empty);
        assert_eq!(stats.doc_count, 0);
        assert_eq!(stats.avg_char_length, 0.0);
    }

    #[test]
    fn char_length_counts_scalar_values_not_bytes() {
        let doc = Document::new("a", "héllo été", "s");
        assert_eq!(doc.char_length, 9);
        assert!(doc.text.len() > 9);
    }

    #[test]
    fn jsonl_round_trip_is_identity() {
        let f = write_temp_jsonl(&[
            r#"{"id":"a","text":"alpha","source":"x"}"#,
            r#"{"id":"b","text":"béta","source":"y"}"#,
        ]);
        let first = ingest_corpus(f.path(), CorpusFormat::Jsonl).unwrap().corpus;
        let mut buf = Vec::new();
        first.write_jsonl(&mut buf).unwrap();
        let mut g = tempfile::NamedTempFile::new().unwrap();
        g.write_all(&buf).unwrap();
        g.flush().unwrap();
        let second = ingest_corpus(g.path(), CorpusFormat::Jsonl).unwrap().corpus;
        assert_eq!(first.documents(), second.documents());
    }
}
