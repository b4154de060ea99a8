//! Corpus, query, qrels and run file I/O.
//!
//! Formats:
//! - corpus: JSON lines, one `{"id": ..., "text": ...}` object per line
//!   (`_id` and `docid` are accepted as aliases of `id`; other fields are ignored)
//! - queries: `qid<TAB>text`
//! - qrels: `qid 0 docid rel`
//! - run: `qid Q0 docid rank score tag`

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::FormatError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(alias = "_id", alias = "docid")]
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

/// Documents indexed by id. Immutable after loading and `Sync`, so a single
/// store can be shared by every reranking worker.
#[derive(Debug, Default, Clone)]
pub struct DocumentStore {
    docs: HashMap<String, Document>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: Document) -> Result<(), FormatError> {
        if self.docs.contains_key(&doc.id) {
            return Err(FormatError::DuplicateDocId(doc.id));
        }
        self.docs.insert(doc.id.clone(), doc);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.docs.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.docs.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

impl FromIterator<Document> for DocumentStore {
    /// Later duplicates overwrite earlier ones; use [`DocumentStore::insert`]
    /// when duplicates must be rejected.
    fn from_iter<I: IntoIterator<Item = Document>>(iter: I) -> Self {
        let docs = iter.into_iter().map(|d| (d.id.clone(), d)).collect();
        Self { docs }
    }
}

/// Graded relevance judgments. Per-query judgment order follows the source
/// file, which matters when picking "the first relevant document".
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Qrels {
    by_query: IndexMap<String, IndexMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        query_id: impl Into<String>,
        doc_id: impl Into<String>,
        relevance: u32,
    ) -> Result<(), FormatError> {
        let query_id = query_id.into();
        let doc_id = doc_id.into();
        let judged = self.by_query.entry(query_id.clone()).or_default();
        if judged.contains_key(&doc_id) {
            return Err(FormatError::DuplicateQrel { query_id, doc_id });
        }
        judged.insert(doc_id, relevance);
        Ok(())
    }

    pub fn relevance(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.by_query.get(query_id)?.get(doc_id).copied()
    }

    /// Judgments for one query in file order.
    pub fn judgments(&self, query_id: &str) -> Option<&IndexMap<String, u32>> {
        self.by_query.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.by_query.len()
    }

    pub fn len(&self) -> usize {
        self.by_query.values().map(IndexMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub doc_id: String,
    pub rank: u32,
    pub score: f64,
}

/// One query's ranking: ranks are `1..=n` without gaps and scores never
/// increase with rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RunEntry>,
}

impl RankedList {
    /// Builds a list from `(doc_id, score)` pairs already in rank order.
    pub fn from_ordered<I, S>(query_id: impl Into<String>, scored: I) -> Result<Self, FormatError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RunEntry {
                doc_id: doc_id.into(),
                rank: i as u32 + 1,
                score,
            })
            .collect();
        let list = RankedList {
            query_id: query_id.into(),
            entries,
        };
        list.validate()?;
        Ok(list)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let invalid = |message: String| FormatError::InvalidRun {
            query_id: self.query_id.clone(),
            message,
        };
        let mut seen = std::collections::HashSet::with_capacity(self.entries.len());
        for (i, entry) in self.entries.iter().enumerate() {
            let expected = i as u32 + 1;
            if entry.rank != expected {
                return Err(invalid(format!(
                    "rank gap: expected rank {expected}, found {}",
                    entry.rank
                )));
            }
            if !entry.score.is_finite() {
                return Err(invalid(format!("non-finite score at rank {expected}")));
            }
            if i > 0 && entry.score > self.entries[i - 1].score {
                return Err(invalid(format!("score increases at rank {expected}")));
            }
            if !seen.insert(entry.doc_id.as_str()) {
                return Err(invalid(format!("document `{}` appears twice", entry.doc_id)));
            }
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>, FormatError> {
    File::open(path).map(BufReader::new).map_err(|source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<DocumentStore, FormatError> {
    let path = path.as_ref();
    read_corpus(open(path)?, path)
}

/// Reads a JSON-lines corpus. `origin` is only used in error messages.
pub fn read_corpus(reader: impl BufRead, origin: &Path) -> Result<DocumentStore, FormatError> {
    let mut store = DocumentStore::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| parse_err(origin, i + 1, e.to_string()))?;
        if doc.id.is_empty() {
            return Err(parse_err(origin, i + 1, "empty document id"));
        }
        store.insert(doc)?;
    }
    Ok(store)
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>, FormatError> {
    let path = path.as_ref();
    read_queries(open(path)?, path)
}

/// Reads `qid<TAB>text` lines.
pub fn read_queries(reader: impl BufRead, origin: &Path) -> Result<Vec<Query>, FormatError> {
    let mut queries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(origin, i + 1, "expected `qid<TAB>text`"))?;
        if id.is_empty() {
            return Err(parse_err(origin, i + 1, "empty query id"));
        }
        if !seen.insert(id.to_string()) {
            return Err(parse_err(origin, i + 1, format!("duplicate query id `{id}`")));
        }
        queries.push(Query {
            id: id.to_string(),
            text: text.to_string(),
        });
    }
    Ok(queries)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels, FormatError> {
    let path = path.as_ref();
    read_qrels(open(path)?, path)
}

pub fn read_qrels(reader: impl BufRead, origin: &Path) -> Result<Qrels, FormatError> {
    let mut qrels = Qrels::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _iter, docid, rel] = fields[..] else {
            return Err(parse_err(
                origin,
                i + 1,
                format!("expected 4 fields `qid 0 docid rel`, found {}", fields.len()),
            ));
        };
        let rel: u32 = rel.parse().map_err(|_| {
            parse_err(
                origin,
                i + 1,
                format!("relevance `{rel}` is not a non-negative integer"),
            )
        })?;
        qrels
            .insert(qid, docid, rel)
            .map_err(|e| parse_err(origin, i + 1, e.to_string()))?;
    }
    Ok(qrels)
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>, FormatError> {
    let path = path.as_ref();
    read_run(open(path)?, path)
}

/// Reads a TREC run. Rows may appear in any order; lists come back sorted by
/// query id with entries in rank order. The run tag is not retained.
pub fn read_run(reader: impl BufRead, origin: &Path) -> Result<Vec<RankedList>, FormatError> {
    let mut grouped: HashMap<String, Vec<RunEntry>> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(origin))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let [qid, _q0, docid, rank, score, _tag] = fields[..] else {
            return Err(parse_err(
                origin,
                i + 1,
                format!(
                    "expected 6 fields `qid Q0 docid rank score tag`, found {}",
                    fields.len()
                ),
            ));
        };
        let rank: u32 = rank
            .parse()
            .ok()
            .filter(|r| *r >= 1)
            .ok_or_else(|| parse_err(origin, i + 1, format!("rank `{rank}` is not a positive integer")))?;
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| parse_err(origin, i + 1, format!("score `{score}` is not a finite number")))?;
        grouped.entry(qid.to_string()).or_default().push(RunEntry {
            doc_id: docid.to_string(),
            rank,
            score,
        });
    }
    let mut lists: Vec<RankedList> = grouped
        .into_iter()
        .map(|(query_id, mut entries)| {
            entries.sort_by_key(|e| e.rank);
            RankedList { query_id, entries }
        })
        .collect();
    lists.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for list in &lists {
        list.validate()?;
    }
    Ok(lists)
}

/// Formats a score with at least four decimals while keeping every digit
/// needed to parse back the identical `f64`.
pub fn format_score(score: f64) -> String {
    let shortest = format!("{score}");
    let decimals = shortest.split_once('.').map_or(0, |(_, frac)| frac.len());
    if decimals < 4 {
        format!("{score:.4}")
    } else {
        shortest
    }
}

pub fn write_run(lists: &[RankedList], tag: &str, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    write_run_to(lists, tag, &mut out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

/// Writes rows sorted by (query id, rank). Lists are validated first.
pub fn write_run_to(lists: &[RankedList], tag: &str, out: &mut impl Write) -> std::io::Result<()> {
    let invalid = |e: FormatError| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string());
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(invalid(FormatError::InvalidRun {
            query_id: String::new(),
            message: format!("run tag `{tag}` must be a non-empty token"),
        }));
    }
    let mut order: Vec<&RankedList> = lists.iter().collect();
    order.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for list in order {
        list.validate().map_err(invalid)?;
        for entry in &list.entries {
            writeln!(
                out,
                "{} Q0 {} {} {} {}",
                list.query_id,
                entry.doc_id,
                entry.rank,
                format_score(entry.score),
                tag
            )?;
        }
    }
    Ok(())
}

/// Convenience for tests and tools that need an in-memory origin label.
pub fn inline_origin(name: &str) -> PathBuf {
    PathBuf::from(format!("<{name}>"))
}
