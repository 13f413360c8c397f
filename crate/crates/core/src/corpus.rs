//! Document store: ingestion of raw text and JSONL exports, and per-source statistics.
//!
//! Two input formats are accepted. Files ending in `.jsonl` hold one JSON object
//! per line with a required `text` key and optional `id`, `source` and `lang`.
//! Anything else is read as plain text and split into documents on blank lines.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hashing::content_id;
use crate::io;

const DOCUMENTS_FILE: &str = "documents.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lang: Option<String>,
    pub n_words: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sentences: Option<u64>,
}

impl Document {
    pub fn new(source: &str, text: &str) -> Self {
        Document {
            id: content_id(&[source, text]),
            source: source.to_string(),
            text: text.to_string(),
            lang: None,
            n_words: word_count(text),
            n_sentences: None,
        }
    }
}

/// Number of maximal non-whitespace runs after NFC normalization.
pub fn word_count(text: &str) -> u64 {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedLine {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeError {
    pub path: PathBuf,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub added: usize,
    pub skipped_existing: usize,
    pub rejected: Vec<RejectedLine>,
    pub decode_errors: Vec<DecodeError>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub skip_existing: bool,
    pub exec: Exec,
}

#[derive(Deserialize)]
struct JsonRecord {
    text: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    lang: Option<String>,
}

struct Parsed {
    docs: Vec<Document>,
    rejected: Vec<RejectedLine>,
    decode_errors: Vec<DecodeError>,
}

#[derive(Debug, Clone, Default)]
pub struct DocumentStore {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl DocumentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn documents_mut(&mut self) -> &mut [Document] {
        &mut self.docs
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Insert one document; `Ok(false)` if the id exists and `skip_existing` is set.
    pub fn insert(&mut self, doc: Document, skip_existing: bool) -> Result<bool> {
        if doc.text.is_empty() {
            return Err(Error::InvalidInput(format!("document {} has empty text", doc.id)));
        }
        if self.index.contains_key(&doc.id) {
            if skip_existing {
                return Ok(false);
            }
            return Err(Error::DuplicateId(doc.id));
        }
        self.index.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(true)
    }

    /// Ingest a list of files under a default source tag.
    ///
    /// Files are parsed independently (in parallel when enabled) and merged in
    /// argument order, so the resulting store equals sequential ingestion.
    pub fn ingest(&mut self, paths: &[PathBuf], source: &str, opts: IngestOptions) -> Result<IngestReport> {
        let parsed = opts.exec.map(paths, |p| parse_file(p, source));
        let mut report = IngestReport::default();
        for p in parsed {
            let p = p?;
            for d in p.docs {
                if self.insert(d, opts.skip_existing)? {
                    report.added += 1;
                } else {
                    report.skipped_existing += 1;
                }
            }
            report.rejected.extend(p.rejected);
            report.decode_errors.extend(p.decode_errors);
        }
        Ok(report)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir_all(dir)?;
        io::write_jsonl(&dir.join(DOCUMENTS_FILE), &self.docs)
    }

    /// Load a store directory; a missing directory yields an empty store.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(DOCUMENTS_FILE);
        let mut store = DocumentStore::new();
        if !path.exists() {
            return Ok(store);
        }
        for d in io::read_jsonl::<Document>(&path)? {
            store.insert(d, false)?;
        }
        Ok(store)
    }

    /// Per-source statistics over the raw documents.
    pub fn stats(&self, name: &str, seed: u64) -> Result<CorpusManifest> {
        if self.docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut by_source: BTreeMap<&str, SourceStats> = BTreeMap::new();
        for d in &self.docs {
            let s = by_source
                .entry(d.source.as_str())
                .or_insert_with(|| SourceStats::empty(&d.source));
            s.n_documents += 1;
            s.n_words += d.n_words;
            s.n_sentences += d.n_sentences.unwrap_or(0);
            s.bytes += d.text.len() as u64;
        }
        let sources: Vec<SourceStats> = by_source.into_values().collect();
        Ok(CorpusManifest::from_sources(name, sources, seed))
    }
}

fn parse_file(path: &Path, default_source: &str) -> Result<Parsed> {
    let bytes = io::read_bytes(path)?;
    let is_jsonl = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("jsonl"))
        .unwrap_or(false);
    if is_jsonl {
        Ok(parse_jsonl(path, &bytes, default_source))
    } else {
        Ok(parse_plain(path, &bytes, default_source))
    }
}

fn parse_jsonl(path: &Path, bytes: &[u8], default_source: &str) -> Parsed {
    let mut out = Parsed {
        docs: Vec::new(),
        rejected: Vec::new(),
        decode_errors: Vec::new(),
    };
    let mut start = 0usize;
    for (lineno, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_start = start;
        start += raw.len() + 1;
        let line = match std::str::from_utf8(raw) {
            Ok(s) => s,
            Err(e) => {
                out.decode_errors.push(DecodeError {
                    path: path.to_path_buf(),
                    byte_offset: line_start + e.valid_up_to(),
                });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| RejectedLine {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        match serde_json::from_str::<JsonRecord>(line) {
            Ok(rec) if rec.text.trim().is_empty() => {
                out.rejected.push(reject("empty text".into()));
            }
            Ok(rec) => {
                let source = rec.source.as_deref().unwrap_or(default_source);
                let mut doc = Document::new(source, &rec.text);
                if let Some(id) = rec.id {
                    doc.id = id;
                }
                doc.lang = rec.lang;
                out.docs.push(doc);
            }
            Err(e) => out.rejected.push(reject(e.to_string())),
        }
    }
    out
}

fn parse_plain(path: &Path, bytes: &[u8], source: &str) -> Parsed {
    let mut out = Parsed {
        docs: Vec::new(),
        rejected: Vec::new(),
        decode_errors: Vec::new(),
    };
    let mut block_start: Option<usize> = None;
    let mut block_end = 0usize;
    let mut pos = 0usize;
    let flush = |from: Option<usize>, to: usize, out: &mut Parsed| {
        let Some(from) = from else { return };
        match std::str::from_utf8(&bytes[from..to]) {
            Ok(s) => {
                let t = s.trim();
                if !t.is_empty() {
                    out.docs.push(Document::new(source, t));
                }
            }
            Err(e) => out.decode_errors.push(DecodeError {
                path: path.to_path_buf(),
                byte_offset: from + e.valid_up_to(),
            }),
        }
    };
    for raw in bytes.split(|&b| b == b'\n') {
        let line_start = pos;
        pos += raw.len() + 1;
        let blank = raw.iter().all(|b| b.is_ascii_whitespace());
        if blank {
            flush(block_start.take(), block_end, &mut out);
        } else {
            if block_start.is_none() {
                block_start = Some(line_start);
            }
            block_end = line_start + raw.len();
        }
    }
    flush(block_start, block_end, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source: String,
    pub n_documents: u64,
    pub n_words: u64,
    pub n_sentences: u64,
    pub bytes: u64,
    /// Word count after sentence filtering, when a prep stage has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_words_kept: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sentences_kept: Option<u64>,
}

impl SourceStats {
    pub fn empty(source: &str) -> Self {
        SourceStats {
            source: source.to_string(),
            n_documents: 0,
            n_words: 0,
            n_sentences: 0,
            bytes: 0,
            n_words_kept: None,
            n_sentences_kept: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub name: String,
    pub sources: Vec<SourceStats>,
    pub total: SourceStats,
    pub created_at: u64,
    pub seed: u64,
}

impl CorpusManifest {
    pub fn from_sources(name: &str, sources: Vec<SourceStats>, seed: u64) -> Self {
        let mut total = SourceStats::empty("TOTAL");
        for s in &sources {
            total.n_documents += s.n_documents;
            total.n_words += s.n_words;
            total.n_sentences += s.n_sentences;
            total.bytes += s.bytes;
            if let Some(k) = s.n_words_kept {
                *total.n_words_kept.get_or_insert(0) += k;
            }
            if let Some(k) = s.n_sentences_kept {
                *total.n_sentences_kept.get_or_insert(0) += k;
            }
        }
        let created_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        CorpusManifest {
            name: name.to_string(),
            sources,
            total,
            created_at,
            seed,
        }
    }

    /// Attach post-filter counts (words, sentences) keyed by source.
    pub fn with_kept(mut self, kept: &BTreeMap<String, (u64, u64)>) -> Self {
        for s in &mut self.sources {
            let (w, n) = kept.get(&s.source).copied().unwrap_or((0, 0));
            s.n_words_kept = Some(w);
            s.n_sentences_kept = Some(n);
        }
        let sources = std::mem::take(&mut self.sources);
        let mut m = CorpusManifest::from_sources(&self.name, sources, self.seed);
        m.created_at = self.created_at;
        m
    }
}
