//! Snippet corpus: JSON Lines ingest, normalized-source deduplication and
//! seeded subsampling.
//!
//! Each input line is an object `{"id": string?, "source": string, "origin": string?}`.
//! Missing ids become the zero-padded 0-based line index (`"000000"`, ...).

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ast::ConfounderVector;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_BYTES: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<ConfounderVector>,
}

impl Snippet {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        Snippet {
            id: id.into(),
            source: source.into(),
            origin: String::new(),
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusMetadata {
    pub created_at: String,
    pub source_description: String,
}

impl CorpusMetadata {
    fn now(description: impl Into<String>) -> Self {
        let now: DateTime<Utc> = Utc::now();
        CorpusMetadata {
            created_at: now.to_rfc3339_opts(SecondsFormat::Secs, true),
            source_description: description.into(),
        }
    }
}

/// Ordered snippet collection. Immutable once built; transformations return
/// a new corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    snippets: Vec<Snippet>,
    pub metadata: CorpusMetadata,
}

/// Counters gathered while reading a corpus file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub lines: usize,
    pub skipped_oversize: usize,
    pub skipped_empty: usize,
}

#[derive(Deserialize)]
struct RawLine {
    id: Option<String>,
    source: Option<serde_json::Value>,
    origin: Option<String>,
    #[serde(default)]
    features: Option<ConfounderVector>,
}

impl Corpus {
    /// Builds a corpus, rejecting empty sources and duplicate ids.
    pub fn new(snippets: Vec<Snippet>, description: impl Into<String>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(snippets.len());
        for s in &snippets {
            if s.source.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "snippet {} has an empty source",
                    s.id
                )));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate snippet id {}",
                    s.id
                )));
            }
        }
        Ok(Corpus {
            snippets,
            metadata: CorpusMetadata::now(description),
        })
    }

    fn derived(&self, snippets: Vec<Snippet>) -> Self {
        Corpus {
            snippets,
            metadata: self.metadata.clone(),
        }
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Snippet> {
        self.snippets.iter()
    }

    pub fn into_snippets(self) -> Vec<Snippet> {
        self.snippets
    }

    /// Replaces the snippet list, keeping metadata. Used to attach features.
    pub fn with_snippets(&self, snippets: Vec<Snippet>) -> Result<Self> {
        let mut out = Corpus::new(snippets, self.metadata.source_description.clone())?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for s in &self.snippets {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Snippet;
    type IntoIter = std::slice::Iter<'a, Snippet>;

    fn into_iter(self) -> Self::IntoIter {
        self.snippets.iter()
    }
}

/// Reads a JSONL corpus with the default size limit.
pub fn ingest_jsonl(path: &Path) -> Result<Corpus> {
    ingest_jsonl_with_limit(path, DEFAULT_MAX_BYTES).map(|(c, _)| c)
}

/// Reads a JSONL corpus, skipping (and counting) snippets larger than
/// `max_bytes`. Blank lines are ignored.
pub fn ingest_jsonl_with_limit(path: &Path, max_bytes: usize) -> Result<(Corpus, IngestStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut stats = IngestStats::default();
    let mut snippets = Vec::new();
    let mut seen_ids = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        stats.lines += 1;
        let raw: RawLine = serde_json::from_str(&line).map_err(|e| Error::InvalidJson {
            line: line_no,
            message: e.to_string(),
        })?;
        let source = match raw.source {
            Some(serde_json::Value::String(s)) => s,
            Some(_) => {
                return Err(Error::Schema {
                    line: line_no,
                    message: "\"source\" must be a string".into(),
                })
            }
            None => {
                return Err(Error::Schema {
                    line: line_no,
                    message: "missing \"source\" field".into(),
                })
            }
        };
        let id = raw.id.unwrap_or_else(|| format!("{idx:06}"));
        if !seen_ids.insert(id.clone()) {
            return Err(Error::Schema {
                line: line_no,
                message: format!("duplicate id {id:?}"),
            });
        }
        if source.is_empty() {
            stats.skipped_empty += 1;
            continue;
        }
        if source.len() > max_bytes {
            stats.skipped_oversize += 1;
            continue;
        }
        snippets.push(Snippet {
            id,
            source,
            origin: raw.origin.unwrap_or_default(),
            features: raw.features,
        });
    }

    if stats.skipped_oversize > 0 {
        warn!(
            "{}: skipped {} snippet(s) larger than {} bytes",
            path.display(),
            stats.skipped_oversize,
            max_bytes
        );
    }
    if stats.skipped_empty > 0 {
        warn!(
            "{}: skipped {} empty snippet(s)",
            path.display(),
            stats.skipped_empty
        );
    }

    let corpus = Corpus {
        snippets,
        metadata: CorpusMetadata::now(path.display().to_string()),
    };
    Ok((corpus, stats))
}

fn normalize(source: &str) -> String {
    let mut out = String::with_capacity(source.len());
    for (i, line) in source.split('\n').enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line.trim_end());
    }
    out
}

/// Keeps the first snippet for each source, comparing sources with trailing
/// whitespace stripped from every line.
pub fn dedup(corpus: &Corpus) -> Corpus {
    let mut seen = HashSet::with_capacity(corpus.len());
    let kept = corpus
        .iter()
        .filter(|s| seen.insert(normalize(&s.source)))
        .cloned()
        .collect();
    corpus.derived(kept)
}

/// Draws `min(n, |corpus|)` snippets uniformly without replacement. The
/// result order is the seeded permutation order.
pub fn sample_subset(corpus: &Corpus, n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..corpus.len()).collect();
    let take = n.min(indices.len());
    let (picked, _) = indices.partial_shuffle(&mut rng, take);
    let snippets = picked.iter().map(|&i| corpus.snippets[i].clone()).collect();
    corpus.derived(snippets)
}
