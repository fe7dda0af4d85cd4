//! Knowledge history: exact top-k retrieval and similarity checks over
//! everything delivered so far, optionally persisted as JSON lines.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{cosine, Embedding};

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("history entry id {0:?} already exists")]
    DuplicateId(String),
    #[error("history entry embedding has dimension {got}, store uses {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("corrupt history file {path} line {line}: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("history io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub id: String,
    pub content: String,
    pub embedding: Embedding,
    pub entities: Vec<String>,
    pub session_id: String,
    pub t_ms: u64,
    /// False when the item was canceled before it was shown.
    pub delivered: bool,
}

/// In-memory store with an optional append-only backing file.
#[derive(Debug, Default)]
pub struct HistoryStore {
    entries: Vec<HistoryEntry>,
    ids: HashSet<String>,
    file: Option<PathBuf>,
    session_filter: Option<String>,
}

impl HistoryStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) the store persisted at `path`, loading existing entries.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, HistoryError> {
        let path = path.into();
        let mut store = Self {
            file: Some(path.clone()),
            ..Self::default()
        };
        if path.exists() {
            let f = fs::File::open(&path).map_err(|source| HistoryError::Io {
                path: path.clone(),
                source,
            })?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|source| HistoryError::Io {
                    path: path.clone(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: HistoryEntry =
                    serde_json::from_str(&line).map_err(|e| HistoryError::Corrupt {
                        path: path.clone(),
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                store.insert(entry)?;
            }
        }
        Ok(store)
    }

    /// Path of the per-profile history file under `dir`.
    pub fn profile_path(dir: &Path, profile_id: &str) -> PathBuf {
        dir.join(format!("{profile_id}.jsonl"))
    }

    /// Restricts retrieval and similarity to entries from one session.
    pub fn set_session_filter(&mut self, session_id: Option<String>) {
        self.session_filter = session_id;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn contains_id(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    fn insert(&mut self, entry: HistoryEntry) -> Result<(), HistoryError> {
        if self.ids.contains(&entry.id) {
            return Err(HistoryError::DuplicateId(entry.id));
        }
        if let Some(first) = self.entries.first() {
            if first.embedding.dim() != entry.embedding.dim() {
                return Err(HistoryError::DimensionMismatch {
                    expected: first.embedding.dim(),
                    got: entry.embedding.dim(),
                });
            }
        }
        self.ids.insert(entry.id.clone());
        self.entries.push(entry);
        Ok(())
    }

    pub fn add(&mut self, entry: HistoryEntry) -> Result<String, HistoryError> {
        let id = entry.id.clone();
        let line = self.file.as_ref().map(|_| {
            let mut s = serde_json::to_string(&entry).expect("history entries serialize");
            s.push('\n');
            s
        });
        self.insert(entry)?;
        if let (Some(path), Some(line)) = (&self.file, line) {
            let io = |source| HistoryError::Io {
                path: path.clone(),
                source,
            };
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            f.write_all(line.as_bytes()).map_err(io)?;
        }
        Ok(id)
    }

    fn visible(&self) -> impl Iterator<Item = (usize, &HistoryEntry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| self.session_filter.as_ref().map_or(true, |s| *s == e.session_id))
    }

    fn similarity(query: &Embedding, e: &HistoryEntry) -> f64 {
        // dimensions are enforced on insert; a foreign query scores lowest
        cosine(query, &e.embedding).unwrap_or(-1.0)
    }

    /// Exact top-k by descending cosine; ties go to the most recent entry.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Vec<&HistoryEntry> {
        let mut scored: Vec<(f64, usize, &HistoryEntry)> = self
            .visible()
            .map(|(i, e)| (Self::similarity(query, e), i, e))
            .collect();
        scored.sort_by(|a, b| match b.0.total_cmp(&a.0) {
            Ordering::Equal => b.1.cmp(&a.1),
            o => o,
        });
        scored.into_iter().take(k).map(|(_, _, e)| e).collect()
    }

    /// Highest cosine against any visible entry, or -1 when there is none.
    pub fn max_similarity(&self, query: &Embedding) -> f64 {
        self.visible()
            .map(|(_, e)| Self::similarity(query, e))
            .fold(-1.0, f64::max)
    }
}
