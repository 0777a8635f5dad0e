//! On-disk graph store: one JSON file per graph under `<data_dir>/graphs/`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use cvp_core::dsl::{serialize_json, GraphDocument};
use cvp_core::CausalGraph;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphRecord {
    pub id: String,
    pub graph: CausalGraph,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub revision: u64,
}

/// File layout of a stored record.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordFile {
    schema_version: u32,
    id: String,
    revision: u64,
    created_at: DateTime<Utc>,
    updated_at: DateTime<Utc>,
    graph: GraphDocument,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("graph `{0}` not found")]
    NotFound(String),
    #[error("revision conflict: expected {expected}, current is {current}")]
    RevisionConflict { expected: u64, current: u64 },
    #[error("storage failure: {0}")]
    Io(#[from] io::Error),
}

fn graphs_dir(data_dir: &Path) -> PathBuf {
    data_dir.join("graphs")
}

fn record_path(data_dir: &Path, id: &str) -> PathBuf {
    graphs_dir(data_dir).join(format!("{id}.json"))
}

/// Writes `record` atomically (temp file, fsync, rename).
pub fn persist(data_dir: &Path, record: &GraphRecord) -> Result<(), StoreError> {
    let dir = graphs_dir(data_dir);
    fs::create_dir_all(&dir)?;
    let file = RecordFile {
        schema_version: SCHEMA_VERSION,
        id: record.id.clone(),
        revision: record.revision,
        created_at: record.created_at,
        updated_at: record.updated_at,
        graph: GraphDocument::from(&record.graph),
    };
    let body = serde_json::to_vec_pretty(&file).map_err(io::Error::other)?;
    let tmp = dir.join(format!(".{}.json.tmp", record.id));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&body)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, record_path(data_dir, &record.id))?;
    Ok(())
}

fn read_record(path: &Path) -> Result<GraphRecord, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let file: RecordFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(format!("unsupported schema version {}", file.schema_version));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    if stem != file.id {
        return Err(format!("file name does not match id `{}`", file.id));
    }
    let graph = file.graph.into_graph().map_err(|errs| {
        errs.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ")
    })?;
    Ok(GraphRecord {
        id: file.id,
        graph,
        created_at: file.created_at,
        updated_at: file.updated_at,
        revision: file.revision,
    })
}

/// Loads every readable record. Corrupt or invalid files are logged and
/// skipped.
pub fn load_all(data_dir: &Path) -> Result<Vec<GraphRecord>, StoreError> {
    let dir = graphs_dir(data_dir);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && !p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with('.'))
        })
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for path in paths {
        match read_record(&path) {
            Ok(record) => records.push(record),
            Err(reason) => {
                tracing::warn!(event = "store.skip_corrupt", path = %path.display(), %reason)
            }
        }
    }
    Ok(records)
}

/// Record store. Reads run in parallel; writes to one record are serialized
/// by that record's lock, and the file on disk is written before the
/// in-memory copy changes.
#[derive(Debug)]
pub struct Store {
    data_dir: PathBuf,
    records: RwLock<HashMap<String, Arc<Mutex<GraphRecord>>>>,
    counter: AtomicU64,
}

impl Store {
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let data_dir = data_dir.into();
        fs::create_dir_all(graphs_dir(&data_dir))?;
        let loaded = load_all(&data_dir)?;
        let counter = AtomicU64::new(loaded.len() as u64);
        let records = loaded
            .into_iter()
            .map(|r| (r.id.clone(), Arc::new(Mutex::new(r))))
            .collect();
        Ok(Self {
            data_dir,
            records: RwLock::new(records),
            counter,
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn slot(&self, id: &str) -> Option<Arc<Mutex<GraphRecord>>> {
        self.records.read().unwrap().get(id).cloned()
    }

    pub fn get(&self, id: &str) -> Option<GraphRecord> {
        self.slot(id).map(|slot| slot.lock().unwrap().clone())
    }

    /// `(id, name, revision)` of every record, sorted by id.
    pub fn list(&self) -> Vec<(String, String, u64)> {
        let records = self.records.read().unwrap();
        let mut out: Vec<_> = records
            .values()
            .map(|slot| {
                let r = slot.lock().unwrap();
                (r.id.clone(), r.graph.name().to_owned(), r.revision)
            })
            .collect();
        out.sort();
        out
    }

    pub fn create(&self, graph: CausalGraph) -> Result<GraphRecord, StoreError> {
        let content = serialize_json(&graph);
        let mut records = self.records.write().unwrap();
        let id = loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let mut hasher = Sha256::new();
            hasher.update(content.as_bytes());
            hasher.update(n.to_le_bytes());
            let id = hex::encode(hasher.finalize())[..12].to_owned();
            if !records.contains_key(&id) {
                break id;
            }
        };
        let now = Utc::now();
        let record = GraphRecord {
            id: id.clone(),
            graph,
            created_at: now,
            updated_at: now,
            revision: 1,
        };
        persist(&self.data_dir, &record)?;
        records.insert(id, Arc::new(Mutex::new(record.clone())));
        Ok(record)
    }

    /// Replaces the graph. With `expected_revision`, fails unless it matches
    /// the current revision.
    pub fn update(
        &self,
        id: &str,
        graph: CausalGraph,
        expected_revision: Option<u64>,
    ) -> Result<GraphRecord, StoreError> {
        let slot = self.slot(id).ok_or_else(|| StoreError::NotFound(id.to_owned()))?;
        let mut current = slot.lock().unwrap();
        if let Some(expected) = expected_revision {
            if expected != current.revision {
                return Err(StoreError::RevisionConflict {
                    expected,
                    current: current.revision,
                });
            }
        }
        let next = GraphRecord {
            graph,
            updated_at: Utc::now(),
            revision: current.revision + 1,
            ..current.clone()
        };
        persist(&self.data_dir, &next)?;
        *current = next.clone();
        Ok(next)
    }

    pub fn delete(&self, id: &str) -> Result<(), StoreError> {
        let mut records = self.records.write().unwrap();
        let slot = records
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(id.to_owned()))?;
        let _guard = slot.lock().unwrap();
        match fs::remove_file(record_path(&self.data_dir, id)) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        records.remove(id);
        Ok(())
    }
}
