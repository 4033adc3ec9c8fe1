//! Project directory: a manifest plus one JSON-lines file per entity kind.
//!
//! Record files are replaced atomically (temp file + rename). The curation
//! log is only ever appended to, and each event is synced to disk before the
//! caller hears about it.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{RegressionResult, UpliftReport};
use crate::annotator::{StoryVerdict, UnitAnnotation};
use crate::config::ProjectConfig;
use crate::ingest::{FrameScoreSeries, PerformanceRecord, Transcript, VideoMeta};
use crate::segmentation::FunctionalUnit;
use crate::storyline::{
    apply_event, replay, Attribution, Cluster, CurationAction, CurationError, CurationEvent,
    CurationState, StorylineSequence,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURATION_LOG_FILE: &str = "curation_log.jsonl";
pub const CLUSTERS_FILE: &str = "clusters.jsonl";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O failure on {path}: {detail}")]
    IoFailure { path: PathBuf, detail: String },
    #[error("corrupt manifest: {0}")]
    CorruptManifest(String),
    #[error("project schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("{file}:{line}: {detail}")]
    CorruptRecord { file: String, line: usize, detail: String },
    #[error("integrity violation: {0}")]
    Integrity(String),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error("curation log on disk is not a prefix of the in-memory log")]
    HistoryRewrite,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> StoreError {
    StoreError::IoFailure {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    pub created_at: String,
    pub taxonomy_version: String,
    pub params: ProjectConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub videos: Vec<VideoMeta>,
    pub transcripts: Vec<Transcript>,
    pub scores: Vec<FrameScoreSeries>,
    pub units: Vec<FunctionalUnit>,
    pub verdicts: Vec<StoryVerdict>,
    pub annotations: Vec<UnitAnnotation>,
    pub sequences: Vec<StorylineSequence>,
    /// Clustering as produced by the pipeline, before any curation.
    pub clusters_initial: Vec<Cluster>,
    pub clusters: Vec<Cluster>,
    pub curation_log: Vec<CurationEvent>,
    pub perf: Vec<PerformanceRecord>,
    pub dwell: Option<RegressionResult>,
    pub uplift: Option<UpliftReport>,
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Writes `bytes` to `path` through a synced temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::CorruptRecord {
                file: file.clone(),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

fn read_optional_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, StoreError> {
    let mut v: Vec<T> = read_jsonl(path)?;
    Ok(v.pop())
}

impl Project {
    pub fn new(root: impl Into<PathBuf>, params: ProjectConfig, taxonomy_version: &str) -> Self {
        Project {
            root: root.into(),
            manifest: Manifest {
                schema_version: SCHEMA_VERSION,
                name: params.project.name.clone(),
                created_at: now_rfc3339(),
                taxonomy_version: taxonomy_version.to_string(),
                params,
            },
            videos: Vec::new(),
            transcripts: Vec::new(),
            scores: Vec::new(),
            units: Vec::new(),
            verdicts: Vec::new(),
            annotations: Vec::new(),
            sequences: Vec::new(),
            clusters_initial: Vec::new(),
            clusters: Vec::new(),
            curation_log: Vec::new(),
            perf: Vec::new(),
            dwell: None,
            uplift: None,
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn video(&self, id: &str) -> Option<&VideoMeta> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn units_of(&self, id: &str) -> Vec<&FunctionalUnit> {
        self.units.iter().filter(|u| u.video_id == id).collect()
    }

    pub fn annotations_of(&self, id: &str) -> Vec<&UnitAnnotation> {
        self.annotations.iter().filter(|a| a.video_id == id).collect()
    }

    pub fn sequence_of(&self, id: &str) -> Option<&StorylineSequence> {
        self.sequences.iter().find(|s| s.video_id == id)
    }

    pub fn cluster(&self, id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.cluster_id == id)
    }

    /// Curation state as of the last logged event.
    pub fn curation_state(&self) -> CurationState {
        CurationState {
            clusters: self.clusters.clone(),
            sequences: self
                .sequences
                .iter()
                .map(|s| (s.video_id.clone(), s.roles.clone()))
                .collect(),
            last_seq_no: self.curation_log.len() as u64,
        }
    }

    pub fn initial_curation_state(&self) -> CurationState {
        CurationState {
            clusters: self.clusters_initial.clone(),
            last_seq_no: 0,
            ..self.curation_state()
        }
    }

    /// Every record refers to an ingested video and the curation log is
    /// numbered 1, 2, 3, ...
    pub fn check_integrity(&self) -> Result<(), StoreError> {
        let ids: BTreeSet<&str> = self.videos.iter().map(|v| v.video_id.as_str()).collect();
        if ids.len() != self.videos.len() {
            return Err(StoreError::Integrity("duplicate video_id in videos".into()));
        }
        let check = |kind: &str, id: &str| {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(StoreError::Integrity(format!("{kind} record refers to unknown video `{id}`")))
            }
        };
        for t in &self.transcripts {
            check("transcript", &t.video_id)?;
        }
        for s in &self.scores {
            check("scores", &s.video_id)?;
        }
        for u in &self.units {
            check("unit", &u.video_id)?;
        }
        for v in &self.verdicts {
            check("verdict", &v.video_id)?;
        }
        for a in &self.annotations {
            check("annotation", &a.video_id)?;
        }
        for s in &self.sequences {
            check("sequence", &s.video_id)?;
        }
        for p in &self.perf {
            check("perf", &p.video_id)?;
        }
        for c in self.clusters_initial.iter().chain(&self.clusters) {
            for m in &c.member_video_ids {
                check("cluster", m)?;
            }
        }
        for (i, e) in self.curation_log.iter().enumerate() {
            if e.seq_no != i as u64 + 1 {
                return Err(StoreError::Integrity(format!(
                    "curation log seq_no {} at position {}",
                    e.seq_no,
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Writes the manifest and every record file.
    pub fn save(&self) -> Result<(), StoreError> {
        std::fs::create_dir_all(&self.root).map_err(|e| io_err(&self.root, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        write_atomic(&self.path(MANIFEST_FILE), manifest.as_bytes())?;
        let files: [(&str, String); 10] = [
            ("videos.jsonl", to_jsonl(&self.videos)),
            ("transcripts.jsonl", to_jsonl(&self.transcripts)),
            ("scores.jsonl", to_jsonl(&self.scores)),
            ("units.jsonl", to_jsonl(&self.units)),
            ("verdicts.jsonl", to_jsonl(&self.verdicts)),
            ("annotations.jsonl", to_jsonl(&self.annotations)),
            ("sequences.jsonl", to_jsonl(&self.sequences)),
            ("clusters_initial.jsonl", to_jsonl(&self.clusters_initial)),
            (CLUSTERS_FILE, to_jsonl(&self.clusters)),
            ("perf.jsonl", to_jsonl(&self.perf)),
        ];
        for (name, body) in files {
            write_atomic(&self.path(name), body.as_bytes())?;
        }
        for (name, body) in [
            ("dwell_result.json", self.dwell.as_ref().map(|d| to_jsonl(std::slice::from_ref(d)))),
            ("uplift_result.json", self.uplift.as_ref().map(|u| to_jsonl(std::slice::from_ref(u)))),
        ] {
            let path = self.path(name);
            match body {
                Some(b) => write_atomic(&path, b.as_bytes())?,
                None if path.exists() => std::fs::remove_file(&path).map_err(|e| io_err(&path, e))?,
                None => {}
            }
        }
        self.sync_curation_log()
    }

    /// Appends events not yet on disk; refuses to touch recorded history.
    fn sync_curation_log(&self) -> Result<(), StoreError> {
        let path = self.path(CURATION_LOG_FILE);
        let on_disk: Vec<CurationEvent> = read_jsonl(&path)?;
        if on_disk.len() > self.curation_log.len() || on_disk[..] != self.curation_log[..on_disk.len()] {
            return Err(StoreError::HistoryRewrite);
        }
        if !path.exists() || on_disk.len() < self.curation_log.len() {
            append_lines(&path, &self.curation_log[on_disk.len()..])?;
        }
        Ok(())
    }

    /// Moves the curation log aside so that a fresh clustering can start a
    /// new history. Returns the archive path, if there was a log.
    pub fn archive_curation_log(&mut self) -> Result<Option<PathBuf>, StoreError> {
        let path = self.path(CURATION_LOG_FILE);
        self.curation_log.clear();
        if !path.exists() {
            return Ok(None);
        }
        let mut n = 1;
        let target = loop {
            let candidate = self.path(&format!("curation_log.archived-{n}.jsonl"));
            if !candidate.exists() {
                break candidate;
            }
            n += 1;
        };
        std::fs::rename(&path, &target).map_err(|e| io_err(&path, e))?;
        append_lines::<CurationEvent>(&path, &[])?;
        Ok(Some(target))
    }

    pub fn load(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let manifest_path = root.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&manifest_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::CorruptManifest(format!(
                    "no {MANIFEST_FILE} in {}",
                    root.display()
                )))
            }
            Err(e) => return Err(io_err(&manifest_path, e)),
        };
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| StoreError::CorruptManifest(e.to_string()))?;
        let version = raw
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| StoreError::CorruptManifest("missing schema_version".into()))?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(StoreError::SchemaVersionMismatch {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| StoreError::CorruptManifest(e.to_string()))?;
        let mut project = Project {
            manifest,
            videos: read_jsonl(&root.join("videos.jsonl"))?,
            transcripts: read_jsonl(&root.join("transcripts.jsonl"))?,
            scores: read_jsonl(&root.join("scores.jsonl"))?,
            units: read_jsonl(&root.join("units.jsonl"))?,
            verdicts: read_jsonl(&root.join("verdicts.jsonl"))?,
            annotations: read_jsonl(&root.join("annotations.jsonl"))?,
            sequences: read_jsonl(&root.join("sequences.jsonl"))?,
            clusters_initial: read_jsonl(&root.join("clusters_initial.jsonl"))?,
            clusters: read_jsonl(&root.join(CLUSTERS_FILE))?,
            curation_log: read_jsonl(&root.join(CURATION_LOG_FILE))?,
            perf: read_jsonl(&root.join("perf.jsonl"))?,
            dwell: read_optional_json(&root.join("dwell_result.json"))?,
            uplift: read_optional_json(&root.join("uplift_result.json"))?,
            root,
        };
        project.check_integrity()?;
        // The log is the source of truth; a crash between appending an event
        // and rewriting the cluster file leaves the latter one step behind.
        if !project.curation_log.is_empty() {
            let replayed = replay(&project.initial_curation_state(), &project.curation_log)?;
            if replayed.clusters != project.clusters {
                log::warn!("cluster file lags the curation log; using the replayed state");
                project.clusters = replayed.clusters;
            }
        }
        Ok(project)
    }

    /// Validates `action` against the current clusters, makes the event
    /// durable, then updates the cluster file. The store assigns `seq_no`.
    pub fn append_curation_event(
        &mut self,
        action: CurationAction,
        who: &Attribution,
    ) -> Result<CurationEvent, StoreError> {
        let state = self.curation_state();
        let event = CurationEvent {
            seq_no: state.last_seq_no + 1,
            timestamp: who.timestamp.clone(),
            actor: who.actor.clone(),
            action,
        };
        let next = apply_event(&state, &event)?;
        append_lines(&self.path(CURATION_LOG_FILE), std::slice::from_ref(&event))?;
        self.curation_log.push(event.clone());
        self.clusters = next.clusters;
        write_atomic(&self.path(CLUSTERS_FILE), to_jsonl(&self.clusters).as_bytes())?;
        Ok(event)
    }
}

fn append_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    let mut f: File = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    f.write_all(to_jsonl(records).as_bytes()).map_err(|e| io_err(path, e))?;
    f.sync_all().map_err(|e| io_err(path, e))
}

/// Shared handle for concurrent readers and a single writer. Every mutation
/// goes through the write lock, so curation events are numbered without
/// gaps or duplicates.
pub struct ProjectStore {
    project: RwLock<Project>,
}

impl ProjectStore {
    pub fn new(project: Project) -> Self {
        ProjectStore {
            project: RwLock::new(project),
        }
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Ok(Self::new(Project::load(root)?))
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Project> {
        self.project.read().unwrap_or_else(|p| p.into_inner())
    }

    pub fn submit(&self, action: CurationAction, actor: &str) -> Result<CurationEvent, StoreError> {
        self.submit_at(
            action,
            &Attribution {
                actor: actor.to_string(),
                timestamp: now_rfc3339(),
            },
        )
    }

    pub fn submit_at(&self, action: CurationAction, who: &Attribution) -> Result<CurationEvent, StoreError> {
        let mut guard = self.project.write().unwrap_or_else(|p| p.into_inner());
        guard.append_curation_event(action, who)
    }

    /// Runs an arbitrary mutation under the writer lock and saves.
    pub fn write_with<R>(&self, f: impl FnOnce(&mut Project) -> R) -> Result<R, StoreError> {
        let mut guard = self.project.write().unwrap_or_else(|p| p.into_inner());
        let out = f(&mut guard);
        guard.save()?;
        Ok(out)
    }
}
