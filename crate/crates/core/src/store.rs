//! On-disk project layout.
//!
//! ```text
//! <dir>/project.meta       {"format":1,"project_id":…,"dim":…,"threshold":…}
//! <dir>/points.csv         id,modality,origin,index,payload
//! <dir>/profiles.jsonl     one profile record per line (append-only)
//! <dir>/embeddings.jsonl   {point_id,prompt_version,session_id,values} per line (append-only)
//! <dir>/sessions/<id>.json one document per session
//! <dir>/.lock              advisory writer lock
//! ```
//!
//! Whole-file writes go through a temp file and a rename. Line files are
//! upserts: a later line with the same `(session_id, point_id, prompt_version)`
//! key replaces an earlier one. Floats are written in shortest round-trip
//! form and parsed back bit-exactly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{DataPoint, Modality, SourceRef};
use crate::provider::{Profile, NORM_TOLERANCE};
use crate::session::Session;
use crate::simcore::Threshold;

pub const META_FILE: &str = "project.meta";
pub const POINTS_FILE: &str = "points.csv";
pub const PROFILES_FILE: &str = "profiles.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const SESSIONS_DIR: &str = "sessions";
pub const LOCK_FILE: &str = ".lock";

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("i/o error on {path}: {cause}")]
    IoError { path: String, cause: String },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("{file} line {line}: {reason}")]
    CorruptLine {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error("dimension mismatch: got {got}, project has {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("project directory is locked by another writer")]
    Locked,
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::IoError {
        path: path.display().to_string(),
        cause: e.to_string(),
    }
}

/// Non-fatal conditions found while loading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LoadWarning {
    /// Profiles stored without a matching embedding, e.g. after an
    /// interrupted append. Re-embedding resolves them.
    OrphanProfiles(Vec<String>),
}

/// A profile row: which session produced it, if any (batch runs have none).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(flatten)]
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub point_id: String,
    pub prompt_version: u32,
    #[serde(default)]
    pub session_id: Option<String>,
    pub values: Vec<f64>,
}

/// Upsert key shared by profile and embedding rows.
pub type RecordKey = (Option<String>, String, u32);

impl ProfileRecord {
    pub fn key(&self) -> RecordKey {
        (
            self.session_id.clone(),
            self.profile.point_id.clone(),
            self.profile.prompt_version,
        )
    }
}

impl EmbeddingRecord {
    pub fn key(&self) -> RecordKey {
        (self.session_id.clone(), self.point_id.clone(), self.prompt_version)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    format: u32,
    project_id: String,
    dim: Option<usize>,
    threshold: Option<Threshold>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub project_id: String,
    /// Fixed by the first stored embedding.
    pub dim: Option<usize>,
    pub threshold: Option<Threshold>,
    pub points: Vec<DataPoint>,
    pub profiles: Vec<ProfileRecord>,
    pub embeddings: Vec<EmbeddingRecord>,
    pub sessions: BTreeMap<String, Session>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub project: Project,
    pub warnings: Vec<LoadWarning>,
}

impl Project {
    pub fn new(project_id: impl Into<String>) -> Self {
        Self {
            project_id: project_id.into(),
            dim: None,
            threshold: None,
            points: Vec::new(),
            profiles: Vec::new(),
            embeddings: Vec::new(),
            sessions: BTreeMap::new(),
        }
    }

    /// Checks referential integrity and the single-dimension rule. Returns
    /// warnings for recoverable states.
    pub fn validate(&self) -> Result<Vec<LoadWarning>, StoreError> {
        let ids: HashSet<&str> = self.points.iter().map(|p| p.id.as_str()).collect();
        if ids.len() != self.points.len() {
            return Err(StoreError::IntegrityViolation("duplicate point ids".into()));
        }
        let known = |id: &str, what: &str| {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(StoreError::IntegrityViolation(format!("{what} references unknown point `{id}`")))
            }
        };

        let mut profile_keys = HashSet::new();
        for rec in &self.profiles {
            known(&rec.profile.point_id, "profile")?;
            profile_keys.insert(rec.key());
        }
        let mut embedded = HashSet::new();
        for rec in &self.embeddings {
            known(&rec.point_id, "embedding")?;
            let dim = self.dim.ok_or_else(|| {
                StoreError::IntegrityViolation("embeddings stored but project has no dim".into())
            })?;
            if rec.values.len() != dim {
                return Err(StoreError::IntegrityViolation(format!(
                    "embedding for `{}` has dim {}, project dim is {dim}",
                    rec.point_id,
                    rec.values.len()
                )));
            }
            let norm = rec.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(StoreError::IntegrityViolation(format!(
                    "embedding for `{}` is not unit-norm",
                    rec.point_id
                )));
            }
            if !profile_keys.contains(&rec.key()) {
                return Err(StoreError::IntegrityViolation(format!(
                    "orphan embedding for `{}` (version {}) has no profile",
                    rec.point_id, rec.prompt_version
                )));
            }
            embedded.insert(rec.key());
        }
        for (sid, s) in &self.sessions {
            if sid != &s.session_id {
                return Err(StoreError::IntegrityViolation(format!(
                    "session file `{sid}` holds session `{}`",
                    s.session_id
                )));
            }
            for id in &s.point_ids {
                known(id, &format!("session `{sid}`"))?;
            }
            for l in &s.pair_labels {
                if !s.point_ids.contains(&l.a) || !s.point_ids.contains(&l.b) {
                    return Err(StoreError::IntegrityViolation(format!(
                        "label in session `{sid}` references a point outside the session"
                    )));
                }
            }
        }

        let orphans: Vec<String> = self
            .profiles
            .iter()
            .filter(|r| !embedded.contains(&r.key()))
            .map(|r| r.profile.point_id.clone())
            .collect();
        Ok(if orphans.is_empty() {
            Vec::new()
        } else {
            vec![LoadWarning::OrphanProfiles(orphans)]
        })
    }
}

/// Writes `contents` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(contents).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}

fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn points_csv(points: &[DataPoint]) -> Result<Vec<u8>, StoreError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| StoreError::IoError {
        path: POINTS_FILE.into(),
        cause: e.to_string(),
    };
    w.write_record(["id", "modality", "origin", "index", "payload"]).map_err(err)?;
    for p in points {
        w.write_record([
            p.id.as_str(),
            &p.modality.to_string(),
            &p.source_ref.origin,
            &p.source_ref.index.to_string(),
            &p.payload,
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| StoreError::IoError {
        path: POINTS_FILE.into(),
        cause: e.to_string(),
    })
}

/// Handle on a project directory.
#[derive(Debug, Clone)]
pub struct ProjectStore {
    dir: PathBuf,
}

impl ProjectStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn exists(&self) -> bool {
        self.dir.join(META_FILE).is_file()
    }

    fn ensure_dir(&self) -> Result<(), StoreError> {
        fs::create_dir_all(self.dir.join(SESSIONS_DIR)).map_err(|e| io_err(&self.dir, e))
    }

    pub fn write_meta(&self, project: &Project) -> Result<(), StoreError> {
        self.ensure_dir()?;
        let meta = Meta {
            format: FORMAT_VERSION,
            project_id: project.project_id.clone(),
            dim: project.dim,
            threshold: project.threshold,
        };
        let text = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        write_atomic(&self.dir.join(META_FILE), &text)
    }

    pub fn write_points(&self, points: &[DataPoint]) -> Result<(), StoreError> {
        self.ensure_dir()?;
        write_atomic(&self.dir.join(POINTS_FILE), &points_csv(points)?)
    }

    pub fn write_session(&self, session: &Session) -> Result<(), StoreError> {
        self.ensure_dir()?;
        let path = self.dir.join(SESSIONS_DIR).join(format!("{}.json", session.session_id));
        let text = serde_json::to_vec_pretty(session).expect("session serializes");
        write_atomic(&path, &text)
    }

    /// Rewrites every file of the project.
    pub fn save(&self, project: &Project) -> Result<(), StoreError> {
        self.ensure_dir()?;
        self.write_points(&project.points)?;
        write_atomic(&self.dir.join(PROFILES_FILE), &jsonl(&project.profiles))?;
        write_atomic(&self.dir.join(EMBEDDINGS_FILE), &jsonl(&project.embeddings))?;
        for s in project.sessions.values() {
            self.write_session(s)?;
        }
        // meta last: a project is only visible once everything else is down
        self.write_meta(project)
    }

    fn append_lines<T: Serialize>(&self, file: &str, items: &[T]) -> Result<(), StoreError> {
        if items.is_empty() {
            return Ok(());
        }
        let path = self.dir.join(file);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        f.write_all(&jsonl(items)).map_err(|e| io_err(&path, e))?;
        f.sync_data().map_err(|e| io_err(&path, e))
    }

    /// Appends profiles, then embeddings. `dim` is the project dimension
    /// (`None` if not yet fixed, in which case the batch must agree with itself).
    pub fn append_profiles(
        &self,
        dim: Option<usize>,
        profiles: &[ProfileRecord],
        embeddings: &[EmbeddingRecord],
    ) -> Result<(), StoreError> {
        let want = dim.or_else(|| embeddings.first().map(|e| e.values.len()));
        if let Some(want) = want {
            if let Some(bad) = embeddings.iter().find(|e| e.values.len() != want) {
                return Err(StoreError::DimMismatch {
                    got: bad.values.len(),
                    want,
                });
            }
        }
        self.ensure_dir()?;
        self.append_lines(PROFILES_FILE, profiles)?;
        self.append_lines(EMBEDDINGS_FILE, embeddings)
    }

    pub fn load(&self) -> Result<Loaded, StoreError> {
        let meta_path = self.dir.join(META_FILE);
        if !meta_path.is_file() {
            return Err(StoreError::MissingFile(META_FILE.into()));
        }
        let meta_text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&meta_text).map_err(|e| StoreError::CorruptLine {
            file: META_FILE.into(),
            line: e.line(),
            reason: e.to_string(),
        })?;

        let points = self.read_points()?;
        let profiles = upsert_by_key(self.read_lines::<ProfileRecord>(PROFILES_FILE)?, ProfileRecord::key);
        let embeddings = upsert_by_key(self.read_lines::<EmbeddingRecord>(EMBEDDINGS_FILE)?, EmbeddingRecord::key);
        let sessions = self.read_sessions()?;

        let project = Project {
            project_id: meta.project_id,
            dim: meta.dim,
            threshold: meta.threshold,
            points,
            profiles,
            embeddings,
            sessions,
        };
        let warnings = project.validate()?;
        Ok(Loaded { project, warnings })
    }

    fn read_points(&self) -> Result<Vec<DataPoint>, StoreError> {
        let path = self.dir.join(POINTS_FILE);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let mut rdr = csv::Reader::from_path(&path).map_err(|e| StoreError::IoError {
            path: path.display().to_string(),
            cause: e.to_string(),
        })?;
        let mut points = Vec::new();
        for rec in rdr.records() {
            let corrupt = |line: usize, reason: String| StoreError::CorruptLine {
                file: POINTS_FILE.into(),
                line,
                reason,
            };
            let rec = rec.map_err(|e| {
                corrupt(e.position().map(|p| p.line() as usize).unwrap_or(0), e.to_string())
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() != 5 {
                return Err(corrupt(line, format!("expected 5 fields, found {}", rec.len())));
            }
            let modality: Modality = rec[1].parse().map_err(|e: String| corrupt(line, e))?;
            let index: u64 = rec[3].parse().map_err(|e| corrupt(line, format!("bad index: {e}")))?;
            points.push(DataPoint {
                id: rec[0].to_owned(),
                modality,
                payload: rec[4].to_owned(),
                source_ref: SourceRef {
                    origin: rec[2].to_owned(),
                    index,
                },
            });
        }
        Ok(points)
    }

    fn read_lines<T: for<'de> Deserialize<'de>>(&self, file: &str) -> Result<Vec<T>, StoreError> {
        let path = self.dir.join(file);
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let f = File::open(&path).map_err(|e| io_err(&path, e))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| io_err(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let item = serde_json::from_str(&line).map_err(|e| StoreError::CorruptLine {
                file: file.into(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            out.push(item);
        }
        Ok(out)
    }

    fn read_sessions(&self) -> Result<BTreeMap<String, Session>, StoreError> {
        let dir = self.dir.join(SESSIONS_DIR);
        let mut sessions = BTreeMap::new();
        if !dir.is_dir() {
            return Ok(sessions);
        }
        for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
            let path = entry.map_err(|e| io_err(&dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let session: Session = serde_json::from_str(&text).map_err(|e| StoreError::CorruptLine {
                file: format!("{SESSIONS_DIR}/{name}.json"),
                line: e.line(),
                reason: e.to_string(),
            })?;
            sessions.insert(name, session);
        }
        Ok(sessions)
    }

    /// Takes the advisory single-writer lock; released when the guard drops.
    pub fn lock(&self) -> Result<WriterLock, StoreError> {
        self.ensure_dir()?;
        let path = self.dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(WriterLock { _file: file }),
            Err(std::fs::TryLockError::WouldBlock) => Err(StoreError::Locked),
            Err(std::fs::TryLockError::Error(e)) => Err(io_err(&path, e)),
        }
    }
}

/// Held for as long as a process writes to a project directory.
#[derive(Debug)]
pub struct WriterLock {
    _file: File,
}

/// Keeps first-seen order, last-seen value.
fn upsert_by_key<T, K, F>(items: Vec<T>, key: F) -> Vec<T>
where
    K: std::hash::Hash + Eq,
    F: Fn(&T) -> K,
{
    let mut slots: HashMap<K, usize> = HashMap::new();
    let mut out: Vec<T> = Vec::with_capacity(items.len());
    for item in items {
        match slots.get(&key(&item)) {
            Some(&i) => out[i] = item,
            None => {
                slots.insert(key(&item), out.len());
                out.push(item);
            }
        }
    }
    out
}

pub fn save_project(project: &Project, dir: impl AsRef<Path>) -> Result<(), StoreError> {
    ProjectStore::new(dir.as_ref()).save(project)
}

pub fn load_project(dir: impl AsRef<Path>) -> Result<Loaded, StoreError> {
    ProjectStore::new(dir.as_ref()).load()
}

pub fn append_profiles(
    dir: impl AsRef<Path>,
    profiles: &[ProfileRecord],
    embeddings: &[EmbeddingRecord],
) -> Result<(), StoreError> {
    let store = ProjectStore::new(dir.as_ref());
    let dim = store.load()?.project.dim;
    store.append_profiles(dim, profiles, embeddings)?;
    // the first embeddings fix the project dimension
    if dim.is_none() {
        if let Some(first) = embeddings.first() {
            let mut loaded = store.load_meta_only()?;
            loaded.dim = Some(first.values.len());
            store.write_meta(&loaded)?;
        }
    }
    Ok(())
}

impl ProjectStore {
    fn load_meta_only(&self) -> Result<Project, StoreError> {
        let meta_path = self.dir.join(META_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let meta: Meta = serde_json::from_str(&text).map_err(|e| StoreError::CorruptLine {
            file: META_FILE.into(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        let mut p = Project::new(meta.project_id);
        p.dim = meta.dim;
        p.threshold = meta.threshold;
        Ok(p)
    }
}
