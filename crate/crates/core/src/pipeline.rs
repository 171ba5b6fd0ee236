//! Project-level operations that tie sessions, providers and the vector index
//! together. Callers persist the returned changes through
//! [`crate::store::ProjectStore`].

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::ingest::DataPoint;
use crate::prompting::{parse_interest, render_prompt, PromptError, DEFAULT_TAG_COUNT};
use crate::provider::{EmbeddingVector, Provider, ProviderError};
use crate::session::{PendingRound, ReviewAction, Session, SessionError};
use crate::simcore::{
    build_index, calibrate_threshold, classify, knn_query, PairLabel, SimError, Similarity, Threshold,
    VectorIndex,
};
use crate::store::{EmbeddingRecord, Project, ProfileRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("duplicate point id `{0}`")]
    DuplicatePoint(String),
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("invalid session id `{0}`: use 1-64 ASCII letters, digits, `-` or `_`")]
    InvalidSessionId(String),
    #[error("session `{0}` already exists")]
    SessionExists(String),
    #[error("point `{0}` has no accepted embedding")]
    NoEmbedding(String),
    #[error("no embeddings stored yet")]
    NoVectors,
    #[error("session `{0}` changed while its round was being generated")]
    StaleRound(String),
    #[error("dimension mismatch: got {got}, project has {want}")]
    DimMismatch { got: usize, want: usize },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A session round computed by [`Project::prepare_round`].
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRound {
    session_id: String,
    rounds_before: usize,
    interest_version: u32,
    pending: PendingRound,
}

/// What a generate call added; the caller appends these to the store.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub profiles: Vec<ProfileRecord>,
    pub embeddings: Vec<EmbeddingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    /// `None` while the project has no threshold.
    pub label: Option<Similarity>,
}

/// Session ids name files, so they are kept to a safe alphabet.
pub fn valid_session_id(id: &str) -> bool {
    (1..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl Project {
    pub fn point(&self, id: &str) -> Option<&DataPoint> {
        self.points.iter().find(|p| p.id == id)
    }

    fn point_map(&self) -> HashMap<&str, &DataPoint> {
        self.points.iter().map(|p| (p.id.as_str(), p)).collect()
    }

    /// Adds freshly ingested points; ids must be new to the project.
    pub fn add_points(&mut self, points: Vec<DataPoint>) -> Result<usize, PipelineError> {
        let existing: HashSet<&str> = self.points.iter().map(|p| p.id.as_str()).collect();
        let mut batch = HashSet::new();
        for p in &points {
            if existing.contains(p.id.as_str()) || !batch.insert(p.id.as_str()) {
                return Err(PipelineError::DuplicatePoint(p.id.clone()));
            }
        }
        let n = points.len();
        self.points.extend(points);
        Ok(n)
    }

    pub fn session(&self, id: &str) -> Result<&Session, PipelineError> {
        self.sessions
            .get(id)
            .ok_or_else(|| PipelineError::UnknownSession(id.to_owned()))
    }

    fn session_mut(&mut self, id: &str) -> Result<&mut Session, PipelineError> {
        self.sessions
            .get_mut(id)
            .ok_or_else(|| PipelineError::UnknownSession(id.to_owned()))
    }

    /// Next free `s<N>` session id.
    pub fn next_session_id(&self) -> String {
        (1..)
            .map(|n| format!("s{n}"))
            .find(|id| !self.sessions.contains_key(id))
            .expect("unbounded")
    }

    pub fn start_session(
        &mut self,
        session_id: Option<String>,
        point_ids: &[String],
        raw_interest: &str,
    ) -> Result<&Session, PipelineError> {
        let id = session_id.unwrap_or_else(|| self.next_session_id());
        if !valid_session_id(&id) {
            return Err(PipelineError::InvalidSessionId(id));
        }
        if self.sessions.contains_key(&id) {
            return Err(PipelineError::SessionExists(id));
        }
        let known = self.point_map();
        let session = Session::start(id.clone(), point_ids, raw_interest, |p| known.contains_key(p))?;
        self.sessions.insert(id.clone(), session);
        Ok(&self.sessions[&id])
    }

    fn check_dim(&self, vectors: &[EmbeddingVector]) -> Result<(), PipelineError> {
        let want = self.dim.or_else(|| vectors.first().map(|v| v.values.len()));
        if let Some(want) = want {
            if let Some(bad) = vectors.iter().find(|v| v.values.len() != want) {
                return Err(PipelineError::DimMismatch {
                    got: bad.values.len(),
                    want,
                });
            }
        }
        Ok(())
    }

    fn upsert_records(&mut self, profiles: &[ProfileRecord], embeddings: &[EmbeddingRecord]) {
        for rec in profiles {
            match self.profiles.iter_mut().find(|r| r.key() == rec.key()) {
                Some(slot) => *slot = rec.clone(),
                None => self.profiles.push(rec.clone()),
            }
        }
        for rec in embeddings {
            match self.embeddings.iter_mut().find(|r| r.key() == rec.key()) {
                Some(slot) => *slot = rec.clone(),
                None => self.embeddings.push(rec.clone()),
            }
        }
        if self.dim.is_none() {
            self.dim = embeddings.first().map(|e| e.values.len());
        }
    }

    /// Runs one round for a session. On any error neither the session nor
    /// the project changes.
    pub fn generate_round(&mut self, session_id: &str, provider: &dyn Provider) -> Result<RoundOutput, PipelineError> {
        let prepared = self.prepare_round(session_id, provider)?;
        self.commit_round(prepared)
    }

    /// Provider half of [`Project::generate_round`]: summarizes and embeds
    /// without touching the project, so it can run against a snapshot.
    pub fn prepare_round(&self, session_id: &str, provider: &dyn Provider) -> Result<PreparedRound, PipelineError> {
        let session = self.session(session_id)?;
        let points = self.point_map();
        let pending = session.prepare_round(|id| points.get(id).copied(), provider)?;
        self.check_dim(&pending.embeddings)?;
        Ok(PreparedRound {
            session_id: session_id.to_owned(),
            rounds_before: session.rounds.len(),
            interest_version: session.interest.version,
            pending,
        })
    }

    /// Applies a round from [`Project::prepare_round`]. Fails with
    /// [`PipelineError::StaleRound`] if the session moved on in between.
    pub fn commit_round(&mut self, prepared: PreparedRound) -> Result<RoundOutput, PipelineError> {
        let session_id = prepared.session_id.as_str();
        let session = self.session(session_id)?;
        if session.rounds.len() != prepared.rounds_before || session.interest.version != prepared.interest_version {
            return Err(PipelineError::StaleRound(prepared.session_id));
        }
        let pending = prepared.pending;
        self.check_dim(&pending.embeddings)?;

        let version = pending.round.prompt.interest_version;
        let sid = Some(session_id.to_owned());
        let output = RoundOutput {
            profiles: pending
                .round
                .profiles
                .iter()
                .map(|p| ProfileRecord {
                    session_id: sid.clone(),
                    profile: p.clone(),
                })
                .collect(),
            embeddings: pending
                .embeddings
                .iter()
                .map(|v| EmbeddingRecord {
                    point_id: v.point_id.clone(),
                    prompt_version: version,
                    session_id: sid.clone(),
                    values: v.values.clone(),
                })
                .collect(),
        };
        self.session_mut(session_id)?.commit_round(&pending)?;
        self.upsert_records(&output.profiles, &output.embeddings);
        Ok(output)
    }

    pub fn submit_review(&mut self, session_id: &str, feedback: &str, action: &ReviewAction) -> Result<&Session, PipelineError> {
        let next_seq = self
            .sessions
            .values()
            .filter_map(|s| s.accepted_seq)
            .max()
            .unwrap_or(0)
            + 1;
        let session = self.session_mut(session_id)?;
        session.submit_review(feedback, action)?;
        if session.is_accepted() {
            session.accepted_seq = Some(next_seq);
        }
        Ok(session)
    }

    pub fn label_pair(
        &mut self,
        session_id: &str,
        a: &str,
        b: &str,
        label: Similarity,
        labeler: &str,
    ) -> Result<&Session, PipelineError> {
        let session = self.session_mut(session_id)?;
        session.label_pair(a, b, label, labeler)?;
        Ok(session)
    }

    /// Highest interest version used by batch (session-less) profiles.
    pub fn batch_version(&self) -> u32 {
        self.profiles
            .iter()
            .filter(|r| r.session_id.is_none())
            .map(|r| r.profile.prompt_version)
            .max()
            .unwrap_or(0)
    }

    /// Summarizes `point_ids` (all points when empty) outside any session.
    /// The new profiles get the next batch version.
    pub fn batch_summarize(
        &mut self,
        raw_interest: &str,
        point_ids: &[String],
        provider: &dyn Provider,
    ) -> Result<Vec<ProfileRecord>, PipelineError> {
        let mut interest = parse_interest(raw_interest)?;
        interest.version = self.batch_version() + 1;
        let prompt = render_prompt(&interest, DEFAULT_TAG_COUNT)?;
        let targets: Vec<&DataPoint> = if point_ids.is_empty() {
            self.points.iter().collect()
        } else {
            point_ids
                .iter()
                .map(|id| self.point(id).ok_or_else(|| PipelineError::UnknownPoint(id.clone())))
                .collect::<Result<_, _>>()?
        };
        let mut out = Vec::with_capacity(targets.len());
        for p in targets {
            out.push(ProfileRecord {
                session_id: None,
                profile: provider.summarize(p, &prompt)?,
            });
        }
        self.upsert_records(&out, &[]);
        Ok(out)
    }

    /// Embeds every stored profile that has no embedding yet.
    pub fn embed_pending(&mut self, provider: &dyn Provider) -> Result<Vec<EmbeddingRecord>, PipelineError> {
        let done: HashSet<_> = self.embeddings.iter().map(EmbeddingRecord::key).collect();
        let mut vectors = Vec::new();
        let mut records = Vec::new();
        for rec in self.profiles.iter().filter(|r| !done.contains(&r.key())) {
            let v = provider.embed(&rec.profile)?;
            records.push(EmbeddingRecord {
                point_id: rec.profile.point_id.clone(),
                prompt_version: rec.profile.prompt_version,
                session_id: rec.session_id.clone(),
                values: v.values.clone(),
            });
            vectors.push(v);
        }
        self.check_dim(&vectors)?;
        self.upsert_records(&[], &records);
        Ok(records)
    }

    /// One vector per point: the final round of the most recently accepted
    /// session covering the point, else the newest batch embedding.
    pub fn canonical_vectors(&self) -> Vec<EmbeddingVector> {
        let mut accepted: Vec<&Session> = self.sessions.values().filter(|s| s.is_accepted()).collect();
        accepted.sort_by_key(|s| std::cmp::Reverse(s.accepted_seq));

        let by_key: HashMap<_, &EmbeddingRecord> = self.embeddings.iter().map(|e| (e.key(), e)).collect();
        let mut out = Vec::new();
        for p in &self.points {
            let from_session = accepted.iter().find_map(|s| {
                let version = s.last_round()?.prompt.interest_version;
                by_key
                    .get(&(Some(s.session_id.clone()), p.id.clone(), version))
                    .copied()
            });
            let chosen = from_session.or_else(|| {
                self.embeddings
                    .iter()
                    .filter(|e| e.session_id.is_none() && e.point_id == p.id)
                    .max_by_key(|e| e.prompt_version)
            });
            if let Some(e) = chosen {
                out.push(EmbeddingVector {
                    point_id: e.point_id.clone(),
                    dim: e.values.len(),
                    values: e.values.clone(),
                    normalized: true,
                });
            }
        }
        out
    }

    pub fn canonical_index(&self) -> Result<VectorIndex, PipelineError> {
        let vectors = self.canonical_vectors();
        if vectors.is_empty() {
            return Err(PipelineError::NoVectors);
        }
        Ok(build_index(&vectors)?)
    }

    /// Labels from one session, or from every session.
    pub fn labels(&self, session_id: Option<&str>) -> Result<Vec<PairLabel>, PipelineError> {
        match session_id {
            Some(id) => Ok(self.session(id)?.pair_labels.clone()),
            None => Ok(self.sessions.values().flat_map(|s| s.pair_labels.clone()).collect()),
        }
    }

    /// Calibrates against stored labels and installs the resulting threshold.
    pub fn calibrate(&mut self, session_id: Option<&str>) -> Result<Threshold, PipelineError> {
        let labels = self.labels(session_id)?;
        let index = self.canonical_index()?;
        let t = calibrate_threshold(&labels, &index)?;
        self.threshold = Some(t);
        Ok(t)
    }
}

/// Top-`k` neighbors of a stored point (itself excluded), labelled under
/// `threshold` when one is set.
pub fn neighbors(
    index: &VectorIndex,
    point_id: &str,
    k: usize,
    threshold: Option<&Threshold>,
) -> Result<Vec<Neighbor>, PipelineError> {
    let query = index
        .vector(point_id)
        .ok_or_else(|| PipelineError::NoEmbedding(point_id.to_owned()))?;
    let hits = knn_query(index, query, k, Some(point_id))?;
    Ok(hits
        .into_iter()
        .enumerate()
        .map(|(i, s)| Neighbor {
            rank: i + 1,
            label: threshold.map(|t| classify(s.score, t)),
            id: s.b,
            score: s.score,
        })
        .collect())
}
