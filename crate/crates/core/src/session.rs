//! Review sessions: rounds of summarize → review → refine or accept, plus the
//! pair labels experts attach along the way.
//!
//! States move `Created → Generated → … → Accepted`. A new round may only be
//! generated once the previous one has been reviewed. `Accepted` is terminal.
//! Every mutating method validates first and mutates last, so an `Err` leaves
//! the session untouched.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DataPoint;
use crate::prompting::{
    parse_interest, refine_interest, render_prompt, InterestSpec, PromptError, RefineMode,
    RenderedPrompt, DEFAULT_TAG_COUNT,
};
use crate::provider::{EmbeddingVector, Profile, Provider, ProviderError};
use crate::simcore::{PairLabel, Similarity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("a session needs at least one point")]
    EmptyPoints,
    #[error("unknown point `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("the previous round has not been reviewed")]
    PrecedingRoundUnreviewed,
    #[error("session is already accepted")]
    AlreadyAccepted,
    #[error("no round has been generated yet")]
    NotGenerated,
    #[error("a point cannot be paired with itself")]
    SelfPair,
    #[error("session is closed")]
    SessionClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Created,
    Generated,
    Accepted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round_no: u32,
    pub prompt: RenderedPrompt,
    pub profiles: Vec<Profile>,
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum ReviewAction {
    Refine { edit: String, mode: RefineMode },
    Accept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub interest: InterestSpec,
    pub tag_count: usize,
    pub rounds: Vec<Round>,
    pub state: SessionState,
    pub pair_labels: Vec<PairLabel>,
    pub point_ids: Vec<String>,
    /// Project-wide acceptance order; later acceptances win when two
    /// sessions cover the same point.
    #[serde(default)]
    pub accepted_seq: Option<u64>,
}

/// A fully computed round that has not been attached to its session yet.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingRound {
    pub round: Round,
    pub embeddings: Vec<EmbeddingVector>,
}

impl Session {
    /// Starts a session over `point_ids`. `exists` reports whether a point id
    /// is known to the project. Duplicate ids are collapsed.
    pub fn start(
        session_id: impl Into<String>,
        point_ids: &[String],
        raw_interest: &str,
        exists: impl Fn(&str) -> bool,
    ) -> Result<Self, SessionError> {
        if point_ids.is_empty() {
            return Err(SessionError::EmptyPoints);
        }
        if let Some(missing) = point_ids.iter().find(|id| !exists(id)) {
            return Err(SessionError::UnknownId(missing.clone()));
        }
        let interest = parse_interest(raw_interest)?;
        let mut ids: Vec<String> = Vec::with_capacity(point_ids.len());
        for id in point_ids {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
        }
        Ok(Self {
            session_id: session_id.into(),
            interest,
            tag_count: DEFAULT_TAG_COUNT,
            rounds: Vec::new(),
            state: SessionState::Created,
            pair_labels: Vec::new(),
            point_ids: ids,
            accepted_seq: None,
        })
    }

    pub fn last_round(&self) -> Option<&Round> {
        self.rounds.last()
    }

    pub fn is_accepted(&self) -> bool {
        self.state == SessionState::Accepted
    }

    fn check_can_generate(&self) -> Result<(), SessionError> {
        match self.state {
            SessionState::Accepted => Err(SessionError::AlreadyAccepted),
            SessionState::Created => Ok(()),
            SessionState::Generated => match self.rounds.last() {
                Some(r) if r.feedback.is_none() => Err(SessionError::PrecedingRoundUnreviewed),
                _ => Ok(()),
            },
        }
    }

    /// Summarizes and embeds every point under the current interest without
    /// touching the session.
    pub fn prepare_round<'a>(
        &self,
        lookup: impl Fn(&str) -> Option<&'a DataPoint>,
        provider: &dyn Provider,
    ) -> Result<PendingRound, SessionError> {
        self.check_can_generate()?;
        let prompt = render_prompt(&self.interest, self.tag_count)?;
        let mut profiles = Vec::with_capacity(self.point_ids.len());
        let mut embeddings = Vec::with_capacity(self.point_ids.len());
        for id in &self.point_ids {
            let point = lookup(id).ok_or_else(|| SessionError::UnknownId(id.clone()))?;
            let profile = provider.summarize(point, &prompt)?;
            embeddings.push(provider.embed(&profile)?);
            profiles.push(profile);
        }
        Ok(PendingRound {
            round: Round {
                round_no: self.rounds.len() as u32 + 1,
                prompt,
                profiles,
                feedback: None,
            },
            embeddings,
        })
    }

    /// Appends a round produced by [`Session::prepare_round`] on this same
    /// session state.
    pub fn commit_round(&mut self, pending: &PendingRound) -> Result<(), SessionError> {
        self.check_can_generate()?;
        self.rounds.push(pending.round.clone());
        self.state = SessionState::Generated;
        Ok(())
    }

    pub fn generate_round<'a>(
        &mut self,
        lookup: impl Fn(&str) -> Option<&'a DataPoint>,
        provider: &dyn Provider,
    ) -> Result<Vec<EmbeddingVector>, SessionError> {
        let pending = self.prepare_round(lookup, provider)?;
        self.commit_round(&pending)?;
        Ok(pending.embeddings)
    }

    pub fn submit_review(&mut self, feedback: &str, action: &ReviewAction) -> Result<(), SessionError> {
        match self.state {
            SessionState::Accepted => return Err(SessionError::AlreadyAccepted),
            SessionState::Created => return Err(SessionError::NotGenerated),
            SessionState::Generated => {}
        }
        let refined = match action {
            ReviewAction::Refine { edit, mode } => Some(refine_interest(&self.interest, edit, *mode)?),
            ReviewAction::Accept => None,
        };
        if let Some(last) = self.rounds.last_mut() {
            last.feedback = Some(feedback.to_owned());
        }
        match refined {
            Some(interest) => self.interest = interest,
            None => self.state = SessionState::Accepted,
        }
        Ok(())
    }

    /// Records a label for the unordered pair `(a, b)`, replacing any earlier
    /// label from the same labeler.
    pub fn label_pair(&mut self, a: &str, b: &str, label: Similarity, labeler: &str) -> Result<(), SessionError> {
        if self.is_accepted() {
            return Err(SessionError::SessionClosed);
        }
        if a == b {
            return Err(SessionError::SelfPair);
        }
        for id in [a, b] {
            if !self.point_ids.iter().any(|p| p == id) {
                return Err(SessionError::UnknownId(id.to_owned()));
            }
        }
        let new = PairLabel {
            a: a.to_owned(),
            b: b.to_owned(),
            label,
            labeler: labeler.to_owned(),
        };
        match self.pair_labels.iter_mut().find(|l| l.same_slot(&new)) {
            Some(slot) => *slot = new,
            None => self.pair_labels.push(new),
        }
        Ok(())
    }

    /// Latest profile per point from the final round.
    pub fn final_profiles(&self) -> HashMap<&str, &Profile> {
        self.rounds
            .last()
            .map(|r| r.profiles.iter().map(|p| (p.point_id.as_str(), p)).collect())
            .unwrap_or_default()
    }
}
