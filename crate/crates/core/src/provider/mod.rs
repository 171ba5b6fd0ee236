//! Summarizer / embedder backends.
//!
//! Three interchangeable implementations sit behind [`Provider`]:
//!
//! * [`StubProvider`]: deterministic token-frequency tags and signed
//!   character-3-gram hashing vectors. No I/O.
//! * [`ReplayProvider`]: answers from a line-delimited fixture file keyed by
//!   [`fixture_key`]. A missing key is an error, never a fallback.
//! * `LiveProvider` (feature `live`): an HTTP chat-completions / embeddings
//!   client with bounded retries. Optionally records every exchange into a
//!   fixture file that [`ReplayProvider`] can later serve.

mod replay;
mod stub;
#[cfg(feature = "live")]
mod live;

use std::path::PathBuf;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DataPoint;
use crate::prompting::RenderedPrompt;

pub use replay::{fixture_key, FixtureRecord, ReplayProvider};
pub use stub::{stub_embed, stub_summarize, StubProvider};
#[cfg(feature = "live")]
pub use live::{LiveProvider, RecordingProvider};

/// Norm below which a vector counts as zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_EMBED_DIM: usize = 256;
pub const MIN_STUB_DIM: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("expected {want} tags, got {got}")]
    TagCountMismatch { got: usize, want: usize },
    #[error("no fixture recorded for key {0}")]
    FixtureMiss(String),
    #[error("provider timed out")]
    Timeout,
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: got {got}, want {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("only {distinct} distinct tokens, {want} tags requested")]
    NotEnoughTokens { distinct: usize, want: usize },
    #[error("empty input text")]
    EmptyText,
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
    #[error("fixture file error: {0}")]
    Fixture(String),
}

impl ProviderError {
    /// Transport-level failures worth another attempt.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::ProviderUnreachable(_) | ProviderError::Timeout => true,
            ProviderError::ProviderError { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// The tag summary one provider produced for one point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Profile {
    pub point_id: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub free_text: String,
    pub prompt_version: u32,
    pub provider_id: String,
    pub created_at: DateTime<Utc>,
}

// created_at is provenance only; it never takes part in equality.
impl PartialEq for Profile {
    fn eq(&self, other: &Self) -> bool {
        self.point_id == other.point_id
            && self.tags == other.tags
            && self.free_text == other.free_text
            && self.prompt_version == other.prompt_version
            && self.provider_id == other.provider_id
    }
}

impl Profile {
    /// Text handed to the embedder: tags joined by single spaces, then a
    /// newline and the free text when there is any.
    pub fn embedding_text(&self) -> String {
        embedding_text(&self.tags, &self.free_text)
    }

    /// Tags rendered as `#tag #tag #tag`.
    pub fn hashtag_line(&self) -> String {
        self.tags
            .iter()
            .map(|t| format!("#{t}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn embedding_text(tags: &[String], free_text: &str) -> String {
    let mut text = tags.join(" ");
    if !free_text.is_empty() {
        text.push('\n');
        text.push_str(free_text);
    }
    text
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub point_id: String,
    pub dim: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Builds a unit-norm vector from raw values.
    pub fn normalized(point_id: impl Into<String>, values: Vec<f64>) -> Result<Self, ProviderError> {
        let values = l2_normalize(values)?;
        Ok(Self {
            point_id: point_id.into(),
            dim: values.len(),
            values,
            normalized: true,
        })
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_normalize(mut values: Vec<f64>) -> Result<Vec<f64>, ProviderError> {
    let norm = l2_norm(&values);
    if !(norm >= ZERO_NORM) {
        return Err(ProviderError::ZeroVector);
    }
    for v in &mut values {
        *v /= norm;
    }
    Ok(values)
}

/// Element-wise mean over per-token vectors.
pub fn mean_pool(tokens: &[Vec<f64>]) -> Result<Vec<f64>, ProviderError> {
    let first = tokens.first().ok_or(ProviderError::ZeroVector)?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for t in tokens {
        if t.len() != dim {
            return Err(ProviderError::DimMismatch {
                got: t.len(),
                want: dim,
            });
        }
        for (a, x) in acc.iter_mut().zip(t) {
            *a += x;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Splits a model reply into tags. Separators are tried in order: `#`, then
/// commas, then newlines. With `#`, anything before the first marker is
/// treated as preamble and dropped. Pieces are trimmed of whitespace and
/// trailing punctuation; empty pieces are discarded. Never pads.
pub fn parse_tags(reply: &str, want: usize) -> Result<Vec<String>, ProviderError> {
    let pieces: Vec<&str> = if reply.contains('#') {
        reply.split('#').skip(1).collect()
    } else if reply.contains(',') {
        reply.split(',').collect()
    } else {
        reply.lines().collect()
    };
    let tags: Vec<String> = pieces
        .into_iter()
        .map(|p| p.trim_matches(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == '.'))
        .filter(|p| !p.is_empty())
        .map(str::to_owned)
        .collect();
    if tags.len() != want {
        return Err(ProviderError::TagCountMismatch {
            got: tags.len(),
            want,
        });
    }
    Ok(tags)
}

pub trait Provider: Send + Sync {
    fn provider_id(&self) -> String;

    fn summarize(&self, point: &DataPoint, prompt: &RenderedPrompt) -> Result<Profile, ProviderError>;

    fn embed(&self, profile: &Profile) -> Result<EmbeddingVector, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Live,
    Stub,
    Replay,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(ProviderKind::Live),
            "stub" => Ok(ProviderKind::Stub),
            "replay" => Ok(ProviderKind::Replay),
            other => Err(format!("unknown provider kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Base URL (Live).
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key (Live).
    pub api_key_env: String,
    /// Replay source, or recording target when set on a Live config.
    pub fixture_path: Option<PathBuf>,
    /// Stub vector dimension.
    pub embed_dim: usize,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Upper bound on concurrent Live requests.
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::stub(DEFAULT_EMBED_DIM)
    }
}

impl ProviderConfig {
    pub fn stub(embed_dim: usize) -> Self {
        Self {
            kind: ProviderKind::Stub,
            endpoint: None,
            model: String::new(),
            api_key_env: "SIM_API_KEY".into(),
            fixture_path: None,
            embed_dim,
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_millis(250),
            max_in_flight: 4,
        }
    }

    pub fn replay(fixture_path: impl Into<PathBuf>) -> Self {
        Self {
            kind: ProviderKind::Replay,
            fixture_path: Some(fixture_path.into()),
            ..Self::stub(DEFAULT_EMBED_DIM)
        }
    }

    pub fn live(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Live,
            endpoint: Some(endpoint.into()),
            model: model.into(),
            ..Self::stub(DEFAULT_EMBED_DIM)
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        match self.kind {
            ProviderKind::Live => {
                if self.endpoint.as_deref().is_none_or(str::is_empty) {
                    return Err(ProviderError::InvalidConfig("live provider needs an endpoint".into()));
                }
                if self.model.is_empty() {
                    return Err(ProviderError::InvalidConfig("live provider needs a model".into()));
                }
            }
            ProviderKind::Replay => match &self.fixture_path {
                Some(p) if p.is_file() => {}
                Some(p) => {
                    return Err(ProviderError::InvalidConfig(format!(
                        "fixture file {} does not exist",
                        p.display()
                    )))
                }
                None => {
                    return Err(ProviderError::InvalidConfig("replay provider needs a fixture path".into()))
                }
            },
            ProviderKind::Stub => {
                if self.embed_dim < MIN_STUB_DIM {
                    return Err(ProviderError::InvalidConfig(format!(
                        "stub embed_dim must be at least {MIN_STUB_DIM}, got {}",
                        self.embed_dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Builds the backend a config describes.
pub fn connect(cfg: &ProviderConfig) -> Result<Box<dyn Provider>, ProviderError> {
    cfg.validate()?;
    match cfg.kind {
        ProviderKind::Stub => Ok(Box::new(StubProvider::new(cfg.embed_dim)?)),
        ProviderKind::Replay => {
            let path = cfg.fixture_path.as_ref().expect("validated");
            Ok(Box::new(ReplayProvider::open(path)?))
        }
        #[cfg(feature = "live")]
        ProviderKind::Live => {
            let live = LiveProvider::new(cfg)?;
            match &cfg.fixture_path {
                Some(path) => Ok(Box::new(RecordingProvider::new(live, path)?)),
                None => Ok(Box::new(live)),
            }
        }
        #[cfg(not(feature = "live"))]
        ProviderKind::Live => Err(ProviderError::InvalidConfig(
            "built without the `live` feature".into(),
        )),
    }
}

/// One-shot summarize through a freshly connected backend.
pub fn summarize(
    point: &DataPoint,
    prompt: &RenderedPrompt,
    cfg: &ProviderConfig,
) -> Result<Profile, ProviderError> {
    connect(cfg)?.summarize(point, prompt)
}

/// One-shot embed through a freshly connected backend.
pub fn embed(profile: &Profile, cfg: &ProviderConfig) -> Result<EmbeddingVector, ProviderError> {
    connect(cfg)?.embed(profile)
}
