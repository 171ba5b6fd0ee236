use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use chrono::Utc;
use serde::Deserialize;
use serde_json::json;

use super::{
    fixture_key, l2_normalize, mean_pool, parse_tags, EmbeddingVector, FixtureRecord, Profile,
    Provider, ProviderConfig, ProviderError,
};
use crate::ingest::DataPoint;
use crate::prompting::RenderedPrompt;

const CHAT_PATH: &str = "/chat/completions";
const EMBED_PATH: &str = "/embeddings";
const BODY_EXCERPT: usize = 200;

/// Counting semaphore bounding outstanding requests.
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completions / embeddings HTTP client.
pub struct LiveProvider {
    agent: ureq::Agent,
    base: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff_base: Duration,
    in_flight: InFlight,
}

#[derive(Deserialize)]
struct ChatReply {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize)]
struct EmbedReply {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: EmbeddingPayload,
}

/// Backends return either one pooled vector or one vector per token.
#[derive(Deserialize)]
#[serde(untagged)]
enum EmbeddingPayload {
    Pooled(Vec<f64>),
    PerToken(Vec<Vec<f64>>),
}

impl LiveProvider {
    pub fn new(cfg: &ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let endpoint = cfg.endpoint.clone().unwrap_or_default();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            base: endpoint.trim_end_matches('/').to_owned(),
            model: cfg.model.clone(),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
            max_retries: cfg.max_retries,
            backoff_base: cfg.backoff_base,
            in_flight: InFlight::new(cfg.max_in_flight),
        })
    }

    fn post_once(&self, path: &str, body: &str) -> Result<String, ProviderError> {
        let _slot = self.in_flight.acquire();
        let mut req = self
            .agent
            .post(format!("{}{}", self.base, path))
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("authorization", format!("Bearer {key}"));
        }
        let resp = req.send(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            let body: String = text.chars().take(BODY_EXCERPT).collect();
            return Err(ProviderError::ProviderError { status, body });
        }
        Ok(text)
    }

    /// Posts with up to `max_retries` retries on transient failures, doubling
    /// the pause each time.
    fn post(&self, path: &str, body: &str) -> Result<String, ProviderError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    std::thread::sleep(self.backoff_base * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Raw reply text for a prompt + payload.
    pub fn complete(&self, prompt: &RenderedPrompt, payload: &str) -> Result<String, ProviderError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": format!("{}\n\n{}", prompt.text, payload)}],
        });
        let text = self.post(CHAT_PATH, &body.to_string())?;
        let reply: ChatReply = serde_json::from_str(&text).map_err(|e| ProviderError::ProviderError {
            status: 200,
            body: format!("unparseable chat reply: {e}"),
        })?;
        reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::ProviderError {
                status: 200,
                body: "chat reply without choices".into(),
            })
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError> {
        let body = json!({"model": self.model, "input": text});
        let raw = self.post(EMBED_PATH, &body.to_string())?;
        let reply: EmbedReply = serde_json::from_str(&raw).map_err(|e| ProviderError::ProviderError {
            status: 200,
            body: format!("unparseable embedding reply: {e}"),
        })?;
        let datum = reply.data.into_iter().next().ok_or_else(|| ProviderError::ProviderError {
            status: 200,
            body: "embedding reply without data".into(),
        })?;
        let values = match datum.embedding {
            EmbeddingPayload::Pooled(v) => v,
            EmbeddingPayload::PerToken(tokens) => mean_pool(&tokens)?,
        };
        l2_normalize(values)
    }
}

fn transport_error(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => ProviderError::ProviderUnreachable(other.to_string()),
    }
}

impl Provider for LiveProvider {
    fn provider_id(&self) -> String {
        format!("live:{}", self.model)
    }

    fn summarize(&self, point: &DataPoint, prompt: &RenderedPrompt) -> Result<Profile, ProviderError> {
        let reply = self.complete(prompt, &point.payload)?;
        let tags = parse_tags(&reply, prompt.tag_count)?;
        Ok(Profile {
            point_id: point.id.clone(),
            tags,
            free_text: reply.trim().to_owned(),
            prompt_version: prompt.interest_version,
            provider_id: self.provider_id(),
            created_at: Utc::now(),
        })
    }

    fn embed(&self, profile: &Profile) -> Result<EmbeddingVector, ProviderError> {
        let values = self.embed_text(&profile.embedding_text())?;
        Ok(EmbeddingVector {
            point_id: profile.point_id.clone(),
            dim: values.len(),
            values,
            normalized: true,
        })
    }
}

/// Wraps a [`LiveProvider`] and appends every completed summarize + embed
/// exchange to a fixture file as one `{key, tags, free_text, values}` line.
pub struct RecordingProvider {
    inner: LiveProvider,
    pending: Mutex<HashMap<String, String>>,
    out: Mutex<File>,
}

impl RecordingProvider {
    pub fn new(inner: LiveProvider, path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            pending: Mutex::new(HashMap::new()),
            out: Mutex::new(out),
        })
    }
}

impl Provider for RecordingProvider {
    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }

    fn summarize(&self, point: &DataPoint, prompt: &RenderedPrompt) -> Result<Profile, ProviderError> {
        let profile = self.inner.summarize(point, prompt)?;
        let key = fixture_key(&prompt.text, &point.payload);
        self.pending
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(profile.embedding_text(), key);
        Ok(profile)
    }

    fn embed(&self, profile: &Profile) -> Result<EmbeddingVector, ProviderError> {
        let vector = self.inner.embed(profile)?;
        let text = profile.embedding_text();
        let key = self
            .pending
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&text);
        if let Some(key) = key {
            let rec = FixtureRecord {
                key,
                tags: profile.tags.clone(),
                free_text: profile.free_text.clone(),
                values: vector.values.clone(),
            };
            let line = serde_json::to_string(&rec).expect("fixture record serializes");
            let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(out, "{line}")
                .and_then(|_| out.flush())
                .map_err(|e| ProviderError::Fixture(e.to_string()))?;
        }
        Ok(vector)
    }
}
