use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{embedding_text, l2_normalize, EmbeddingVector, Profile, Provider, ProviderError};
use crate::ingest::DataPoint;
use crate::prompting::RenderedPrompt;

/// Lowercase hex SHA-256 of `prompt_text`, a NUL byte, then `payload`.
pub fn fixture_key(prompt_text: &str, payload: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt_text.as_bytes());
    h.update([0u8]);
    h.update(payload.as_bytes());
    hex::encode(h.finalize())
}

/// One line of a fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub free_text: String,
    pub values: Vec<f64>,
}

impl FixtureRecord {
    pub fn embedding_text(&self) -> String {
        embedding_text(&self.tags, &self.free_text)
    }
}

/// Serves summaries and vectors recorded in a fixture file. Later lines with
/// the same key replace earlier ones.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    source: String,
    by_key: HashMap<String, FixtureRecord>,
    by_text: HashMap<String, Vec<f64>>,
}

impl ReplayProvider {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Fixture(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(&line).map_err(|e| {
                ProviderError::Fixture(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            records.push(rec);
        }
        Ok(Self::from_records(name, records))
    }

    pub fn from_records(source: impl Into<String>, records: Vec<FixtureRecord>) -> Self {
        let mut by_key = HashMap::new();
        let mut by_text = HashMap::new();
        for rec in records {
            by_text.insert(rec.embedding_text(), rec.values.clone());
            by_key.insert(rec.key.clone(), rec);
        }
        Self {
            source: source.into(),
            by_key,
            by_text,
        }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.by_key.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.by_key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_key.is_empty()
    }

    /// Looks up the recorded response for a prompt/payload pair.
    pub fn lookup(&self, prompt_text: &str, payload: &str) -> Result<&FixtureRecord, ProviderError> {
        let key = fixture_key(prompt_text, payload);
        self.by_key.get(&key).ok_or(ProviderError::FixtureMiss(key))
    }
}

impl Provider for ReplayProvider {
    fn provider_id(&self) -> String {
        format!("replay:{}", self.source)
    }

    fn summarize(&self, point: &DataPoint, prompt: &RenderedPrompt) -> Result<Profile, ProviderError> {
        let rec = self.lookup(&prompt.text, &point.payload)?;
        if rec.tags.len() != prompt.tag_count {
            return Err(ProviderError::TagCountMismatch {
                got: rec.tags.len(),
                want: prompt.tag_count,
            });
        }
        Ok(Profile {
            point_id: point.id.clone(),
            tags: rec.tags.clone(),
            free_text: rec.free_text.clone(),
            prompt_version: prompt.interest_version,
            provider_id: self.provider_id(),
            created_at: Utc::now(),
        })
    }

    fn embed(&self, profile: &Profile) -> Result<EmbeddingVector, ProviderError> {
        let text = profile.embedding_text();
        let values = self
            .by_text
            .get(&text)
            .ok_or_else(|| ProviderError::FixtureMiss(hex::encode(Sha256::digest(text.as_bytes()))))?;
        let values = l2_normalize(values.clone())?;
        Ok(EmbeddingVector {
            point_id: profile.point_id.clone(),
            dim: values.len(),
            values,
            normalized: true,
        })
    }
}
