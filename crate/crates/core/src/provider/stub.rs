use std::collections::HashMap;

use chrono::Utc;
use sha2::{Digest, Sha256};

use super::{l2_normalize, EmbeddingVector, Profile, Provider, ProviderError, MIN_STUB_DIM};
use crate::ingest::DataPoint;
use crate::prompting::RenderedPrompt;

/// Top `tag_count` lowercase alphanumeric tokens of `payload`, ranked by
/// frequency (descending) then lexicographically (ascending).
pub fn stub_summarize(payload: &str, tag_count: usize) -> Result<Vec<String>, ProviderError> {
    if payload.trim().is_empty() {
        return Err(ProviderError::EmptyText);
    }
    let lowered = payload.to_lowercase();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for token in lowered.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        *counts.entry(token).or_default() += 1;
    }
    if counts.len() < tag_count {
        return Err(ProviderError::NotEnoughTokens {
            distinct: counts.len(),
            want: tag_count,
        });
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked
        .into_iter()
        .take(tag_count)
        .map(|(t, _)| t.to_owned())
        .collect())
}

/// Signed character-3-gram feature hashing.
///
/// The lowercased text is padded with one `_` on each side and every 3-char
/// window is hashed with SHA-256. The first four digest bytes (big-endian)
/// modulo `dim` pick the bucket; digest byte 4 picks the sign (even: +1,
/// odd: -1). The accumulated vector is L2-normalized.
pub fn stub_embed(text: &str, dim: usize) -> Result<Vec<f64>, ProviderError> {
    if text.is_empty() {
        return Err(ProviderError::EmptyText);
    }
    if dim < MIN_STUB_DIM {
        return Err(ProviderError::InvalidConfig(format!(
            "stub dim must be at least {MIN_STUB_DIM}"
        )));
    }
    let mut padded: Vec<char> = Vec::with_capacity(text.len() + 2);
    padded.push('_');
    padded.extend(text.chars().flat_map(char::to_lowercase));
    padded.push('_');

    let mut acc = vec![0.0f64; dim];
    let mut gram = String::with_capacity(12);
    for window in padded.windows(3) {
        gram.clear();
        gram.extend(window);
        let digest = Sha256::digest(gram.as_bytes());
        let bucket = u32::from_be_bytes([digest[0], digest[1], digest[2], digest[3]]) as usize % dim;
        let sign = if digest[4] % 2 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    l2_normalize(acc)
}

#[derive(Debug, Clone)]
pub struct StubProvider {
    dim: usize,
}

impl StubProvider {
    pub fn new(dim: usize) -> Result<Self, ProviderError> {
        if dim < MIN_STUB_DIM {
            return Err(ProviderError::InvalidConfig(format!(
                "stub dim must be at least {MIN_STUB_DIM}"
            )));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Provider for StubProvider {
    fn provider_id(&self) -> String {
        format!("stub:dim={}", self.dim)
    }

    fn summarize(&self, point: &DataPoint, prompt: &RenderedPrompt) -> Result<Profile, ProviderError> {
        let tags = stub_summarize(&point.payload, prompt.tag_count)?;
        Ok(Profile {
            point_id: point.id.clone(),
            tags,
            free_text: String::new(),
            prompt_version: prompt.interest_version,
            provider_id: self.provider_id(),
            created_at: Utc::now(),
        })
    }

    fn embed(&self, profile: &Profile) -> Result<EmbeddingVector, ProviderError> {
        let values = stub_embed(&profile.embedding_text(), self.dim)?;
        Ok(EmbeddingVector {
            point_id: profile.point_id.clone(),
            dim: self.dim,
            values,
            normalized: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn summarize_ranks_by_frequency_then_name() {
        assert_eq!(
            stub_summarize("bathroom sink toilet bathroom", 3).unwrap(),
            vec!["bathroom", "sink", "toilet"]
        );
        assert_eq!(stub_summarize("x x y y z", 2).unwrap(), vec!["x", "y"]);
        assert_eq!(
            stub_summarize("a b", 3),
            Err(ProviderError::NotEnoughTokens { distinct: 2, want: 3 })
        );
        assert_eq!(
            stub_summarize("Path=Scenes/Bath1.JPG; scene=bathroom", 2).unwrap(),
            vec!["bath1", "bathroom"]
        );
    }

    // Golden vector computed outside the crate: grams "_ab", "abc", "bc_" hash
    // to buckets 1, 7, 4, all with odd sign bytes.
    #[test]
    fn embed_matches_golden_vector() {
        let v = stub_embed("abc", 8).unwrap();
        let s = -0.5773502691896258;
        assert_eq!(v, vec![0.0, s, 0.0, 0.0, s, 0.0, 0.0, s]);
    }

    #[test]
    fn embed_is_deterministic_and_unit_norm() {
        let a = stub_embed("abcabc", 64).unwrap();
        let b = stub_embed("abcabc", 64).unwrap();
        assert_eq!(a, b);
        assert!((dot(&a, &a) - 1.0).abs() < 1e-9);
        assert_eq!(stub_embed("", 64), Err(ProviderError::EmptyText));
        assert!(stub_embed("abc", 4).is_err());
    }

    #[test]
    fn embed_lowercases() {
        assert_eq!(stub_embed("ABC", 16).unwrap(), stub_embed("abc", 16).unwrap());
    }

    #[test]
    fn provider_stamps_version_and_id() {
        let p = StubProvider::new(16).unwrap();
        let point = DataPoint {
            id: "p1".into(),
            modality: crate::ingest::Modality::Tabular,
            payload: "bathroom sink toilet bathroom".into(),
            source_ref: crate::ingest::SourceRef {
                origin: "t".into(),
                index: 0,
            },
        };
        let prompt = RenderedPrompt {
            text: "x".into(),
            interest_version: 4,
            tag_count: 3,
        };
        let prof = p.summarize(&point, &prompt).unwrap();
        assert_eq!(prof.prompt_version, 4);
        assert_eq!(prof.provider_id, "stub:dim=16");
        let v = p.embed(&prof).unwrap();
        assert_eq!(v.dim, 16);
        assert_eq!(v.values, p.embed(&prof).unwrap().values);
    }
}
