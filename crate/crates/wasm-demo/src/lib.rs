//! Browser demo over `simhitl-core` with the deterministic stub provider:
//! compare two texts, browse nearest neighbors in a synthetic customer
//! corpus, and calibrate a threshold from labels picked on the page.
//!
//! Methods return JSON strings. The `*_json` / plain Rust methods carry the
//! logic and are what the native tests call; the `#[wasm_bindgen]` wrappers
//! only convert errors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use simhitl_core::ingest::{synth_aml, IngestError, SynthSpec, SynthTruth};
use simhitl_core::prompting::DEFAULT_TAG_COUNT;
use simhitl_core::provider::{embedding_text, stub_embed, stub_summarize, EmbeddingVector, ProviderError};
use simhitl_core::simcore::{
    build_index, calibrate_threshold, classify, cosine, knn_query, CalibrationStats, PairLabel, SimError,
    Similarity, Threshold, VectorIndex,
};

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("bad labels: {0}")]
    Labels(#[from] serde_json::Error),
    #[error("unknown point `{0}`")]
    UnknownPoint(String),
}

fn js(e: DemoError) -> JsError {
    JsError::new(&e.to_string())
}

/// Cosine similarity of the stub embeddings of two texts.
pub fn text_similarity(a: &str, b: &str, dim: usize) -> Result<f64, DemoError> {
    Ok(cosine(&stub_embed(a, dim)?, &stub_embed(b, dim)?)?)
}

#[wasm_bindgen(js_name = textSimilarity)]
pub fn text_similarity_js(a: &str, b: &str, dim: usize) -> Result<f64, JsError> {
    text_similarity(a, b, dim).map_err(js)
}

#[derive(Debug, Clone, Serialize)]
pub struct Customer {
    pub id: String,
    pub cluster: usize,
    pub launder: bool,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Neighbor {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub same_cluster: bool,
    /// `null` until a threshold is set.
    pub label: Option<Similarity>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Neighbors {
    pub query: Customer,
    pub neighbors: Vec<Neighbor>,
    /// Neighbors sharing the query's planted cluster, divided by k.
    pub precision: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct LabelInput {
    pub a: String,
    pub b: String,
    pub label: Similarity,
}

/// A generated corpus, tagged and embedded with the stub provider.
#[wasm_bindgen]
pub struct Corpus {
    customers: Vec<Customer>,
    by_id: HashMap<String, usize>,
    index: VectorIndex,
    threshold: Option<Threshold>,
}

impl Corpus {
    pub fn generate(seed: u64, n: usize, clusters: usize, dim: usize) -> Result<Corpus, DemoError> {
        let out = synth_aml(&SynthSpec {
            seed,
            n_customers: n,
            n_clusters: clusters,
            launder_fraction: 0.1,
        })?;
        let mut customers = Vec::with_capacity(n);
        let mut vectors = Vec::with_capacity(n);
        for (point, SynthTruth { id, cluster, launder }) in out.points.iter().zip(out.truth) {
            let tags = stub_summarize(&point.payload, DEFAULT_TAG_COUNT)?;
            let values = stub_embed(&embedding_text(&tags, ""), dim)?;
            vectors.push(EmbeddingVector::normalized(id.clone(), values)?);
            customers.push(Customer { id, cluster, launder, tags });
        }
        let by_id = customers.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        Ok(Corpus {
            customers,
            by_id,
            index: build_index(&vectors)?,
            threshold: None,
        })
    }

    pub fn customer(&self, id: &str) -> Result<&Customer, DemoError> {
        self.by_id
            .get(id)
            .map(|&i| &self.customers[i])
            .ok_or_else(|| DemoError::UnknownPoint(id.to_owned()))
    }

    pub fn neighbors(&self, id: &str, k: usize) -> Result<Neighbors, DemoError> {
        let query = self.customer(id)?.clone();
        let hits = knn_query(&self.index, self.index.vector(id).expect("indexed"), k, Some(id))?;
        let neighbors: Vec<Neighbor> = hits
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let other = &self.customers[self.by_id[&s.b]];
                Neighbor {
                    rank: i + 1,
                    id: s.b,
                    score: s.score,
                    same_cluster: other.cluster == query.cluster,
                    label: self.threshold.as_ref().map(|t| classify(s.score, t)),
                }
            })
            .collect();
        let hits = neighbors.iter().filter(|n| n.same_cluster).count();
        let precision = if neighbors.is_empty() { 0.0 } else { hits as f64 / neighbors.len() as f64 };
        Ok(Neighbors { query, neighbors, precision })
    }

    pub fn set_threshold(&mut self, tau: f64) -> Result<(), DemoError> {
        self.threshold = Some(Threshold::expert(tau)?);
        Ok(())
    }

    pub fn threshold(&self) -> Option<&Threshold> {
        self.threshold.as_ref()
    }

    /// Calibrates from `[{a, b, label}]` and adopts the result.
    pub fn calibrate(&mut self, labels: &[LabelInput]) -> Result<Threshold, DemoError> {
        let labels: Vec<PairLabel> = labels
            .iter()
            .map(|l| PairLabel {
                a: l.a.clone(),
                b: l.b.clone(),
                label: l.label,
                labeler: "demo".into(),
            })
            .collect();
        let t = calibrate_threshold(&labels, &self.index)?;
        self.threshold = Some(t);
        Ok(t)
    }
}

#[derive(Serialize)]
struct ThresholdView<'a> {
    tau: f64,
    stats: Option<&'a CalibrationStats>,
}

#[wasm_bindgen]
impl Corpus {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n: usize, clusters: usize, dim: usize) -> Result<Corpus, JsError> {
        Corpus::generate(seed.into(), n, clusters, dim).map_err(js)
    }

    /// `[{id, cluster, launder, tags}]`
    #[wasm_bindgen(js_name = customers)]
    pub fn customers_json(&self) -> String {
        serde_json::to_string(&self.customers).expect("serializable")
    }

    /// `{query, neighbors: [{rank, id, score, same_cluster, label}], precision}`
    #[wasm_bindgen(js_name = neighbors)]
    pub fn neighbors_json(&self, id: &str, k: usize) -> Result<String, JsError> {
        let n = self.neighbors(id, k).map_err(js)?;
        Ok(serde_json::to_string(&n).expect("serializable"))
    }

    #[wasm_bindgen(js_name = setThreshold)]
    pub fn set_threshold_js(&mut self, tau: f64) -> Result<(), JsError> {
        self.set_threshold(tau).map_err(js)
    }

    /// Takes `[{a, b, label}]` with label `Similar` or `NotSimilar`, returns
    /// `{tau, stats}`.
    #[wasm_bindgen(js_name = calibrate)]
    pub fn calibrate_json(&mut self, labels: &str) -> Result<String, JsError> {
        let labels: Vec<LabelInput> = serde_json::from_str(labels).map_err(|e| js(e.into()))?;
        let t = self.calibrate(&labels).map_err(js)?;
        let view = ThresholdView {
            tau: t.tau,
            stats: t.calibration_stats.as_ref(),
        };
        Ok(serde_json::to_string(&view).expect("serializable"))
    }
}
