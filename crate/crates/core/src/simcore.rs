//! Cosine similarity, exact nearest-neighbor search, threshold
//! classification and threshold calibration from expert pair labels.
//!
//! All arithmetic is `f64`. Stored vectors are unit-norm, so a query score is
//! the dot product of the normalized query with each row. Scores are clamped
//! to `[-1, 1]`. Every ordering breaks ties by ascending point id.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::provider::{EmbeddingVector, NORM_TOLERANCE, ZERO_NORM};

/// Rows scored per block during a scan.
const SCAN_BLOCK: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dimension mismatch: got {got}, want {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("zero vector")]
    ZeroVector,
    #[error("duplicate point `{0}`")]
    DuplicatePoint(String),
    #[error("vector for `{0}` is not unit-norm")]
    NotNormalized(String),
    #[error("no vectors given")]
    EmptyInput,
    #[error("index is empty")]
    EmptyIndex,
    #[error("unknown point `{0}`")]
    UnknownId(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("at least two ids are required")]
    TooFewIds,
    #[error("no {0} labels to calibrate against")]
    InsufficientLabels(Similarity),
    #[error("threshold {0} outside [-1, 1]")]
    InvalidThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Similarity {
    Similar,
    NotSimilar,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Similarity::Similar => f.write_str("Similar"),
            Similarity::NotSimilar => f.write_str("NotSimilar"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub a: String,
    pub b: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdProvenance {
    ExpertSet,
    Calibrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    /// Youden's J at the selected threshold.
    pub j: f64,
    pub positives: usize,
    pub negatives: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub provenance: ThresholdProvenance,
    pub calibration_stats: Option<CalibrationStats>,
}

impl Threshold {
    pub fn expert(tau: f64) -> Result<Self, SimError> {
        if !(-1.0..=1.0).contains(&tau) {
            return Err(SimError::InvalidThreshold(tau));
        }
        Ok(Self {
            tau,
            provenance: ThresholdProvenance::ExpertSet,
            calibration_stats: None,
        })
    }
}

/// An expert judgment on an unordered pair of points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLabel {
    pub a: String,
    pub b: String,
    pub label: Similarity,
    pub labeler: String,
}

impl PairLabel {
    /// True when both labels concern the same unordered pair from the same labeler.
    pub fn same_slot(&self, other: &PairLabel) -> bool {
        self.labeler == other.labeler
            && ((self.a == other.a && self.b == other.b) || (self.a == other.b && self.b == other.a))
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(x, y)| x * y).sum()
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, SimError> {
    if u.len() != v.len() {
        return Err(SimError::DimMismatch {
            got: v.len(),
            want: u.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if !(nu >= ZERO_NORM) || !(nv >= ZERO_NORM) {
        return Err(SimError::ZeroVector);
    }
    Ok(clamp_unit(dot(u, v) / (nu * nv)))
}

pub fn classify(score: f64, threshold: &Threshold) -> Similarity {
    if score >= threshold.tau {
        Similarity::Similar
    } else {
        Similarity::NotSimilar
    }
}

/// Frozen flat index of unit vectors in contiguous row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    rows: Vec<f64>,
    positions: HashMap<String, usize>,
}

pub fn build_index(vectors: &[EmbeddingVector]) -> Result<VectorIndex, SimError> {
    let first = vectors.first().ok_or(SimError::EmptyInput)?;
    let dim = first.values.len();
    let mut ids = Vec::with_capacity(vectors.len());
    let mut rows = Vec::with_capacity(vectors.len() * dim);
    let mut positions = HashMap::with_capacity(vectors.len());
    for v in vectors {
        if v.values.len() != dim {
            return Err(SimError::DimMismatch {
                got: v.values.len(),
                want: dim,
            });
        }
        if (dot(&v.values, &v.values).sqrt() - 1.0).abs() > NORM_TOLERANCE {
            return Err(SimError::NotNormalized(v.point_id.clone()));
        }
        if positions.insert(v.point_id.clone(), ids.len()).is_some() {
            return Err(SimError::DuplicatePoint(v.point_id.clone()));
        }
        ids.push(v.point_id.clone());
        rows.extend_from_slice(&v.values);
    }
    Ok(VectorIndex {
        dim,
        ids,
        rows,
        positions,
    })
}

/// Descending score, then ascending id.
fn rank_order(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl VectorIndex {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.positions
            .get(id)
            .map(|&i| &self.rows[i * self.dim..(i + 1) * self.dim])
    }

    /// Exact top-`k` neighbors of `query` by cosine. When `exclude` names a
    /// stored point it is left out of the result.
    pub fn knn(&self, query: &[f64], k: usize, exclude: Option<&str>) -> Result<Vec<SimilarityScore>, SimError> {
        knn_query(self, query, k, exclude)
    }
}

pub fn knn_query(
    index: &VectorIndex,
    query: &[f64],
    k: usize,
    exclude: Option<&str>,
) -> Result<Vec<SimilarityScore>, SimError> {
    if k == 0 {
        return Err(SimError::InvalidK);
    }
    if index.is_empty() {
        return Err(SimError::EmptyIndex);
    }
    if query.len() != index.dim {
        return Err(SimError::DimMismatch {
            got: query.len(),
            want: index.dim,
        });
    }
    let norm = dot(query, query).sqrt();
    if !(norm >= ZERO_NORM) {
        return Err(SimError::ZeroVector);
    }
    let q: Vec<f64> = query.iter().map(|x| x / norm).collect();
    let skip = exclude.and_then(|id| index.positions.get(id).copied());

    let dim = index.dim;
    let mut scored: Vec<(f64, &str)> = Vec::with_capacity(index.len());
    for (block_no, block) in index.rows.chunks(SCAN_BLOCK * dim).enumerate() {
        let base = block_no * SCAN_BLOCK;
        for (offset, row) in block.chunks_exact(dim).enumerate() {
            let i = base + offset;
            if Some(i) == skip {
                continue;
            }
            scored.push((clamp_unit(dot(&q, row)), index.ids[i].as_str()));
        }
    }

    let take = k.min(scored.len());
    if take == 0 {
        return Ok(Vec::new());
    }
    if take < scored.len() {
        scored.select_nth_unstable_by(take - 1, rank_order);
        scored.truncate(take);
    }
    scored.sort_unstable_by(rank_order);

    let query_id = exclude.unwrap_or_default();
    Ok(scored
        .into_iter()
        .map(|(score, id)| SimilarityScore {
            a: query_id.to_owned(),
            b: id.to_owned(),
            score,
        })
        .collect())
}

pub fn pairwise_scores(index: &VectorIndex, ids: &[String]) -> Result<Vec<SimilarityScore>, SimError> {
    let unique: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    if unique.len() < 2 {
        return Err(SimError::TooFewIds);
    }
    let rows: Vec<(&str, &[f64])> = unique
        .iter()
        .map(|id| {
            index
                .vector(id)
                .map(|v| (*id, v))
                .ok_or_else(|| SimError::UnknownId((*id).to_owned()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (i, (a, u)) in rows.iter().enumerate() {
        for (b, v) in &rows[i + 1..] {
            out.push(SimilarityScore {
                a: (*a).to_owned(),
                b: (*b).to_owned(),
                score: clamp_unit(dot(u, v)),
            });
        }
    }
    Ok(out)
}

/// Candidate thresholds for a set of scores: -1, 1, and the midpoint of every
/// pair of adjacent distinct scores.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = vec![-1.0];
    out.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    out.push(1.0);
    out
}

/// Picks the candidate maximizing Youden's J (TPR - FPR) under the inclusive
/// `score >= tau` rule; ties go to the largest tau.
pub fn calibrate_scores(labelled: &[(f64, Similarity)]) -> Result<Threshold, SimError> {
    let positives = labelled.iter().filter(|(_, l)| *l == Similarity::Similar).count();
    let negatives = labelled.len() - positives;
    if positives == 0 {
        return Err(SimError::InsufficientLabels(Similarity::Similar));
    }
    if negatives == 0 {
        return Err(SimError::InsufficientLabels(Similarity::NotSimilar));
    }
    let scores: Vec<f64> = labelled.iter().map(|(s, _)| *s).collect();

    // J * P * N = TP * N - FP * P, compared exactly in integers.
    let (p, n) = (positives as i64, negatives as i64);
    let mut best: Option<(i64, f64, usize, usize)> = None;
    for tau in candidate_thresholds(&scores) {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (s, l) in labelled {
            if *s >= tau {
                match l {
                    Similarity::Similar => tp += 1,
                    Similarity::NotSimilar => fp += 1,
                }
            }
        }
        let scaled = tp as i64 * n - fp as i64 * p;
        let better = match best {
            None => true,
            Some((bj, btau, ..)) => scaled > bj || (scaled == bj && tau > btau),
        };
        if better {
            best = Some((scaled, tau, tp, fp));
        }
    }
    let (_, tau, tp, fp) = best.expect("candidate set is never empty");
    Ok(Threshold {
        tau,
        provenance: ThresholdProvenance::Calibrated,
        calibration_stats: Some(CalibrationStats {
            j: tp as f64 / positives as f64 - fp as f64 / negatives as f64,
            positives,
            negatives,
            true_positives: tp,
            false_positives: fp,
        }),
    })
}

pub fn calibrate_threshold(labels: &[PairLabel], index: &VectorIndex) -> Result<Threshold, SimError> {
    let mut labelled = Vec::with_capacity(labels.len());
    for l in labels {
        let u = index.vector(&l.a).ok_or_else(|| SimError::UnknownId(l.a.clone()))?;
        let v = index.vector(&l.b).ok_or_else(|| SimError::UnknownId(l.b.clone()))?;
        labelled.push((clamp_unit(dot(u, v)), l.label));
    }
    calibrate_scores(&labelled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(id: &str, v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(id, v.to_vec()).unwrap()
    }

    fn basis() -> VectorIndex {
        build_index(&[
            unit("p1", &[1.0, 0.0, 0.0]),
            unit("p2", &[0.0, 1.0, 0.0]),
            unit("p3", &[0.0, 0.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        // 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        let got = cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.974631846).abs() < 1e-9);
        assert_eq!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(SimError::DimMismatch { got: 2, want: 1 })
        );
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(SimError::ZeroVector));
    }

    #[test]
    fn build_index_rejects_bad_input() {
        assert_eq!(build_index(&[]), Err(SimError::EmptyInput));
        assert_eq!(
            build_index(&[unit("a", &[1.0, 0.0]), unit("a", &[0.0, 1.0])]),
            Err(SimError::DuplicatePoint("a".into()))
        );
        assert!(matches!(
            build_index(&[unit("a", &[1.0, 0.0]), unit("b", &[1.0, 0.0, 0.0])]),
            Err(SimError::DimMismatch { .. })
        ));
        let raw = EmbeddingVector {
            point_id: "r".into(),
            dim: 2,
            values: vec![1.0, 1.0],
            normalized: false,
        };
        assert_eq!(build_index(&[raw]), Err(SimError::NotNormalized("r".into())));
        assert_eq!(basis().len(), 3);
    }

    #[test]
    fn knn_examples() {
        let idx = basis();
        let top = knn_query(&idx, &[1.0, 0.0, 0.0], 1, None).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].b, "p1");
        assert_eq!(top[0].score, 1.0);

        let all = knn_query(&idx, &[1.0, 0.0, 0.0], 10, None).unwrap();
        let ids: Vec<_> = all.iter().map(|s| s.b.as_str()).collect();
        assert_eq!(ids, ["p1", "p2", "p3"]); // p2/p3 tie at 0 -> ascending id

        let excl = knn_query(&idx, &[1.0, 0.0, 0.0], 10, Some("p1")).unwrap();
        assert_eq!(excl.len(), 2);
        assert!(excl.iter().all(|s| s.b != "p1" && s.a == "p1"));

        assert_eq!(knn_query(&idx, &[1.0, 0.0, 0.0], 0, None), Err(SimError::InvalidK));
        assert_eq!(knn_query(&idx, &[0.0; 3], 1, None), Err(SimError::ZeroVector));
        assert!(matches!(knn_query(&idx, &[1.0], 1, None), Err(SimError::DimMismatch { .. })));
    }

    #[test]
    fn pairwise_examples() {
        let idx = basis();
        let one = pairwise_scores(&idx, &["p2".into(), "p1".into()]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].a.as_str(), one[0].b.as_str()), ("p1", "p2"));

        let three = pairwise_scores(&idx, &["p3".into(), "p1".into(), "p2".into()]).unwrap();
        let pairs: Vec<_> = three.iter().map(|s| (s.a.as_str(), s.b.as_str())).collect();
        assert_eq!(pairs, [("p1", "p2"), ("p1", "p3"), ("p2", "p3")]);

        assert_eq!(
            pairwise_scores(&idx, &["p1".into(), "zz".into()]),
            Err(SimError::UnknownId("zz".into()))
        );
        assert_eq!(pairwise_scores(&idx, &["p1".into()]), Err(SimError::TooFewIds));
    }

    #[test]
    fn classify_is_inclusive() {
        let t = Threshold::expert(0.8).unwrap();
        assert_eq!(classify(0.9, &t), Similarity::Similar);
        assert_eq!(classify(0.8, &t), Similarity::Similar);
        assert_eq!(classify(-0.2, &Threshold::expert(0.0).unwrap()), Similarity::NotSimilar);
        assert!(Threshold::expert(1.5).is_err());
    }

    #[test]
    fn calibration_separable_case() {
        use Similarity::*;
        let t = calibrate_scores(&[(0.9, Similar), (0.8, Similar), (0.2, NotSimilar), (0.1, NotSimilar)]).unwrap();
        assert_eq!(t.tau, 0.5);
        assert_eq!(t.provenance, ThresholdProvenance::Calibrated);
        let stats = t.calibration_stats.unwrap();
        assert_eq!(stats.j, 1.0);
        assert_eq!((stats.positives, stats.negatives), (2, 2));
    }

    #[test]
    fn calibration_tie_picks_largest_tau() {
        use Similarity::*;
        let t = calibrate_scores(&[(0.7, Similar), (0.7, NotSimilar)]).unwrap();
        assert_eq!(candidate_thresholds(&[0.7, 0.7]), vec![-1.0, 1.0]);
        assert_eq!(t.tau, 1.0);
        assert_eq!(t.calibration_stats.unwrap().j, 0.0);
    }

    #[test]
    fn calibration_needs_both_classes() {
        use Similarity::*;
        assert_eq!(
            calibrate_scores(&[(0.9, Similar), (0.3, Similar)]),
            Err(SimError::InsufficientLabels(NotSimilar))
        );
        assert_eq!(
            calibrate_scores(&[(0.9, NotSimilar)]),
            Err(SimError::InsufficientLabels(Similar))
        );
    }

    #[test]
    fn calibration_over_index() {
        let idx = build_index(&[
            unit("a", &[1.0, 0.0]),
            unit("b", &[0.9, (1.0f64 - 0.81).sqrt()]),
            unit("c", &[0.2, (1.0f64 - 0.04).sqrt()]),
        ])
        .unwrap();
        let label = |a: &str, b: &str, l| PairLabel {
            a: a.into(),
            b: b.into(),
            label: l,
            labeler: "x".into(),
        };
        let t = calibrate_threshold(
            &[label("a", "b", Similarity::Similar), label("a", "c", Similarity::NotSimilar)],
            &idx,
        )
        .unwrap();
        assert!((t.tau - 0.55).abs() < 1e-9);
        assert_eq!(
            calibrate_threshold(&[label("a", "q", Similarity::Similar)], &idx),
            Err(SimError::UnknownId("q".into()))
        );
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric_and_bounded(
            pair in (2usize..32).prop_flat_map(|d| (
                proptest::collection::vec(-10.0f64..10.0, d),
                proptest::collection::vec(-10.0f64..10.0, d),
            ))
        ) {
            let (u, v) = pair;
            if let (Ok(a), Ok(b)) = (cosine(&u, &v), cosine(&v, &u)) {
                prop_assert_eq!(a, b);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn classify_is_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0, tau in -1.0f64..=1.0) {
            let t = Threshold::expert(tau).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if classify(lo, &t) == Similarity::Similar {
                prop_assert_eq!(classify(hi, &t), Similarity::Similar);
            }
        }

        #[test]
        fn self_similarity_is_one(v in proptest::collection::vec(-5.0f64..5.0, 8..64)) {
            if let Ok(e) = EmbeddingVector::normalized("s", v) {
                let c = cosine(&e.values, &e.values).unwrap();
                prop_assert!((c - 1.0).abs() < 1e-9);
            }
        }
    }
}
