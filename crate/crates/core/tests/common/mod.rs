//! Independent reference implementations used as test oracles. These are
//! written without reference to the library code paths they check.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use simhitl_core::ingest::{synth_aml, SynthOutput, SynthSpec};
use simhitl_core::simcore::Similarity;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn seed7() -> SynthOutput {
    synth_aml(&SynthSpec {
        seed: 7,
        n_customers: 100,
        n_clusters: 4,
        launder_fraction: 0.1,
    })
    .unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return v;
        }
    }
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = random_vec(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Plain index-loop cosine.
pub fn cosine_oracle(u: &[f64], v: &[f64]) -> f64 {
    let mut d = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for i in 0..u.len() {
        d += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    d / (uu * vv).sqrt()
}

/// Scores every row, sorts the whole list by (score desc, id asc), takes `k`.
pub fn knn_oracle(rows: &[(String, Vec<f64>)], q: &[f64], k: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, v)| (id.clone(), cosine_oracle(q, v)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Youden's J of `score >= tau` as TPR - FPR.
pub fn youden(labelled: &[(f64, Similarity)], tau: f64) -> f64 {
    let p = labelled.iter().filter(|l| l.1 == Similarity::Similar).count() as f64;
    let n = labelled.len() as f64 - p;
    let tp = labelled.iter().filter(|l| l.1 == Similarity::Similar && l.0 >= tau).count() as f64;
    let fp = labelled.iter().filter(|l| l.1 == Similarity::NotSimilar && l.0 >= tau).count() as f64;
    tp / p - fp / n
}

/// -1, 1 and midpoints between adjacent distinct scores.
pub fn candidates_oracle(scores: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = scores.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut c = vec![-1.0, 1.0];
    for i in 1..s.len() {
        c.push((s[i - 1] + s[i]) / 2.0);
    }
    c
}

/// Best J over the candidate set and the largest tau achieving it.
pub fn calibration_oracle(labelled: &[(f64, Similarity)]) -> (f64, f64) {
    let scores: Vec<f64> = labelled.iter().map(|l| l.0).collect();
    let cands = candidates_oracle(&scores);
    let best = cands.iter().map(|&t| youden(labelled, t)).fold(f64::MIN, f64::max);
    let tau = cands
        .iter()
        .copied()
        .filter(|&t| (youden(labelled, t) - best).abs() < 1e-12)
        .fold(f64::MIN, f64::max);
    (best, tau)
}

/// Mean fraction of same-cluster ids among each point's top 5 neighbors,
/// computed by full scan.
pub fn precision_at_5_oracle(ids: &[String], vecs: &[Vec<f64>], cluster: &[usize]) -> f64 {
    let rows: Vec<(String, Vec<f64>)> = ids.iter().cloned().zip(vecs.iter().cloned()).collect();
    let mut total = 0.0;
    for i in 0..ids.len() {
        let top = knn_oracle(&rows, &vecs[i], 5, Some(&ids[i]));
        let hits = top
            .iter()
            .filter(|(id, _)| cluster[ids.iter().position(|x| x == id).unwrap()] == cluster[i])
            .count();
        total += hits as f64 / 5.0;
    }
    total / ids.len() as f64
}
