//! nDCG@k with exponential gain `2^rel - 1` and `log2(rank + 1)` discount.

use serde::Serialize;

use crate::corpus_io::{Qrels, RankedList};

fn gain(rel: u32) -> f64 {
    2f64.powi(rel as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    (rank as f64 + 1.0).log2()
}

/// nDCG@k of one ranking. Unjudged documents have relevance 0; a query with
/// no relevant judgments scores 0.
pub fn ndcg_at_k(ranked: &RankedList, qrels: &Qrels, k: usize) -> f64 {
    let Some(judged) = qrels.judgments(&ranked.query_id) else {
        return 0.0;
    };
    let dcg: f64 = ranked
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().filter(|r| *r > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| gain(*r) / discount(i + 1))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NdcgReport {
    pub k: usize,
    pub mean: f64,
    /// One row per judged query, sorted by query id.
    pub per_query: Vec<(String, f64)>,
}

/// Unweighted mean over every query in `qrels`. Judged queries missing from
/// `runs` score 0; run queries without judgments are ignored.
pub fn mean_ndcg(runs: &[RankedList], qrels: &Qrels, k: usize) -> NdcgReport {
    let by_query: std::collections::HashMap<&str, &RankedList> =
        runs.iter().map(|l| (l.query_id.as_str(), l)).collect();
    let mut per_query: Vec<(String, f64)> = qrels
        .query_ids()
        .map(|q| {
            let score = by_query.get(q).map_or(0.0, |l| ndcg_at_k(l, qrels, k));
            (q.to_string(), score)
        })
        .collect();
    per_query.sort_by(|a, b| a.0.cmp(&b.0));
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(|(_, s)| s).sum::<f64>() / per_query.len() as f64
    };
    NdcgReport { k, mean, per_query }
}
