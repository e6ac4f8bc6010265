//! Binary-relevance ranking metrics with a rank cutoff `k`.
//!
//! * Precision@k = relevant in the top `min(k, len)` divided by `k`.
//! * AP@k = sum of precision@r over relevant ranks `r ≤ k`, divided by
//!   `min(R, k)` where `R` counts relevant documents in the whole pool.
//! * RR@k = `1 / rank` of the first relevant document within `k`.
//! * nDCG@k = DCG@k / IDCG@k with gains in {0, 1} and a `log2(i + 1)`
//!   discount; 0 when the pool holds nothing relevant.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Documents in model order with their binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub ranked: Vec<String>,
    pub relevance: BTreeMap<String, u8>,
}

impl RankedList {
    pub fn new(query_id: &str, ranked: Vec<String>, relevance: BTreeMap<String, u8>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &ranked {
            if !seen.insert(d) {
                return Err(Error::Argument(format!("`{d}` ranked twice")));
            }
            match relevance.get(d) {
                Some(0 | 1) => {}
                Some(l) => return Err(Error::Argument(format!("label {l} for `{d}` is not binary"))),
                None => return Err(Error::Argument(format!("`{d}` has no relevance label"))),
            }
        }
        Ok(Self { query_id: query_id.to_string(), ranked, relevance })
    }

    /// Build from a relevance vector in rank order; doc ids are `d0, d1, …`.
    pub fn from_labels(query_id: &str, labels: &[u8]) -> Self {
        let ranked: Vec<String> = (0..labels.len()).map(|i| format!("d{i}")).collect();
        let relevance = ranked.iter().cloned().zip(labels.iter().copied()).collect();
        Self { query_id: query_id.to_string(), ranked, relevance }
    }

    fn rel(&self, i: usize) -> bool {
        self.relevance.get(&self.ranked[i]).copied().unwrap_or(0) > 0
    }

    pub fn total_relevant(&self) -> usize {
        self.relevance.values().filter(|&&l| l > 0).count()
    }
}

fn check_k(k: usize) {
    assert!(k >= 1, "metric cutoff k must be at least 1");
}

pub fn precision_at_k(list: &RankedList, k: usize) -> f64 {
    check_k(k);
    let hits = (0..k.min(list.ranked.len())).filter(|&i| list.rel(i)).count();
    hits as f64 / k as f64
}

pub fn average_precision_at_k(list: &RankedList, k: usize) -> f64 {
    check_k(k);
    let r = list.total_relevant();
    if r == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for i in 0..k.min(list.ranked.len()) {
        if list.rel(i) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / r.min(k) as f64
}

pub fn reciprocal_rank_at_k(list: &RankedList, k: usize) -> f64 {
    check_k(k);
    (0..k.min(list.ranked.len())).find(|&i| list.rel(i)).map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

pub fn ndcg_at_k(list: &RankedList, k: usize) -> f64 {
    check_k(k);
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = (0..k.min(list.ranked.len())).filter(|&i| list.rel(i)).map(discount).sum();
    let ideal_hits = list.total_relevant().min(k);
    let idcg: f64 = (0..ideal_hits).map(discount).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    InDomain,
    OutDomain,
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetTag::InDomain => "in_domain",
            DatasetTag::OutDomain => "out_domain",
        })
    }
}

/// Whether every query's pool holds exactly one relevant document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceRegime {
    SinglePositive,
    MultiPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub precision: f64,
    pub average_precision: f64,
    pub reciprocal_rank: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub precision: f64,
    pub map: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

impl AggregateMetrics {
    /// `(name, value)` pairs in report order.
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [("precision", self.precision), ("map", self.map), ("mrr", self.mrr), ("ndcg", self.ndcg)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub dataset_tag: DatasetTag,
    pub n_queries: usize,
    pub regime: RelevanceRegime,
    pub per_query: Vec<QueryMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricReport {
    /// Per-query metrics and their unweighted means.
    pub fn from_lists(lists: &[RankedList], k: usize, dataset_tag: DatasetTag) -> Result<Self> {
        if lists.is_empty() {
            return Err(Error::Argument("no ranked lists to evaluate".into()));
        }
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        let per_query: Vec<QueryMetrics> = lists
            .iter()
            .map(|l| QueryMetrics {
                query_id: l.query_id.clone(),
                precision: precision_at_k(l, k),
                average_precision: average_precision_at_k(l, k),
                reciprocal_rank: reciprocal_rank_at_k(l, k),
                ndcg: ndcg_at_k(l, k),
            })
            .collect();
        let n = per_query.len() as f64;
        let mean = |f: fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
        let aggregate = AggregateMetrics {
            precision: mean(|q| q.precision),
            map: mean(|q| q.average_precision),
            mrr: mean(|q| q.reciprocal_rank),
            ndcg: mean(|q| q.ndcg),
        };
        let regime = if lists.iter().all(|l| l.total_relevant() == 1) {
            RelevanceRegime::SinglePositive
        } else {
            RelevanceRegime::MultiPositive
        };
        Ok(Self { k, dataset_tag, n_queries: per_query.len(), regime, per_query, aggregate })
    }
}
