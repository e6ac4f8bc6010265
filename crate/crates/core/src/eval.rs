//! Model evaluation over labeled query pools.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::jsonl;
use crate::metrics::{DatasetTag, MetricReport, RankedList};
use crate::mining::TrainingTriplet;
use crate::trainer::CrossEncoderModel;

pub const DEFAULT_EVAL_K: usize = 10;
pub const DEFAULT_MAX_POOL: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub doc_id: String,
    pub text: String,
    pub label: u8,
    /// Teacher relevance, used to pick the hardest negatives when a pool
    /// must be cut down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub query_id: String,
    pub query_text: String,
    pub pool: Vec<LabeledDoc>,
}

/// Where an eval set's labels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Thresholded teacher relevance scores.
    Teacher,
    /// Labels shipped with the dataset.
    Native,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub tag: DatasetTag,
    pub label_source: LabelSource,
    pub queries: Vec<EvalQuery>,
}

impl EvalSet {
    /// SHA-256 over the serialized queries; identical sets share it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for q in &self.queries {
            h.update(serde_json::to_vec(q).expect("plain data"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.queries)
    }

    pub fn read_jsonl(path: &Path, tag: DatasetTag, label_source: LabelSource) -> Result<Self> {
        Ok(Self { tag, label_source, queries: jsonl::read(path)? })
    }
}

fn negative_hardness(a: &LabeledDoc, b: &LabeledDoc) -> Ordering {
    let sa = a.teacher_score.unwrap_or(f64::NEG_INFINITY);
    let sb = b.teacher_score.unwrap_or(f64::NEG_INFINITY);
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// All positives first (pool order), then negatives hardest first, cut to
/// `max_pool` documents.
pub fn cap_pool(pool: &[LabeledDoc], max_pool: usize) -> Vec<LabeledDoc> {
    let mut out: Vec<LabeledDoc> = pool.iter().filter(|d| d.label > 0).cloned().collect();
    let mut negs: Vec<LabeledDoc> = pool.iter().filter(|d| d.label == 0).cloned().collect();
    negs.sort_by(negative_hardness);
    out.extend(negs);
    out.truncate(max_pool);
    out
}

/// Candidates at or above the triplet's threshold are relevant, the rest
/// are not.
pub fn eval_set_from_triplets(triplets: &[TrainingTriplet], corpus: &Corpus) -> Result<EvalSet> {
    let queries = triplets
        .iter()
        .map(|t| {
            let pool = t
                .scores
                .iter()
                .map(|(doc_id, &p)| {
                    let doc =
                        corpus.get(doc_id).ok_or_else(|| Error::State(format!("`{doc_id}` is not in the corpus")))?;
                    Ok(LabeledDoc {
                        doc_id: doc_id.clone(),
                        text: doc.text.clone(),
                        label: u8::from(p >= t.threshold),
                        teacher_score: Some(p),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(EvalQuery { query_id: t.query_id.clone(), query_text: t.query_text.clone(), pool })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalSet { tag: DatasetTag::InDomain, label_source: LabelSource::Teacher, queries })
}

/// Rank one pool by model score (descending, ties by doc_id).
pub fn rank_query(model: &CrossEncoderModel, query: &EvalQuery, max_pool: usize) -> Result<RankedList> {
    if query.pool.is_empty() {
        return Err(Error::Argument(format!("{} has an empty pool", query.query_id)));
    }
    if let Some(d) = query.pool.iter().find(|d| d.label > 1) {
        return Err(Error::Argument(format!("label {} for `{}` is not binary", d.label, d.doc_id)));
    }
    let pool = if query.pool.len() > max_pool { cap_pool(&query.pool, max_pool) } else { query.pool.clone() };
    let scored = pool
        .iter()
        .map(|d| Ok((d.doc_id.clone(), model.score_pair(&query.query_text, &d.text)?, d.label)))
        .collect::<Result<Vec<_>>>()?;
    rank_by_scores(&query.query_id, scored)
}

/// Order `(doc_id, score, label)` triples by score descending, ties by
/// doc_id ascending.
pub fn rank_by_scores(query_id: &str, mut scored: Vec<(String, f64, u8)>) -> Result<RankedList> {
    scored.sort_by(|(da, sa, _), (db, sb, _)| sb.partial_cmp(sa).unwrap_or(Ordering::Equal).then_with(|| da.cmp(db)));
    let relevance: BTreeMap<String, u8> = scored.iter().map(|(d, _, l)| (d.clone(), *l)).collect();
    RankedList::new(query_id, scored.into_iter().map(|(d, _, _)| d).collect(), relevance)
}

/// Score every pool with `model` and report macro-averaged metrics.
pub fn evaluate_model(
    model: &CrossEncoderModel,
    eval_set: &EvalSet,
    k: usize,
    max_pool: usize,
    exec: Exec,
) -> Result<MetricReport> {
    if eval_set.queries.is_empty() {
        return Err(Error::Argument("empty evaluation set".into()));
    }
    if max_pool == 0 {
        return Err(Error::Argument("max_pool must be positive".into()));
    }
    let lists = exec.try_map(&eval_set.queries, |q| rank_query(model, q, max_pool))?;
    MetricReport::from_lists(&lists, k, eval_set.tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{average_precision_at_k, ndcg_at_k, precision_at_k, reciprocal_rank_at_k};
    use crate::trainer::ToyEncoderConfig;

    fn ld(id: &str, text: &str, label: u8, score: Option<f64>) -> LabeledDoc {
        LabeledDoc { doc_id: id.into(), text: text.into(), label, teacher_score: score }
    }

    fn set(queries: Vec<EvalQuery>) -> EvalSet {
        EvalSet { tag: DatasetTag::InDomain, label_source: LabelSource::Native, queries }
    }

    #[test]
    fn zero_head_falls_back_to_doc_id_order() {
        let mut model = CrossEncoderModel::toy(ToyEncoderConfig::default(), 1).unwrap();
        model.set_head(vec![0.0; model.d_model()]).unwrap();
        let q = EvalQuery {
            query_id: "q".into(),
            query_text: "apple".into(),
            pool: vec![ld("c", "x", 1, None), ld("a", "y", 0, None), ld("b", "z", 1, None)],
        };
        let list = rank_query(&model, &q, 30).unwrap();
        assert_eq!(list.ranked, ["a", "b", "c"]);
        let report = evaluate_model(&model, &set(vec![q]), 10, 30, Exec::default()).unwrap();
        assert_eq!(report.k, 10);
        let fixed = RankedList::from_labels("q", &[0, 1, 1]);
        assert_eq!(report.aggregate.ndcg, ndcg_at_k(&fixed, 10));
        assert_eq!(report.aggregate.map, average_precision_at_k(&fixed, 10));
    }

    #[test]
    fn metrics_compose_with_scores() {
        let model = CrossEncoderModel::toy(ToyEncoderConfig::default(), 5).unwrap();
        let pool = vec![ld("a", "red apple", 1, None), ld("b", "blue sky", 0, None), ld("c", "green tea", 0, None)];
        let q = EvalQuery { query_id: "q".into(), query_text: "red apple".into(), pool: pool.clone() };
        // oracle: score each doc independently, order by hand
        let mut scored: Vec<(f64, &LabeledDoc)> =
            pool.iter().map(|d| (model.score_pair("red apple", &d.text).unwrap(), d)).collect();
        scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        let labels: Vec<u8> = scored.iter().map(|(_, d)| d.label).collect();
        let oracle = RankedList::from_labels("q", &labels);
        let r = evaluate_model(&model, &set(vec![q]), 10, 30, Exec::Sequential).unwrap();
        assert_eq!(r.aggregate.precision, precision_at_k(&oracle, 10));
        assert_eq!(r.aggregate.mrr, reciprocal_rank_at_k(&oracle, 10));
        assert_eq!(r.aggregate.ndcg, ndcg_at_k(&oracle, 10));
    }

    #[test]
    fn pool_cap_keeps_positives_then_hardest() {
        let pool = vec![
            ld("n1", "t", 0, Some(0.1)),
            ld("p1", "t", 1, Some(0.9)),
            ld("n2", "t", 0, Some(0.4)),
            ld("n3", "t", 0, Some(0.3)),
            ld("p2", "t", 1, Some(0.6)),
        ];
        let ids: Vec<_> = cap_pool(&pool, 4).into_iter().map(|d| d.doc_id).collect();
        assert_eq!(ids, ["p1", "p2", "n2", "n3"]);
    }

    #[test]
    fn empty_inputs_rejected() {
        let model = CrossEncoderModel::toy(ToyEncoderConfig::default(), 1).unwrap();
        assert!(evaluate_model(&model, &set(vec![]), 10, 30, Exec::default()).is_err());
        let q = EvalQuery { query_id: "q".into(), query_text: "x".into(), pool: vec![] };
        assert!(evaluate_model(&model, &set(vec![q]), 10, 30, Exec::default()).is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let q = EvalQuery { query_id: "q".into(), query_text: "x".into(), pool: vec![ld("a", "t", 1, None)] };
        let a = set(vec![q.clone()]);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.queries[0].pool[0].label = 0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
