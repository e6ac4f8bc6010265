//! LLM-as-teacher labeling: yes/no relevance probabilities, positive and
//! hard-negative mining, and triplet assembly.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::jsonl;
use crate::llm::{self, LabelPair, LlmBackend, PromptTemplate};
use crate::querygen::SyntheticQuery;
use crate::retrieval::CandidateSet;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_NEGATIVES: usize = 4;

/// Two-way softmax probability of the relevant label, shifted by the max
/// logit before exponentiation.
pub fn relevance_probability(z_yes: f64, z_no: f64) -> f64 {
    let m = z_yes.max(z_no);
    let yes = (z_yes - m).exp();
    let no = (z_no - m).exp();
    yes / (yes + no)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub doc_id: String,
    pub p_yes: f64,
}

/// Prompt template and label strings for relevance classification.
#[derive(Debug, Clone)]
pub struct RelevanceJudge {
    pub template: PromptTemplate,
    pub labels: LabelPair,
}

impl Default for RelevanceJudge {
    fn default() -> Self {
        Self { template: PromptTemplate::default_relevance(), labels: LabelPair::default() }
    }
}

impl RelevanceJudge {
    pub fn new(template: PromptTemplate, labels: LabelPair) -> Self {
        Self { template, labels }
    }

    pub fn score(&self, backend: &dyn LlmBackend, query: &SyntheticQuery, doc: &Document) -> Result<f64> {
        let mut bindings = BTreeMap::new();
        bindings.insert("query".to_string(), query.text.clone());
        bindings.insert("document".to_string(), doc.text.clone());
        let prompt = self.template.render(&bindings)?;
        let logits = llm::label_logits(backend, &prompt, &self.labels)?;
        let z_yes = logits.get(&self.labels.yes).expect("validated by gateway");
        let z_no = logits.get(&self.labels.no).expect("validated by gateway");
        Ok(relevance_probability(z_yes, z_no))
    }

    /// One judgment per candidate, in candidate order.
    pub fn score_candidates(
        &self,
        backend: &dyn LlmBackend,
        query: &SyntheticQuery,
        candidates: &CandidateSet,
        corpus: &Corpus,
        exec: Exec,
    ) -> Result<Vec<RelevanceJudgment>> {
        let docs = candidates
            .entries
            .iter()
            .map(|c| {
                corpus
                    .get(&c.doc_id)
                    .ok_or_else(|| Error::State(format!("candidate `{}` is not in the corpus", c.doc_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = exec.try_map(&docs, |d| self.score(backend, query, d))?;
        Ok(docs
            .iter()
            .zip(scores)
            .map(|(d, p_yes)| RelevanceJudgment { query_id: query.query_id.clone(), doc_id: d.doc_id.clone(), p_yes })
            .collect())
    }
}

pub fn relevance_score(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    query: &SyntheticQuery,
    doc: &Document,
) -> Result<f64> {
    RelevanceJudge::new(template.clone(), LabelPair::default()).score(backend, query, doc)
}

/// Most relevant candidate. Ties prefer the seed document, then the
/// smallest doc_id.
pub fn mine_positive<'a>(judgments: &'a [RelevanceJudgment], seed_doc_id: &str) -> Result<&'a str> {
    let best = judgments
        .iter()
        .map(|j| j.p_yes)
        .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
        .ok_or_else(|| Error::Argument("no judgments to mine".into()))?;
    let tied = judgments.iter().filter(|j| j.p_yes == best);
    let mut chosen: Option<&str> = None;
    for j in tied {
        if j.doc_id == seed_doc_id {
            return Ok(&j.doc_id);
        }
        if chosen.is_none_or(|c| j.doc_id.as_str() < c) {
            chosen = Some(&j.doc_id);
        }
    }
    Ok(chosen.expect("maximum is attained"))
}

fn hard_first(a: &RelevanceJudgment, b: &RelevanceJudgment) -> Ordering {
    b.p_yes.partial_cmp(&a.p_yes).unwrap_or(Ordering::Equal).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Every doc with `p_yes < threshold`, hardest (highest score) first.
pub fn mine_negatives(judgments: &[RelevanceJudgment], threshold: f64) -> Result<Vec<String>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut below: Vec<&RelevanceJudgment> = judgments.iter().filter(|j| j.p_yes < threshold).collect();
    below.sort_by(|a, b| hard_first(a, b));
    Ok(below.into_iter().map(|j| j.doc_id.clone()).collect())
}

/// Acceptance policy for triplet assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningPolicy {
    pub threshold: f64,
    pub min_negatives: usize,
    pub min_positive_score: f64,
}

impl Default for MiningPolicy {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            min_negatives: DEFAULT_MIN_NEGATIVES,
            min_positive_score: DEFAULT_THRESHOLD,
        }
    }
}

/// One query's mined training example, in its JSONL file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub query_id: String,
    pub query_text: String,
    pub positive_doc_id: String,
    /// Hardest first.
    pub negative_doc_ids: Vec<String>,
    /// Every judged candidate, ambiguous ones included.
    pub scores: BTreeMap<String, f64>,
    pub threshold: f64,
    pub seed_doc_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    NoCandidates,
    NoNegatives,
    TooFewNegatives,
    WeakPositive,
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectionReason::NoCandidates => "no_candidates",
            RejectionReason::NoNegatives => "no_negatives",
            RejectionReason::TooFewNegatives => "too_few_negatives",
            RejectionReason::WeakPositive => "weak_positive",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub query_id: String,
    pub reason: RejectionReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Assembly {
    Accepted(TrainingTriplet),
    Rejected(Rejection),
}

/// Combine positive and negative mining under `policy`. Candidates at or
/// above the threshold that are not the positive are left out entirely.
pub fn assemble_triplet(
    query: &SyntheticQuery,
    judgments: &[RelevanceJudgment],
    policy: &MiningPolicy,
) -> Result<Assembly> {
    let reject = |reason| Ok(Assembly::Rejected(Rejection { query_id: query.query_id.clone(), reason }));
    if judgments.is_empty() {
        return reject(RejectionReason::NoCandidates);
    }
    let positive = mine_positive(judgments, &query.seed_doc_id)?.to_string();
    let best = judgments.iter().find(|j| j.doc_id == positive).expect("positive is judged").p_yes;
    if best < policy.min_positive_score {
        return reject(RejectionReason::WeakPositive);
    }
    let negatives: Vec<String> =
        mine_negatives(judgments, policy.threshold)?.into_iter().filter(|d| *d != positive).collect();
    if negatives.is_empty() {
        return reject(RejectionReason::NoNegatives);
    }
    if negatives.len() < policy.min_negatives {
        return reject(RejectionReason::TooFewNegatives);
    }
    Ok(Assembly::Accepted(TrainingTriplet {
        query_id: query.query_id.clone(),
        query_text: query.text.clone(),
        positive_doc_id: positive,
        negative_doc_ids: negatives,
        scores: judgments.iter().map(|j| (j.doc_id.clone(), j.p_yes)).collect(),
        threshold: policy.threshold,
        seed_doc_id: query.seed_doc_id.clone(),
    }))
}

impl TrainingTriplet {
    /// Structural invariants of an assembled triplet.
    pub fn check_invariants(&self) -> Result<()> {
        let negs: BTreeSet<&String> = self.negative_doc_ids.iter().collect();
        if negs.len() != self.negative_doc_ids.len() {
            return Err(Error::State(format!("{}: duplicate negatives", self.query_id)));
        }
        if negs.contains(&self.positive_doc_id) {
            return Err(Error::State(format!("{}: positive listed as negative", self.query_id)));
        }
        let score = |d: &String| {
            self.scores.get(d).copied().ok_or_else(|| Error::State(format!("{}: `{d}` has no score", self.query_id)))
        };
        let pos = score(&self.positive_doc_id)?;
        if self.scores.values().any(|&s| s > pos) {
            return Err(Error::State(format!("{}: positive is not the argmax", self.query_id)));
        }
        let mut prev: Option<(f64, &String)> = None;
        for d in &self.negative_doc_ids {
            let s = score(d)?;
            if s >= self.threshold {
                return Err(Error::State(format!("{}: negative `{d}` scores {s} >= threshold", self.query_id)));
            }
            if let Some((ps, pd)) = prev {
                if s > ps || (s == ps && d < pd) {
                    return Err(Error::State(format!("{}: negatives not hardest-first", self.query_id)));
                }
            }
            prev = Some((s, d));
        }
        Ok(())
    }
}

pub fn write_triplets(path: &Path, triplets: &[TrainingTriplet]) -> Result<()> {
    jsonl::write(path, triplets)
}

pub fn read_triplets(path: &Path) -> Result<Vec<TrainingTriplet>> {
    jsonl::read(path)
}

pub fn write_rejections(path: &Path, rejections: &[Rejection]) -> Result<()> {
    jsonl::write(path, rejections)
}

pub fn read_rejections(path: &Path) -> Result<Vec<Rejection>> {
    jsonl::read(path)
}
