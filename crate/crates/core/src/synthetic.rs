//! Seeded synthetic data for offline runs: a topical desk corpus and an
//! out-of-domain labeled evaluation set with a disjoint vocabulary.
//!
//! Words are pseudo-words built from consonant-vowel syllables. The desk
//! corpus and the out-domain set draw their consonants from disjoint sets,
//! so no word is shared between the two.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RawRecord;
use crate::error::{Error, Result};
use crate::eval::{EvalQuery, EvalSet, LabelSource, LabeledDoc};
use crate::metrics::DatasetTag;

const IN_CONSONANTS: &[u8] = b"bdfgklmnp";
const OUT_CONSONANTS: &[u8] = b"rstvzjwxy";
const VOWELS: &[u8] = b"aeiou";

fn vocabulary(rng: &mut ChaCha8Rng, consonants: &[u8], n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(consonants[rng.gen_range(0..consonants.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn sentence(words: &[&str]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s.push('.');
    s
}

/// Draw `n` distinct words, mostly from `topic` and the rest from `shared`.
fn draw<'a>(
    rng: &mut ChaCha8Rng,
    topic: &'a [String],
    shared: &'a [String],
    n: usize,
    used: &mut BTreeSet<&'a str>,
) -> Vec<&'a str> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let pool = if rng.gen_bool(0.75) { topic } else { shared };
        let w = pool[rng.gen_range(0..pool.len())].as_str();
        if used.insert(w) {
            out.push(w);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskCorpusConfig {
    pub n_docs: usize,
    pub n_topics: usize,
    pub topic_vocab: usize,
    pub shared_vocab: usize,
    /// Inclusive word-count range of a document's first sentence.
    pub lead_words: (usize, usize),
    /// Inclusive word-count range of the trailing sentence.
    pub tail_words: (usize, usize),
    pub seed: u64,
}

impl Default for DeskCorpusConfig {
    fn default() -> Self {
        Self {
            n_docs: 200,
            n_topics: 20,
            topic_vocab: 18,
            shared_vocab: 40,
            lead_words: (5, 7),
            tail_words: (1, 4),
            seed: 7,
        }
    }
}

/// Short two-sentence passages grouped into topics, so that retrieval
/// surfaces lexically close but distinct neighbours.
pub fn desk_corpus(config: &DeskCorpusConfig) -> Result<Vec<RawRecord>> {
    let (l_lo, l_hi) = config.lead_words;
    let (t_lo, t_hi) = config.tail_words;
    if config.n_topics == 0 || l_lo == 0 || l_lo > l_hi || t_lo > t_hi {
        return Err(Error::Argument("invalid desk corpus shape".into()));
    }
    if config.topic_vocab + config.shared_vocab < l_hi + t_hi {
        return Err(Error::Argument("vocabulary too small for document length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.n_topics * config.topic_vocab + config.shared_vocab;
    let mut vocab = vocabulary(&mut rng, IN_CONSONANTS, total);
    let shared = vocab.split_off(config.n_topics * config.topic_vocab);
    let topics: Vec<&[String]> = vocab.chunks(config.topic_vocab).collect();
    let width = config.n_docs.max(1).to_string().len();
    Ok((0..config.n_docs)
        .map(|i| {
            let topic = topics[i % topics.len()];
            let mut used = BTreeSet::new();
            let (n_lead, n_tail) = (rng.gen_range(l_lo..=l_hi), rng.gen_range(t_lo..=t_hi));
            let lead = draw(&mut rng, topic, &shared, n_lead, &mut used);
            let tail = draw(&mut rng, topic, &shared, n_tail, &mut used);
            let mut text = sentence(&lead);
            if !tail.is_empty() {
                text.push(' ');
                text.push_str(&sentence(&tail));
            }
            RawRecord {
                doc_id: format!("doc{i:0width$}"),
                text,
                source_tag: Some(format!("topic{}", i % topics.len())),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutDomainConfig {
    pub n_queries: usize,
    pub pool_size: usize,
    pub n_topics: usize,
    pub topic_vocab: usize,
    pub seed: u64,
}

impl Default for OutDomainConfig {
    fn default() -> Self {
        Self { n_queries: 60, pool_size: 20, n_topics: 12, topic_vocab: 30, seed: 101 }
    }
}

/// One relevant passage per query, labeled at construction time, among
/// same-topic distractors that share at most one query word.
pub fn out_domain_eval_set(config: &OutDomainConfig) -> Result<EvalSet> {
    if config.n_queries == 0 || config.pool_size < 2 || config.n_topics == 0 || config.topic_vocab < 12 {
        return Err(Error::Argument("invalid out-domain set shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = vocabulary(&mut rng, OUT_CONSONANTS, config.n_topics * config.topic_vocab);
    let topics: Vec<&[String]> = vocab.chunks(config.topic_vocab).collect();
    let queries = (0..config.n_queries)
        .map(|qi| {
            let topic = topics[qi % topics.len()];
            let mut words: Vec<&str> = topic.iter().map(String::as_str).collect();
            words.shuffle(&mut rng);
            let n_q = rng.gen_range(3..=4);
            let (query_words, rest) = words.split_at(n_q);
            let mut pool = Vec::with_capacity(config.pool_size);
            let mut rel: Vec<&str> = query_words.to_vec();
            let n_extra = rng.gen_range(2..=4);
            rel.extend(rest.choose_multiple(&mut rng, n_extra).copied());
            rel.shuffle(&mut rng);
            pool.push(sentence(&rel));
            for _ in 1..config.pool_size {
                let n_words = rng.gen_range(5..=8);
                let mut d: Vec<&str> = rest.choose_multiple(&mut rng, n_words).copied().collect();
                if rng.gen_bool(0.5) {
                    d.push(query_words[rng.gen_range(0..n_q)]);
                }
                d.shuffle(&mut rng);
                pool.push(sentence(&d));
            }
            let relevant = rng.gen_range(0..config.pool_size);
            pool.swap(0, relevant);
            let pool = pool
                .into_iter()
                .enumerate()
                .map(|(i, text)| LabeledDoc {
                    doc_id: format!("ood{qi:03}-{i:02}"),
                    text,
                    label: u8::from(i == relevant),
                    teacher_score: None,
                })
                .collect();
            EvalQuery { query_id: format!("ood-q{qi:03}"), query_text: format!("{}?", query_words.join(" ")), pool }
        })
        .collect();
    Ok(EvalSet { tag: DatasetTag::OutDomain, label_source: LabelSource::Native, queries })
}
