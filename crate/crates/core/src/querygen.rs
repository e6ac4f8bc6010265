//! Synthetic query generation from seed passages with few-shot prompting.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::jsonl;
use crate::llm::{self, DecodeParams, LlmBackend, Prompt, PromptTemplate};
use crate::text;

pub const DEFAULT_MAX_QUERY_TOKENS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedWith {
    pub template_id: String,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub query_id: String,
    pub text: String,
    pub seed_doc_id: String,
    pub created_with: CreatedWith,
}

impl SyntheticQuery {
    /// Query ids are derived from the seed so each seed maps to one id.
    pub fn id_for_seed(seed_doc_id: &str) -> String {
        format!("q:{seed_doc_id}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed_doc_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryBatch {
    pub queries: Vec<SyntheticQuery>,
    pub failures: Vec<SeedFailure>,
    pub duplicates_dropped: usize,
}

/// Template, decoding parameters and length cap for one generation run.
#[derive(Debug, Clone)]
pub struct QueryGenerator {
    pub template: PromptTemplate,
    pub decode: DecodeParams,
    pub max_query_tokens: usize,
}

impl QueryGenerator {
    pub fn new(template: PromptTemplate, decode: DecodeParams) -> Self {
        Self { template, decode, max_query_tokens: DEFAULT_MAX_QUERY_TOKENS }
    }

    /// The prompt that would be sent for `seed` (dry run).
    pub fn prompt_for(&self, seed: &Document) -> Result<Prompt> {
        if seed.text.trim().is_empty() {
            return Err(Error::Argument(format!("seed `{}` has empty text", seed.doc_id)));
        }
        let mut bindings = BTreeMap::new();
        bindings.insert("seed_document".to_string(), seed.text.clone());
        self.template.render(&bindings)
    }

    pub fn generate(&self, backend: &dyn LlmBackend, seed: &Document) -> Result<SyntheticQuery> {
        let prompt = self.prompt_for(seed)?;
        let raw = llm::complete(backend, &prompt, &self.decode)?;
        // First non-empty line only; backends sometimes continue the few-shot pattern.
        let line = raw.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let text = text::normalize_whitespace(line);
        if text.is_empty() {
            return Err(Error::Generation(format!("empty query for seed `{}`", seed.doc_id)));
        }
        let n = text.split_whitespace().count();
        if n > self.max_query_tokens {
            return Err(Error::Generation(format!(
                "query for seed `{}` has {n} tokens, limit {}",
                seed.doc_id, self.max_query_tokens
            )));
        }
        Ok(SyntheticQuery {
            query_id: SyntheticQuery::id_for_seed(&seed.doc_id),
            text,
            seed_doc_id: seed.doc_id.clone(),
            created_with: CreatedWith { template_id: self.template.id.clone(), decode: self.decode },
        })
    }

    /// One query per seed, in seed order. Per-seed failures are collected;
    /// the batch only fails when every seed fails.
    pub fn generate_batch(
        &self,
        backend: &dyn LlmBackend,
        seeds: &[Document],
        dedupe: bool,
        exec: Exec,
    ) -> Result<QueryBatch> {
        if seeds.is_empty() {
            return Err(Error::Argument("no seed documents".into()));
        }
        let results = exec.map(seeds, |seed| self.generate(backend, seed));
        let mut batch = QueryBatch::default();
        let mut seen = HashSet::new();
        let mut first_err = None;
        for (seed, r) in seeds.iter().zip(results) {
            match r {
                Ok(q) => {
                    if dedupe && !seen.insert(q.text.clone()) {
                        batch.duplicates_dropped += 1;
                    } else {
                        batch.queries.push(q);
                    }
                }
                Err(e) => {
                    batch.failures.push(SeedFailure { seed_doc_id: seed.doc_id.clone(), reason: e.to_string() });
                    first_err.get_or_insert(e);
                }
            }
        }
        if batch.failures.len() == seeds.len() {
            return Err(Error::Batch {
                failed: seeds.len(),
                first: Box::new(first_err.expect("at least one failure")),
            });
        }
        Ok(batch)
    }
}

pub fn generate_query(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    seed: &Document,
    decode: &DecodeParams,
) -> Result<SyntheticQuery> {
    QueryGenerator::new(template.clone(), *decode).generate(backend, seed)
}

pub fn generate_query_batch(
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
    seeds: &[Document],
    decode: &DecodeParams,
    dedupe: bool,
) -> Result<QueryBatch> {
    QueryGenerator::new(template.clone(), *decode).generate_batch(backend, seeds, dedupe, Exec::default())
}

pub fn write_queries(path: &Path, queries: &[SyntheticQuery]) -> Result<()> {
    jsonl::write(path, queries)
}

pub fn read_queries(path: &Path) -> Result<Vec<SyntheticQuery>> {
    jsonl::read(path)
}
