//! Passage corpus: ingestion, length filtering, persistence and seed sampling.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

/// Default passage length limit, in tokens.
pub const DEFAULT_MAX_TOKENS: usize = 512;

/// Counts tokens for the length filter.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Alphanumeric runs plus one token per punctuation character. Closer to a
/// subword tokenizer's count than whitespace splitting, still dependency-free.
struct UnicodeWordsTokenizer;

impl Tokenizer for UnicodeWordsTokenizer {
    fn count(&self, text: &str) -> usize {
        let mut n = 0;
        let mut in_word = false;
        for c in text.chars() {
            if c.is_alphanumeric() {
                if !in_word {
                    n += 1;
                    in_word = true;
                }
            } else {
                in_word = false;
                if !c.is_whitespace() {
                    n += 1;
                }
            }
        }
        n
    }
}

/// Identifier plus parameters of a registered tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl TokenizerSpec {
    pub fn named(name: &str) -> Self {
        Self { name: name.to_string(), params: BTreeMap::new() }
    }

    pub fn whitespace() -> Self {
        Self::named("whitespace")
    }
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        Self::whitespace()
    }
}

/// Name → tokenizer lookup. Model-faithful tokenizers are injected with
/// [`TokenizerRegistry::register`].
#[derive(Clone)]
pub struct TokenizerRegistry {
    entries: BTreeMap<String, Arc<dyn Tokenizer>>,
}

impl Default for TokenizerRegistry {
    fn default() -> Self {
        let mut r = Self { entries: BTreeMap::new() };
        r.register("whitespace", Arc::new(WhitespaceTokenizer));
        r.register("unicode-words", Arc::new(UnicodeWordsTokenizer));
        r
    }
}

impl TokenizerRegistry {
    pub fn register(&mut self, name: &str, tokenizer: Arc<dyn Tokenizer>) {
        self.entries.insert(name.to_string(), tokenizer);
    }

    pub fn resolve(&self, spec: &TokenizerSpec) -> Result<Arc<dyn Tokenizer>> {
        self.entries.get(&spec.name).cloned().ok_or_else(|| Error::Config(format!("unknown tokenizer `{}`", spec.name)))
    }
}

/// Token count of `text` under one of the built-in tokenizers.
pub fn count_tokens(text: &str, spec: &TokenizerSpec) -> Result<usize> {
    Ok(TokenizerRegistry::default().resolve(spec)?.count(text))
}

/// One line of the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub token_count: usize,
    pub source_tag: Option<String>,
}

/// Counts of records left out of a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    /// Excluded for exceeding `max_tokens`.
    pub skipped_too_long: usize,
    /// Rejected for empty or whitespace-only text.
    pub rejected_empty: usize,
}

/// Immutable, insertion-ordered passage collection.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    by_id: HashMap<String, usize>,
    tokenizer_spec: TokenizerSpec,
    max_tokens: usize,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.documents == other.documents
            && self.tokenizer_spec == other.tokenizer_spec
            && self.max_tokens == other.max_tokens
    }
}

impl Corpus {
    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn tokenizer_spec(&self) -> &TokenizerSpec {
        &self.tokenizer_spec
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    /// Write the corpus in its JSONL file format.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let rows: Vec<RawRecord> = self
            .documents
            .iter()
            .map(|d| RawRecord { doc_id: d.doc_id.clone(), text: d.text.clone(), source_tag: d.source_tag.clone() })
            .collect();
        jsonl::write(path, &rows)
    }
}

/// Build a corpus from `records` with the built-in tokenizer registry.
pub fn ingest_corpus<I>(records: I, max_tokens: usize, spec: &TokenizerSpec) -> Result<(Corpus, IngestStats)>
where
    I: IntoIterator<Item = RawRecord>,
{
    ingest_corpus_with(&TokenizerRegistry::default(), records, max_tokens, spec)
}

pub fn ingest_corpus_with<I>(
    registry: &TokenizerRegistry,
    records: I,
    max_tokens: usize,
    spec: &TokenizerSpec,
) -> Result<(Corpus, IngestStats)>
where
    I: IntoIterator<Item = RawRecord>,
{
    if max_tokens == 0 {
        return Err(Error::Argument("max_tokens must be positive".into()));
    }
    let tokenizer = registry.resolve(spec)?;
    let mut stats = IngestStats::default();
    let mut documents = Vec::new();
    let mut by_id = HashMap::new();
    let mut seen = std::collections::HashSet::new();

    for rec in records {
        // Ids are unique across the whole stream, filtered records included.
        if !seen.insert(rec.doc_id.clone()) {
            return Err(Error::DuplicateDocId(rec.doc_id));
        }
        if rec.text.trim().is_empty() {
            stats.rejected_empty += 1;
            continue;
        }
        let token_count = tokenizer.count(&rec.text);
        if token_count > max_tokens {
            stats.skipped_too_long += 1;
            continue;
        }
        by_id.insert(rec.doc_id.clone(), documents.len());
        documents.push(Document { doc_id: rec.doc_id, text: rec.text, token_count, source_tag: rec.source_tag });
    }

    Ok((Corpus { documents, by_id, tokenizer_spec: spec.clone(), max_tokens }, stats))
}

/// Read raw records from a corpus JSONL file.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    jsonl::read(path)
}

/// Load and ingest a corpus file in one step.
pub fn load_corpus(path: &Path, max_tokens: usize, spec: &TokenizerSpec) -> Result<(Corpus, IngestStats)> {
    ingest_corpus(read_records(path)?, max_tokens, spec)
}

/// Uniform sample of `n` distinct documents without replacement.
pub fn sample_seed_documents(corpus: &Corpus, n: usize, rng_seed: u64) -> Result<Vec<Document>> {
    if n == 0 {
        return Err(Error::Argument("n must be positive".into()));
    }
    if n > corpus.len() {
        return Err(Error::Argument(format!("cannot sample {n} seeds from a corpus of {}", corpus.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(index::sample(&mut rng, corpus.len(), n).into_iter().map(|i| corpus.documents[i].clone()).collect())
}
