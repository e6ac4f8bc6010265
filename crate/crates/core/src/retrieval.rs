//! Dense candidate retrieval: embedding backends, exact cosine top-k search
//! and index persistence.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::http_client::{HttpConfig, JsonClient, TOKEN_ENV};
use crate::jsonl;
use crate::querygen::SyntheticQuery;
use crate::text;

/// Magic first line of a persisted index.
pub const INDEX_MAGIC: &str = "SYNTHRANK-IDX-1";

pub const DEFAULT_TOP_K: usize = 30;

/// A finite, non-zero dense vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Argument("embedding has dimension 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("embedding has non-finite entries".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::Argument("embedding is the zero vector".into()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

/// Sequential, index-ascending f64 accumulation; the fixed order keeps
/// similarities bitwise reproducible.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += f64::from(a[i]) * f64::from(b[i]);
    }
    acc
}

fn cosine_with_norms(a: &EmbeddingVector, a_norm: f64, b: &EmbeddingVector, b_norm: f64) -> f64 {
    (dot(&a.0, &b.0) / (a_norm * b_norm)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Argument(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(cosine_with_norms(a, a.norm(), b, b.norm()))
}

/// Produces fixed-dimension dense vectors for text.
pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_raw(&self, text: &str) -> Result<Vec<f32>>;
}

pub fn embed(backend: &dyn EmbeddingBackend, text: &str) -> Result<EmbeddingVector> {
    if text.trim().is_empty() {
        return Err(Error::Argument("cannot embed empty text".into()));
    }
    let v = EmbeddingVector::new(backend.embed_raw(text)?)?;
    if v.dim() != backend.dim() {
        return Err(Error::Config(format!(
            "backend `{}` declared dim {} but returned {}",
            backend.id(),
            backend.dim(),
            v.dim()
        )));
    }
    Ok(v)
}

/// Hashed bag of words: each lowercased word adds 1 to bucket
/// `fnv1a(hash_seed, word) % dim`, then the vector is L2-normalized.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    hash_seed: u64,
}

impl MockEmbedder {
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_HASH_SEED: u64 = 0x5eed;

    pub fn new() -> Self {
        Self { dim: Self::DEFAULT_DIM, hash_seed: Self::DEFAULT_HASH_SEED }
    }

    pub fn with_dim(dim: usize, hash_seed: u64) -> Self {
        Self { dim: dim.max(1), hash_seed }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new()
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn id(&self) -> &str {
        "mock-hashed-bow"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>> {
        let mut counts = vec![0.0f64; self.dim];
        for w in text::words(text) {
            counts[(text::fnv1a(self.hash_seed, w.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Argument(format!("no embeddable words in {text:?}")));
        }
        Ok(counts.into_iter().map(|c| (c / norm) as f32).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f32>,
}

/// Remote embedder: `POST /v1/embed {text}` → `{vector}`.
pub struct HttpEmbedder {
    client: JsonClient,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, dim: usize) -> Result<Self> {
        Ok(Self { client: JsonClient::new(config, std::env::var(TOKEN_ENV).ok())?, dim })
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn id(&self) -> &str {
        "http-embedder-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f32>> {
        self.client.post::<_, EmbedResponse>("/v1/embed", &EmbedRequest { text }, Some("embeddings")).map(|r| r.vector)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: String,
    pub similarity: f64,
}

/// Top-k retrieval result for one query, similarity descending with ties
/// broken by ascending doc_id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub query_id: String,
    pub k: usize,
    pub entries: Vec<Candidate>,
}

fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.similarity.partial_cmp(&a.similarity).unwrap_or(Ordering::Equal).then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    backend_id: String,
    dim: usize,
    doc_ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
}

/// Exact dense index over a corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    backend_id: String,
    dim: usize,
    doc_ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    norms: Vec<f64>,
}

impl DenseIndex {
    fn from_parts(backend_id: String, dim: usize, doc_ids: Vec<String>, vectors: Vec<EmbeddingVector>) -> Result<Self> {
        if doc_ids.len() != vectors.len() {
            return Err(Error::State("index doc_ids and vectors differ in length".into()));
        }
        if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(Error::Config(format!("index vector of dim {} in a dim-{dim} index", bad.dim())));
        }
        let norms = vectors.iter().map(EmbeddingVector::norm).collect();
        Ok(Self { backend_id, dim, doc_ids, vectors, norms })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, i: usize) -> &EmbeddingVector {
        &self.vectors[i]
    }

    /// Exact top-k by cosine similarity against an already-embedded query.
    pub fn search(&self, query_id: &str, query: &EmbeddingVector, k: usize, exec: Exec) -> Result<CandidateSet> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        if self.is_empty() {
            return Err(Error::State("index is empty".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::Config(format!("query dim {} does not match index dim {}", query.dim(), self.dim)));
        }
        let q_norm = query.norm();
        let positions: Vec<usize> = (0..self.len()).collect();
        let mut all: Vec<Candidate> = exec.map(&positions, |&i| Candidate {
            doc_id: self.doc_ids[i].clone(),
            similarity: cosine_with_norms(query, q_norm, &self.vectors[i], self.norms[i]),
        });
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all.sort_by(rank_order);
        Ok(CandidateSet { query_id: query_id.to_string(), k, entries: all })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let body = IndexFile {
            backend_id: self.backend_id.clone(),
            dim: self.dim,
            doc_ids: self.doc_ids.clone(),
            vectors: self.vectors.clone(),
        };
        let mut out = format!("{INDEX_MAGIC}\n");
        out.push_str(&serde_json::to_string(&body)?);
        out.push('\n');
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (magic, body) = raw.split_once('\n').unwrap_or((raw.as_str(), ""));
        if magic != INDEX_MAGIC {
            return Err(Error::Format { path: path.into(), reason: format!("bad magic header {magic:?}") });
        }
        let f: IndexFile =
            serde_json::from_str(body).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })?;
        Self::from_parts(f.backend_id, f.dim, f.doc_ids, f.vectors)
    }
}

/// Embed every corpus document into an exact index.
pub fn build_index(backend: &dyn EmbeddingBackend, corpus: &Corpus, exec: Exec) -> Result<DenseIndex> {
    if corpus.is_empty() {
        return Err(Error::Argument("cannot index an empty corpus".into()));
    }
    let vectors = exec.try_map(corpus.documents(), |d| {
        embed(backend, &d.text).map_err(|e| Error::IndexBuild { doc_id: d.doc_id.clone(), source: Box::new(e) })
    })?;
    let doc_ids = corpus.documents().iter().map(|d| d.doc_id.clone()).collect();
    DenseIndex::from_parts(backend.id().to_string(), backend.dim(), doc_ids, vectors)
}

/// Embed the query with `backend` and search `index` exactly.
pub fn retrieve_top_k(
    index: &DenseIndex,
    backend: &dyn EmbeddingBackend,
    query: &SyntheticQuery,
    k: usize,
    exec: Exec,
) -> Result<CandidateSet> {
    if backend.id() != index.backend_id {
        return Err(Error::Config(format!(
            "index was built with `{}` but query embedder is `{}`",
            index.backend_id,
            backend.id()
        )));
    }
    let v = embed(backend, &query.text)?;
    index.search(&query.query_id, &v, k, exec)
}

pub fn write_candidates(path: &Path, sets: &[CandidateSet]) -> Result<()> {
    jsonl::write(path, sets)
}

pub fn read_candidates(path: &Path) -> Result<Vec<CandidateSet>> {
    jsonl::read(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_corpus, RawRecord, TokenizerSpec};

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        // scalar oracle: 1 / (sqrt(2) * 1)
        let oracle = 1.0 / 2.0f64.sqrt();
        assert!((cosine_similarity(&ev(&[1.0, 1.0]), &ev(&[1.0, 0.0])).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn cosine_errors() {
        assert!(cosine_similarity(&ev(&[1.0]), &ev(&[1.0, 0.0])).is_err());
        assert!(EmbeddingVector::new(vec![0.0, 0.0]).is_err());
        assert!(EmbeddingVector::new(vec![f32::NAN]).is_err());
    }

    #[test]
    fn mock_embedding_rules() {
        let m = MockEmbedder::new();
        let a = embed(&m, "aa aa").unwrap();
        let b = embed(&m, "aa").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
        assert_eq!(embed(&m, "x y z").unwrap(), embed(&m, "x y z").unwrap());
        assert!(matches!(embed(&m, "  "), Err(Error::Argument(_))));
    }

    fn corpus(texts: &[&str]) -> Corpus {
        let recs = texts.iter().enumerate().map(|(i, t)| RawRecord {
            doc_id: format!("d{i}"),
            text: t.to_string(),
            source_tag: None,
        });
        ingest_corpus(recs, 512, &TokenizerSpec::whitespace()).unwrap().0
    }

    fn query(text: &str) -> SyntheticQuery {
        SyntheticQuery {
            query_id: "q".into(),
            text: text.into(),
            seed_doc_id: "d0".into(),
            created_with: crate::querygen::CreatedWith { template_id: "t".into(), decode: Default::default() },
        }
    }

    #[test]
    fn index_shapes_and_determinism() {
        let m = MockEmbedder::new();
        let one = build_index(&m, &corpus(&["solo doc"]), Exec::default()).unwrap();
        assert_eq!(one.len(), 1);
        let c = corpus(&["red apple", "green apple", "blue sky", "red sky"]);
        let a = build_index(&m, &c, Exec::default()).unwrap();
        let b = build_index(&m, &c, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(build_index(&m, &corpus(&[]), Exec::default()).is_err());
    }

    #[test]
    fn exhaustive_k_returns_sorted_corpus_with_ties_by_id() {
        let m = MockEmbedder::new();
        let c = corpus(&["red apple", "red apple", "blue sky", "red sky"]);
        let idx = build_index(&m, &c, Exec::default()).unwrap();
        let set = retrieve_top_k(&idx, &m, &query("red apple"), 10, Exec::default()).unwrap();
        assert_eq!(set.entries.len(), 4);
        assert_eq!(set.entries[0].doc_id, "d0");
        assert_eq!(set.entries[1].doc_id, "d1");
        assert_eq!(set.entries[0].similarity, set.entries[1].similarity);
        assert!(set.entries.windows(2).all(|w| rank_order(&w[0], &w[1]) != Ordering::Greater));
    }

    #[test]
    fn build_error_names_document() {
        let m = MockEmbedder::new();
        let c = corpus(&["fine words", "!!! ???"]);
        match build_index(&m, &c, Exec::default()) {
            Err(Error::IndexBuild { doc_id, .. }) => assert_eq!(doc_id, "d1"),
            other => panic!("expected build error, got {other:?}"),
        }
    }

    #[test]
    fn backend_mismatch_is_config_error() {
        let m = MockEmbedder::new();
        let idx = build_index(&m, &corpus(&["a b"]), Exec::default()).unwrap();
        struct Other;
        impl EmbeddingBackend for Other {
            fn id(&self) -> &str {
                "other"
            }
            fn dim(&self) -> usize {
                64
            }
            fn embed_raw(&self, _: &str) -> Result<Vec<f32>> {
                Ok(vec![1.0; 64])
            }
        }
        assert!(matches!(retrieve_top_k(&idx, &Other, &query("a"), 1, Exec::default()), Err(Error::Config(_))));
        let short = ev(&[1.0; 8]);
        assert!(matches!(idx.search("q", &short, 1, Exec::default()), Err(Error::Config(_))));
    }
}
