use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{TokenizerSpec, DEFAULT_MAX_TOKENS};
use crate::error::{Error, Result};
use crate::eval::{LabelSource, DEFAULT_EVAL_K, DEFAULT_MAX_POOL};
use crate::http_client::HttpConfig;
use crate::llm::{DecodeParams, HttpLlm, LabelPair, LlmBackend, MockLlm, PromptTemplate};
use crate::mining::{MiningPolicy, DEFAULT_MIN_NEGATIVES, DEFAULT_THRESHOLD};
use crate::retrieval::{EmbeddingBackend, HttpEmbedder, MockEmbedder, DEFAULT_TOP_K};
use crate::synthetic::{DeskCorpusConfig, OutDomainConfig};
use crate::trainer::{
    AdamState, Checkpoint, CrossEncoderModel, FrozenEmbeddingEncoder, ToyEncoder, ToyEncoderConfig, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSection {
    /// JSONL corpus file. Ignored when `synthetic` is set.
    pub path: Option<PathBuf>,
    /// Generate a seeded desk corpus instead of reading `path`.
    pub synthetic: Option<DeskCorpusConfig>,
    pub max_tokens: usize,
    pub tokenizer: TokenizerSpec,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self { path: None, synthetic: None, max_tokens: DEFAULT_MAX_TOKENS, tokenizer: TokenizerSpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmBackendConfig {
    Mock,
    Http(HttpConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingBackendConfig {
    Mock {
        #[serde(default = "default_mock_dim")]
        dim: usize,
    },
    Http {
        #[serde(flatten)]
        http: HttpConfig,
        dim: usize,
    },
}

fn default_mock_dim() -> usize {
    MockEmbedder::DEFAULT_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderBackendConfig {
    Toy(ToyEncoderConfig),
    /// Frozen embedding backend with a trainable score head only.
    FrozenEmbedding {
        max_words: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub llm: LlmBackendConfig,
    pub embedding: EmbeddingBackendConfig,
    pub encoder: EncoderBackendConfig,
    pub decode: DecodeParams,
    pub labels: LabelPair,
    pub init_seed: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            llm: LlmBackendConfig::Mock,
            embedding: EmbeddingBackendConfig::Mock { dim: MockEmbedder::DEFAULT_DIM },
            encoder: EncoderBackendConfig::Toy(ToyEncoderConfig::default()),
            decode: DecodeParams::default(),
            labels: LabelPair::default(),
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSection {
    pub generation: Option<PathBuf>,
    pub relevance: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub n_seeds: usize,
    pub k_candidates: usize,
    pub threshold: f64,
    pub m: usize,
    pub min_negatives: usize,
    pub min_positive_score: f64,
    pub dedupe_queries: bool,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            n_seeds: 150,
            k_candidates: DEFAULT_TOP_K,
            threshold: DEFAULT_THRESHOLD,
            m: DEFAULT_MIN_NEGATIVES,
            min_negatives: DEFAULT_MIN_NEGATIVES,
            min_positive_score: DEFAULT_THRESHOLD,
            dedupe_queries: true,
        }
    }
}

impl PipelineParams {
    pub fn mining_policy(&self) -> MiningPolicy {
        MiningPolicy {
            threshold: self.threshold,
            min_negatives: self.min_negatives,
            min_positive_score: self.min_positive_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutDomainSource {
    None,
    Synthetic(OutDomainConfig),
    File { path: PathBuf, label_source: LabelSource },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    pub k: usize,
    pub max_pool: usize,
    pub test_size: usize,
    pub out_domain: OutDomainSource,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_EVAL_K,
            max_pool: DEFAULT_MAX_POOL,
            test_size: 500,
            out_domain: OutDomainSource::Synthetic(OutDomainConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationParams {
    pub sizes: Vec<usize>,
}

impl Default for AblationParams {
    fn default() -> Self {
        Self { sizes: (1..=10).map(|i| i * 100).collect() }
    }
}

/// Everything one run depends on. Loaded from TOML; missing keys take
/// their defaults and the resolved form is written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seed for seed sampling and the train/test split.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub backends: BackendSection,
    pub prompts: PromptSection,
    pub pipeline: PipelineParams,
    pub training: TrainConfig,
    pub eval: EvalParams,
    pub ablation: AblationParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("run"),
            corpus: CorpusSection::default(),
            backends: BackendSection::default(),
            prompts: PromptSection::default(),
            pipeline: PipelineParams::default(),
            training: TrainConfig::default(),
            eval: EvalParams::default(),
            ablation: AblationParams::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn check_path(what: &str, p: &Path) -> Result<()> {
    check(p.exists(), || format!("{what} `{}` does not exist", p.display()))
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&raw)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Swap both remote backends for their deterministic mocks.
    pub fn use_mock_backends(&mut self) {
        self.backends.llm = LlmBackendConfig::Mock;
        if !matches!(self.backends.embedding, EmbeddingBackendConfig::Mock { .. }) {
            self.backends.embedding = EmbeddingBackendConfig::Mock { dim: MockEmbedder::DEFAULT_DIM };
        }
    }

    /// Apply a single seed to every seeded component.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.training.rng_seed = seed;
        self.backends.init_seed = seed;
        self.backends.decode.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.corpus.synthetic, &self.corpus.path) {
            (Some(_), _) => {}
            (None, Some(p)) => check_path("corpus", p)?,
            (None, None) => return Err(Error::Config("set corpus.path or corpus.synthetic".into())),
        }
        for p in [&self.prompts.generation, &self.prompts.relevance].into_iter().flatten() {
            check_path("prompt template", p)?;
        }
        if let OutDomainSource::File { path, .. } = &self.eval.out_domain {
            check_path("out-domain eval set", path)?;
        }
        let p = &self.pipeline;
        check(self.corpus.max_tokens > 0, || "corpus.max_tokens must be positive".into())?;
        check(p.n_seeds > 0, || "pipeline.n_seeds must be positive".into())?;
        check(p.k_candidates > 0, || "pipeline.k_candidates must be positive".into())?;
        check(p.threshold > 0.0 && p.threshold < 1.0, || format!("pipeline.threshold {} outside (0, 1)", p.threshold))?;
        check((0.0..=1.0).contains(&p.min_positive_score), || "pipeline.min_positive_score outside [0, 1]".into())?;
        check(p.m > 0, || "pipeline.m must be positive".into())?;
        check(p.m <= p.min_negatives, || {
            format!("pipeline.m = {} exceeds min_negatives = {}; groups could not be filled", p.m, p.min_negatives)
        })?;
        check(p.min_negatives < p.k_candidates, || "min_negatives must be below k_candidates".into())?;
        let t = &self.training;
        check(t.epochs > 0, || "training.epochs must be positive".into())?;
        check(t.batch_size > 0 && t.grad_accum_steps > 0, || {
            "batch_size and grad_accum_steps must be positive".into()
        })?;
        check(t.learning_rate.is_finite() && t.learning_rate >= 0.0, || "training.learning_rate must be ≥ 0".into())?;
        check(t.negatives_per_group == p.m, || {
            format!("training.negatives_per_group = {} but pipeline.m = {}", t.negatives_per_group, p.m)
        })?;
        check(self.eval.k > 0 && self.eval.max_pool > 0, || "eval.k and eval.max_pool must be positive".into())?;
        let sizes = &self.ablation.sizes;
        check(!sizes.is_empty() && sizes[0] > 0, || "ablation.sizes must be non-empty and positive".into())?;
        check(sizes.windows(2).all(|w| w[0] < w[1]), || "ablation.sizes must be strictly increasing".into())?;
        match &self.backends.encoder {
            EncoderBackendConfig::Toy(c) => {
                ToyEncoder::new(*c, 0).map(drop).map_err(|e| Error::Config(e.to_string()))?
            }
            EncoderBackendConfig::FrozenEmbedding { max_words } => {
                check(*max_words > 2, || "frozen encoder max_words must exceed 2".into())?
            }
        }
        Ok(())
    }

    /// SHA-256 of the resolved config, output directory excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn llm_backend(&self) -> Result<Box<dyn LlmBackend>> {
        Ok(match &self.backends.llm {
            LlmBackendConfig::Mock => Box::new(MockLlm::new()),
            LlmBackendConfig::Http(h) => Box::new(HttpLlm::new(h.clone())?),
        })
    }

    pub fn embedding_backend(&self) -> Result<Arc<dyn EmbeddingBackend>> {
        Ok(match &self.backends.embedding {
            EmbeddingBackendConfig::Mock { dim } => {
                Arc::new(MockEmbedder::with_dim(*dim, MockEmbedder::DEFAULT_HASH_SEED))
            }
            EmbeddingBackendConfig::Http { http, dim } => Arc::new(HttpEmbedder::new(http.clone(), *dim)?),
        })
    }

    /// A freshly initialized reranker from `backends.init_seed`.
    pub fn fresh_model(&self) -> Result<CrossEncoderModel> {
        match &self.backends.encoder {
            EncoderBackendConfig::Toy(c) => CrossEncoderModel::toy(*c, self.backends.init_seed),
            EncoderBackendConfig::FrozenEmbedding { max_words } => Ok(CrossEncoderModel::new(
                Box::new(FrozenEmbeddingEncoder::new(self.embedding_backend()?, *max_words)),
                self.backends.init_seed,
            )),
        }
    }

    /// Rebuild a trained model and its optimizer state from `ckpt`.
    pub fn restore_model(&self, ckpt: &Checkpoint) -> Result<(CrossEncoderModel, AdamState)> {
        match &self.backends.encoder {
            EncoderBackendConfig::Toy(_) => ckpt.restore(),
            EncoderBackendConfig::FrozenEmbedding { max_words } => {
                ckpt.restore_with(Box::new(FrozenEmbeddingEncoder::new(self.embedding_backend()?, *max_words)))
            }
        }
    }

    pub fn generation_template(&self) -> Result<PromptTemplate> {
        match &self.prompts.generation {
            Some(p) => PromptTemplate::load(p),
            None => Ok(PromptTemplate::default_generation()),
        }
    }

    pub fn relevance_template(&self) -> Result<PromptTemplate> {
        match &self.prompts.relevance {
            Some(p) => PromptTemplate::load(p),
            None => Ok(PromptTemplate::default_relevance()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> RunConfig {
        let mut c = RunConfig::default();
        c.corpus.synthetic = Some(DeskCorpusConfig::default());
        c
    }

    #[test]
    fn defaults_carry_protocol_constants() {
        let c = RunConfig::default();
        assert_eq!(c.pipeline.k_candidates, 30);
        assert_eq!(c.pipeline.threshold, 0.5);
        assert_eq!((c.pipeline.m, c.pipeline.min_negatives), (4, 4));
        assert_eq!((c.training.epochs, c.training.batch_size, c.training.grad_accum_steps), (10, 2, 2));
        assert_eq!((c.eval.k, c.eval.max_pool, c.eval.test_size), (10, 30, 500));
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = desk();
        let s = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&s).unwrap(), c);
        let partial = RunConfig::from_toml_str(
            "seed = 3\n[pipeline]\nn_seeds = 20\n[backends.llm]\nkind = \"http\"\nbase_url = \"http://x\"\n",
        )
        .unwrap();
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.pipeline.n_seeds, 20);
        assert_eq!(partial.pipeline.k_candidates, 30);
        match partial.backends.llm {
            LlmBackendConfig::Http(h) => {
                assert_eq!(h.base_url, "http://x");
                assert_eq!(h.max_retries, HttpConfig::default().max_retries);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_errors_are_config_errors() {
        assert!(desk().validate().is_ok());
        assert!(matches!(RunConfig::default().validate(), Err(Error::Config(_))));
        let mut c = desk();
        c.corpus.synthetic = None;
        c.corpus.path = Some("/definitely/missing.jsonl".into());
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = desk();
        c.pipeline.threshold = 1.0;
        assert!(c.validate().is_err());
        let mut c = desk();
        c.ablation.sizes = vec![50, 50];
        assert!(c.validate().is_err());
        let mut c = desk();
        c.pipeline.m = 5;
        c.training.negatives_per_group = 5;
        assert!(c.validate().is_err());
        assert!(RunConfig::from_toml_str("seed = \"x\"").is_err());
    }

    #[test]
    fn fingerprint_ignores_output_dir() {
        let a = desk();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.pipeline.n_seeds += 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn mock_override() {
        let mut c = desk();
        c.backends.llm = LlmBackendConfig::Http(HttpConfig::default());
        c.use_mock_backends();
        assert_eq!(c.backends.llm, LlmBackendConfig::Mock);
    }
}
