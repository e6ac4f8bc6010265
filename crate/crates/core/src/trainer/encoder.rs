//! Sequence encoders producing the classification vector of a joint
//! `CLS ; query ; SEP ; document` input.

use std::any::Any;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retrieval::{embed, EmbeddingBackend};
use crate::text;

/// Output of one forward pass, with whatever the encoder needs for backward.
pub struct EncoderPass {
    pub cls: Vec<f64>,
    /// The document tail was cut to fit the encoder's maximum length.
    pub truncated: bool,
    cache: Box<dyn Any + Send + Sync>,
}

/// Pluggable encoder. Trainable encoders expose their parameters as one flat
/// slice and accumulate gradients into a slice of the same layout.
pub trait PairEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn output_dim(&self) -> usize;
    /// Constructor parameters, stored in checkpoints.
    fn config_json(&self) -> serde_json::Value;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn forward(&self, query: &str, doc: &str) -> Result<EncoderPass>;
    fn backward(&self, pass: &EncoderPass, grad_cls: &[f64], grad_params: &mut [f64]);
    fn boxed_clone(&self) -> Box<dyn PairEncoder>;
}

const CLS_ID: usize = 0;
const SEP_ID: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyEncoderConfig {
    /// Hash buckets for word ids, two of which are reserved for CLS/SEP.
    pub vocab_buckets: usize,
    pub embed_dim: usize,
    pub d_model: usize,
    /// Maximum joint sequence length, CLS and SEP included.
    pub max_len: usize,
    pub hash_seed: u64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        Self { vocab_buckets: 512, embed_dim: 16, d_model: 16, max_len: 512, hash_seed: 0x70e }
    }
}

/// Small trainable encoder for desk-scale runs.
///
/// Token embeddings `E` are pooled two ways: the mean over the whole joint
/// sequence, and the elementwise product of the query-segment mean with the
/// document-segment mean. The concatenation `u` goes through one dense layer:
/// `cls = tanh(P·u + b)`. Parameters are laid out as `[E | P | b]`.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    config: ToyEncoderConfig,
    params: Vec<f64>,
}

struct ToyCache {
    query_ids: Vec<usize>,
    doc_ids: Vec<usize>,
    u: Vec<f64>,
    q_mean: Vec<f64>,
    d_mean: Vec<f64>,
}

impl ToyEncoder {
    pub const ID: &'static str = "toy-pooled-v1";

    pub fn new(config: ToyEncoderConfig, init_seed: u64) -> Result<Self> {
        if config.vocab_buckets < 3 || config.embed_dim == 0 || config.d_model == 0 || config.max_len < 4 {
            return Err(Error::Config(format!("invalid toy encoder config {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let h = config.embed_dim;
        let mut params = Vec::with_capacity(Self::param_count(&config));
        params.extend((0..config.vocab_buckets * h).map(|_| rng.gen_range(-1.0..1.0)));
        let scale = 1.0 / ((2 * h) as f64).sqrt();
        params.extend((0..config.d_model * 2 * h).map(|_| rng.gen_range(-scale..scale)));
        params.extend(std::iter::repeat_n(0.0, config.d_model));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ToyEncoderConfig, params: Vec<f64>) -> Result<Self> {
        if params.len() != Self::param_count(&config) {
            return Err(Error::Config(format!(
                "toy encoder expects {} parameters, got {}",
                Self::param_count(&config),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ToyEncoderConfig {
        &self.config
    }

    pub fn param_count(c: &ToyEncoderConfig) -> usize {
        c.vocab_buckets * c.embed_dim + c.d_model * 2 * c.embed_dim + c.d_model
    }

    fn token_id(&self, word: &str) -> usize {
        2 + (text::fnv1a(self.config.hash_seed, word.as_bytes()) % (self.config.vocab_buckets as u64 - 2)) as usize
    }

    fn offsets(&self) -> (usize, usize) {
        let e_len = self.config.vocab_buckets * self.config.embed_dim;
        (e_len, e_len + self.config.d_model * 2 * self.config.embed_dim)
    }

    fn row(&self, id: usize) -> &[f64] {
        let h = self.config.embed_dim;
        &self.params[id * h..(id + 1) * h]
    }

    fn mean_rows(&self, ids: &[usize]) -> Vec<f64> {
        let mut m = vec![0.0; self.config.embed_dim];
        if ids.is_empty() {
            return m;
        }
        for &id in ids {
            for (acc, v) in m.iter_mut().zip(self.row(id)) {
                *acc += v;
            }
        }
        let n = ids.len() as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

impl PairEncoder for ToyEncoder {
    fn id(&self) -> &str {
        Self::ID
    }

    fn output_dim(&self) -> usize {
        self.config.d_model
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(self.config).expect("plain struct")
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, query: &str, doc: &str) -> Result<EncoderPass> {
        let query_ids: Vec<usize> = text::words(query).iter().map(|w| self.token_id(w)).collect();
        let budget = self.config.max_len.checked_sub(2 + query_ids.len()).filter(|&b| b > 0).ok_or_else(|| {
            Error::Argument(format!("query of {} tokens leaves no room for the document", query_ids.len()))
        })?;
        let mut doc_ids: Vec<usize> = text::words(doc).iter().map(|w| self.token_id(w)).collect();
        let truncated = doc_ids.len() > budget;
        doc_ids.truncate(budget);

        let h = self.config.embed_dim;
        let n_joint = (2 + query_ids.len() + doc_ids.len()) as f64;
        let mut joint = vec![0.0; h];
        for &id in [CLS_ID, SEP_ID].iter().chain(&query_ids).chain(&doc_ids) {
            for (acc, v) in joint.iter_mut().zip(self.row(id)) {
                *acc += v;
            }
        }
        joint.iter_mut().for_each(|x| *x /= n_joint);
        let q_mean = self.mean_rows(&query_ids);
        let d_mean = self.mean_rows(&doc_ids);

        let mut u = joint;
        u.extend(q_mean.iter().zip(&d_mean).map(|(a, b)| a * b));

        let (p_off, b_off) = self.offsets();
        let two_h = 2 * h;
        let cls: Vec<f64> = (0..self.config.d_model)
            .map(|r| {
                let w = &self.params[p_off + r * two_h..p_off + (r + 1) * two_h];
                let pre = self.params[b_off + r] + w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
                pre.tanh()
            })
            .collect();

        Ok(EncoderPass { cls, truncated, cache: Box::new(ToyCache { query_ids, doc_ids, u, q_mean, d_mean }) })
    }

    fn backward(&self, pass: &EncoderPass, grad_cls: &[f64], grad: &mut [f64]) {
        let cache = pass.cache.downcast_ref::<ToyCache>().expect("pass produced by this encoder");
        let h = self.config.embed_dim;
        let two_h = 2 * h;
        let (p_off, b_off) = self.offsets();

        let mut grad_u = vec![0.0; two_h];
        for r in 0..self.config.d_model {
            let g_pre = grad_cls[r] * (1.0 - pass.cls[r] * pass.cls[r]);
            if g_pre == 0.0 {
                continue;
            }
            grad[b_off + r] += g_pre;
            let row = p_off + r * two_h;
            for c in 0..two_h {
                grad[row + c] += g_pre * cache.u[c];
                grad_u[c] += g_pre * self.params[row + c];
            }
        }

        let n_joint = (2 + cache.query_ids.len() + cache.doc_ids.len()) as f64;
        let mut add_to_rows = |ids: &mut dyn Iterator<Item = usize>, g: &dyn Fn(usize) -> f64| {
            for id in ids {
                for j in 0..h {
                    grad[id * h + j] += g(j);
                }
            }
        };
        let (g_joint, g_inter) = grad_u.split_at(h);
        add_to_rows(
            &mut [CLS_ID, SEP_ID]
                .into_iter()
                .chain(cache.query_ids.iter().copied())
                .chain(cache.doc_ids.iter().copied()),
            &|j| g_joint[j] / n_joint,
        );
        if !cache.query_ids.is_empty() {
            let nq = cache.query_ids.len() as f64;
            add_to_rows(&mut cache.query_ids.iter().copied(), &|j| g_inter[j] * cache.d_mean[j] / nq);
        }
        if !cache.doc_ids.is_empty() {
            let nd = cache.doc_ids.len() as f64;
            add_to_rows(&mut cache.doc_ids.iter().copied(), &|j| g_inter[j] * cache.q_mean[j] / nd);
        }
    }

    fn boxed_clone(&self) -> Box<dyn PairEncoder> {
        Box::new(self.clone())
    }
}

/// Adapter over an external embedding service: the joint text is embedded
/// by a frozen remote model and only the score head trains.
#[derive(Clone)]
pub struct FrozenEmbeddingEncoder {
    backend: Arc<dyn EmbeddingBackend>,
    max_words: usize,
}

impl FrozenEmbeddingEncoder {
    pub const ID: &'static str = "frozen-embedding-v1";

    pub fn new(backend: Arc<dyn EmbeddingBackend>, max_words: usize) -> Self {
        Self { backend, max_words }
    }
}

impl PairEncoder for FrozenEmbeddingEncoder {
    fn id(&self) -> &str {
        Self::ID
    }

    fn output_dim(&self) -> usize {
        self.backend.dim()
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::json!({ "backend_id": self.backend.id(), "max_words": self.max_words })
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn forward(&self, query: &str, doc: &str) -> Result<EncoderPass> {
        let q_len = query.split_whitespace().count();
        let budget = self.max_words.saturating_sub(q_len + 2);
        if budget == 0 {
            return Err(Error::Argument("query leaves no room for the document".into()));
        }
        let words: Vec<&str> = doc.split_whitespace().collect();
        let truncated = words.len() > budget;
        let joint = format!("[CLS] {query} [SEP] {}", words[..words.len().min(budget)].join(" "));
        let v = embed(self.backend.as_ref(), &joint)?;
        Ok(EncoderPass { cls: v.values().iter().map(|&x| f64::from(x)).collect(), truncated, cache: Box::new(()) })
    }

    fn backward(&self, _: &EncoderPass, _: &[f64], _: &mut [f64]) {}

    fn boxed_clone(&self) -> Box<dyn PairEncoder> {
        Box::new(self.clone())
    }
}
