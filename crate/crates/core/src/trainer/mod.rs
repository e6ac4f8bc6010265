//! Cross-encoder scoring and LCE fine-tuning.

mod checkpoint;
mod encoder;
mod loss;
mod optim;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::metrics::MetricReport;
use crate::mining::TrainingTriplet;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use encoder::{EncoderPass, FrozenEmbeddingEncoder, PairEncoder, ToyEncoder, ToyEncoderConfig};
pub use loss::{group_loss, lce_loss, lce_loss_with_grad, GroupScores};
pub use optim::AdamState;

/// Encoder plus a linear score head over its classification vector.
pub struct CrossEncoderModel {
    encoder: Box<dyn PairEncoder>,
    head: Vec<f64>,
    init_seed: u64,
    truncations: AtomicUsize,
}

impl Clone for CrossEncoderModel {
    fn clone(&self) -> Self {
        Self {
            encoder: self.encoder.boxed_clone(),
            head: self.head.clone(),
            init_seed: self.init_seed,
            truncations: AtomicUsize::new(self.truncations.load(Ordering::Relaxed)),
        }
    }
}

impl std::fmt::Debug for CrossEncoderModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CrossEncoderModel")
            .field("encoder", &self.encoder.id())
            .field("d_model", &self.head.len())
            .field("init_seed", &self.init_seed)
            .finish()
    }
}

impl CrossEncoderModel {
    /// Head initialized uniformly in `±1/√d_model` from `init_seed`.
    pub fn new(encoder: Box<dyn PairEncoder>, init_seed: u64) -> Self {
        let d = encoder.output_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed ^ 0x5c0e_4ead);
        let head = (0..d).map(|_| rng.gen_range(-scale..scale)).collect();
        Self { encoder, head, init_seed, truncations: AtomicUsize::new(0) }
    }

    pub fn toy(config: ToyEncoderConfig, init_seed: u64) -> Result<Self> {
        Ok(Self::new(Box::new(ToyEncoder::new(config, init_seed)?), init_seed))
    }

    pub fn with_head(encoder: Box<dyn PairEncoder>, head: Vec<f64>, init_seed: u64) -> Result<Self> {
        if head.len() != encoder.output_dim() {
            return Err(Error::Config(format!(
                "score head has length {} but encoder outputs {}",
                head.len(),
                encoder.output_dim()
            )));
        }
        Ok(Self { encoder, head, init_seed, truncations: AtomicUsize::new(0) })
    }

    pub fn encoder(&self) -> &dyn PairEncoder {
        self.encoder.as_ref()
    }

    pub fn d_model(&self) -> usize {
        self.head.len()
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn set_head(&mut self, head: Vec<f64>) -> Result<()> {
        if head.len() != self.head.len() {
            return Err(Error::Argument("score head length mismatch".into()));
        }
        self.head = head;
        Ok(())
    }

    /// Encoder parameters followed by the head.
    pub fn param_count(&self) -> usize {
        self.encoder.params().len() + self.head.len()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.encoder.params().to_vec();
        p.extend_from_slice(&self.head);
        p
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Argument("parameter vector length mismatch".into()));
        }
        let n = self.encoder.params().len();
        self.encoder.params_mut().copy_from_slice(&params[..n]);
        self.head.copy_from_slice(&params[n..]);
        Ok(())
    }

    /// Number of scored pairs whose document was truncated.
    pub fn truncation_count(&self) -> usize {
        self.truncations.load(Ordering::Relaxed)
    }

    fn forward(&self, query: &str, doc: &str) -> Result<(f64, EncoderPass)> {
        if query.trim().is_empty() || doc.trim().is_empty() {
            return Err(Error::Argument("query and document must be non-empty".into()));
        }
        let pass = self.encoder.forward(query, doc)?;
        if pass.truncated {
            self.truncations.fetch_add(1, Ordering::Relaxed);
        }
        let score = pass.cls.iter().zip(&self.head).map(|(a, b)| a * b).sum();
        Ok((score, pass))
    }

    pub fn score_pair(&self, query: &str, doc: &str) -> Result<f64> {
        self.forward(query, doc).map(|(s, _)| s)
    }

    /// LCE loss of `batch` and its gradient over [`Self::params_flat`].
    pub fn loss_and_grad(&self, batch: &TrainingBatch) -> Result<(f64, Vec<f64>)> {
        let n_enc = self.encoder.params().len();
        let mut grad = vec![0.0; self.param_count()];
        let mut passes = Vec::with_capacity(batch.groups.len());
        let mut scores = Vec::with_capacity(batch.groups.len());
        for g in &batch.groups {
            let (pos, pos_pass) = self.forward(&g.query_text, &g.positive.text)?;
            let mut neg_scores = Vec::with_capacity(g.negatives.len());
            let mut group_passes = vec![pos_pass];
            for n in &g.negatives {
                let (s, p) = self.forward(&g.query_text, &n.text)?;
                neg_scores.push(s);
                group_passes.push(p);
            }
            scores.push(GroupScores::new(pos, neg_scores));
            passes.push(group_passes);
        }
        let (loss, score_grads) = lce_loss_with_grad(&scores)?;
        let (enc_grad, head_grad) = grad.split_at_mut(n_enc);
        for (group_passes, sg) in passes.iter().zip(&score_grads) {
            let per_doc = std::iter::once(sg.positive).chain(sg.negatives.iter().copied());
            for (pass, g) in group_passes.iter().zip(per_doc) {
                for (hg, c) in head_grad.iter_mut().zip(&pass.cls) {
                    *hg += g * c;
                }
                let grad_cls: Vec<f64> = self.head.iter().map(|w| g * w).collect();
                self.encoder.backward(pass, &grad_cls, enc_grad);
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!("non-finite loss or gradient (loss = {loss})")));
        }
        Ok((loss, grad))
    }
}

pub fn score_pair(model: &CrossEncoderModel, query: &str, doc: &str) -> Result<f64> {
    model.score_pair(query, doc)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupDoc {
    pub doc_id: String,
    pub text: String,
}

/// One positive and `m` negatives for a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingGroup {
    pub query_id: String,
    pub query_text: String,
    pub positive: GroupDoc,
    pub negatives: Vec<GroupDoc>,
}

/// Positive plus the first `m` (hardest) negatives of `triplet`.
pub fn build_group(triplet: &TrainingTriplet, m: usize, corpus: &Corpus) -> Result<TrainingGroup> {
    if m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    if triplet.negative_doc_ids.len() < m {
        return Err(Error::Group(format!(
            "{} has {} negatives, need {m}",
            triplet.query_id,
            triplet.negative_doc_ids.len()
        )));
    }
    let fetch = |id: &str| {
        corpus
            .get(id)
            .map(|d| GroupDoc { doc_id: d.doc_id.clone(), text: d.text.clone() })
            .ok_or_else(|| Error::State(format!("`{id}` is not in the corpus")))
    };
    Ok(TrainingGroup {
        query_id: triplet.query_id.clone(),
        query_text: triplet.query_text.clone(),
        positive: fetch(&triplet.positive_doc_id)?,
        negatives: triplet.negative_doc_ids[..m].iter().map(|id| fetch(id)).collect::<Result<_>>()?,
    })
}

/// Groups sharing one loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub groups: Vec<TrainingGroup>,
}

impl TrainingBatch {
    pub fn new(groups: Vec<TrainingGroup>) -> Result<Self> {
        let Some(first) = groups.first() else {
            return Err(Error::Argument("empty training batch".into()));
        };
        let m = first.negatives.len();
        if m == 0 || groups.iter().any(|g| g.negatives.len() != m) {
            return Err(Error::Argument("all groups in a batch need the same m ≥ 1".into()));
        }
        Ok(Self { groups })
    }
}

/// One optimizer update on `batch`; returns the pre-update loss.
pub fn train_step(
    model: &mut CrossEncoderModel,
    batch: &TrainingBatch,
    optimizer: &mut AdamState,
    learning_rate: f64,
) -> Result<f64> {
    let (loss, grad) = model.loss_and_grad(batch)?;
    let mut params = model.params_flat();
    optimizer.update(&mut params, &grad, learning_rate);
    model.set_params_flat(&params)?;
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub negatives_per_group: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 2,
            grad_accum_steps: 2,
            negatives_per_group: 4,
            learning_rate: 0.01,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch_size(&self) -> usize {
        self.batch_size * self.grad_accum_steps
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum_steps == 0 || self.negatives_per_group == 0 {
            return Err(Error::Config("batch_size, grad_accum_steps and m must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval: Vec<MetricReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        jsonl::write(path, &self.epochs)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Ok(Self { epochs: jsonl::read(path)? })
    }
}

/// Called after every epoch with the epoch id and a read-only model.
pub type EvalHook<'a> = dyn FnMut(usize, &CrossEncoderModel) -> Result<Vec<MetricReport>> + 'a;

/// Fine-tune on fixed groups. Each epoch shuffles the groups, splits them
/// into micro-batches of `batch_size`, and applies one update per
/// `grad_accum_steps` micro-batches using their averaged gradient.
pub fn train(
    model: &mut CrossEncoderModel,
    optimizer: &mut AdamState,
    groups: &[TrainingGroup],
    config: &TrainConfig,
    mut eval_hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainingHistory> {
    config.validate()?;
    if groups.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    if let Some(g) = groups.iter().find(|g| g.negatives.len() != config.negatives_per_group) {
        return Err(Error::Group(format!(
            "{} has {} negatives, config expects {}",
            g.query_id,
            g.negatives.len(),
            config.negatives_per_group
        )));
    }
    if optimizer.m.len() != model.param_count() {
        return Err(Error::Argument("optimizer state does not match the model".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut history = TrainingHistory::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let micro: Vec<TrainingBatch> = order
            .chunks(config.batch_size)
            .map(|c| TrainingBatch::new(c.iter().map(|&i| groups[i].clone()).collect()))
            .collect::<Result<_>>()?;

        let mut loss_sum = 0.0;
        for window in micro.chunks(config.grad_accum_steps) {
            let mut acc = vec![0.0; model.param_count()];
            for batch in window {
                let (loss, grad) = model.loss_and_grad(batch)?;
                loss_sum += loss * batch.groups.len() as f64;
                for (a, g) in acc.iter_mut().zip(&grad) {
                    *a += g;
                }
            }
            let k = window.len() as f64;
            acc.iter_mut().for_each(|a| *a /= k);
            let mut params = model.params_flat();
            optimizer.update(&mut params, &acc, config.learning_rate);
            model.set_params_flat(&params)?;
        }

        let mean_loss = loss_sum / groups.len() as f64;
        let eval = match eval_hook.as_mut() {
            Some(hook) => hook(epoch, model)?,
            None => Vec::new(),
        };
        tracing::info!(epoch, mean_loss, "epoch finished");
        history.epochs.push(EpochRecord { epoch, mean_loss, eval });
    }
    Ok(history)
}

/// Build groups from triplets, then [`train`].
pub fn train_on_triplets(
    model: &mut CrossEncoderModel,
    optimizer: &mut AdamState,
    triplets: &[TrainingTriplet],
    corpus: &Corpus,
    config: &TrainConfig,
    eval_hook: Option<&mut EvalHook<'_>>,
) -> Result<TrainingHistory> {
    if triplets.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let groups =
        triplets.iter().map(|t| build_group(t, config.negatives_per_group, corpus)).collect::<Result<Vec<_>>>()?;
    train(model, optimizer, &groups, config, eval_hook)
}
