use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{OutDomainSource, RunConfig};
use crate::corpus::{self, Corpus, IngestStats, RawRecord};
use crate::error::{Error, Result};
use crate::eval::{self, EvalSet};
use crate::exec::Exec;
use crate::jsonl;
use crate::metrics::DatasetTag;
use crate::mining::{self, Assembly, Rejection, RelevanceJudge, RelevanceJudgment, TrainingTriplet};
use crate::querygen::{self, QueryGenerator, SeedFailure, SyntheticQuery};
use crate::retrieval::{self, CandidateSet, DenseIndex};
use crate::synthetic;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SEEDS_FILE: &str = "seeds.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const GENERATION_FAILURES_FILE: &str = "generation_failures.jsonl";
pub const INDEX_FILE: &str = "index.idx";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";
pub const JUDGMENTS_FILE: &str = "judgments.jsonl";
pub const TRIPLETS_FILE: &str = "triplets.jsonl";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const EVAL_IN_FILE: &str = "eval_in_domain.jsonl";
pub const EVAL_OUT_FILE: &str = "eval_out_domain.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const LOCK_FILE: &str = "run.lock";

/// Reason recorded for seeds whose generated query duplicated an earlier one.
pub const DUPLICATE_QUERY: &str = "duplicate_query";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Seeds,
    Generation,
    Index,
    Retrieval,
    Scoring,
    Mining,
    Split,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Seeds,
        Stage::Generation,
        Stage::Index,
        Stage::Retrieval,
        Stage::Scoring,
        Stage::Mining,
        Stage::Split,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Seeds => "seeds",
            Stage::Generation => "generation",
            Stage::Index => "index",
            Stage::Retrieval => "retrieval",
            Stage::Scoring => "scoring",
            Stage::Mining => "mining",
            Stage::Split => "split",
        }
    }

    /// Files that must exist for the stage to count as done.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[CORPUS_FILE],
            Stage::Seeds => &[SEEDS_FILE],
            Stage::Generation => &[QUERIES_FILE, GENERATION_FAILURES_FILE],
            Stage::Index => &[INDEX_FILE],
            Stage::Retrieval => &[CANDIDATES_FILE],
            Stage::Scoring => &[JUDGMENTS_FILE],
            Stage::Mining => &[TRIPLETS_FILE, REJECTIONS_FILE],
            Stage::Split => &[TRAIN_FILE, TEST_FILE, EVAL_IN_FILE],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub corpus_documents: usize,
    pub ingest: IngestStats,
    pub n_seeds: usize,
    pub generated_queries: usize,
    pub generation_failures: usize,
    pub candidate_sets: usize,
    pub judgments: usize,
    pub accepted: usize,
    /// Seeds that produced no triplet, by reason; duplicate queries included.
    pub rejected: BTreeMap<String, usize>,
    pub train: usize,
    pub test: usize,
}

impl ManifestCounts {
    /// `n_seeds = accepted + Σ rejected + generation_failures`.
    pub fn reconciles(&self) -> bool {
        self.n_seeds == self.accepted + self.rejected.values().sum::<usize>() + self.generation_failures
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_fingerprint: String,
    pub completed: Vec<StageRecord>,
    pub counts: ManifestCounts,
}

impl RunManifest {
    pub fn is_complete(&self, stage: Stage) -> bool {
        self.completed.iter().any(|r| r.stage == stage)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Exclusive ownership of an output directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct SeedRecord {
    doc_id: String,
}

/// Deterministic disjoint split; `test_size` triplets go to the test side.
pub fn split_dataset(
    triplets: &[TrainingTriplet],
    test_size: usize,
    rng_seed: u64,
) -> Result<(Vec<TrainingTriplet>, Vec<TrainingTriplet>)> {
    if test_size >= triplets.len() && test_size > 0 {
        return Err(Error::Argument(format!(
            "test_size {test_size} must be below the number of triplets ({})",
            triplets.len()
        )));
    }
    if test_size == 0 {
        tracing::warn!("test_size = 0: every triplet goes to training, the test set is empty");
        return Ok((triplets.to_vec(), Vec::new()));
    }
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut is_test = vec![false; triplets.len()];
    for &i in &order[..test_size] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (t, &flag) in triplets.iter().zip(&is_test) {
        if flag {
            test.push(t.clone())
        } else {
            train.push(t.clone())
        }
    }
    Ok((train, test))
}

/// Options for one pipeline invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Skip stages already recorded as complete for this config.
    pub resume: bool,
    pub exec: Exec,
}

/// Stage runner over one output directory.
pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    options: RunOptions,
    manifest: RunManifest,
    _lock: RunLock,
}

impl Pipeline {
    /// Validate `config`, lock its output directory and write the resolved
    /// config. With `resume`, an existing manifest must carry the same
    /// config fingerprint.
    pub fn open(config: RunConfig, options: RunOptions) -> Result<Self> {
        config.validate()?;
        let out = config.output_dir.clone();
        let lock = RunLock::acquire(&out)?;
        let fingerprint = config.fingerprint();
        let manifest_path = out.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let m = RunManifest::read(&manifest_path)?;
            if m.config_fingerprint != fingerprint {
                if options.resume {
                    return Err(Error::Config(format!(
                        "{} holds a run with a different config; cannot resume",
                        out.display()
                    )));
                }
                RunManifest {
                    config_fingerprint: fingerprint,
                    completed: Vec::new(),
                    counts: ManifestCounts::default(),
                }
            } else {
                m
            }
        } else {
            RunManifest { config_fingerprint: fingerprint, completed: Vec::new(), counts: ManifestCounts::default() }
        };
        let resolved = out.join(RESOLVED_CONFIG_FILE);
        fs::write(&resolved, config.to_toml_string()?).map_err(|e| Error::io(&resolved, e))?;
        Ok(Self { config, out, options, manifest, _lock: lock })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn is_done(&self, stage: Stage) -> bool {
        self.manifest.is_complete(stage) && stage.outputs().iter().all(|f| self.path(f).exists())
    }

    /// Run every stage in order.
    pub fn run_all(&mut self) -> Result<&RunManifest> {
        for stage in Stage::ALL {
            self.run_stage(stage)?;
        }
        Ok(&self.manifest)
    }

    /// Run `stage` from its upstream artifacts. With `resume`, a stage
    /// already complete for this config is skipped.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        if self.options.resume && self.is_done(stage) {
            tracing::info!(stage = stage.name(), "already complete, skipping");
            return Ok(());
        }
        let started = Instant::now();
        tracing::info!(stage = stage.name(), "starting");
        self.execute(stage).map_err(|e| Error::stage(stage.name(), e))?;
        let seconds = started.elapsed().as_secs_f64();
        // A rerun invalidates everything downstream of it.
        self.manifest.completed.retain(|r| r.stage < stage);
        self.manifest.completed.push(StageRecord { stage, seconds });
        self.manifest.write(&self.path(MANIFEST_FILE))?;
        tracing::info!(stage = stage.name(), seconds, "finished");
        Ok(())
    }

    fn require(&self, stage: Stage) -> Result<()> {
        let missing: Vec<&str> = stage.outputs().iter().copied().filter(|f| !self.path(f).exists()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::State(format!("missing {} from the `{}` stage; run it first", missing.join(", "), stage)))
        }
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        self.require(Stage::Ingest)?;
        let c = &self.config.corpus;
        Ok(corpus::load_corpus(&self.path(CORPUS_FILE), c.max_tokens, &c.tokenizer)?.0)
    }

    pub fn load_queries(&self) -> Result<Vec<SyntheticQuery>> {
        self.require(Stage::Generation)?;
        querygen::read_queries(&self.path(QUERIES_FILE))
    }

    pub fn load_split(&self) -> Result<(Vec<TrainingTriplet>, Vec<TrainingTriplet>)> {
        self.require(Stage::Split)?;
        Ok((mining::read_triplets(&self.path(TRAIN_FILE))?, mining::read_triplets(&self.path(TEST_FILE))?))
    }

    /// In-domain and (when configured) out-domain evaluation sets.
    pub fn load_eval_sets(&self) -> Result<Vec<EvalSet>> {
        self.require(Stage::Split)?;
        let mut sets =
            vec![EvalSet::read_jsonl(&self.path(EVAL_IN_FILE), DatasetTag::InDomain, eval::LabelSource::Teacher)?];
        match &self.config.eval.out_domain {
            OutDomainSource::None => {}
            OutDomainSource::Synthetic(_) => sets.push(EvalSet::read_jsonl(
                &self.path(EVAL_OUT_FILE),
                DatasetTag::OutDomain,
                eval::LabelSource::Native,
            )?),
            OutDomainSource::File { label_source, .. } => {
                sets.push(EvalSet::read_jsonl(&self.path(EVAL_OUT_FILE), DatasetTag::OutDomain, *label_source)?)
            }
        }
        Ok(sets)
    }

    fn execute(&mut self, stage: Stage) -> Result<()> {
        let mut counts = std::mem::take(&mut self.manifest.counts);
        let result = self.execute_into(stage, &mut counts);
        self.manifest.counts = counts;
        result
    }

    fn execute_into(&self, stage: Stage, counts: &mut ManifestCounts) -> Result<()> {
        let exec = self.options.exec;
        match stage {
            Stage::Ingest => {
                let c = &self.config.corpus;
                let records: Vec<RawRecord> = match (&c.synthetic, &c.path) {
                    (Some(s), _) => synthetic::desk_corpus(s)?,
                    (None, Some(p)) => corpus::read_records(p)?,
                    (None, None) => unreachable!("validated"),
                };
                let (corpus, stats) = corpus::ingest_corpus(records, c.max_tokens, &c.tokenizer)?;
                if corpus.is_empty() {
                    return Err(Error::State("corpus has no usable documents".into()));
                }
                corpus.write_jsonl(&self.out.join(CORPUS_FILE))?;
                counts.corpus_documents = corpus.len();
                counts.ingest = stats;
            }
            Stage::Seeds => {
                let corpus = self.load_corpus()?;
                let seeds = corpus::sample_seed_documents(&corpus, self.config.pipeline.n_seeds, self.config.seed)?;
                let rows: Vec<SeedRecord> = seeds.iter().map(|d| SeedRecord { doc_id: d.doc_id.clone() }).collect();
                jsonl::write(&self.out.join(SEEDS_FILE), &rows)?;
                counts.n_seeds = rows.len();
            }
            Stage::Generation => {
                let corpus = self.load_corpus()?;
                self.require(Stage::Seeds)?;
                let seed_rows: Vec<SeedRecord> = jsonl::read(&self.out.join(SEEDS_FILE))?;
                let seeds = seed_rows
                    .iter()
                    .map(|r| {
                        corpus
                            .get(&r.doc_id)
                            .cloned()
                            .ok_or_else(|| Error::State(format!("seed `{}` not in corpus", r.doc_id)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let backend = self.config.llm_backend()?;
                let generator = QueryGenerator::new(self.config.generation_template()?, self.config.backends.decode);
                let batch =
                    generator.generate_batch(backend.as_ref(), &seeds, self.config.pipeline.dedupe_queries, exec)?;
                querygen::write_queries(&self.out.join(QUERIES_FILE), &batch.queries)?;
                jsonl::write::<SeedFailure>(&self.out.join(GENERATION_FAILURES_FILE), &batch.failures)?;
                counts.n_seeds = seeds.len();
                counts.generated_queries = batch.queries.len();
                counts.generation_failures = batch.failures.len();
                counts.rejected.clear();
                if batch.duplicates_dropped > 0 {
                    counts.rejected.insert(DUPLICATE_QUERY.into(), batch.duplicates_dropped);
                }
            }
            Stage::Index => {
                let corpus = self.load_corpus()?;
                let backend = self.config.embedding_backend()?;
                retrieval::build_index(backend.as_ref(), &corpus, exec)?.write(&self.out.join(INDEX_FILE))?;
            }
            Stage::Retrieval => {
                let queries = self.load_queries()?;
                self.require(Stage::Index)?;
                let index = DenseIndex::read(&self.out.join(INDEX_FILE))?;
                let backend = self.config.embedding_backend()?;
                let k = self.config.pipeline.k_candidates;
                let sets = exec.try_map(&queries, |q| {
                    retrieval::retrieve_top_k(&index, backend.as_ref(), q, k, Exec::Sequential)
                })?;
                retrieval::write_candidates(&self.out.join(CANDIDATES_FILE), &sets)?;
                counts.candidate_sets = sets.len();
            }
            Stage::Scoring => {
                let corpus = self.load_corpus()?;
                let queries = self.load_queries()?;
                self.require(Stage::Retrieval)?;
                let sets = retrieval::read_candidates(&self.out.join(CANDIDATES_FILE))?;
                let judge = RelevanceJudge::new(self.config.relevance_template()?, self.config.backends.labels.clone());
                let backend = self.config.llm_backend()?;
                let by_id: BTreeMap<&str, &CandidateSet> = sets.iter().map(|s| (s.query_id.as_str(), s)).collect();
                let mut all = Vec::new();
                for q in &queries {
                    let set = by_id
                        .get(q.query_id.as_str())
                        .ok_or_else(|| Error::State(format!("no candidates for {}", q.query_id)))?;
                    all.extend(judge.score_candidates(backend.as_ref(), q, set, &corpus, exec)?);
                }
                jsonl::write(&self.out.join(JUDGMENTS_FILE), &all)?;
                counts.judgments = all.len();
            }
            Stage::Mining => {
                let queries = self.load_queries()?;
                self.require(Stage::Scoring)?;
                let judgments: Vec<RelevanceJudgment> = jsonl::read(&self.out.join(JUDGMENTS_FILE))?;
                let mut by_query: BTreeMap<&str, Vec<RelevanceJudgment>> = BTreeMap::new();
                for j in &judgments {
                    by_query.entry(j.query_id.as_str()).or_default().push(j.clone());
                }
                let policy = self.config.pipeline.mining_policy();
                let mut triplets = Vec::new();
                let mut rejections: Vec<Rejection> = Vec::new();
                for q in &queries {
                    let js = by_query.get(q.query_id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
                    match mining::assemble_triplet(q, js, &policy)? {
                        Assembly::Accepted(t) => triplets.push(t),
                        Assembly::Rejected(r) => rejections.push(r),
                    }
                }
                mining::write_triplets(&self.out.join(TRIPLETS_FILE), &triplets)?;
                mining::write_rejections(&self.out.join(REJECTIONS_FILE), &rejections)?;
                counts.accepted = triplets.len();
                counts.rejected.retain(|k, _| k == DUPLICATE_QUERY);
                for r in &rejections {
                    *counts.rejected.entry(r.reason.to_string()).or_default() += 1;
                }
            }
            Stage::Split => {
                let corpus = self.load_corpus()?;
                self.require(Stage::Mining)?;
                let triplets = mining::read_triplets(&self.out.join(TRIPLETS_FILE))?;
                let (train, test) = split_dataset(&triplets, self.config.eval.test_size, self.config.seed)?;
                mining::write_triplets(&self.out.join(TRAIN_FILE), &train)?;
                mining::write_triplets(&self.out.join(TEST_FILE), &test)?;
                eval::eval_set_from_triplets(&test, &corpus)?.write_jsonl(&self.out.join(EVAL_IN_FILE))?;
                let out_domain = match &self.config.eval.out_domain {
                    OutDomainSource::None => None,
                    OutDomainSource::Synthetic(c) => Some(synthetic::out_domain_eval_set(c)?),
                    OutDomainSource::File { path, label_source } => {
                        Some(EvalSet::read_jsonl(path, DatasetTag::OutDomain, *label_source)?)
                    }
                };
                if let Some(set) = out_domain {
                    set.write_jsonl(&self.out.join(EVAL_OUT_FILE))?;
                }
                counts.train = train.len();
                counts.test = test.len();
            }
        }
        Ok(())
    }
}

/// Open `config.output_dir`, run every stage and return the manifest.
pub fn run_pipeline(config: RunConfig, options: RunOptions) -> Result<RunManifest> {
    let mut p = Pipeline::open(config, options)?;
    p.run_all()?;
    Ok(p.manifest.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn triplets(n: usize) -> Vec<TrainingTriplet> {
        (0..n)
            .map(|i| TrainingTriplet {
                query_id: format!("q{i}"),
                query_text: "x".into(),
                positive_doc_id: "p".into(),
                negative_doc_ids: vec![],
                scores: BTreeMap::new(),
                threshold: 0.5,
                seed_doc_id: "p".into(),
            })
            .collect()
    }

    #[test]
    fn split_shapes() {
        let t = triplets(1000);
        let (train, test) = split_dataset(&t, 500, 3).unwrap();
        assert_eq!((train.len(), test.len()), (500, 500));
        assert_eq!(split_dataset(&t, 500, 3).unwrap(), (train.clone(), test.clone()));
        let mut ids: Vec<_> = train.iter().chain(&test).map(|t| t.query_id.clone()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 1000);
        let (all, none) = split_dataset(&t, 0, 3).unwrap();
        assert_eq!((all.len(), none.len()), (1000, 0));
        assert!(matches!(split_dataset(&t, 1000, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = RunLock::acquire(dir.path()).unwrap();
        assert!(matches!(RunLock::acquire(dir.path()), Err(Error::Config(_))));
        drop(a);
        assert!(RunLock::acquire(dir.path()).is_ok());
    }
}
