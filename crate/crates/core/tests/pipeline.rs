use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use synthrank_core::corpus::{load_corpus, TokenizerSpec};
use synthrank_core::experiment::*;
use synthrank_core::metrics::DatasetTag;
use synthrank_core::mining::{read_triplets, write_triplets};
use synthrank_core::retrieval::DenseIndex;
use synthrank_core::synthetic::DeskCorpusConfig;
use synthrank_core::trainer::{train_on_triplets, AdamState, Checkpoint};
use synthrank_core::{Error, ErrorKind};

#[allow(clippy::field_reassign_with_default)]
fn desk_config(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.output_dir = out.to_path_buf();
    c.corpus.synthetic = Some(DeskCorpusConfig::default());
    c.eval.test_size = 50;
    c.training.epochs = 5;
    c
}

#[test]
fn desk_run_matches_frozen_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(desk_config(dir.path()), RunOptions::default()).unwrap();
    let c = &m.counts;
    assert_eq!(c.corpus_documents, 200);
    assert_eq!(c.n_seeds, 150);
    assert_eq!(c.generated_queries, 150);
    assert_eq!(c.generation_failures, 0);
    assert_eq!(c.judgments, 150 * 30);
    assert_eq!(c.accepted, 132);
    assert_eq!(c.rejected.get("weak_positive"), Some(&18));
    assert_eq!(c.rejected.values().sum::<usize>(), 18);
    assert_eq!((c.train, c.test), (82, 50));
    assert!(c.reconciles());
    assert_eq!(m.completed.len(), Stage::ALL.len());
    for stage in Stage::ALL {
        for f in stage.outputs() {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
    assert_eq!(RunManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
    assert!(dir.path().join(RESOLVED_CONFIG_FILE).exists());
    assert!(!dir.path().join(LOCK_FILE).exists());
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        run_pipeline(desk_config(d.path()), RunOptions::default()).unwrap();
    }
    for f in
        [CORPUS_FILE, QUERIES_FILE, INDEX_FILE, CANDIDATES_FILE, JUDGMENTS_FILE, TRIPLETS_FILE, TRAIN_FILE, TEST_FILE]
    {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(desk_config(a.path()), RunOptions { resume: false, exec: synthrank_core::Exec::Sequential }).unwrap();
    run_pipeline(desk_config(b.path()), RunOptions::default()).unwrap();
    for f in [QUERIES_FILE, INDEX_FILE, TRIPLETS_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_skips_completed_stages() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(desk_config(dir.path()), RunOptions::default()).unwrap();
    let resumed = run_pipeline(desk_config(dir.path()), RunOptions { resume: true, ..Default::default() }).unwrap();
    // skipped stages keep their recorded timings
    assert_eq!(first, resumed);

    fs::remove_file(dir.path().join(TRIPLETS_FILE)).unwrap();
    let mut p = Pipeline::open(desk_config(dir.path()), RunOptions { resume: true, ..Default::default() }).unwrap();
    p.run_all().unwrap();
    assert_eq!(p.manifest().counts, first.counts);
    let timing = |m: &RunManifest, s: Stage| m.completed.iter().find(|r| r.stage == s).unwrap().seconds;
    assert_eq!(timing(p.manifest(), Stage::Scoring), timing(&first, Stage::Scoring));
    assert!(dir.path().join(TRIPLETS_FILE).exists());
}

#[test]
fn resume_refuses_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(desk_config(dir.path()), RunOptions::default()).unwrap();
    let mut changed = desk_config(dir.path());
    changed.pipeline.threshold = 0.6;
    let e = Pipeline::open(changed.clone(), RunOptions { resume: true, ..Default::default() }).err().unwrap();
    assert_eq!(e.kind(), ErrorKind::Config);
    assert!(Pipeline::open(changed, RunOptions::default()).is_ok());
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _held = Pipeline::open(desk_config(dir.path()), RunOptions::default()).unwrap();
    let e = Pipeline::open(desk_config(dir.path()), RunOptions::default()).err().unwrap();
    assert_eq!(e.kind(), ErrorKind::Config);
}

#[test]
fn missing_upstream_artifacts_fail_with_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(desk_config(dir.path()), RunOptions::default()).unwrap();
    let e = p.run_stage(Stage::Mining).unwrap_err();
    assert!(matches!(&e, Error::Stage { stage, .. } if *stage == "mining"), "{e:?}");
    assert_eq!(e.kind(), ErrorKind::Stage);
}

#[test]
fn artifacts_survive_write_read_write() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    run_pipeline(desk_config(p), RunOptions::default()).unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let s = scratch.path();

    let (corpus, _) = load_corpus(&p.join(CORPUS_FILE), 512, &TokenizerSpec::default()).unwrap();
    corpus.write_jsonl(&s.join("corpus.jsonl")).unwrap();
    assert_eq!(fs::read(p.join(CORPUS_FILE)).unwrap(), fs::read(s.join("corpus.jsonl")).unwrap());

    let triplets = read_triplets(&p.join(TRIPLETS_FILE)).unwrap();
    write_triplets(&s.join("t.jsonl"), &triplets).unwrap();
    assert_eq!(read_triplets(&s.join("t.jsonl")).unwrap(), triplets);
    assert_eq!(fs::read(p.join(TRIPLETS_FILE)).unwrap(), fs::read(s.join("t.jsonl")).unwrap());

    let index = DenseIndex::read(&p.join(INDEX_FILE)).unwrap();
    index.write(&s.join("i.idx")).unwrap();
    assert_eq!(DenseIndex::read(&s.join("i.idx")).unwrap(), index);
    assert_eq!(fs::read(p.join(INDEX_FILE)).unwrap(), fs::read(s.join("i.idx")).unwrap());

    let config = desk_config(p);
    let mut model = config.fresh_model().unwrap();
    let mut opt = AdamState::new(model.param_count());
    let mut tc = config.training.clone();
    tc.epochs = 1;
    train_on_triplets(&mut model, &mut opt, &triplets[..20], &corpus, &tc, None).unwrap();
    let ckpt = Checkpoint::capture(&model, &opt, &config.fingerprint());
    ckpt.write(&s.join("a.ckpt")).unwrap();
    let back = Checkpoint::read(&s.join("a.ckpt")).unwrap();
    assert_eq!(back, ckpt);
    back.write(&s.join("b.ckpt")).unwrap();
    assert_eq!(fs::read(s.join("a.ckpt")).unwrap(), fs::read(s.join("b.ckpt")).unwrap());
    let (restored, _) = back.restore().unwrap();
    let q = &triplets[0];
    let doc = &corpus.get(&q.positive_doc_id).unwrap().text;
    assert_eq!(restored.score_pair(&q.query_text, doc).unwrap(), model.score_pair(&q.query_text, doc).unwrap());
}

fn ablation_config(out: &Path) -> RunConfig {
    let mut c = desk_config(out);
    c.pipeline.n_seeds = 200;
    c.ablation.sizes = vec![25, 50, 100];
    c
}

#[test]
fn ablation_and_report_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let config = ablation_config(dir.path());
    let mut p = Pipeline::open(config.clone(), RunOptions::default()).unwrap();
    p.run_all().unwrap();
    let (train, _) = p.load_split().unwrap();
    assert!(train.len() >= 100, "{}", train.len());
    let corpus = p.load_corpus().unwrap();
    let sets = p.load_eval_sets().unwrap();
    let r = run_ablation(&config, &train, &corpus, &sets, synthrank_core::Exec::default()).unwrap();

    assert_eq!(r.rows.len(), 3 * 5 * 2);
    assert_eq!(r.base.len(), 2);
    for w in r.subsets.windows(2) {
        let small: BTreeSet<_> = w[0].iter().collect();
        let big: BTreeSet<_> = w[1].iter().collect();
        assert!(small.is_subset(&big) && small.len() < big.len());
    }
    for (tag, fps) in r.fingerprints() {
        assert_eq!(fps.len(), 1, "{tag}");
    }
    assert_eq!(r.domains(), [DatasetTag::InDomain, DatasetTag::OutDomain]);

    let out = tempfile::tempdir().unwrap();
    let files = emit_report(&r, ReportFormat::All, out.path()).unwrap();
    assert_eq!(files.len(), 3);
    let csv = fs::read_to_string(out.path().join(REPORT_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 5 * 2 * 4);
    let table = fs::read_to_string(out.path().join(REPORT_TABLE)).unwrap();
    let body: Vec<&str> = table.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| Metric")).collect();
    assert_eq!(body.len(), 6);
    for metric in ["MAP", "MRR", "NDCG"] {
        assert_eq!(body.iter().filter(|l| l.starts_with(&format!("| {metric} "))).count(), 2);
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.path().join(REPORT_JSON)).unwrap()).unwrap();
    let keys: Vec<&String> = json["series"].as_object().unwrap().keys().collect();
    assert_eq!(keys, ["100", "25", "50"]);
    assert!("pdf".parse::<ReportFormat>().is_err());

    r.write(&out.path().join(ABLATION_FILE)).unwrap();
    assert_eq!(AblationResult::read(&out.path().join(ABLATION_FILE)).unwrap(), r);
}
