use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use synthrank_core::corpus::sample_seed_documents;
use synthrank_core::eval::evaluate_model;
use synthrank_core::experiment::{
    emit_report, run_ablation, AblationResult, Pipeline, ReportFormat, RunConfig, RunManifest, RunOptions, Stage,
    ABLATION_FILE,
};
use synthrank_core::metrics::MetricReport;
use synthrank_core::querygen::QueryGenerator;
use synthrank_core::trainer::{train_on_triplets, AdamState, Checkpoint, CrossEncoderModel, EvalHook};
use synthrank_core::{Error, ErrorKind, Exec, Result};

const CHECKPOINT_FILE: &str = "model.ckpt";
const HISTORY_FILE: &str = "history.jsonl";
const EVAL_REPORT_FILE: &str = "eval_report.json";

#[derive(Parser)]
#[command(name = "synthrank", version, about = "Query-less fine-tuning pipeline for cross-encoder rerankers")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run config; missing keys take their defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Skip stages already complete for this config
    #[arg(long, global = true)]
    resume: bool,
    /// Replace the LLM and embedding backends with the deterministic mocks
    #[arg(long, global = true)]
    mock_backends: bool,
    /// Seed every seeded component with N
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Disable the data-parallel inner loops
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and normalize the corpus
    Ingest,
    /// Sample seed documents and generate one synthetic query per seed
    Genqueries {
        /// Print the first few rendered prompts without calling the backend
        #[arg(long)]
        dry_run: bool,
        #[arg(long, default_value_t = 3)]
        limit: usize,
    },
    /// Embed the corpus into the dense index
    Index,
    /// Retrieve top-k candidates for every query
    Retrieve,
    /// Score candidates with the LLM judge and mine triplets
    Mine,
    /// Split triplets into train/test and write the evaluation sets
    Split,
    /// Run every pipeline stage in order
    Run,
    /// Train a reranker on the training split
    Train,
    /// Evaluate a checkpoint (or the untrained model) on the evaluation sets
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a freshly initialized model instead of a checkpoint
        #[arg(long, conflicts_with = "checkpoint")]
        untrained: bool,
    },
    /// Train one fresh model per subset size with per-epoch evaluation
    Ablate {
        /// Override `ablation.sizes`
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Override `training.epochs`
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render reports from a saved ablation result
    Report {
        #[arg(long, default_value = "all", value_parser = parse_format)]
        format: ReportFormat,
    },
    /// Print the fully resolved config
    ShowConfig,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut config = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &g.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = g.seed {
        config.set_seed(seed);
    }
    if g.mock_backends {
        config.use_mock_backends();
    }
    Ok(config)
}

fn exec(g: &Global) -> Exec {
    if g.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    }
}

fn open(config: RunConfig, g: &Global) -> Result<Pipeline> {
    Pipeline::open(config, RunOptions { resume: g.resume, exec: exec(g) })
}

fn run_stages(p: &mut Pipeline, stages: &[Stage]) -> Result<()> {
    for &s in stages {
        p.run_stage(s)?;
    }
    print_counts(p.manifest());
    Ok(())
}

fn print_counts(m: &RunManifest) {
    let c = &m.counts;
    println!("documents   {}", c.corpus_documents);
    println!("seeds       {}", c.n_seeds);
    println!("queries     {} ({} failed)", c.generated_queries, c.generation_failures);
    println!("judgments   {}", c.judgments);
    println!("accepted    {}", c.accepted);
    for (reason, n) in &c.rejected {
        println!("rejected    {n} {reason}");
    }
    println!("train/test  {}/{}", c.train, c.test);
}

fn print_reports(reports: &[MetricReport]) {
    for r in reports {
        let a = &r.aggregate;
        println!(
            "{:<10} n={:<4} P@{k}={:.4} MAP@{k}={:.4} MRR@{k}={:.4} nDCG@{k}={:.4}",
            r.dataset_tag.to_string(),
            r.n_queries,
            a.precision,
            a.map,
            a.mrr,
            a.ndcg,
            k = r.k
        );
    }
}

fn evaluate_all(p: &Pipeline, model: &CrossEncoderModel, exec: Exec) -> Result<Vec<MetricReport>> {
    let cfg = p.config();
    p.load_eval_sets()?.iter().map(|set| evaluate_model(model, set, cfg.eval.k, cfg.eval.max_pool, exec)).collect()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn genqueries_dry_run(p: &Pipeline, limit: usize) -> Result<()> {
    let cfg = p.config();
    let corpus = p.load_corpus()?;
    let seeds = sample_seed_documents(&corpus, cfg.pipeline.n_seeds.min(corpus.len()), cfg.seed)?;
    let generator = QueryGenerator::new(cfg.generation_template()?, cfg.backends.decode);
    for seed in seeds.iter().take(limit) {
        println!("--- {} ---", seed.doc_id);
        println!("{}", generator.prompt_for(seed)?.text);
    }
    Ok(())
}

fn train(p: &Pipeline, exec: Exec) -> Result<()> {
    let cfg = p.config();
    let corpus = p.load_corpus()?;
    let (train, _) = p.load_split()?;
    let mut model = cfg.fresh_model()?;
    let mut optimizer = AdamState::new(model.param_count());
    let mut hook = |_: usize, m: &CrossEncoderModel| evaluate_all(p, m, exec);
    let history = train_on_triplets(
        &mut model,
        &mut optimizer,
        &train,
        &corpus,
        &cfg.training,
        Some(&mut hook as &mut EvalHook<'_>),
    )?;
    Checkpoint::capture(&model, &optimizer, &cfg.fingerprint()).write(&p.path(CHECKPOINT_FILE))?;
    history.write_jsonl(&p.path(HISTORY_FILE))?;
    for e in &history.epochs {
        println!("epoch {:>3}  loss {:.6}", e.epoch, e.mean_loss);
    }
    if let Some(last) = history.epochs.last() {
        print_reports(&last.eval);
    }
    Ok(())
}

fn eval(p: &Pipeline, checkpoint: Option<PathBuf>, untrained: bool, exec: Exec) -> Result<()> {
    let model = if untrained {
        p.config().fresh_model()?
    } else {
        let path = checkpoint.unwrap_or_else(|| p.path(CHECKPOINT_FILE));
        p.config().restore_model(&Checkpoint::read(&path)?)?.0
    };
    let reports = evaluate_all(p, &model, exec)?;
    write_json(&p.path(EVAL_REPORT_FILE), &reports)?;
    print_reports(&reports);
    Ok(())
}

fn ablate(p: &Pipeline, exec: Exec) -> Result<()> {
    let corpus = p.load_corpus()?;
    let (train, _) = p.load_split()?;
    let sets = p.load_eval_sets()?;
    let result = run_ablation(p.config(), &train, &corpus, &sets, exec)?;
    result.write(&p.path(ABLATION_FILE))?;
    for f in emit_report(&result, ReportFormat::All, p.out_dir())? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn report(p: &Pipeline, format: ReportFormat) -> Result<()> {
    let result = AblationResult::read(&p.path(ABLATION_FILE))?;
    for f in emit_report(&result, format, p.out_dir())? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut config = load_config(g)?;
    if let Command::Ablate { sizes, epochs } = &cli.command {
        if let Some(s) = sizes {
            config.ablation.sizes = s.clone();
        }
        if let Some(e) = epochs {
            config.training.epochs = *e;
        }
    }
    if let Command::ShowConfig = cli.command {
        config.validate()?;
        print!("{}", config.to_toml_string()?);
        return Ok(());
    }
    let mut p = open(config, g)?;
    match cli.command {
        Command::Ingest => run_stages(&mut p, &[Stage::Ingest]),
        Command::Genqueries { dry_run: true, limit } => genqueries_dry_run(&p, limit),
        Command::Genqueries { .. } => run_stages(&mut p, &[Stage::Seeds, Stage::Generation]),
        Command::Index => run_stages(&mut p, &[Stage::Index]),
        Command::Retrieve => run_stages(&mut p, &[Stage::Retrieval]),
        Command::Mine => run_stages(&mut p, &[Stage::Scoring, Stage::Mining]),
        Command::Split => run_stages(&mut p, &[Stage::Split]),
        Command::Run => run_stages(&mut p, &Stage::ALL),
        Command::Train => train(&p, exec(g)),
        Command::Eval { checkpoint, untrained } => eval(&p, checkpoint, untrained, exec(g)),
        Command::Ablate { .. } => ablate(&p, exec(g)),
        Command::Report { format } => report(&p, format),
        Command::ShowConfig => unreachable!(),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Backend => 3,
        ErrorKind::Stage => 4,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "synthrank_core=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                msg.push_str(&format!("\n  caused by: {s}"));
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
