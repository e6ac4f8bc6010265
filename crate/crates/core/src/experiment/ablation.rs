use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalSet};
use crate::exec::Exec;
use crate::metrics::{DatasetTag, MetricReport};
use crate::mining::TrainingTriplet;
use crate::trainer::{self, AdamState, CrossEncoderModel, EvalHook};

/// Prefixes of one seeded permutation, so each subset strictly contains
/// the previous one.
pub fn make_nested_subsets(
    train: &[TrainingTriplet],
    sizes: &[usize],
    rng_seed: u64,
) -> Result<Vec<Vec<TrainingTriplet>>> {
    if sizes.is_empty() || sizes[0] == 0 {
        return Err(Error::Argument("sizes must be non-empty and positive".into()));
    }
    if !sizes.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Argument(format!("sizes {sizes:?} are not strictly increasing")));
    }
    let largest = *sizes.last().expect("non-empty");
    if largest > train.len() {
        return Err(Error::Argument(format!("size {largest} exceeds the {} training triplets", train.len())));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    Ok(sizes.iter().map(|&n| order[..n].iter().map(|&i| train[i].clone()).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub size: usize,
    pub epoch: usize,
    pub domain: DatasetTag,
    pub test_fingerprint: String,
    pub report: MetricReport,
}

/// Per-epoch metric mean and spread against the untrained baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub size: usize,
    pub domain: DatasetTag,
    pub metric: String,
    pub before: f64,
    pub after_mean: f64,
    pub after_std: f64,
    pub improvement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub sizes: Vec<usize>,
    pub epochs: usize,
    pub k: usize,
    /// Query ids of each nested training subset, in `sizes` order.
    pub subsets: Vec<Vec<String>>,
    /// Untrained model on each domain.
    pub base: Vec<AblationRow>,
    pub rows: Vec<AblationRow>,
    /// Mean training loss per size, indexed by epoch − 1.
    pub losses: BTreeMap<usize, Vec<f64>>,
    pub summary: Vec<ImprovementSummary>,
}

impl AblationResult {
    pub fn domains(&self) -> Vec<DatasetTag> {
        self.base.iter().map(|r| r.domain).collect()
    }

    pub fn row(&self, size: usize, epoch: usize, domain: DatasetTag) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.size == size && r.epoch == epoch && r.domain == domain)
    }

    pub fn base_row(&self, domain: DatasetTag) -> Option<&AblationRow> {
        self.base.iter().find(|r| r.domain == domain)
    }

    /// Distinct test fingerprints seen per domain; one each when the
    /// evaluation sets stayed fixed.
    pub fn fingerprints(&self) -> BTreeMap<DatasetTag, BTreeSet<String>> {
        let mut out: BTreeMap<DatasetTag, BTreeSet<String>> = BTreeMap::new();
        for r in self.base.iter().chain(&self.rows) {
            out.entry(r.domain).or_default().insert(r.test_fingerprint.clone());
        }
        out
    }

    /// Every `(size, epoch)` pair has a row per domain, sizes increase,
    /// and each subset strictly contains the previous one.
    pub fn check_shape(&self) -> Result<()> {
        if !self.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::State("sizes are not strictly increasing".into()));
        }
        for (w, sizes) in self.subsets.windows(2).zip(self.sizes.windows(2)) {
            let small: BTreeSet<&String> = w[0].iter().collect();
            let big: BTreeSet<&String> = w[1].iter().collect();
            if small.len() != sizes[0] || big.len() != sizes[1] || !small.is_subset(&big) || small.len() >= big.len() {
                return Err(Error::State(format!("subset {} is not a strict superset of {}", sizes[1], sizes[0])));
            }
        }
        for &size in &self.sizes {
            for epoch in 1..=self.epochs {
                for d in self.domains() {
                    if self.row(size, epoch, d).is_none() {
                        return Err(Error::State(format!("missing row size={size} epoch={epoch} domain={d}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn metric_values(r: &MetricReport) -> [(&'static str, f64); 4] {
    r.aggregate.named()
}

fn summarize(base: &[AblationRow], rows: &[AblationRow], sizes: &[usize]) -> Vec<ImprovementSummary> {
    let mut out = Vec::new();
    for &size in sizes {
        for b in base {
            let per_epoch: Vec<&AblationRow> = rows.iter().filter(|r| r.size == size && r.domain == b.domain).collect();
            for (mi, (name, before)) in metric_values(&b.report).into_iter().enumerate() {
                let vals: Vec<f64> = per_epoch.iter().map(|r| metric_values(&r.report)[mi].1).collect();
                let n = vals.len().max(1) as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                out.push(ImprovementSummary {
                    size,
                    domain: b.domain,
                    metric: name.to_string(),
                    before,
                    after_mean: mean,
                    after_std: var.sqrt(),
                    improvement: mean - before,
                });
            }
        }
    }
    out
}

/// Train a fresh model per subset size with per-epoch evaluation on each
/// of `eval_sets`.
pub fn run_ablation(
    config: &RunConfig,
    train: &[TrainingTriplet],
    corpus: &Corpus,
    eval_sets: &[EvalSet],
    exec: Exec,
) -> Result<AblationResult> {
    if eval_sets.is_empty() {
        return Err(Error::Argument("no evaluation sets".into()));
    }
    let sizes = config.ablation.sizes.clone();
    let subsets = make_nested_subsets(train, &sizes, config.seed)?;
    let (k, max_pool) = (config.eval.k, config.eval.max_pool);
    let fingerprints: Vec<String> = eval_sets.iter().map(EvalSet::fingerprint).collect();

    let evaluate = |size: usize, epoch: usize, model: &CrossEncoderModel| -> Result<Vec<AblationRow>> {
        eval_sets
            .iter()
            .zip(&fingerprints)
            .map(|(set, fp)| {
                Ok(AblationRow {
                    size,
                    epoch,
                    domain: set.tag,
                    test_fingerprint: fp.clone(),
                    report: evaluate_model(model, set, k, max_pool, exec)?,
                })
            })
            .collect()
    };

    let base = evaluate(0, 0, &config.fresh_model()?)?;
    let mut rows = Vec::new();
    let mut losses = BTreeMap::new();
    for (size, subset) in sizes.iter().copied().zip(&subsets) {
        tracing::info!(size, "ablation run");
        let mut model = config.fresh_model()?;
        let mut optimizer = AdamState::new(model.param_count());
        let mut size_rows = Vec::new();
        let mut hook = |epoch: usize, m: &CrossEncoderModel| -> Result<Vec<MetricReport>> {
            let r = evaluate(size, epoch, m)?;
            let reports = r.iter().map(|row| row.report.clone()).collect();
            size_rows.extend(r);
            Ok(reports)
        };
        let history = trainer::train_on_triplets(
            &mut model,
            &mut optimizer,
            subset,
            corpus,
            &config.training,
            Some(&mut hook as &mut EvalHook<'_>),
        )?;
        rows.extend(size_rows);
        losses.insert(size, history.losses());
    }
    let summary = summarize(&base, &rows, &sizes);
    let result = AblationResult {
        sizes,
        epochs: config.training.epochs,
        k,
        subsets: subsets.iter().map(|s| s.iter().map(|t| t.query_id.clone()).collect()).collect(),
        base,
        rows,
        losses,
        summary,
    };
    result.check_shape()?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Long-format per-epoch CSV.
    Csv,
    /// First-epoch summary table (Markdown).
    Table,
    /// Plot-ready series.
    Json,
    All,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "table" => Ok(Self::Table),
            "json" => Ok(Self::Json),
            "all" => Ok(Self::All),
            other => Err(Error::Argument(format!("unknown report format `{other}` (csv, table, json, all)"))),
        }
    }
}

pub const REPORT_CSV: &str = "ablation_long.csv";
pub const REPORT_TABLE: &str = "first_epoch_table.md";
pub const REPORT_JSON: &str = "ablation_series.json";

/// `size,epoch,domain,metric,value`, one row per metric.
pub fn render_csv(result: &AblationResult) -> String {
    let mut s = String::from("size,epoch,domain,metric,value\n");
    for r in &result.rows {
        for (name, v) in metric_values(&r.report) {
            let _ = writeln!(s, "{},{},{},{},{}", r.size, r.epoch, r.domain, name, v);
        }
    }
    s
}

const TABLE_METRICS: [(&str, &str); 3] = [("MAP", "map"), ("MRR", "mrr"), ("NDCG", "ndcg")];

fn pick(r: &MetricReport, metric: &str) -> f64 {
    metric_values(r).into_iter().find(|(n, _)| *n == metric).map(|(_, v)| v).expect("known metric")
}

/// Metrics × domains against Base plus one column per size, at epoch 1.
pub fn render_first_epoch_table(result: &AblationResult) -> String {
    let mut s = format!("| Metric (@{}) | Domain | Base |", result.k);
    for size in &result.sizes {
        let _ = write!(s, " {size} |");
    }
    s.push_str("\n|---|---|---|");
    s.push_str(&"---|".repeat(result.sizes.len()));
    s.push('\n');
    for domain in result.domains() {
        for (label, metric) in TABLE_METRICS {
            let base = result.base_row(domain).map_or(f64::NAN, |r| pick(&r.report, metric));
            let short = match domain {
                DatasetTag::InDomain => "in",
                DatasetTag::OutDomain => "out",
            };
            let _ = write!(s, "| {label} | {short} | {base:.4} |");
            for &size in &result.sizes {
                let v = result.row(size, 1, domain).map_or(f64::NAN, |r| pick(&r.report, metric));
                let _ = write!(s, " {v:.4} |");
            }
            s.push('\n');
        }
    }
    s
}

/// `{k, base, series: {size: {domain: {metric: [per epoch]}}, loss}, summary}`.
pub fn render_series(result: &AblationResult) -> serde_json::Value {
    use serde_json::{json, Map, Value};
    let mut series = Map::new();
    for &size in &result.sizes {
        let mut by_domain = Map::new();
        for domain in result.domains() {
            let mut metrics = Map::new();
            for (name, _) in result.base[0].report.aggregate.named() {
                let vals: Vec<Value> = (1..=result.epochs)
                    .filter_map(|e| result.row(size, e, domain))
                    .map(|r| json!(pick(&r.report, name)))
                    .collect();
                metrics.insert(name.to_string(), Value::Array(vals));
            }
            by_domain.insert(domain.to_string(), Value::Object(metrics));
        }
        by_domain.insert("loss".into(), json!(result.losses.get(&size).cloned().unwrap_or_default()));
        series.insert(size.to_string(), Value::Object(by_domain));
    }
    let base: Map<String, Value> =
        result.base.iter().map(|r| (r.domain.to_string(), json!(r.report.aggregate))).collect();
    json!({ "k": result.k, "epochs": result.epochs, "base": base, "series": series, "summary": result.summary })
}

/// Write the requested renderings into `dir`; returns the written paths.
pub fn emit_report(result: &AblationResult, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.rows.is_empty() || result.base.is_empty() {
        return Err(Error::Argument("empty ablation result".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    if matches!(format, ReportFormat::Csv | ReportFormat::All) {
        put(REPORT_CSV, render_csv(result))?;
    }
    if matches!(format, ReportFormat::Table | ReportFormat::All) {
        put(REPORT_TABLE, render_first_epoch_table(result))?;
    }
    if matches!(format, ReportFormat::Json | ReportFormat::All) {
        put(REPORT_JSON, serde_json::to_string_pretty(&render_series(result))? + "\n")?;
    }
    Ok(written)
}

pub const ABLATION_FILE: &str = "ablation.json";

impl AblationResult {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })
    }
}
