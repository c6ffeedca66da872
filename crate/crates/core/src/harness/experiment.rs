use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{DataSource, ExperimentConfig, Method};
use super::{evaluate, load_dataset, synthetic_dataset, train_source_model, Dataset};
use crate::adapt::run_stream;
use crate::corruptions::{build_corrupted_set, CorruptionSpec};
use crate::error::{Error, Result};
use crate::models::{load_checkpoint, save_checkpoint, BnMode, Model};
use crate::rng::SeededRng;

/// Offset of the synthetic test slice within the generator stream.
pub const SYNTHETIC_TEST_OFFSET: u64 = 1 << 32;

/// One batch of one (seed, corruption, method) cell. Every field is a pure
/// function of the config and seed; wall-clock lives in [`TimingRecord`].
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub corruption: String,
    pub severity: u8,
    pub batch: usize,
    pub batch_size: usize,
    pub pre_correct: usize,
    pub post_correct: usize,
    pub pre_accuracy: f64,
    pub post_accuracy: f64,
    /// Batch-mean objective at each adaptation step.
    pub step_losses: Vec<f64>,
    pub delta_norm: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimingRecord {
    pub config_hash: String,
    pub seed: u64,
    pub method: String,
    pub corruption: String,
    pub severity: u8,
    pub batch: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryCell {
    pub method: String,
    /// `kind@severity`.
    pub corruption: String,
    /// Mean over seeds of the per-seed accuracy.
    pub accuracy: f64,
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub methods: Vec<String>,
    pub corruptions: Vec<String>,
    pub cells: Vec<SummaryCell>,
}

impl Summary {
    pub fn cell(&self, method: &str, corruption: &str) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.corruption == corruption)
    }

    /// Arithmetic mean of the per-corruption accuracies of `method`.
    pub fn mean_over_corruptions(&self, method: &str) -> Option<f64> {
        let accs: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.method == method)
            .map(|c| c.accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    /// Aligned plain-text table of accuracies in percent.
    pub fn render(&self) -> String {
        let mut header = vec!["method".to_string()];
        header.extend(self.corruptions.iter().cloned());
        header.push("mean".into());
        let mut rows = vec![header];
        for m in &self.methods {
            let mut row = vec![m.clone()];
            for c in &self.corruptions {
                row.push(match self.cell(m, c) {
                    Some(cell) => format!("{:.2}", 100.0 * cell.accuracy),
                    None => "-".into(),
                });
            }
            row.push(format!("{:.2}", 100.0 * self.mean_over_corruptions(m).unwrap_or(f64::NAN)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    if j == 0 {
                        format!("{s:<w$}", w = widths[j])
                    } else {
                        format!("{s:>w$}", w = widths[j])
                    }
                })
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        }
        out
    }
}

fn first_seen(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Aggregates rows into per-(method, corruption) accuracies. Depends only on
/// the set of rows, not their order.
pub fn summarize(records: &[MetricsRecord]) -> Summary {
    let mut sorted: Vec<&MetricsRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (&a.method, &a.corruption, a.severity, a.seed, a.batch).cmp(&(&b.method, &b.corruption, b.severity, b.seed, b.batch))
    });
    let label = |r: &MetricsRecord| format!("{}@{}", r.corruption, r.severity);
    let mut methods = first_seen(sorted.iter().map(|r| r.method.clone()));
    methods.sort_by_key(|m| m.parse::<Method>().map(|x| x as usize).unwrap_or(usize::MAX));
    let corruptions = first_seen(sorted.iter().map(|r| label(r)));
    let mut cells = Vec::new();
    for m in &methods {
        for c in &corruptions {
            let mut per_seed: Vec<(u64, f64)> = Vec::new();
            let rows: Vec<&&MetricsRecord> = sorted.iter().filter(|r| &r.method == m && &label(r) == c).collect();
            let seeds = first_seen(rows.iter().map(|r| r.seed.to_string()));
            for s in seeds {
                let s: u64 = s.parse().unwrap();
                let (mut correct, mut total) = (0usize, 0usize);
                for r in rows.iter().filter(|r| r.seed == s) {
                    correct += r.post_correct;
                    total += r.batch_size;
                }
                per_seed.push((s, correct as f64 / total as f64));
            }
            if per_seed.is_empty() {
                continue;
            }
            let accuracy = per_seed.iter().map(|p| p.1).sum::<f64>() / per_seed.len() as f64;
            cells.push(SummaryCell {
                method: m.clone(),
                corruption: c.clone(),
                accuracy,
                per_seed,
            });
        }
    }
    Summary {
        methods,
        corruptions,
        cells,
    }
}

/// Source model and clean test set for an experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: Model,
    pub test: Dataset,
}

pub fn load_test_set(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic { seed, test, .. } => Ok(synthetic_dataset(*test, *seed, SYNTHETIC_TEST_OFFSET)),
        DataSource::Files { format, test, .. } => load_dataset(test, *format),
    }
}

pub fn load_train_set(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic { seed, train, .. } => Ok(synthetic_dataset(*train, *seed, 0)),
        DataSource::Files { format, train, .. } => {
            let path = train
                .as_ref()
                .ok_or_else(|| Error::Config("training needs data.train".into()))?;
            load_dataset(path, *format)
        }
    }
}

/// Loads the configured checkpoint, or trains the source model when none is
/// configured.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let test = load_test_set(cfg)?;
    let model = match &cfg.checkpoint {
        Some(path) => {
            let m = load_checkpoint(path)?;
            if m.arch() != &cfg.arch {
                return Err(Error::Config(format!(
                    "checkpoint architecture {} differs from model.arch {}",
                    m.arch(),
                    cfg.arch
                )));
            }
            m
        }
        None => train_source_model(&load_train_set(cfg)?, &cfg.arch, &cfg.train, cfg.model_seed)?.model,
    };
    Ok(Prepared { model, test })
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config_hash: String,
    pub records: Vec<MetricsRecord>,
    pub timings: Vec<TimingRecord>,
    pub summary: Summary,
    /// Source model accuracy on the clean test set, in the adaptation BN mode.
    pub clean_accuracy: f64,
}

struct Cell {
    seed: u64,
    spec: CorruptionSpec,
}

fn with_context(e: Error, seed: u64, spec: CorruptionSpec, method: Method) -> Error {
    match e {
        Error::NumericAbort { .. } | Error::NumericLayer { .. } | Error::NonFinite(_) => e,
        Error::Config(msg) => Error::Config(format!("{spec}, {method}, seed {seed}: {msg}")),
        Error::DegenerateBatch(msg) => Error::DegenerateBatch(format!("{spec}, {method}, seed {seed}: {msg}")),
        other => other,
    }
}

fn run_cell(cfg: &ExperimentConfig, hash: &str, prep: &Prepared, cell: &Cell) -> Result<Vec<(MetricsRecord, TimingRecord)>> {
    let set = build_corrupted_set(&prep.test, &[cell.spec], cell.seed)?;
    let data = &set.sets[0].1;
    let batches: Vec<Dataset> = data.batches(cfg.adapt.batch_size).collect();
    let images: Vec<_> = batches.iter().map(|b| b.images.clone()).collect();
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let mut acfg = cfg.method_config(method)?;
        if method == Method::Source {
            acfg.bn_mode = BnMode::RunningStats;
        }
        let rng = SeededRng::new(cell.seed);
        // Timing covers the whole stream; it is spread evenly over batches.
        let t = Instant::now();
        let result = run_stream(&prep.model, &images, &acfg, &rng).map_err(|e| with_context(e, cell.seed, cell.spec, method))?;
        let per_batch = t.elapsed().as_secs_f64() / batches.len().max(1) as f64;
        for (i, (b, r)) in batches.iter().zip(&result.batches).enumerate() {
            let count = |p: &[usize]| p.iter().zip(&b.labels).filter(|(a, l)| a == l).count();
            let pre = count(&r.report.pre_predictions);
            let post = count(&r.predictions);
            out.push((
                MetricsRecord {
                    config_hash: hash.to_string(),
                    seed: cell.seed,
                    method: method.name().into(),
                    corruption: cell.spec.kind.name().into(),
                    severity: cell.spec.severity,
                    batch: i,
                    batch_size: b.len(),
                    pre_correct: pre,
                    post_correct: post,
                    pre_accuracy: pre as f64 / b.len() as f64,
                    post_accuracy: post as f64 / b.len() as f64,
                    step_losses: r.report.losses.clone(),
                    delta_norm: r.report.delta_norm,
                },
                TimingRecord {
                    config_hash: hash.to_string(),
                    seed: cell.seed,
                    method: method.name().into(),
                    corruption: cell.spec.kind.name().into(),
                    severity: cell.spec.severity,
                    batch: i,
                    seconds: per_batch,
                },
            ));
        }
    }
    Ok(out)
}

/// Runs every (seed, corruption, method) cell against a prepared model.
/// Cells run in parallel; rows come back in (seed, corruption, method,
/// batch) order regardless of scheduling.
pub fn run_prepared(cfg: &ExperimentConfig, prep: &Prepared) -> Result<ExperimentOutput> {
    let hash = cfg.hash();
    let cells: Vec<Cell> = cfg
        .seeds
        .iter()
        .flat_map(|&seed| cfg.corruptions.iter().map(move |&spec| Cell { seed, spec }))
        .collect();
    let results: Vec<Result<Vec<(MetricsRecord, TimingRecord)>>> =
        cells.par_iter().map(|c| run_cell(cfg, &hash, prep, c)).collect();
    let mut records = Vec::new();
    let mut timings = Vec::new();
    for r in results {
        for (m, t) in r? {
            records.push(m);
            timings.push(t);
        }
    }
    let clean_accuracy = evaluate(&prep.model, &prep.test, cfg.adapt.bn_mode, cfg.adapt.batch_size.max(2))?;
    Ok(ExperimentOutput {
        config_hash: hash,
        summary: summarize(&records),
        records,
        timings,
        clean_accuracy,
    })
}

/// Prepares the model, runs all cells and, when `out` is given, writes
/// `metrics.jsonl`, `timings.jsonl`, `summary.txt` and `config.txt` there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutput> {
    let prep = prepare(cfg)?;
    let result = run_prepared(cfg, &prep)?;
    if let Some(dir) = out {
        write_outputs(cfg, &result, dir)?;
    }
    Ok(result)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

pub fn write_jsonl<T: serde::Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).expect("records serialize");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0u64;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::Data {
                path: path.to_path_buf(),
                offset,
                detail: format!("bad metrics record: {e}"),
            })?);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentOutput, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_jsonl(dir.join("metrics.jsonl"), &result.records)?;
    write_jsonl(dir.join("timings.jsonl"), &result.timings)?;
    write_file(dir.join("config.txt"), cfg.canonical())?;
    let mut text = format!(
        "config {}\nclean accuracy {:.2}\n\n",
        result.config_hash,
        100.0 * result.clean_accuracy
    );
    text.push_str(&result.summary.render());
    write_file(dir.join("summary.txt"), text)
}

/// Writes a trained source model next to its training log.
pub fn write_source(model: &Model, log: &[super::EpochLog], dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let ckpt = dir.join("source.ckpt");
    save_checkpoint(model, &ckpt)?;
    write_jsonl(dir.join("train_log.jsonl"), log)?;
    Ok(ckpt)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SweepRecord {
    pub axis: String,
    pub value: String,
    pub config_hash: String,
    pub method: String,
    pub corruption: String,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutput {
    pub records: Vec<SweepRecord>,
    pub points: Vec<(String, ExperimentOutput)>,
}

impl SweepOutput {
    /// Seed-mean accuracy of `method` at each swept value, averaged over
    /// corruptions.
    pub fn curve(&self, method: &str) -> Vec<(String, f64)> {
        self.points
            .iter()
            .filter_map(|(v, o)| o.summary.mean_over_corruptions(method).map(|a| (v.clone(), a)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,value,config_hash,method,corruption,seed,accuracy\n");
        for r in &self.records {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.axis,
                csv_field(&r.value),
                r.config_hash,
                r.method,
                r.corruption,
                r.seed,
                r.accuracy
            )
            .unwrap();
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One experiment per value on the configured sweep axis, all sharing the
/// source model and seeds. With `out`, each point is written to
/// `out/point-<i>/` and the combined table to `out/sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SweepOutput> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("run_sweep needs sweep.axis and sweep.values".into()))?;
    let prep = prepare(cfg)?;
    let mut points = Vec::new();
    let mut records = Vec::new();
    for (i, value) in sweep.values.iter().enumerate() {
        let point_cfg = cfg.with_overrides(&sweep.axis.overrides(value)?)?;
        let result = run_prepared(&point_cfg, &prep)?;
        for cell in &result.summary.cells {
            for &(seed, accuracy) in &cell.per_seed {
                records.push(SweepRecord {
                    axis: sweep.axis.name().into(),
                    value: value.clone(),
                    config_hash: result.config_hash.clone(),
                    method: cell.method.clone(),
                    corruption: cell.corruption.clone(),
                    seed,
                    accuracy,
                });
            }
        }
        if let Some(dir) = out {
            write_outputs(&point_cfg, &result, &dir.join(format!("point-{i}")))?;
        }
        points.push((value.clone(), result));
    }
    let output = SweepOutput { records, points };
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(dir.join("sweep.csv"), output.to_csv())?;
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, corruption: &str, seed: u64, batch: usize, correct: usize, size: usize) -> MetricsRecord {
        MetricsRecord {
            config_hash: "h".into(),
            seed,
            method: method.into(),
            corruption: corruption.into(),
            severity: 5,
            batch,
            batch_size: size,
            pre_correct: correct,
            post_correct: correct,
            pre_accuracy: correct as f64 / size as f64,
            post_accuracy: correct as f64 / size as f64,
            step_losses: vec![],
            delta_norm: 0.0,
        }
    }

    #[test]
    fn summary_is_order_free_and_means_are_exact() {
        let rows = vec![
            rec("a", "jpeg", 0, 0, 3, 4),
            rec("a", "jpeg", 0, 1, 1, 2),
            rec("a", "jpeg", 1, 0, 1, 4),
            rec("a", "contrast", 0, 0, 2, 4),
            rec("b", "jpeg", 0, 0, 4, 4),
        ];
        let s = summarize(&rows);
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(s, summarize(&rev));
        let jpeg = s.cell("a", "jpeg@5").unwrap();
        assert_eq!(jpeg.per_seed, vec![(0, 4.0 / 6.0), (1, 0.25)]);
        let mean = s.mean_over_corruptions("a").unwrap();
        assert!((mean - (jpeg.accuracy + 0.5) / 2.0).abs() < 1e-12);
        let table = s.render();
        assert!(table.lines().next().unwrap().starts_with("method"));
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn metrics_round_trip_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rec("a", "jpeg", 3, 0, 1, 3);
        // The first loss needs correctly rounded parsing to come back exactly.
        r.step_losses = vec![2.1670787481322518, 0.1, 1.0 / 3.0];
        r.delta_norm = std::f64::consts::PI;
        let p = dir.path().join("m.jsonl");
        write_jsonl(&p, std::slice::from_ref(&r)).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![r]);
        std::fs::write(&p, "{\"nope\":1}\n").unwrap();
        assert!(matches!(read_metrics(&p), Err(Error::Data { .. })));
    }

    #[test]
    fn csv_quotes_commas() {
        assert_eq!(csv_field("m=1, n=2"), "\"m=1, n=2\"");
        assert_eq!(csv_field("5"), "5");
    }
}
