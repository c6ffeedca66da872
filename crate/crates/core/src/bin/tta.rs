use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tta_core::corruptions::build_corrupted_set;
use tta_core::harness::{
    evaluate, load_test_set, load_train_set, read_metrics, run_experiment, run_sweep, summarize, train_source_model,
    write_source, ExperimentConfig,
};
use tta_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tta", version, about = "Test-time adaptation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `model.seed` (train-source) or `sweep.seeds`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train the source classifier and write `source.ckpt`.
    TrainSource(Common),
    /// Write corrupted copies of the test set plus a manifest.
    Corrupt(Common),
    /// Run the configured methods over every corruption and seed.
    Adapt(Common),
    /// Run one experiment per value on `sweep.axis`.
    Sweep(Common),
    /// Summarize `metrics.jsonl` from the output directory.
    Report(Common),
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::parse("")?,
    };
    if let Some(seed) = c.seed {
        cfg = cfg.with_overrides(&[("sweep.seeds".into(), seed.to_string())])?;
    }
    Ok(cfg)
}

fn train_source(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_overrides(&[("model.seed".into(), seed.to_string())])?;
    }
    let train = load_train_set(&cfg)?;
    let out = train_source_model(&train, &cfg.arch, &cfg.train, cfg.model_seed)?;
    let ckpt = write_source(&out.model, &out.log, &c.out)?;
    let test = load_test_set(&cfg)?;
    let acc = evaluate(&out.model, &test, cfg.adapt.bn_mode, 64)?;
    println!("wrote {}", ckpt.display());
    println!("clean test accuracy {:.2}%", 100.0 * acc);
    Ok(())
}

fn corrupt(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let test = load_test_set(&cfg)?;
    for &seed in &cfg.seeds {
        let dir = c.out.join(format!("seed-{seed}"));
        let sets = build_corrupted_set(&test, &cfg.corruptions, seed)?;
        let manifest = sets.write(&dir)?;
        println!("wrote {} sets to {}", manifest.entries.len(), dir.display());
    }
    Ok(())
}

fn adapt(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let out = run_experiment(&cfg, Some(&c.out))?;
    println!("config {}", out.config_hash);
    print!("{}", out.summary.render());
    Ok(())
}

fn sweep(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let out = run_sweep(&cfg, Some(&c.out))?;
    let axis = cfg.sweep.as_ref().map(|s| s.axis.name()).unwrap_or("?");
    for method in &cfg.methods {
        for (value, acc) in out.curve(method.name()) {
            println!("{axis}={value:<12} {method:<22} {:.2}", 100.0 * acc);
        }
    }
    println!("wrote {}", c.out.join("sweep.csv").display());
    Ok(())
}

fn report(c: &Common) -> Result<()> {
    let path: &Path = &c.out.join("metrics.jsonl");
    let rows = read_metrics(path)?;
    if rows.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            offset: 0,
            detail: "no metrics records".into(),
        });
    }
    print!("{}", summarize(&rows).render());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainSource(c) => train_source(c),
        Command::Corrupt(c) => corrupt(c),
        Command::Adapt(c) => adapt(c),
        Command::Sweep(c) => sweep(c),
        Command::Report(c) => report(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
