//! Runs a small experiment grid from an inline config and prints the table.
//!
//! `cargo run --release --example experiment -- [source.ckpt] [out_dir]`
//!
//! Without a checkpoint the source model is trained for 8 epochs first.

use tta_core::harness::{run_experiment, ExperimentConfig};

const CONFIG: &str = "
data.test_size = 256
data.corruptions = gaussian_noise@5, defocus_blur@3, contrast@5
model.train.epochs = 8
adapt.methods = source, unadapted, tent, proposed, proposed-augmix
sweep.seeds = 0, 1
";

fn main() -> tta_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = ExperimentConfig::parse(CONFIG)?;
    if let Some(ckpt) = args.first() {
        cfg = cfg.with_overrides(&[("model.checkpoint".into(), ckpt.clone())])?;
    }
    let out = args.get(1);
    let result = run_experiment(&cfg, out.map(std::path::Path::new))?;
    println!("config {}  clean accuracy {:.2}%", result.config_hash, 100.0 * result.clean_accuracy);
    print!("{}", result.summary.render());
    if let Some(dir) = out {
        println!("metrics in {dir}/metrics.jsonl");
    }
    Ok(())
}
