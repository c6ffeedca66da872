//! Accuracy against the number of adaptation steps.
//!
//! `cargo run --release --example sweep -- [source.ckpt]`

use tta_core::harness::{run_sweep, ExperimentConfig};

const CONFIG: &str = "
data.test_size = 256
model.train.epochs = 8
adapt.lr = 1e-3
adapt.methods = proposed
sweep.axis = steps
sweep.values = 0, 1, 2, 5, 10
";

fn main() -> tta_core::Result<()> {
    let mut cfg = ExperimentConfig::parse(CONFIG)?;
    if let Some(ckpt) = std::env::args().nth(1) {
        cfg = cfg.with_overrides(&[("model.checkpoint".into(), ckpt)])?;
    }
    let out = run_sweep(&cfg, None)?;
    for (steps, acc) in out.curve("proposed") {
        println!("steps {steps:>2}  {:.2}%", 100.0 * acc);
    }
    print!("\n{}", out.to_csv());
    Ok(())
}
