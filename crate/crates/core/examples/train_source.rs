//! Trains the default classifier on the synthetic shapes and saves it.
//!
//! `cargo run --release --example train_source -- [out.ckpt] [epochs]`

use tta_core::harness::{evaluate, synthetic_dataset, train_source_model, TrainRecipe, SYNTHETIC_TEST_OFFSET};
use tta_core::models::{save_checkpoint, Architecture, BnMode};

fn main() -> tta_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "source.ckpt".into());
    let epochs = args.next().map_or(15, |e| e.parse().expect("epochs"));

    let train = synthetic_dataset(4000, 7, 0);
    let test = synthetic_dataset(512, 7, SYNTHETIC_TEST_OFFSET);
    let arch = Architecture::cnn_bn_small(10);
    let recipe = TrainRecipe { epochs, ..Default::default() };
    println!("{arch}: {} parameters", tta_core::models::Model::build(&arch, 0).num_params());

    let run = train_source_model(&train, &arch, &recipe, 0)?;
    for e in &run.log {
        println!("epoch {:>2}  loss {:.4}  train acc {:.3}", e.epoch, e.mean_loss, e.train_accuracy);
    }
    for mode in [BnMode::RunningStats, BnMode::TrainStats] {
        println!("clean test acc ({mode}): {:.2}%", 100.0 * evaluate(&run.model, &test, mode, 64)?);
    }
    save_checkpoint(&run.model, &out)?;
    println!("saved {out}");
    Ok(())
}
