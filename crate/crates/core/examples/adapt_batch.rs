//! Adapts a source model to one noisy batch and compares against Tent.
//!
//! `cargo run --release --example adapt_batch -- [source.ckpt]`
//! Without a checkpoint a shorter schedule is trained first (about a minute).

use tta_core::adapt::{adapt_batch, tent_baseline, AdaptationConfig};
use tta_core::corruptions::build_corrupted_set;
use tta_core::harness::{synthetic_dataset, train_source_model, TrainRecipe, SYNTHETIC_TEST_OFFSET};
use tta_core::models::{load_checkpoint, Architecture, BnMode, Model};
use tta_core::rng::SeededRng;

fn source() -> tta_core::Result<Model> {
    if let Some(path) = std::env::args().nth(1) {
        return load_checkpoint(path);
    }
    eprintln!("no checkpoint given; training for 8 epochs");
    let recipe = TrainRecipe { epochs: 8, ..Default::default() };
    Ok(train_source_model(&synthetic_dataset(4000, 7, 0), &Architecture::cnn_bn_small(10), &recipe, 0)?.model)
}

fn main() -> tta_core::Result<()> {
    let model = source()?;
    let test = synthetic_dataset(64, 7, SYNTHETIC_TEST_OFFSET);
    let noisy = build_corrupted_set(&test, &["gaussian_noise@5".parse()?], 0)?;
    let batch = &noisy.sets[0].1;
    let acc = |p: &[usize]| p.iter().zip(&batch.labels).filter(|(a, b)| a == b).count() as f64 / p.len() as f64;

    let source_pred = model.predict(&batch.images, BnMode::RunningStats)?.argmax_rows();
    println!("source (running stats)  {:.1}%", 100.0 * acc(&source_pred));

    let rng = SeededRng::new(0);
    for lr in [1e-4, 1e-3] {
        let cfg = AdaptationConfig { lr, ..Default::default() };
        let out = adapt_batch(&model, &batch.images, &cfg, &rng)?;
        println!(
            "proposed lr={lr:<6} pre {:.1}% -> post {:.1}%  losses {:.4?}  |delta| {:.2e}",
            100.0 * acc(&out.report.pre_predictions),
            100.0 * acc(&out.predictions),
            out.report.losses,
            out.report.delta_norm
        );
        let tent = tent_baseline(&model, &batch.images, &cfg, &rng)?;
        println!("tent     lr={lr:<6} post {:.1}%", 100.0 * acc(&tent.predictions));
    }
    Ok(())
}
