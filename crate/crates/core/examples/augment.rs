//! Draws RandAugment and AugMix pairs and shows they are seed-determined.

use tta_core::augment::{sample_pair, AugMix, AugmentationPolicy, RandAugment};
use tta_core::harness::synthetic_dataset;
use tta_core::rng::SeededRng;

fn main() -> tta_core::Result<()> {
    let x = synthetic_dataset(1, 7, 0).image(0);
    let mut rng = SeededRng::new(11);

    let ra = RandAugment::new(9, 2)?;
    for _ in 0..3 {
        let ops: Vec<String> = ra
            .sample(&mut rng)
            .iter()
            .map(|d| format!("{:?}@{}{}", d.op, d.level, if d.negate { "-" } else { "" }))
            .collect();
        println!("randaugment draw: {}", ops.join(", "));
    }

    let am = AugMix::new(3, 1.0, 3, 3)?;
    let draw = am.sample(&mut rng);
    println!("augmix weights {:.3?}, keep {:.3}", draw.weights, draw.mix);
    for (i, chain) in draw.chains.iter().enumerate() {
        println!("  chain {i}: {:?}", chain.iter().map(|d| d.op).collect::<Vec<_>>());
    }

    for policy in [AugmentationPolicy::default_randaugment(), AugmentationPolicy::default_augmix()] {
        let seed = SeededRng::new(5);
        let (a, b) = sample_pair(&x, &policy, &seed)?;
        let again = sample_pair(&x, &policy, &seed)?;
        println!(
            "{}: |x-a| {:.2}  |x-b| {:.2}  reproducible {}",
            policy.kind(),
            x.l2_distance(&a),
            x.l2_distance(&b),
            (a, b) == again
        );
    }
    Ok(())
}
