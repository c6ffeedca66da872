//! Bundled toy dataset: coloured shapes, solid or finely striped, on a
//! random background. Ten classes = five shapes x two textures.

use rand::Rng;

use super::Dataset;
use crate::engine::Tensor;
use crate::rng::SeededRng;

pub const SYNTHETIC_CLASSES: usize = 10;

pub const SHAPES: [&str; 5] = ["disk", "square", "triangle", "bar", "ring"];

pub fn class_names() -> Vec<String> {
    let mut names = Vec::new();
    for shape in SHAPES {
        for texture in ["solid", "striped"] {
            names.push(format!("{shape}-{texture}"));
        }
    }
    names
}

fn inside(shape: usize, dy: f64, dx: f64, r: f64) -> bool {
    match shape {
        0 => dy * dy + dx * dx <= r * r,
        1 => dy.abs() <= 0.8 * r && dx.abs() <= 0.8 * r,
        // upward-pointing triangle
        2 => dy <= 0.7 * r && dy >= -r && dx.abs() <= (dy + r) * 0.6,
        3 => dy.abs() <= 0.35 * r && dx.abs() <= 1.1 * r,
        _ => {
            let d2 = dy * dy + dx * dx;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
    }
}

/// Renders image `index` of the stream keyed by `seed`. Returns the
/// `[3, 32, 32]` pixels and the label.
pub fn render(seed: u64, index: u64) -> (Vec<f64>, usize) {
    let mut rng = SeededRng::new(seed).substream(index);
    let label = rng.random_range(0..SYNTHETIC_CLASSES);
    let (shape, striped) = (label / 2, label % 2 == 1);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    // Foreground differs from the background by at least 0.35 in luma.
    let fg: [f64; 3] = loop {
        let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let luma = |p: &[f64; 3]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        if (luma(&c) - luma(&bg)).abs() >= 0.35 {
            break c;
        }
    };
    let r = rng.random_range(7.0..11.0);
    let cy = 15.5 + rng.random_range(-4.0..4.0);
    let cx = 15.5 + rng.random_range(-4.0..4.0);
    let vertical = rng.random_bool(0.5);
    let amp = rng.random_range(0.12..0.2);
    let mut data = vec![0.0; 3 * 32 * 32];
    for y in 0..32 {
        for x in 0..32 {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let on = inside(shape, dy, dx, r);
            let stripe = if striped && on {
                let phase = if vertical { x } else { y };
                if phase % 2 == 0 { amp } else { -amp }
            } else {
                0.0
            };
            for c in 0..3 {
                let base = if on { fg[c] } else { bg[c] };
                let jitter = rng.random_range(-0.02..0.02);
                data[(c * 32 + y) * 32 + x] = (base + stripe + jitter).clamp(0.0, 1.0);
            }
        }
    }
    (data, label)
}

/// `n` images from the stream keyed by `seed`, starting at `offset`.
/// Disjoint offsets give disjoint train/test splits from one seed.
pub fn synthetic_dataset(n: usize, seed: u64, offset: u64) -> Dataset {
    let mut data = Vec::with_capacity(n * 3 * 32 * 32);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (img, label) = render(seed, offset + i);
        data.extend(img);
        labels.push(label);
    }
    Dataset::with_names(Tensor::from_parts(vec![n, 3, 32, 32], data), labels, class_names())
        .expect("synthetic data is well formed")
}
