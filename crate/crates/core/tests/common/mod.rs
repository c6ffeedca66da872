//! Finite-difference checks for every differentiable op.
//!
//! Every op is reduced to a scalar through a fixed random weighting, so the
//! check covers the full Jacobian-vector product. Errors are measured per
//! input as `|analytic - numeric| / max(|analytic|, |numeric|)` in the L2
//! norm.

use rand::Rng;
use tta_core::engine::{BnStats, Graph, Tensor, Var};
use tta_core::losses::{consistency_loss, entropy, total_loss, LossWeights};
use tta_core::rng::SeededRng;
use tta_core::Result;

pub const SEEDS: u64 = 20;
const H: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

fn weighted(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut rng = SeededRng::new(seed ^ 0xABCD);
    let r = g.constant(Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)));
    let p = g.mul(out, r)?;
    g.sum(p)
}

fn scalar(inputs: &[Tensor], build: &Build, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = weighted(&mut g, out, seed).unwrap();
    g.value(l).item().unwrap()
}

/// Largest relative error over the inputs.
fn check(inputs: &[Tensor], build: &Build, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = weighted(&mut g, out, seed).unwrap();
    let grads = g.backward(l).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            *slot = (scalar(&plus, build, seed) - scalar(&minus, build, seed)) / (2.0 * H);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.sq_norm().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        if scale > 1e-10 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

fn uniform(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, either sign; keeps ReLU off its kink.
fn away_from_zero(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Rows drawn from a softmax of random logits.
fn posteriors(rng: &mut SeededRng, n: usize, k: usize) -> Tensor {
    let mut t = uniform(rng, &[n, k], -2.0, 2.0);
    for row in t.data_mut().chunks_mut(k) {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        row.iter_mut().for_each(|v| *v = v.exp() / s);
    }
    t
}

struct Case {
    name: &'static str,
    inputs: fn(&mut SeededRng) -> Vec<Tensor>,
    build: Box<Build>,
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "add (broadcast)",
            inputs: |r| vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: Box::new(|g, v| g.add(v[0], v[1])),
        },
        Case {
            name: "sub",
            inputs: |r| vec![uniform(r, &[2, 5], -1.0, 1.0), uniform(r, &[2, 5], -1.0, 1.0)],
            build: Box::new(|g, v| g.sub(v[0], v[1])),
        },
        Case {
            name: "mul (broadcast)",
            inputs: |r| vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)],
            build: Box::new(|g, v| g.mul(v[0], v[1])),
        },
        Case {
            name: "scale",
            inputs: |r| vec![uniform(r, &[6], -1.0, 1.0)],
            build: Box::new(|g, v| g.scale(v[0], -2.5)),
        },
        Case {
            name: "matmul",
            inputs: |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0)],
            build: Box::new(|g, v| g.matmul(v[0], v[1])),
        },
        Case {
            name: "conv2d stride 1",
            inputs: |r| vec![uniform(r, &[2, 2, 4, 4], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -1.0, 1.0)],
            build: Box::new(|g, v| g.conv2d(v[0], v[1], 1, 1)),
        },
        Case {
            name: "conv2d stride 2",
            inputs: |r| vec![uniform(r, &[1, 2, 5, 5], -1.0, 1.0), uniform(r, &[2, 2, 3, 3], -1.0, 1.0)],
            build: Box::new(|g, v| g.conv2d(v[0], v[1], 2, 1)),
        },
        Case {
            name: "relu",
            inputs: |r| vec![away_from_zero(r, &[3, 7])],
            build: Box::new(|g, v| g.relu(v[0])),
        },
        Case {
            name: "batchnorm (batch stats, 4-d)",
            inputs: |r| {
                vec![
                    uniform(r, &[4, 2, 2, 2], -1.0, 1.0),
                    uniform(r, &[2], 0.5, 1.5),
                    uniform(r, &[2], -0.5, 0.5),
                ]
            },
            build: Box::new(|g, v| Ok(g.batchnorm(v[0], v[1], v[2], BnStats::Batch)?.0)),
        },
        Case {
            name: "batchnorm (batch stats, 2-d)",
            inputs: |r| {
                vec![
                    uniform(r, &[6, 3], -1.0, 1.0),
                    uniform(r, &[3], 0.5, 1.5),
                    uniform(r, &[3], -0.5, 0.5),
                ]
            },
            build: Box::new(|g, v| Ok(g.batchnorm(v[0], v[1], v[2], BnStats::Batch)?.0)),
        },
        Case {
            name: "batchnorm (running stats)",
            inputs: |r| {
                vec![
                    uniform(r, &[3, 2, 2, 2], -1.0, 1.0),
                    uniform(r, &[2], 0.5, 1.5),
                    uniform(r, &[2], -0.5, 0.5),
                ]
            },
            build: Box::new(|g, v| {
                let stats = BnStats::Running {
                    mean: &[0.1, -0.2],
                    var: &[0.8, 1.3],
                };
                Ok(g.batchnorm(v[0], v[1], v[2], stats)?.0)
            }),
        },
        Case {
            name: "sum",
            inputs: |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            build: Box::new(|g, v| g.sum(v[0])),
        },
        Case {
            name: "mean",
            inputs: |r| vec![uniform(r, &[3, 4], -1.0, 1.0)],
            build: Box::new(|g, v| g.mean(v[0])),
        },
        Case {
            name: "sum_last",
            inputs: |r| vec![uniform(r, &[4, 3], -1.0, 1.0)],
            build: Box::new(|g, v| g.sum_last(v[0])),
        },
        Case {
            name: "log",
            inputs: |r| vec![uniform(r, &[10], 0.5, 2.0)],
            build: Box::new(|g, v| g.log(v[0])),
        },
        Case {
            name: "log_floor",
            inputs: |r| vec![uniform(r, &[10], 0.01, 1.0)],
            build: Box::new(|g, v| g.log_floor(v[0], 1e-12)),
        },
        Case {
            name: "exp",
            inputs: |r| vec![uniform(r, &[10], -1.0, 1.0)],
            build: Box::new(|g, v| g.exp(v[0])),
        },
        Case {
            name: "softmax",
            inputs: |r| vec![uniform(r, &[3, 5], -2.0, 2.0)],
            build: Box::new(|g, v| g.softmax(v[0])),
        },
        Case {
            name: "global_avg_pool",
            inputs: |r| vec![uniform(r, &[2, 3, 2, 3], -1.0, 1.0)],
            build: Box::new(|g, v| g.global_avg_pool(v[0])),
        },
        Case {
            name: "reshape",
            inputs: |r| vec![uniform(r, &[2, 6], -1.0, 1.0)],
            build: Box::new(|g, v| g.reshape(v[0], &[3, 4])),
        },
        Case {
            name: "entropy",
            inputs: |r| vec![posteriors(r, 4, 5)],
            build: Box::new(|g, v| entropy(g, v[0])),
        },
        Case {
            name: "consistency_loss",
            inputs: |r| vec![posteriors(r, 3, 4), posteriors(r, 3, 4), posteriors(r, 3, 4)],
            build: Box::new(|g, v| consistency_loss(g, v[0], v[1], v[2])),
        },
        Case {
            name: "total_loss",
            inputs: |r| vec![posteriors(r, 3, 4), posteriors(r, 3, 4), posteriors(r, 3, 4)],
            build: Box::new(|g, v| total_loss(g, v[0], Some((v[1], v[2])), LossWeights::default())),
        },
        Case {
            name: "softmax -> total_loss",
            inputs: |r| {
                vec![
                    uniform(r, &[3, 4], -2.0, 2.0),
                    uniform(r, &[3, 4], -2.0, 2.0),
                    uniform(r, &[3, 4], -2.0, 2.0),
                ]
            },
            build: Box::new(|g, v| {
                let p: Vec<Var> = v.iter().map(|&x| g.softmax(x)).collect::<Result<_>>()?;
                total_loss(g, p[0], Some((p[1], p[2])), LossWeights::default())
            }),
        },
    ]
}

/// Worst relative error per op over [`SEEDS`] random draws.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .map(|case| {
            let worst = (0..SEEDS)
                .map(|seed| {
                    let inputs = (case.inputs)(&mut SeededRng::new(seed));
                    assert!(inputs.iter().all(|t| t.numel() <= 64), "{}: input too large", case.name);
                    check(&inputs, &*case.build, seed)
                })
                .fold(0.0, f64::max);
            (case.name, worst)
        })
        .collect()
}
