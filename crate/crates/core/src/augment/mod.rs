//! Stochastic augmentation samplers.
//!
//! Each sampler is split into a `sample` step that draws every random choice
//! up front and an `apply` step that is a pure function of the image and the
//! draw. This keeps the draws inspectable and lets tests pin boundary cases
//! such as a mixing coefficient of exactly 1.

mod image;
mod ops;

use rand::{Rng, RngCore};
use rand_distr::{Beta, Distribution, Gamma};

pub use image::Image;
pub use ops::{apply_op, AugOp, MAX_LEVEL};
pub(crate) use ops::affine;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// One sampled primitive op.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpDraw {
    pub op: AugOp,
    pub level: u32,
    pub negate: bool,
}

impl OpDraw {
    pub fn apply(&self, x: &Image) -> Result<Image> {
        apply_op(x, self.op, self.level, self.negate)
    }
}

fn compose(x: &Image, ops: &[OpDraw]) -> Result<Image> {
    let mut y = x.clone();
    for d in ops {
        y = d.apply(&y)?;
    }
    Ok(y)
}

/// RandAugment: `n` ops drawn uniformly with replacement from `ops`, each at
/// an intensity drawn uniformly from `1..=m`, applied in sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct RandAugment {
    pub m: u32,
    pub n: u32,
    pub ops: Vec<AugOp>,
}

impl RandAugment {
    pub fn new(m: u32, n: u32) -> Result<Self> {
        if !(1..=MAX_LEVEL).contains(&m) {
            return Err(Error::Config(format!("randaugment m={m} outside [1, {MAX_LEVEL}]")));
        }
        Ok(RandAugment {
            m,
            n,
            ops: AugOp::ALL.to_vec(),
        })
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> Vec<OpDraw> {
        (0..self.n)
            .map(|_| {
                let level = rng.random_range(1..=self.m);
                let op = self.ops[rng.random_range(0..self.ops.len())];
                let negate = rng.random_bool(0.5);
                OpDraw { op, level, negate }
            })
            .collect()
    }

    pub fn apply(&self, x: &Image, draws: &[OpDraw]) -> Result<Image> {
        compose(x, draws)
    }

    pub fn augment(&self, x: &Image, rng: &mut impl RngCore) -> Result<Image> {
        let draws = self.sample(rng);
        self.apply(x, &draws)
    }
}

/// AugMix: `width` op chains mixed with Dirichlet(`alpha`) weights, then
/// blended with the input by a Beta(`alpha`, `alpha`) coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct AugMix {
    pub width: u32,
    pub alpha: f64,
    pub depth: u32,
    pub severity: u32,
    pub ops: Vec<AugOp>,
}

/// Random choices of one AugMix application.
#[derive(Clone, Debug, PartialEq)]
pub struct AugMixDraw {
    pub weights: Vec<f64>,
    pub chains: Vec<Vec<OpDraw>>,
    /// Weight of the original image in the final blend.
    pub mix: f64,
}

impl AugMix {
    pub fn new(width: u32, alpha: f64, depth: u32, severity: u32) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("augmix width (k) must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("augmix alpha must be positive, got {alpha}")));
        }
        if depth == 0 {
            return Err(Error::Config("augmix depth must be at least 1".into()));
        }
        if !(1..=MAX_LEVEL).contains(&severity) {
            return Err(Error::Config(format!(
                "augmix severity {severity} outside [1, {MAX_LEVEL}]"
            )));
        }
        Ok(AugMix {
            width,
            alpha,
            depth,
            severity,
            ops: AugOp::ALL.to_vec(),
        })
    }

    /// Symmetric Dirichlet draw via normalized Gamma(alpha, 1) variates.
    pub fn dirichlet(&self, rng: &mut impl RngCore) -> Vec<f64> {
        let gamma = Gamma::new(self.alpha, 1.0).expect("alpha validated");
        let raw: Vec<f64> = (0..self.width).map(|_| gamma.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / self.width as f64; self.width as usize]
        }
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> AugMixDraw {
        let weights = self.dirichlet(rng);
        let chains = (0..self.width)
            .map(|_| {
                let candidates: Vec<OpDraw> = (0..self.depth)
                    .map(|_| OpDraw {
                        op: self.ops[rng.random_range(0..self.ops.len())],
                        level: self.severity,
                        negate: rng.random_bool(0.5),
                    })
                    .collect();
                let len = rng.random_range(1..=self.depth) as usize;
                candidates[..len].to_vec()
            })
            .collect();
        let mix = Beta::new(self.alpha, self.alpha)
            .expect("alpha validated")
            .sample(rng);
        AugMixDraw { weights, chains, mix }
    }

    /// The blend before the final clamp: `mix * x + (1 - mix) * sum_i w_i chain_i(x)`.
    pub fn mix_unclamped(&self, x: &Image, draw: &AugMixDraw) -> Result<Vec<f64>> {
        // Accumulate offsets from x rather than raw chain outputs, so chains
        // that leave x untouched reproduce it bit for bit.
        let mut acc = vec![0.0; x.data().len()];
        for (w, chain) in draw.weights.iter().zip(&draw.chains) {
            let y = compose(x, chain)?;
            for ((a, v), xv) in acc.iter_mut().zip(y.data()).zip(x.data()) {
                *a += w * (v - xv);
            }
        }
        Ok(x
            .data()
            .iter()
            .zip(&acc)
            .map(|(&xv, &av)| xv + (1.0 - draw.mix) * av)
            .collect())
    }

    pub fn apply(&self, x: &Image, draw: &AugMixDraw) -> Result<Image> {
        Ok(x.with_data(self.mix_unclamped(x, draw)?))
    }

    pub fn augment(&self, x: &Image, rng: &mut impl RngCore) -> Result<Image> {
        let draw = self.sample(rng);
        self.apply(x, &draw)
    }
}

/// The stochastic map that produces augmented views of a test image.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AugmentationPolicy {
    RandAugment { m: u32, n: u32 },
    AugMix { k: u32, alpha: f64, depth: u32, severity: u32 },
}

impl AugmentationPolicy {
    /// Low-intensity RandAugment: `m = 1`, `n = 1`.
    pub fn default_randaugment() -> Self {
        AugmentationPolicy::RandAugment { m: 1, n: 1 }
    }

    /// Low-intensity AugMix: one chain, `alpha = 1`, `depth = 3`, `severity = 2`.
    pub fn default_augmix() -> Self {
        AugmentationPolicy::AugMix {
            k: 1,
            alpha: 1.0,
            depth: 3,
            severity: 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AugmentationPolicy::RandAugment { .. } => "randaugment",
            AugmentationPolicy::AugMix { .. } => "augmix",
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().map(|_| ())
    }

    fn sampler(&self) -> Result<Sampler> {
        Ok(match *self {
            AugmentationPolicy::RandAugment { m, n } => Sampler::Rand(RandAugment::new(m, n)?),
            AugmentationPolicy::AugMix {
                k,
                alpha,
                depth,
                severity,
            } => Sampler::Mix(AugMix::new(k, alpha, depth, severity)?),
        })
    }

    /// One draw from the policy.
    pub fn augment(&self, x: &Image, rng: &mut impl RngCore) -> Result<Image> {
        match self.sampler()? {
            Sampler::Rand(r) => r.augment(x, rng),
            Sampler::Mix(a) => a.augment(x, rng),
        }
    }

    /// `(key, value)` pairs under the `aug.` config section.
    pub fn to_config_pairs(&self) -> Vec<(String, String)> {
        let mut v = vec![("aug.kind".to_string(), self.kind().to_string())];
        match self {
            AugmentationPolicy::RandAugment { m, n } => {
                v.push(("aug.m".into(), m.to_string()));
                v.push(("aug.n".into(), n.to_string()));
            }
            AugmentationPolicy::AugMix {
                k,
                alpha,
                depth,
                severity,
            } => {
                v.push(("aug.k".into(), k.to_string()));
                v.push(("aug.alpha".into(), alpha.to_string()));
                v.push(("aug.depth".into(), depth.to_string()));
                v.push(("aug.severity".into(), severity.to_string()));
            }
        }
        v
    }

    /// Reads the policy from `aug.*` keys; absent numeric keys take the
    /// low-intensity defaults.
    pub fn from_config(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        fn num<T: std::str::FromStr>(get: &impl Fn(&str) -> Option<String>, key: &str, default: T) -> Result<T> {
            match get(key) {
                None => Ok(default),
                Some(s) => s
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`"))),
            }
        }
        let kind = get("aug.kind").unwrap_or_else(|| "randaugment".into());
        let policy = match kind.trim() {
            "randaugment" => AugmentationPolicy::RandAugment {
                m: num(&get, "aug.m", 1)?,
                n: num(&get, "aug.n", 1)?,
            },
            "augmix" => AugmentationPolicy::AugMix {
                k: num(&get, "aug.k", 1)?,
                alpha: num(&get, "aug.alpha", 1.0)?,
                depth: num(&get, "aug.depth", 3)?,
                severity: num(&get, "aug.severity", 2)?,
            },
            other => return Err(Error::Config(format!("unknown aug.kind `{other}`"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

enum Sampler {
    Rand(RandAugment),
    Mix(AugMix),
}

/// Two independent augmentations of `x`, drawn from child streams 1 and 2 of
/// `rng`.
pub fn sample_pair(x: &Image, policy: &AugmentationPolicy, rng: &SeededRng) -> Result<(Image, Image)> {
    let sampler = policy.sampler()?;
    let draw = |stream: u64| -> Result<Image> {
        let mut r = rng.substream(stream);
        match &sampler {
            Sampler::Rand(s) => s.augment(x, &mut r),
            Sampler::Mix(s) => s.augment(x, &mut r),
        }
    };
    Ok((draw(1)?, draw(2)?))
}

/// Augmented pairs for every item of an `[N, C, H, W]` batch; item `i` uses
/// child stream `i` of `rng`.
pub fn sample_pair_batch(batch: &Tensor, policy: &AugmentationPolicy, rng: &SeededRng) -> Result<(Tensor, Tensor)> {
    if batch.rank() != 4 {
        return Err(Error::dim("sample_pair_batch", format!("{:?}", batch.shape())));
    }
    let n = batch.shape()[0];
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for i in 0..n {
        let x = Image::from_tensor(&batch.slice_outer(i))?;
        let (a, b) = sample_pair(&x, policy, &rng.substream(i as u64))?;
        first.push(a.to_tensor());
        second.push(b.to_tensor());
    }
    Ok((Tensor::stack(&first)?, Tensor::stack(&second)?))
}
