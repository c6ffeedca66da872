//! The adaptation objective.
//!
//! All functions take row-stacked posteriors `[N, K]` on a [`Graph`] and are
//! fully differentiable, including through the mean posterior used by the
//! consistency term. Logs are taken of `max(p, LOG_FLOOR)`; the probability
//! weights themselves are never floored, so `0 * log 0` contributes 0.

use crate::engine::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const LOG_FLOOR: f64 = 1e-12;

/// Row-wise `KL(p || q) = sum_k p_k (ln p_k - ln q_k)`, shape `[N]`.
pub fn kl_divergence(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    if g.shape(p) != g.shape(q) {
        return Err(Error::dim(
            "kl_divergence",
            format!("{:?} vs {:?}", g.shape(p), g.shape(q)),
        ));
    }
    let lp = g.log_floor(p, LOG_FLOOR)?;
    let lq = g.log_floor(q, LOG_FLOOR)?;
    let diff = g.sub(lp, lq)?;
    let terms = g.mul(p, diff)?;
    g.sum_last(terms)
}

/// Row-wise Shannon entropy `-sum_k p_k ln p_k`, shape `[N]`.
pub fn entropy(g: &mut Graph, p: Var) -> Result<Var> {
    let lp = g.log_floor(p, LOG_FLOOR)?;
    let terms = g.mul(p, lp)?;
    let s = g.sum_last(terms)?;
    g.scale(s, -1.0)
}

/// Row-wise consistency loss over the clean posterior and two augmented
/// posteriors: the mean KL divergence of each to their average.
pub fn consistency_loss(g: &mut Graph, p_x: Var, p1: Var, p2: Var) -> Result<Var> {
    for (v, what) in [(p1, "p1"), (p2, "p2")] {
        if g.shape(v) != g.shape(p_x) {
            return Err(Error::dim(
                "consistency_loss",
                format!("{what} {:?} vs p_x {:?}", g.shape(v), g.shape(p_x)),
            ));
        }
    }
    let s = g.add(p_x, p1)?;
    let s = g.add(s, p2)?;
    let mean = g.scale(s, 1.0 / 3.0)?;
    let k0 = kl_divergence(g, p_x, mean)?;
    let k1 = kl_divergence(g, p1, mean)?;
    let k2 = kl_divergence(g, p2, mean)?;
    let t = g.add(k0, k1)?;
    let t = g.add(t, k2)?;
    g.scale(t, 1.0 / 3.0)
}

/// Multipliers on the two terms of the total loss. Both default to 1.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub consistency: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            consistency: 1.0,
            entropy: 1.0,
        }
    }
}

impl LossWeights {
    pub const CONSISTENCY_ONLY: LossWeights = LossWeights {
        consistency: 1.0,
        entropy: 0.0,
    };
    pub const ENTROPY_ONLY: LossWeights = LossWeights {
        consistency: 0.0,
        entropy: 1.0,
    };
}

/// Batch-mean of `w_c * consistency(p_x, p1, p2) + w_e * entropy(p_x)`.
///
/// `p1`/`p2` may be `None` only when the consistency weight is zero.
pub fn total_loss(
    g: &mut Graph,
    p_x: Var,
    augmented: Option<(Var, Var)>,
    weights: LossWeights,
) -> Result<Var> {
    let mut per_sample: Option<Var> = None;
    if weights.consistency != 0.0 {
        let (p1, p2) = augmented.ok_or_else(|| {
            Error::Contract("consistency term enabled but no augmented posteriors given".into())
        })?;
        let c = consistency_loss(g, p_x, p1, p2)?;
        per_sample = Some(if weights.consistency == 1.0 {
            c
        } else {
            g.scale(c, weights.consistency)?
        });
    }
    if weights.entropy != 0.0 {
        let e = entropy(g, p_x)?;
        let e = if weights.entropy == 1.0 {
            e
        } else {
            g.scale(e, weights.entropy)?
        };
        per_sample = Some(match per_sample {
            Some(c) => g.add(c, e)?,
            None => e,
        });
    }
    let per_sample = match per_sample {
        Some(v) => v,
        None => {
            let n = g.shape(p_x)[0];
            g.constant(Tensor::zeros(&[n]))
        }
    };
    g.mean(per_sample)
}

/// A single validated probability vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::dim("posterior", "empty probability vector"));
        }
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain {
                op: "posterior",
                detail: format!("negative or non-finite entry in {p:?}"),
            });
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Domain {
                op: "posterior",
                detail: format!("entries sum to {s}"),
            });
        }
        Ok(Posterior(p))
    }

    pub fn uniform(k: usize) -> Self {
        Posterior(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, i: usize) -> Self {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        Posterior(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn to_row(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.0.len()], self.0.clone())
    }
}

fn scalar_of(f: impl FnOnce(&mut Graph) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let v = f(&mut g)?;
    g.value(v).item()
}

/// KL divergence in nats between two single posteriors.
pub fn kl(p: &Posterior, q: &Posterior) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("kl_divergence", format!("{} vs {}", p.len(), q.len())));
    }
    scalar_of(|g| {
        let (a, b) = (g.constant(p.to_row()), g.constant(q.to_row()));
        kl_divergence(g, a, b)
    })
}

pub fn entropy_of(p: &Posterior) -> Result<f64> {
    scalar_of(|g| {
        let a = g.constant(p.to_row());
        entropy(g, a)
    })
}

pub fn consistency_of(p_x: &Posterior, p1: &Posterior, p2: &Posterior) -> Result<f64> {
    if p1.len() != p_x.len() || p2.len() != p_x.len() {
        return Err(Error::dim("consistency_loss", "posterior lengths differ"));
    }
    scalar_of(|g| {
        let (a, b, c) = (g.constant(p_x.to_row()), g.constant(p1.to_row()), g.constant(p2.to_row()));
        consistency_loss(g, a, b, c)
    })
}

pub fn total_of(p_x: &Posterior, p1: &Posterior, p2: &Posterior) -> Result<f64> {
    if p1.len() != p_x.len() || p2.len() != p_x.len() {
        return Err(Error::dim("total_loss", "posterior lengths differ"));
    }
    scalar_of(|g| {
        let (a, b, c) = (g.constant(p_x.to_row()), g.constant(p1.to_row()), g.constant(p2.to_row()));
        total_loss(g, a, Some((b, c)), LossWeights::default())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn post(v: &[f64]) -> Posterior {
        Posterior::new(v.to_vec()).unwrap()
    }

    // Frozen from a 50-digit mpmath evaluation of the closed forms.
    const KL_HALF_VS_QUARTER: f64 = 0.143_841_036_225_890_46;
    const KL_QUARTER_VS_HALF: f64 = 0.130_812_035_941_136_96;
    const CONS_ONEHOT_VS_UNIFORM: f64 = 0.174_416_047_921_515_95;

    #[test]
    fn kl_identities() {
        let p = post(&[0.2, 0.3, 0.5]);
        assert_eq!(kl(&p, &p).unwrap(), 0.0);
        let a = kl(&post(&[0.5, 0.5]), &post(&[0.25, 0.75])).unwrap();
        let b = kl(&post(&[0.25, 0.75]), &post(&[0.5, 0.5])).unwrap();
        assert!((a - KL_HALF_VS_QUARTER).abs() < 1e-12);
        assert!((b - KL_QUARTER_VS_HALF).abs() < 1e-12);
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn kl_length_mismatch() {
        assert!(matches!(
            kl(&post(&[1.0]), &post(&[0.5, 0.5])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn consistency_corners() {
        let p = post(&[0.1, 0.9]);
        assert_eq!(consistency_of(&p, &p, &p).unwrap(), 0.0);
        let e: Vec<Posterior> = (0..3).map(|i| Posterior::one_hot(3, i)).collect();
        let v = consistency_of(&e[0], &e[1], &e[2]).unwrap();
        assert!((v - 3f64.ln()).abs() < 1e-12);
        let u = post(&[0.5, 0.5]);
        let v = consistency_of(&post(&[1.0, 0.0]), &u, &u).unwrap();
        assert!((v - CONS_ONEHOT_VS_UNIFORM).abs() < 1e-12);
    }

    #[test]
    fn entropy_corners() {
        assert_eq!(entropy_of(&Posterior::one_hot(4, 2)).unwrap(), 0.0);
        assert!((entropy_of(&Posterior::uniform(7)).unwrap() - 7f64.ln()).abs() < 1e-12);
        assert!((entropy_of(&post(&[0.5, 0.5])).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn total_corners() {
        let h = Posterior::one_hot(3, 1);
        assert_eq!(total_of(&h, &h, &h).unwrap(), 0.0);
        let u = Posterior::uniform(5);
        assert!((total_of(&u, &u, &u).unwrap() - 5f64.ln()).abs() < 1e-12);
        let half = post(&[0.5, 0.5]);
        let v = total_of(&post(&[1.0, 0.0]), &half, &half).unwrap();
        assert!((v - CONS_ONEHOT_VS_UNIFORM).abs() < 1e-12);
    }

    #[test]
    fn consistency_requires_augmented_posteriors() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[2, 2], 0.5));
        assert!(total_loss(&mut g, p, None, LossWeights::default()).is_err());
        let v = total_loss(&mut g, p, None, LossWeights::ENTROPY_ONLY).unwrap();
        assert!((g.value(v).item().unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn posterior_validation() {
        assert!(Posterior::new(vec![0.5, 0.6]).is_err());
        assert!(Posterior::new(vec![-0.1, 1.1]).is_err());
        assert!(Posterior::new(vec![]).is_err());
    }
}
