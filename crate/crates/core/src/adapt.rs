//! Test-time adaptation: a few SGD steps per unlabeled batch on the
//! consistency + entropy objective, then predict.

use std::fmt;
use std::str::FromStr;

use crate::augment::{sample_pair_batch, AugmentationPolicy};
use crate::engine::{Graph, Sgd, Tensor};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossWeights};
use crate::models::{BnMode, Model, ParamSet};
use crate::rng::{fingerprint, SeededRng};

/// What happens to the parameters between batches of a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetPolicy {
    /// Every batch starts from the source parameters.
    Episodic,
    /// Adapted parameters carry over to the next batch.
    Online,
}

impl FromStr for ResetPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "episodic" => Ok(ResetPolicy::Episodic),
            "online" => Ok(ResetPolicy::Online),
            _ => Err(Error::Config(format!("unknown reset policy `{s}`"))),
        }
    }
}

impl fmt::Display for ResetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResetPolicy::Episodic => "episodic",
            ResetPolicy::Online => "online",
        })
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdaptationConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub param_set: ParamSet,
    pub reset_policy: ResetPolicy,
    pub bn_mode: BnMode,
    pub policy: AugmentationPolicy,
    pub loss: LossWeights,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            steps: 5,
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 64,
            param_set: ParamSet::All,
            reset_policy: ResetPolicy::Episodic,
            bn_mode: BnMode::TrainStats,
            policy: AugmentationPolicy::default_randaugment(),
            loss: LossWeights::default(),
        }
    }
}

impl AdaptationConfig {
    /// Entropy-only adaptation of the batch-norm scale and shift.
    pub fn tent(&self) -> AdaptationConfig {
        AdaptationConfig {
            param_set: ParamSet::BnAffineOnly,
            loss: LossWeights::ENTROPY_ONLY,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("adapt.lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("adapt.momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("adapt.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("adapt.batch_size must be positive".into());
        }
        for (name, w) in [("consistency", self.loss.consistency), ("entropy", self.loss.entropy)] {
            if !w.is_finite() || w < 0.0 {
                return bad(format!("loss weight `{name}` must be finite and non-negative, got {w}"));
            }
        }
        self.policy.validate()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AdaptationReport {
    /// Objective value at each step, before that step's update.
    pub losses: Vec<f64>,
    pub pre_predictions: Vec<usize>,
    pub post_predictions: Vec<usize>,
    /// L2 norm of the parameter change.
    pub delta_norm: f64,
}

#[derive(Clone, Debug)]
pub struct Adapted {
    pub model: Model,
    /// Post-adaptation posteriors on the clean batch, `[N, K]`.
    pub posteriors: Tensor,
    pub predictions: Vec<usize>,
    pub report: AdaptationReport,
}

fn abort_on_numeric(step: usize, last_finite: Option<f64>) -> impl FnOnce(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) | Error::NumericLayer { .. } => Error::NumericAbort { step, last_finite },
        other => other,
    }
}

/// One optimizer step's worth of objective: returns the loss value and the
/// gradients of the trainable parameters.
fn objective(
    model: &Model,
    batch: &Tensor,
    augmented: Option<&(Tensor, Tensor)>,
    cfg: &AdaptationConfig,
) -> Result<(f64, std::collections::BTreeMap<String, Tensor>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, cfg.param_set);
    let x = g.constant(batch.clone());
    let p_x = model.forward(&mut g, &bound, x, cfg.bn_mode)?.probs;
    let pair = match augmented {
        Some((a, b)) => {
            let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
            let p1 = model.forward(&mut g, &bound, a, cfg.bn_mode)?.probs;
            let p2 = model.forward(&mut g, &bound, b, cfg.bn_mode)?.probs;
            Some((p1, p2))
        }
        None => None,
    };
    let loss = total_loss(&mut g, p_x, pair, cfg.loss)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?.by_name();
    Ok((value, grads))
}

/// Adapts a copy of `model` to `batch` (`[N, C, H, W]`) and predicts.
///
/// Step `t` draws its augmentation pairs from `rng.substream(t)`, so the
/// result is a pure function of the inputs.
pub fn adapt_batch(model: &Model, batch: &Tensor, cfg: &AdaptationConfig, rng: &SeededRng) -> Result<Adapted> {
    cfg.validate()?;
    if batch.rank() == 4 && batch.shape()[0] < 2 && cfg.bn_mode == BnMode::TrainStats {
        return Err(Error::DegenerateBatch(format!(
            "batch of {} cannot supply batch statistics",
            batch.shape()[0]
        )));
    }
    let pre = model.predict(batch, cfg.bn_mode)?;
    let mut adapted = model.clone();
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let last = losses.last().copied();
        let augmented = if cfg.loss.consistency != 0.0 {
            Some(sample_pair_batch(batch, &cfg.policy, &rng.substream(step as u64))?)
        } else {
            None
        };
        let (loss, grads) =
            objective(&adapted, batch, augmented.as_ref(), cfg).map_err(abort_on_numeric(step, last))?;
        if !loss.is_finite() {
            return Err(Error::NumericAbort { step, last_finite: last });
        }
        losses.push(loss);
        let selected = adapted
            .params_mut()
            .iter_mut()
            .filter(|p| cfg.param_set.selects(&p.name));
        opt.step(selected, &grads)?;
    }
    let posteriors = if cfg.steps == 0 {
        pre.clone()
    } else {
        adapted
            .predict(batch, cfg.bn_mode)
            .map_err(abort_on_numeric(cfg.steps, losses.last().copied()))?
    };
    let predictions = posteriors.argmax_rows();
    let report = AdaptationReport {
        losses,
        pre_predictions: pre.argmax_rows(),
        post_predictions: predictions.clone(),
        delta_norm: adapted.param_distance(model),
    };
    Ok(Adapted {
        model: adapted,
        posteriors,
        predictions,
        report,
    })
}

/// Entropy-only adaptation of the batch-norm affine parameters, with the
/// remaining settings taken from `cfg`.
pub fn tent_baseline(model: &Model, batch: &Tensor, cfg: &AdaptationConfig, rng: &SeededRng) -> Result<Adapted> {
    adapt_batch(model, batch, &cfg.tent(), rng)
}

/// Per-batch results of [`run_stream`], in input order.
#[derive(Clone, Debug)]
pub struct StreamResult {
    pub batches: Vec<BatchResult>,
    /// Parameters after the last batch (the source parameters when episodic).
    pub final_model: Model,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    pub posteriors: Tensor,
    pub predictions: Vec<usize>,
    pub report: AdaptationReport,
}

/// The random stream for a batch is keyed by its pixel content, so under the
/// episodic policy permuting the batches permutes the results.
pub fn batch_rng(rng: &SeededRng, batch: &Tensor) -> SeededRng {
    rng.substream(fingerprint(batch.data()))
}

pub fn run_stream(model: &Model, batches: &[Tensor], cfg: &AdaptationConfig, rng: &SeededRng) -> Result<StreamResult> {
    if let Some(first) = batches.first() {
        if let Some(bad) = batches.iter().find(|b| b.shape()[1..] != first.shape()[1..]) {
            return Err(Error::dim(
                "run_stream",
                format!("batch shape {:?} vs {:?}", bad.shape(), first.shape()),
            ));
        }
    }
    let mut current = model.clone();
    let mut out = Vec::with_capacity(batches.len());
    for batch in batches {
        let start = match cfg.reset_policy {
            ResetPolicy::Episodic => model,
            ResetPolicy::Online => &current,
        };
        let a = adapt_batch(start, batch, cfg, &batch_rng(rng, batch))?;
        if cfg.reset_policy == ResetPolicy::Online {
            current = a.model;
        }
        out.push(BatchResult {
            posteriors: a.posteriors,
            predictions: a.predictions,
            report: a.report,
        });
    }
    Ok(StreamResult {
        batches: out,
        final_model: current,
    })
}
