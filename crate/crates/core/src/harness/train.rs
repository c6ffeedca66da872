use rand::seq::SliceRandom;

use super::Dataset;
use crate::engine::{Graph, Sgd, Tensor};
use crate::error::{Error, Result};
use crate::losses::LOG_FLOOR;
use crate::models::{Architecture, BnMode, Model, ParamSet};
use crate::rng::SeededRng;

/// Supervised source-training hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainRecipe {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; annealed to zero with a half cosine.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Weight of the new batch in the BN running-statistics average.
    pub bn_momentum: f64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            epochs: 15,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            bn_momentum: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
}

/// Mean cross-entropy of `probs` against integer labels.
fn cross_entropy(g: &mut Graph, probs: crate::engine::Var, labels: &[usize]) -> Result<crate::engine::Var> {
    let k = g.shape(probs)[1];
    let mut onehot = Tensor::zeros(&[labels.len(), k]);
    for (i, &l) in labels.iter().enumerate() {
        onehot.data_mut()[i * k + l] = 1.0;
    }
    let t = g.constant(onehot);
    let lp = g.log_floor(probs, LOG_FLOOR)?;
    let picked = g.mul(t, lp)?;
    let per = g.sum_last(picked)?;
    let m = g.mean(per)?;
    g.scale(m, -1.0)
}

/// Trains `arch` from the seeded initialization on `data`. Each epoch visits
/// the data in a fresh seeded order; a trailing batch of one is skipped.
pub fn train_source_model(data: &Dataset, arch: &Architecture, recipe: &TrainRecipe, seed: u64) -> Result<TrainOutcome> {
    if data.image_shape() != arch.input || data.classes != arch.classes {
        return Err(Error::Config(format!(
            "dataset ({:?}, {} classes) does not fit architecture {arch}",
            data.image_shape(),
            data.classes
        )));
    }
    if recipe.batch_size < 2 {
        return Err(Error::Config("training batch size must be at least 2".into()));
    }
    let mut model = Model::build(arch, seed);
    let rng = SeededRng::new(seed).substream(0x7121);
    let mut opt = Sgd::new(recipe.lr, recipe.momentum, recipe.weight_decay);
    let per_epoch = data.len().div_ceil(recipe.batch_size);
    let total = (recipe.epochs * per_epoch).max(1) as f64;
    let mut log = Vec::with_capacity(recipe.epochs);
    let mut t = 0usize;
    for epoch in 0..recipe.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng.substream(epoch as u64));
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in order.chunks(recipe.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let batch = data.subset(idx);
            let mut g = Graph::new();
            let bound = model.bind(&mut g, ParamSet::All);
            let x = g.constant(batch.images);
            let out = model
                .forward(&mut g, &bound, x, BnMode::TrainStats)
                .map_err(|_| Error::Diverged { epoch, batch: b })?;
            let loss = cross_entropy(&mut g, out.probs, &batch.labels)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            let preds = g.value(out.probs).argmax_rows();
            correct += preds.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            seen += idx.len();
            loss_sum += value * idx.len() as f64;
            let grads = g.backward(loss)?.by_name();
            opt.lr = recipe.lr * 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / total).cos());
            opt.step(model.params_mut().iter_mut(), &grads)?;
            model.update_running_stats(&out.bn_moments, recipe.bn_momentum);
            t += 1;
        }
        log.push(EpochLog {
            epoch,
            mean_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
        });
    }
    Ok(TrainOutcome { model, log })
}

/// Top-1 accuracy of `model` on `data`, evaluated in chunks of `batch_size`.
pub fn evaluate(model: &Model, data: &Dataset, mode: BnMode, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    for b in data.batches(batch_size) {
        let p = model.predict(&b.images, mode)?;
        correct += p.argmax_rows().iter().zip(&b.labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}
