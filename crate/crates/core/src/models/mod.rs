//! Desk-scale classifiers whose forward pass ends in a softmax, so the
//! output rows are class posteriors.

mod arch;
mod checkpoint;

use rand::Rng;

pub use arch::{ArchKind, Architecture, CNN_BLOCKS, MLP_HIDDEN};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::engine::{BatchMoments, BnStats, Graph, Parameter, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Source of batch-norm statistics in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMode {
    /// Normalize with the statistics of the current batch.
    TrainStats,
    /// Normalize with the stored running statistics.
    RunningStats,
}

impl std::str::FromStr for BnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-stats" => Ok(BnMode::TrainStats),
            "running-stats" => Ok(BnMode::RunningStats),
            _ => Err(Error::Config(format!("unknown bn mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for BnMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BnMode::TrainStats => "train-stats",
            BnMode::RunningStats => "running-stats",
        })
    }
}

/// Which parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSet {
    All,
    BnAffineOnly,
    None,
}

impl std::str::FromStr for ParamSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ParamSet::All),
            "bn_affine_only" => Ok(ParamSet::BnAffineOnly),
            "none" => Ok(ParamSet::None),
            _ => Err(Error::Config(format!("unknown parameter set `{s}`"))),
        }
    }
}

impl std::fmt::Display for ParamSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ParamSet::All => "all",
            ParamSet::BnAffineOnly => "bn_affine_only",
            ParamSet::None => "none",
        })
    }
}

/// True for the per-channel scale/shift of a batch-norm layer.
pub fn is_bn_affine(name: &str) -> bool {
    name.contains(".bn.") && (name.ends_with(".gamma") || name.ends_with(".beta"))
}

impl ParamSet {
    pub fn selects(self, name: &str) -> bool {
        match self {
            ParamSet::All => true,
            ParamSet::BnAffineOnly => is_bn_affine(name),
            ParamSet::None => false,
        }
    }
}

/// Classifier parameters (θ) plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    params: Vec<Parameter>,
    buffers: Vec<Parameter>,
}

/// Parameter leaves bound onto a graph, in the model's parameter order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Output of [`Model::forward`].
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub probs: Var,
    /// Batch moments per BN layer (layer prefix, moments), in batch-stats mode.
    pub bn_moments: Vec<(String, BatchMoments)>,
}

fn he_uniform(rng: &mut SeededRng, name: &str, shape: Vec<usize>, fan_in: usize) -> Parameter {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..bound) as f32)
        .collect();
    Parameter {
        name: name.to_string(),
        shape,
        data,
    }
}

fn layer_err(layer: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite(_) => Error::NumericLayer {
            layer: layer.to_string(),
        },
        other => other,
    }
}

impl Model {
    /// Deterministic initialization: He-uniform weights, unit BN scale, zero
    /// shifts and biases, running mean 0 and variance 1.
    pub fn build(arch: &Architecture, seed: u64) -> Model {
        let mut rng = SeededRng::new(seed).substream(0x1417);
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        match arch.kind {
            ArchKind::MlpSmall => {
                let d = arch.input_len();
                params.push(he_uniform(&mut rng, "fc1.weight", vec![d, MLP_HIDDEN], d));
                params.push(Parameter::zeros("fc1.bias", vec![MLP_HIDDEN]));
                params.push(he_uniform(&mut rng, "fc2.weight", vec![MLP_HIDDEN, arch.classes], MLP_HIDDEN));
                params.push(Parameter::zeros("fc2.bias", vec![arch.classes]));
            }
            ArchKind::CnnBnSmall => {
                let mut in_ch = arch.input[0];
                for (i, &(out_ch, _)) in CNN_BLOCKS.iter().enumerate() {
                    let b = i + 1;
                    params.push(he_uniform(
                        &mut rng,
                        &format!("block{b}.conv.weight"),
                        vec![out_ch, in_ch, 3, 3],
                        in_ch * 9,
                    ));
                    params.push(Parameter {
                        name: format!("block{b}.bn.gamma"),
                        shape: vec![out_ch],
                        data: vec![1.0; out_ch],
                    });
                    params.push(Parameter::zeros(format!("block{b}.bn.beta"), vec![out_ch]));
                    buffers.push(Parameter::zeros(format!("block{b}.bn.running_mean"), vec![out_ch]));
                    buffers.push(Parameter {
                        name: format!("block{b}.bn.running_var"),
                        shape: vec![out_ch],
                        data: vec![1.0; out_ch],
                    });
                    in_ch = out_ch;
                }
                params.push(he_uniform(&mut rng, "head.weight", vec![in_ch, arch.classes], in_ch));
                params.push(Parameter::zeros("head.bias", vec![arch.classes]));
            }
        }
        Model {
            arch: arch.clone(),
            params,
            buffers,
        }
    }

    pub(crate) fn from_parts(arch: Architecture, params: Vec<Parameter>, buffers: Vec<Parameter>) -> Model {
        Model {
            arch,
            params,
            buffers,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Parameter] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Parameter] {
        &mut self.buffers
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn buffer(&self, name: &str) -> Option<&Parameter> {
        self.buffers.iter().find(|p| p.name == name)
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Places every parameter on `g` as a named leaf; those selected by
    /// `trainable` require gradients.
    pub fn bind(&self, g: &mut Graph, trainable: ParamSet) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| g.parameter(p.name.clone(), p.to_tensor(), trainable.selects(&p.name)))
            .collect();
        BoundParams { vars }
    }

    fn var(&self, bound: &BoundParams, name: &str) -> Var {
        let i = self
            .params
            .iter()
            .position(|p| p.name == name)
            .expect("parameter registered at build time");
        bound.vars[i]
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let ok = shape.len() == 4 && shape[1..] == self.arch.input;
        if !ok {
            return Err(Error::dim(
                "predict",
                format!(
                    "batch shape {shape:?} does not match architecture input [N, {}, {}, {}]",
                    self.arch.input[0], self.arch.input[1], self.arch.input[2]
                ),
            ));
        }
        Ok(())
    }

    /// Builds the forward pass for `x` (shape `[N, C, H, W]`) on `g`.
    pub fn forward(&self, g: &mut Graph, bound: &BoundParams, x: Var, mode: BnMode) -> Result<ForwardPass> {
        self.check_input(g.shape(x))?;
        let n = g.shape(x)[0];
        let mut bn_moments = Vec::new();
        let logits = match self.arch.kind {
            ArchKind::MlpSmall => {
                let flat = g.reshape(x, &[n, self.arch.input_len()])?;
                let h = g.matmul(flat, self.var(bound, "fc1.weight")).map_err(layer_err("fc1"))?;
                let h = g.add(h, self.var(bound, "fc1.bias")).map_err(layer_err("fc1"))?;
                let h = g.relu(h)?;
                let z = g.matmul(h, self.var(bound, "fc2.weight")).map_err(layer_err("fc2"))?;
                g.add(z, self.var(bound, "fc2.bias")).map_err(layer_err("fc2"))?
            }
            ArchKind::CnnBnSmall => {
                let mut h = x;
                for (i, &(_, stride)) in CNN_BLOCKS.iter().enumerate() {
                    let layer = format!("block{}", i + 1);
                    let w = self.var(bound, &format!("{layer}.conv.weight"));
                    h = g.conv2d(h, w, stride, 1).map_err(layer_err(&layer))?;
                    let gamma = self.var(bound, &format!("{layer}.bn.gamma"));
                    let beta = self.var(bound, &format!("{layer}.bn.beta"));
                    let (rm, rv);
                    let stats = match mode {
                        BnMode::TrainStats => BnStats::Batch,
                        BnMode::RunningStats => {
                            rm = self.buffer(&format!("{layer}.bn.running_mean")).unwrap().values_f64();
                            rv = self.buffer(&format!("{layer}.bn.running_var")).unwrap().values_f64();
                            BnStats::Running { mean: &rm, var: &rv }
                        }
                    };
                    let (y, moments) = g.batchnorm(h, gamma, beta, stats).map_err(layer_err(&layer))?;
                    if let Some(m) = moments {
                        bn_moments.push((format!("{layer}.bn"), m));
                    }
                    h = g.relu(y)?;
                }
                let pooled = g.global_avg_pool(h)?;
                let z = g.matmul(pooled, self.var(bound, "head.weight")).map_err(layer_err("head"))?;
                g.add(z, self.var(bound, "head.bias")).map_err(layer_err("head"))?
            }
        };
        let probs = g.softmax(logits).map_err(layer_err("softmax"))?;
        Ok(ForwardPass {
            logits,
            probs,
            bn_moments,
        })
    }

    /// Class posteriors `[N, K]` for `batch`, without recording gradients.
    pub fn predict(&self, batch: &Tensor, mode: BnMode) -> Result<Tensor> {
        self.check_input(batch.shape())?;
        let mut g = Graph::new();
        let bound = self.bind(&mut g, ParamSet::None);
        let x = g.constant(batch.clone());
        let out = self.forward(&mut g, &bound, x, mode)?;
        Ok(g.value(out.probs).clone())
    }

    /// Exponential moving average of BN running statistics (`momentum`
    /// weights the new batch; variance is stored unbiased).
    pub fn update_running_stats(&mut self, moments: &[(String, BatchMoments)], momentum: f64) {
        for (layer, m) in moments {
            let unbias = if m.count > 1 {
                m.count as f64 / (m.count - 1) as f64
            } else {
                1.0
            };
            for (suffix, values) in [("running_mean", &m.mean), ("running_var", &m.var)] {
                let name = format!("{layer}.{suffix}");
                if let Some(buf) = self.buffers.iter_mut().find(|b| b.name == name) {
                    for (b, &v) in buf.data.iter_mut().zip(values.iter()) {
                        let v = if suffix == "running_var" { v * unbias } else { v };
                        *b = ((1.0 - momentum) * *b as f64 + momentum * v) as f32;
                    }
                }
            }
        }
    }

    /// L2 distance between the parameters of two models of the same
    /// architecture.
    pub fn param_distance(&self, other: &Model) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .flat_map(|(a, b)| a.data.iter().zip(&b.data))
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(n: usize, seed: u64) -> Tensor {
        let mut rng = SeededRng::new(seed);
        Tensor::from_fn(&[n, 3, 32, 32], |_| rng.random::<f64>())
    }

    #[test]
    fn same_seed_same_parameters() {
        let arch = Architecture::cnn_bn_small(10);
        assert_eq!(Model::build(&arch, 5), Model::build(&arch, 5));
        assert_ne!(Model::build(&arch, 5), Model::build(&arch, 6));
    }

    #[test]
    fn cnn_output_shape_and_rows() {
        let m = Model::build(&Architecture::cnn_bn_small(10), 0);
        let p = m.predict(&random_batch(4, 1), BnMode::TrainStats).unwrap();
        assert_eq!(p.shape(), &[4, 10]);
        for i in 0..4 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn duplicated_rows_give_identical_posteriors() {
        let m = Model::build(&Architecture::cnn_bn_small(10), 3);
        let b = random_batch(1, 9);
        let two = Tensor::stack(&[b.slice_outer(0), b.slice_outer(0)]).unwrap();
        let p = m.predict(&two, BnMode::RunningStats).unwrap();
        assert_eq!(p.row(0), p.row(1));
    }

    #[test]
    fn bn_layers_have_running_buffers() {
        let m = Model::build(&Architecture::cnn_bn_small(10), 0);
        for b in 1..=3 {
            assert!(m.buffer(&format!("block{b}.bn.running_mean")).is_some());
            assert!(m.buffer(&format!("block{b}.bn.running_var")).is_some());
        }
        assert_eq!(m.buffers().len(), 6);
        assert!(Model::build(&"mlp-small".parse().unwrap(), 0).buffers().is_empty());
    }

    #[test]
    fn wrong_input_shape_is_dimension_error() {
        let m = Model::build(&Architecture::cnn_bn_small(10), 0);
        let bad = Tensor::zeros(&[2, 1, 32, 32]);
        assert!(matches!(m.predict(&bad, BnMode::TrainStats), Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_item_batch_stats_is_degenerate() {
        let m = Model::build(&Architecture::cnn_bn_small(10), 0);
        let err = m.predict(&random_batch(1, 0), BnMode::TrainStats).unwrap_err();
        assert!(matches!(err, Error::DegenerateBatch(_)));
        assert!(m.predict(&random_batch(1, 0), BnMode::RunningStats).is_ok());
    }

    #[test]
    fn huge_weights_report_the_layer() {
        let mut m = Model::build(&"mlp-small:3x32x32:10".parse().unwrap(), 0);
        for v in &mut m.params_mut()[0].data {
            *v = f32::MAX;
        }
        let x = Tensor::full(&[2, 3, 32, 32], 1e300);
        let err = m.predict(&x, BnMode::RunningStats).unwrap_err();
        match err {
            Error::NumericLayer { layer } => assert_eq!(layer, "fc1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn param_set_selection() {
        assert!(ParamSet::BnAffineOnly.selects("block2.bn.gamma"));
        assert!(ParamSet::BnAffineOnly.selects("block2.bn.beta"));
        assert!(!ParamSet::BnAffineOnly.selects("block2.conv.weight"));
        assert!(!ParamSet::BnAffineOnly.selects("head.bias"));
        assert!(ParamSet::All.selects("head.bias"));
        assert!(!ParamSet::None.selects("head.bias"));
    }
}
