//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`] handles in execution
//! order. Because nodes can only reference earlier nodes, the tape is acyclic
//! by construction and `backward` is a single reverse sweep. Ops whose inputs
//! all lack `requires_grad` are stored as constants and never visited.

use std::collections::BTreeMap;

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch-norm epsilon.
pub const BN_EPS: f64 = 1e-5;

/// How batch normalization obtains its statistics.
#[derive(Clone, Debug, PartialEq)]
pub enum BnStats<'a> {
    /// Per-channel mean and biased variance of the current batch.
    Batch,
    /// Stored per-channel mean and variance.
    Running { mean: &'a [f64], var: &'a [f64] },
}

/// Per-channel statistics measured on a batch in batch-stats mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Number of values reduced per channel.
    pub count: usize,
}

#[derive(Debug)]
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
    channels: usize,
    inner: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Conv2d { x: Var, w: Var, geo: ConvGeometry, out_ch: usize },
    Relu(Var),
    BatchNorm { x: Var, gamma: Var, beta: Var, cache: Box<BnCache> },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Log(Var),
    LogFloor(Var, f64),
    Exp(Var),
    Softmax(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Matmul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(..) => "relu",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::Log(..) => "log",
            Op::LogFloor(..) => "log_floor",
            Op::Exp(..) => "exp",
            Op::Softmax(..) => "softmax",
            Op::GlobalAvgPool(..) => "global_avg_pool",
            Op::Reshape(..) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    named: BTreeMap<String, usize>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Gradient for every named leaf that requires grad.
    pub fn by_name(&self) -> BTreeMap<String, Tensor> {
        self.named
            .iter()
            .map(|(name, &i)| (name.clone(), self.get(Var(i))))
            .collect()
    }
}

/// Broadcast rule shared by add/sub/mul: `b` either matches `a` exactly or
/// equals a trailing suffix of `a`'s shape and is repeated over the prefix.
fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    a == b || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool, name: Option<String>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
            name,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false, None)
    }

    /// An anonymous differentiable leaf.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.leaf(t, true, None)
    }

    /// A named leaf; its gradient is reported by [`Gradients::by_name`] when
    /// `requires_grad` is set.
    pub fn parameter(&mut self, name: impl Into<String>, t: Tensor, requires_grad: bool) -> Var {
        self.leaf(t, requires_grad, Some(name.into()))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcast_ok(ta.shape(), tb.shape()) {
            return Err(Error::dim(
                name,
                format!("{:?} and {:?}", ta.shape(), tb.shape()),
            ));
        }
        let nb = tb.numel();
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x * c).collect());
        self.push(t, Op::Scale(a, c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::dim(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, 1.0, ta.data(), false, tb.data(), false, 0.0, &mut out);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), &[a, b])
    }

    /// 2-D convolution without bias. `x` is `[N, C, H, W]`, `w` is
    /// `[O, C, kh, kw]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 4 || tw.rank() != 4 || tx.shape()[1] != tw.shape()[1] || stride == 0 {
            return Err(Error::dim(
                "conv2d",
                format!("input {:?}, weight {:?}, stride {stride}", tx.shape(), tw.shape()),
            ));
        }
        let (n, c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (o, kh, kw) = (tw.shape()[0], tw.shape()[2], tw.shape()[3]);
        if h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(Error::dim("conv2d", "kernel larger than padded input"));
        }
        let geo = ConvGeometry {
            channels: c,
            height: h,
            width: wd,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let out = kernels::conv2d_forward(tx.data(), tw.data(), n, o, &geo);
        let t = Tensor::from_parts(vec![n, o, geo.out_h(), geo.out_w()], out);
        self.push(t, Op::Conv2d { x, w, geo, out_ch: o }, &[x, w])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        let t = Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x.max(0.0)).collect(),
        );
        self.push(t, Op::Relu(a), &[a])
    }

    /// Batch normalization over `[N, C]` or `[N, C, H, W]` input with
    /// per-channel affine `gamma`, `beta` of shape `[C]`.
    ///
    /// In batch-stats mode the measured moments are returned so callers can
    /// maintain running averages.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: BnStats<'_>,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let tx = self.value(x);
        let shape = tx.shape().to_vec();
        if !(shape.len() == 2 || shape.len() == 4) {
            return Err(Error::dim("batchnorm", format!("input shape {shape:?}")));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        for (v, what) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(v) != [c] {
                return Err(Error::dim(
                    "batchnorm",
                    format!("{what} shape {:?}, expected [{c}]", self.shape(v)),
                ));
            }
        }
        let xd = tx.data();
        let count = n * inner;
        let (mean, var, moments) = match stats {
            BnStats::Batch => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "batch-stats normalization needs at least 2 samples, got {n}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * inner;
                        s += xd[off..off + inner].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut ss = 0.0;
                    for b in 0..n {
                        let off = (b * c + ch) * inner;
                        ss += xd[off..off + inner].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                    }
                    mean[ch] = mu;
                    var[ch] = ss / count as f64;
                }
                let moments = BatchMoments {
                    mean: mean.clone(),
                    var: var.clone(),
                    count,
                };
                (mean, var, Some(moments))
            }
            BnStats::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::dim("batchnorm", "running statistics length mismatch"));
                }
                if var.iter().any(|&v| v < 0.0) {
                    return Err(Error::Domain {
                        op: "batchnorm",
                        detail: "negative running variance".into(),
                    });
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = g[ch] * h + bt[ch];
                }
            }
        }
        let cache = Box::new(BnCache {
            xhat,
            inv_std,
            batch_stats: moments.is_some(),
            channels: c,
            inner,
        });
        let v = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
            &[x, gamma, beta],
        )?;
        Ok((v, moments))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Sums over the last axis: `[.., K] -> [..]` (a rank-1 input becomes `[1]`).
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let k = *t.shape().last().unwrap();
        let mut shape = t.shape()[..t.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let data = t.data().chunks(k).map(|r| r.iter().sum()).collect();
        self.push(Tensor::from_parts(shape, data), Op::SumLast(a), &[a])
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x.ln()).collect());
        self.push(out, Op::Log(a), &[a])
    }

    /// `ln(max(x, floor))`. The gradient is zero where the floor is active.
    pub fn log_floor(&mut self, a: Var, floor: f64) -> Result<Var> {
        if floor <= 0.0 {
            return Err(Error::Domain {
                op: "log_floor",
                detail: format!("floor must be positive, got {floor}"),
            });
        }
        let t = self.value(a);
        let out = Tensor::from_parts(
            t.shape().to_vec(),
            t.data().iter().map(|x| x.max(floor).ln()).collect(),
        );
        self.push(out, Op::LogFloor(a, floor), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x.exp()).collect());
        self.push(out, Op::Exp(a), &[a])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let k = *t.shape().last().unwrap();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(k) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for &z in row {
                let e = (z - max).exp();
                total += e;
                data.push(e);
            }
            for p in &mut data[start..] {
                *p /= total;
            }
        }
        self.push(Tensor::from_parts(t.shape().to_vec(), data), Op::Softmax(a), &[a])
    }

    /// Mean over spatial axes: `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 4 {
            return Err(Error::dim("global_avg_pool", format!("{:?}", t.shape())));
        }
        let (n, c) = (t.shape()[0], t.shape()[1]);
        let inner = t.shape()[2] * t.shape()[3];
        let data = t
            .data()
            .chunks(inner)
            .map(|p| p.iter().sum::<f64>() / inner as f64)
            .collect();
        self.push(Tensor::from_parts(vec![n, c], data), Op::GlobalAvgPool(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        self.push(t, Op::Reshape(a), &[a])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let named = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad && matches!(n.op, Op::Leaf))
            .filter_map(|(i, n)| n.name.clone().map(|name| (name, i)))
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            named,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g) {
                    *e += x;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::from_parts(self.value(v).shape().to_vec(), g));
            }
        }
    }

    /// Reduces a gradient shaped like `a` onto the (possibly broadcast) `b`.
    fn reduce_broadcast(&self, g: &[f64], b: Var) -> Vec<f64> {
        let nb = self.value(b).numel();
        if nb == g.len() {
            return g.to_vec();
        }
        let mut out = vec![0.0; nb];
        for chunk in g.chunks(nb) {
            for (o, x) in out.iter_mut().zip(chunk) {
                *o += x;
            }
        }
        out
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                let gb = self.reduce_broadcast(gd, *b);
                self.accumulate(grads, *b, gb);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                let neg: Vec<f64> = gd.iter().map(|x| -x).collect();
                let gb = self.reduce_broadcast(&neg, *b);
                self.accumulate(grads, *b, gb);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let nb = tb.len();
                if self.requires_grad(*a) {
                    let ga = gd.iter().enumerate().map(|(j, x)| x * tb[j % nb]).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let prod: Vec<f64> = gd.iter().zip(ta).map(|(x, y)| x * y).collect();
                    let gb = self.reduce_broadcast(&prod, *b);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, gd.iter().map(|x| x * c).collect());
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.requires_grad(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(m, n, k, 1.0, gd, false, tb.data(), true, 0.0, &mut ga);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(k, m, n, 1.0, ta.data(), true, gd, false, 0.0, &mut gb);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Conv2d { x, w, geo, out_ch } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let batch = tx.shape()[0];
                let (dx, dw) = kernels::conv2d_backward(
                    tx.data(),
                    tw.data(),
                    gd,
                    batch,
                    *out_ch,
                    geo,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::Relu(a) => {
                let ta = self.value(*a).data();
                let ga = gd
                    .iter()
                    .zip(ta)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            } => self.batchnorm_backward(*x, *gamma, *beta, cache, gd, grads),
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                self.accumulate(grads, *a, vec![gd[0] / n as f64; n]);
            }
            Op::SumLast(a) => {
                let ta = self.value(*a);
                let k = *ta.shape().last().unwrap();
                let ga = (0..ta.numel()).map(|j| gd[j / k]).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Log(a) => {
                let ta = self.value(*a).data();
                self.accumulate(grads, *a, gd.iter().zip(ta).map(|(g, x)| g / x).collect());
            }
            Op::LogFloor(a, floor) => {
                let ta = self.value(*a).data();
                let ga = gd
                    .iter()
                    .zip(ta)
                    .map(|(g, &x)| if x > *floor { g / x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Exp(a) => {
                let y = node.value.data();
                self.accumulate(grads, *a, gd.iter().zip(y).map(|(g, y)| g * y).collect());
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let k = *node.value.shape().last().unwrap();
                let mut ga = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(k).zip(gd.chunks(k)).zip(ga.chunks_mut(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..k {
                        out[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::GlobalAvgPool(a) => {
                let ta = self.value(*a);
                let inner = ta.shape()[2] * ta.shape()[3];
                let ga = (0..ta.numel()).map(|j| gd[j / inner] / inner as f64).collect();
                self.accumulate(grads, *a, ga);
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, gd.to_vec());
            }
        }
    }

    fn batchnorm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        cache: &BnCache,
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (c, inner) = (cache.channels, cache.inner);
        let n = gd.len() / (c * inner);
        let count = (n * inner) as f64;
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                for i in off..off + inner {
                    sum_dy[ch] += gd[i];
                    sum_dy_xhat[ch] += gd[i] * cache.xhat[i];
                }
            }
        }
        self.accumulate(grads, beta, sum_dy.clone());
        self.accumulate(grads, gamma, sum_dy_xhat.clone());
        if !self.requires_grad(x) {
            return;
        }
        let g = self.value(gamma).data();
        let mut dx = vec![0.0; gd.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * inner;
                let k = g[ch] * cache.inv_std[ch];
                for i in off..off + inner {
                    dx[i] = if cache.batch_stats {
                        k * (gd[i] - sum_dy[ch] / count - cache.xhat[i] * sum_dy_xhat[ch] / count)
                    } else {
                        k * gd[i]
                    };
                }
            }
        }
        self.accumulate(grads, x, dx);
    }
}
