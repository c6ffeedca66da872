use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named parameter array with 32-bit storage.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim(
                "parameter",
                format!("{name}: shape {shape:?} vs {} values", data.len()),
            ));
        }
        Ok(Parameter { name, shape, data })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Parameter {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn values_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// SGD with heavy-ball momentum and L2 weight decay:
///
/// ```text
/// buf   <- momentum * buf + (grad + weight_decay * param)
/// param <- param - lr * buf
/// ```
///
/// Buffers live in 64-bit and start at zero the first time a parameter is
/// stepped.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    pub fn buffer(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }

    /// Updates every parameter yielded by `params` using its entry in
    /// `grads`. A parameter without a gradient is a contract error and leaves
    /// all state untouched.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Parameter>,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        let params: Vec<&mut Parameter> = params.into_iter().collect();
        for p in &params {
            let g = grads
                .get(&p.name)
                .ok_or_else(|| Error::Contract(format!("no gradient for parameter `{}`", p.name)))?;
            if g.numel() != p.data.len() {
                return Err(Error::dim(
                    "sgd_step",
                    format!("{}: gradient {:?} vs parameter {:?}", p.name, g.shape(), p.shape),
                ));
            }
        }
        for p in params {
            let g = grads[&p.name].data();
            let buf = self
                .buffers
                .entry(p.name.clone())
                .or_insert_with(|| vec![0.0; p.data.len()]);
            for ((w, b), &gi) in p.data.iter_mut().zip(buf.iter_mut()).zip(g) {
                let wf = *w as f64;
                *b = self.momentum * *b + (gi + self.weight_decay * wf);
                *w = (wf - self.lr * *b) as f32;
            }
        }
        Ok(())
    }
}
