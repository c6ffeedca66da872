use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Registered architecture families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchKind {
    /// Flatten, one hidden ReLU layer, linear head.
    MlpSmall,
    /// Three conv-BN-ReLU blocks, global average pool, linear head.
    CnnBnSmall,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::MlpSmall => "mlp-small",
            ArchKind::CnnBnSmall => "cnn-bn-small",
        }
    }
}

/// Architecture descriptor: family, input geometry `[C, H, W]` and class
/// count. Text form is `family[:CxHxW[:K]]`, e.g. `cnn-bn-small:3x32x32:10`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub kind: ArchKind,
    pub input: [usize; 3],
    pub classes: usize,
}

pub const MLP_HIDDEN: usize = 64;

/// `(out_channels, stride)` of the three convolution blocks.
pub const CNN_BLOCKS: [(usize, usize); 3] = [(16, 1), (32, 2), (32, 2)];

impl Architecture {
    pub fn new(kind: ArchKind, input: [usize; 3], classes: usize) -> Result<Self> {
        if input.contains(&0) || classes < 2 {
            return Err(Error::Config(format!(
                "invalid architecture geometry {input:?} with {classes} classes"
            )));
        }
        Ok(Architecture {
            kind,
            input,
            classes,
        })
    }

    pub fn cnn_bn_small(classes: usize) -> Self {
        Architecture {
            kind: ArchKind::CnnBnSmall,
            input: [3, 32, 32],
            classes,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input;
        write!(f, "{}:{c}x{h}x{w}:{}", self.kind.as_str(), self.classes)
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = match parts.next().unwrap_or("") {
            "mlp-small" => ArchKind::MlpSmall,
            "cnn-bn-small" => ArchKind::CnnBnSmall,
            other => return Err(Error::Config(format!("unknown architecture `{other}`"))),
        };
        let input = match parts.next() {
            None => [3, 32, 32],
            Some(dims) => {
                let v: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad input geometry `{dims}`")))?;
                <[usize; 3]>::try_from(v)
                    .map_err(|_| Error::Config(format!("input geometry `{dims}` must be CxHxW")))?
            }
        };
        let classes = match parts.next() {
            None => 10,
            Some(k) => k
                .parse()
                .map_err(|_| Error::Config(format!("bad class count `{k}`")))?,
        };
        if parts.next().is_some() {
            return Err(Error::Config(format!("trailing fields in architecture `{s}`")));
        }
        Architecture::new(kind, input, classes)
    }
}
