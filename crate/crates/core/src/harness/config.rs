use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::{DatasetFormat, TrainRecipe};
use crate::adapt::AdaptationConfig;
use crate::augment::AugmentationPolicy;
use crate::corruptions::CorruptionSpec;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::Architecture;

/// Parsed `key = value` lines. `#` starts a comment; keys are dotted.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatConfig {
    entries: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Config(format!("line {}: bad key `{k}`", i + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        FlatConfig::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse `{s}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key)
            .map(|s| {
                s.split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| {
                        p.parse()
                            .map_err(|_| Error::Config(format!("{key}: cannot parse `{p}`")))
                    })
                    .collect()
            })
            .transpose()
    }
}

impl fmt::Display for FlatConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Adaptation methods compared by an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    /// Source parameters with stored BN statistics (plain evaluation mode).
    Source,
    /// Source parameters under the adaptation BN mode; no updates.
    Unadapted,
    Tent,
    /// The configured `aug.kind`.
    Proposed,
    ProposedRandAugment,
    ProposedAugMix,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Source,
        Method::Unadapted,
        Method::Tent,
        Method::Proposed,
        Method::ProposedRandAugment,
        Method::ProposedAugMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Source => "source",
            Method::Unadapted => "unadapted",
            Method::Tent => "tent",
            Method::Proposed => "proposed",
            Method::ProposedRandAugment => "proposed-randaugment",
            Method::ProposedAugMix => "proposed-augmix",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// The bundled generator: disjoint train and test slices of one stream.
    Synthetic { seed: u64, train: usize, test: usize },
    Files {
        format: DatasetFormat,
        train: Option<PathBuf>,
        test: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Steps,
    Lr,
    BatchSize,
    LossTerms,
    AugParams,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Steps => "steps",
            SweepAxis::Lr => "lr",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::LossTerms => "loss_terms",
            SweepAxis::AugParams => "aug_params",
        }
    }

    /// Config overrides that realize one value on this axis.
    pub fn overrides(self, value: &str) -> Result<Vec<(String, String)>> {
        let v = value.trim();
        let one = |k: &str| Ok(vec![(k.to_string(), v.to_string())]);
        match self {
            SweepAxis::Steps => one("adapt.steps"),
            SweepAxis::Lr => one("adapt.lr"),
            SweepAxis::BatchSize => one("adapt.batch_size"),
            SweepAxis::LossTerms => {
                let (c, e) = match v {
                    "consistency" => (1, 0),
                    "entropy" => (0, 1),
                    "both" => (1, 1),
                    "none" => (0, 0),
                    _ => return Err(Error::Config(format!("loss_terms value `{v}` is not consistency|entropy|both|none"))),
                };
                Ok(vec![
                    ("adapt.loss.consistency".into(), c.to_string()),
                    ("adapt.loss.entropy".into(), e.to_string()),
                ])
            }
            // e.g. `m=2 n=1` or `kind=augmix severity=3`
            SweepAxis::AugParams => v
                .split_whitespace()
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(k, x)| (format!("aug.{k}"), x.to_string()))
                        .ok_or_else(|| Error::Config(format!("aug_params entry `{kv}` is not key=value")))
                })
                .collect(),
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [SweepAxis::Steps, SweepAxis::Lr, SweepAxis::BatchSize, SweepAxis::LossTerms, SweepAxis::AugParams]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<String>,
}

/// Everything that determines an experiment's metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub corruptions: Vec<CorruptionSpec>,
    pub arch: Architecture,
    /// Source model; trained from `data` with `train` when absent.
    pub checkpoint: Option<PathBuf>,
    pub model_seed: u64,
    pub train: TrainRecipe,
    pub adapt: AdaptationConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub sweep: Option<SweepConfig>,
    flat: FlatConfig,
}

const KNOWN_KEYS: &[&str] = &[
    "data.source",
    "data.format",
    "data.train",
    "data.test",
    "data.seed",
    "data.train_size",
    "data.test_size",
    "data.corruptions",
    "model.arch",
    "model.checkpoint",
    "model.seed",
    "model.train.epochs",
    "model.train.batch_size",
    "model.train.lr",
    "model.train.momentum",
    "model.train.weight_decay",
    "model.train.bn_momentum",
    "adapt.steps",
    "adapt.lr",
    "adapt.momentum",
    "adapt.weight_decay",
    "adapt.batch_size",
    "adapt.param_set",
    "adapt.reset_policy",
    "adapt.bn_mode",
    "adapt.loss.consistency",
    "adapt.loss.entropy",
    "adapt.methods",
    "aug.kind",
    "aug.m",
    "aug.n",
    "aug.k",
    "aug.alpha",
    "aug.depth",
    "aug.severity",
    "sweep.seeds",
    "sweep.axis",
    "sweep.values",
];

impl ExperimentConfig {
    pub fn from_flat(flat: FlatConfig) -> Result<Self> {
        if let Some(k) = flat.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let data = match flat.get("data.source").unwrap_or("synthetic") {
            "synthetic" => DataSource::Synthetic {
                seed: flat.parse_or("data.seed", 7)?,
                train: flat.parse_or("data.train_size", 4000)?,
                test: flat.parse_or("data.test_size", 512)?,
            },
            "files" => DataSource::Files {
                format: flat.parse_or("data.format", DatasetFormat::CifarBinary)?,
                train: flat.get("data.train").map(PathBuf::from),
                test: flat
                    .get("data.test")
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::Config("data.source = files needs data.test".into()))?,
            },
            other => return Err(Error::Config(format!("data.source must be synthetic or files, got `{other}`"))),
        };
        let corruptions = flat
            .list::<CorruptionSpec>("data.corruptions")?
            .unwrap_or_else(|| vec!["gaussian_noise@5".parse().unwrap()]);
        let d = AdaptationConfig::default();
        let policy = AugmentationPolicy::from_config(|k| flat.get(k).map(str::to_string))?;
        let adapt = AdaptationConfig {
            steps: flat.parse_or("adapt.steps", d.steps)?,
            lr: flat.parse_or("adapt.lr", d.lr)?,
            momentum: flat.parse_or("adapt.momentum", d.momentum)?,
            weight_decay: flat.parse_or("adapt.weight_decay", d.weight_decay)?,
            batch_size: flat.parse_or("adapt.batch_size", d.batch_size)?,
            param_set: flat.parse_or("adapt.param_set", d.param_set)?,
            reset_policy: flat.parse_or("adapt.reset_policy", d.reset_policy)?,
            bn_mode: flat.parse_or("adapt.bn_mode", d.bn_mode)?,
            policy,
            loss: LossWeights {
                consistency: flat.parse_or("adapt.loss.consistency", 1.0)?,
                entropy: flat.parse_or("adapt.loss.entropy", 1.0)?,
            },
        };
        adapt.validate()?;
        let t = TrainRecipe::default();
        let train = TrainRecipe {
            epochs: flat.parse_or("model.train.epochs", t.epochs)?,
            batch_size: flat.parse_or("model.train.batch_size", t.batch_size)?,
            lr: flat.parse_or("model.train.lr", t.lr)?,
            momentum: flat.parse_or("model.train.momentum", t.momentum)?,
            weight_decay: flat.parse_or("model.train.weight_decay", t.weight_decay)?,
            bn_momentum: flat.parse_or("model.train.bn_momentum", t.bn_momentum)?,
        };
        let methods = flat
            .list::<Method>("adapt.methods")?
            .unwrap_or_else(|| vec![Method::Unadapted, Method::Tent, Method::Proposed]);
        let seeds = flat.list::<u64>("sweep.seeds")?.unwrap_or_else(|| vec![0]);
        if methods.is_empty() || seeds.is_empty() || corruptions.is_empty() {
            return Err(Error::Config("methods, seeds and corruptions must be non-empty".into()));
        }
        let sweep = match flat.get("sweep.axis") {
            None => None,
            Some(a) => {
                let axis: SweepAxis = a.parse()?;
                let values: Vec<String> = flat
                    .get("sweep.values")
                    .ok_or_else(|| Error::Config("sweep.axis given without sweep.values".into()))?
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                for v in &values {
                    axis.overrides(v)?;
                }
                Some(SweepConfig { axis, values })
            }
        };
        Ok(ExperimentConfig {
            data,
            corruptions,
            arch: flat.parse_or("model.arch", Architecture::cnn_bn_small(10))?,
            checkpoint: flat.get("model.checkpoint").map(PathBuf::from),
            model_seed: flat.parse_or("model.seed", 0)?,
            train,
            adapt,
            methods,
            seeds,
            sweep,
            flat,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        ExperimentConfig::from_flat(FlatConfig::parse(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentConfig::from_flat(FlatConfig::load(path)?)
    }

    /// The source file with `overrides` applied, re-validated.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut flat = self.flat.clone();
        for (k, v) in overrides {
            flat.set(k.clone(), v.clone());
        }
        ExperimentConfig::from_flat(flat)
    }

    /// Every setting, defaults included, as sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match &self.data {
            DataSource::Synthetic { seed, train, test } => {
                put("data.source", "synthetic".into());
                put("data.seed", seed.to_string());
                put("data.train_size", train.to_string());
                put("data.test_size", test.to_string());
            }
            DataSource::Files { format, train, test } => {
                put("data.source", "files".into());
                put("data.format", format.to_string());
                if let Some(t) = train {
                    put("data.train", t.display().to_string());
                }
                put("data.test", test.display().to_string());
            }
        }
        put("data.corruptions", join(&self.corruptions));
        put("model.arch", self.arch.to_string());
        if let Some(c) = &self.checkpoint {
            put("model.checkpoint", c.display().to_string());
        }
        put("model.seed", self.model_seed.to_string());
        let t = &self.train;
        put("model.train.epochs", t.epochs.to_string());
        put("model.train.batch_size", t.batch_size.to_string());
        put("model.train.lr", t.lr.to_string());
        put("model.train.momentum", t.momentum.to_string());
        put("model.train.weight_decay", t.weight_decay.to_string());
        put("model.train.bn_momentum", t.bn_momentum.to_string());
        let a = &self.adapt;
        put("adapt.steps", a.steps.to_string());
        put("adapt.lr", a.lr.to_string());
        put("adapt.momentum", a.momentum.to_string());
        put("adapt.weight_decay", a.weight_decay.to_string());
        put("adapt.batch_size", a.batch_size.to_string());
        put("adapt.param_set", a.param_set.to_string());
        put("adapt.reset_policy", a.reset_policy.to_string());
        put("adapt.bn_mode", a.bn_mode.to_string());
        put("adapt.loss.consistency", a.loss.consistency.to_string());
        put("adapt.loss.entropy", a.loss.entropy.to_string());
        put("adapt.methods", join(&self.methods));
        for (k, v) in a.policy.to_config_pairs() {
            put(&k, v);
        }
        put("sweep.seeds", join(&self.seeds));
        if let Some(s) = &self.sweep {
            put("sweep.axis", s.axis.name().into());
            put("sweep.values", s.values.join(", "));
        }
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        hex::encode(&digest[..8])
    }

    /// The adaptation settings used for `method`.
    pub fn method_config(&self, method: Method) -> Result<AdaptationConfig> {
        let with_kind = |kind: &str| {
            AugmentationPolicy::from_config(|k| {
                if k == "aug.kind" {
                    Some(kind.to_string())
                } else {
                    self.flat.get(k).map(str::to_string)
                }
            })
        };
        Ok(match method {
            Method::Source | Method::Unadapted => AdaptationConfig {
                steps: 0,
                ..self.adapt.clone()
            },
            Method::Tent => self.adapt.tent(),
            Method::Proposed => self.adapt.clone(),
            Method::ProposedRandAugment => AdaptationConfig {
                policy: with_kind("randaugment")?,
                ..self.adapt.clone()
            },
            Method::ProposedAugMix => AdaptationConfig {
                policy: with_kind("augmix")?,
                ..self.adapt.clone()
            },
        })
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_reports_lines() {
        let c = FlatConfig::parse("# hi\n a.b = 1 # trailing\n\nc = x y\n").unwrap();
        assert_eq!(c.get("a.b"), Some("1"));
        assert_eq!(c.get("c"), Some("x y"));
        let e = FlatConfig::parse("a = 1\nnonsense\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(FlatConfig::parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn defaults_match_adaptation_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c.adapt, AdaptationConfig::default());
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.corruptions.len(), 1);
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let a = ExperimentConfig::parse("adapt.lr = 0.0001\n").unwrap();
        let b = ExperimentConfig::parse("# same\nadapt.lr=1e-4").unwrap();
        let c = ExperimentConfig::parse("adapt.lr = 1e-3").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "adapt.steps = -1",
            "adapt.lr = fast",
            "adapt.batch_size = 0",
            "typo.key = 1",
            "data.corruptions = snow@5",
            "adapt.methods = magic",
            "sweep.axis = steps",
            "sweep.axis = colour\nsweep.values = 1",
            "aug.kind = cutout",
        ] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn sweep_overrides() {
        let c = ExperimentConfig::parse("sweep.axis = loss_terms\nsweep.values = consistency, both").unwrap();
        let s = c.sweep.clone().unwrap();
        let o = s.axis.overrides(&s.values[0]).unwrap();
        let c2 = c.with_overrides(&o).unwrap();
        assert_eq!(c2.adapt.loss, LossWeights::CONSISTENCY_ONLY);
        let aug = SweepAxis::AugParams.overrides("kind=augmix severity=3").unwrap();
        let c3 = c.with_overrides(&aug).unwrap();
        assert_eq!(c3.adapt.policy, AugmentationPolicy::AugMix { k: 1, alpha: 1.0, depth: 3, severity: 3 });
    }

    #[test]
    fn method_configs() {
        let c = ExperimentConfig::parse("aug.severity = 4").unwrap();
        assert_eq!(c.method_config(Method::Unadapted).unwrap().steps, 0);
        let t = c.method_config(Method::Tent).unwrap();
        assert_eq!(t.loss, LossWeights::ENTROPY_ONLY);
        match c.method_config(Method::ProposedAugMix).unwrap().policy {
            AugmentationPolicy::AugMix { severity, .. } => assert_eq!(severity, 4),
            p => panic!("{p:?}"),
        }
        assert_eq!(c.method_config(Method::ProposedRandAugment).unwrap().policy.kind(), "randaugment");
    }
}
