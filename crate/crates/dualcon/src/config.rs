//! Flat `key = value` run configuration.
//!
//! Keys are namespaced (`train.*`, `loss.*`, `augment.*`, `model.*`, `data.*`)
//! plus the top-level `seed`. Lines starting with `#` and blank lines are
//! ignored; unknown keys are rejected. [`RunConfig::pairs`] renders every key
//! with its effective value, and parsing that rendering gives back the same
//! config.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dualcon_core::augment::AugmentKind;
use dualcon_core::data::{BlobSpec, DEFAULT_SEPARATION};
use dualcon_core::trainer::TrainConfig;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    Blobs,
    Cifar10,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Blobs => "blobs",
            DataKind::Cifar10 => "cifar10",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Seed of data generation and the label split; `None` follows the run seed.
    pub seed: Option<u64>,
    pub labels_per_class: usize,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spread: f64,
    pub separation: f64,
    /// Directory with the CIFAR-10 binary batches.
    pub dir: Option<PathBuf>,
    /// Keep only the first this-many training samples (CIFAR-10).
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    /// Per-channel standardization with training statistics; `None` means on
    /// for CIFAR-10 and off for blobs.
    pub standardize: Option<bool>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Blobs,
            seed: None,
            labels_per_class: 10,
            classes: 3,
            per_class: 500,
            test_per_class: 100,
            dim: 8,
            spread: 1.0,
            separation: DEFAULT_SEPARATION,
            dir: None,
            train_subset: None,
            test_subset: None,
            standardize: None,
        }
    }
}

impl DataConfig {
    pub fn blob_spec(&self, per_class: usize) -> BlobSpec {
        BlobSpec {
            classes: self.classes,
            per_class,
            dim: self.dim,
            spread: self.spread,
            separation: self.separation,
        }
    }

    pub fn standardize(&self) -> bool {
        self.standardize.unwrap_or(self.kind == DataKind::Cifar10)
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Write real elapsed time into `wall_ms`; off keeps metrics files
    /// byte-identical across runs.
    pub record_wall_ms: bool,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value == "auto" || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt<T: Display>(v: &Option<T>, absent: &str) -> String {
    v.as_ref()
        .map_or_else(|| absent.to_string(), |v| v.to_string())
}

/// Every key echoed in the banner, in order. `augment.sigma` is also accepted
/// as input.
pub const KEYS: &[&str] = &[
    "seed",
    "train.lr0",
    "train.momentum",
    "train.weight_decay",
    "train.epochs",
    "train.milestones",
    "train.decay_factor",
    "train.batch",
    "train.eval_every",
    "train.record_wall_ms",
    "loss.tau_f",
    "loss.tau_s",
    "loss.w_ce",
    "loss.w_z",
    "loss.w_q",
    "loss.use_feature_contrast",
    "loss.use_semantic_contrast",
    "loss.normalize",
    "augment.kind",
    "augment.turns",
    "augment.sigma_min",
    "augment.sigma_max",
    "augment.ksize",
    "augment.noise_std",
    "model.hidden",
    "model.feature_dim",
    "data.kind",
    "data.seed",
    "data.labels_per_class",
    "data.classes",
    "data.per_class",
    "data.test_per_class",
    "data.dim",
    "data.spread",
    "data.separation",
    "data.dir",
    "data.train_subset",
    "data.test_subset",
    "data.standardize",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "train.lr0" => t.lr0 = parse(key, value)?,
            "train.momentum" => t.momentum = parse(key, value)?,
            "train.weight_decay" => t.weight_decay = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.milestones" => t.milestones = parse_list(key, value)?,
            "train.decay_factor" => t.decay_factor = parse(key, value)?,
            "train.batch" => t.batch = parse(key, value)?,
            "train.eval_every" => t.eval_every = parse(key, value)?,
            "train.record_wall_ms" => self.record_wall_ms = parse_bool(key, value)?,
            "loss.tau_f" => t.tau_f = parse(key, value)?,
            "loss.tau_s" => t.tau_s = parse(key, value)?,
            "loss.w_ce" => t.weights.ce = parse(key, value)?,
            "loss.w_z" => t.weights.feature = parse(key, value)?,
            "loss.w_q" => t.weights.semantic = parse(key, value)?,
            "loss.use_feature_contrast" => t.use_feature_contrast = parse_bool(key, value)?,
            "loss.use_semantic_contrast" => t.use_semantic_contrast = parse_bool(key, value)?,
            "loss.normalize" => t.normalize = parse_bool(key, value)?,
            "augment.kind" => {
                t.augment.kind = AugmentKind::parse(value).ok_or_else(|| {
                    Error::Config(format!("{key}: unknown augmentation {value:?}"))
                })?
            }
            "augment.turns" => t.augment.turns = parse_list(key, value)?,
            // shorthand for sigma_min and sigma_max together
            "augment.sigma" => {
                let v: Vec<f64> = parse_list(key, value)?;
                t.augment.sigma = match v[..] {
                    [s] => (s, s),
                    [lo, hi] => (lo, hi),
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected sigma or lo,hi, got {value:?}"
                        )))
                    }
                };
            }
            "augment.sigma_min" => t.augment.sigma.0 = parse(key, value)?,
            "augment.sigma_max" => t.augment.sigma.1 = parse(key, value)?,
            "augment.ksize" => t.augment.ksize = parse(key, value)?,
            "augment.noise_std" => t.augment.noise_std = parse(key, value)?,
            "model.hidden" => t.hidden = parse_list(key, value)?,
            "model.feature_dim" => t.feature_dim = parse(key, value)?,
            "data.kind" => {
                d.kind = match value {
                    "blobs" => DataKind::Blobs,
                    "cifar10" => DataKind::Cifar10,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected blobs or cifar10, got {value:?}"
                        )))
                    }
                }
            }
            "data.seed" => d.seed = parse_opt(key, value)?,
            "data.labels_per_class" => d.labels_per_class = parse(key, value)?,
            "data.classes" => d.classes = parse(key, value)?,
            "data.per_class" => d.per_class = parse(key, value)?,
            "data.test_per_class" => d.test_per_class = parse(key, value)?,
            "data.dim" => d.dim = parse(key, value)?,
            "data.spread" => d.spread = parse(key, value)?,
            "data.separation" => d.separation = parse(key, value)?,
            "data.dir" => {
                d.dir = if value == "none" {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "data.train_subset" => d.train_subset = parse_opt(key, value)?,
            "data.test_subset" => d.test_subset = parse_opt(key, value)?,
            "data.standardize" => {
                d.standardize = if value == "auto" {
                    None
                } else {
                    Some(parse_bool(key, value)?)
                }
            }
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {assignment:?}")))?;
        self.set(key.trim(), value)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text, "<config>")?;
        Ok(cfg)
    }

    /// Defaults, then the file (if any), then overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        if d.labels_per_class == 0 {
            return Err(Error::Config("data.labels_per_class must be >= 1".into()));
        }
        if d.kind == DataKind::Blobs {
            dualcon_core::data::blob_centers(&d.blob_spec(d.per_class))?;
            if d.test_per_class == 0 {
                return Err(Error::Config("data.test_per_class must be >= 1".into()));
            }
        }
        if d.kind == DataKind::Cifar10 && d.dir.is_none() {
            return Err(Error::Config("data.kind = cifar10 needs data.dir".into()));
        }
        Ok(())
    }

    /// Seed of data generation and splitting.
    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.train.seed)
    }

    /// `(key, value)` for every key in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let d = &self.data;
        let values = [
            t.seed.to_string(),
            t.lr0.to_string(),
            t.momentum.to_string(),
            t.weight_decay.to_string(),
            t.epochs.to_string(),
            join(&t.milestones),
            t.decay_factor.to_string(),
            t.batch.to_string(),
            t.eval_every.to_string(),
            self.record_wall_ms.to_string(),
            t.tau_f.to_string(),
            t.tau_s.to_string(),
            t.weights.ce.to_string(),
            t.weights.feature.to_string(),
            t.weights.semantic.to_string(),
            t.use_feature_contrast.to_string(),
            t.use_semantic_contrast.to_string(),
            t.normalize.to_string(),
            t.augment.kind.name().to_string(),
            join(&t.augment.turns),
            t.augment.sigma.0.to_string(),
            t.augment.sigma.1.to_string(),
            t.augment.ksize.to_string(),
            t.augment.noise_std.to_string(),
            join(&t.hidden),
            t.feature_dim.to_string(),
            d.kind.name().to_string(),
            opt(&d.seed, "auto"),
            d.labels_per_class.to_string(),
            d.classes.to_string(),
            d.per_class.to_string(),
            d.test_per_class.to_string(),
            d.dim.to_string(),
            d.spread.to_string(),
            d.separation.to_string(),
            opt(&d.dir.as_ref().map(|p| p.display().to_string()), "none"),
            opt(&d.train_subset, "none"),
            opt(&d.test_subset, "none"),
            opt(&d.standardize, "auto"),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// `key = value` lines, each prefixed with `prefix`.
    pub fn render(&self, prefix: &str) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{prefix}{k} = {v}\n"))
            .collect()
    }
}
