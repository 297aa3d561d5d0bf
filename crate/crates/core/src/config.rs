//! Experiment configuration.
//!
//! Configs are TOML documents. Every key is optional; [`parse_config`] fills
//! defaults, checks ranges and returns a fully resolved [`ExperimentConfig`].
//! Errors name the offending key path (`training.epochs`, `link.per_image_s`).
//! [`ExperimentConfig::dump`] renders the resolved values back to TOML such
//! that parsing the dump gives an equal config.
//!
//! ```toml
//! seed = 7
//! modes = ["bent_pipe", "edge_filter"]
//!
//! [dataset]
//! source = "synthetic"      # or "directory", with path = "..."
//! n_synthetic = 2100
//! train_fraction = 0.8
//!
//! [training]
//! epochs = 25
//! lr = 0.001
//! batch = 32
//!
//! [link]
//! base_latency_s = 0.1289
//! per_image_s = 0.0091216   # or bytes_per_image + bandwidth_bytes_per_s
//!
//! [edge]
//! archs = ["msnet"]
//!
//! [[binarization]]
//! class = "golfcourse"
//! label = "artificial"
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archs::Arch;
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::linksim::LinkParams;
use crate::pipeline::{default_mac_rate, RunMode};
use crate::train::{AdamConfig, TrainConfig};

/// Bent-pipe anchor: all 420 test images in 3.96 s.
pub const BENT_PIPE_POINT: (usize, f64) = (420, 3.96);
/// Edge-filter anchor: 272 images in 2.61 s.
pub const FILTERED_POINT: (usize, f64) = (272, 2.61);

/// Link through [`BENT_PIPE_POINT`] and [`FILTERED_POINT`].
pub fn default_link() -> LinkParams {
    let (n0, t0) = BENT_PIPE_POINT;
    let (n1, t1) = FILTERED_POINT;
    let b = (t0 - t1) / (n0 - n1) as f64;
    LinkParams { base_latency_s: t0 - n0 as f64 * b, per_image_s: b, jitter_std_s: 0.0, seed: 0 }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Directory(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub n_synthetic: usize,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConfig {
    pub archs: Vec<Arch>,
    /// Multiply-accumulates per second of the on-board processor.
    pub mac_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub training: TrainConfig,
    /// `link.seed` always equals `seed`.
    pub link: LinkParams,
    pub edge: EdgeConfig,
    pub modes: Vec<RunMode>,
    pub binarization: Vec<ClassLabel>,
}

impl ExperimentConfig {
    pub fn with_seed(mut self, seed: u64) -> Result<Self> {
        check_seed("seed", seed)?;
        self.seed = seed;
        self.link.seed = seed;
        Ok(self)
    }

    pub fn wants(&self, mode: RunMode) -> bool {
        self.modes.contains(&mode)
    }

    /// TOML text that parses back to `self`.
    pub fn dump(&self) -> String {
        let raw = RawConfig {
            seed: Some(self.seed as i64),
            modes: Some(self.modes.clone()),
            dataset: Some(RawDataset {
                source: Some(match self.dataset.source {
                    DatasetSource::Synthetic => "synthetic".into(),
                    DatasetSource::Directory(_) => "directory".into(),
                }),
                path: match &self.dataset.source {
                    DatasetSource::Directory(p) => Some(p.clone()),
                    DatasetSource::Synthetic => None,
                },
                n_synthetic: Some(self.dataset.n_synthetic as i64),
                train_fraction: Some(self.dataset.train_fraction),
            }),
            training: Some(RawTraining {
                epochs: Some(self.training.epochs as i64),
                lr: Some(self.training.adam.lr),
                batch: Some(self.training.batch_size as i64),
                beta1: Some(self.training.adam.beta1),
                beta2: Some(self.training.adam.beta2),
                eps: Some(self.training.adam.eps),
            }),
            link: Some(RawLink {
                base_latency_s: Some(self.link.base_latency_s),
                per_image_s: Some(self.link.per_image_s),
                jitter_std_s: Some(self.link.jitter_std_s),
                ..RawLink::default()
            }),
            edge: Some(RawEdge {
                arch: None,
                archs: Some(self.edge.archs.iter().map(|a| a.name().to_owned()).collect()),
                mac_rate: Some(self.edge.mac_rate),
            }),
            binarization: Some(self.binarization.clone()),
        };
        toml::to_string(&raw).expect("resolved config is always representable")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<i64>,
    modes: Option<Vec<RunMode>>,
    dataset: Option<RawDataset>,
    training: Option<RawTraining>,
    link: Option<RawLink>,
    edge: Option<RawEdge>,
    binarization: Option<Vec<ClassLabel>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    source: Option<String>,
    path: Option<PathBuf>,
    n_synthetic: Option<i64>,
    train_fraction: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraining {
    epochs: Option<i64>,
    lr: Option<f64>,
    batch: Option<i64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    base_latency_s: Option<f64>,
    per_image_s: Option<f64>,
    jitter_std_s: Option<f64>,
    bytes_per_image: Option<f64>,
    bandwidth_bytes_per_s: Option<f64>,
    per_image_overhead_s: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    arch: Option<String>,
    archs: Option<Vec<String>>,
    mac_rate: Option<f64>,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<document>", e.message()))?;
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(key, e.inner().message())
    })?;
    resolve(raw)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn check_seed(key: &str, seed: u64) -> Result<()> {
    if seed > i64::MAX as u64 {
        return Err(Error::config(key, format!("must be at most {}, got {seed}", i64::MAX)));
    }
    Ok(())
}

fn count(key: &str, v: Option<i64>, default: usize, min: i64) -> Result<usize> {
    match v {
        None => Ok(default),
        Some(v) if v >= min => Ok(v as usize),
        Some(v) => Err(Error::config(key, format!("must be >= {min}, got {v}"))),
    }
}

fn real(key: &str, v: Option<f64>, default: f64, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64> {
    let v = v.unwrap_or(default);
    if v.is_finite() && ok(v) {
        Ok(v)
    } else {
        Err(Error::config(key, format!("must be {range}, got {v}")))
    }
}

fn resolve(raw: RawConfig) -> Result<ExperimentConfig> {
    let seed = match raw.seed {
        None => 0,
        Some(s) if s >= 0 => s as u64,
        Some(s) => return Err(Error::config("seed", format!("must be >= 0, got {s}"))),
    };

    let d = raw.dataset.unwrap_or_default();
    let source = match (d.source.as_deref().unwrap_or("synthetic"), d.path) {
        ("synthetic", None) => DatasetSource::Synthetic,
        ("synthetic", Some(_)) => return Err(Error::config("dataset.path", "only valid with source = \"directory\"")),
        ("directory", Some(p)) => DatasetSource::Directory(p),
        ("directory", None) => return Err(Error::config("dataset.path", "required when source = \"directory\"")),
        (other, _) => {
            return Err(Error::config(
                "dataset.source",
                format!("expected \"synthetic\" or \"directory\", got {other:?}"),
            ))
        }
    };
    let dataset = DatasetConfig {
        source,
        n_synthetic: count("dataset.n_synthetic", d.n_synthetic, 2100, 2)?,
        train_fraction: real("dataset.train_fraction", d.train_fraction, 0.8, |f| f > 0.0 && f < 1.0, "in (0, 1)")?,
    };

    let t = raw.training.unwrap_or_default();
    let defaults = AdamConfig::default();
    let training = TrainConfig {
        epochs: count("training.epochs", t.epochs, 25, 0)?,
        batch_size: count("training.batch", t.batch, 32, 1)?,
        adam: AdamConfig {
            lr: real("training.lr", t.lr, defaults.lr, |v| v > 0.0, "> 0")?,
            beta1: real("training.beta1", t.beta1, defaults.beta1, |v| (0.0..1.0).contains(&v), "in [0, 1)")?,
            beta2: real("training.beta2", t.beta2, defaults.beta2, |v| (0.0..1.0).contains(&v), "in [0, 1)")?,
            eps: real("training.eps", t.eps, defaults.eps, |v| v > 0.0, "> 0")?,
        },
    };

    let l = raw.link.unwrap_or_default();
    let base = default_link();
    let bandwidth_form =
        l.bytes_per_image.is_some() || l.bandwidth_bytes_per_s.is_some() || l.per_image_overhead_s.is_some();
    let per_image_s = match (l.per_image_s, bandwidth_form) {
        (Some(_), true) => {
            return Err(Error::config(
                "link.per_image_s",
                "give either per_image_s or bytes_per_image/bandwidth_bytes_per_s, not both",
            ))
        }
        (Some(b), false) => real("link.per_image_s", Some(b), 0.0, |v| v > 0.0, "> 0")?,
        (None, false) => base.per_image_s,
        (None, true) => {
            let bytes = l
                .bytes_per_image
                .ok_or_else(|| Error::config("link.bytes_per_image", "required with bandwidth_bytes_per_s"))?;
            let bw = l
                .bandwidth_bytes_per_s
                .ok_or_else(|| Error::config("link.bandwidth_bytes_per_s", "required with bytes_per_image"))?;
            real("link.bytes_per_image", Some(bytes), 0.0, |v| v > 0.0, "> 0")?;
            real("link.bandwidth_bytes_per_s", Some(bw), 0.0, |v| v > 0.0, "> 0")?;
            let overhead = real("link.per_image_overhead_s", l.per_image_overhead_s, 0.0, |v| v >= 0.0, ">= 0")?;
            LinkParams::per_image_from_bandwidth(bytes, bw, overhead)?
        }
    };
    let link = LinkParams {
        base_latency_s: real("link.base_latency_s", l.base_latency_s, base.base_latency_s, |v| v >= 0.0, ">= 0")?,
        per_image_s,
        jitter_std_s: real("link.jitter_std_s", l.jitter_std_s, 0.0, |v| v >= 0.0, ">= 0")?,
        seed,
    };

    let e = raw.edge.unwrap_or_default();
    let names = match (e.arch, e.archs) {
        (Some(_), Some(_)) => return Err(Error::config("edge.arch", "give either arch or archs, not both")),
        (Some(a), None) => vec![a],
        (None, Some(list)) => list,
        (None, None) => vec![Arch::MsNet.name().to_owned()],
    };
    if names.is_empty() {
        return Err(Error::config("edge.archs", "must name at least one architecture"));
    }
    let mut archs = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let arch: Arch = name
            .parse()
            .map_err(|_| Error::config(format!("edge.archs[{i}]"), format!("unknown architecture {name:?}")))?;
        if archs.contains(&arch) {
            return Err(Error::config(format!("edge.archs[{i}]"), format!("{name} listed twice")));
        }
        archs.push(arch);
    }
    let mac_rate = match e.mac_rate {
        Some(r) => real("edge.mac_rate", Some(r), 0.0, |v| v > 0.0, "> 0")?,
        None => default_mac_rate()?,
    };

    let modes = raw.modes.unwrap_or_else(|| vec![RunMode::BentPipe, RunMode::EdgeFilter]);
    if modes.is_empty() {
        return Err(Error::config("modes", "must list at least one mode"));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = modes.iter().find(|m| !seen.insert(**m)) {
        return Err(Error::config("modes", format!("{} listed twice", dup.name())));
    }

    Ok(ExperimentConfig {
        seed,
        dataset,
        training,
        link,
        edge: EdgeConfig { archs, mac_rate },
        modes,
        binarization: raw.binarization.unwrap_or_default(),
    })
}
