//! Run configuration: a TOML file with a documented key set plus a
//! handful of flag overrides. Every field that influences a cached
//! artifact is folded into a fingerprint so stale caches are detected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use modecast::fingerprint;
use modecast::model::Variant;
use modecast::modeselect::ModeSelectConfig;
use modecast::vmd::VmdConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum the 5-minute counts in each 15-minute block (counts stay
    /// counts).
    Sum,
    /// Average them instead.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub flows: PathBuf,
    pub metadata: PathBuf,
    pub distances: PathBuf,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
}

fn default_aggregation() -> Aggregation {
    Aggregation::Sum
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    /// Gaussian kernel width; `None` derives it from the standard
    /// deviation of the finite off-diagonal distances.
    pub sigma: Option<f64>,
    pub r: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            sigma: None,
            r: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub blocks: usize,
    pub cheb_order: usize,
    pub channels: usize,
    pub window: usize,
    pub horizon: usize,
    pub variant: Variant,
    pub time_kernel: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            blocks: 2,
            cheb_order: 3,
            channels: 16,
            window: 12,
            horizon: 12,
            variant: Variant::V2,
            time_kernel: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub mape_mask_threshold: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 7,
            mape_mask_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub vmd: VmdSection,
    #[serde(default)]
    pub mode_select: ModeSelectConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".modecast-cache")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// VMD settings with serde defaults matching [`VmdConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VmdSection {
    pub num_modes: usize,
    pub alpha: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub max_iter: usize,
    pub omega_init: modecast::vmd::OmegaInit,
}

impl Default for VmdSection {
    fn default() -> Self {
        let d = VmdConfig::default();
        VmdSection {
            num_modes: d.num_modes,
            alpha: d.alpha,
            tau: d.tau,
            epsilon: d.epsilon,
            max_iter: d.max_iter,
            omega_init: d.omega_init,
        }
    }
}

impl VmdSection {
    pub fn to_config(&self) -> VmdConfig {
        VmdConfig {
            num_modes: self.num_modes,
            alpha: self.alpha,
            tau: self.tau,
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            omega_init: self.omega_init,
        }
    }
}

/// Flag overrides applied after the file is parsed.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub num_modes: Option<usize>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config `{}`", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config `{}`", path.display()))?;
        // Paths in the file are relative to the file's directory.
        if let Some(dir) = path.parent() {
            for p in [
                &mut cfg.data.flows,
                &mut cfg.data.metadata,
                &mut cfg.data.distances,
                &mut cfg.cache_dir,
                &mut cfg.out_dir,
            ] {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, ov: &Overrides) {
        if let Some(k) = ov.num_modes {
            self.vmd.num_modes = k;
        }
        if let Some(a) = ov.alpha {
            self.vmd.alpha = a;
        }
        if let Some(e) = ov.epsilon {
            self.vmd.epsilon = e;
        }
        if let Some(t) = ov.tau {
            self.vmd.tau = t;
        }
        if let Some(v) = ov.variant {
            self.model.variant = v;
        }
        if let Some(s) = ov.seed {
            self.training.seed = s;
        }
        if let Some(dir) = &ov.cache_dir {
            self.cache_dir = dir.clone();
        } else if let Ok(env_dir) = std::env::var("MODECAST_CACHE_DIR") {
            self.cache_dir = PathBuf::from(env_dir);
        }
        if let Some(dir) = &ov.out_dir {
            self.out_dir = dir.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vmd.to_config().validate()?;
        self.mode_select.validate()?;
        anyhow::ensure!(self.graph.r.is_finite(), "graph.r must be finite");
        anyhow::ensure!(
            self.model.window >= 1 && self.model.horizon >= 1,
            "model.window and model.horizon must be positive"
        );
        anyhow::ensure!(
            self.training.batch_size >= 1 && self.training.max_epochs >= 1,
            "training.batch_size and training.max_epochs must be positive"
        );
        Ok(())
    }
}

/// Hash of the raw data files plus the aggregation rule — the part of a
/// fingerprint that tracks inputs rather than settings.
pub fn data_fingerprint(cfg: &RunConfig) -> Result<u64> {
    let mut acc: u64 = 0;
    for path in [&cfg.data.flows, &cfg.data.metadata, &cfg.data.distances] {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading data file `{}`", path.display()))?;
        acc = acc.rotate_left(17) ^ fingerprint::fnv1a64(&bytes);
    }
    Ok(acc ^ fingerprint::of_value(&cfg.data.aggregation))
}

/// Fingerprint of everything that shapes the decomposition cache.
pub fn modes_fingerprint(cfg: &RunConfig, data_fp: u64) -> u64 {
    fingerprint::of_value(&(&cfg.vmd, data_fp))
}

/// Fingerprint of everything that shapes a trained checkpoint.
pub fn model_fingerprint(cfg: &RunConfig, data_fp: u64) -> u64 {
    fingerprint::of_value(&(
        &cfg.vmd,
        &cfg.graph.sigma,
        cfg.graph.r,
        &cfg.model,
        &cfg.training,
        data_fp,
    ))
}

/// Fingerprint of the K-selection sweep.
pub fn kselect_fingerprint(cfg: &RunConfig, data_fp: u64) -> u64 {
    fingerprint::of_value(&(&cfg.mode_select, &cfg.vmd, data_fp))
}
