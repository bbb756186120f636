//! Experiment configuration, read from TOML.
//!
//! Every section and key is optional; missing keys take the defaults below.
//! See `configs/default.toml` for a fully spelled-out file.

use std::path::{Path, PathBuf};

use scm_core::data::SceneSpec;
use scm_core::losses::LossConfig;
use scm_core::metrics::EvalSettings;
use scm_core::network::{InferenceConfig, NetworkConfig};
use scm_core::objective::{Objective, SamplingConfig, SegMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root holding `train/` and `eval/`.
    pub dir: PathBuf,
    pub train_count: usize,
    pub eval_count: usize,
    /// Scene generator settings; its `seed` is replaced by the experiment seed.
    pub scene: SceneSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            train_count: 400,
            eval_count: 100,
            scene: SceneSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub momentum: f64,
    /// Rescale the batch gradient to at most this L2 norm; guards plain SGD
    /// against the occasional exploding step early in training.
    pub clip_norm: Option<f64>,
    pub objective: Objective,
    pub seg_mode: SegMode,
    pub loss: LossConfig,
    pub sampling: SamplingConfig,
    /// Train on the first N training images only.
    pub max_images: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            learning_rate: 0.01,
            decay: 0.99,
            decay_every: 20,
            momentum: 0.0,
            clip_norm: Some(10.0),
            objective: Objective::Joint,
            seg_mode: SegMode::Binary,
            loss: LossConfig::default(),
            sampling: SamplingConfig::default(),
            max_images: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: EvalSettings,
    pub inference: InferenceConfig,
    /// Score threshold of instance combination; kept low so AP sees the full ranking.
    pub combine_threshold: f64,
    pub max_images: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            metrics: EvalSettings::default(),
            inference: InferenceConfig::default(),
            combine_threshold: 0.05,
            max_images: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CkaConfig {
    /// Examples drawn from the front of the dataset, at most 256.
    pub examples: usize,
    /// Layers to compare; empty means every captured layer.
    pub layers: Vec<String>,
    /// Pixel size of one map cell in the raster rendering; 0 disables it.
    pub raster_cell: usize,
}

impl Default for CkaConfig {
    fn default() -> Self {
        Self {
            examples: 64,
            layers: Vec::new(),
            raster_cell: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory for checkpoints, logs and reports.
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub cka: CkaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: NetworkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            cka: CkaConfig::default(),
        }
    }
}

fn field(name: &str, ok: bool, why: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name}: {why}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Network settings with the segmentation head sized for the loss mode.
    pub fn network(&self) -> NetworkConfig {
        let mut n = self.model.clone();
        n.seg_channels = self.train.seg_mode.channels(n.classes);
        n
    }

    pub fn scene(&self) -> SceneSpec {
        SceneSpec {
            seed: self.seed,
            ..self.data.scene.clone()
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let t = &self.train;
        field("train.epochs", t.epochs > 0, "must be positive")?;
        field("train.batch_size", t.batch_size > 0, "must be positive")?;
        field(
            "train.learning_rate",
            t.learning_rate > 0.0 && t.learning_rate.is_finite(),
            "must be positive",
        )?;
        field(
            "train.decay",
            t.decay > 0.0 && t.decay <= 1.0,
            "must lie in (0, 1]",
        )?;
        field("train.decay_every", t.decay_every > 0, "must be positive")?;
        field(
            "train.momentum",
            (0.0..1.0).contains(&t.momentum),
            "must lie in [0, 1)",
        )?;
        field(
            "train.clip_norm",
            t.clip_norm.is_none_or(|c| c > 0.0),
            "must be positive",
        )?;
        field(
            "train.loss.lambda",
            t.loss.lambda >= 0.0,
            "must be non-negative",
        )?;
        field(
            "train.sampling.anchors_per_image",
            t.sampling.anchors_per_image > 0,
            "must be positive",
        )?;
        field(
            "train.max_images",
            t.max_images != Some(0),
            "must be positive",
        )?;
        field(
            "data.train_count",
            self.data.train_count > 0,
            "must be positive",
        )?;
        field(
            "cka.examples",
            (2..=256).contains(&self.cka.examples),
            "must lie in [2, 256]",
        )?;
        let net = self.network();
        net.validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.scene()
            .validate_for_stride(net.stride())
            .map_err(|e| CliError::Config(format!("data.scene: {e}")))?;
        field(
            "data.scene.width",
            self.data.scene.width == net.input_size,
            "must equal model.input_size",
        )?;
        field(
            "data.scene.height",
            self.data.scene.height == net.input_size,
            "must equal model.input_size",
        )?;
        Ok(())
    }
}

/// Learning rate of `epoch`: `lr · decay^floor(epoch / decay_every)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> CliResult<f64> {
    if epoch >= cfg.epochs {
        return Err(CliError::Config(format!(
            "epoch {epoch} is outside 0..{}",
            cfg.epochs
        )));
    }
    Ok(cfg.learning_rate * cfg.decay.powi((epoch / cfg.decay_every) as i32))
}
