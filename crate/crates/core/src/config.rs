//! Run configuration files.

use crate::data::{gen_blobs_cls, gen_shapes_seg, load_sample_dir, Dataset};
use crate::error::{Error, Result};
use crate::metrics::HausdorffVariant;
use crate::momentum::BackpropMode;
use crate::network::{NetworkDescriptor, StageDescriptor, Task};
use crate::optim::AdamConfig;
use crate::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Environment variable that replaces [`RunConfig::seed`].
pub const SEED_ENV: &str = "MOMENTUM_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Shapes { n: usize, hw: usize, seed: u64 },
    Blobs { n: usize, classes: usize, hw: usize, seed: u64 },
    Dir { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Shapes { n, hw, seed } => gen_shapes_seg(*n, *hw, *seed),
            DataSource::Blobs { n, classes, hw, seed } => gen_blobs_cls(*n, *classes, *hw, *seed),
            DataSource::Dir { path } => load_sample_dir(path),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub hd_variant: HausdorffVariant,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: 0.5, hd_variant: HausdorffVariant::Max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    pub network: NetworkDescriptor,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSource,
    /// Seeds the train/val/test split.
    #[serde(default)]
    pub split_seed: u64,
    /// Seeds weight initialization and batch order.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/latest")
}

impl RunConfig {
    /// Momentum U-Net analogue on 32x32 shapes: lr 1e-4, batch 16, 500 epochs, patience 50.
    pub fn segmentation_default() -> Self {
        let network = NetworkDescriptor::segmenter(
            [1, 32, 32],
            vec![
                StageDescriptor::new(8, 1, 0.9, BackpropMode::Reversible),
                StageDescriptor::new(16, 1, 0.9, BackpropMode::Reversible),
            ],
        );
        RunConfig {
            task: Task::Segmentation,
            network,
            train: TrainConfig::default(),
            data: DataSource::Shapes { n: 500, hw: 32, seed: 7 },
            split_seed: 7,
            seed: 7,
            eval: EvalConfig::default(),
            out_dir: default_out(),
        }
    }

    /// Momentum classifier on 4-class blobs: lr 1e-5, batch 32, weight decay 1e-4.
    pub fn classification_default() -> Self {
        let network = NetworkDescriptor::classifier(
            [1, 16, 16],
            vec![
                StageDescriptor::new(8, 1, 0.9, BackpropMode::Reversible),
                StageDescriptor::new(16, 1, 0.9, BackpropMode::Reversible),
            ],
            4,
        );
        RunConfig {
            task: Task::Classification,
            network,
            train: TrainConfig {
                batch_size: 32,
                adam: AdamConfig { lr: 1e-5, weight_decay: 1e-4, ..AdamConfig::default() },
                ..TrainConfig::default()
            },
            data: DataSource::Blobs { n: 2000, classes: 4, hw: 16, seed: 7 },
            split_seed: 7,
            seed: 7,
            eval: EvalConfig::default(),
            out_dir: default_out(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Apply `MOMENTUM_SEED` when `env_seed` holds its value.
    pub fn with_env_seed(mut self, env_seed: Option<&str>) -> Result<Self> {
        if let Some(raw) = env_seed {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::config(SEED_ENV, format!("`{raw}` is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task != self.network.task {
            return Err(Error::config("network.task", "must match the run task"));
        }
        self.network.validate().map_err(|e| match e {
            Error::Config { path, msg } => Error::config(format!("network.{path}"), msg),
            other => other,
        })?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return Err(Error::config("eval.threshold", "must lie in [0, 1]"));
        }
        match (&self.data, self.task) {
            (DataSource::Shapes { hw, .. }, Task::Segmentation) => {
                if *hw < 16 {
                    return Err(Error::config("data.hw", "shape images need hw >= 16"));
                }
                self.check_input(1, *hw)
            }
            (DataSource::Blobs { classes, hw, .. }, Task::Classification) => {
                if *classes != self.network.classes {
                    return Err(Error::config("data.classes", "must equal network.classes"));
                }
                self.check_input(1, *hw)
            }
            (DataSource::Dir { .. }, _) => Ok(()),
            _ => Err(Error::config("data.source", "generator does not fit the task")),
        }
    }

    fn check_input(&self, channels: usize, hw: usize) -> Result<()> {
        if self.network.input_shape != [channels, hw, hw] {
            return Err(Error::config(
                "network.input_shape",
                format!("must be [{channels}, {hw}, {hw}] for this data source"),
            ));
        }
        Ok(())
    }

    /// Training settings with the run seed filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, threshold: self.eval.threshold, ..self.train.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for cfg in [RunConfig::segmentation_default(), RunConfig::classification_default()] {
            cfg.validate().unwrap();
            let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        let seg = RunConfig::segmentation_default();
        assert_eq!((seg.train.adam.lr, seg.train.batch_size, seg.train.epochs, seg.train.patience), (1e-4, 16, 500, 50));
        let cls = RunConfig::classification_default();
        assert_eq!((cls.train.adam.lr, cls.train.batch_size, cls.train.adam.weight_decay), (1e-5, 32, 1e-4));
    }

    #[test]
    fn errors_carry_field_paths() {
        let mut cfg = RunConfig::segmentation_default();
        cfg.network.stages[1].channels = 0;
        match cfg.validate() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "network.stages[1].channels"),
            other => panic!("{other:?}"),
        }
        let mut cfg = RunConfig::segmentation_default();
        cfg.train.batch_size = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config { path, .. }) if path == "train.batch_size"));
        assert!(matches!(RunConfig::from_json("{"), Err(Error::Json(_))));
    }

    #[test]
    fn env_seed_override() {
        let cfg = RunConfig::segmentation_default().with_env_seed(Some("42")).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train_config().seed, 42);
        assert!(RunConfig::segmentation_default().with_env_seed(Some("x")).is_err());
    }
}
