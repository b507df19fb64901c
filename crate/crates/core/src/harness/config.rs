use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{FlatMlpConfig, LogRegConfig};
use crate::dgcnn::{DgcnnConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{EdgeStrategy, GraphBuilder, NodeEncoderConfig, SkeletonConfig};

use super::cv::CvConfig;

/// Input files, each either feature records or a graph cache.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
    /// Per-month evaluation files for drift runs.
    pub months: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub logreg: LogRegConfig,
    pub knn_k: usize,
    pub mlp: FlatMlpConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            logreg: LogRegConfig::default(),
            knn_k: 5,
            mlp: FlatMlpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// `default`, `variant-1` .. `variant-8`, or a skeleton file path.
    pub skeleton: String,
    pub edge_strategy: EdgeStrategy,
    pub encoder: NodeEncoderConfig,
    pub model: DgcnnConfig,
    pub train: TrainConfig,
    /// Fraction of labeled input held out for testing when no test files
    /// are given.
    pub holdout: f64,
    pub cv: CvConfig,
    pub baseline: BaselineConfig,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            skeleton: "default".into(),
            edge_strategy: EdgeStrategy::Skeleton,
            encoder: NodeEncoderConfig::default(),
            model: DgcnnConfig::default(),
            train: TrainConfig::default(),
            holdout: 0.2,
            cv: CvConfig::default(),
            baseline: BaselineConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative data paths are taken relative to the config file.
        if let Some(dir) = path.parent() {
            for p in cfg
                .data
                .train
                .iter_mut()
                .chain(&mut cfg.data.test)
                .chain(&mut cfg.data.months)
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.encoder.validate()?;
        self.cv.validate()?;
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(Error::Config(format!("holdout {} outside (0, 1)", self.holdout)));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.baseline.knn_k == 0 {
            return Err(Error::Config("knn_k must be positive".into()));
        }
        if let EdgeStrategy::Similarity { threshold } = self.edge_strategy {
            if !(-1.0..=1.0).contains(&threshold) {
                return Err(Error::Config(format!("similarity threshold {threshold} outside [-1, 1]")));
            }
        }
        self.skeleton()?;
        Ok(())
    }

    pub fn skeleton(&self) -> Result<SkeletonConfig> {
        SkeletonConfig::resolve(&self.skeleton)
    }

    pub fn graph_builder(&self) -> Result<GraphBuilder> {
        Ok(GraphBuilder {
            skeleton: self.skeleton()?,
            encoder: self.encoder,
            strategy: self.edge_strategy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.validate().is_ok());
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.cv.folds, 5);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 7\nskeleton = \"variant-3\"\n[model]\nconv_channels = [16, 16]\n[train]\nepochs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.conv_channels, [16, 16]);
        assert_eq!(cfg.model.mlp_hidden, [1024, 1024]);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.graph_builder().unwrap().skeleton.name, "variant-3");
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "holdout = 1.0",
            "skeleton = \"variant-12\"",
            "[cv]\nfolds = 1",
            "[model]\ndropout = 1.5",
            "unknown_key = 3",
            "[edge_strategy]\nkind = \"similarity\"\nthreshold = 2.0",
        ] {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }
}
