//! One declarative document for every pipeline stage.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::SplitConfig;
use crate::factory::FactoryConfig;
use crate::sim::collect::CollectConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub generation: u64,
    pub collection: u64,
    pub split: u64,
    pub train: u64,
    pub eval: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { generation: 0, collection: 0, split: 0, train: 0, eval: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub dataset_root: Option<PathBuf>,
    /// Robots per family.
    pub robots: usize,
    /// Worker threads; unset means all cores but one.
    pub workers: Option<usize>,
    pub seeds: Seeds,
    pub factory: FactoryConfig,
    pub collect: CollectConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section and their cross-constraints.
    pub fn validate(&self) -> Result<(), String> {
        self.factory.geometry.validate().map_err(|e| e.to_string())?;
        self.collect.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        if self.collect.joint_limit > self.factory.geometry.joint_limit + 1e-12 {
            return Err(format!(
                "gait joint limit {} exceeds the URDF limit {}",
                self.collect.joint_limit, self.factory.geometry.joint_limit
            ));
        }
        if !(0.0..=1.0).contains(&self.split.train_ratio) {
            return Err("split.train_ratio must be in [0, 1]".into());
        }
        if self.workers == Some(0) {
            return Err("workers must be positive".into());
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        self.workers.unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get().saturating_sub(1)).unwrap_or(1).max(1)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig { robots: 12, workers: Some(2), ..Default::default() };
        cfg.train.epochs = 7;
        cfg.collect.trials = 3;
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = PipelineConfig::from_toml("robots = 5\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.robots, 5);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 128);
    }

    #[test]
    fn unknown_and_invalid_fields_rejected() {
        assert!(PipelineConfig::from_toml("robts = 5\n").is_err());
        assert!(PipelineConfig::from_toml("[train]\nbatch_size = 0\n").is_err());
        assert!(PipelineConfig::from_toml("[collect]\njoint_limit = 3.0\n").is_err());
    }
}
