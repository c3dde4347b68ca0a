//! The run configuration file.

use std::path::{Path, PathBuf};

use drdf::datagen::DatasetSpec;
use drdf::field::{DecodeGrid, TransformParams};
use drdf::geometry::io::read_to_string;
use drdf::model::{ModelConfig, TrainConfig};
use drdf::pipeline::{desk_decode_grid, desk_sampling, EvalConfig};
use drdf::sampling::SamplingConfig;
use drdf::{Error, Result};
use serde::{Deserialize, Serialize};

/// Everything a run needs. Relative paths resolve against the directory
/// holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub run_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub transform: TransformParams,
    pub decode: DecodeGrid,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_dir: PathBuf::from("data"),
            run_dir: PathBuf::from("run"),
            dataset: DatasetSpec::default(),
            sampling: desk_sampling(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            transform: TransformParams::default(),
            decode: desk_decode_grid(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = read_to_string(path)?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset_dir = base.join(&cfg.dataset_dir);
        cfg.run_dir = base.join(&cfg.run_dir);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_dir.as_os_str().is_empty() || self.run_dir.as_os_str().is_empty() {
            return Err(Error::Config("dataset_dir and run_dir must be set".into()));
        }
        self.dataset.validate()?;
        self.sampling.validate()?;
        self.model.validate()?;
        if self.train.steps > 0 {
            self.train.validate()?;
        }
        self.transform.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.decode.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.eval.validate()?;
        if self.model.image_channels != drdf::datagen::render::CHANNELS {
            return Err(Error::Config(format!(
                "model.image_channels must be {} for rendered views",
                drdf::datagen::render::CHANNELS
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "run_dir = \"out\"\n[train]\nsteps = 5\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.train.steps, 5);
        assert_eq!(cfg.run_dir, dir.path().join("out"));
        assert_eq!(cfg.sampling, desk_sampling());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[train]\nstepz = 5\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.sampling.gaussian_fraction = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.eval.thresholds.clear();
        assert!(cfg.validate().is_err());
    }
}
