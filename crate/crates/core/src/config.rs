//! Run configuration, loaded from TOML and overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::DEFAULT_MARGIN;
use crate::compositor::{DEFAULT_CROP, DEFAULT_SIZES};
use crate::error::{Error, Result};
use crate::mock::DegradationProfile;
use crate::planner::{PlanConfig, MASTER_OFFSETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorMode {
    Mock,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub mode: DetectorMode,
    pub mock: DegradationProfile,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            mode: DetectorMode::Mock,
            mock: DegradationProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub catalog: PathBuf,
    pub output: PathBuf,
    pub sizes: Vec<f64>,
    pub crop_dimension: u32,
    pub margin: u32,
    pub master_offsets: Vec<u32>,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Number of manifest shards handed to the detector.
    pub shards: usize,
    pub insertions_per_pair: u32,
    pub detector: DetectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: PathBuf::from("catalog"),
            output: PathBuf::from("run"),
            sizes: DEFAULT_SIZES.to_vec(),
            crop_dimension: DEFAULT_CROP,
            margin: DEFAULT_MARGIN,
            master_offsets: MASTER_OFFSETS.to_vec(),
            seed: 0,
            workers: 0,
            shards: 4,
            insertions_per_pair: 1,
            detector: DetectorConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Toml {
                path: path.to_path_buf(),
                message: m,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.catalog.is_relative() {
            cfg.catalog = base.join(&cfg.catalog);
        }
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::Config("sizes must not be empty".into()));
        }
        for &p in &self.sizes {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("size proportion {p} outside (0, 1)")));
            }
        }
        if self.crop_dimension == 0 {
            return Err(Error::Config("crop_dimension must be positive".into()));
        }
        if self.master_offsets.is_empty() {
            return Err(Error::Config("master_offsets must not be empty".into()));
        }
        if self.shards == 0 {
            return Err(Error::Config("shards must be >= 1".into()));
        }
        if self.insertions_per_pair == 0 {
            return Err(Error::Config("insertions_per_pair must be >= 1".into()));
        }
        self.detector.mock.validate()
    }

    pub fn plan_config(&self) -> PlanConfig {
        PlanConfig {
            sizes: self.sizes.clone(),
            crop_dimension: self.crop_dimension,
            margin: self.margin,
            master_offsets: self.master_offsets.clone(),
            seed: self.seed,
            insertions_per_pair: self.insertions_per_pair,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.crop_dimension, 800);
        assert_eq!(c.margin, 400);
        assert_eq!(c.sizes, vec![0.05, 0.08, 0.12, 0.18]);
        assert_eq!(c.master_offsets.len(), 20);
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn toml_roundtrip_and_partial_override() {
        let c = RunConfig::from_toml(
            "seed = 7\nsizes = [0.05]\n[detector]\nmode = \"external\"\n[detector.mock]\nkappa = 2.0\n",
        )
        .unwrap();
        assert_eq!((c.seed, c.detector.mode, c.detector.mock.kappa), (7, DetectorMode::External, 2.0));
        assert_eq!(c.detector.mock.p0, 0.9);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("sizes = [1.5]").is_err());
        assert!(RunConfig::from_toml("shards = 0").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[detector.mock]\nlambda = -1.0").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "catalog = \"cat\"\noutput = \"/abs/out\"\n").unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.catalog, dir.path().join("cat"));
        assert_eq!(c.output, PathBuf::from("/abs/out"));
    }
}
