use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptors::DescriptorParams;
use crate::error::{Error, Result};
use crate::learn::{CvConfig, EvalConfig};
use crate::preprocess::PreprocessConfig;
use crate::segmentation::{GridLayout, RankConfig, SlicParams};

use super::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoiConfig {
    /// Standard ROI side as a fraction of the tibial width.
    pub side_fraction: f64,
    pub anchor: String,
    pub anchor_offset_mm: (f64, f64),
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            side_fraction: 1.0 / 7.0,
            anchor: "medial_tibia_margin".into(),
            anchor_offset_mm: (2.0, 2.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankOptions {
    /// Contour names to segment and rank.
    pub bones: Vec<String>,
    /// Number of top-ranked regions that get an average mask.
    pub top_n: usize,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            bones: vec!["tibia".into(), "femur".into()],
            top_n: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    pub slic: SlicParams,
    pub grid: GridLayout,
    pub descriptors: DescriptorParams,
    pub cv: CvConfig,
    pub lambda: f64,
    pub n_boot: usize,
    pub roi: RoiConfig,
    pub rank: RankOptions,
    pub synth: SynthConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preprocess: PreprocessConfig::default(),
            slic: SlicParams::default(),
            grid: GridLayout::default(),
            descriptors: DescriptorParams::default(),
            cv: CvConfig::default(),
            lambda: 1.0,
            n_boot: 1000,
            roi: RoiConfig::default(),
            rank: RankOptions::default(),
            synth: SynthConfig::default(),
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML or JSON depending on the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            Some("toml") => toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(Error::Config(format!(
                    "{}: config must be .toml or .json",
                    path.display()
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.slic.validate()?;
        self.descriptors.lbp.validate()?;
        self.descriptors.hog.validate()?;
        if self.grid.rows == 0 || self.grid.cols == 0 {
            return Err(Error::Config("grid needs at least one row and column".into()));
        }
        if self.cv.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be at least 2, got {}", self.cv.k_folds)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.roi.side_fraction > 0.0) {
            return Err(Error::Config("roi.side_fraction must be positive".into()));
        }
        if self.descriptors.haralick.levels < 2 {
            return Err(Error::Config("haralick.levels must be at least 2".into()));
        }
        self.synth.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            cv: self.cv.clone(),
            lambda: self.lambda,
            n_boot: self.n_boot,
        }
    }

    pub fn rank_config(&self) -> RankConfig {
        RankConfig {
            lbp: self.descriptors.lbp.clone(),
            cv: self.cv.clone(),
            lambda: self.lambda,
            n_boot: self.n_boot,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap(), cfg);

        std::fs::write(&path, "lambda = 2.0\n[slic]\nn_regions = 50\n").unwrap();
        let c = PipelineConfig::load(&path).unwrap();
        assert_eq!((c.lambda, c.slic.n_regions, c.slic.compactness), (2.0, 50, 0.08));

        std::fs::write(&path, "lamda = 2.0\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
        std::fs::write(&path, "[slic]\nn_region = 2\n").unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }

    #[test]
    fn json_config_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"cv": {"k_folds": 1}}"#).unwrap();
        assert!(PipelineConfig::load(&path).is_err());
        std::fs::write(&path, r#"{"n_boot": 10}"#).unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap().n_boot, 10);
    }

    #[test]
    fn digest_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.lambda = 0.5;
        assert_ne!(a.digest(), b.digest());
    }
}
