//! Batch commands over a corpus: ingestion, region ranking, mask building,
//! feature extraction and evaluation. Every command writes under one output
//! directory and records its provenance in `run.json`.

pub mod config;
pub mod evaluate;
pub mod extract;
pub mod features;
pub mod manifest;
pub mod mask;
pub mod preprocess;
pub mod rank;
pub mod store;
pub mod synth;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::PipelineConfig;
pub use evaluate::cmd_evaluate;
pub use extract::{cmd_extract, RoiMode};
pub use mask::{cmd_make_mask, RegionSelector};
pub use preprocess::cmd_preprocess;
pub use rank::cmd_rank_regions;

/// Provenance of one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub args: Vec<String>,
}

/// Adds or replaces the entry for `command` in `out/run.json`.
pub fn record_run(out: &Path, command: &str, cfg: &PipelineConfig, args: Vec<String>) -> Result<()> {
    let path = out.join("run.json");
    let mut runs: BTreeMap<String, RunRecord> = if path.is_file() {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)?
    } else {
        BTreeMap::new()
    };
    runs.insert(
        command.to_string(),
        RunRecord {
            config_sha256: cfg.digest(),
            seed: cfg.cv.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            args,
        },
    );
    write_json(&path, &runs)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Errors when more than 1% of `total` samples failed.
pub fn check_failure_budget(failed: usize, total: usize) -> Result<()> {
    if failed * 100 > total {
        Err(Error::FailureBudget { failed, total })
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_budget() {
        assert!(check_failure_budget(0, 0).is_ok());
        assert!(check_failure_budget(1, 100).is_ok());
        assert!(check_failure_budget(2, 100).is_err());
        assert!(check_failure_budget(1, 10).is_err());
    }

    #[test]
    fn run_records_accumulate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::default();
        record_run(dir.path(), "a", &cfg, vec!["x".into()]).unwrap();
        record_run(dir.path(), "b", &cfg, vec![]).unwrap();
        let runs: BTreeMap<String, RunRecord> = read_json(&dir.path().join("run.json")).unwrap();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs["a"].config_sha256, cfg.digest());
    }
}
