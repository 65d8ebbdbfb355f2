use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagecore::{load_raster, save_raster_16bit, LandmarkSet};
use crate::preprocess::preprocess;

use super::config::PipelineConfig;
use super::manifest::{KneeSide, Manifest, ManifestRow};
use super::store::{Store, StoreEntry};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub total: usize,
    pub processed: usize,
    pub skipped: usize,
    pub failed: Vec<FailedSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedSample {
    pub sample_id: String,
    pub error: String,
}

enum Outcome {
    Done(StoreEntry),
    Skipped(StoreEntry),
    Failed(FailedSample),
}

fn input_hash(manifest: &Manifest, row: &ManifestRow, cfg: &PipelineConfig) -> Result<String> {
    let mut h = Sha256::new();
    for p in [manifest.image_path(row), manifest.landmark_path(row)] {
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.update(serde_json::to_string(&cfg.preprocess)?.as_bytes());
    h.update(format!("{:?}|{}", row.knee_side, row.spacing_mm).as_bytes());
    Ok(hex::encode(h.finalize()))
}

fn process_row(manifest: &Manifest, row: &ManifestRow, cfg: &PipelineConfig, dir: &Path, hash: String) -> Result<StoreEntry> {
    let mut image = load_raster(&manifest.image_path(row), row.spacing_mm)?;
    let mut landmarks = LandmarkSet::load(&manifest.landmark_path(row))?;
    landmarks.validate_bounds(image.width(), image.height())?;
    let mirrored = row.knee_side == KneeSide::L;
    if mirrored {
        landmarks = landmarks.mirror_horizontal(image.width());
        image = image.mirror_horizontal();
    }
    let out = preprocess(&image, &landmarks, &cfg.preprocess)?;
    if out.degenerate_contrast {
        log::warn!("{}: flat intensity percentiles", row.sample_id);
    }
    save_raster_16bit(&out.image, &Store::image_path(dir, &row.sample_id))?;
    let lm_path = Store::landmark_path(dir, &row.sample_id);
    std::fs::write(&lm_path, out.landmarks.to_json() + "\n").map_err(|e| Error::io(&lm_path, e))?;
    Ok(StoreEntry {
        sample_id: row.sample_id.clone(),
        subject_id: row.subject_id.clone(),
        kl_grade: row.kl_grade,
        knee_side: row.knee_side,
        mirrored,
        spacing_mm: cfg.preprocess.target_spacing,
        hash,
    })
}

/// Preprocesses every manifest row into `<out>/preprocessed`. Rows whose
/// inputs and settings hash to the stored value are skipped; failing rows
/// are logged, left out of the index and listed in the report.
pub fn cmd_preprocess(manifest: &Manifest, cfg: &PipelineConfig, out: &Path) -> Result<PreprocessReport> {
    let dir = Store::root(out);
    super::create_dir(&dir.join("images"))?;
    super::create_dir(&dir.join("landmarks"))?;
    let previous: BTreeMap<String, StoreEntry> = Store::load(out)
        .map(|s| s.entries.into_iter().map(|e| (e.sample_id.clone(), e)).collect())
        .unwrap_or_default();

    let outcomes: Vec<Outcome> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let attempt = || -> Result<Outcome> {
                let hash = input_hash(manifest, row, cfg)?;
                if let Some(prev) = previous.get(&row.sample_id) {
                    let files_present = Store::image_path(&dir, &row.sample_id).is_file()
                        && Store::landmark_path(&dir, &row.sample_id).is_file();
                    if prev.hash == hash && files_present && prev.subject_id == row.subject_id && prev.kl_grade == row.kl_grade {
                        return Ok(Outcome::Skipped(prev.clone()));
                    }
                }
                process_row(manifest, row, cfg, &dir, hash).map(Outcome::Done)
            };
            attempt().unwrap_or_else(|e| {
                log::error!("{}: {e}", row.sample_id);
                Outcome::Failed(FailedSample {
                    sample_id: row.sample_id.clone(),
                    error: e.to_string(),
                })
            })
        })
        .collect();

    let mut report = PreprocessReport {
        total: manifest.rows.len(),
        ..Default::default()
    };
    let mut entries = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Done(e) => {
                report.processed += 1;
                entries.push(e);
            }
            Outcome::Skipped(e) => {
                report.skipped += 1;
                entries.push(e);
            }
            Outcome::Failed(f) => report.failed.push(f),
        }
    }
    Store::write_index(out, &entries)?;
    super::write_json(&dir.join("preprocess_report.json"), &report)?;
    log::info!(
        "preprocess: {} processed, {} skipped, {} failed",
        report.processed,
        report.skipped,
        report.failed.len()
    );
    super::check_failure_budget(report.failed.len(), report.total)?;
    Ok(report)
}
