use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::SampleKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KneeSide {
    L,
    R,
}

/// One manifest row. Paths are stored as written and resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRow {
    pub sample_id: String,
    pub subject_id: String,
    pub image_path: PathBuf,
    pub landmark_path: PathBuf,
    pub spacing_mm: f64,
    pub knee_side: KneeSide,
    pub kl_grade: u8,
}

impl ManifestRow {
    /// OA label: KL grade 2 or higher.
    pub fn label(&self) -> bool {
        self.kl_grade >= 2
    }

    pub fn key(&self) -> SampleKey {
        SampleKey {
            sample_id: self.sample_id.clone(),
            subject_id: self.subject_id.clone(),
            label: self.label(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base_dir: PathBuf,
}

/// Identifiers double as file names.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Manifest(format!("identifier {id:?} must be [A-Za-z0-9_.-]+")))
    }
}

impl Manifest {
    /// Parses and validates a manifest: unique sample ids, positive
    /// spacing, KL grade 0..=4, and existing image and landmark files.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rows = Vec::new();
        for rec in reader.deserialize() {
            let row: ManifestRow = rec.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
            rows.push(row);
        }
        let m = Manifest { rows, base_dir };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            check_id(&r.sample_id)?;
            check_id(&r.subject_id)?;
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample_id {:?}", r.sample_id)));
            }
            if !(r.spacing_mm.is_finite() && r.spacing_mm > 0.0) {
                return Err(Error::Manifest(format!("{}: spacing must be positive", r.sample_id)));
            }
            if r.kl_grade > 4 {
                return Err(Error::Manifest(format!("{}: KL grade {} outside 0..4", r.sample_id, r.kl_grade)));
            }
            for p in [self.image_path(r), self.landmark_path(r)] {
                if !p.is_file() {
                    return Err(Error::Manifest(format!("{}: missing file {}", r.sample_id, p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn image_path(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.image_path)
    }

    pub fn landmark_path(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.landmark_path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.rows.is_empty() {
            w.write_record([
                "sample_id",
                "subject_id",
                "image_path",
                "landmark_path",
                "spacing_mm",
                "knee_side",
                "kl_grade",
            ])?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
