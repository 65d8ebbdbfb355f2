//! The preprocessed store under `<out>/preprocessed`, plus cached
//! superpixel label maps under `<out>/labels`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imagecore::{load_raster, polygon_fill, GrayImage, LandmarkSet, RoiMask};
use crate::learn::SampleKey;
use crate::segmentation::{slic_segment, LabelMap, SlicParams};

use super::manifest::KneeSide;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub sample_id: String,
    pub subject_id: String,
    pub kl_grade: u8,
    pub knee_side: KneeSide,
    /// Set when the raw image was flipped to medial-left orientation.
    pub mirrored: bool,
    pub spacing_mm: f64,
    /// Content hash of the inputs that produced this entry.
    pub hash: String,
}

impl StoreEntry {
    pub fn key(&self) -> SampleKey {
        SampleKey {
            sample_id: self.sample_id.clone(),
            subject_id: self.subject_id.clone(),
            label: self.kl_grade >= 2,
        }
    }
}

/// One loaded sample with its bone mask.
pub struct Loaded {
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
}

impl Loaded {
    pub fn bone_mask(&self, bone: &str) -> Result<RoiMask> {
        polygon_fill(self.landmarks.contour(bone)?, self.image.width(), self.image.height())
    }
}

#[derive(Clone, Debug)]
pub struct Store {
    pub dir: PathBuf,
    pub entries: Vec<StoreEntry>,
}

impl Store {
    pub fn root(out: &Path) -> PathBuf {
        out.join("preprocessed")
    }

    pub fn index_path(out: &Path) -> PathBuf {
        Self::root(out).join("index.csv")
    }

    pub fn image_path(dir: &Path, id: &str) -> PathBuf {
        dir.join("images").join(format!("{id}.png"))
    }

    pub fn landmark_path(dir: &Path, id: &str) -> PathBuf {
        dir.join("landmarks").join(format!("{id}.json"))
    }

    pub fn load(out: &Path) -> Result<Self> {
        let path = Self::index_path(out);
        if !path.is_file() {
            return Err(Error::Config(format!(
                "no preprocessed store at {}; run preprocess first",
                path.display()
            )));
        }
        let mut reader = csv::Reader::from_path(&path)?;
        let entries = reader.deserialize().collect::<std::result::Result<Vec<StoreEntry>, _>>()?;
        Ok(Store {
            dir: Self::root(out),
            entries,
        })
    }

    pub fn write_index(out: &Path, entries: &[StoreEntry]) -> Result<()> {
        let path = Self::index_path(out);
        super::create_dir(&Self::root(out))?;
        let mut w = csv::Writer::from_path(&path)?;
        if entries.is_empty() {
            w.write_record(["sample_id", "subject_id", "kl_grade", "knee_side", "mirrored", "spacing_mm", "hash"])?;
        }
        for e in entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn keys(&self) -> Vec<SampleKey> {
        self.entries.iter().map(StoreEntry::key).collect()
    }

    pub fn load_sample(&self, e: &StoreEntry) -> Result<Loaded> {
        let image = load_raster(&Self::image_path(&self.dir, &e.sample_id), e.spacing_mm)?;
        let landmarks = LandmarkSet::load(&Self::landmark_path(&self.dir, &e.sample_id))?;
        Ok(Loaded { image, landmarks })
    }

    /// Superpixel labels of one bone, reused from `<out>/labels` when the
    /// cached map was produced from the same entry and parameters.
    pub fn labels(&self, e: &StoreEntry, sample: &Loaded, bone: &str, slic: &SlicParams) -> Result<LabelMap> {
        let dir = self.dir.parent().unwrap_or(Path::new(".")).join("labels").join(bone);
        let png = dir.join(format!("{}.png", e.sample_id));
        let key_path = dir.join(format!("{}.key", e.sample_id));
        let mut h = Sha256::new();
        h.update(e.hash.as_bytes());
        h.update(serde_json::to_string(slic)?.as_bytes());
        h.update(bone.as_bytes());
        let key = hex::encode(h.finalize());
        if png.is_file() && std::fs::read_to_string(&key_path).ok().as_deref() == Some(key.as_str()) {
            if let Ok(l) = LabelMap::load_png(&png) {
                if l.width() == sample.image.width() && l.height() == sample.image.height() {
                    return Ok(l);
                }
            }
        }
        let bone_mask = sample.bone_mask(bone)?;
        let labels = slic_segment(&sample.image, &bone_mask, slic)?;
        super::create_dir(&dir)?;
        labels.save_png(&png)?;
        std::fs::write(&key_path, &key).map_err(|err| Error::io(&key_path, err))?;
        Ok(labels)
    }
}
