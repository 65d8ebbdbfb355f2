use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::descriptors::{compute, concat_features, Descriptor, DescriptorParams, FeatureVector};
use crate::error::{Error, Result};
use crate::imagecore::{load_mask_png, GrayImage, OriginTag, RoiMask};
use crate::segmentation::{anchor_roi, from_reference_frame, standard_roi};

use super::config::PipelineConfig;
use super::features::FeatureTable;
use super::mask::{mask_paths, MaskMeta};
use super::store::{Loaded, Store, StoreEntry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoiMode {
    /// Square beneath the medial plateau.
    Standard,
    /// A mask written by `make-mask`, named `<bone>_<region>`.
    AdaptiveMask(String),
    /// The superpixel at the configured tibial anchor.
    Anchor,
}

impl RoiMode {
    pub fn parse(mode: &str, mask: Option<&str>) -> Result<Self> {
        match (mode, mask) {
            ("standard", _) => Ok(RoiMode::Standard),
            ("anchor", _) => Ok(RoiMode::Anchor),
            ("adaptive_mask" | "adaptive-mask", Some(m)) => Ok(RoiMode::AdaptiveMask(m.to_string())),
            ("adaptive_mask" | "adaptive-mask", None) => {
                Err(Error::InvalidArgument("adaptive_mask mode needs a mask name".into()))
            }
            (other, _) => Err(Error::InvalidArgument(format!(
                "unknown ROI mode {other:?} (standard, adaptive_mask, anchor)"
            ))),
        }
    }

    /// File name stem for the feature CSVs.
    pub fn name(&self) -> String {
        match self {
            RoiMode::Standard => "standard".into(),
            RoiMode::AdaptiveMask(m) => format!("adaptive_{m}"),
            RoiMode::Anchor => "anchor".into(),
        }
    }
}

pub fn features_path(out: &Path, mode: &RoiMode, descriptor: &str) -> PathBuf {
    out.join("features").join(format!("{}_{descriptor}.csv", mode.name()))
}

enum Placement {
    Standard,
    Mask { reference: RoiMask, bone: String },
    Anchor,
}

fn place_roi(store: &Store, e: &StoreEntry, sample: &Loaded, placement: &Placement, cfg: &PipelineConfig) -> Result<RoiMask> {
    let (w, h) = (sample.image.width(), sample.image.height());
    let roi = match placement {
        Placement::Standard => standard_roi(w, h, &sample.landmarks, cfg.roi.side_fraction)?,
        Placement::Mask { reference, bone } => {
            let bone_mask = sample.bone_mask(bone)?;
            from_reference_frame(reference, bone_mask.bbox(), w, h)?.intersect(&bone_mask)?
        }
        Placement::Anchor => {
            let bone_mask = sample.bone_mask("tibia")?;
            let labels = store.labels(e, sample, "tibia", &cfg.slic)?;
            anchor_roi(
                &labels,
                &sample.landmarks,
                &bone_mask,
                &cfg.roi.anchor,
                cfg.roi.anchor_offset_mm,
                e.spacing_mm,
            )?
        }
    };
    if roi.count() == 0 {
        return Err(Error::EmptyMask(format!("{}: ROI is empty", e.sample_id)));
    }
    Ok(roi)
}

/// Crop to the mask bounding box grown by `margin`, clamped to the image.
pub fn crop_with_margin(img: &GrayImage, mask: &RoiMask, margin: usize) -> Result<(GrayImage, RoiMask)> {
    let b = mask.bbox();
    let (x0, y0) = (b.x0.saturating_sub(margin), b.y0.saturating_sub(margin));
    let (x1, y1) = ((b.x1 + margin).min(img.width()), (b.y1 + margin).min(img.height()));
    let (w, h) = (x1 - x0, y1 - y0);
    let mut pixels = Vec::with_capacity(w * h);
    let mut bits = Vec::with_capacity(w * h);
    for y in y0..y1 {
        for x in x0..x1 {
            pixels.push(img.get(x, y));
            bits.push(mask.get(x, y));
        }
    }
    Ok((GrayImage::new(w, h, pixels, img.spacing())?, RoiMask::new(w, h, bits, mask.origin())?))
}

/// Fixes the HOG cell grid to the smallest one any ROI supports (but at
/// least one block) so every sample yields the same feature length.
fn common_hog_grid(params: &mut DescriptorParams, rois: &[(usize, usize)]) {
    if params.hog.n_cells.is_some() || rois.is_empty() {
        return;
    }
    let (pr, pc) = params.hog.pixels_per_cell;
    let rows = rois.iter().map(|&(h, _)| h / pr).min().unwrap_or(0);
    let cols = rois.iter().map(|&(_, w)| w / pc).min().unwrap_or(0);
    let grid = (rows.max(params.hog.cells_per_block.0), cols.max(params.hog.cells_per_block.1));
    log::info!("HOG cell grid fixed at {}x{}", grid.0, grid.1);
    params.hog.n_cells = Some(grid);
}

/// Places the ROI on every stored sample and writes one feature CSV per
/// descriptor, plus their concatenation when `concat` is set.
pub fn cmd_extract(out: &Path, cfg: &PipelineConfig, mode: &RoiMode, descriptors: &[Descriptor], concat: bool) -> Result<Vec<PathBuf>> {
    let store = Store::load(out)?;
    if descriptors.is_empty() || descriptors.contains(&Descriptor::Composite) {
        return Err(Error::InvalidArgument(
            "list base descriptors; the composite comes from --concat".into(),
        ));
    }
    let placement = match mode {
        RoiMode::Standard => Placement::Standard,
        RoiMode::Anchor => Placement::Anchor,
        RoiMode::AdaptiveMask(name) => {
            let (png, json) = mask_paths(out, name);
            let meta: MaskMeta = super::read_json(&json)?;
            Placement::Mask {
                reference: load_mask_png(&png, OriginTag::AdaptiveAverage)?,
                bone: meta.bone,
            }
        }
    };
    let lbp_margin = cfg.descriptors.lbp.radius.ceil() as usize;

    let rois: Vec<Result<(GrayImage, RoiMask)>> = store
        .entries
        .par_iter()
        .map(|e| {
            let sample = store.load_sample(e)?;
            let roi = place_roi(&store, e, &sample, &placement, cfg)?;
            let fd_margin = cfg.descriptors.fractal.radii(e.spacing_mm).map_or(0, |r| *r.last().unwrap_or(&0));
            crop_with_margin(&sample.image, &roi, lbp_margin.max(fd_margin) + 1)
        })
        .collect();
    let mut placed = Vec::new();
    let mut roi_failures = 0;
    for (e, r) in store.entries.iter().zip(rois) {
        match r {
            Ok(v) => placed.push((e, v)),
            Err(err) => {
                log::error!("{}: {err}", e.sample_id);
                roi_failures += 1;
            }
        }
    }
    super::check_failure_budget(roi_failures, store.entries.len())?;

    let mut params = cfg.descriptors.clone();
    if descriptors.contains(&Descriptor::Hog) {
        let sizes: Vec<(usize, usize)> = placed
            .iter()
            .map(|(_, (_, m))| {
                let b = m.bbox();
                (b.height(), b.width())
            })
            .collect();
        common_hog_grid(&mut params, &sizes);
    }

    let computed: Vec<Vec<Result<FeatureVector>>> = placed
        .par_iter()
        .map(|(_, (img, mask))| descriptors.iter().map(|&d| compute(d, img, mask, &params)).collect())
        .collect();

    let mut written = Vec::new();
    let mut tables: Vec<FeatureTable> = Vec::new();
    for (j, d) in descriptors.iter().enumerate() {
        let mut table = FeatureTable {
            descriptor: d.as_str().to_string(),
            keys: Vec::new(),
            roi_tags: Vec::new(),
            rows: Vec::new(),
        };
        let mut failed = roi_failures;
        for ((e, _), feats) in placed.iter().zip(&computed) {
            match &feats[j] {
                Ok(f) => {
                    table.keys.push(e.key());
                    table.roi_tags.push(f.roi_tag.as_str().to_string());
                    table.rows.push(f.values.clone());
                }
                Err(err) => {
                    log::error!("{} ({}): {err}", e.sample_id, d.as_str());
                    failed += 1;
                }
            }
        }
        super::check_failure_budget(failed, store.entries.len())?;
        let path = features_path(out, mode, d.as_str());
        table.write(&path)?;
        written.push(path);
        tables.push(table);
    }

    if concat && descriptors.len() > 1 {
        let mut table = FeatureTable {
            descriptor: Descriptor::Composite.as_str().to_string(),
            keys: Vec::new(),
            roi_tags: Vec::new(),
            rows: Vec::new(),
        };
        for ((e, _), feats) in placed.iter().zip(&computed) {
            let parts: Option<Vec<FeatureVector>> = feats.iter().map(|f| f.as_ref().ok().cloned()).collect();
            if let Some(parts) = parts {
                let c = concat_features(&parts)?;
                table.keys.push(e.key());
                table.roi_tags.push(c.roi_tag.as_str().to_string());
                table.rows.push(c.values);
            }
        }
        let path = features_path(out, mode, Descriptor::Composite.as_str());
        table.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_keeps_margin_inside_image() {
        let img = GrayImage::from_fn(20, 10, 1.0, |x, y| (x + 100 * y) as f64).unwrap();
        let mask = RoiMask::rect(20, 10, 2, 3, 5, 6, OriginTag::StandardRect).unwrap();
        let (c, m) = crop_with_margin(&img, &mask, 3).unwrap();
        assert_eq!((c.width(), c.height()), (8, 9));
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(m.count(), 9);
        assert!(m.get(2, 3) && !m.get(1, 3));
    }

    #[test]
    fn hog_grid_respects_block_size() {
        let mut p = DescriptorParams::default();
        common_hog_grid(&mut p, &[(45, 80), (60, 25)]);
        assert_eq!(p.hog.n_cells, Some((4, 4)));
        let mut p = DescriptorParams::default();
        common_hog_grid(&mut p, &[(65, 80), (60, 55)]);
        assert_eq!(p.hog.n_cells, Some((6, 5)));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(RoiMode::parse("standard", None).unwrap(), RoiMode::Standard);
        assert!(RoiMode::parse("adaptive_mask", None).is_err());
        assert_eq!(RoiMode::parse("adaptive_mask", Some("tibia_grid0")).unwrap().name(), "adaptive_tibia_grid0");
        assert!(RoiMode::parse("circle", None).is_err());
    }
}
