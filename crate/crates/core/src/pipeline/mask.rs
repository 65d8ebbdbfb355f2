use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{save_mask_png, BBox, RoiMask};
use crate::segmentation::{
    accumulate_masks, anchor_roi, grid_points, median_frame, otsu_threshold, read_ranking_csv, region_of_point,
    to_reference_frame, AverageMask,
};

use super::config::PipelineConfig;
use super::store::Store;

/// Which per-subject region feeds an average mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RegionSelector {
    /// The first row of the bone's ranking.
    Top,
    Grid(usize),
    /// A margin landmark, see [`crate::segmentation::anchor_roi`].
    Anchor(String),
}

impl RegionSelector {
    pub fn parse(s: Option<&str>) -> Self {
        match s {
            None | Some("top") => RegionSelector::Top,
            Some(t) => match t.strip_prefix("grid").unwrap_or(t).parse::<usize>() {
                Ok(i) => RegionSelector::Grid(i),
                Err(_) => RegionSelector::Anchor(t.to_string()),
            },
        }
    }

    pub fn tag(&self) -> String {
        match self {
            RegionSelector::Top => "top".into(),
            RegionSelector::Grid(i) => format!("grid{i}"),
            RegionSelector::Anchor(a) => a.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMeta {
    pub bone: String,
    pub region: String,
    /// Reference frame (width, height).
    pub frame: (usize, usize),
    /// Otsu cut on the 0..=255 scale; the mask keeps values above it.
    pub threshold: usize,
    pub n_subjects: usize,
}

pub fn ranking_path(out: &Path, bone: &str) -> PathBuf {
    out.join("rankings").join(format!("{bone}.csv"))
}

pub fn mask_paths(out: &Path, name: &str) -> (PathBuf, PathBuf) {
    let dir = out.join("masks");
    (dir.join(format!("{name}.png")), dir.join(format!("{name}.json")))
}

/// Per-subject region masks of one bone together with the bone bounding
/// box. Subjects where the region does not exist are left out.
pub fn region_masks(store: &Store, bone: &str, region: &RegionSelector, cfg: &PipelineConfig) -> Result<Vec<(RoiMask, BBox)>> {
    if *region == RegionSelector::Top {
        return Err(Error::InvalidArgument("resolve the top region before collecting masks".into()));
    }
    let results: Vec<Result<Option<(RoiMask, BBox)>>> = store
        .entries
        .par_iter()
        .map(|e| {
            let sample = store.load_sample(e)?;
            let bone_mask = sample.bone_mask(bone)?;
            let labels = store.labels(e, &sample, bone, &cfg.slic)?;
            let m = match region {
                RegionSelector::Grid(i) => match grid_points(&bone_mask, cfg.grid)?.point(*i) {
                    Some(p) => region_of_point(&labels, p.x, p.y)?,
                    None => return Ok(None),
                },
                RegionSelector::Anchor(a) => {
                    anchor_roi(&labels, &sample.landmarks, &bone_mask, a, cfg.roi.anchor_offset_mm, e.spacing_mm)?
                }
                RegionSelector::Top => unreachable!(),
            };
            Ok(Some((m, bone_mask.bbox())))
        })
        .collect();
    let mut masks = Vec::new();
    let mut failed = 0;
    for (e, r) in store.entries.iter().zip(results) {
        match r {
            Ok(Some(m)) => masks.push(m),
            Ok(None) => {}
            Err(err) => {
                log::error!("{} ({bone}, {}): {err}", e.sample_id, region.tag());
                failed += 1;
            }
        }
    }
    super::check_failure_budget(failed, store.entries.len())?;
    Ok(masks)
}

/// Average of the region masks in the median reference frame.
pub fn average_region_mask(masks: &[(RoiMask, BBox)]) -> Result<AverageMask> {
    let boxes: Vec<BBox> = masks.iter().map(|(_, b)| *b).collect();
    let frame = median_frame(&boxes)?;
    let framed = masks
        .iter()
        .map(|(m, b)| to_reference_frame(m, *b, frame))
        .collect::<Result<Vec<_>>>()?;
    accumulate_masks(&framed)
}

pub fn resolve_region(out: &Path, bone: &str, region: RegionSelector) -> Result<RegionSelector> {
    if region != RegionSelector::Top {
        return Ok(region);
    }
    let ranking = read_ranking_csv(&ranking_path(out, bone))?;
    let top = ranking
        .first()
        .ok_or_else(|| Error::Degenerate(format!("ranking for {bone} is empty")))?;
    Ok(RegionSelector::Grid(top.grid_index))
}

/// Thresholds the average of the selected per-subject regions and writes
/// `masks/<bone>_<region>.png`, its average map and a JSON sidecar.
pub fn cmd_make_mask(out: &Path, cfg: &PipelineConfig, bone: &str, region: RegionSelector) -> Result<MaskMeta> {
    let store = Store::load(out)?;
    let region = resolve_region(out, bone, region)?;
    let masks = region_masks(&store, bone, &region, cfg)?;
    if masks.is_empty() {
        return Err(Error::EmptyMask(format!("no subject has region {} on {bone}", region.tag())));
    }
    let avg = average_region_mask(&masks)?;
    let (mask, threshold) = otsu_threshold(&avg)?;
    let name = format!("{bone}_{}", region.tag());
    let (png, json) = mask_paths(out, &name);
    super::create_dir(png.parent().expect("mask dir"))?;
    save_mask_png(&mask, &png)?;
    avg.save_png(&png.with_file_name(format!("{name}_average.png")))?;
    let meta = MaskMeta {
        bone: bone.to_string(),
        region: region.tag(),
        frame: (avg.width, avg.height),
        threshold,
        n_subjects: avg.n_subjects,
    };
    super::write_json(&json, &meta)?;
    log::info!("mask {name}: {} px, Otsu cut {threshold}, {} subjects", mask.count(), avg.n_subjects);
    Ok(meta)
}
