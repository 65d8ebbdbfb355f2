use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::BBox;
use crate::learn::SampleKey;
use crate::segmentation::{grid_points, grid_region_features, rank_from_features, write_ranking_csv, RegionScore, SegmentedSample};

use super::config::PipelineConfig;
use super::mask::{average_region_mask, ranking_path, region_masks, RegionSelector};
use super::store::Store;

type SampleFeatures = (SampleKey, Vec<Option<Vec<f64>>>, BBox);

fn bone_features(store: &Store, bone: &str, cfg: &PipelineConfig) -> Result<Vec<SampleFeatures>> {
    let results: Vec<Result<SampleFeatures>> = store
        .entries
        .par_iter()
        .map(|e| {
            let sample = store.load_sample(e)?;
            let bone_mask = sample.bone_mask(bone)?;
            let labels = store.labels(e, &sample, bone, &cfg.slic)?;
            let grid = grid_points(&bone_mask, cfg.grid)?;
            let seg = SegmentedSample {
                key: e.key(),
                image: &sample.image,
                labels: &labels,
                grid: &grid,
            };
            let feats = grid_region_features(&seg, &cfg.descriptors.lbp)?;
            Ok((e.key(), feats, bone_mask.bbox()))
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for (e, r) in store.entries.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(err) => {
                log::error!("{} ({bone}): {err}", e.sample_id);
                failed += 1;
            }
        }
    }
    super::check_failure_budget(failed, store.entries.len())?;
    Ok(ok)
}

/// Ranks the lattice regions of every configured bone and writes
/// `rankings/<bone>.csv` plus average masks of the `top_n` regions under
/// `average_masks/`.
pub fn cmd_rank_regions(out: &Path, cfg: &PipelineConfig) -> Result<Vec<(String, Vec<RegionScore>)>> {
    let store = Store::load(out)?;
    if store.entries.is_empty() {
        return Err(Error::InvalidArgument("preprocessed store is empty".into()));
    }
    let rank_cfg = cfg.rank_config();
    let mut all = Vec::new();
    for bone in &cfg.rank.bones {
        let samples = bone_features(&store, bone, cfg)?;
        let keys: Vec<SampleKey> = samples.iter().map(|s| s.0.clone()).collect();
        let feats: Vec<Vec<Option<Vec<f64>>>> = samples.into_iter().map(|s| s.1).collect();
        let scores = rank_from_features(&keys, &feats, cfg.grid, &rank_cfg)?;
        let path = ranking_path(out, bone);
        super::create_dir(path.parent().expect("ranking dir"))?;
        write_ranking_csv(&scores, &path)?;
        if let Some(top) = scores.first() {
            log::info!("{bone}: top region grid {} with AUC {:.3}", top.grid_index, top.auc);
        }

        let avg_dir = out.join("average_masks");
        super::create_dir(&avg_dir)?;
        for s in scores.iter().take(cfg.rank.top_n) {
            let masks = region_masks(&store, bone, &RegionSelector::Grid(s.grid_index), cfg)?;
            if masks.is_empty() {
                continue;
            }
            average_region_mask(&masks)?.save_png(&avg_dir.join(format!("{bone}_grid{}.png", s.grid_index)))?;
        }
        all.push((bone.clone(), scores));
    }
    Ok(all)
}
