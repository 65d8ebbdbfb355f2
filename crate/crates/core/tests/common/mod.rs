#![allow(dead_code)]

use std::path::{Path, PathBuf};

use texroi::descriptors::Descriptor;
use texroi::learn::EvalReport;
use texroi::pipeline::manifest::Manifest;
use texroi::pipeline::synth::{generate, SynthTruth};
use texroi::pipeline::{
    cmd_evaluate, cmd_extract, cmd_make_mask, cmd_preprocess, cmd_rank_regions, PipelineConfig, RegionSelector, RoiMode,
};
use texroi::segmentation::RegionScore;

pub struct Run {
    pub out: PathBuf,
    pub truth: SynthTruth,
    pub rankings: Vec<(String, Vec<RegionScore>)>,
    pub adaptive_mask: String,
    pub reports: Vec<(String, EvalReport)>,
}

/// Synthetic corpus plus every pipeline command: rank, mask from the top
/// tibial region, feature extraction on the adaptive mask and the standard
/// ROI, and cross-validated evaluation of each feature file.
pub fn full_run(root: &Path, cfg: &PipelineConfig, descriptors: &[Descriptor], concat: bool) -> Run {
    let corpus = root.join("corpus");
    let out = root.join("out");
    let (manifest, truth) = generate(&cfg.synth, cfg.grid, cfg.cv.seed, &corpus).unwrap();
    let manifest = Manifest::load(&corpus.join("manifest.csv")).map(|m| {
        assert_eq!(m.rows, manifest.rows);
        m
    })
    .unwrap();
    cmd_preprocess(&manifest, cfg, &out).unwrap();
    let rankings = cmd_rank_regions(&out, cfg).unwrap();
    let meta = cmd_make_mask(&out, cfg, "tibia", RegionSelector::Top).unwrap();
    let adaptive_mask = format!("{}_{}", meta.bone, meta.region);
    let mut reports = Vec::new();
    for mode in [RoiMode::AdaptiveMask(adaptive_mask.clone()), RoiMode::Standard] {
        for path in cmd_extract(&out, cfg, &mode, descriptors, concat).unwrap() {
            let name = path.file_stem().unwrap().to_str().unwrap().to_string();
            let report = cmd_evaluate(&out, cfg, &[path], &[], &name).unwrap();
            reports.push((name, report));
        }
    }
    Run {
        out,
        truth,
        rankings,
        adaptive_mask,
        reports,
    }
}

pub fn small_corpus(root: &Path, n_subjects: usize, seed: u64) -> (PipelineConfig, Manifest) {
    let mut cfg = PipelineConfig::default();
    cfg.synth.n_subjects = n_subjects;
    cfg.cv.seed = seed;
    cfg.n_boot = 50;
    let corpus = root.join("corpus");
    generate(&cfg.synth, cfg.grid, seed, &corpus).unwrap();
    let m = Manifest::load(&corpus.join("manifest.csv")).unwrap();
    (cfg, m)
}
