use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use texroi::descriptors::Descriptor;
use texroi::pipeline::evaluate::default_eval_name;
use texroi::pipeline::manifest::Manifest;
use texroi::pipeline::{self, PipelineConfig, RegionSelector, RoiMode};
use texroi::{Error, Result};

#[derive(Parser)]
#[command(name = "texroi", version, about = "Adaptive ROI texture analysis for knee radiographs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize, resample and align every manifest image.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Segment bones into superpixels and rank lattice regions by LBP AUC.
    RankRegions,
    /// Threshold the average of one region across subjects.
    MakeMask {
        #[arg(long, default_value = "tibia")]
        bone: String,
        /// Grid index, `gridN`, an anchor landmark name, or `top`.
        #[arg(long)]
        region: Option<String>,
    },
    /// Compute descriptor CSVs over one ROI placement.
    Extract {
        /// standard, adaptive_mask or anchor
        #[arg(long, default_value = "standard")]
        roi: String,
        /// Mask name from make-mask, for example `tibia_grid26`.
        #[arg(long)]
        mask: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "LBP,HOG,Haralick,Fractal,Entropy")]
        descriptors: Vec<String>,
        /// Also write the concatenation of all descriptors.
        #[arg(long)]
        concat: bool,
    },
    /// Cross-validate, or test on an external feature set.
    Evaluate {
        /// Feature CSVs joined by sample_id.
        #[arg(long, required = true, num_args = 1..)]
        train: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        test: Vec<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Write a synthetic corpus with a manifest.
    Synth {
        #[arg(long)]
        subjects: Option<usize>,
        /// Lattice index of the informative tibial region.
        #[arg(long)]
        cell: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
    },
}

fn out_dir(common: &Common, cfg: &PipelineConfig) -> Result<PathBuf> {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.cv.seed = seed;
    }
    if let Some(jobs) = cli.common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = out_dir(&cli.common, &cfg)?;
    let (name, result) = match cli.command {
        Command::Preprocess { manifest } => {
            let m = Manifest::load(&manifest)?;
            let r = pipeline::cmd_preprocess(&m, &cfg, &out);
            ("preprocess", r.map(|r| {
                println!("processed {}, skipped {}, failed {}", r.processed, r.skipped, r.failed.len());
            }))
        }
        Command::RankRegions => ("rank-regions", pipeline::cmd_rank_regions(&out, &cfg).map(|all| {
            for (bone, scores) in all {
                for s in scores.iter().take(cfg.rank.top_n) {
                    println!("{bone} grid {:>3}  AUC {:.3} [{:.3}, {:.3}]", s.grid_index, s.auc, s.auc_lo, s.auc_hi);
                }
            }
        })),
        Command::MakeMask { bone, region } => {
            let r = pipeline::cmd_make_mask(&out, &cfg, &bone, RegionSelector::parse(region.as_deref()));
            ("make-mask", r.map(|m| println!("{}_{}: threshold {}, {} subjects", m.bone, m.region, m.threshold, m.n_subjects)))
        }
        Command::Extract {
            roi,
            mask,
            descriptors,
            concat,
        } => {
            let r = (|| {
                let mode = RoiMode::parse(&roi, mask.as_deref())?;
                let ds = descriptors.iter().map(|d| Descriptor::parse(d)).collect::<Result<Vec<_>>>()?;
                pipeline::cmd_extract(&out, &cfg, &mode, &ds, concat)
            })();
            ("extract", r.map(|paths| paths.iter().for_each(|p| println!("{}", p.display()))))
        }
        Command::Evaluate { train, test, name } => {
            let name = name.unwrap_or_else(|| default_eval_name(&train));
            let r = pipeline::cmd_evaluate(&out, &cfg, &train, &test, &name);
            ("evaluate", r.map(|r| {
                println!(
                    "{name} ({}): AUC {:.3} [{:.3}, {:.3}]  AP {:.3} [{:.3}, {:.3}]",
                    r.mode, r.auc, r.auc_ci.0, r.auc_ci.1, r.ap, r.ap_ci.0, r.ap_ci.1
                )
            }))
        }
        Command::Synth { subjects, cell, delta } => {
            if let Some(n) = subjects {
                cfg.synth.n_subjects = n;
            }
            if let Some(c) = cell {
                cfg.synth.informative_cell = c;
            }
            if let Some(d) = delta {
                cfg.synth.texture_delta = d;
            }
            let r = pipeline::synth::generate(&cfg.synth, cfg.grid, cfg.cv.seed, &out);
            ("synth", r.map(|_| println!("{}", out.join("manifest.csv").display())))
        }
    };
    if out.is_dir() {
        pipeline::record_run(&out, name, &cfg, args)?;
    }
    result
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
