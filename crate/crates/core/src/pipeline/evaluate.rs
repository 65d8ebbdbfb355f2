use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::learn::{curve_svg, evaluate, subjectwise_kfold, test_external, train_full, EvalReport};

use super::config::PipelineConfig;
use super::features::FeatureTable;

fn load_joined(paths: &[PathBuf]) -> Result<FeatureTable> {
    let tables = paths.iter().map(|p| FeatureTable::read(p)).collect::<Result<Vec<_>>>()?;
    let t = FeatureTable::join(&tables)?;
    if t.keys.is_empty() {
        return Err(Error::InvalidArgument("feature table has no rows".into()));
    }
    Ok(t)
}

pub fn default_eval_name(train: &[PathBuf]) -> String {
    train
        .iter()
        .map(|p| p.file_stem().and_then(|s| s.to_str()).unwrap_or("features"))
        .collect::<Vec<_>>()
        .join("+")
}

/// Cross-validated evaluation of the training features, or external
/// evaluation when test features are given. Writes `report.json`,
/// `report.csv`, `roc.svg`, `pr.svg` and `model.json` under
/// `eval/<name>`, and in CV mode also the subject fold assignment
/// `folds.csv`.
pub fn cmd_evaluate(out: &Path, cfg: &PipelineConfig, train: &[PathBuf], test: &[PathBuf], name: &str) -> Result<EvalReport> {
    let tr = load_joined(train)?;
    let eval_cfg = cfg.eval_config();
    let dir = out.join("eval").join(name);
    super::create_dir(&dir)?;
    let roi_tag = tr.roi_tags.first().cloned().unwrap_or_default();
    let (report, model) = if test.is_empty() {
        let report = evaluate(&tr.rows, &tr.keys, &eval_cfg)?;
        let folds = subjectwise_kfold(&tr.keys, &eval_cfg.cv)?;
        let path = dir.join("folds.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["sample_id", "subject_id", "fold"])?;
        for (k, f) in tr.keys.iter().zip(&folds) {
            w.write_record([k.sample_id.as_str(), k.subject_id.as_str(), &f.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        (report, train_full(&tr.rows, &tr.keys, cfg.lambda)?)
    } else {
        let te = load_joined(test)?;
        if te.n_features() != tr.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "train has {} features, test {}",
                tr.n_features(),
                te.n_features()
            )));
        }
        test_external(&tr.rows, &tr.keys, &te.rows, &te.keys, &eval_cfg)?
    };
    report.save_json(&dir.join("report.json"))?;
    report.save_csv(&dir.join("report.csv"))?;
    model.to_file(&tr.descriptor, &roi_tag).save(&dir.join("model.json"))?;
    let title = format!("{} ({})", tr.descriptor, report.mode);
    for (file, curve, xl, yl, diag) in [
        ("roc.svg", &report.roc_curve, "False positive rate", "True positive rate", true),
        ("pr.svg", &report.pr_curve, "Recall", "Precision", false),
    ] {
        let path = dir.join(file);
        std::fs::write(&path, curve_svg(curve, &title, xl, yl, diag)).map_err(|e| Error::io(&path, e))?;
    }
    log::info!(
        "{name}: AUC {:.3} [{:.3}, {:.3}], AP {:.3}",
        report.auc,
        report.auc_ci.0,
        report.auc_ci.1,
        report.ap
    );
    Ok(report)
}
