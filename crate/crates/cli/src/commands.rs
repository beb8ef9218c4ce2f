use std::fs;
use std::path::{Path, PathBuf};

use hiercrop::cells::{param_count, CellKind};
use hiercrop::data::{generate_to_disk, load_hierarchy, read_checkpoint, read_dataset, write_checkpoint};
use hiercrop::eval::{
    accuracy_by_occlusion, coverage_curve, curve_tsv, echo_comment, evaluate_predictions, occlusion_tsv, p_grid,
    predict_split, summary_text, write_report, CurveRow, SplitPredictions,
};
use hiercrop::gradcheck::check_tiny_network;
use hiercrop::training::EpochLog;
use hiercrop::{train, Dataset, MsConvRnn};
use log::info;

use crate::config::RunConfig;
use crate::error::CliError;

/// Largest relative error the `gradcheck` command accepts.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(io_error(dir)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_error(path))
}

pub fn gen_data(cfg: &RunConfig) -> Result<String, CliError> {
    ensure_parent(&cfg.dataset)?;
    let d = generate_to_disk(&cfg.generator(), &cfg.dataset)?;
    let labeled: u64 = d.manifest.class_counts.iter().sum();
    info!("wrote {} samples to {}", d.samples.len(), cfg.dataset.display());
    Ok(format!(
        "samples: {}\nlabeled_pixels: {labeled}\nclass_counts: {}\n",
        d.samples.len(),
        d.manifest.class_counts.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    ))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let mut d = read_dataset(&cfg.dataset)?;
    if let Some(path) = &cfg.hierarchy {
        let h = load_hierarchy(path)?;
        if h.finest_classes() != d.manifest.fine_classes {
            return Err(CliError::Data(format!(
                "{}: {} finest classes, dataset has {}",
                path.display(),
                h.finest_classes(),
                d.manifest.fine_classes
            )));
        }
        d.hierarchy = h;
    }
    if cfg.test_fold >= d.manifest.folds.len() {
        return Err(CliError::Config(format!(
            "test fold {} out of range for {} folds",
            cfg.test_fold,
            d.manifest.folds.len()
        )));
    }
    Ok(d)
}

fn load_model(path: &Path, dataset: &Dataset) -> Result<(MsConvRnn, Vec<(String, String)>), CliError> {
    let ck = read_checkpoint(path)?;
    let c = ck.model.config();
    if c.input_dim != dataset.manifest.bands {
        return Err(CliError::Data(format!(
            "{}: model reads {} bands, dataset has {}",
            path.display(),
            c.input_dim,
            dataset.manifest.bands
        )));
    }
    let echo = ck.echo.into_iter().map(|(k, v)| (format!("checkpoint.{k}"), v)).collect();
    Ok((ck.model, echo))
}

fn test_predictions(cfg: &RunConfig, model: &MsConvRnn, dataset: &Dataset) -> Result<SplitPredictions, CliError> {
    let (_, test) = dataset.split(cfg.test_fold);
    if test.is_empty() {
        return Err(CliError::Data(format!("test fold {} holds no samples", cfg.test_fold)));
    }
    Ok(predict_split(model, dataset, &test)?)
}

pub fn train_model(cfg: &RunConfig) -> Result<String, CliError> {
    let dataset = load_dataset(cfg)?;
    let (train_idx, _) = dataset.split(cfg.test_fold);
    let net = cfg.network(&dataset.hierarchy, dataset.manifest.bands)?;
    let mut model = MsConvRnn::seeded(net, cfg.seed)?;
    let echo = cfg.echo();
    let log_path = cfg.report_dir.join("train_log.tsv");
    let mut log = echo_comment(&echo) + &EpochLog::header(model.config().stages) + "\n";
    write_text(&log_path, &log)?;
    ensure_parent(&cfg.checkpoint)?;
    let mut saved = false;
    let report = train(&mut model, &dataset, &train_idx, &cfg.trainer(), |row, m| {
        log.push_str(&row.tsv_row());
        log.push('\n');
        fs::write(&log_path, &log).map_err(|e| hiercrop::TrainError::Invalid(format!("{}: {e}", log_path.display())))?;
        write_checkpoint(&cfg.checkpoint, m, &echo)?;
        saved = true;
        Ok(())
    })?;
    if let Some(a) = report.aborted {
        let kept = if saved {
            format!("last good checkpoint kept at {}", cfg.checkpoint.display())
        } else {
            "no checkpoint written".to_string()
        };
        return Err(CliError::Numeric(format!(
            "training aborted at epoch {} step {}: {}; {kept}",
            a.epoch, a.step, a.reason
        )));
    }
    let last = report.log.last().map(EpochLog::tsv_row).unwrap_or_default();
    Ok(format!("{}\n{last}\n", EpochLog::header(model.config().stages)))
}

pub fn eval(cfg: &RunConfig) -> Result<String, CliError> {
    let dataset = load_dataset(cfg)?;
    let (model, ck_echo) = load_model(&cfg.checkpoint, &dataset)?;
    let preds = test_predictions(cfg, &model, &dataset)?;
    let report = evaluate_predictions(&preds, &cfg.eval)?;
    let mut echo = cfg.echo();
    echo.extend(ck_echo);
    write_report(&cfg.report_dir, &report, dataset.hierarchy.names(), &echo)?;
    Ok(summary_text(&report, &[]))
}

/// Curve of one model restricted to its 1..=N finest levels, or, given
/// several checkpoints, one curve per model over all of its levels.
pub fn coverage(cfg: &RunConfig, checkpoints: &[PathBuf]) -> Result<String, CliError> {
    let dataset = load_dataset(cfg)?;
    let grid = p_grid(cfg.curve_points);
    let mut echo = cfg.echo();
    let rows: Vec<CurveRow> = if checkpoints.is_empty() {
        echo.push(("curve.mode".into(), "restrict".into()));
        let (model, _) = load_model(&cfg.checkpoint, &dataset)?;
        let preds = test_predictions(cfg, &model, &dataset)?;
        coverage_curve(&preds.scores, &preds.truth, &grid)
    } else {
        echo.push(("curve.mode".into(), "retrain".into()));
        let mut rows = Vec::new();
        for path in checkpoints {
            echo.push(("curve.checkpoint".into(), path.display().to_string()));
            let (model, _) = load_model(path, &dataset)?;
            let preds = test_predictions(cfg, &model, &dataset)?;
            let k = preds.scores.levels();
            rows.extend(coverage_curve(&preds.scores, &preds.truth, &grid).into_iter().filter(|r| r.levels == k));
        }
        rows
    };
    let text = curve_tsv(&rows);
    write_text(&cfg.report_dir.join("coverage_curve.tsv"), &(echo_comment(&echo) + &text))?;
    Ok(text)
}

pub fn occlusion(cfg: &RunConfig) -> Result<String, CliError> {
    let dataset = load_dataset(cfg)?;
    let (model, _) = load_model(&cfg.checkpoint, &dataset)?;
    let preds = test_predictions(cfg, &model, &dataset)?;
    let text = occlusion_tsv(&accuracy_by_occlusion(&preds, &cfg.occlusion_thresholds, cfg.eval.majority_vote));
    write_text(&cfg.report_dir.join("occlusion.tsv"), &(echo_comment(&cfg.echo()) + &text))?;
    Ok(text)
}

pub fn gradcheck(cells: &[CellKind], seed: u64) -> Result<String, CliError> {
    let mut out = String::from("cell\trefinement\tclass_weights\tcoordinates\tmax_rel_error\n");
    let mut worst: f64 = 0.0;
    for &cell in cells {
        for (refinement, weighted) in [(true, false), (false, false), (true, true)] {
            let r = check_tiny_network(cell, refinement, weighted, seed)?;
            out.push_str(&format!("{cell}\t{refinement}\t{weighted}\t{}\t{:e}\n", r.coordinates, r.max_rel_error));
            worst = worst.max(r.max_rel_error);
        }
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(CliError::Numeric(format!(
            "max relative error {worst:e} exceeds {GRADCHECK_TOLERANCE:e}\n{out}"
        )));
    }
    Ok(out)
}

pub fn count(cell: CellKind, input_dim: usize, hidden: usize, kernel: usize) -> Result<String, CliError> {
    if kernel % 2 == 0 || input_dim == 0 || hidden == 0 {
        return Err(CliError::Config("dims must be positive and the kernel odd".into()));
    }
    Ok(format!("{}\n", param_count(cell, input_dim, hidden, kernel)))
}
