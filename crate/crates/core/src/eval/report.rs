//! Text renderings of evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CurveRow, EvalError, EvalReport, Metrics, OcclusionRow};

/// Config echo as `#`-prefixed lines for table headers.
pub fn echo_comment(echo: &[(String, String)]) -> String {
    echo.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
}

/// `key: value` summary, one metric per line, config echo last.
pub fn summary_text(report: &EvalReport, echo: &[(String, String)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "aggregation: {}", report.aggregation());
    let _ = writeln!(s, "pixels: {}", report.finest().pixels);
    for (i, m) in report.levels.iter().enumerate() {
        let l = i + 1;
        let _ = writeln!(s, "level{l}.overall_accuracy: {:.6}", m.overall_accuracy);
        let _ = writeln!(s, "level{l}.macro_precision: {:.6}", m.macro_precision);
        let _ = writeln!(s, "level{l}.macro_recall: {:.6}", m.macro_recall);
        let _ = writeln!(s, "level{l}.macro_f1: {:.6}", m.macro_f1);
        let _ = writeln!(s, "level{l}.macro_f1_harmonic: {:.6}", m.harmonic_f1);
    }
    let _ = writeln!(s, "consistency_rate: {:.6}", report.consistency_rate);
    let _ = writeln!(s, "confidence: {}", report.confidence);
    let _ = writeln!(s, "coverage: {:.6}", report.coverage.rate());
    let _ = writeln!(s, "covered_accuracy: {:.6}", report.coverage.covered_accuracy());
    for (k, v) in echo {
        let _ = writeln!(s, "config.{k}: {v}");
    }
    s
}

pub fn per_class_tsv(m: &Metrics, names: &[String]) -> String {
    let mut s = String::from("class\tname\tsupport\tpredicted\tprecision\trecall\tf1\n");
    for (c, cm) in m.per_class.iter().enumerate() {
        let name = names.get(c).map_or("", String::as_str);
        let _ = writeln!(
            s,
            "{c}\t{name}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            cm.support, cm.predicted, cm.precision, cm.recall, cm.f1
        );
    }
    s
}

/// Row-normalized confusion matrix; rows are true classes.
pub fn confusion_csv(m: &Metrics) -> String {
    let mut s = String::from("truth");
    for c in 0..m.classes {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (c, row) in m.row_normalized().iter().enumerate() {
        let _ = write!(s, "{c}");
        for v in row {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

pub fn curve_tsv(rows: &[CurveRow]) -> String {
    let mut s = String::from("levels\tp\tcoverage\tcovered_accuracy\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{:.4}\t{:.6}\t{:.6}", r.levels, r.p, r.coverage, r.covered_accuracy);
    }
    s
}

pub fn occlusion_tsv(rows: &[OcclusionRow]) -> String {
    let mut s = String::from("max_occluded\tpixels\taccuracy\n");
    for r in rows {
        let _ = writeln!(s, "{:.4}\t{}\t{:.6}", r.max_occluded, r.pixels, r.accuracy);
    }
    s
}

fn write(path: &Path, text: &str) -> Result<(), EvalError> {
    fs::write(path, text).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `summary.txt` plus per-level class tables and confusion matrices.
pub fn write_report(dir: &Path, report: &EvalReport, finest_names: &[String], echo: &[(String, String)]) -> Result<(), EvalError> {
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let header = echo_comment(echo);
    write(&dir.join("summary.txt"), &summary_text(report, echo))?;
    let n = report.levels.len();
    for (i, m) in report.levels.iter().enumerate() {
        let names: Vec<String> = if i + 1 == n {
            finest_names.to_vec()
        } else {
            (0..m.classes).map(|c| format!("level{}_{c}", i + 1)).collect()
        };
        write(&dir.join(format!("level{}_classes.tsv", i + 1)), &(header.clone() + &per_class_tsv(m, &names)))?;
        write(&dir.join(format!("level{}_confusion.csv", i + 1)), &(header.clone() + &confusion_csv(m)))?;
    }
    Ok(())
}
