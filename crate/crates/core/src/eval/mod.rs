//! Metrics, field voting, confidence fallback and report tables.

mod metrics;
mod report;
mod selection;

use thiserror::Error;

use crate::data::Dataset;
use crate::hierarchy::{consistency_rate, ClassId, HierarchyError, LabelHierarchy};
use crate::network::{MsConvRnn, NetworkError};
use crate::training::{model_labels, TrainError};

pub use metrics::{compute_metrics, majority_vote, ClassMetrics, Metrics};
pub use report::{confusion_csv, curve_tsv, echo_comment, occlusion_tsv, per_class_tsv, summary_text, write_report};
pub use selection::{
    coverage, coverage_curve, multi_level_select, occlusion_table, p_grid, select_levels, Assignment, Coverage, CurveRow,
    LevelScores, OcclusionRow,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no labeled pixels to evaluate")]
    EmptyMask,
    #[error("class {class} out of range for {classes} classes")]
    ClassRange { class: usize, classes: usize },
    #[error("{0}")]
    Shape(String),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub majority_vote: bool,
    /// Confidence threshold of the fallback labelling.
    pub confidence: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            majority_vote: true,
            confidence: 0.9,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(EvalError::Confidence(self.confidence));
        }
        Ok(())
    }
}

/// Model outputs on the labeled pixels of a split, concatenated patch by patch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitPredictions {
    pub scores: LevelScores,
    /// `truth[n - 1]` holds the level-n labels.
    pub truth: Vec<Vec<ClassId>>,
    pub field_ids: Vec<u32>,
    /// Occluded-frame fraction of each pixel's patch.
    pub occluded: Vec<f64>,
    /// Hierarchy of the levels the model predicts.
    pub hierarchy: Option<LabelHierarchy>,
}

impl SplitPredictions {
    pub fn pixels(&self) -> usize {
        self.scores.pixels()
    }

    /// Predicted classes per level, optionally voted within fields.
    pub fn labels(&self, vote: bool) -> Vec<Vec<ClassId>> {
        self.scores
            .argmax
            .iter()
            .map(|a| if vote { majority_vote(a, &self.field_ids) } else { a.clone() })
            .collect()
    }
}

/// Runs `model` over the samples in `indices`.
pub fn predict_split(model: &MsConvRnn, dataset: &Dataset, indices: &[usize]) -> Result<SplitPredictions, EvalError> {
    let stages = model.config().stages;
    let mut out = SplitPredictions {
        truth: vec![Vec::new(); stages],
        hierarchy: Some(dataset.hierarchy.finest_levels(stages)),
        ..SplitPredictions::default()
    };
    for &i in indices {
        let sample = &dataset.samples[i];
        let labels = model_labels(model, &dataset.hierarchy, sample)?;
        let volumes = model.predict(&sample.input_tensor())?;
        out.scores.extend_masked(&LevelScores::from_volumes(&volumes), &labels.mask);
        let frac = sample.occluded_fraction();
        for (px, _) in labels.mask.iter().enumerate().filter(|(_, &m)| m) {
            for (t, level) in out.truth.iter_mut().zip(&labels.levels) {
                t.push(level[px]);
            }
            out.field_ids.push(sample.field_ids[px]);
            out.occluded.push(frac);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub majority_vote: bool,
    /// Metrics per predicted level, coarsest first.
    pub levels: Vec<Metrics>,
    pub consistency_rate: f64,
    pub confidence: f64,
    pub coverage: Coverage,
}

impl EvalReport {
    pub fn aggregation(&self) -> &'static str {
        if self.majority_vote {
            "field_majority"
        } else {
            "none"
        }
    }

    pub fn finest(&self) -> &Metrics {
        self.levels.last().expect("at least one level")
    }
}

pub fn evaluate_predictions(preds: &SplitPredictions, config: &EvalConfig) -> Result<EvalReport, EvalError> {
    config.validate()?;
    if preds.pixels() == 0 {
        return Err(EvalError::EmptyMask);
    }
    let hierarchy = preds
        .hierarchy
        .as_ref()
        .ok_or_else(|| EvalError::Shape("predictions carry no hierarchy".into()))?;
    let labels = preds.labels(config.majority_vote);
    let mask = vec![true; preds.pixels()];
    let levels = labels
        .iter()
        .zip(&preds.truth)
        .zip(hierarchy.class_counts())
        .map(|((p, t), &c)| compute_metrics(p, t, &mask, c))
        .collect::<Result<Vec<_>, _>>()?;
    let consistency = consistency_rate(hierarchy, &labels, &mask)?;
    let cov = coverage(&select_levels(&preds.scores, config.confidence, preds.scores.levels()), &preds.truth);
    Ok(EvalReport {
        majority_vote: config.majority_vote,
        levels,
        consistency_rate: consistency,
        confidence: config.confidence,
        coverage: cov,
    })
}

/// Predicts and scores `indices` of `dataset`.
pub fn evaluate(model: &MsConvRnn, dataset: &Dataset, indices: &[usize], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    evaluate_predictions(&predict_split(model, dataset, indices)?, config)
}

/// Finest-level accuracy over pixels whose patch has at most each occluded fraction.
pub fn accuracy_by_occlusion(preds: &SplitPredictions, thresholds: &[f64], vote: bool) -> Vec<OcclusionRow> {
    let labels = preds.labels(vote);
    let (Some(pred), Some(truth)) = (labels.last(), preds.truth.last()) else {
        return Vec::new();
    };
    let correct: Vec<bool> = pred.iter().zip(truth).map(|(p, t)| p == t).collect();
    occlusion_table(&preds.occluded, &correct, thresholds)
}
