//! Samples, datasets, on-disk formats and the synthetic generator.

mod container;
mod generator;
mod hierarchy_file;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::hierarchy::{expand_labels, ClassId, HierarchyError, LabelHierarchy, MultiLevelLabels, UNLABELED};
use crate::tensor::Tensor;

pub use container::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint};
pub use generator::{generate, generate_to_disk, zipf_targets, GeneratorConfig, CLOUD_VALUE};
pub use hierarchy_file::{load_hierarchy, parse_hierarchy, write_hierarchy};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic: expected `{expected}`, found `{found}`")]
    Magic { expected: &'static str, found: String },
    #[error("unsupported format version {0}")]
    Version(String),
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("payload truncated while reading `{0}`")]
    Truncated(String),
    #[error("checksum mismatch in `{0}`")]
    Checksum(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("generator: {0}")]
    Generator(String),
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> DataError {
        let path = path.into();
        move |source| DataError::Io { path, source }
    }
}

/// One spatio-temporal patch.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub time_steps: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    /// Reflectance-like values in `[0, 1]`, `[T, B, H, W]` row-major.
    pub inputs: Vec<f32>,
    /// Finest-level class per pixel, [`UNLABELED`] where there is no reference.
    pub fine_labels: Vec<ClassId>,
    /// Field polygon per pixel, 0 outside any field.
    pub field_ids: Vec<u32>,
    pub fold_id: u8,
    /// Which time steps were replaced by cloud frames.
    pub occluded_frames: Vec<bool>,
    /// Top-left corner `(row, col)` in the source grid.
    pub origin: [u32; 2],
}

impl SequenceSample {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn mask(&self) -> Vec<bool> {
        self.fine_labels.iter().map(|&c| c != UNLABELED).collect()
    }

    pub fn input_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.time_steps, self.bands, self.height, self.width],
            self.inputs.iter().map(|&v| v as f64).collect(),
        )
        .expect("sample dims match payload")
    }

    pub fn labels(&self, hierarchy: &LabelHierarchy) -> Result<MultiLevelLabels, HierarchyError> {
        expand_labels(hierarchy, &self.fine_labels, &self.mask(), self.width)
    }

    pub fn occluded_fraction(&self) -> f64 {
        if self.occluded_frames.is_empty() {
            return 0.0;
        }
        self.occluded_frames.iter().filter(|&&o| o).count() as f64 / self.occluded_frames.len() as f64
    }

    /// Applies a spatial pixel permutation (`dst[i] = src[perm[i]]`) to every map and frame.
    pub(crate) fn permute_pixels(&mut self, perm: &[usize]) {
        let plane = self.pixels();
        debug_assert_eq!(perm.len(), plane);
        let mut buf = vec![0f32; plane];
        for frame in self.inputs.chunks_exact_mut(plane) {
            for (d, &s) in buf.iter_mut().zip(perm) {
                *d = frame[s];
            }
            frame.copy_from_slice(&buf);
        }
        self.fine_labels = perm.iter().map(|&s| self.fine_labels[s]).collect();
        self.field_ids = perm.iter().map(|&s| self.field_ids[s]).collect();
    }
}

/// Dataset-level metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub samples: usize,
    pub time_steps: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub fine_classes: usize,
    /// Hierarchy file name, relative to the dataset file.
    pub hierarchy: String,
    /// `folds[f]` lists the sample indices of strip `f`.
    pub folds: Vec<Vec<usize>>,
    /// Labeled pixels per finest class over all samples.
    pub class_counts: Vec<u64>,
    /// Generator settings that produced the data.
    pub echo: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub hierarchy: LabelHierarchy,
    pub samples: Vec<SequenceSample>,
}

impl Dataset {
    /// Sample indices outside / inside `test_fold`.
    pub fn split(&self, test_fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if s.fold_id as usize == test_fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }
}

/// Labeled pixels per finest class over the given samples.
pub fn count_classes<'a>(samples: impl IntoIterator<Item = &'a SequenceSample>, fine_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; fine_classes];
    for s in samples {
        for &c in &s.fine_labels {
            if c != UNLABELED {
                counts[c as usize] += 1;
            }
        }
    }
    counts
}

/// Builds per-fold index lists from sample fold ids.
pub fn fold_lists(samples: &[SequenceSample], folds: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); folds];
    for (i, s) in samples.iter().enumerate() {
        out[s.fold_id as usize].push(i);
    }
    out
}
