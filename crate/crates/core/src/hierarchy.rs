//! N-level label trees.
//!
//! Level 1 is the coarsest, level N the finest. Every class at level `n > 1`
//! has a single parent at level `n - 1`.

use std::fmt;

use thiserror::Error;

/// Class identifier at any level.
pub type ClassId = u16;

/// Marks a pixel without a reference label, at every level.
pub const UNLABELED: ClassId = ClassId::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HierarchyError {
    #[error("hierarchy has no levels")]
    Empty,
    #[error("pixel ({row}, {col}): class {id} out of range for {classes} finest classes")]
    LabelOutOfRange {
        row: usize,
        col: usize,
        id: ClassId,
        classes: usize,
    },
    #[error("map length {found} does not match {expected} pixels")]
    MapLength { expected: usize, found: usize },
    #[error("expected {expected} levels, found {found}")]
    LevelCount { expected: usize, found: usize },
    #[error("invalid hierarchy: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// A structural problem found by [`LabelHierarchy::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Level `level` (1-based) has no classes.
    EmptyLevel { level: usize },
    /// Parent map for `level` has the wrong length.
    ParentMapLength { level: usize, expected: usize, found: usize },
    /// `class` at `level` points at a parent outside `[0, C_{level-1})`.
    ParentOutOfRange {
        level: usize,
        class: usize,
        parent: ClassId,
        parent_classes: usize,
    },
    /// A finer level has fewer classes than the level above it.
    DecreasingClassCount { level: usize, coarser: usize, finer: usize },
    /// Name table length does not match the finest class count.
    NameCount { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyLevel { level } => write!(f, "level {level} has no classes"),
            Violation::ParentMapLength { level, expected, found } => {
                write!(f, "level {level} parent map has {found} entries, expected {expected}")
            }
            Violation::ParentOutOfRange {
                level,
                class,
                parent,
                parent_classes,
            } => write!(
                f,
                "level {level} class {class} has parent {parent}, outside [0, {parent_classes})"
            ),
            Violation::DecreasingClassCount { level, coarser, finer } => {
                write!(f, "level {level} has {finer} classes, fewer than the {coarser} above it")
            }
            Violation::NameCount { expected, found } => {
                write!(f, "{found} class names for {expected} finest classes")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHierarchy {
    class_counts: Vec<usize>,
    /// `parents[n - 2][c]` is the level-(n-1) parent of level-n class `c`, for n >= 2.
    parents: Vec<Vec<ClassId>>,
    names: Vec<String>,
}

impl LabelHierarchy {
    /// Builds and validates a hierarchy. `parents` has one map per level below the root level.
    pub fn new(class_counts: Vec<usize>, parents: Vec<Vec<ClassId>>, names: Vec<String>) -> Result<Self, HierarchyError> {
        let h = Self::new_unchecked(class_counts, parents, names);
        let violations = h.validate();
        if violations.is_empty() {
            Ok(h)
        } else {
            Err(HierarchyError::Invalid(violations))
        }
    }

    /// Builds a hierarchy without validation, e.g. to inspect a broken one.
    pub fn new_unchecked(class_counts: Vec<usize>, parents: Vec<Vec<ClassId>>, names: Vec<String>) -> Self {
        LabelHierarchy {
            class_counts,
            parents,
            names,
        }
    }

    /// A flat single-level hierarchy.
    pub fn flat(classes: usize) -> Self {
        let names = (0..classes).map(|c| format!("class_{c}")).collect();
        Self::new_unchecked(vec![classes], Vec::new(), names)
    }

    /// Complete tree where every level-n class has `branching[n]` children.
    /// `branching[0]` is the number of root-level classes.
    pub fn balanced(branching: &[usize]) -> Self {
        let mut counts = Vec::with_capacity(branching.len());
        let mut parents = Vec::new();
        let mut c = 1;
        for (i, &b) in branching.iter().enumerate() {
            let next = c * b;
            if i > 0 {
                parents.push((0..next).map(|k| (k / b) as ClassId).collect());
            }
            counts.push(next);
            c = next;
        }
        let names = (0..c).map(|k| format!("class_{k}")).collect();
        Self::new_unchecked(counts, parents, names)
    }

    /// Returns every violation found, empty when the hierarchy is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (i, &c) in self.class_counts.iter().enumerate() {
            if c == 0 {
                v.push(Violation::EmptyLevel { level: i + 1 });
            }
        }
        for i in 1..self.class_counts.len() {
            let (coarser, finer) = (self.class_counts[i - 1], self.class_counts[i]);
            if finer < coarser {
                v.push(Violation::DecreasingClassCount {
                    level: i + 1,
                    coarser,
                    finer,
                });
            }
        }
        let expected_maps = self.class_counts.len().saturating_sub(1);
        for level in 2..=self.class_counts.len() {
            let Some(map) = self.parents.get(level - 2) else {
                v.push(Violation::ParentMapLength {
                    level,
                    expected: self.class_counts[level - 1],
                    found: 0,
                });
                continue;
            };
            if map.len() != self.class_counts[level - 1] {
                v.push(Violation::ParentMapLength {
                    level,
                    expected: self.class_counts[level - 1],
                    found: map.len(),
                });
            }
            let parent_classes = self.class_counts[level - 2];
            for (class, &parent) in map.iter().enumerate() {
                if parent as usize >= parent_classes {
                    v.push(Violation::ParentOutOfRange {
                        level,
                        class,
                        parent,
                        parent_classes,
                    });
                }
            }
        }
        if self.parents.len() > expected_maps {
            v.push(Violation::ParentMapLength {
                level: self.parents.len() + 1,
                expected: 0,
                found: self.parents[self.parents.len() - 1].len(),
            });
        }
        if let Some(&fine) = self.class_counts.last() {
            if self.names.len() != fine {
                v.push(Violation::NameCount {
                    expected: fine,
                    found: self.names.len(),
                });
            }
        }
        v
    }

    pub fn levels(&self) -> usize {
        self.class_counts.len()
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    /// Number of classes at 1-based `level`.
    pub fn classes_at(&self, level: usize) -> usize {
        self.class_counts[level - 1]
    }

    pub fn finest_classes(&self) -> usize {
        *self.class_counts.last().expect("non-empty hierarchy")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Parent map of 1-based `level >= 2`.
    pub fn parent_map(&self, level: usize) -> &[ClassId] {
        &self.parents[level - 2]
    }

    /// Parent at level `level - 1` of class `class` at `level`.
    pub fn parent(&self, level: usize, class: ClassId) -> ClassId {
        self.parents[level - 2][class as usize]
    }

    /// Ancestor at `target_level` of a class at `level` (`target_level <= level`).
    pub fn ancestor(&self, level: usize, class: ClassId, target_level: usize) -> ClassId {
        let mut c = class;
        for l in (target_level + 1..=level).rev() {
            c = self.parent(l, c);
        }
        c
    }

    /// Full lineage `(level 1, ..., level N)` of a finest-level class.
    pub fn lineage(&self, fine: ClassId) -> Vec<ClassId> {
        let n = self.levels();
        let mut out = vec![fine; n];
        for l in (1..n).rev() {
            out[l - 1] = self.parent(l + 1, out[l]);
        }
        out
    }

    /// Aggregates finest-level counts to every level. `out[n - 1]` holds level-n counts.
    pub fn aggregate_counts(&self, fine_counts: &[u64]) -> Vec<Vec<u64>> {
        let n = self.levels();
        let mut out = vec![Vec::new(); n];
        out[n - 1] = fine_counts.to_vec();
        for l in (1..n).rev() {
            let mut coarse = vec![0u64; self.class_counts[l - 1]];
            for (c, &cnt) in out[l].iter().enumerate() {
                coarse[self.parent(l + 1, c as ClassId) as usize] += cnt;
            }
            out[l - 1] = coarse;
        }
        out
    }

    /// Keeps only levels `1..=k`. Names of the new finest level are generic.
    pub fn coarsest_levels(&self, k: usize) -> LabelHierarchy {
        assert!(k >= 1 && k <= self.levels());
        if k == self.levels() {
            return self.clone();
        }
        LabelHierarchy {
            class_counts: self.class_counts[..k].to_vec(),
            parents: self.parents[..k - 1].to_vec(),
            names: (0..self.class_counts[k - 1]).map(|c| format!("level{k}_{c}")).collect(),
        }
    }

    /// Keeps only the finest `k` levels.
    pub fn finest_levels(&self, k: usize) -> LabelHierarchy {
        let n = self.levels();
        assert!(k >= 1 && k <= n);
        LabelHierarchy {
            class_counts: self.class_counts[n - k..].to_vec(),
            parents: self.parents[n - k..].to_vec(),
            names: self.names.clone(),
        }
    }
}

/// Per-level label maps over an `height x width` patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiLevelLabels {
    pub height: usize,
    pub width: usize,
    /// `levels[n - 1]` holds the level-n map; [`UNLABELED`] outside the mask.
    pub levels: Vec<Vec<ClassId>>,
    pub mask: Vec<bool>,
}

impl MultiLevelLabels {
    pub fn level(&self, level: usize) -> &[ClassId] {
        &self.levels[level - 1]
    }

    pub fn labeled_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Labels restricted to the finest `k` levels.
    pub fn finest_levels(&self, k: usize) -> MultiLevelLabels {
        let n = self.levels.len();
        MultiLevelLabels {
            height: self.height,
            width: self.width,
            levels: self.levels[n - k..].to_vec(),
            mask: self.mask.clone(),
        }
    }
}

/// Derives every coarser label from the finest ones.
pub fn expand_labels(
    h: &LabelHierarchy,
    fine: &[ClassId],
    mask: &[bool],
    width: usize,
) -> Result<MultiLevelLabels, HierarchyError> {
    if fine.len() != mask.len() {
        return Err(HierarchyError::MapLength {
            expected: fine.len(),
            found: mask.len(),
        });
    }
    if width == 0 || fine.len() % width != 0 {
        return Err(HierarchyError::MapLength {
            expected: fine.len(),
            found: width,
        });
    }
    let n = h.levels();
    if n == 0 {
        return Err(HierarchyError::Empty);
    }
    let classes = h.finest_classes();
    let mut levels = vec![vec![UNLABELED; fine.len()]; n];
    for (p, (&id, &m)) in fine.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if id as usize >= classes {
            return Err(HierarchyError::LabelOutOfRange {
                row: p / width,
                col: p % width,
                id,
                classes,
            });
        }
        let mut c = id;
        levels[n - 1][p] = c;
        for l in (1..n).rev() {
            c = h.parent(l + 1, c);
            levels[l - 1][p] = c;
        }
    }
    Ok(MultiLevelLabels {
        height: fine.len() / width,
        width,
        levels,
        mask: mask.to_vec(),
    })
}

/// Fraction of masked pixels whose per-level predictions respect every
/// parent-child relation. `predictions[n - 1]` is the level-n argmax map.
/// An empty mask is vacuously consistent.
pub fn consistency_rate(h: &LabelHierarchy, predictions: &[Vec<ClassId>], mask: &[bool]) -> Result<f64, HierarchyError> {
    if predictions.len() != h.levels() {
        return Err(HierarchyError::LevelCount {
            expected: h.levels(),
            found: predictions.len(),
        });
    }
    for p in predictions {
        if p.len() != mask.len() {
            return Err(HierarchyError::MapLength {
                expected: mask.len(),
                found: p.len(),
            });
        }
    }
    let mut total = 0usize;
    let mut consistent = 0usize;
    for px in 0..mask.len() {
        if !mask[px] {
            continue;
        }
        total += 1;
        let ok = (2..=h.levels()).all(|l| {
            let c = predictions[l - 1][px];
            (c as usize) < h.classes_at(l) && h.parent(l, c) == predictions[l - 2][px]
        });
        if ok {
            consistent += 1;
        }
    }
    Ok(if total == 0 {
        1.0
    } else {
        consistent as f64 / total as f64
    })
}
