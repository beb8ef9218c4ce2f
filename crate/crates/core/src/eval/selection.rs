//! Confidence-fallback labelling across levels, coverage curves and
//! occlusion-binned accuracy.

use crate::hierarchy::ClassId;
use crate::tensor::Tensor;

/// Per-pixel argmax and max probability of every level, coarsest first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LevelScores {
    pub argmax: Vec<Vec<ClassId>>,
    pub confidence: Vec<Vec<f64>>,
}

impl LevelScores {
    /// Scores of `[C, H, W]` volumes, all pixels.
    pub fn from_volumes(volumes: &[Tensor]) -> Self {
        LevelScores {
            argmax: volumes.iter().map(Tensor::argmax_channels).collect(),
            confidence: volumes.iter().map(Tensor::max_channels).collect(),
        }
    }

    pub fn levels(&self) -> usize {
        self.argmax.len()
    }

    pub fn pixels(&self) -> usize {
        self.argmax.first().map_or(0, Vec::len)
    }

    /// Appends the pixels of `other` where `keep` holds.
    pub fn extend_masked(&mut self, other: &LevelScores, keep: &[bool]) {
        if self.argmax.is_empty() {
            self.argmax = vec![Vec::new(); other.levels()];
            self.confidence = vec![Vec::new(); other.levels()];
        }
        for l in 0..other.levels() {
            for (px, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
                self.argmax[l].push(other.argmax[l][px]);
                self.confidence[l].push(other.confidence[l][px]);
            }
        }
    }
}

/// A pixel label at 1-based `level`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub level: usize,
    pub class: ClassId,
}

/// Goes from the finest level towards the coarsest, stopping at the first
/// level whose confidence reaches `p`. Only the `k` finest levels are tried.
pub fn select_levels(scores: &LevelScores, p: f64, k: usize) -> Vec<Option<Assignment>> {
    let n = scores.levels();
    let k = k.min(n);
    (0..scores.pixels())
        .map(|px| {
            (n - k..n).rev().find(|&l| scores.confidence[l][px] >= p).map(|l| Assignment {
                level: l + 1,
                class: scores.argmax[l][px],
            })
        })
        .collect()
}

/// [`select_levels`] over probability volumes, using all levels.
pub fn multi_level_select(volumes: &[Tensor], p: f64) -> Vec<Option<Assignment>> {
    select_levels(&LevelScores::from_volumes(volumes), p, volumes.len())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coverage {
    pub pixels: usize,
    pub classified: usize,
    pub correct: usize,
}

impl Coverage {
    pub fn rate(&self) -> f64 {
        if self.pixels == 0 {
            0.0
        } else {
            self.classified as f64 / self.pixels as f64
        }
    }

    pub fn covered_accuracy(&self) -> f64 {
        if self.classified == 0 {
            0.0
        } else {
            self.correct as f64 / self.classified as f64
        }
    }
}

/// Judges each assignment against the truth at its own level.
/// `truth[n - 1]` holds level-n labels of the same pixels.
pub fn coverage(selection: &[Option<Assignment>], truth: &[Vec<ClassId>]) -> Coverage {
    let mut c = Coverage {
        pixels: selection.len(),
        classified: 0,
        correct: 0,
    };
    for (px, a) in selection.iter().enumerate() {
        if let Some(a) = a {
            c.classified += 1;
            c.correct += (truth[a.level - 1][px] == a.class) as usize;
        }
    }
    c
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    /// Number of finest levels the fallback may use.
    pub levels: usize,
    pub p: f64,
    pub coverage: f64,
    pub covered_accuracy: f64,
}

/// Coverage and covered accuracy for every `p` and every level count `1..=N`.
pub fn coverage_curve(scores: &LevelScores, truth: &[Vec<ClassId>], p_grid: &[f64]) -> Vec<CurveRow> {
    let mut rows = Vec::with_capacity(p_grid.len() * scores.levels());
    for k in 1..=scores.levels() {
        for &p in p_grid {
            let c = coverage(&select_levels(scores, p, k), truth);
            rows.push(CurveRow {
                levels: k,
                p,
                coverage: c.rate(),
                covered_accuracy: c.covered_accuracy(),
            });
        }
    }
    rows
}

/// `n + 1` evenly spaced confidences from 0 to 1.
pub fn p_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcclusionRow {
    pub max_occluded: f64,
    pub pixels: usize,
    pub accuracy: f64,
}

/// Cumulative accuracy over pixels whose occluded fraction is at most each threshold.
pub fn occlusion_table(fractions: &[f64], correct: &[bool], thresholds: &[f64]) -> Vec<OcclusionRow> {
    thresholds
        .iter()
        .map(|&th| {
            let (n, ok) = fractions
                .iter()
                .zip(correct)
                .filter(|(&f, _)| f <= th)
                .fold((0usize, 0usize), |(n, ok), (_, &c)| (n + 1, ok + c as usize));
            OcclusionRow {
                max_occluded: th,
                pixels: n,
                accuracy: if n == 0 { 0.0 } else { ok as f64 / n as f64 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(conf: [f64; 3]) -> LevelScores {
        LevelScores {
            argmax: vec![vec![1], vec![2], vec![3]],
            confidence: conf.iter().map(|&c| vec![c]).collect(),
        }
    }

    #[test]
    fn falls_back_to_first_confident_level() {
        let s = one_pixel([0.99, 0.95, 0.7]);
        assert_eq!(select_levels(&s, 0.9, 3), vec![Some(Assignment { level: 2, class: 2 })]);
        assert_eq!(select_levels(&s, 0.0, 3), vec![Some(Assignment { level: 3, class: 3 })]);
        assert_eq!(select_levels(&s, 0.96, 2), vec![None]);
        assert_eq!(select_levels(&s, 0.995, 3), vec![None]);
    }

    #[test]
    fn occlusion_rows() {
        let rows = occlusion_table(&[0.0, 0.1, 0.5], &[true, false, true], &[0.0, 0.2, 1.0]);
        assert_eq!(rows.iter().map(|r| r.pixels).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(rows[1].accuracy, 0.5);
    }
}
