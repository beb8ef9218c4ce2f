//! Class frequency statistics, loss re-weighting and patch oversampling.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use super::TrainError;
use crate::data::{count_classes, SequenceSample};
use crate::hierarchy::{LabelHierarchy, UNLABELED};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BalanceMode {
    #[default]
    None,
    InvFreq,
    InvFreqMedianLr,
    EffectiveNumber,
}

impl BalanceMode {
    pub const ALL: [BalanceMode; 4] = [
        BalanceMode::None,
        BalanceMode::InvFreq,
        BalanceMode::InvFreqMedianLr,
        BalanceMode::EffectiveNumber,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BalanceMode::None => "none",
            BalanceMode::InvFreq => "inv_freq",
            BalanceMode::InvFreqMedianLr => "inv_freq_median_lr",
            BalanceMode::EffectiveNumber => "effective_number",
        }
    }
}

impl fmt::Display for BalanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BalanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BalanceMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown balance mode `{s}` (expected none, inv_freq, inv_freq_median_lr or effective_number)"))
    }
}

/// Labeled pixel counts of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats {
    pub fine: Vec<u64>,
    /// `levels[n - 1]` holds level-n counts.
    pub levels: Vec<Vec<u64>>,
}

impl ClassStats {
    pub fn from_counts(hierarchy: &LabelHierarchy, fine: Vec<u64>) -> Self {
        let levels = hierarchy.aggregate_counts(&fine);
        ClassStats { fine, levels }
    }

    pub fn from_samples<'a>(hierarchy: &LabelHierarchy, samples: impl IntoIterator<Item = &'a SequenceSample>) -> Self {
        Self::from_counts(hierarchy, count_classes(samples, hierarchy.finest_classes()))
    }

    pub fn total(&self) -> u64 {
        self.fine.iter().sum()
    }
}

/// `(1 - beta) / (1 - beta^n)`, the inverse effective number of `n` samples.
pub fn effective_number_weight(n: u64, beta: f64) -> f64 {
    (1.0 - beta) / (1.0 - beta.powf(n as f64))
}

fn normalise_to_present(raw: Vec<f64>) -> Vec<f64> {
    let present = raw.iter().filter(|&&w| w > 0.0).count() as f64;
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w * present / sum).collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Loss weights for one level. Classes without pixels get weight 0.
pub fn class_weights(mode: BalanceMode, counts: &[u64], beta: f64) -> Result<Vec<f64>, TrainError> {
    if counts.iter().all(|&n| n == 0) {
        return Err(TrainError::NoLabels);
    }
    let present = |f: &dyn Fn(u64) -> f64| counts.iter().map(|&n| if n == 0 { 0.0 } else { f(n) }).collect::<Vec<f64>>();
    Ok(match mode {
        BalanceMode::None => vec![1.0; counts.len()],
        BalanceMode::InvFreq => normalise_to_present(present(&|n| 1.0 / n as f64)),
        BalanceMode::InvFreqMedianLr => {
            let w = normalise_to_present(present(&|n| 1.0 / n as f64));
            let mut nz: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
            let m = median(&mut nz);
            w.into_iter().map(|v| v / m).collect()
        }
        BalanceMode::EffectiveNumber => {
            if !(0.0..1.0).contains(&beta) {
                return Err(TrainError::Invalid(format!("beta {beta} outside [0, 1)")));
            }
            normalise_to_present(present(&|n| effective_number_weight(n, beta)))
        }
    })
}

/// Weights for every level, derived from hierarchy-aggregated counts.
pub fn level_class_weights(mode: BalanceMode, stats: &ClassStats, beta: f64) -> Result<Vec<Vec<f64>>, TrainError> {
    stats.levels.iter().map(|c| class_weights(mode, c, beta)).collect()
}

/// Oversampling weight of each patch: mean over its labeled pixels of `1 / n_c`.
pub fn patch_weights<'a>(samples: impl IntoIterator<Item = &'a SequenceSample>, fine_counts: &[u64]) -> Vec<f64> {
    samples
        .into_iter()
        .map(|s| {
            let (sum, n) = s
                .fine_labels
                .iter()
                .filter(|&&c| c != UNLABELED && fine_counts[c as usize] > 0)
                .fold((0.0, 0usize), |(acc, n), &c| (acc + 1.0 / fine_counts[c as usize] as f64, n + 1));
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect()
}

/// Draws training patch indices.
///
/// Uniform mode walks a fresh random permutation each pass; oversampling
/// draws with replacement from the patch weights.
#[derive(Clone, Debug)]
pub struct Sampler {
    indices: Vec<usize>,
    weighted: Option<WeightedIndex<f64>>,
    order: Vec<usize>,
    cursor: usize,
}

impl Sampler {
    pub fn uniform(indices: Vec<usize>) -> Result<Self, TrainError> {
        if indices.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        Ok(Sampler {
            order: Vec::new(),
            cursor: 0,
            weighted: None,
            indices,
        })
    }

    pub fn oversampling(indices: Vec<usize>, weights: &[f64]) -> Result<Self, TrainError> {
        if indices.is_empty() {
            return Err(TrainError::EmptySplit);
        }
        let weighted = WeightedIndex::new(weights).map_err(|e| TrainError::Invalid(format!("patch weights: {e}")))?;
        Ok(Sampler {
            order: Vec::new(),
            cursor: 0,
            weighted: Some(weighted),
            indices,
        })
    }

    /// Builds the sampler for a split, precomputing patch weights once.
    pub fn for_split(samples: &[SequenceSample], indices: &[usize], fine_counts: &[u64], oversample: bool) -> Result<Self, TrainError> {
        if oversample {
            let w = patch_weights(indices.iter().map(|&i| &samples[i]), fine_counts);
            Self::oversampling(indices.to_vec(), &w)
        } else {
            Self::uniform(indices.to_vec())
        }
    }

    pub fn next(&mut self, rng: &mut Rng) -> usize {
        if let Some(w) = &self.weighted {
            return self.indices[w.sample(rng)];
        }
        if self.cursor == self.order.len() {
            self.order = self.indices.clone();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub fn sample_batch(&mut self, batch: usize, rng: &mut Rng) -> Vec<usize> {
        (0..batch).map(|_| self.next(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_number_of_one_is_one() {
        for beta in [0.5, 0.99, 0.9999] {
            assert!((effective_number_weight(1, beta) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_count_gets_zero_weight() {
        for mode in [BalanceMode::InvFreq, BalanceMode::InvFreqMedianLr, BalanceMode::EffectiveNumber] {
            let w = class_weights(mode, &[5, 0, 50], 0.99).unwrap();
            assert_eq!(w[1], 0.0);
            assert!(w[0] > w[2]);
        }
        assert!(matches!(class_weights(BalanceMode::InvFreq, &[0, 0], 0.9), Err(TrainError::NoLabels)));
    }

    #[test]
    fn median_variant_has_unit_median() {
        let w = class_weights(BalanceMode::InvFreqMedianLr, &[1, 2, 4, 8, 16], 0.0).unwrap();
        assert!((w[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parses_modes() {
        for m in BalanceMode::ALL {
            assert_eq!(m.name().parse::<BalanceMode>().unwrap(), m);
        }
        assert!("inverse".parse::<BalanceMode>().is_err());
    }
}
