//! Small deterministic random-forest classifier, used only to extract
//! feature-importance matrices for the disentanglement score. Importance is
//! Gini impurity decrease, accumulated over seeded bootstrapped trees and
//! normalized to sum to one.

use ndarray::{Array1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 10,
            max_depth: 10,
            min_samples_split: 4,
            seed: 0,
        }
    }
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    n_classes: usize,
    max_depth: usize,
    min_samples_split: usize,
    features_per_split: usize,
    n_total: f64,
    importances: Array1<f64>,
}

impl<'a> TreeBuilder<'a> {
    fn grow(&mut self, indices: &mut Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) {
        let n = indices.len();
        if depth >= self.max_depth || n < self.min_samples_split {
            return;
        }
        let mut counts = vec![0usize; self.n_classes];
        for &i in indices.iter() {
            counts[self.y[i]] += 1;
        }
        let parent_gini = gini(&counts, n);
        if parent_gini <= 0.0 {
            return;
        }

        // Random feature subset, deterministic given the tree RNG.
        let d = self.x.ncols();
        let mut features: Vec<usize> = (0..d).collect();
        for i in 0..self.features_per_split.min(d) {
            let j = rng.random_range(i..d);
            features.swap(i, j);
        }
        features.truncate(self.features_per_split.min(d));
        features.sort_unstable(); // lowest index wins gain ties

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        for &f in &features {
            indices.sort_by(|&a, &b| {
                self.x[[a, f]]
                    .partial_cmp(&self.x[[b, f]])
                    .expect("finite codes")
            });
            let mut left_counts = vec![0usize; self.n_classes];
            for split in 1..n {
                left_counts[self.y[indices[split - 1]]] += 1;
                let prev = self.x[[indices[split - 1], f]];
                let here = self.x[[indices[split], f]];
                if prev == here {
                    continue;
                }
                let right_counts: Vec<usize> = counts
                    .iter()
                    .zip(&left_counts)
                    .map(|(&c, &l)| c - l)
                    .collect();
                let weighted = (split as f64 * gini(&left_counts, split)
                    + (n - split) as f64 * gini(&right_counts, n - split))
                    / n as f64;
                let gain = parent_gini - weighted;
                let better = match best {
                    None => gain > 1e-12,
                    Some((bg, _, _)) => gain > bg + 1e-15,
                };
                if better {
                    best = Some((gain, f, 0.5 * (prev + here)));
                }
            }
        }

        let Some((gain, feature, threshold)) = best else {
            return;
        };
        self.importances[feature] += gain * n as f64 / self.n_total;

        let (mut left, mut right): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.x[[i, feature]] <= threshold);
        self.grow(&mut left, depth + 1, rng);
        self.grow(&mut right, depth + 1, rng);
    }
}

/// Fits a forest predicting `y` from the columns of `x` and returns the
/// per-feature importance vector (normalized to sum to 1; all-zero when no
/// split ever improved purity).
pub fn forest_importances(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    config: &ForestConfig,
) -> Array1<f64> {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(n, y.len());
    let features_per_split = ((d as f64).sqrt().round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut total = Array1::<f64>::zeros(d);
    for _ in 0..config.n_trees {
        let mut indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut builder = TreeBuilder {
            x,
            y,
            n_classes,
            max_depth: config.max_depth,
            min_samples_split: config.min_samples_split,
            features_per_split,
            n_total: indices.len() as f64,
            importances: Array1::zeros(d),
        };
        builder.grow(&mut indices, 0, &mut rng);
        total += &builder.importances;
    }
    let sum = total.sum();
    if sum > 0.0 {
        total /= sum;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn importance_concentrates_on_the_informative_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 600;
        let x = Array2::from_shape_fn((n, 4), |(i, j)| {
            if j == 2 {
                (i % 3) as f64 + rng.random_range(-0.1..0.1)
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let imp = forest_importances(x.view(), &y, 3, &ForestConfig::default());
        assert!((imp.sum() - 1.0).abs() < 1e-9);
        assert!(imp[2] > 0.8, "{imp:?}");
    }

    #[test]
    fn importances_are_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((200, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..200).map(|i| (i / 50) % 2).collect();
        let cfg = ForestConfig { seed: 9, ..Default::default() };
        let a = forest_importances(x.view(), &y, 2, &cfg);
        let b = forest_importances(x.view(), &y, 2, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn pure_labels_yield_zero_importance() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| (i * j) as f64);
        let y = vec![1usize; 50];
        let imp = forest_importances(x.view(), &y, 2, &ForestConfig::default());
        assert!(imp.iter().all(|&v| v == 0.0));
    }
}
