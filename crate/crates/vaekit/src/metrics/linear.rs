//! Deterministic linear models used by the metric battery: multinomial
//! logistic regression (low-capacity classifier for vote-based metrics and
//! the linear probe) and univariate least squares for held-out R-squared.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::nn::Adam;
use crate::{Error, Result};

/// Multinomial logistic regression fit by full-batch adaptive gradient
/// descent from a zero initialization, so training is deterministic with no
/// RNG at all.
#[derive(Debug, Clone)]
pub struct SoftmaxClassifier {
    w: Array2<f64>,
    b: Array1<f64>,
    feature_mean: Array1<f64>,
    feature_std: Array1<f64>,
}

pub const SOFTMAX_ITERS: usize = 300;
pub const SOFTMAX_LR: f64 = 0.1;

impl SoftmaxClassifier {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || labels.len() != n {
            return Err(Error::Metric(format!(
                "classifier needs aligned nonempty inputs ({} rows, {} labels)",
                n,
                labels.len()
            )));
        }
        if n_classes < 2 {
            return Err(Error::Metric("classifier needs at least 2 classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Metric(format!("label {bad} out of range 0..{n_classes}")));
        }

        let d = x.ncols();
        let feature_mean = x.mean_axis(Axis(0)).expect("nonempty");
        let mut feature_std = x.std_axis(Axis(0), 0.0);
        feature_std.mapv_inplace(|s| if s < 1e-12 { 1.0 } else { s });
        let xs = standardize(x, &feature_mean, &feature_std);

        let mut onehot = Array2::<f64>::zeros((n, n_classes));
        for (i, &l) in labels.iter().enumerate() {
            onehot[[i, l]] = 1.0;
        }

        let mut w = Array2::<f64>::zeros((d, n_classes));
        let mut b = Array1::<f64>::zeros(n_classes);
        let mut opt = Adam::new(SOFTMAX_LR);
        let inv_n = 1.0 / n as f64;
        for _ in 0..SOFTMAX_ITERS {
            let probs = softmax_rows(&(xs.dot(&w) + &b));
            let diff = &probs - &onehot;
            let g_w = xs.t().dot(&diff) * inv_n;
            let g_b = diff.sum_axis(Axis(0)) * inv_n;
            let g_w_s = g_w.as_slice().expect("layout");
            let g_b_s = g_b.as_slice().expect("layout");
            let mut params = [
                w.as_slice_mut().expect("layout"),
                b.as_slice_mut().expect("layout"),
            ];
            opt.step(&mut params.iter_mut().map(|p| &mut **p).collect::<Vec<_>>(), &[g_w_s, g_b_s]);
        }

        Ok(SoftmaxClassifier {
            w,
            b,
            feature_mean,
            feature_std,
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        let xs = standardize(x, &self.feature_mean, &self.feature_std);
        let logits = xs.dot(&self.w) + &self.b;
        logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn accuracy(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let preds = self.predict(x);
        let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
        hits as f64 / labels.len().max(1) as f64
    }
}

fn standardize(x: ArrayView2<'_, f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        row -= mean;
        row /= std;
    }
    out
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Least-squares fit of `y ~ a*x + b` on the train split, scored by
/// R-squared on the test split (clamped to [0, 1]).
pub fn univariate_r2(
    train_x: &[f64],
    train_y: &[f64],
    test_x: &[f64],
    test_y: &[f64],
) -> f64 {
    let n = train_x.len() as f64;
    let mean_x = train_x.iter().sum::<f64>() / n;
    let mean_y = train_y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&x, &y) in train_x.iter().zip(train_y) {
        cov += (x - mean_x) * (y - mean_y);
        var += (x - mean_x) * (x - mean_x);
    }
    let slope = if var > 1e-12 { cov / var } else { 0.0 };
    let intercept = mean_y - slope * mean_x;

    let m = test_y.len() as f64;
    let test_mean = test_y.iter().sum::<f64>() / m;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (&x, &y) in test_x.iter().zip(test_y) {
        let pred = slope * x + intercept;
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - test_mean) * (y - test_mean);
    }
    if ss_tot <= 1e-12 {
        return 0.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_two_class_problem_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 400;
        let x = Array::from_shape_fn((n, 2), |(i, j)| {
            let centre = if i < n / 2 { -2.0 } else { 2.0 };
            centre + rng.random_range(-0.5..0.5) + j as f64 * 0.0
        });
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let clf = SoftmaxClassifier::fit(x.view(), &labels, 2).unwrap();
        assert!(clf.accuracy(x.view(), &labels) >= 0.99);
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array::from_shape_fn((120, 3), |_| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..120).map(|i| i % 3).collect();
        let a = SoftmaxClassifier::fit(x.view(), &labels, 3).unwrap();
        let b = SoftmaxClassifier::fit(x.view(), &labels, 3).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let x = Array2::<f64>::zeros((4, 2));
        assert!(SoftmaxClassifier::fit(x.view(), &[0, 0, 0, 0], 1).is_err());
        assert!(SoftmaxClassifier::fit(x.view(), &[0, 0, 3, 0], 2).is_err());
    }

    #[test]
    fn univariate_r2_is_one_for_exact_linear_relation() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let r2 = univariate_r2(&x[..35], &y[..35], &x[35..], &y[35..]);
        assert!((r2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn univariate_r2_near_zero_for_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r2 = univariate_r2(&x[..1400], &y[..1400], &x[1400..], &y[1400..]);
        assert!(r2 < 0.05, "{r2}");
    }
}
