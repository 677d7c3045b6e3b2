//! The six disentanglement metrics plus the linear-probe protocol, all
//! operating on (latent codes, ground-truth factors) pairs.
//!
//! Codes are posterior means. Every metric returns a value in [0, 1], all
//! randomness flows from a single report-level seed, and argmax/argmin ties
//! break toward the lowest index so reports are deterministic.

mod forest;
mod linear;
mod mi;

pub use forest::{forest_importances, ForestConfig};
pub use linear::{univariate_r2, SoftmaxClassifier};
pub use mi::{discrete_entropy, discrete_mi, equal_count_bins, mi_matrix, mig, modularity};

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{split_indices, FactorGroups};
use crate::{Error, Result};

/// Code dimensions with standard deviation below this are treated as
/// collapsed and excluded from variance-based votes.
pub const COLLAPSED_STD: f64 = 1e-6;

/// Posterior-mean codes paired with discrete ground-truth factors.
#[derive(Debug, Clone)]
pub struct FactorCodes {
    /// (N, L) real codes.
    pub codes: Array2<f64>,
    /// (N, K) factor values; column k takes values in `0..factor_sizes[k]`.
    pub factors: Array2<usize>,
    pub factor_sizes: Vec<usize>,
}

impl FactorCodes {
    pub fn new(codes: Array2<f64>, factors: Array2<usize>, factor_sizes: Vec<usize>) -> Result<Self> {
        let fc = FactorCodes {
            codes,
            factors,
            factor_sizes,
        };
        fc.validate()?;
        Ok(fc)
    }

    pub fn len(&self) -> usize {
        self.codes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_codes(&self) -> usize {
        self.codes.ncols()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.codes.nrows() != self.factors.nrows() {
            return Err(Error::Metric(format!(
                "codes have {} rows but factors have {}",
                self.codes.nrows(),
                self.factors.nrows()
            )));
        }
        if self.factors.ncols() != self.factor_sizes.len() {
            return Err(Error::Metric("factor arity mismatch".into()));
        }
        if self.codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric("codes contain non-finite values".into()));
        }
        for (k, &size) in self.factor_sizes.iter().enumerate() {
            if let Some(&bad) = self.factors.column(k).iter().find(|&&v| v >= size) {
                return Err(Error::Metric(format!(
                    "factor {k} value {bad} out of range 0..{size}"
                )));
            }
        }
        Ok(())
    }
}

/// Factor-conditional sampler over codes, backing the vote-based metrics.
pub struct CodeSampler<'a> {
    fc: &'a FactorCodes,
    groups: FactorGroups,
    rng: ChaCha8Rng,
}

impl<'a> CodeSampler<'a> {
    pub fn new(fc: &'a FactorCodes, seed: u64) -> Result<Self> {
        fc.validate()?;
        let groups = FactorGroups::new(&fc.factors, &fc.factor_sizes);
        if groups.eligible.is_empty() {
            return Err(Error::Metric(
                "no factor has two or more observed values".into(),
            ));
        }
        Ok(CodeSampler {
            fc,
            groups,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn eligible_factors(&self) -> &[usize] {
        &self.groups.eligible
    }

    /// One vote for the pair-difference metric: mean absolute code
    /// difference over `pairs` same-factor pairs, labeled by the factor.
    fn vote_diff(&mut self, pairs: usize) -> (usize, Array1<f64>) {
        let (factor, pair_indices) = self.groups.sample_pairs(pairs, &mut self.rng);
        let l = self.fc.n_codes();
        let mut acc = Array1::<f64>::zeros(l);
        for &(a, b) in &pair_indices {
            for d in 0..l {
                acc[d] += (self.fc.codes[[a, d]] - self.fc.codes[[b, d]]).abs();
            }
        }
        (factor, acc / pairs as f64)
    }

    /// One vote for the variance metric: a batch of examples sharing one
    /// (factor, value) assignment.
    fn vote_batch(&mut self, batch: usize) -> (usize, Vec<usize>) {
        self.groups.sample_fixed(batch, &mut self.rng)
    }
}

/// Pair-difference metric: a linear classifier predicts the fixed factor
/// from mean absolute code differences; returns held-out accuracy.
pub fn beta_vae_score(
    sampler: &mut CodeSampler<'_>,
    n_train: usize,
    n_eval: usize,
    batch_per_vote: usize,
) -> Result<f64> {
    if sampler.fc.n_factors() < 2 || sampler.eligible_factors().len() < 2 {
        return Err(Error::Metric(
            "pair-difference metric needs at least 2 eligible factors".into(),
        ));
    }
    let eligible = sampler.eligible_factors().to_vec();
    let class_of = |factor: usize| eligible.iter().position(|&f| f == factor).expect("eligible");

    let l = sampler.fc.n_codes();
    let mut features = Array2::<f64>::zeros((n_train, l));
    let mut labels = Vec::with_capacity(n_train);
    for i in 0..n_train {
        let (factor, diff) = sampler.vote_diff(batch_per_vote);
        features.row_mut(i).assign(&diff);
        labels.push(class_of(factor));
    }
    let clf = SoftmaxClassifier::fit(features.view(), &labels, eligible.len())?;

    let mut eval_features = Array2::<f64>::zeros((n_eval, l));
    let mut eval_labels = Vec::with_capacity(n_eval);
    for i in 0..n_eval {
        let (factor, diff) = sampler.vote_diff(batch_per_vote);
        eval_features.row_mut(i).assign(&diff);
        eval_labels.push(class_of(factor));
    }
    Ok(clf.accuracy(eval_features.view(), &eval_labels))
}

/// Variance metric: majority vote from the index of the lowest-variance
/// normalized code dimension under a fixed factor; returns held-out accuracy.
pub fn factor_vae_score(
    sampler: &mut CodeSampler<'_>,
    n_train: usize,
    n_eval: usize,
    batch_per_vote: usize,
) -> Result<f64> {
    let fc = sampler.fc;
    let l = fc.n_codes();
    let k = fc.n_factors();

    let stds = fc.codes.std_axis(Axis(0), 0.0);
    let active: Vec<usize> = (0..l).filter(|&d| stds[d] >= COLLAPSED_STD).collect();
    if active.is_empty() {
        return Err(Error::Metric(
            "all code dimensions are collapsed (std below 1e-6); nothing to vote on".into(),
        ));
    }

    let vote = |sampler: &mut CodeSampler<'_>| -> (usize, usize) {
        let (factor, indices) = sampler.vote_batch(batch_per_vote);
        let mut best_dim = active[0];
        let mut best_var = f64::INFINITY;
        for &d in &active {
            let mut mean = 0.0;
            for &i in &indices {
                mean += fc.codes[[i, d]];
            }
            mean /= indices.len() as f64;
            let mut var = 0.0;
            for &i in &indices {
                let v = fc.codes[[i, d]] - mean;
                var += v * v;
            }
            var /= indices.len() as f64 * stds[d] * stds[d];
            if var < best_var {
                best_var = var;
                best_dim = d;
            }
        }
        (best_dim, factor)
    };

    let mut counts = vec![vec![0usize; k]; l];
    for _ in 0..n_train {
        let (d, f) = vote(sampler);
        counts[d][f] += 1;
    }
    let classifier: Vec<usize> = counts
        .iter()
        .map(|row| {
            let mut best = 0usize;
            for (f, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = f;
                }
            }
            best
        })
        .collect();

    let mut hits = 0usize;
    for _ in 0..n_eval {
        let (d, f) = vote(sampler);
        if classifier[d] == f {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_eval as f64)
}

/// Importance-based disentanglement: per-factor forests yield an importance
/// matrix; each code dimension scores one minus the entropy (base K) of its
/// normalized importance row, weighted by the dimension's importance share.
pub fn dci_disentanglement(fc: &FactorCodes, config: &ForestConfig) -> Result<f64> {
    fc.validate()?;
    let l = fc.n_codes();
    let k = fc.n_factors();
    let mut importance = Array2::<f64>::zeros((l, k));
    for f in 0..k {
        let labels: Vec<usize> = fc.factors.column(f).to_vec();
        let cfg = ForestConfig {
            seed: config.seed.wrapping_add(f as u64),
            ..*config
        };
        let imp = forest_importances(fc.codes.view(), &labels, fc.factor_sizes[f], &cfg);
        importance.column_mut(f).assign(&imp);
    }

    let total: f64 = importance.sum();
    if total <= 0.0 {
        return Err(Error::Metric(
            "importance matrix is all zero; codes carry no factor signal".into(),
        ));
    }
    let mut score = 0.0;
    for j in 0..l {
        let row_sum: f64 = importance.row(j).sum();
        if row_sum <= 0.0 {
            continue; // degenerate dimension: weight 0
        }
        let disent = if k == 1 {
            1.0 // entropy over a single outcome is zero
        } else {
            let mut entropy = 0.0;
            for f in 0..k {
                let p = importance[[j, f]] / row_sum;
                if p > 0.0 {
                    entropy -= p * p.ln();
                }
            }
            1.0 - entropy / (k as f64).ln()
        };
        score += (row_sum / total) * disent;
    }
    Ok(score.clamp(0.0, 1.0))
}

/// Attribute-predictability gap: per (dimension, factor), the held-out
/// R-squared of a univariate linear fit; per factor, the gap between the two
/// best dimensions; averaged over factors.
pub fn sap(fc: &FactorCodes, train_fraction: f64, seed: u64) -> Result<f64> {
    fc.validate()?;
    if train_fraction <= 0.0 || train_fraction >= 1.0 {
        return Err(Error::Metric(format!(
            "sap train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = fc.len();
    let (train, test) = split_indices(n, 1.0 - train_fraction, seed);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Metric("sap split left an empty side".into()));
    }
    let l = fc.n_codes();
    let k = fc.n_factors();

    let mut score_matrix = Array2::<f64>::zeros((l, k));
    for j in 0..l {
        let train_x: Vec<f64> = train.iter().map(|&i| fc.codes[[i, j]]).collect();
        let test_x: Vec<f64> = test.iter().map(|&i| fc.codes[[i, j]]).collect();
        for f in 0..k {
            let train_y: Vec<f64> = train.iter().map(|&i| fc.factors[[i, f]] as f64).collect();
            let test_y: Vec<f64> = test.iter().map(|&i| fc.factors[[i, f]] as f64).collect();
            score_matrix[[j, f]] = univariate_r2(&train_x, &train_y, &test_x, &test_y);
        }
    }

    let mut total = 0.0;
    for f in 0..k {
        let mut top = 0.0;
        let mut second = 0.0;
        for j in 0..l {
            let v = score_matrix[[j, f]];
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        // With a single dimension the second-best is defined as 0.
        total += top - second;
    }
    Ok((total / k as f64).clamp(0.0, 1.0))
}

/// Result of the linear-probe protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub accuracy: f64,
    /// Labels observed in the test split but absent from training; such
    /// examples can never be predicted and are counted as errors.
    pub missing_classes: Vec<usize>,
}

/// Fits a multinomial linear classifier on training codes and reports test
/// accuracy.
pub fn linear_probe(
    train_codes: ArrayView2<'_, f64>,
    train_labels: &[usize],
    test_codes: ArrayView2<'_, f64>,
    test_labels: &[usize],
    n_classes: usize,
) -> Result<ProbeOutcome> {
    if test_codes.nrows() != test_labels.len() {
        return Err(Error::Metric("test codes/labels misaligned".into()));
    }
    let clf = SoftmaxClassifier::fit(train_codes, train_labels, n_classes)?;
    let accuracy = clf.accuracy(test_codes, test_labels);
    let mut seen_train = vec![false; n_classes];
    for &l in train_labels {
        seen_train[l] = true;
    }
    let mut missing: Vec<usize> = test_labels
        .iter()
        .copied()
        .filter(|&l| l < n_classes && !seen_train[l])
        .collect();
    missing.sort_unstable();
    missing.dedup();
    Ok(ProbeOutcome {
        accuracy,
        missing_classes: missing,
    })
}

/// Every hyperparameter the metric battery uses, recorded in reports for
/// reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub seed: u64,
    pub n_bins: usize,
    pub beta_votes_train: usize,
    pub beta_votes_eval: usize,
    pub pairs_per_vote: usize,
    pub factor_votes_train: usize,
    pub factor_votes_eval: usize,
    pub batch_per_factor_vote: usize,
    pub sap_train_fraction: f64,
    pub forest_trees: usize,
    pub forest_max_depth: usize,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            seed: 0,
            n_bins: 20,
            beta_votes_train: 10_000,
            beta_votes_eval: 5_000,
            pairs_per_vote: 64,
            factor_votes_train: 10_000,
            factor_votes_eval: 5_000,
            batch_per_factor_vote: 64,
            sap_train_fraction: 0.7,
            forest_trees: 10,
            forest_max_depth: 10,
        }
    }
}

impl MetricParams {
    pub fn with_seed(seed: u64) -> Self {
        MetricParams {
            seed,
            ..Default::default()
        }
    }

    fn forest_config(&self) -> ForestConfig {
        ForestConfig {
            n_trees: self.forest_trees,
            max_depth: self.forest_max_depth,
            min_samples_split: 4,
            seed: self.seed ^ 0xDC1,
        }
    }
}

/// Named map of the six disentanglement scores plus optional probe accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub beta_vae_score: f64,
    pub factor_vae_score: f64,
    pub mig: f64,
    pub dci_disentanglement: f64,
    pub modularity: f64,
    pub sap: f64,
    pub probe_accuracy: Option<f64>,
    pub params: MetricParams,
}

impl MetricReport {
    pub fn scores(&self) -> [(&'static str, f64); 6] {
        [
            ("beta_vae_score", self.beta_vae_score),
            ("factor_vae_score", self.factor_vae_score),
            ("mig", self.mig),
            ("dci_disentanglement", self.dci_disentanglement),
            ("modularity", self.modularity),
            ("sap", self.sap),
        ]
    }

    /// Flat key/value rows: the six scores, optional probe accuracy, then
    /// every hyperparameter used.
    pub fn to_flat_table(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = self
            .scores()
            .iter()
            .map(|(k, v)| (k.to_string(), format!("{v}")))
            .collect();
        if let Some(p) = self.probe_accuracy {
            rows.push(("probe_accuracy".into(), format!("{p}")));
        }
        let p = &self.params;
        rows.push(("param_seed".into(), format!("{}", p.seed)));
        rows.push(("param_n_bins".into(), format!("{}", p.n_bins)));
        rows.push(("param_beta_votes_train".into(), format!("{}", p.beta_votes_train)));
        rows.push(("param_beta_votes_eval".into(), format!("{}", p.beta_votes_eval)));
        rows.push(("param_pairs_per_vote".into(), format!("{}", p.pairs_per_vote)));
        rows.push(("param_factor_votes_train".into(), format!("{}", p.factor_votes_train)));
        rows.push(("param_factor_votes_eval".into(), format!("{}", p.factor_votes_eval)));
        rows.push((
            "param_batch_per_factor_vote".into(),
            format!("{}", p.batch_per_factor_vote),
        ));
        rows.push(("param_sap_train_fraction".into(), format!("{}", p.sap_train_fraction)));
        rows.push(("param_forest_trees".into(), format!("{}", p.forest_trees)));
        rows.push(("param_forest_max_depth".into(), format!("{}", p.forest_max_depth)));
        rows
    }

    pub fn write_flat(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in self.to_flat_table() {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Runs all six metrics under one report-level seed.
pub fn compute_metric_report(fc: &FactorCodes, params: &MetricParams) -> Result<MetricReport> {
    fc.validate()?;
    let mut beta_sampler = CodeSampler::new(fc, params.seed ^ 0xB7A)?;
    let beta = beta_vae_score(
        &mut beta_sampler,
        params.beta_votes_train,
        params.beta_votes_eval,
        params.pairs_per_vote,
    )?;
    let mut factor_sampler = CodeSampler::new(fc, params.seed ^ 0xFAC)?;
    let factor = factor_vae_score(
        &mut factor_sampler,
        params.factor_votes_train,
        params.factor_votes_eval,
        params.batch_per_factor_vote,
    )?;
    let mig_score = mig(fc, params.n_bins)?;
    let modularity_score = modularity(fc, params.n_bins)?;
    let dci = dci_disentanglement(fc, &params.forest_config())?;
    let sap_score = sap(fc, params.sap_train_fraction, params.seed ^ 0x5A9)?;
    Ok(MetricReport {
        beta_vae_score: beta,
        factor_vae_score: factor,
        mig: mig_score,
        dci_disentanglement: dci,
        modularity: modularity_score,
        sap: sap_score,
        probe_accuracy: None,
        params: params.clone(),
    })
}
