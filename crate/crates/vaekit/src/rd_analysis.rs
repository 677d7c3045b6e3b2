//! Dataset-level rate/distortion estimation and empirical verification of
//! the rate/distortion ordering across hyperparameter sweeps.
//!
//! Rate is the dataset mean of the closed-form KL to the prior; distortion
//! is the dataset mean negative reconstruction log-likelihood averaged over
//! a configurable number of posterior draws. Sweep cells are independent
//! trainings and may run on a bounded worker pool; results are aggregated in
//! input order so parallelism never changes the output.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{gather_images, split_indices};
use crate::distributions::{kl_to_standard_normal, reconstruction_log_likelihood, LikelihoodSpec};
use crate::models::{sample_noise, ArchitectureConfig, Vae};
use crate::objectives::{ObjectiveConfig, ObjectiveKind, ScheduleSpec};
use crate::trainer::{images_as_rows, train, TrainConfig};
use crate::{Error, Result};

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperKind {
    Beta,
    C,
}

impl std::fmt::Display for HyperKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HyperKind::Beta => write!(f, "beta"),
            HyperKind::C => write!(f, "c"),
        }
    }
}

impl std::str::FromStr for HyperKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(HyperKind::Beta),
            "c" => Ok(HyperKind::C),
            other => Err(Error::Config(format!(
                "unknown hyperparameter kind {other:?} (expected beta or c)"
            ))),
        }
    }
}

/// One measured operating point of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub hyper_kind: HyperKind,
    pub hyper_value: f64,
    /// Mean KL to the prior, nats.
    pub rate: f64,
    /// Mean negative reconstruction log-likelihood, nats.
    pub distortion: f64,
    /// `-(rate + distortion)`.
    pub elbo: f64,
    pub seed: u64,
}

/// Rate/distortion estimate with Monte-Carlo diagnostics.
#[derive(Debug, Clone)]
pub struct RdEstimate {
    pub rate: f64,
    pub distortion: f64,
    pub elbo: f64,
    /// Standard deviation of per-draw dataset-mean distortions (0 when a
    /// single draw was used).
    pub per_draw_std: f64,
    pub eval_samples: usize,
}

impl RdEstimate {
    /// Standard error of the distortion estimate.
    pub fn distortion_se(&self) -> f64 {
        if self.eval_samples > 1 {
            self.per_draw_std / (self.eval_samples as f64).sqrt()
        } else {
            0.0
        }
    }
}

/// Measures rate and distortion of a trained model over a dataset.
///
/// The rate uses the closed-form KL (no sampling); the distortion averages
/// the negative reconstruction log-likelihood over `eval_samples`
/// reparametrized draws per example.
pub fn measure_rd(
    vae: &Vae<f32>,
    images: &Array4<f32>,
    eval_samples: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RdEstimate> {
    let n = images.dim().0;
    if n == 0 {
        return Err(Error::Dataset(
            "rate/distortion evaluation needs a nonempty dataset".into(),
        ));
    }
    if eval_samples == 0 {
        return Err(Error::Config("eval_samples must be >= 1".into()));
    }
    let likelihood = *vae.likelihood();
    let latent_dim = vae.arch().latent_dim;

    let mut rate_sum = 0.0;
    let mut draw_means = vec![0.0f64; eval_samples];

    const CHUNK: usize = 128;
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let chunk_idx: Vec<usize> = (start..end).collect();
        let chunk = gather_images(images, &chunk_idx);
        let x_rows = images_as_rows(&chunk);

        let posterior = vae.encode(&chunk)?;
        for i in 0..chunk_idx.len() {
            rate_sum += kl_to_standard_normal(&posterior.posterior(i)?).total;
        }

        let std = posterior.log_var.mapv(|v| (0.5 * v).exp());
        for draw_mean in draw_means.iter_mut() {
            let noise = sample_noise::<f32>(chunk_idx.len(), latent_dim, rng);
            let z = &posterior.mean + &(&std * &noise);
            let recon = vae.decode(&z)?;
            let recon_rows = images_as_rows(&recon);
            for i in 0..chunk_idx.len() {
                let ll =
                    reconstruction_log_likelihood(x_rows.row(i), recon_rows.row(i), &likelihood)?;
                *draw_mean -= ll;
            }
        }
        start = end;
    }

    let rate = rate_sum / n as f64;
    for m in draw_means.iter_mut() {
        *m /= n as f64;
    }
    let distortion = draw_means.iter().sum::<f64>() / eval_samples as f64;
    let per_draw_std = if eval_samples > 1 {
        let var = draw_means
            .iter()
            .map(|m| (m - distortion) * (m - distortion))
            .sum::<f64>()
            / (eval_samples - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };

    Ok(RdEstimate {
        rate,
        distortion,
        elbo: -(rate + distortion),
        per_draw_std,
        eval_samples,
    })
}

/// Objective used for one sweep cell.
fn cell_objective(kind: HyperKind, value: f64, template: &ObjectiveConfig) -> ObjectiveConfig {
    match kind {
        HyperKind::Beta => ObjectiveConfig {
            kind: ObjectiveKind::Beta,
            beta: value,
            ..template.clone()
        },
        HyperKind::C => ObjectiveConfig {
            kind: ObjectiveKind::Bottleneck,
            c_schedule: Some(ScheduleSpec::constant(value)),
            ..template.clone()
        },
    }
}

/// A sweep cell that aborted (for example on a non-finite loss).
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub hyper_value: f64,
    pub seed: u64,
    pub message: String,
}

/// All measured points plus any failed cells.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<RDPoint>,
    pub failures: Vec<SweepFailure>,
}

/// Sweep settings shared by every cell.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub kind: HyperKind,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub arch: ArchitectureConfig,
    /// Template supplying gamma and the likelihood; kind-specific fields are
    /// overwritten per cell.
    pub objective: ObjectiveConfig,
    pub train: TrainConfig,
    pub eval_samples: usize,
    /// Worker pool bound; 1 means fully serial.
    pub workers: usize,
}

/// Trains one model per (value, seed) pair and measures rate/distortion on a
/// held-out split. A cell that aborts is reported as a failure; remaining
/// cells still run.
pub fn sweep(spec: &SweepSpec, images: &Array4<f32>) -> Result<SweepOutcome> {
    if spec.values.len() < 2 {
        return Err(Error::Config(format!(
            "a sweep needs at least 2 hyperparameter values, got {}",
            spec.values.len()
        )));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one seed".into()));
    }
    spec.train.validate()?;

    let cells: Vec<(usize, f64, u64)> = spec
        .values
        .iter()
        .enumerate()
        .flat_map(|(vi, &v)| spec.seeds.iter().map(move |&s| (vi, v, s)))
        .collect();

    let run_cell =
        |&(vi, value, seed): &(usize, f64, u64)| -> std::result::Result<RDPoint, SweepFailure> {
            let mut arch = spec.arch.clone();
            arch.seed = seed;
            let mut train_cfg = spec.train.clone();
            train_cfg.seed = seed;
            let objective = cell_objective(spec.kind, value, &spec.objective);

            let n = images.dim().0;
            let (train_idx, holdout_idx) = split_indices(n, train_cfg.holdout_fraction, seed);
            let (train_images, eval_images) = if holdout_idx.is_empty() {
                (images.clone(), images.clone())
            } else {
                (
                    gather_images(images, &train_idx),
                    gather_images(images, &holdout_idx),
                )
            };

            let fail = |message: String| SweepFailure {
                hyper_value: value,
                seed,
                message,
            };
            let out = train(&arch, &objective, &train_cfg, &train_images, None)
                .map_err(|e| fail(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 ^ seed ^ ((vi as u64) << 32));
            let est = measure_rd(&out.vae, &eval_images, spec.eval_samples, &mut rng)
                .map_err(|e| fail(e.to_string()))?;
            Ok(RDPoint {
                hyper_kind: spec.kind,
                hyper_value: value,
                rate: est.rate,
                distortion: est.distortion,
                elbo: est.elbo,
                seed,
            })
        };

    let results: Vec<std::result::Result<RDPoint, SweepFailure>> = if spec.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            cells.par_iter().map(run_cell).collect()
        })
    } else {
        cells.iter().map(run_cell).collect()
    };

    let mut points = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(f) => failures.push(f),
        }
    }
    Ok(SweepOutcome { points, failures })
}

/// One strict-ordering violation between two adjacent hyperparameter values.
#[derive(Debug, Clone, Serialize)]
pub struct OrderingViolation {
    pub quantity: String,
    pub lower_value: f64,
    pub higher_value: f64,
    /// How far the pair is from the expected strict ordering (>= 0).
    pub magnitude: f64,
}

/// Verdict of the rate/distortion ordering check.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    pub hyper_kind: HyperKind,
    pub holds: bool,
    pub violations: Vec<OrderingViolation>,
    /// (value, rate, distortion) sorted by value, after any aggregation.
    pub curve: Vec<(f64, f64, f64)>,
    /// True when multiple seeds were reduced to per-value medians.
    pub aggregated_over_seeds: bool,
}

fn ordering_report(
    hyper_kind: HyperKind,
    mut curve: Vec<(f64, f64, f64)>,
    aggregated: bool,
) -> Result<Lemma1Report> {
    curve.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
    if curve.len() < 2 {
        return Err(Error::Config(
            "ordering check needs at least 2 distinct hyperparameter values".into(),
        ));
    }
    // Expected monotonicity as the hyperparameter increases.
    let (rate_increases, distortion_increases) = match hyper_kind {
        HyperKind::Beta => (false, true),
        HyperKind::C => (true, false),
    };
    let mut violations = Vec::new();
    for w in curve.windows(2) {
        let (v_lo, r_lo, d_lo) = w[0];
        let (v_hi, r_hi, d_hi) = w[1];
        let rate_ok = if rate_increases { r_hi > r_lo } else { r_hi < r_lo };
        if !rate_ok {
            violations.push(OrderingViolation {
                quantity: "rate".into(),
                lower_value: v_lo,
                higher_value: v_hi,
                magnitude: if rate_increases { r_lo - r_hi } else { r_hi - r_lo },
            });
        }
        let dist_ok = if distortion_increases { d_hi > d_lo } else { d_hi < d_lo };
        if !dist_ok {
            violations.push(OrderingViolation {
                quantity: "distortion".into(),
                lower_value: v_lo,
                higher_value: v_hi,
                magnitude: if distortion_increases { d_lo - d_hi } else { d_hi - d_lo },
            });
        }
    }
    Ok(Lemma1Report {
        hyper_kind,
        holds: violations.is_empty(),
        violations,
        curve,
        aggregated_over_seeds: aggregated,
    })
}

fn common_kind(points: &[RDPoint]) -> Result<HyperKind> {
    let first = points
        .first()
        .ok_or_else(|| Error::Config("ordering check needs points".into()))?;
    if points.iter().any(|p| p.hyper_kind != first.hyper_kind) {
        return Err(Error::Config(
            "ordering check got mixed hyperparameter kinds".into(),
        ));
    }
    Ok(first.hyper_kind)
}

/// Checks the strict rate/distortion ordering over points sharing one
/// hyperparameter kind and one seed. The verdict is independent of input
/// order.
pub fn check_lemma1(points: &[RDPoint]) -> Result<Lemma1Report> {
    let kind = common_kind(points)?;
    if points.iter().any(|p| p.seed != points[0].seed) {
        return Err(Error::Config(
            "ordering check over raw points needs a single seed; use the median variant for multi-seed sweeps"
                .into(),
        ));
    }
    let curve = points
        .iter()
        .map(|p| (p.hyper_value, p.rate, p.distortion))
        .collect();
    ordering_report(kind, curve, false)
}

/// Multi-seed variant: reduces points to per-value medians over seeds, then
/// checks the strict ordering of the medians.
pub fn check_lemma1_median(points: &[RDPoint]) -> Result<Lemma1Report> {
    let kind = common_kind(points)?;
    let mut by_value: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for p in points {
        match by_value.iter_mut().find(|(v, _, _)| *v == p.hyper_value) {
            Some((_, rates, dists)) => {
                rates.push(p.rate);
                dists.push(p.distortion);
            }
            None => by_value.push((p.hyper_value, vec![p.rate], vec![p.distortion])),
        }
    }
    let curve = by_value
        .into_iter()
        .map(|(v, rates, dists)| (v, median(rates), median(dists)))
        .collect();
    ordering_report(kind, curve, true)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Informational entropy sandwich around a measured point.
///
/// For Bernoulli likelihoods the data entropy is upper-bounded by one bit
/// per pixel; the true entropy of the unknown data distribution is not
/// estimable here, so the inequality is reported, never enforced.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichCheck {
    pub entropy_upper_proxy: Option<f64>,
    pub rate: f64,
    pub h_minus_d: Option<f64>,
    /// `h_minus_d <= rate` evaluated with the proxy entropy, when available.
    pub inequality_with_proxy_holds: Option<bool>,
}

pub fn sandwich_check(
    point: &RDPoint,
    pixel_count: usize,
    likelihood: &LikelihoodSpec,
) -> SandwichCheck {
    let entropy_upper_proxy = match likelihood {
        LikelihoodSpec::Bernoulli => Some(pixel_count as f64 * std::f64::consts::LN_2),
        LikelihoodSpec::GaussianFixedVariance { .. } => None,
    };
    let h_minus_d = entropy_upper_proxy.map(|h| h - point.distortion);
    SandwichCheck {
        entropy_upper_proxy,
        rate: point.rate,
        h_minus_d,
        inequality_with_proxy_holds: h_minus_d.map(|hd| hd <= point.rate),
    }
}

/// Writes the flat sweep table: `kind,value,seed,rate,distortion,elbo`.
pub fn write_rd_table(path: &Path, points: &[RDPoint]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "kind,value,seed,rate,distortion,elbo")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.hyper_kind, p.hyper_value, p.seed, p.rate, p.distortion, p.elbo
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_rd_table`].
pub fn read_rd_table(path: &Path) -> Result<Vec<RDPoint>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Dataset(format!("bad sweep table row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Dataset(format!("bad number {s:?}: {e}")))
        };
        out.push(RDPoint {
            hyper_kind: parts[0].parse()?,
            hyper_value: parse(parts[1])?,
            seed: parts[2]
                .parse()
                .map_err(|e| Error::Dataset(format!("bad seed {:?}: {e}", parts[2])))?,
            rate: parse(parts[3])?,
            distortion: parse(parts[4])?,
            elbo: parse(parts[5])?,
        });
    }
    Ok(out)
}
