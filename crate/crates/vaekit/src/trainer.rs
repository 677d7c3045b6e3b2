//! Optimization loop binding models, objectives, and data, with per-step
//! diagnostics: the loss decomposition, per-dimension KL trajectories, and
//! latent traversal emission.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4, Array5, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::models::{
    sample_noise, save_checkpoint, ArchitectureConfig, EncodeOutput, HeadGradients, Vae,
    VaeGradients,
};
use crate::nn::{Adam, Scalar};
use crate::objectives::{step_loss_with_gradients, LossBreakdown, ObjectiveConfig};
use crate::{Error, Result};

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of optimizer updates.
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// Record a log entry every this many steps.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Write an intermediate checkpoint every this many steps (when a
    /// checkpoint directory is supplied).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    /// Fraction of the dataset held out for rate/distortion evaluation.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_log_every() -> usize {
    25
}
fn default_checkpoint_every() -> usize {
    1000
}
fn default_holdout() -> f64 {
    0.1
}

impl TrainConfig {
    pub fn quick(steps: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            steps,
            batch_size,
            learning_rate: default_lr(),
            seed,
            log_every: default_log_every().min(steps.max(1)),
            checkpoint_every: default_checkpoint_every(),
            holdout_fraction: default_holdout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("train.steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "train.learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.log_every == 0 || self.log_every > self.steps {
            return Err(Error::Config(format!(
                "train.log_every must be in [1, steps]; got {} with steps {}",
                self.log_every, self.steps
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "train.holdout_fraction must be in [0, 1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub total: f64,
    pub distortion: f64,
    pub rate: f64,
    /// Effective hyperparameter (`beta` or `C`) at this step.
    pub hyper: f64,
    pub per_dim_kl: Vec<f64>,
    /// `-(distortion + rate)`.
    pub elbo: f64,
}

/// Step-sampled training trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<TrainRecord>,
}

impl TrainingLog {
    /// Checks the log contract: strictly increasing steps, finite values.
    pub fn validate(&self) -> Result<()> {
        let mut last: Option<usize> = None;
        for r in &self.records {
            if let Some(prev) = last {
                if r.step <= prev {
                    return Err(Error::Config(format!(
                        "training log steps not strictly increasing at step {}",
                        r.step
                    )));
                }
            }
            let finite = r.total.is_finite()
                && r.distortion.is_finite()
                && r.rate.is_finite()
                && r.hyper.is_finite()
                && r.elbo.is_finite()
                && r.per_dim_kl.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("training log record at step {}", r.step)));
            }
            last = Some(r.step);
        }
        Ok(())
    }

    /// Persists as newline-delimited JSON, one record per line.
    pub fn write_ndjson(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_ndjson(path: &Path) -> Result<Self> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(TrainingLog { records })
    }
}

/// A finished training run.
pub struct TrainOutput {
    pub vae: Vae<f32>,
    pub log: TrainingLog,
}

/// Flattens an image batch into f64 rows, one example per row.
pub fn images_as_rows<F: Scalar>(x: &Array4<F>) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    Array2::from_shape_vec(
        (b, c * h * w),
        x.iter().map(|v| v.to_f64().expect("cast")).collect(),
    )
    .expect("flatten")
}

fn upcast_output<F: Scalar>(q: &EncodeOutput<F>) -> EncodeOutput<f64> {
    EncodeOutput {
        mean: q.mean.mapv(|v| v.to_f64().expect("cast")),
        log_var: q.log_var.mapv(|v| v.to_f64().expect("cast")),
    }
}

/// One loss evaluation plus full parameter gradients for a minibatch.
///
/// The loss head runs in `f64`; its gradients are cast to the network float
/// type and pushed through the hand-derived backward pass. Instantiated at
/// `f64` this is exact end to end, which the gradient-check suites use.
pub fn loss_and_gradients<F: Scalar>(
    vae: &Vae<F>,
    x: &Array4<F>,
    noise: &Array2<F>,
    objective: &ObjectiveConfig,
    step: usize,
) -> Result<(LossBreakdown, VaeGradients<F>)> {
    let pass = vae.forward(x, noise)?;
    let x_rows = images_as_rows(x);
    let recon_rows = images_as_rows(&pass.decoder_output);
    let q64 = upcast_output(&pass.posterior);
    let head = step_loss_with_gradients(objective, step, x_rows.view(), &q64, recon_rows.view())?;

    let (b, c, h, w) = x.dim();
    let d_recon4 = Array4::from_shape_vec(
        (b, c, h, w),
        head.d_reconstruction
            .iter()
            .map(|&v| F::from(v).expect("cast"))
            .collect(),
    )
    .expect("reshape");
    let heads = HeadGradients {
        d_mean: head.d_mean.mapv(|v| F::from(v).expect("cast")),
        d_log_var: head.d_log_var.mapv(|v| F::from(v).expect("cast")),
        d_decoder_output: d_recon4,
    };
    let grads = vae.backward(&pass, &heads);
    Ok((head.breakdown, grads))
}

/// Gathers `indices` rows of an image tensor into a contiguous batch.
fn gather_batch(images: &Array4<f32>, indices: &[usize]) -> Array4<f32> {
    let (_, c, h, w) = images.dim();
    let mut out = Array4::zeros((indices.len(), c, h, w));
    for (row, &i) in indices.iter().enumerate() {
        out.index_axis_mut(Axis(0), row).assign(&images.index_axis(Axis(0), i));
    }
    out
}

/// Runs `steps` optimizer updates with shuffled minibatches.
///
/// Fully reproducible under a fixed seed: repeated runs produce identical
/// logs and parameters on the same platform. A non-finite loss aborts with
/// the failing step and the last finite record in the error message.
pub fn train(
    arch: &ArchitectureConfig,
    objective: &ObjectiveConfig,
    train_cfg: &TrainConfig,
    images: &Array4<f32>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    arch.validate()?;
    objective.validate()?;
    train_cfg.validate()?;
    let n = images.dim().0;
    if n == 0 {
        return Err(Error::Dataset("training dataset is empty".into()));
    }

    let mut vae: Vae<f32> = Vae::init(arch.clone(), objective.likelihood)?;
    let mut adam = Adam::new(train_cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);

    let batch_size = train_cfg.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;

    let mut log = TrainingLog::default();

    for step in 0..train_cfg.steps {
        let mut batch_indices = Vec::with_capacity(batch_size);
        while batch_indices.len() < batch_size {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch_indices.push(order[cursor]);
            cursor += 1;
        }
        let batch = gather_batch(images, &batch_indices);
        let noise = sample_noise::<f32>(batch_size, arch.latent_dim, &mut rng);

        let (breakdown, grads) = loss_and_gradients(&vae, &batch, &noise, objective, step)?;
        if !breakdown.total.is_finite() {
            let last = log
                .records
                .last()
                .map(|r| format!("last finite record at step {}: total {:.6}", r.step, r.total))
                .unwrap_or_else(|| "no finite record logged yet".into());
            return Err(Error::Training {
                step,
                reason: format!("non-finite loss {}; {last}", breakdown.total),
            });
        }

        {
            let grad_slices = grads.slices();
            let mut params = vae.param_slices_mut();
            adam.step(&mut params, &grad_slices);
        }

        if (step + 1) % train_cfg.log_every == 0 || step + 1 == train_cfg.steps {
            let record = TrainRecord {
                step,
                total: breakdown.total,
                distortion: breakdown.distortion_term,
                rate: breakdown.rate_term,
                hyper: breakdown.effective_hyperparameter,
                per_dim_kl: breakdown.per_dim_kl.to_vec(),
                elbo: breakdown.elbo(),
            };
            if log.records.last().map(|r| r.step) != Some(record.step) {
                log.records.push(record);
            }
        }

        if let Some(dir) = checkpoint_dir {
            if (step + 1) % train_cfg.checkpoint_every == 0 && step + 1 != train_cfg.steps {
                let path = dir.join(format!("checkpoint_step{:07}.ckpt", step + 1));
                save_checkpoint(&path, &vae, (step + 1) as u64)?;
            }
        }
    }

    log.validate()?;
    Ok(TrainOutput { vae, log })
}

/// Per-record count of latent dimensions whose logged KL exceeds
/// `threshold_nats`.
pub fn active_dimensions(log: &TrainingLog, threshold_nats: f64) -> Vec<(usize, usize)> {
    log.records
        .iter()
        .map(|r| {
            (
                r.step,
                r.per_dim_kl.iter().filter(|&&v| v > threshold_nats).count(),
            )
        })
        .collect()
}

/// Default threshold separating active from dead dimensions, in nats.
pub const ACTIVE_DIM_THRESHOLD: f64 = 0.05;

/// Trailing moving average with the given window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let len = (i + 1).min(window);
        out.push(sum / len as f64);
    }
    out
}

/// Default latent traversal grid: 11 points evenly spaced over [-2, 2].
pub fn default_traversal_grid() -> Vec<f64> {
    (0..11).map(|i| -2.0 + 4.0 * i as f64 / 10.0).collect()
}

/// For each latent dimension and grid value, decodes the posterior mean of
/// `image` with that coordinate replaced by the grid value.
///
/// Output shape: `(latent_dim, grid_len, channels, H, W)`.
pub fn emit_traversals(
    vae: &Vae<f32>,
    image: ArrayView3<'_, f32>,
    grid: &[f64],
) -> Result<Array5<f32>> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("traversal grid must be nonempty and finite".into()));
    }
    let (c, h, w) = image.dim();
    let mut x = Array4::zeros((1, c, h, w));
    x.index_axis_mut(Axis(0), 0).assign(&image);
    let posterior = vae.encode(&x)?;
    let latent_dim = posterior.mean.ncols();
    let mu = posterior.mean.row(0).to_owned();

    let g = grid.len();
    let mut z = Array2::<f32>::zeros((latent_dim * g, latent_dim));
    for d in 0..latent_dim {
        for (j, &val) in grid.iter().enumerate() {
            let mut row = mu.clone();
            row[d] = val as f32;
            z.row_mut(d * g + j).assign(&row);
        }
    }
    let decoded = vae.decode(&z)?;
    let (_, dc, dh, dw) = decoded.dim();
    let (data, _) = decoded.into_raw_vec_and_offset();
    Ok(Array5::from_shape_vec((latent_dim, g, dc, dh, dw), data).expect("traversal shape"))
}

/// Mean per-dimension KL of a set of images under the current encoder.
pub fn mean_per_dim_kl(vae: &Vae<f32>, images: &Array4<f32>) -> Result<Array1<f64>> {
    let out = vae.encode(images)?;
    let q = upcast_output(&out);
    let batch = q.batch();
    let mut acc = Array1::<f64>::zeros(q.mean.ncols());
    for i in 0..batch {
        let kl = crate::distributions::kl_to_standard_normal(&q.posterior(i)?);
        acc += &kl.per_dim;
    }
    Ok(acc / batch as f64)
}

/// Dataset-mean loss breakdown under a fixed objective configuration,
/// without gradient computation (single noise draw, evaluation only).
pub fn evaluate_loss(
    vae: &Vae<f32>,
    objective: &ObjectiveConfig,
    step: usize,
    images: &Array4<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let n = images.dim().0;
    let noise = sample_noise::<f32>(n, vae.arch().latent_dim, rng);
    let pass = vae.forward(images, &noise)?;
    let x_rows = images_as_rows(images);
    let recon_rows = images_as_rows(&pass.decoder_output);
    let q64 = upcast_output(&pass.posterior);
    crate::objectives::step_loss(objective, step, x_rows.view(), &q64, recon_rows.view())
}
