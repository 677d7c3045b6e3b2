//! Closed-form densities, divergences, and the reparametrized sampling
//! primitive every objective is built from.
//!
//! All computation here is `f64`. Posteriors are validated at construction
//! (`LatentPosterior::new`), so the divergence routines themselves are
//! infallible. Sampling noise is always injected by the caller, never drawn
//! internally, which keeps every function in this module pure.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Decoder Bernoulli means are clamped to `[CLAMP, 1 - CLAMP]` before taking
/// logs so saturated outputs cannot produce infinite losses.
pub const BERNOULLI_MEAN_CLAMP: f64 = 1e-6;

/// Per-example diagonal Gaussian over latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    mean: Array1<f64>,
    log_var: Array1<f64>,
}

impl LatentPosterior {
    /// Builds a posterior, rejecting non-finite entries (the diagnostic names
    /// the offending dimension) and mismatched lengths.
    pub fn new(mean: Array1<f64>, log_var: Array1<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::shape(
                format!("log_var of length {}", mean.len()),
                format!("length {}", log_var.len()),
            ));
        }
        for (i, &m) in mean.iter().enumerate() {
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("posterior mean, dimension {i}")));
            }
        }
        for (i, &v) in log_var.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "posterior log_var, dimension {i}"
                )));
            }
        }
        Ok(Self { mean, log_var })
    }

    /// The posterior equal to the standard-normal prior.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            log_var: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn log_var(&self) -> &Array1<f64> {
        &self.log_var
    }

    /// Per-dimension standard deviation `exp(log_var / 2)`.
    pub fn std(&self) -> Array1<f64> {
        self.log_var.mapv(|v| (0.5 * v).exp())
    }
}

/// Marker for the fixed standard-normal prior over `dimension` latent units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriorSpec {
    pub dimension: usize,
}

/// Decoder likelihood family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LikelihoodSpec {
    /// Per-pixel Bernoulli; decoder outputs are means in `(0, 1)`.
    Bernoulli,
    /// Per-pixel Gaussian with a fixed, shared variance.
    GaussianFixedVariance { variance: f64 },
}

impl LikelihoodSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LikelihoodSpec::Bernoulli => Ok(()),
            LikelihoodSpec::GaussianFixedVariance { variance } => {
                if *variance > 0.0 && variance.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "likelihood.variance must be a positive finite real, got {variance}"
                    )))
                }
            }
        }
    }

    /// True when decoder outputs should be squashed through a sigmoid.
    pub fn is_bernoulli(&self) -> bool {
        matches!(self, LikelihoodSpec::Bernoulli)
    }
}

/// Result of [`kl_to_standard_normal`].
#[derive(Debug, Clone)]
pub struct KlDecomposition {
    /// Sum of `per_dim`, in nats.
    pub total: f64,
    /// Nonnegative per-dimension contributions.
    pub per_dim: Array1<f64>,
}

/// KL divergence from a diagonal Gaussian posterior to the standard-normal
/// prior: `per_dim[i] = (mu_i^2 + sigma_i^2 - 1 - log sigma_i^2) / 2`.
pub fn kl_to_standard_normal(q: &LatentPosterior) -> KlDecomposition {
    let per_dim = Array1::from_iter(q.mean.iter().zip(q.log_var.iter()).map(|(&m, &lv)| {
        let var = lv.exp();
        // Mathematically nonnegative; clamp shields against rounding at 0.
        (0.5 * (m * m + var - 1.0 - lv)).max(0.0)
    }));
    KlDecomposition {
        total: per_dim.sum(),
        per_dim,
    }
}

/// Analytic gradients of [`kl_to_standard_normal`]'s total.
#[derive(Debug, Clone)]
pub struct KlGradient {
    /// `d total / d mean = mean`
    pub d_mean: Array1<f64>,
    /// `d total / d log_var = (sigma^2 - 1) / 2`
    pub d_log_var: Array1<f64>,
}

pub fn kl_gradient(q: &LatentPosterior) -> KlGradient {
    KlGradient {
        d_mean: q.mean.clone(),
        d_log_var: q.log_var.mapv(|lv| 0.5 * (lv.exp() - 1.0)),
    }
}

/// Reparametrized draw `mean + std * noise`. The noise vector is injected by
/// the caller (drawn from a standard normal for unbiased sampling).
pub fn reparam_sample(q: &LatentPosterior, noise: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if noise.len() != q.dim() {
        return Err(Error::shape(
            format!("noise of length {}", q.dim()),
            format!("length {}", noise.len()),
        ));
    }
    let std = q.std();
    Ok(&q.mean + &(&std * &noise))
}

/// Log-likelihood of one observation under the decoder output, summed over
/// pixels.
///
/// Bernoulli: `sum x log m + (1 - x) log(1 - m)` with `m` clamped away from
/// `{0, 1}`. Gaussian: `sum -((x - m)^2 / v + log(2 pi v)) / 2`.
pub fn reconstruction_log_likelihood(
    x: ArrayView1<'_, f64>,
    decoder_output: ArrayView1<'_, f64>,
    spec: &LikelihoodSpec,
) -> Result<f64> {
    check_recon_inputs(x, decoder_output)?;
    let ll = match spec {
        LikelihoodSpec::Bernoulli => x
            .iter()
            .zip(decoder_output.iter())
            .map(|(&xi, &mi)| {
                let m = clamp_mean(mi);
                xi * m.ln() + (1.0 - xi) * (1.0 - m).ln()
            })
            .sum(),
        LikelihoodSpec::GaussianFixedVariance { variance } => {
            let log_norm = (2.0 * std::f64::consts::PI * variance).ln();
            x.iter()
                .zip(decoder_output.iter())
                .map(|(&xi, &mi)| {
                    let d = xi - mi;
                    -0.5 * (d * d / variance + log_norm)
                })
                .sum()
        }
    };
    Ok(ll)
}

/// Analytic gradients of [`reconstruction_log_likelihood`].
#[derive(Debug, Clone)]
pub struct ReconGradient {
    pub d_x: Array1<f64>,
    pub d_output: Array1<f64>,
}

pub fn reconstruction_log_likelihood_gradient(
    x: ArrayView1<'_, f64>,
    decoder_output: ArrayView1<'_, f64>,
    spec: &LikelihoodSpec,
) -> Result<ReconGradient> {
    check_recon_inputs(x, decoder_output)?;
    let (d_x, d_output) = match spec {
        LikelihoodSpec::Bernoulli => {
            let d_x = Array1::from_iter(decoder_output.iter().map(|&mi| {
                let m = clamp_mean(mi);
                m.ln() - (1.0 - m).ln()
            }));
            // Zero gradient where the clamp is active: the clamped value no
            // longer responds to the raw output.
            let d_output = Array1::from_iter(x.iter().zip(decoder_output.iter()).map(
                |(&xi, &mi)| {
                    if mi <= BERNOULLI_MEAN_CLAMP || mi >= 1.0 - BERNOULLI_MEAN_CLAMP {
                        0.0
                    } else {
                        xi / mi - (1.0 - xi) / (1.0 - mi)
                    }
                },
            ));
            (d_x, d_output)
        }
        LikelihoodSpec::GaussianFixedVariance { variance } => {
            let d_output = Array1::from_iter(
                x.iter()
                    .zip(decoder_output.iter())
                    .map(|(&xi, &mi)| (xi - mi) / variance),
            );
            let d_x = d_output.mapv(|g| -g);
            (d_x, d_output)
        }
    };
    Ok(ReconGradient { d_x, d_output })
}

fn clamp_mean(m: f64) -> f64 {
    m.clamp(BERNOULLI_MEAN_CLAMP, 1.0 - BERNOULLI_MEAN_CLAMP)
}

fn check_recon_inputs(x: ArrayView1<'_, f64>, decoder_output: ArrayView1<'_, f64>) -> Result<()> {
    if x.len() != decoder_output.len() {
        return Err(Error::shape(
            format!("decoder output of length {}", x.len()),
            format!("length {}", decoder_output.len()),
        ));
    }
    if let Some(i) = decoder_output.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("decoder output, pixel {i}")));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation, pixel {i}")));
    }
    Ok(())
}
