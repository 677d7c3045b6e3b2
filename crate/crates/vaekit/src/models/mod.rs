//! Encoder/decoder network definitions: a small strided-convolution VAE
//! family producing diagonal-Gaussian posteriors from images and decoder
//! parameter maps from latents.
//!
//! The architecture is the familiar conv-stack convention: `4x4` kernels,
//! stride 2, one fully connected hidden layer, and a decoder that mirrors the
//! encoder with transposed convolutions. Everything is configurable through
//! [`ArchitectureConfig`]; an empty `conv_widths` list yields a dense-only
//! model, which the gradient-check suites rely on for tiny exact tests.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{LatentPosterior, LikelihoodSpec};
use crate::nn::conv::{conv_out_size, Conv2dCache, ConvGrad};
use crate::nn::{relu, relu_backward, sigmoid, sigmoid_backward, Conv2d, ConvTranspose2d, Dense, DenseGrad, Scalar};
use crate::{Error, Result};

/// Convolution kernel size used throughout the family.
pub const KERNEL: usize = 4;
/// Convolution stride used throughout the family.
pub const STRIDE: usize = 2;
/// Convolution padding used throughout the family.
pub const PAD: usize = 1;

/// Posterior heads start near the prior: their init bound is scaled down so
/// a fresh model has per-dimension KL ~ 0 and dimensions activate only as
/// training asks for capacity.
const HEAD_INIT_GAIN: f64 = 0.1;

/// Hyperparameters fixing the network shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Square image side in pixels.
    pub image_side: usize,
    /// Image channels (1 for grayscale).
    pub channels: usize,
    /// Latent dimensionality `L`.
    pub latent_dim: usize,
    /// Output channels of each strided conv layer; empty for a dense model.
    #[serde(default)]
    pub conv_widths: Vec<usize>,
    /// Width of the fully connected hidden layer.
    pub fc_width: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl ArchitectureConfig {
    /// The conv-stack convention at full scale: 64x64 inputs, four conv
    /// layers of width 32, fc 256, 10 latent units.
    pub fn full_scale() -> Self {
        ArchitectureConfig {
            image_side: 64,
            channels: 1,
            latent_dim: 10,
            conv_widths: vec![32, 32, 32, 32],
            fc_width: 256,
            seed: 0,
        }
    }

    /// Desk-scale preset: 32x32 inputs, two conv layers of width 16, fc 64,
    /// 6 latent units. Keeps full test runs under minutes.
    pub fn desk() -> Self {
        ArchitectureConfig {
            image_side: 32,
            channels: 1,
            latent_dim: 6,
            conv_widths: vec![16, 16],
            fc_width: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side == 0 || self.channels == 0 {
            return Err(Error::Config(format!(
                "model.image_side and model.channels must be positive (got {} x {})",
                self.image_side, self.channels
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("model.latent_dim must be >= 1".into()));
        }
        if self.fc_width == 0 {
            return Err(Error::Config("model.fc_width must be >= 1".into()));
        }
        if self.conv_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("model.conv_widths entries must be positive".into()));
        }
        let downsample = 1usize << self.conv_widths.len();
        if self.image_side % downsample != 0 {
            return Err(Error::Config(format!(
                "model.image_side {} must be divisible by 2^{} for {} conv layers",
                self.image_side,
                self.conv_widths.len(),
                self.conv_widths.len()
            )));
        }
        if self.image_side / downsample == 0 {
            return Err(Error::Config(format!(
                "model.image_side {} collapses to zero after {} stride-2 layers",
                self.image_side,
                self.conv_widths.len()
            )));
        }
        Ok(())
    }

    /// Spatial side of the feature map after the conv stack.
    pub fn conv_out_side(&self) -> usize {
        let mut side = self.image_side;
        for _ in &self.conv_widths {
            side = conv_out_size(side, KERNEL, STRIDE, PAD);
        }
        side
    }

    /// Flattened feature count entering the fully connected layer.
    pub fn flat_features(&self) -> usize {
        let side = self.conv_out_side();
        let chans = self.conv_widths.last().copied().unwrap_or(self.channels);
        chans * side * side
    }

    pub fn pixel_count(&self) -> usize {
        self.channels * self.image_side * self.image_side
    }
}

/// Batched diagonal-Gaussian posterior parameters from the encoder.
#[derive(Debug, Clone)]
pub struct EncodeOutput<F> {
    /// (batch, latent_dim)
    pub mean: Array2<F>,
    /// (batch, latent_dim)
    pub log_var: Array2<F>,
}

impl<F: Scalar> EncodeOutput<F> {
    pub fn batch(&self) -> usize {
        self.mean.nrows()
    }

    /// Extracts example `i` as a validated `f64` posterior.
    pub fn posterior(&self, i: usize) -> Result<LatentPosterior> {
        LatentPosterior::new(
            self.mean.row(i).mapv(|v| v.to_f64().expect("float cast")),
            self.log_var.row(i).mapv(|v| v.to_f64().expect("float cast")),
        )
    }
}

struct EncodeCache<F> {
    conv_caches: Vec<Conv2dCache<F>>,
    conv_preacts: Vec<Array4<F>>,
    flat: Array2<F>,
    fc_pre: Array2<F>,
    h: Array2<F>,
}

struct DecodeCache<F> {
    z: Array2<F>,
    fc1_pre: Array2<F>,
    d1: Array2<F>,
    fc2_pre: Array2<F>,
    conv_inputs: Vec<Array4<F>>,
    conv_preacts: Vec<Array4<F>>,
    /// Post-activation decoder output (Bernoulli means after sigmoid).
    output: Array4<F>,
}

/// Everything needed to run the backward pass for one minibatch.
pub struct ForwardPass<F> {
    pub posterior: EncodeOutput<F>,
    /// Injected standard-normal noise, one row per example.
    pub noise: Array2<F>,
    /// Reparametrized latents `mean + std * noise`.
    pub z: Array2<F>,
    /// Decoder output (likelihood parameters), image-shaped.
    pub decoder_output: Array4<F>,
    enc: EncodeCache<F>,
    dec: DecodeCache<F>,
}

/// Loss-head gradients handed to [`Vae::backward`]: the derivative of the
/// scalar loss with respect to the posterior parameters (KL path) and the
/// decoder output (reconstruction path).
pub struct HeadGradients<F> {
    pub d_mean: Array2<F>,
    pub d_log_var: Array2<F>,
    pub d_decoder_output: Array4<F>,
}

/// Gradients for every parameter tensor, in [`Vae::param_slices`] order.
pub struct VaeGradients<F> {
    enc_convs: Vec<ConvGrad<F>>,
    enc_fc: DenseGrad<F>,
    head_mean: DenseGrad<F>,
    head_log_var: DenseGrad<F>,
    dec_fc1: DenseGrad<F>,
    dec_fc2: DenseGrad<F>,
    dec_convs: Vec<ConvGrad<F>>,
}

impl<F: Scalar> VaeGradients<F> {
    /// Flat slices aligned with [`Vae::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for g in &self.enc_convs {
            out.push(g.w.as_slice().expect("layout"));
            out.push(g.b.as_slice().expect("layout"));
        }
        for g in [&self.enc_fc, &self.head_mean, &self.head_log_var, &self.dec_fc1, &self.dec_fc2] {
            out.push(g.w.as_slice().expect("layout"));
            out.push(g.b.as_slice().expect("layout"));
        }
        for g in &self.dec_convs {
            out.push(g.w.as_slice().expect("layout"));
            out.push(g.b.as_slice().expect("layout"));
        }
        out
    }

    /// True if every gradient entry is finite.
    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.to_f64().map(f64::is_finite).unwrap_or(false)))
    }
}

/// The encoder/decoder pair with all parameters.
#[derive(Debug, Clone)]
pub struct Vae<F> {
    arch: ArchitectureConfig,
    likelihood: LikelihoodSpec,
    enc_convs: Vec<Conv2d<F>>,
    enc_fc: Dense<F>,
    head_mean: Dense<F>,
    head_log_var: Dense<F>,
    dec_fc1: Dense<F>,
    dec_fc2: Dense<F>,
    dec_convs: Vec<ConvTranspose2d<F>>,
}

impl<F: Scalar> Vae<F> {
    /// Initializes all parameters from the config seed. Two calls with equal
    /// configs yield bitwise-identical parameters.
    pub fn init(arch: ArchitectureConfig, likelihood: LikelihoodSpec) -> Result<Self> {
        arch.validate()?;
        likelihood.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);

        let mut enc_convs = Vec::new();
        let mut in_ch = arch.channels;
        for &width in &arch.conv_widths {
            enc_convs.push(Conv2d::new(in_ch, width, KERNEL, STRIDE, PAD, &mut rng));
            in_ch = width;
        }
        let flat = arch.flat_features();
        let enc_fc = Dense::new(flat, arch.fc_width, 1.0, &mut rng);
        let head_mean = Dense::new(arch.fc_width, arch.latent_dim, HEAD_INIT_GAIN, &mut rng);
        let head_log_var = Dense::new(arch.fc_width, arch.latent_dim, HEAD_INIT_GAIN, &mut rng);
        let dec_fc1 = Dense::new(arch.latent_dim, arch.fc_width, 1.0, &mut rng);
        let dec_fc2 = Dense::new(arch.fc_width, flat, 1.0, &mut rng);

        let mut dec_convs = Vec::new();
        let n = arch.conv_widths.len();
        for i in (0..n).rev() {
            let from = arch.conv_widths[i];
            let to = if i == 0 { arch.channels } else { arch.conv_widths[i - 1] };
            dec_convs.push(ConvTranspose2d::new(from, to, KERNEL, STRIDE, PAD, &mut rng));
        }

        Ok(Vae {
            arch,
            likelihood,
            enc_convs,
            enc_fc,
            head_mean,
            head_log_var,
            dec_fc1,
            dec_fc2,
            dec_convs,
        })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn likelihood(&self) -> &LikelihoodSpec {
        &self.likelihood
    }

    fn check_image_batch(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.arch.channels || h != self.arch.image_side || w != self.arch.image_side {
            return Err(Error::shape(
                format!(
                    "(batch, {}, {}, {})",
                    self.arch.channels, self.arch.image_side, self.arch.image_side
                ),
                format!("{:?}", x.dim()),
            ));
        }
        Ok(())
    }

    /// Encoder forward pass; deterministic given parameters and input.
    pub fn encode(&self, x: &Array4<F>) -> Result<EncodeOutput<F>> {
        Ok(self.encode_full(x)?.0)
    }

    fn encode_full(&self, x: &Array4<F>) -> Result<(EncodeOutput<F>, EncodeCache<F>)> {
        self.check_image_batch(x)?;
        let batch = x.dim().0;

        let mut act = x.clone();
        let mut conv_caches = Vec::with_capacity(self.enc_convs.len());
        let mut conv_preacts = Vec::with_capacity(self.enc_convs.len());
        for conv in &self.enc_convs {
            let (pre, cache) = conv.forward(&act);
            act = relu(&pre);
            conv_caches.push(cache);
            conv_preacts.push(pre);
        }

        let flat_len = self.arch.flat_features();
        let flat_vec: Vec<F> = act.iter().cloned().collect();
        let flat = Array2::from_shape_vec((batch, flat_len), flat_vec)
            .map_err(|e| Error::shape(format!("(batch, {flat_len})"), e.to_string()))?;

        let fc_pre = self.enc_fc.forward(&flat);
        let h = relu(&fc_pre);
        let mean = self.head_mean.forward(&h);
        let log_var = self.head_log_var.forward(&h);

        Ok((
            EncodeOutput { mean, log_var },
            EncodeCache {
                conv_caches,
                conv_preacts,
                flat,
                fc_pre,
                h,
            },
        ))
    }

    /// Decoder forward pass. Bernoulli-family outputs pass through a sigmoid,
    /// so every value lies in (0, 1); Gaussian outputs are raw means.
    pub fn decode(&self, z: &Array2<F>) -> Result<Array4<F>> {
        Ok(self.decode_full(z)?.output)
    }

    fn decode_full(&self, z: &Array2<F>) -> Result<DecodeCache<F>> {
        if z.ncols() != self.arch.latent_dim {
            return Err(Error::shape(
                format!("(batch, {})", self.arch.latent_dim),
                format!("{:?}", z.dim()),
            ));
        }
        let batch = z.nrows();
        let fc1_pre = self.dec_fc1.forward(z);
        let d1 = relu(&fc1_pre);
        let fc2_pre = self.dec_fc2.forward(&d1);

        let side = self.arch.conv_out_side();
        let chans = self.arch.conv_widths.last().copied().unwrap_or(self.arch.channels);

        let mut conv_inputs = Vec::with_capacity(self.dec_convs.len());
        let mut conv_preacts = Vec::with_capacity(self.dec_convs.len());

        let output_pre: Array4<F> = if self.dec_convs.is_empty() {
            let (data, _) = fc2_pre.clone().into_raw_vec_and_offset();
            Array4::from_shape_vec((batch, chans, side, side), data).expect("dense decoder shape")
        } else {
            let (data, _) = relu(&fc2_pre).into_raw_vec_and_offset();
            let mut act = Array4::from_shape_vec((batch, chans, side, side), data)
                .expect("decoder feature shape");
            let last = self.dec_convs.len() - 1;
            for (i, convt) in self.dec_convs.iter().enumerate() {
                conv_inputs.push(act.clone());
                let pre = convt.forward(&act);
                if i < last {
                    act = relu(&pre);
                    conv_preacts.push(pre);
                } else {
                    act = pre;
                }
            }
            act
        };

        let output = if self.likelihood.is_bernoulli() {
            sigmoid(&output_pre)
        } else {
            output_pre
        };

        Ok(DecodeCache {
            z: z.clone(),
            fc1_pre,
            d1,
            fc2_pre,
            conv_inputs,
            conv_preacts,
            output,
        })
    }

    /// Full reparametrized forward pass with caches for [`Vae::backward`].
    /// `noise` must be standard-normal draws, one row per example.
    pub fn forward(&self, x: &Array4<F>, noise: &Array2<F>) -> Result<ForwardPass<F>> {
        let (posterior, enc) = self.encode_full(x)?;
        let batch = posterior.batch();
        if noise.dim() != (batch, self.arch.latent_dim) {
            return Err(Error::shape(
                format!("({batch}, {})", self.arch.latent_dim),
                format!("{:?}", noise.dim()),
            ));
        }
        let half = F::from(0.5).expect("cast");
        let std = posterior.log_var.mapv(|v| (v * half).exp());
        let z = &posterior.mean + &(&std * noise);
        let dec = self.decode_full(&z)?;
        Ok(ForwardPass {
            decoder_output: dec.output.clone(),
            posterior,
            noise: noise.clone(),
            z,
            enc,
            dec,
        })
    }

    /// Backpropagates loss-head gradients through decoder, reparametrization,
    /// and encoder, returning gradients for every parameter tensor.
    pub fn backward(&self, pass: &ForwardPass<F>, heads: &HeadGradients<F>) -> VaeGradients<F> {
        let half = F::from(0.5).expect("cast");
        let batch = pass.posterior.batch();

        // Reconstruction path: through the output activation first.
        let g_out_pre = if self.likelihood.is_bernoulli() {
            sigmoid_backward(&pass.decoder_output, &heads.d_decoder_output)
        } else {
            heads.d_decoder_output.clone()
        };

        // Decoder conv chain (reverse).
        let mut dec_conv_grads_rev = Vec::with_capacity(self.dec_convs.len());
        let g_fc2_post: Array2<F> = if self.dec_convs.is_empty() {
            let (data, _) = g_out_pre.into_raw_vec_and_offset();
            Array2::from_shape_vec((batch, self.arch.flat_features()), data).expect("dense grad shape")
        } else {
            let mut g = g_out_pre;
            for i in (0..self.dec_convs.len()).rev() {
                let (g_in, grad) = self.dec_convs[i].backward(&pass.dec.conv_inputs[i], &g);
                dec_conv_grads_rev.push(grad);
                g = if i > 0 {
                    relu_backward(&pass.dec.conv_preacts[i - 1], &g_in)
                } else {
                    g_in
                };
            }
            let g_feat = relu_backward4_from_flat(&pass.dec.fc2_pre, g);
            g_feat
        };
        let dec_convs: Vec<ConvGrad<F>> = dec_conv_grads_rev.into_iter().rev().collect();

        let (g_d1, dec_fc2) = self.dec_fc2.backward(&pass.dec.d1, &g_fc2_post);
        let g_fc1_pre = relu_backward(&pass.dec.fc1_pre, &g_d1);
        let (g_z, dec_fc1) = self.dec_fc1.backward(&pass.dec.z, &g_fc1_pre);

        // Reparametrization: z = mean + exp(log_var/2) * noise.
        let std = pass.posterior.log_var.mapv(|v| (v * half).exp());
        let g_mean_total = &heads.d_mean + &g_z;
        let g_log_var_total = &heads.d_log_var + &(&(&g_z * &pass.noise) * &std).mapv(|v| v * half);

        // Encoder heads and fc.
        let (g_h_mean, head_mean) = self.head_mean.backward(&pass.enc.h, &g_mean_total);
        let (g_h_lv, head_log_var) = self.head_log_var.backward(&pass.enc.h, &g_log_var_total);
        let g_h = &g_h_mean + &g_h_lv;
        let g_fc_pre = relu_backward(&pass.enc.fc_pre, &g_h);
        let (g_flat, enc_fc) = self.enc_fc.backward(&pass.enc.flat, &g_fc_pre);

        // Encoder conv chain (reverse).
        let mut enc_conv_grads_rev = Vec::with_capacity(self.enc_convs.len());
        if !self.enc_convs.is_empty() {
            let side = self.arch.conv_out_side();
            let chans = self.arch.conv_widths.last().copied().unwrap_or(self.arch.channels);
            let (data, _) = g_flat.into_raw_vec_and_offset();
            let mut g = Array4::from_shape_vec((batch, chans, side, side), data).expect("grad shape");
            for i in (0..self.enc_convs.len()).rev() {
                let g_pre = relu_backward(&pass.enc.conv_preacts[i], &g);
                let (g_in, grad) = self.enc_convs[i].backward(&pass.enc.conv_caches[i], &g_pre);
                enc_conv_grads_rev.push(grad);
                g = g_in;
            }
        }
        let enc_convs: Vec<ConvGrad<F>> = enc_conv_grads_rev.into_iter().rev().collect();

        VaeGradients {
            enc_convs,
            enc_fc,
            head_mean,
            head_log_var,
            dec_fc1,
            dec_fc2,
            dec_convs,
        }
    }

    /// Names and shapes of all parameter tensors, in canonical order.
    pub fn named_param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, c) in self.enc_convs.iter().enumerate() {
            out.push((format!("enc.conv{i}.w"), c.w.shape().to_vec()));
            out.push((format!("enc.conv{i}.b"), c.b.shape().to_vec()));
        }
        for (name, d) in [
            ("enc.fc", &self.enc_fc),
            ("enc.mean", &self.head_mean),
            ("enc.log_var", &self.head_log_var),
            ("dec.fc1", &self.dec_fc1),
            ("dec.fc2", &self.dec_fc2),
        ] {
            out.push((format!("{name}.w"), d.w.shape().to_vec()));
            out.push((format!("{name}.b"), d.b.shape().to_vec()));
        }
        for (i, c) in self.dec_convs.iter().enumerate() {
            out.push((format!("dec.conv{i}.w"), c.w.shape().to_vec()));
            out.push((format!("dec.conv{i}.b"), c.b.shape().to_vec()));
        }
        out
    }

    /// Flat views of all parameter tensors, aligned with
    /// [`Vae::named_param_shapes`].
    pub fn param_slices(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for c in &self.enc_convs {
            out.push(c.w.as_slice().expect("layout"));
            out.push(c.b.as_slice().expect("layout"));
        }
        for d in [&self.enc_fc, &self.head_mean, &self.head_log_var, &self.dec_fc1, &self.dec_fc2] {
            out.push(d.w.as_slice().expect("layout"));
            out.push(d.b.as_slice().expect("layout"));
        }
        for c in &self.dec_convs {
            out.push(c.w.as_slice().expect("layout"));
            out.push(c.b.as_slice().expect("layout"));
        }
        out
    }

    /// Mutable flat views, same order as [`Vae::param_slices`].
    pub fn param_slices_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> = Vec::new();
        for c in &mut self.enc_convs {
            out.push(c.w.as_slice_mut().expect("layout"));
            out.push(c.b.as_slice_mut().expect("layout"));
        }
        out.push(self.enc_fc.w.as_slice_mut().expect("layout"));
        out.push(self.enc_fc.b.as_slice_mut().expect("layout"));
        out.push(self.head_mean.w.as_slice_mut().expect("layout"));
        out.push(self.head_mean.b.as_slice_mut().expect("layout"));
        out.push(self.head_log_var.w.as_slice_mut().expect("layout"));
        out.push(self.head_log_var.b.as_slice_mut().expect("layout"));
        out.push(self.dec_fc1.w.as_slice_mut().expect("layout"));
        out.push(self.dec_fc1.b.as_slice_mut().expect("layout"));
        out.push(self.dec_fc2.w.as_slice_mut().expect("layout"));
        out.push(self.dec_fc2.b.as_slice_mut().expect("layout"));
        for c in &mut self.dec_convs {
            out.push(c.w.as_slice_mut().expect("layout"));
            out.push(c.b.as_slice_mut().expect("layout"));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// True if every parameter entry is finite.
    pub fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.to_f64().map(f64::is_finite).unwrap_or(false)))
    }
}

/// ReLU backward where the pre-activation is a flat (batch, features) tensor
/// and the gradient arrives image-shaped.
fn relu_backward4_from_flat<F: Scalar>(pre: &Array2<F>, g: Array4<F>) -> Array2<F> {
    let (b, c, h, w) = g.dim();
    let (data, _) = g.into_raw_vec_and_offset();
    let g2 = Array2::from_shape_vec((b, c * h * w), data).expect("flatten");
    relu_backward(pre, &g2)
}

/// Splits per-example standard-normal noise rows for reparametrization.
pub fn sample_noise<F: Scalar>(batch: usize, latent_dim: usize, rng: &mut ChaCha8Rng) -> Array2<F> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_vec(
        (batch, latent_dim),
        (0..batch * latent_dim)
            .map(|_| F::from(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)).expect("cast"))
            .collect(),
    )
    .expect("noise shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::LikelihoodSpec;
    use ndarray::{Array, Axis};
    use rand::Rng;

    fn desk_vae() -> Vae<f32> {
        Vae::init(ArchitectureConfig::desk(), LikelihoodSpec::Bernoulli).unwrap()
    }

    fn random_images(batch: usize, arch: &ArchitectureConfig, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array::from_shape_vec(
            (batch, arch.channels, arch.image_side, arch.image_side),
            (0..batch * arch.pixel_count()).map(|_| rng.random_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn encode_produces_one_posterior_per_example() {
        let vae = desk_vae();
        let x = random_images(5, vae.arch(), 1);
        let out = vae.encode(&x).unwrap();
        assert_eq!(out.mean.dim(), (5, 6));
        assert_eq!(out.log_var.dim(), (5, 6));
    }

    #[test]
    fn encode_is_deterministic_for_duplicated_inputs() {
        let vae = desk_vae();
        let one = random_images(1, vae.arch(), 2);
        let mut two = Array4::zeros((2, 1, 32, 32));
        two.index_axis_mut(Axis(0), 0).assign(&one.index_axis(Axis(0), 0));
        two.index_axis_mut(Axis(0), 1).assign(&one.index_axis(Axis(0), 0));
        let out = vae.encode(&two).unwrap();
        assert_eq!(out.mean.row(0), out.mean.row(1));
        assert_eq!(out.log_var.row(0), out.log_var.row(1));
    }

    #[test]
    fn fresh_parameters_give_finite_outputs() {
        let vae = desk_vae();
        let x = random_images(3, vae.arch(), 3);
        let out = vae.encode(&x).unwrap();
        assert!(out.mean.iter().all(|v| v.is_finite()));
        assert!(out.log_var.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn decode_shape_and_sigmoid_range() {
        let vae = desk_vae();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = Array2::from_shape_vec((4, 6), (0..24).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = vae.decode(&z).unwrap();
        assert_eq!(y.dim(), (4, 1, 32, 32));
        assert!(y.iter().all(|&v| v > 0.0 && v < 1.0));

        // Identical latent rows decode identically.
        let mut z2 = z.clone();
        z2.row_mut(1).assign(&z.row(0).to_owned());
        let y2 = vae.decode(&z2).unwrap();
        assert_eq!(y2.index_axis(Axis(0), 0), y2.index_axis(Axis(0), 1));
    }

    #[test]
    fn init_is_reproducible_and_seed_sensitive() {
        let a = desk_vae();
        let b = desk_vae();
        assert_eq!(a.param_slices(), b.param_slices());

        let mut arch = ArchitectureConfig::desk();
        arch.seed = 99;
        let c: Vae<f32> = Vae::init(arch, LikelihoodSpec::Bernoulli).unwrap();
        assert!(a.param_slices().iter().zip(c.param_slices()).any(|(x, y)| *x != y));
        assert!(a.param_count() > 0);
    }

    #[test]
    fn encode_rejects_wrong_shapes() {
        let vae = desk_vae();
        let bad = Array4::<f32>::zeros((2, 1, 16, 16));
        assert!(vae.encode(&bad).is_err());
        let bad_z = Array2::<f32>::zeros((2, 5));
        assert!(vae.decode(&bad_z).is_err());
    }

    #[test]
    fn arch_validation_rejects_bad_configs() {
        let mut arch = ArchitectureConfig::desk();
        arch.image_side = 30; // not divisible by 4
        assert!(arch.validate().is_err());
        let mut arch = ArchitectureConfig::desk();
        arch.latent_dim = 0;
        assert!(arch.validate().is_err());
    }

    #[test]
    fn full_forward_backward_gives_finite_gradients_everywhere() {
        let vae = desk_vae();
        let x = random_images(2, vae.arch(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = sample_noise(2, 6, &mut rng);
        let pass = vae.forward(&x, &noise).unwrap();
        // Arbitrary smooth scalar loss: sum of outputs plus posterior terms.
        let heads = HeadGradients {
            d_mean: pass.posterior.mean.mapv(|_| 1.0f32),
            d_log_var: pass.posterior.log_var.mapv(|_| 1.0f32),
            d_decoder_output: pass.decoder_output.mapv(|_| 1.0f32),
        };
        let grads = vae.backward(&pass, &heads);
        assert!(grads.all_finite());
        assert_eq!(grads.slices().len(), vae.param_slices().len());
    }

    #[test]
    fn fresh_model_starts_near_the_prior() {
        let vae = desk_vae();
        let x = random_images(8, vae.arch(), 7);
        let out = vae.encode(&x).unwrap();
        for i in 0..8 {
            let q = out.posterior(i).unwrap();
            let kl = crate::distributions::kl_to_standard_normal(&q);
            for (d, &v) in kl.per_dim.iter().enumerate() {
                assert!(v < 0.05, "dim {d} starts active: {v}");
            }
        }
    }
}
