//! Strided 2-D convolution and its transpose, implemented with im2col/col2im
//! plus matrix multiplication.
//!
//! The transposed convolution is the exact adjoint of a mirror convolution
//! with the same geometry, so both directions share the im2col machinery and
//! gradient checks cover each other.

use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::{uniform_init, Scalar};

/// Output spatial size of a convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Output spatial size of a transposed convolution.
pub fn conv_transpose_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Unfolds `x` (B, C, H, W) into patch rows of length `C*KH*KW`, one row per
/// output position. Out-of-bounds taps stay zero.
fn im2col<F: Scalar>(x: &Array4<F>, kh: usize, kw: usize, stride: usize, pad: usize) -> Array2<F> {
    let (b, c, h, w) = x.dim();
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let row_len = c * kh * kw;
    let mut cols = Array2::<F>::zeros((b * oh * ow, row_len));
    let xs = x.as_slice().expect("standard layout");
    let cs = cols.as_slice_mut().expect("standard layout");
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * row_len;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_base = ((bi * c + ci) * h + iy as usize) * w;
                        let col_base = row + (ci * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cs[col_base + kx] = xs[x_base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into an image tensor.
fn col2im<F: Scalar>(
    cols: &Array2<F>,
    shape: (usize, usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array4<F> {
    let (b, c, h, w) = shape;
    let oh = conv_out_size(h, kh, stride, pad);
    let ow = conv_out_size(w, kw, stride, pad);
    let row_len = c * kh * kw;
    debug_assert_eq!(cols.dim(), (b * oh * ow, row_len));
    let mut x = Array4::<F>::zeros(shape);
    let xs = x.as_slice_mut().expect("standard layout");
    let cs = cols.as_slice().expect("standard layout");
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((bi * oh + oy) * ow + ox) * row_len;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let x_base = ((bi * c + ci) * h + iy as usize) * w;
                        let col_base = row + (ci * kh + ky) * kw;
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            xs[x_base + ix as usize] = xs[x_base + ix as usize] + cs[col_base + kx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Reinterprets (B, H, W, C)-ordered matrix rows as a (B, C, H, W) tensor.
fn rows_to_nchw<F: Scalar>(mat: Array2<F>, b: usize, h: usize, w: usize, c: usize) -> Array4<F> {
    let (data, _) = mat.into_raw_vec_and_offset();
    let bhwc = Array4::from_shape_vec((b, h, w, c), data).expect("row count");
    bhwc.permuted_axes([0, 3, 1, 2]).as_standard_layout().to_owned()
}

/// Flattens a (B, C, H, W) tensor into (B*H*W, C) rows.
fn nchw_to_rows<F: Scalar>(x: &Array4<F>) -> Array2<F> {
    let (b, c, h, w) = x.dim();
    let bhwc = x.view().permuted_axes([0, 2, 3, 1]);
    let flat: Vec<F> = bhwc.iter().cloned().collect();
    Array2::from_shape_vec((b * h * w, c), flat).expect("element count")
}

/// Strided convolution layer; weights are (out_channels, in_channels, KH, KW).
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

/// Forward activations retained for [`Conv2d::backward`].
pub struct Conv2dCache<F> {
    cols: Array2<F>,
    input_shape: (usize, usize, usize, usize),
}

/// Parameter gradients for a convolution layer.
#[derive(Debug, Clone)]
pub struct ConvGrad<F> {
    pub w: Array4<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = Array4::from_shape_vec(
            (out_channels, in_channels, kernel, kernel),
            uniform_init(out_channels * fan_in, fan_in, 1.0, rng),
        )
        .expect("conv weight shape");
        let b = Array1::from_vec(uniform_init(out_channels, fan_in, 1.0, rng));
        Conv2d { w, b, stride, pad }
    }

    fn w_mat(&self) -> ArrayView2<'_, F> {
        let (oc, ic, kh, kw) = self.w.dim();
        ArrayView2::from_shape((oc, ic * kh * kw), self.w.as_slice().expect("standard layout"))
            .expect("weight reshape")
    }

    pub fn forward(&self, x: &Array4<F>) -> (Array4<F>, Conv2dCache<F>) {
        let (b, _, h, w) = x.dim();
        let (oc, _, kh, kw) = self.w.dim();
        let oh = conv_out_size(h, kh, self.stride, self.pad);
        let ow = conv_out_size(w, kw, self.stride, self.pad);
        let cols = im2col(x, kh, kw, self.stride, self.pad);
        let out_mat = cols.dot(&self.w_mat().t()) + &self.b;
        let out = rows_to_nchw(out_mat, b, oh, ow, oc);
        (
            out,
            Conv2dCache {
                cols,
                input_shape: x.dim(),
            },
        )
    }

    pub fn backward(&self, cache: &Conv2dCache<F>, g_out: &Array4<F>) -> (Array4<F>, ConvGrad<F>) {
        let (oc, ic, kh, kw) = self.w.dim();
        let g_mat = nchw_to_rows(g_out);
        let g_w_mat = g_mat.t().dot(&cache.cols);
        let (g_w_data, _) = g_w_mat.into_raw_vec_and_offset();
        let g_w = Array4::from_shape_vec((oc, ic, kh, kw), g_w_data).expect("grad shape");
        let g_b = g_mat.sum_axis(Axis(0));
        let g_cols = g_mat.dot(&self.w_mat());
        let g_x = col2im(&g_cols, cache.input_shape, kh, kw, self.stride, self.pad);
        (g_x, ConvGrad { w: g_w, b: g_b })
    }
}

/// Transposed (fractionally strided) convolution layer.
///
/// Weights are stored as the mirror convolution's tensor
/// `(in_channels, out_channels, KH, KW)`; forward is that convolution's
/// input-gradient, so spatial upsampling mirrors [`Conv2d`] exactly.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<F> {
    pub w: Array4<F>,
    pub b: Array1<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> ConvTranspose2d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = Array4::from_shape_vec(
            (in_channels, out_channels, kernel, kernel),
            uniform_init(in_channels * out_channels * kernel * kernel, fan_in, 1.0, rng),
        )
        .expect("conv transpose weight shape");
        let b = Array1::from_vec(uniform_init(out_channels, fan_in, 1.0, rng));
        ConvTranspose2d { w, b, stride, pad }
    }

    fn w_mat(&self) -> ArrayView2<'_, F> {
        let (ic, oc, kh, kw) = self.w.dim();
        ArrayView2::from_shape((ic, oc * kh * kw), self.w.as_slice().expect("standard layout"))
            .expect("weight reshape")
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().1
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (b, _, h, w) = x.dim();
        let (_, oc, kh, kw) = self.w.dim();
        let oh = conv_transpose_out_size(h, kh, self.stride, self.pad);
        let ow = conv_transpose_out_size(w, kw, self.stride, self.pad);
        let x_mat = nchw_to_rows(x);
        let cols = x_mat.dot(&self.w_mat());
        let mut out = col2im(&cols, (b, oc, oh, ow), kh, kw, self.stride, self.pad);
        for (ci, &bias) in self.b.iter().enumerate() {
            out.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v + bias);
        }
        out
    }

    pub fn backward(&self, x: &Array4<F>, g_out: &Array4<F>) -> (Array4<F>, ConvGrad<F>) {
        let (b, _, h, w) = x.dim();
        let (ic, oc, kh, kw) = self.w.dim();
        let cols_g = im2col(g_out, kh, kw, self.stride, self.pad);
        let g_x_mat = cols_g.dot(&self.w_mat().t());
        let g_x = rows_to_nchw(g_x_mat, b, h, w, ic);
        let x_mat = nchw_to_rows(x);
        let g_w_mat = x_mat.t().dot(&cols_g);
        let (g_w_data, _) = g_w_mat.into_raw_vec_and_offset();
        let g_w = Array4::from_shape_vec((ic, oc, kh, kw), g_w_data).expect("grad shape");
        let g_b = g_out
            .sum_axis(Axis(3))
            .sum_axis(Axis(2))
            .sum_axis(Axis(0));
        (g_x, ConvGrad { w: g_w, b: g_b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};

    fn rand4(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array::from_shape_vec(
            shape,
            (0..shape.0 * shape.1 * shape.2 * shape.3)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_shapes_match_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv: Conv2d<f64> = Conv2d::new(1, 3, 4, 2, 1, &mut rng);
        let x = rand4((2, 1, 8, 8), &mut rng);
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (2, 3, 4, 4));

        let convt: ConvTranspose2d<f64> = ConvTranspose2d::new(3, 1, 4, 2, 1, &mut rng);
        let z = convt.forward(&y);
        assert_eq!(z.dim(), (2, 1, 8, 8));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv: Conv2d<f64> = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = rand4((2, 2, 6, 6), &mut rng);
        let probe = rand4((2, 3, 3, 3), &mut rng);
        let loss = |c: &Conv2d<f64>, x: &Array4<f64>| (&c.forward(x).0 * &probe).sum();

        let (y, cache) = conv.forward(&x);
        assert_eq!(y.dim(), probe.dim());
        let (g_x, grad) = conv.backward(&cache, &probe);

        let h = 1e-6;
        let base_w = conv.clone();
        for idx in [(0, 0, 0, 0), (1, 1, 2, 1), (2, 0, 1, 2)] {
            let mut cp = base_w.clone();
            let mut cm = base_w.clone();
            cp.w[idx] += h;
            cm.w[idx] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.w[idx]).abs() < 1e-6, "w{idx:?}: {fd} vs {}", grad.w[idx]);
        }
        for j in 0..3 {
            let mut cp = base_w.clone();
            let mut cm = base_w.clone();
            cp.b[j] += h;
            cm.b[j] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.b[j]).abs() < 1e-6, "b[{j}]");
        }
        for idx in [(0, 0, 0, 0), (1, 1, 3, 2), (0, 1, 5, 5)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - g_x[idx]).abs() < 1e-6, "x{idx:?}");
        }
    }

    #[test]
    fn conv_transpose_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let convt: ConvTranspose2d<f64> = ConvTranspose2d::new(3, 2, 4, 2, 1, &mut rng);
        let x = rand4((2, 3, 3, 3), &mut rng);
        let probe = rand4((2, 2, 6, 6), &mut rng);
        let loss = |c: &ConvTranspose2d<f64>, x: &Array4<f64>| (&c.forward(x) * &probe).sum();

        let (g_x, grad) = convt.backward(&x, &probe);

        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (2, 1, 3, 3), (1, 0, 2, 1)] {
            let mut cp = convt.clone();
            let mut cm = convt.clone();
            cp.w[idx] += h;
            cm.w[idx] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.w[idx]).abs() < 1e-6, "w{idx:?}");
        }
        for j in 0..2 {
            let mut cp = convt.clone();
            let mut cm = convt.clone();
            cp.b[j] += h;
            cm.b[j] -= h;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / (2.0 * h);
            assert!((fd - grad.b[j]).abs() < 1e-6, "b[{j}]");
        }
        for idx in [(0, 0, 0, 0), (1, 2, 2, 2), (0, 1, 1, 2)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (loss(&convt, &xp) - loss(&convt, &xm)) / (2.0 * h);
            assert!((fd - g_x[idx]).abs() < 1e-6, "x{idx:?}");
        }
    }

    #[test]
    fn conv_transpose_is_adjoint_of_mirror_conv() {
        // <conv(x), y> == <x, convT(y)> when convT shares the conv's weights
        // and has zero bias.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv: Conv2d<f64> = Conv2d::new(2, 3, 4, 2, 1, &mut rng);
        // Conv2d weights are (oc=3, ic=2, kh, kw), which is exactly the
        // ConvTranspose2d layout (in=3, out=2, kh, kw) for the adjoint map.
        let convt = ConvTranspose2d {
            w: conv.w.clone(),
            b: Array1::zeros(2),
            stride: 2,
            pad: 1,
        };

        let x = rand4((1, 2, 8, 8), &mut rng);
        let y = rand4((1, 3, 4, 4), &mut rng);
        let mut conv_nobias = conv.clone();
        conv_nobias.b.fill(0.0);
        let lhs = (&conv_nobias.forward(&x).0 * &y).sum();
        let rhs = (&convt.forward(&y) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }
}
