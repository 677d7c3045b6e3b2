//! Minimal neural-network building blocks with hand-derived backpropagation.
//!
//! Layers are generic over the float type: training runs in `f32`, while the
//! gradient-check suites instantiate the same code in `f64` so central finite
//! differences are meaningful. No layer owns RNG state; initialization takes
//! an explicit seeded generator and parameter updates are pure functions of
//! (parameters, gradients).

pub mod conv;

use ndarray::{Array1, Array2, Axis, NdFloat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use conv::{Conv2d, ConvTranspose2d};

/// Float type the layer stack is generic over.
pub trait Scalar: NdFloat {}
impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from(x).expect("f64 -> float cast")
}

/// Draws `n` values from the fan-in-scaled uniform `U(-g/sqrt(fan_in), g/sqrt(fan_in))`.
pub(crate) fn uniform_init<F: Scalar>(n: usize, fan_in: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<F> {
    let bound = gain / (fan_in as f64).sqrt();
    (0..n).map(|_| cast(rng.random_range(-bound..bound))).collect()
}

/// Fully connected layer `y = x W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone)]
pub struct Dense<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

/// Parameter gradients produced by [`Dense::backward`].
#[derive(Debug, Clone)]
pub struct DenseGrad<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    /// Fan-in-scaled uniform initialization; `gain` rescales the bound
    /// (1.0 for hidden layers).
    pub fn new(in_dim: usize, out_dim: usize, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        let w = Array2::from_shape_vec((in_dim, out_dim), uniform_init(in_dim * out_dim, in_dim, gain, rng))
            .expect("dense weight shape");
        let b = Array1::from_vec(uniform_init(out_dim, in_dim, gain, rng));
        Dense { w, b }
    }

    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    /// Returns the gradient with respect to the input and the parameters.
    /// `x` must be the forward input.
    pub fn backward(&self, x: &Array2<F>, g_out: &Array2<F>) -> (Array2<F>, DenseGrad<F>) {
        let g_in = g_out.dot(&self.w.t());
        let g_w = x.t().dot(g_out);
        let g_b = g_out.sum_axis(Axis(0));
        (g_in, DenseGrad { w: g_w, b: g_b })
    }
}

/// Element-wise ReLU.
pub fn relu<F: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Backward of [`relu`]: passes gradient where the forward input was positive.
pub fn relu_backward<F: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
    g: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut out = g.clone();
    ndarray::Zip::from(&mut out).and(x).for_each(|o, &xi| {
        if xi <= F::zero() {
            *o = F::zero();
        }
    });
    out
}

/// Element-wise logistic sigmoid.
pub fn sigmoid<F: Scalar, D: ndarray::Dimension>(x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
    x.mapv(|v| F::one() / (F::one() + (-v).exp()))
}

/// Backward of [`sigmoid`] given the forward *output* `y`.
pub fn sigmoid_backward<F: Scalar, D: ndarray::Dimension>(
    y: &ndarray::Array<F, D>,
    g: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut out = g.clone();
    ndarray::Zip::from(&mut out).and(y).for_each(|o, &yi| {
        *o = *o * yi * (F::one() - yi);
    });
    out
}

/// Adam optimizer over a flat list of parameter slices.
///
/// Moment state is kept in `f64` regardless of the parameter float type; the
/// slot layout is fixed on the first call to [`Adam::step`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over aligned (parameter, gradient) slices.
    pub fn step<F: Scalar>(&mut self, params: &mut [&mut [F]], grads: &[&[F]]) {
        assert_eq!(params.len(), grads.len(), "param/grad slot count");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            assert_eq!(p.len(), g.len(), "slot {slot} length");
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..p.len() {
                let gi = g[i].to_f64().expect("finite gradient");
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / b1t;
                let v_hat = v[i] / b2t;
                let delta = self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                p[i] = p[i] - cast::<F>(delta);
            }
        }
    }
}
