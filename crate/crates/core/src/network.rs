//! Feedforward deep factor network.
//!
//! A stack of semi-affine layers `Z⁽ˡ⁾ = f_l(W⁽ˡ⁾ Z⁽ˡ⁻¹⁾ + b⁽ˡ⁾)` with `Z⁽⁰⁾ = X`
//! produces the latent factors `F = Z⁽ᴸ⁾`. A single output unit combines them
//! with an optional skip connection from the raw predictors:
//!
//! ```text
//! R̂ = α + β·X + β_f·F
//! ```
//!
//! Rows of every matrix are time periods.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::sigmoid;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Heaviside,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
            Activation::Heaviside => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `z`; `None` for Heaviside.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> Option<T> {
        Some(match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Identity => T::one(),
            Activation::Heaviside => return None,
        })
    }

    pub fn is_trainable(self) -> bool {
        self != Activation::Heaviside
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Heaviside => "heaviside",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    #[default]
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<LayerSpec>,
    #[serde(rename = "skip", default = "default_skip")]
    pub skip_input_to_output: bool,
    #[serde(default)]
    pub head: OutputHead,
}

fn default_skip() -> bool {
    true
}

impl NetworkSpec {
    /// ReLU network with the skip connection and a regression head.
    pub fn relu_skip(input_dim: usize, widths: &[usize]) -> Self {
        NetworkSpec {
            input_dim,
            hidden: widths
                .iter()
                .map(|&width| LayerSpec {
                    width,
                    activation: Activation::Relu,
                })
                .collect(),
            skip_input_to_output: true,
            head: OutputHead::Regression,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("network input_dim must be at least 1"));
        }
        if let Some(i) = self.hidden.iter().position(|l| l.width == 0) {
            return Err(Error::invalid(format!("hidden layer {} has width 0", i + 1)));
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Width of `F`; the input itself plays that role when there are no hidden layers.
    pub fn factor_dim(&self) -> usize {
        self.hidden.last().map_or(self.input_dim, |l| l.width)
    }

    /// Number of inputs consumed by the output unit (besides the intercept).
    pub fn output_fan_in(&self) -> usize {
        self.factor_dim() + if self.skip_input_to_output { self.input_dim } else { 0 }
    }

    /// `[p, N_1, ..., N_L]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.hidden.iter().map(|l| l.width))
            .collect()
    }

    /// Architecture label such as `32-16-8`.
    pub fn label(&self) -> String {
        self.hidden
            .iter()
            .map(|l| l.width.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    ScaledUniform,
    StandardNormal,
}

/// Trainable weights of a [`NetworkSpec`]. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters<T> {
    /// `W⁽ˡ⁾`, shape `N_l × N_{l-1}`.
    pub weights: Vec<Array2<T>>,
    /// `b⁽ˡ⁾`, length `N_l`.
    pub biases: Vec<Array1<T>>,
    /// `α`.
    pub intercept: T,
    /// `β` on the raw inputs; empty when the skip connection is off.
    pub input_weights: Array1<T>,
    /// `β_f` on the factors.
    pub factor_weights: Array1<T>,
}

impl<T: Scalar> Parameters<T> {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let dims = spec.layer_dims();
        Parameters {
            weights: dims
                .windows(2)
                .map(|d| Array2::zeros((d[1], d[0])))
                .collect(),
            biases: dims[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            intercept: T::zero(),
            input_weights: Array1::zeros(if spec.skip_input_to_output {
                spec.input_dim
            } else {
                0
            }),
            factor_weights: Array1::zeros(spec.factor_dim()),
        }
    }

    /// Checks shapes against `spec` and that every entry is finite.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let dims = spec.layer_dims();
        if self.weights.len() != spec.depth() || self.biases.len() != spec.depth() {
            return Err(Error::DimensionMismatch {
                context: "parameter layer count",
                expected: spec.depth(),
                actual: self.weights.len(),
            });
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.dim() != (dims[l + 1], dims[l]) {
                return Err(Error::DimensionMismatch {
                    context: "hidden weight shape",
                    expected: dims[l + 1] * dims[l],
                    actual: w.len(),
                });
            }
            if b.len() != dims[l + 1] {
                return Err(Error::DimensionMismatch {
                    context: "hidden bias length",
                    expected: dims[l + 1],
                    actual: b.len(),
                });
            }
        }
        let beta_len = if spec.skip_input_to_output {
            spec.input_dim
        } else {
            0
        };
        if self.input_weights.len() != beta_len {
            return Err(Error::DimensionMismatch {
                context: "input weight length",
                expected: beta_len,
                actual: self.input_weights.len(),
            });
        }
        if self.factor_weights.len() != spec.factor_dim() {
            return Err(Error::DimensionMismatch {
                context: "factor weight length",
                expected: spec.factor_dim(),
                actual: self.factor_weights.len(),
            });
        }
        if !self.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
            + 1
            + self.input_weights.len()
            + self.factor_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All entries in a fixed order: per layer `W` then `b`, then `α`, `β`, `β_f`.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .chain(std::iter::once(&self.intercept))
            .chain(self.input_weights.iter())
            .chain(self.factor_weights.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
            .chain(std::iter::once(&mut self.intercept))
            .chain(self.input_weights.iter_mut())
            .chain(self.factor_weights.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.len(), "flat parameter length");
        for (dst, &src) in self.iter_mut().zip(values) {
            *dst = src;
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, scale: T, other: &Parameters<T>) {
        for (a, &b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }

    /// Sum of squared hidden-layer weights (biases excluded).
    pub fn hidden_weight_norm_sq(&self) -> T {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .map(|&w| w * w)
            .sum()
    }
}

pub fn init_params<T: Scalar>(spec: &NetworkSpec, seed: u64, scheme: InitScheme) -> Parameters<T> {
    let mut params = Parameters::zeros(spec);
    let mut rng = rng::seeded(rng::derive_seed(seed, &[rng::TAG_INIT]));
    let draw = |fan_in: usize, fan_out: usize, rng: &mut rng::Rng| -> T {
        match scheme {
            InitScheme::ScaledUniform => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                T::lit(rng.random_range(-bound..=bound))
            }
            InitScheme::StandardNormal => T::lit(rng::standard_normal(rng)),
        }
    };
    for w in params.weights.iter_mut() {
        let (fan_out, fan_in) = w.dim();
        w.mapv_inplace(|_| draw(fan_in, fan_out, &mut rng));
    }
    let fan_in = spec.output_fan_in();
    params
        .input_weights
        .mapv_inplace(|_| draw(fan_in, 1, &mut rng));
    params
        .factor_weights
        .mapv_inplace(|_| draw(fan_in, 1, &mut rng));
    params
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Inputs as consumed by layer 1 and the skip connection (after any input dropout).
    pub input: Array2<T>,
    /// Pre-activations `W⁽ˡ⁾Z⁽ˡ⁻¹⁾ + b⁽ˡ⁾`, `T × N_l`.
    pub pre: Vec<Array2<T>>,
    /// Activations `Z⁽ˡ⁾` as consumed downstream (after any hidden dropout).
    pub post: Vec<Array2<T>>,
    /// Hidden dropout masks, already divided by the keep probability.
    pub masks: Vec<Option<Array2<T>>>,
    /// Affine output `α + β·X + β_f·F` before the head.
    pub linear_output: Array1<T>,
    pub predictions: Array1<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Latent factors `F_t`, `T × N_L`.
    pub fn factors(&self) -> ArrayView2<'_, T> {
        self.post.last().unwrap_or(&self.input).view()
    }
}

/// Dropout masks for one forward pass. Entries are `0` or `1/keep_prob`.
#[derive(Debug, Clone, Default)]
pub(crate) struct Masks<T> {
    pub input: Option<Array2<T>>,
    pub hidden: Vec<Option<Array2<T>>>,
}

pub fn forward<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    x: ArrayView2<T>,
) -> Result<ForwardCache<T>> {
    params.check(spec)?;
    check_inputs(spec, x)?;
    Ok(forward_masked(spec, params, x, None))
}

pub(crate) fn check_inputs<T: Scalar>(spec: &NetworkSpec, x: ArrayView2<T>) -> Result<()> {
    if x.ncols() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "network input columns",
            expected: spec.input_dim,
            actual: x.ncols(),
        });
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network input"));
    }
    Ok(())
}

/// Forward pass without validation; `masks` applies dropout.
pub(crate) fn forward_masked<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    x: ArrayView2<T>,
    masks: Option<&Masks<T>>,
) -> ForwardCache<T> {
    let input = match masks.and_then(|m| m.input.as_ref()) {
        Some(m) => &x * m,
        None => x.to_owned(),
    };
    let mut pre = Vec::with_capacity(spec.depth());
    let mut post: Vec<Array2<T>> = Vec::with_capacity(spec.depth());
    let mut used_masks = Vec::with_capacity(spec.depth());
    for (l, layer) in spec.hidden.iter().enumerate() {
        let prev = post.last().unwrap_or(&input);
        let mut z = prev.dot(&params.weights[l].t());
        z += &params.biases[l];
        let mut a = z.mapv(|v| layer.activation.apply(v));
        let mask = masks.and_then(|m| m.hidden.get(l).cloned().flatten());
        if let Some(m) = &mask {
            a *= m;
        }
        pre.push(z);
        post.push(a);
        used_masks.push(mask);
    }
    let factors = post.last().unwrap_or(&input);
    let mut linear = factors.dot(&params.factor_weights);
    if spec.skip_input_to_output {
        linear += &input.dot(&params.input_weights);
    }
    linear.mapv_inplace(|v| v + params.intercept);
    let predictions = match spec.head {
        OutputHead::Regression => linear.clone(),
        OutputHead::Classification => linear.mapv(sigmoid),
    };
    ForwardCache {
        input,
        pre,
        post,
        masks: used_masks,
        linear_output: linear,
        predictions,
    }
}

pub fn predict<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    x: ArrayView2<T>,
) -> Result<Array1<T>> {
    forward(spec, params, x).map(|c| c.predictions)
}

/// Latent factors `F_t = Z⁽ᴸ⁾`, one row per observation.
pub fn extract_factors<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    x: ArrayView2<T>,
) -> Result<Array2<T>> {
    forward(spec, params, x).map(|c| c.factors().to_owned())
}

/// Row sums helper shared with the trainer.
pub(crate) fn column_sums<T: Scalar>(m: &Array2<T>) -> Array1<T> {
    m.sum_axis(Axis(0))
}

pub(crate) fn hadamard_derivative<T: Scalar>(
    grad: &mut Array2<T>,
    pre: &Array2<T>,
    activation: Activation,
) {
    Zip::from(grad).and(pre).for_each(|g, &z| {
        *g *= activation.derivative(z).unwrap_or_else(T::zero);
    });
}
