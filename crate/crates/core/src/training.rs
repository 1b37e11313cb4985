//! Penalized squared-error loss, exact backpropagation, dropout and minibatch
//! SGD for [`NetworkSpec`] networks.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::linear;
use crate::network::{
    self, column_sums, forward_masked, hadamard_derivative, ForwardCache, InitScheme, Masks,
    NetworkSpec, OutputHead, Parameters,
};
use crate::rng;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    None,
    L1,
    L2,
    /// `ρ Σ|w| + (1-ρ) Σw²`.
    ElasticNet { mixing: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyScope {
    #[default]
    AllWeights,
    OutputOnly,
}

/// `λ φ(β, W)`. Biases and the intercept are never penalized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltySpec {
    #[serde(default)]
    pub kind: PenaltyKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub scope: PenaltyScope,
}

impl PenaltySpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn l1(lambda: f64) -> Self {
        PenaltySpec {
            kind: PenaltyKind::L1,
            lambda,
            scope: PenaltyScope::AllWeights,
        }
    }

    pub fn l2(lambda: f64) -> Self {
        PenaltySpec {
            kind: PenaltyKind::L2,
            lambda,
            scope: PenaltyScope::AllWeights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("penalty lambda must be >= 0, got {}", self.lambda)));
        }
        if let PenaltyKind::ElasticNet { mixing } = self.kind {
            if !(0.0..=1.0).contains(&mixing) {
                return Err(Error::invalid(format!("elastic net mixing must lie in [0, 1], got {mixing}")));
            }
        }
        Ok(())
    }

    fn weights<'a, T: Scalar>(&self, params: &'a Parameters<T>) -> Box<dyn Iterator<Item = &'a T> + 'a> {
        let out = params.input_weights.iter().chain(params.factor_weights.iter());
        match self.scope {
            PenaltyScope::OutputOnly => Box::new(out),
            PenaltyScope::AllWeights => {
                Box::new(params.weights.iter().flat_map(|w| w.iter()).chain(out))
            }
        }
    }

    fn mixing(&self) -> Option<(f64, f64)> {
        match self.kind {
            PenaltyKind::None => None,
            PenaltyKind::L1 => Some((1.0, 0.0)),
            PenaltyKind::L2 => Some((0.0, 1.0)),
            PenaltyKind::ElasticNet { mixing } => Some((mixing, 1.0 - mixing)),
        }
    }

    /// `λ φ` evaluated at `params`.
    pub fn value<T: Scalar>(&self, params: &Parameters<T>) -> T {
        let Some((l1, l2)) = self.mixing() else {
            return T::zero();
        };
        if self.lambda == 0.0 {
            return T::zero();
        }
        let (a, b) = (T::lit(l1), T::lit(l2));
        let phi: T = self.weights(params).map(|&w| a * w.abs() + b * w * w).sum();
        T::lit(self.lambda) * phi
    }

    /// Adds `∂(λφ)/∂θ` to `grad`; the L1 subgradient at zero is zero.
    pub fn add_gradient<T: Scalar>(&self, params: &Parameters<T>, grad: &mut Parameters<T>) {
        let Some((l1, l2)) = self.mixing() else {
            return;
        };
        if self.lambda == 0.0 {
            return;
        }
        let a = T::lit(self.lambda * l1);
        let b = T::lit(2.0 * self.lambda * l2);
        let term = |w: T| {
            let s = if w > T::zero() {
                T::one()
            } else if w < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            a * s + b * w
        };
        grad.input_weights.zip_mut_with(&params.input_weights, |g, &w| *g += term(w));
        grad.factor_weights.zip_mut_with(&params.factor_weights, |g, &w| *g += term(w));
        if self.scope == PenaltyScope::AllWeights {
            for (g, w) in grad.weights.iter_mut().zip(&params.weights) {
                g.zip_mut_with(w, |g, &w| *g += term(w));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutSite {
    InputOnly,
    #[default]
    AllHidden,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Dropout retain probability.
    pub keep_prob: f64,
    pub dropout_site: DropoutSite,
    pub shuffle: bool,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            keep_prob: 0.5,
            dropout_site: DropoutSite::AllHidden,
            shuffle: true,
            lr_decay: 0.99,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self, n_obs: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > n_obs {
            return Err(Error::invalid(format!(
                "batch_size must lie in 1..={n_obs}, got {}",
                self.batch_size
            )));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::invalid(format!("keep_prob must lie in (0, 1], got {}", self.keep_prob)));
        }
        if !(self.lr_decay >= 0.0) {
            return Err(Error::invalid("lr_decay must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace<T> {
    /// Full-sample penalized loss after each epoch, without dropout.
    pub epoch_loss: Vec<T>,
    pub final_loss: T,
}

fn check_targets<T: Scalar>(x: ArrayView2<T>, r: ArrayView1<T>) -> Result<()> {
    if r.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: "targets vs input rows",
            expected: x.nrows(),
            actual: r.len(),
        });
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    Ok(())
}

fn check_trainable(spec: &NetworkSpec) -> Result<()> {
    match spec.hidden.iter().find(|l| !l.activation.is_trainable()) {
        Some(l) => Err(Error::Untrainable(l.activation.name())),
        None => Ok(()),
    }
}

fn mse<T: Scalar>(r: ArrayView1<T>, pred: ArrayView1<T>) -> T {
    let n = T::lit(r.len().max(1) as f64);
    r.iter()
        .zip(pred.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<T>()
        / n
}

/// `(1/T) Σ (R_t − R̂_t)² + λ φ`.
pub fn loss<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    x: ArrayView2<T>,
    r: ArrayView1<T>,
    penalty: &PenaltySpec,
) -> Result<T> {
    check_targets(x, r)?;
    let cache = network::forward(spec, params, x)?;
    let value = mse(r, cache.predictions.view()) + penalty.value(params);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Exact gradient of [`loss`] at the parameters that produced `cache`.
/// Dropout masks recorded in the cache are honoured.
pub fn backward<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    cache: &ForwardCache<T>,
    r: ArrayView1<T>,
    penalty: &PenaltySpec,
) -> Result<Parameters<T>> {
    check_trainable(spec)?;
    if r.len() != cache.predictions.len() {
        return Err(Error::DimensionMismatch {
            context: "targets vs cached predictions",
            expected: cache.predictions.len(),
            actual: r.len(),
        });
    }
    Ok(backward_unchecked(spec, params, cache, r, penalty))
}

fn backward_unchecked<T: Scalar>(
    spec: &NetworkSpec,
    params: &Parameters<T>,
    cache: &ForwardCache<T>,
    r: ArrayView1<T>,
    penalty: &PenaltySpec,
) -> Parameters<T> {
    let n = T::lit(cache.predictions.len() as f64);
    let scale = -T::lit(2.0) / n;
    let mut d_out = Array1::from_shape_fn(r.len(), |t| scale * (r[t] - cache.predictions[t]));
    if spec.head == OutputHead::Classification {
        d_out.zip_mut_with(&cache.predictions, |d, &p| *d *= p * (T::one() - p));
    }

    let mut grad = Parameters::zeros(spec);
    grad.intercept = d_out.sum();
    if spec.skip_input_to_output {
        grad.input_weights = cache.input.t().dot(&d_out);
    }
    grad.factor_weights = cache.factors().t().dot(&d_out);

    if spec.depth() > 0 {
        let d_col = d_out.view().insert_axis(Axis(1));
        let mut d_post: Array2<T> =
            d_col.dot(&params.factor_weights.view().insert_axis(Axis(0)));
        for l in (0..spec.depth()).rev() {
            if let Some(m) = &cache.masks[l] {
                d_post *= m;
            }
            hadamard_derivative(&mut d_post, &cache.pre[l], spec.hidden[l].activation);
            let prev = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grad.weights[l] = d_post.t().dot(prev);
            grad.biases[l] = column_sums(&d_post);
            if l > 0 {
                d_post = d_post.dot(&params.weights[l]);
            }
        }
    }
    penalty.add_gradient(params, &mut grad);
    grad
}

fn bernoulli_mask<T: Scalar>(
    shape: (usize, usize),
    keep_prob: f64,
    value: T,
    rng: &mut rng::Rng,
) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < keep_prob {
            value
        } else {
            T::zero()
        }
    })
}

/// Multiplies each entry of `x` by an independent Bernoulli(`keep_prob`) draw.
pub fn apply_dropout<T: Scalar>(x: ArrayView2<T>, keep_prob: f64, seed: u64) -> Result<Array2<T>> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::invalid(format!("keep_prob must lie in (0, 1], got {keep_prob}")));
    }
    if keep_prob == 1.0 {
        return Ok(x.to_owned());
    }
    let mut r = rng::seeded(seed);
    let mask = bernoulli_mask(x.dim(), keep_prob, T::one(), &mut r);
    Ok(&x * &mask)
}

/// Closed-form expectation of the input-dropout loss of a linear model `ŷ = Xw`:
///
/// ```text
/// ‖y − p X w‖² + p(1−p) ‖diag(XᵀX)^{1/2} w‖²
/// ```
pub fn dropout_ridge_objective<T: Scalar>(
    y: ArrayView1<T>,
    x: ArrayView2<T>,
    w: ArrayView1<T>,
    keep_prob: f64,
) -> Result<T> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "dropout objective rows",
            expected: y.len(),
            actual: x.nrows(),
        });
    }
    if x.ncols() != w.len() {
        return Err(Error::DimensionMismatch {
            context: "dropout objective columns",
            expected: w.len(),
            actual: x.ncols(),
        });
    }
    let p = T::lit(keep_prob);
    let fit = x.dot(&w);
    let data: T = y
        .iter()
        .zip(fit.iter())
        .map(|(&yt, &ft)| (yt - p * ft) * (yt - p * ft))
        .sum();
    let penalty: T = x
        .columns()
        .into_iter()
        .zip(w.iter())
        .map(|(col, &wj)| col.dot(&col) * wj * wj)
        .sum();
    Ok(data + p * (T::one() - p) * penalty)
}

fn draw_masks<T: Scalar>(
    spec: &NetworkSpec,
    rows: usize,
    cfg: &SgdConfig,
    rng: &mut rng::Rng,
) -> Option<Masks<T>> {
    if cfg.keep_prob >= 1.0 {
        return None;
    }
    let scaled = T::lit(1.0 / cfg.keep_prob);
    match cfg.dropout_site {
        DropoutSite::Off => None,
        DropoutSite::InputOnly => Some(Masks {
            input: Some(bernoulli_mask((rows, spec.input_dim), cfg.keep_prob, scaled, rng)),
            hidden: Vec::new(),
        }),
        DropoutSite::AllHidden => Some(Masks {
            input: None,
            hidden: spec
                .hidden
                .iter()
                .map(|l| Some(bernoulli_mask((rows, l.width), cfg.keep_prob, scaled, rng)))
                .collect(),
        }),
    }
}

/// Minibatch SGD on [`loss`].
///
/// Dropout uses inverted scaling (kept units are divided by `keep_prob` while
/// training), so the returned parameters are used as-is at prediction time.
pub fn sgd_fit<T: Scalar>(
    spec: &NetworkSpec,
    init: Parameters<T>,
    x: ArrayView2<T>,
    r: ArrayView1<T>,
    penalty: &PenaltySpec,
    cfg: &SgdConfig,
) -> Result<(Parameters<T>, TrainingTrace<T>)> {
    spec.validate()?;
    check_trainable(spec)?;
    init.check(spec)?;
    network::check_inputs(spec, x)?;
    check_targets(x, r)?;
    penalty.validate()?;
    let n = x.nrows();
    cfg.validate(n)?;

    let mut params = init;
    let mut rng = rng::seeded(rng::derive_seed(cfg.seed, &[rng::TAG_SGD]));
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = cfg.learning_rate;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let rb = r.select(Axis(0), batch);
            let masks = draw_masks(spec, batch.len(), cfg, &mut rng);
            let cache = forward_masked(spec, &params, xb.view(), masks.as_ref());
            let grad = backward_unchecked(spec, &params, &cache, rb.view(), penalty);
            params.add_scaled(T::lit(-lr), &grad);
        }
        let cache = forward_masked(spec, &params, x, None);
        let value = mse(r, cache.predictions.view()) + penalty.value(&params);
        if !value.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_loss.push(value);
        lr *= cfg.lr_decay;
    }
    let final_loss = *epoch_loss.last().expect("epochs >= 1");
    Ok((params, TrainingTrace { epoch_loss, final_loss }))
}

/// Per-column affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

impl<T: Scalar> Standardizer<T> {
    /// Columns with zero spread keep scale 1.
    pub fn fit(x: ArrayView2<T>) -> Self {
        let mean = linalg::column_means(x);
        let mut scale = linalg::column_std(x, mean.view());
        scale.mapv_inplace(|s| if s > T::epsilon() { s } else { T::one() });
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut out = &x - &self.mean;
        out /= &self.scale;
        out
    }
}

/// A trained network together with the input/target scaling used to train it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepFactorModel<T> {
    pub spec: NetworkSpec,
    pub params: Parameters<T>,
    pub inputs: Standardizer<T>,
    pub target_mean: T,
    pub target_scale: T,
    pub trace: TrainingTrace<T>,
}

impl<T: Scalar> DeepFactorModel<T> {
    /// Standardizes `x` (and `y` for regression heads), initializes from
    /// `cfg.seed` and trains with [`sgd_fit`].
    pub fn fit(
        spec: &NetworkSpec,
        x: ArrayView2<T>,
        y: ArrayView1<T>,
        penalty: &PenaltySpec,
        cfg: &SgdConfig,
        init: InitScheme,
    ) -> Result<Self> {
        spec.validate()?;
        network::check_inputs(spec, x)?;
        check_targets(x, y)?;
        let inputs = Standardizer::fit(x);
        let xs = inputs.transform(x);
        let (target_mean, target_scale) = match spec.head {
            OutputHead::Regression => {
                let m = linalg::mean(y);
                let var = y.iter().map(|&v| (v - m) * (v - m)).sum::<T>()
                    / T::lit(y.len().max(1) as f64);
                let s = var.sqrt();
                (m, if s > T::epsilon() { s } else { T::one() })
            }
            OutputHead::Classification => (T::zero(), T::one()),
        };
        let ys = y.mapv(|v| (v - target_mean) / target_scale);
        let init = network::init_params(spec, cfg.seed, init);
        let (params, trace) = sgd_fit(spec, init, xs.view(), ys.view(), penalty, cfg)?;
        Ok(DeepFactorModel {
            spec: spec.clone(),
            params,
            inputs,
            target_mean,
            target_scale,
            trace,
        })
    }

    /// Picks `λ` by K-fold cross-validation (`folds` holds the validation
    /// rows of each fold; ties go to the larger `λ`) and refits on all rows.
    #[allow(clippy::too_many_arguments)]
    pub fn fit_select_lambda(
        spec: &NetworkSpec,
        x: ArrayView2<T>,
        y: ArrayView1<T>,
        penalty: &PenaltySpec,
        lambdas: &[f64],
        folds: &[Vec<usize>],
        cfg: &SgdConfig,
        init: InitScheme,
    ) -> Result<(Self, f64)> {
        if lambdas.is_empty() {
            return Err(Error::invalid("lambda grid is empty"));
        }
        if folds.is_empty() || folds.iter().any(|f| f.is_empty() || f.len() >= x.nrows()) {
            return Err(Error::invalid("every fold needs validation and training rows"));
        }
        let mut totals = vec![0.0; lambdas.len()];
        for val in folds {
            let (xtr, ytr, xva, yva) = linear::split_rows(x, y, val);
            let fold_cfg = SgdConfig {
                batch_size: cfg.batch_size.min(xtr.nrows()),
                ..*cfg
            };
            for (total, &lambda) in totals.iter_mut().zip(lambdas) {
                let pen = PenaltySpec { lambda, ..*penalty };
                let m = Self::fit(spec, xtr.view(), ytr.view(), &pen, &fold_cfg, init)?;
                let pred = m.predict(xva.view())?;
                *total += mse(yva.view(), pred.view()).as_f64();
            }
        }
        let mut best = 0;
        for i in 1..lambdas.len() {
            let (e, b) = (totals[i], totals[best]);
            if e < b || (e == b && lambdas[i] > lambdas[best]) {
                best = i;
            }
        }
        let pen = PenaltySpec {
            lambda: lambdas[best],
            ..*penalty
        };
        Ok((Self::fit(spec, x, y, &pen, cfg, init)?, lambdas[best]))
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        let xs = self.inputs.transform(x);
        let out = network::predict(&self.spec, &self.params, xs.view())?;
        Ok(out.mapv(|v| v * self.target_scale + self.target_mean))
    }

    /// Latent factors on the standardized input scale.
    pub fn factors(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let xs = self.inputs.transform(x);
        network::extract_factors(&self.spec, &self.params, xs.view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, Activation, LayerSpec};
    use ndarray::array;

    fn no_dropout() -> SgdConfig {
        SgdConfig {
            dropout_site: DropoutSite::Off,
            keep_prob: 1.0,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn loss_examples() {
        let spec = NetworkSpec {
            input_dim: 1,
            hidden: vec![],
            skip_input_to_output: false,
            head: OutputHead::Regression,
        };
        let mut p = Parameters::<f64>::zeros(&spec);
        let x = array![[1.0], [2.0]];
        // R̂ = 0 everywhere
        let l = loss(&spec, &p, x.view(), array![1.0, -1.0].view(), &PenaltySpec::none()).unwrap();
        assert_eq!(l, 1.0);
        // single weight w = 2 with zero residuals and L2 λ = 0.5 → 0.5 · 4
        p.factor_weights[0] = 2.0;
        let l = loss(&spec, &p, x.view(), array![2.0, 4.0].view(), &PenaltySpec::l2(0.5)).unwrap();
        assert_eq!(l, 2.0);
        let l = loss(&spec, &p, x.view(), array![2.0, 4.0].view(), &PenaltySpec::none()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn penalty_skips_biases_and_intercept() {
        let spec = NetworkSpec::relu_skip(2, &[2]);
        let mut p = Parameters::<f64>::zeros(&spec);
        p.intercept = 5.0;
        p.biases[0].fill(3.0);
        assert_eq!(PenaltySpec::l1(1.0).value(&p), 0.0);
        p.weights[0][[0, 0]] = -2.0;
        p.input_weights[1] = 1.0;
        assert_eq!(PenaltySpec::l1(1.0).value(&p), 3.0);
        let out_only = PenaltySpec { scope: PenaltyScope::OutputOnly, ..PenaltySpec::l1(1.0) };
        assert_eq!(out_only.value(&p), 1.0);
        let en = PenaltySpec { kind: PenaltyKind::ElasticNet { mixing: 0.25 }, lambda: 2.0, ..PenaltySpec::default() };
        assert_eq!(en.value(&p), 2.0 * (0.25 * 3.0 + 0.75 * 5.0));
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let spec = NetworkSpec::relu_skip(3, &[4, 2]);
        let p: Parameters<f64> = init_params(&spec, 3, InitScheme::ScaledUniform);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i as f64 * 0.3 - j as f64).sin());
        let cache = network::forward(&spec, &p, x.view()).unwrap();
        let r = cache.predictions.clone();
        let g = backward(&spec, &p, &cache, r.view(), &PenaltySpec::none()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_head_gradient_matches_closed_form() {
        let spec = NetworkSpec {
            input_dim: 3,
            hidden: vec![],
            skip_input_to_output: true,
            head: OutputHead::Regression,
        };
        let mut p = Parameters::<f64>::zeros(&spec);
        p.input_weights = array![0.5, -1.0, 2.0];
        p.intercept = 0.1;
        let x = array![[1.0, 2.0, 0.0], [0.5, -1.0, 1.0], [2.0, 0.0, -1.0], [1.0, 1.0, 1.0]];
        let r = array![1.0, 0.0, -2.0, 3.0];
        let lambda = 0.3;
        let cache = network::forward(&spec, &p, x.view()).unwrap();
        let g = backward(&spec, &p, &cache, r.view(), &PenaltySpec::l2(lambda)).unwrap();
        let resid = &r - &cache.predictions;
        let expected = x.t().dot(&resid) * (-2.0 / 4.0) + &p.input_weights * (2.0 * lambda);
        for (a, b) in g.input_weights.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn heaviside_is_rejected() {
        let spec = NetworkSpec {
            input_dim: 1,
            hidden: vec![LayerSpec { width: 2, activation: Activation::Heaviside }],
            skip_input_to_output: true,
            head: OutputHead::Regression,
        };
        let p = Parameters::<f64>::zeros(&spec);
        let x = array![[1.0], [2.0]];
        let cache = network::forward(&spec, &p, x.view()).unwrap();
        assert!(matches!(
            backward(&spec, &p, &cache, array![0.0, 1.0].view(), &PenaltySpec::none()),
            Err(Error::Untrainable("heaviside"))
        ));
        let cfg = SgdConfig { batch_size: 1, ..no_dropout() };
        assert!(matches!(
            sgd_fit(&spec, p, x.view(), array![0.0, 1.0].view(), &PenaltySpec::none(), &cfg),
            Err(Error::Untrainable(_))
        ));
    }

    #[test]
    fn recovers_line_and_is_deterministic() {
        let spec = NetworkSpec {
            input_dim: 1,
            hidden: vec![],
            skip_input_to_output: false,
            head: OutputHead::Regression,
        };
        let x = Array2::from_shape_fn((40, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 39.0);
        let y = x.column(0).mapv(|v| 2.0 * v + 1.0);
        let cfg = SgdConfig { epochs: 500, batch_size: 8, seed: 11, lr_decay: 1.0, ..no_dropout() };
        let init = Parameters::zeros(&spec);
        let (p, trace) = sgd_fit(&spec, init.clone(), x.view(), y.view(), &PenaltySpec::none(), &cfg).unwrap();
        assert!((p.intercept - 1.0).abs() < 1e-3, "alpha {}", p.intercept);
        assert!((p.factor_weights[0] - 2.0).abs() < 1e-3, "beta {}", p.factor_weights[0]);
        let (_, again) = sgd_fit(&spec, init, x.view(), y.view(), &PenaltySpec::none(), &cfg).unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn divergence_reports_epoch() {
        let spec = NetworkSpec::relu_skip(1, &[2]);
        let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64 * 100.0);
        let y = x.column(0).to_owned();
        let cfg = SgdConfig { learning_rate: 10.0, batch_size: 10, ..no_dropout() };
        let init = init_params(&spec, 0, InitScheme::ScaledUniform);
        let err = sgd_fit(&spec, init, x.view(), y.view(), &PenaltySpec::none(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn config_validation() {
        let cfg = SgdConfig::default();
        assert!(cfg.validate(10).is_err());
        assert!(cfg.validate(32).is_ok());
        assert!(SgdConfig { keep_prob: 0.0, ..cfg }.validate(100).is_err());
        assert!(SgdConfig { keep_prob: 1.5, ..cfg }.validate(100).is_err());
    }

    #[test]
    fn dropout_examples() {
        let x = Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64);
        assert_eq!(apply_dropout(x.view(), 1.0, 5).unwrap(), x);
        let z = Array2::<f64>::zeros((3, 4));
        assert_eq!(apply_dropout(z.view(), 0.3, 5).unwrap(), z);
        assert_eq!(apply_dropout(x.view(), 0.5, 9).unwrap(), apply_dropout(x.view(), 0.5, 9).unwrap());
        let ones = Array2::<f64>::ones((100_000, 1));
        let mean = apply_dropout(ones.view(), 0.5, 1).unwrap().mean().unwrap();
        assert!((0.49..=0.51).contains(&mean), "mean {mean}");
    }

    #[test]
    fn dropout_objective_examples() {
        let y = array![1.0];
        let x = array![[2.0]];
        let w = array![1.0];
        assert_eq!(dropout_ridge_objective(y.view(), x.view(), w.view(), 0.5).unwrap(), 1.0);
        let y = array![1.0, 2.0];
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let w = array![0.5, 0.5];
        // p = 1: plain squared error
        assert_eq!(dropout_ridge_objective(y.view(), x.view(), w.view(), 1.0).unwrap(), 0.25 + 2.25);
    }

    #[test]
    fn standardizer_centers_and_scales() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view());
        let z = s.transform(x.view());
        assert_eq!(z, array![[-1.0, 0.0], [1.0, 0.0]]);
    }
}
