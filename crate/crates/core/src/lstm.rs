//! Stacked LSTM with a linear readout, trained by backpropagation through time.
//!
//! Gate pre-activations are computed from one stacked weight block,
//!
//! ```text
//! (i, k, f, o) = W (x_t ; h_{t-1}) + b
//! c_t = σ(f) ⊙ c_{t-1} + σ(i) ⊙ tanh(k)
//! h_t = σ(o) ⊙ tanh(c_t)
//! ```
//!
//! with `W` of shape `4H × (D + H)`, rows ordered `i, k, f, o`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::scalar::sigmoid;
use crate::training::{SgdConfig, Standardizer, TrainingTrace};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Candidate,
    Forget,
    Output,
}

impl Gate {
    fn index(self) -> usize {
        match self {
            Gate::Input => 0,
            Gate::Candidate => 1,
            Gate::Forget => 2,
            Gate::Output => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<T> {
    /// `4H × (D + H)`.
    pub weights: Array2<T>,
    /// `4H`.
    pub bias: Array1<T>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            weights: Array2::zeros((4 * hidden_dim, input_dim + hidden_dim)),
            bias: Array1::zeros(4 * hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    /// Input-side block `W_gx` (`H × D`).
    pub fn input_block(&self, gate: Gate) -> ArrayView2<'_, T> {
        let h = self.hidden_dim;
        let g = gate.index();
        self.weights.slice(s![g * h..(g + 1) * h, ..self.input_dim])
    }

    /// Recurrent block `W_gh` (`H × H`).
    pub fn recurrent_block(&self, gate: Gate) -> ArrayView2<'_, T> {
        let h = self.hidden_dim;
        let g = gate.index();
        self.weights.slice(s![g * h..(g + 1) * h, self.input_dim..])
    }

    pub fn gate_bias(&self, gate: Gate) -> ArrayView1<'_, T> {
        let h = self.hidden_dim;
        let g = gate.index();
        self.bias.slice(s![g * h..(g + 1) * h])
    }

    pub fn check(&self) -> Result<()> {
        let (h, d) = (self.hidden_dim, self.input_dim);
        if self.weights.dim() != (4 * h, d + h) {
            return Err(Error::DimensionMismatch {
                context: "lstm weight block",
                expected: 4 * h * (d + h),
                actual: self.weights.len(),
            });
        }
        if self.bias.len() != 4 * h {
            return Err(Error::DimensionMismatch {
                context: "lstm bias",
                expected: 4 * h,
                actual: self.bias.len(),
            });
        }
        if !self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("lstm parameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState<T> {
    pub h: Array1<T>,
    pub c: Array1<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            h: Array1::zeros(hidden_dim),
            c: Array1::zeros(hidden_dim),
        }
    }
}

/// Everything one step needs for its backward pass.
struct StepCache<T> {
    input: Array1<T>,
    h_prev: Array1<T>,
    c_prev: Array1<T>,
    i: Array1<T>,
    k: Array1<T>,
    f: Array1<T>,
    o: Array1<T>,
    tanh_c: Array1<T>,
}

fn step<T: Scalar>(
    params: &LstmParams<T>,
    x: ArrayView1<T>,
    prev: &LstmState<T>,
) -> (LstmState<T>, StepCache<T>) {
    let h = params.hidden_dim;
    let d = params.input_dim;
    let mut z = params.weights.slice(s![.., ..d]).dot(&x);
    z += &params.weights.slice(s![.., d..]).dot(&prev.h);
    z += &params.bias;
    let i = z.slice(s![..h]).mapv(sigmoid);
    let k = z.slice(s![h..2 * h]).mapv(|v| v.tanh());
    let f = z.slice(s![2 * h..3 * h]).mapv(sigmoid);
    let o = z.slice(s![3 * h..]).mapv(sigmoid);
    let c = &f * &prev.c + &i * &k;
    let tanh_c = c.mapv(|v| v.tanh());
    let h_new = &o * &tanh_c;
    let cache = StepCache {
        input: x.to_owned(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        i,
        k,
        f,
        o,
        tanh_c,
    };
    (LstmState { h: h_new, c }, cache)
}

fn check_state<T: Scalar>(params: &LstmParams<T>, state: &LstmState<T>) -> Result<()> {
    if state.h.len() != params.hidden_dim || state.c.len() != params.hidden_dim {
        return Err(Error::DimensionMismatch {
            context: "lstm state",
            expected: params.hidden_dim,
            actual: state.h.len().max(state.c.len()),
        });
    }
    Ok(())
}

/// One application of the cell.
pub fn lstm_cell<T: Scalar>(
    params: &LstmParams<T>,
    x: ArrayView1<T>,
    prev: &LstmState<T>,
) -> Result<LstmState<T>> {
    params.check()?;
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch {
            context: "lstm input",
            expected: params.input_dim,
            actual: x.len(),
        });
    }
    check_state(params, prev)?;
    Ok(step(params, x, prev).0)
}

fn check_stack<T: Scalar>(stack: &[LstmParams<T>], input_dim: usize) -> Result<()> {
    if stack.is_empty() {
        return Err(Error::invalid("lstm stack is empty"));
    }
    let mut d = input_dim;
    for p in stack {
        p.check()?;
        if p.input_dim != d {
            return Err(Error::DimensionMismatch {
                context: "lstm layer input",
                expected: d,
                actual: p.input_dim,
            });
        }
        d = p.hidden_dim;
    }
    Ok(())
}

/// Runs the stack left to right over `sequence` (`T × D`); layer `l + 1`
/// reads the hidden states of layer `l`. Missing initial states are zero.
pub fn lstm_forward<T: Scalar>(
    stack: &[LstmParams<T>],
    sequence: ArrayView2<T>,
    init: Option<&[LstmState<T>]>,
) -> Result<(Array2<T>, Vec<LstmState<T>>)> {
    check_stack(stack, sequence.ncols())?;
    if let Some(states) = init {
        if states.len() != stack.len() {
            return Err(Error::DimensionMismatch {
                context: "lstm initial states",
                expected: stack.len(),
                actual: states.len(),
            });
        }
        for (p, s) in stack.iter().zip(states) {
            check_state(p, s)?;
        }
    }
    let (outputs, finals, _) = forward_stack(stack, sequence, init);
    Ok((outputs, finals))
}

type StackCaches<T> = Vec<Vec<StepCache<T>>>;

fn forward_stack<T: Scalar>(
    stack: &[LstmParams<T>],
    sequence: ArrayView2<T>,
    init: Option<&[LstmState<T>]>,
) -> (Array2<T>, Vec<LstmState<T>>, StackCaches<T>) {
    let mut layer_in = sequence.to_owned();
    let mut finals = Vec::with_capacity(stack.len());
    let mut caches = Vec::with_capacity(stack.len());
    for (l, params) in stack.iter().enumerate() {
        let mut state = init
            .map(|s| s[l].clone())
            .unwrap_or_else(|| LstmState::zeros(params.hidden_dim));
        let mut out = Array2::zeros((layer_in.nrows(), params.hidden_dim));
        let mut layer_cache = Vec::with_capacity(layer_in.nrows());
        for (t, x) in layer_in.rows().into_iter().enumerate() {
            let (next, cache) = step(params, x, &state);
            out.row_mut(t).assign(&next.h);
            layer_cache.push(cache);
            state = next;
        }
        finals.push(state);
        caches.push(layer_cache);
        layer_in = out;
    }
    (layer_in, finals, caches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub input_dim: usize,
    /// Hidden width of each stacked layer, bottom first.
    pub hidden: Vec<usize>,
}

/// Stack plus a linear readout of the top hidden state at the last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmModel<T> {
    pub stack: Vec<LstmParams<T>>,
    pub readout: Array1<T>,
    pub readout_bias: T,
}

impl<T: Scalar> LstmModel<T> {
    pub fn zeros(spec: &LstmSpec) -> Self {
        let mut d = spec.input_dim;
        let stack = spec
            .hidden
            .iter()
            .map(|&h| {
                let p = LstmParams::zeros(d, h);
                d = h;
                p
            })
            .collect();
        LstmModel {
            stack,
            readout: Array1::zeros(d),
            readout_bias: T::zero(),
        }
    }

    /// Scaled-uniform weights, zero biases except the forget gate at `+1`.
    pub fn init(spec: &LstmSpec, seed: u64) -> Self {
        let mut m = Self::zeros(spec);
        let mut r = rng::seeded(rng::derive_seed(seed, &[rng::TAG_INIT]));
        for p in m.stack.iter_mut() {
            let (rows, cols) = p.weights.dim();
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            p.weights
                .mapv_inplace(|_| T::lit(r.random_range(-bound..=bound)));
            let h = p.hidden_dim;
            p.bias.slice_mut(s![2 * h..3 * h]).fill(T::one());
        }
        let bound = (6.0 / (m.readout.len() + 1) as f64).sqrt();
        m.readout
            .mapv_inplace(|_| T::lit(r.random_range(-bound..=bound)));
        m
    }

    pub fn len(&self) -> usize {
        self.stack
            .iter()
            .map(|p| p.weights.len() + p.bias.len())
            .sum::<usize>()
            + self.readout.len()
            + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.stack
            .iter_mut()
            .flat_map(|p| p.weights.iter_mut().chain(p.bias.iter_mut()))
            .chain(self.readout.iter_mut())
            .chain(std::iter::once(&mut self.readout_bias))
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.stack
            .iter()
            .flat_map(|p| p.weights.iter().chain(p.bias.iter()))
            .chain(self.readout.iter())
            .chain(std::iter::once(&self.readout_bias))
            .copied()
            .collect()
    }

    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.len(), "flat lstm parameter length");
        for (dst, &v) in self.iter_mut().zip(values) {
            *dst = v;
        }
    }

    fn add_scaled(&mut self, scale: T, other: &LstmModel<T>) {
        let other = other.to_flat();
        for (dst, &g) in self.iter_mut().zip(&other) {
            *dst += scale * g;
        }
    }

    fn zeros_like(&self) -> Self {
        LstmModel {
            stack: self
                .stack
                .iter()
                .map(|p| LstmParams::zeros(p.input_dim, p.hidden_dim))
                .collect(),
            readout: Array1::zeros(self.readout.len()),
            readout_bias: T::zero(),
        }
    }

    pub fn predict_one(&self, sequence: ArrayView2<T>) -> Result<T> {
        let (out, _) = lstm_forward(&self.stack, sequence, None)?;
        let last = out
            .rows()
            .into_iter()
            .last()
            .ok_or_else(|| Error::invalid("empty sequence"))?;
        Ok(last.dot(&self.readout) + self.readout_bias)
    }

    /// Adds the gradient of `scale · ½(ŷ − y)²`-style loss term
    /// `weight · (ŷ − y)` flowing into `ŷ` for one sequence; returns `ŷ`.
    fn accumulate_gradient(&self, sequence: ArrayView2<T>, d_pred_of: impl Fn(T) -> T, grad: &mut Self) -> T {
        let (out, _, caches) = forward_stack(&self.stack, sequence, None);
        let steps = out.nrows();
        let h_top = out.row(steps - 1);
        let pred = h_top.dot(&self.readout) + self.readout_bias;
        let d_pred = d_pred_of(pred);
        grad.readout.scaled_add(d_pred, &h_top);
        grad.readout_bias += d_pred;

        // External gradient on each step's hidden output of the current layer.
        let top_h = self.stack.last().expect("non-empty").hidden_dim;
        let mut d_h_ext = Array2::<T>::zeros((steps, top_h));
        d_h_ext.row_mut(steps - 1).assign(&(&self.readout * d_pred));

        for l in (0..self.stack.len()).rev() {
            let params = &self.stack[l];
            let g = &mut grad.stack[l];
            let (h, d) = (params.hidden_dim, params.input_dim);
            let mut d_in_ext = Array2::<T>::zeros((steps, d));
            let mut dh_next = Array1::<T>::zeros(h);
            let mut dc_next = Array1::<T>::zeros(h);
            let mut dz = Array1::<T>::zeros(4 * h);
            for t in (0..steps).rev() {
                let c = &caches[l][t];
                let dh = &d_h_ext.row(t) + &dh_next;
                for j in 0..h {
                    let tc = c.tanh_c[j];
                    let dc = dc_next[j] + dh[j] * c.o[j] * (T::one() - tc * tc);
                    dz[j] = dc * c.k[j] * c.i[j] * (T::one() - c.i[j]);
                    dz[h + j] = dc * c.i[j] * (T::one() - c.k[j] * c.k[j]);
                    dz[2 * h + j] = dc * c.c_prev[j] * c.f[j] * (T::one() - c.f[j]);
                    dz[3 * h + j] = dh[j] * tc * c.o[j] * (T::one() - c.o[j]);
                    dc_next[j] = dc * c.f[j];
                }
                let dz_col = dz.view().insert_axis(Axis(1));
                g.weights
                    .slice_mut(s![.., ..d])
                    .scaled_add(T::one(), &dz_col.dot(&c.input.view().insert_axis(Axis(0))));
                g.weights
                    .slice_mut(s![.., d..])
                    .scaled_add(T::one(), &dz_col.dot(&c.h_prev.view().insert_axis(Axis(0))));
                g.bias += &dz;
                let back = params.weights.t().dot(&dz);
                d_in_ext.row_mut(t).assign(&back.slice(s![..d]));
                dh_next = back.slice(s![d..]).to_owned();
            }
            d_h_ext = d_in_ext;
        }
        pred
    }
}

fn check_samples<T: Scalar>(
    spec: &LstmSpec,
    sequences: &[Array2<T>],
    targets: ArrayView1<T>,
) -> Result<()> {
    if sequences.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "lstm sequences vs targets",
            expected: sequences.len(),
            actual: targets.len(),
        });
    }
    if sequences.is_empty() {
        return Err(Error::invalid("no training sequences"));
    }
    for seq in sequences {
        if seq.nrows() == 0 {
            return Err(Error::invalid("empty training sequence"));
        }
        if seq.ncols() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                context: "lstm sequence width",
                expected: spec.input_dim,
                actual: seq.ncols(),
            });
        }
        if !seq.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("lstm sequence"));
        }
    }
    if !targets.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("lstm targets"));
    }
    Ok(())
}

/// `(1/N) Σ (y − ŷ)²` over the given sequences.
pub fn lstm_loss<T: Scalar>(model: &LstmModel<T>, sequences: &[Array2<T>], targets: ArrayView1<T>) -> Result<T> {
    let mut total = T::zero();
    for (seq, &y) in sequences.iter().zip(targets.iter()) {
        let e = model.predict_one(seq.view())? - y;
        total += e * e;
    }
    Ok(total / T::lit(sequences.len().max(1) as f64))
}

/// BPTT gradient of [`lstm_loss`] through the full unrolled sequences.
pub fn lstm_gradient<T: Scalar>(
    model: &LstmModel<T>,
    sequences: &[Array2<T>],
    targets: ArrayView1<T>,
) -> Result<LstmModel<T>> {
    let mut grad = model.zeros_like();
    let scale = T::lit(2.0 / sequences.len().max(1) as f64);
    for (seq, &y) in sequences.iter().zip(targets.iter()) {
        check_stack(&model.stack, seq.ncols())?;
        model.accumulate_gradient(seq.view(), |pred| scale * (pred - y), &mut grad);
    }
    Ok(grad)
}

/// Minibatch SGD with BPTT. Dropout settings in `cfg` are ignored.
pub fn lstm_fit<T: Scalar>(
    spec: &LstmSpec,
    sequences: &[Array2<T>],
    targets: ArrayView1<T>,
    cfg: &SgdConfig,
) -> Result<(LstmModel<T>, TrainingTrace<T>)> {
    if spec.hidden.is_empty() || spec.hidden.contains(&0) || spec.input_dim == 0 {
        return Err(Error::invalid("lstm dimensions must be positive"));
    }
    check_samples(spec, sequences, targets)?;
    let n = sequences.len();
    let cfg = SgdConfig {
        batch_size: cfg.batch_size.min(n),
        ..*cfg
    };
    cfg.validate(n)?;
    let mut model = LstmModel::init(spec, cfg.seed);
    let mut r = rng::seeded(rng::derive_seed(cfg.seed, &[rng::TAG_SGD]));
    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = cfg.learning_rate;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut r);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = model.zeros_like();
            let scale = T::lit(2.0 / batch.len() as f64);
            for &i in batch {
                let y = targets[i];
                model.accumulate_gradient(sequences[i].view(), |pred| scale * (pred - y), &mut grad);
            }
            model.add_scaled(T::lit(-lr), &grad);
        }
        let value = lstm_loss(&model, sequences, targets)?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        epoch_loss.push(value);
        lr *= cfg.lr_decay;
    }
    let final_loss = *epoch_loss.last().expect("epochs >= 1");
    Ok((model, TrainingTrace { epoch_loss, final_loss }))
}

/// Sliding-window view of a feature matrix: row `i` becomes the sequence of
/// rows `max(0, i + 1 − window) ..= i`.
pub fn sliding_windows<T: Scalar>(x: ArrayView2<T>, window: usize) -> Vec<Array2<T>> {
    (0..x.nrows())
        .map(|i| x.slice(s![(i + 1).saturating_sub(window)..=i, ..]).to_owned())
        .collect()
}

/// LSTM regression on a monthly feature matrix via sliding windows, with
/// standardized inputs and target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmForecaster<T> {
    pub model: LstmModel<T>,
    pub window: usize,
    pub inputs: Standardizer<T>,
    pub target_mean: T,
    pub target_scale: T,
    pub trace: TrainingTrace<T>,
}

impl<T: Scalar> LstmForecaster<T> {
    pub fn fit(spec: &LstmSpec, window: usize, x: ArrayView2<T>, y: ArrayView1<T>, cfg: &SgdConfig) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("lstm window must be positive"));
        }
        let inputs = Standardizer::fit(x);
        let xs = inputs.transform(x);
        let target_mean = linalg::mean(y);
        let var = y.iter().map(|&v| (v - target_mean) * (v - target_mean)).sum::<T>()
            / T::lit(y.len().max(1) as f64);
        let target_scale = if var.sqrt() > T::epsilon() { var.sqrt() } else { T::one() };
        let ys = y.mapv(|v| (v - target_mean) / target_scale);
        let seqs = sliding_windows(xs.view(), window);
        let (model, trace) = lstm_fit(spec, &seqs, ys.view(), cfg)?;
        Ok(LstmForecaster {
            model,
            window,
            inputs,
            target_mean,
            target_scale,
            trace,
        })
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        let xs = self.inputs.transform(x);
        sliding_windows(xs.view(), self.window)
            .iter()
            .map(|seq| {
                self.model
                    .predict_one(seq.view())
                    .map(|v| v * self.target_scale + self.target_mean)
            })
            .collect::<Result<Vec<T>>>()
            .map(Array1::from)
    }
}
