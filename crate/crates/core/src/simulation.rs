//! Synthetic latent-factor panels and the benchmark grid run on them.
//!
//! One layer: `F = f(X W₁ᵀ + b₁)`, `R = α + F β + ε`.
//! Two layers: `F₁ = f(X W₁ᵀ + b₁)`, `F = f(F₁ W₂ᵀ + b₂)`.
//! All coefficients and `X` are iid standard normal; `ε ~ N(0, σ²)` with
//! `σ²` set so that the signal share of variance equals the target R².

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataflow::{PredictorPanel, YearMonth, PREDICTORS};
use crate::error::{Error, Result};
use crate::methods::{self, FitContext, MethodConfig};
use crate::network::Activation;
use crate::rng::{self, Rng};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Depth {
    OneLayer,
    TwoLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub depth: Depth,
    #[serde(default = "default_p")]
    pub p: usize,
    pub k1: usize,
    #[serde(default)]
    pub k2: Option<usize>,
    pub t: usize,
    pub target_r2: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_p() -> usize {
    100
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_seed() -> u64 {
    1
}

impl DgpSpec {
    pub fn one_layer(p: usize, k: usize, t: usize, target_r2: f64) -> Self {
        DgpSpec {
            depth: Depth::OneLayer,
            p,
            k1: k,
            k2: None,
            t,
            target_r2,
            activation: Activation::Relu,
            seed: 1,
        }
    }

    pub fn two_layer(p: usize, k1: usize, k2: usize, t: usize, target_r2: f64) -> Self {
        DgpSpec {
            depth: Depth::TwoLayer,
            k2: Some(k2),
            ..Self::one_layer(p, k1, t, target_r2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_r2 > 0.0 && self.target_r2 < 1.0) {
            return Err(Error::Config(format!(
                "target_r2 must lie in (0, 1), got {}",
                self.target_r2
            )));
        }
        if self.p == 0 || self.k1 == 0 || self.t < 2 {
            return Err(Error::Config("p and k1 must be positive and t at least 2".into()));
        }
        match (self.depth, self.k2) {
            (Depth::OneLayer, None) => Ok(()),
            (Depth::TwoLayer, Some(k2)) if k2 > 0 => Ok(()),
            (Depth::OneLayer, Some(_)) => Err(Error::Config("k2 given for a one_layer spec".into())),
            _ => Err(Error::Config("two_layer spec needs a positive k2".into())),
        }
    }

    /// Dimension of the final factor layer.
    pub fn k(&self) -> usize {
        self.k2.unwrap_or(self.k1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpTruth<T> {
    pub alpha: T,
    pub beta: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Option<Array2<T>>,
    pub b2: Option<Array1<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPanel<T> {
    pub x: Array2<T>,
    /// Final-layer factors.
    pub factors: Array2<T>,
    /// First-layer factors of a two-layer panel.
    pub factors_first: Option<Array2<T>>,
    pub r: Array1<T>,
    pub sigma2: f64,
    pub truth: DgpTruth<T>,
}

impl<T: Scalar> SimulatedPanel<T> {
    /// Noiseless part `α + F β`.
    pub fn signal(&self) -> Array1<T> {
        self.factors.dot(&self.truth.beta) + self.truth.alpha
    }

    /// `var(signal) / (var(signal) + var(noise))` on this sample.
    pub fn realized_r2(&self) -> f64 {
        let signal = self.signal();
        let noise = &self.r - &signal;
        let vs = population_variance(signal.iter().map(|v| v.as_f64()));
        let vn = population_variance(noise.iter().map(|v| v.as_f64()));
        vs / (vs + vn)
    }
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return 0.0;
    }
    let m = sum / n as f64;
    values.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64
}

/// `σ² = var · (1 − R²) / R²`.
pub fn calibrate_noise(signal_variance: f64, target_r2: f64) -> Result<f64> {
    if !(target_r2 > 0.0 && target_r2 < 1.0) {
        return Err(Error::invalid(format!("target R² must lie in (0, 1), got {target_r2}")));
    }
    if !(signal_variance > 0.0 && signal_variance.is_finite()) {
        return Err(Error::Degenerate(format!(
            "signal variance must be positive and finite, got {signal_variance}"
        )));
    }
    Ok(signal_variance * (1.0 - target_r2) / target_r2)
}

fn normal_matrix(r: &mut Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng::standard_normal(r))
}

fn normal_vector(r: &mut Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng::standard_normal(r))
}

fn layer(input: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>, f: Activation) -> Array2<f64> {
    let mut z = input.dot(&w.t());
    z += b;
    z.mapv_inplace(|v| f.apply(v));
    z
}

/// Draws one panel. Draw order is `X, W₁, b₁, [W₂, b₂], α, β, ε`.
pub fn generate<T: Scalar>(spec: &DgpSpec) -> Result<SimulatedPanel<T>> {
    spec.validate()?;
    let mut r = rng::seeded(rng::derive_seed(spec.seed, &[rng::TAG_SIMULATION]));
    let x = normal_matrix(&mut r, spec.t, spec.p);
    let w1 = normal_matrix(&mut r, spec.k1, spec.p);
    let b1 = normal_vector(&mut r, spec.k1);
    let f1 = layer(&x, &w1, &b1, spec.activation);
    let (factors, factors_first, w2, b2) = match spec.k2 {
        Some(k2) => {
            let w2 = normal_matrix(&mut r, k2, spec.k1);
            let b2 = normal_vector(&mut r, k2);
            let f2 = layer(&f1, &w2, &b2, spec.activation);
            (f2, Some(f1), Some(w2), Some(b2))
        }
        None => (f1, None, None, None),
    };
    let alpha = rng::standard_normal(&mut r);
    let beta = normal_vector(&mut r, spec.k());
    let signal = factors.dot(&beta) + alpha;
    let sigma2 = calibrate_noise(population_variance(signal.iter().copied()), spec.target_r2)?;
    let sigma = sigma2.sqrt();
    let noise = normal_vector(&mut r, spec.t) * sigma;
    let ret = &signal + &noise;

    let cast2 = |m: &Array2<f64>| m.mapv(T::lit);
    let cast1 = |v: &Array1<f64>| v.mapv(T::lit);
    Ok(SimulatedPanel {
        x: cast2(&x),
        factors: cast2(&factors),
        factors_first: factors_first.as_ref().map(cast2),
        r: cast1(&ret),
        sigma2,
        truth: DgpTruth {
            alpha: T::lit(alpha),
            beta: cast1(&beta),
            w1: cast2(&w1),
            b1: cast1(&b1),
            w2: w2.as_ref().map(cast2),
            b2: b2.as_ref().map(cast1),
        },
    })
}

/// Settings for a synthetic monthly predictor panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlyPanelSpec {
    pub months: usize,
    /// Number of `±w` factor pairs.
    pub pairs: usize,
    /// Share of next-month excess return variance explained by the signal.
    pub target_r2: f64,
    pub start: YearMonth,
    pub seed: u64,
}

impl Default for MonthlyPanelSpec {
    fn default() -> Self {
        MonthlyPanelSpec {
            months: 900,
            pairs: 2,
            target_r2: 0.2,
            start: YearMonth { year: 1941, month: 1 },
            seed: 1,
        }
    }
}

/// A one-layer ReLU factor panel laid out like the monthly predictor data.
///
/// The 14 predictors are iid standard normal. The first layer stacks each
/// weight row `w` with `−w` (same bias, same loading), so every factor pair
/// is an even function of `w·x` and the return has no linear projection on
/// the predictors. The excess return of month `t + 1` is
/// `0.005 + c·(signal_t − mean) + ε` with total standard deviation 0.045 and
/// the signal share set to `target_r2`. The risk-free rate is a constant
/// 0.003 per month.
pub fn monthly_panel(spec: &MonthlyPanelSpec) -> Result<PredictorPanel> {
    if spec.months < 2 || spec.pairs == 0 {
        return Err(Error::invalid("monthly panel needs at least 2 months and 1 factor pair"));
    }
    calibrate_noise(1.0, spec.target_r2)?;
    let p = PREDICTORS.len();
    let mut r = rng::seeded(rng::derive_seed(spec.seed, &[rng::TAG_SIMULATION, 1]));
    let x = normal_matrix(&mut r, spec.months, p);
    let w = normal_matrix(&mut r, spec.pairs, p) / (p as f64).sqrt();
    let b = normal_vector(&mut r, spec.pairs);
    let beta = normal_vector(&mut r, spec.pairs);
    let w1 = ndarray::concatenate![ndarray::Axis(0), w, -&w];
    let b1 = ndarray::concatenate![ndarray::Axis(0), b, b];
    let beta1 = ndarray::concatenate![ndarray::Axis(0), beta, beta];
    let signal = layer(&x, &w1, &b1, Activation::Relu).dot(&beta1);
    let var = population_variance(signal.iter().copied());
    if !(var > 0.0) {
        return Err(Error::Degenerate("synthetic signal has zero variance".into()));
    }
    let mean = signal.mean().unwrap_or(0.0);
    let total_sd: f64 = 0.045;
    let scale = total_sd * spec.target_r2.sqrt() / var.sqrt();
    let noise_sd = total_sd * (1.0 - spec.target_r2).sqrt();
    let rf = 0.003;
    let mut excess = Array1::zeros(spec.months);
    for t in 0..spec.months {
        let predictable = if t == 0 { 0.0 } else { scale * (signal[t - 1] - mean) };
        excess[t] = 0.005 + predictable + noise_sd * rng::standard_normal(&mut r);
    }
    Ok(PredictorPanel {
        dates: (0..spec.months).map(|i| spec.start.plus_months(i as i64)).collect(),
        predictors: x,
        sp500_log_return: excess.mapv(|e| e + rf),
        risk_free: Array1::from_elem(spec.months, rf),
        excess,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train_frac: f64,
}

impl Default for Split {
    fn default() -> Self {
        Split { train_frac: 0.8 }
    }
}

/// Outcome of one method on one grid row across reps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    pub method: String,
    /// Mean over the reps that succeeded.
    pub mean_mspe: Option<f64>,
    pub per_rep: Vec<Option<f64>>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub spec: DgpSpec,
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkRow {
    pub fn cell(&self, method: &str) -> Option<&BenchmarkCell> {
        self.cells.iter().find(|c| c.method == method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub methods: Vec<String>,
    pub rows: Vec<BenchmarkRow>,
}

/// Seed of repetition `rep` (0-based) of a row.
pub fn rep_seed(spec: &DgpSpec, rep: usize) -> u64 {
    spec.seed.wrapping_add(rep as u64)
}

/// MSPE of every method on one simulated panel, in method order.
pub fn run_cell(
    spec: &DgpSpec,
    methods: &[MethodConfig],
    split: Split,
    seed: u64,
) -> Vec<std::result::Result<f64, String>> {
    let spec = DgpSpec { seed, ..spec.clone() };
    let panel = match generate::<f64>(&spec) {
        Ok(p) => p,
        Err(e) => return vec![Err(e.to_string()); methods.len()],
    };
    let n_train = ((spec.t as f64) * split.train_frac).round() as usize;
    let n_train = n_train.clamp(1, spec.t - 1);
    let (x_tr, x_te) = (panel.x.slice(s![..n_train, ..]), panel.x.slice(s![n_train.., ..]));
    let (y_tr, y_te) = (panel.r.slice(s![..n_train]), panel.r.slice(s![n_train..]));
    // Every method in a rep sees the same folds and training seed.
    let ctx = FitContext::random_folds(rng::derive_seed(seed, &[rng::TAG_CV]));
    methods
        .iter()
        .map(|method| {
            let result = match method {
                MethodConfig::Oracle => {
                    let f = &panel.factors;
                    methods::fit_oracle(f.slice(s![..n_train, ..]), y_tr).and_then(|model| {
                        methods::mspe(&model, f.slice(s![n_train.., ..]), y_te)
                    })
                }
                _ => methods::fit_method(method, x_tr, y_tr, &ctx)
                    .and_then(|model| methods::mspe(&model, x_te, y_te)),
            };
            result.map_err(|e| e.to_string())
        })
        .collect()
}

/// Runs every (row, rep) cell in parallel and merges in key order.
pub fn run_benchmark(
    specs: &[DgpSpec],
    methods: &[MethodConfig],
    split: Split,
    reps: usize,
) -> Result<BenchmarkTable> {
    if methods.is_empty() {
        return Err(Error::invalid("benchmark needs at least one method"));
    }
    if reps == 0 {
        return Err(Error::invalid("benchmark needs at least one rep"));
    }
    if !(split.train_frac > 0.0 && split.train_frac < 1.0) {
        return Err(Error::invalid("train_frac must lie in (0, 1)"));
    }
    for spec in specs {
        spec.validate()?;
    }
    for m in methods {
        m.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|row| (0..reps).map(move |rep| (row, rep)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(row, rep)| run_cell(&specs[row], methods, split, rep_seed(&specs[row], rep)))
        .collect();

    let names: Vec<String> = methods.iter().map(|m| m.name()).collect();
    let rows = specs
        .iter()
        .enumerate()
        .map(|(row, spec)| {
            let cells = names
                .iter()
                .enumerate()
                .map(|(m, name)| {
                    let mut per_rep = Vec::with_capacity(reps);
                    let mut failures = Vec::new();
                    for rep in 0..reps {
                        match &results[row * reps + rep][m] {
                            Ok(v) => per_rep.push(Some(*v)),
                            Err(e) => {
                                log::warn!("{name} failed on row {row} rep {rep}: {e}");
                                failures.push(format!("rep {rep}: {e}"));
                                per_rep.push(None);
                            }
                        }
                    }
                    let ok: Vec<f64> = per_rep.iter().flatten().copied().collect();
                    let mean_mspe = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
                    BenchmarkCell {
                        method: name.clone(),
                        mean_mspe,
                        per_rep,
                        failures,
                    }
                })
                .collect();
            BenchmarkRow {
                spec: spec.clone(),
                cells,
            }
        })
        .collect();
    Ok(BenchmarkTable { methods: names, rows })
}

impl BenchmarkTable {
    fn two_layer(&self) -> bool {
        self.rows.iter().any(|r| r.spec.depth == Depth::TwoLayer)
    }

    fn key_header(&self) -> Vec<&'static str> {
        if self.two_layer() {
            vec!["P", "K1", "K2", "T", "R2"]
        } else {
            vec!["P", "K", "T", "R2"]
        }
    }

    fn key_values(&self, spec: &DgpSpec) -> Vec<String> {
        let mut v = vec![spec.p.to_string(), spec.k1.to_string()];
        if self.two_layer() {
            v.push(spec.k2.map(|k| k.to_string()).unwrap_or_default());
        }
        v.push(spec.t.to_string());
        v.push(spec.target_r2.to_string());
        v
    }

    /// Mean MSPE per row at full precision; failed cells are `NA`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = self.key_header().into_iter().map(String::from).collect();
        header.extend(self.methods.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = self.key_values(&row.spec);
            rec.extend(row.cells.iter().map(|c| match c.mean_mspe {
                Some(v) => format!("{v}"),
                None => "NA".into(),
            }));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut header: Vec<String> = self.key_header().into_iter().map(String::from).collect();
        header.extend(self.methods.iter().cloned());
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for row in &self.rows {
            let mut rec = self.key_values(&row.spec);
            rec.extend(row.cells.iter().map(|c| match c.mean_mspe {
                Some(v) => format!("{v:.2}"),
                None => "NA".into(),
            }));
            let _ = writeln!(out, "| {} |", rec.join(" | "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrate_examples() {
        assert_eq!(calibrate_noise(4.0, 0.5).unwrap(), 4.0);
        assert!((calibrate_noise(9.0, 0.25).unwrap() - 27.0).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for r2 in [0.9, 0.99, 0.999, 0.9999] {
            let s = calibrate_noise(1.0, r2).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(prev < 1e-3);
        assert!(calibrate_noise(1.0, 0.0).is_err());
        assert!(calibrate_noise(1.0, 1.0).is_err());
    }

    #[test]
    fn generate_is_deterministic_and_shaped() {
        let spec = DgpSpec::two_layer(100, 25, 5, 50, 0.25);
        let a = generate::<f64>(&spec).unwrap();
        let b = generate::<f64>(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.factors.ncols(), 5);
        assert_eq!(a.factors_first.as_ref().unwrap().ncols(), 25);
        assert_eq!(a.x.dim(), (50, 100));
    }

    #[test]
    fn realized_r2_near_target() {
        let spec = DgpSpec::one_layer(100, 5, 500, 0.75);
        let p = generate::<f64>(&spec).unwrap();
        let r2 = p.realized_r2();
        assert!((0.70..=0.80).contains(&r2), "r2 {r2}");
    }

    #[test]
    fn monthly_panel_has_no_linear_signal() {
        let spec = MonthlyPanelSpec {
            months: 5000,
            target_r2: 0.5,
            ..MonthlyPanelSpec::default()
        };
        let p = monthly_panel(&spec).unwrap();
        p.validate().unwrap();
        assert_eq!(p.dates[0].to_string(), "1941-01");
        let y = p.excess.slice(s![1..]).to_owned();
        let x = p.predictors.slice(s![..-1, ..]).to_owned();
        let ols = crate::linear::ols_fit(x.view(), y.view()).unwrap();
        let pred = ols.predict(x.view()).unwrap();
        let r2 = 1.0 - (&y - &pred).mapv(|e| e * e).sum() / y.mapv(|v| (v - y.mean().unwrap()).powi(2)).sum();
        assert!(r2 < 0.01, "in-sample linear R² {r2}");
    }

    #[test]
    fn spec_validation() {
        let mut s = DgpSpec::one_layer(10, 2, 20, 0.5);
        s.k2 = Some(3);
        assert!(s.validate().is_err());
        let mut s = DgpSpec::two_layer(10, 2, 3, 20, 0.5);
        s.k2 = None;
        assert!(s.validate().is_err());
        assert!(DgpSpec::one_layer(10, 2, 20, 1.0).validate().is_err());
    }

    #[test]
    fn single_method_table() {
        let specs = [DgpSpec::one_layer(10, 2, 60, 0.5)];
        let t = run_benchmark(&specs, &[MethodConfig::Ols], Split::default(), 2).unwrap();
        assert_eq!(t.methods, vec!["OLS".to_string()]);
        assert_eq!(t.rows[0].cells.len(), 1);
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("P,K,T,R2,OLS\n"));
        assert!(t.to_markdown().contains("| OLS |"));
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        // 16 training rows cannot support OLS on 20 predictors.
        let specs = [DgpSpec::one_layer(20, 2, 20, 0.5)];
        let methods = [MethodConfig::Ols, MethodConfig::Oracle];
        let t = run_benchmark(&specs, &methods, Split::default(), 1).unwrap();
        assert!(t.rows[0].cells[0].mean_mspe.is_none());
        assert_eq!(t.rows[0].cells[0].failures.len(), 1);
        assert!(t.rows[0].cells[1].mean_mspe.is_some());
        assert!(t.to_csv().unwrap().contains("NA"));
    }
}
