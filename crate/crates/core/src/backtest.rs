//! Out-of-sample forecasting over rolling or expanding windows, and the
//! scores computed from the resulting forecast records.
//!
//! At origin `t` (end of month `t`) the training pairs are `(x_s, y_s)` with
//! `y_s` the `h`-month return after `s`, restricted to `s + h ≤ t` so that
//! every training target is realized by `t`. The forecast targets `y_t`,
//! which is realized at month `t + h`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{s, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataflow::{self, FeatureCase, PredictorPanel, TargetSpec, YearMonth};
use crate::error::{Error, Result};
use crate::methods::{self, FitContext, FittedModel, MethodConfig};
use crate::rng;

/// Widest feature case plus an intercept and one degree of freedom.
pub const MIN_FIXED_LENGTH: usize = 44;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowScheme {
    /// The `length` months ending at the origin.
    FixedMoving {
        #[serde(default = "default_length")]
        length: usize,
    },
    /// Every month from `start` (default: the first usable month) to the
    /// origin; the first origin has `min_history` months of history.
    Cumulative {
        #[serde(default)]
        start: Option<YearMonth>,
        #[serde(default = "default_min_history")]
        min_history: usize,
    },
}

fn default_length() -> usize {
    600
}

fn default_min_history() -> usize {
    240
}

impl WindowScheme {
    pub fn fixed() -> Self {
        WindowScheme::FixedMoving { length: default_length() }
    }

    pub fn cumulative() -> Self {
        WindowScheme::Cumulative {
            start: None,
            min_history: default_min_history(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            WindowScheme::FixedMoving { length } => format!("fixed_{length}"),
            WindowScheme::Cumulative { .. } => "cumulative".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            WindowScheme::FixedMoving { length } if length < MIN_FIXED_LENGTH => Err(Error::Config(format!(
                "fixed window length must be at least {MIN_FIXED_LENGTH}, got {length}"
            ))),
            WindowScheme::Cumulative { min_history: 0, .. } => {
                Err(Error::Config("cumulative min_history must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// First month index that may enter a window.
    fn start_index(&self, panel: &PredictorPanel, first_valid: usize) -> usize {
        match self {
            WindowScheme::Cumulative { start: Some(d), .. } => {
                let i = panel.dates.partition_point(|x| x < d);
                i.max(first_valid)
            }
            _ => first_valid,
        }
    }
}

/// Rows `[lo, hi]` of the training pairs at `origin`, or `None` when the
/// origin has too little history.
pub fn training_rows(scheme: &WindowScheme, start: usize, origin: usize, horizon: usize) -> Option<(usize, usize)> {
    let (first_origin, lo) = match *scheme {
        WindowScheme::FixedMoving { length } => (start + length - 1, (origin + 1).checked_sub(length)?),
        WindowScheme::Cumulative { min_history, .. } => (start + min_history - 1, start),
    };
    let hi = origin.checked_sub(horizon)?;
    (origin >= first_origin && lo >= start && hi >= lo).then_some((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub method: String,
    pub feature_case: FeatureCase,
    pub horizon: usize,
    pub window: String,
    pub origin_date: YearMonth,
    /// Month in which the forecast target is fully realized.
    pub target_date: YearMonth,
    pub y_hat: f64,
    pub y_true: f64,
    /// Mean of the training targets.
    pub benchmark: f64,
    /// Origin months of the first and last training pair.
    pub train_start: YearMonth,
    pub train_end: YearMonth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedOrigin {
    pub origin_date: YearMonth,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BacktestOutput {
    pub records: Vec<ForecastRecord>,
    pub skipped: Vec<SkippedOrigin>,
}

/// One (method, case, horizon, window) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSpec {
    pub method: MethodConfig,
    pub case: FeatureCase,
    pub target: TargetSpec,
    pub scheme: WindowScheme,
    pub seed: u64,
    /// Refit the model every this many origins; in between the last fit is
    /// reused. The benchmark is always recomputed.
    pub refit_every: usize,
}

/// Something that forecasts from the history of feature rows up to and
/// including the origin row (the last row).
pub trait Forecaster {
    fn forecast(&self, history: ArrayView2<f64>) -> Result<f64>;
}

impl Forecaster for FittedModel<f64> {
    fn forecast(&self, history: ArrayView2<f64>) -> Result<f64> {
        self.predict_last(history)
    }
}

/// Labels attached to every record of a run.
#[derive(Debug, Clone)]
pub struct RunLabels {
    pub method: String,
    pub case: FeatureCase,
    pub horizon: usize,
    pub window: WindowScheme,
}

/// Core runner. `fit(x_train, y_train, seed)` is called once per refit block
/// with only the training rows; the returned forecaster sees the feature
/// rows from the window start through the origin.
#[allow(clippy::too_many_arguments)]
pub fn run_backtest_with<M, F>(
    panel: &PredictorPanel,
    x: ArrayView2<f64>,
    first_valid: usize,
    y: ArrayView1<f64>,
    labels: &RunLabels,
    seed: u64,
    refit_every: usize,
    fit: F,
) -> Result<BacktestOutput>
where
    M: Forecaster,
    F: Fn(ArrayView2<f64>, ArrayView1<f64>, u64) -> Result<M> + Sync,
{
    let h = labels.horizon;
    let scheme = &labels.window;
    scheme.validate()?;
    if refit_every == 0 {
        return Err(Error::Config("refit_every must be positive".into()));
    }
    if x.nrows() != panel.len() || y.len() + h != panel.len() {
        return Err(Error::invalid("features and targets must align with the panel"));
    }
    let start = scheme.start_index(panel, first_valid);
    let origins: Vec<usize> = (0..y.len())
        .filter(|&t| training_rows(scheme, start, t, h).is_some())
        .collect();
    if origins.is_empty() {
        return Err(Error::Schema(format!(
            "{} months leave no forecast origin for window {} at horizon {h}",
            panel.len(),
            scheme.label()
        )));
    }
    let window = scheme.label();
    let blocks: Vec<&[usize]> = origins.chunks(refit_every).collect();
    let results: Vec<Vec<std::result::Result<ForecastRecord, SkippedOrigin>>> = blocks
        .par_iter()
        .map(|block| {
            let fit_origin = block[0];
            let (lo, hi) = training_rows(scheme, start, fit_origin, h).expect("filtered origin");
            let origin_seed = rng::derive_seed(seed, &[rng::TAG_BACKTEST, fit_origin as u64]);
            let model = fit(x.slice(s![lo..=hi, ..]), y.slice(s![lo..=hi]), origin_seed);
            block
                .iter()
                .map(|&t| {
                    let skip = |reason: String| SkippedOrigin {
                        origin_date: panel.dates[t],
                        reason,
                    };
                    let (lo, hi) = training_rows(scheme, start, t, h).expect("filtered origin");
                    let model = model.as_ref().map_err(|e| skip(e.to_string()))?;
                    let y_hat = model
                        .forecast(x.slice(s![lo..=t, ..]))
                        .map_err(|e| skip(e.to_string()))?;
                    if !y_hat.is_finite() {
                        return Err(skip("non-finite forecast".into()));
                    }
                    let train = y.slice(s![lo..=hi]);
                    Ok(ForecastRecord {
                        method: labels.method.clone(),
                        feature_case: labels.case,
                        horizon: h,
                        window: window.clone(),
                        origin_date: panel.dates[t],
                        target_date: panel.dates[t + h],
                        y_hat,
                        y_true: y[t],
                        benchmark: train.sum() / train.len() as f64,
                        train_start: panel.dates[lo],
                        train_end: panel.dates[hi],
                    })
                })
                .collect()
        })
        .collect();
    let mut out = BacktestOutput::default();
    for r in results.into_iter().flatten() {
        match r {
            Ok(rec) => out.records.push(rec),
            Err(s) => {
                log::warn!("{} skipped origin {}: {}", labels.method, s.origin_date, s.reason);
                out.skipped.push(s);
            }
        }
    }
    Ok(out)
}

pub fn run_backtest(panel: &PredictorPanel, spec: &BacktestSpec) -> Result<BacktestOutput> {
    spec.method.validate()?;
    if matches!(spec.method, MethodConfig::Oracle) {
        return Err(Error::Config("the oracle method is only available in simulations".into()));
    }
    let features = dataflow::build_features(panel, spec.case);
    let y = dataflow::build_targets(panel, spec.target)?;
    let labels = RunLabels {
        method: spec.method.name(),
        case: spec.case,
        horizon: spec.target.horizon,
        window: spec.scheme,
    };
    run_backtest_with(
        panel,
        features.x.view(),
        features.first_valid,
        y.view(),
        &labels,
        spec.seed,
        spec.refit_every,
        |x, y, seed| methods::fit_method(&spec.method, x, y, &FitContext::time_series(seed)),
    )
}

/// `(1/n) Σ (y − ŷ)²`.
pub fn mspe(records: &[ForecastRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no forecast records"));
    }
    Ok(records.iter().map(|r| (r.y_true - r.y_hat).powi(2)).sum::<f64>() / records.len() as f64)
}

/// MSPE of the historical-mean benchmark on the same records.
pub fn benchmark_mspe(records: &[ForecastRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no forecast records"));
    }
    Ok(records.iter().map(|r| (r.y_true - r.benchmark).powi(2)).sum::<f64>() / records.len() as f64)
}

/// `1 − Σ (y − ŷ)² / Σ (y − R̄)²`.
pub fn r2_os(records: &[ForecastRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no forecast records"));
    }
    let num: f64 = records.iter().map(|r| (r.y_true - r.y_hat).powi(2)).sum();
    let den: f64 = records.iter().map(|r| (r.y_true - r.benchmark).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::Degenerate("benchmark forecasts are exact; R²_OS is undefined".into()));
    }
    Ok(1.0 - num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
}

pub const DM_MIN_OBS: usize = 30;

/// Diebold–Mariano test of equal squared-error loss. The loss differential is
/// `d = e_a² − e_b²`, so a negative statistic favours `a`. The long-run
/// variance uses a Bartlett kernel with `h − 1` lags.
pub fn dm_test(a: &[ForecastRecord], b: &[ForecastRecord]) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!("{} vs {} records", a.len(), b.len())));
    }
    for (ra, rb) in a.iter().zip(b) {
        if ra.target_date != rb.target_date || ra.horizon != rb.horizon {
            return Err(Error::Misaligned(format!(
                "target {} (h={}) vs {} (h={})",
                ra.target_date, ra.horizon, rb.target_date, rb.horizon
            )));
        }
    }
    if a.len() < DM_MIN_OBS {
        return Err(Error::invalid(format!(
            "Diebold-Mariano needs at least {DM_MIN_OBS} forecasts, got {}",
            a.len()
        )));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(ra, rb)| (ra.y_true - ra.y_hat).powi(2) - (rb.y_true - rb.y_hat).powi(2))
        .collect();
    let lag = a[0].horizon.saturating_sub(1);
    Ok(dm_statistic(&d, lag))
}

/// DM statistic for a loss-differential series with Bartlett HAC variance.
pub fn dm_statistic(d: &[f64], lag: usize) -> DmResult {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let gamma = |k: usize| d[k..].iter().zip(d).map(|(x, y)| (x - mean) * (y - mean)).sum::<f64>() / n;
    let mut var = gamma(0);
    for k in 1..=lag.min(d.len() - 1) {
        var += 2.0 * (1.0 - k as f64 / (lag + 1) as f64) * gamma(k);
    }
    if mean == 0.0 {
        return DmResult {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    if !(var > 0.0) {
        return DmResult {
            statistic: mean.signum() * f64::INFINITY,
            p_value: 0.0,
        };
    }
    let statistic = mean / (var / n).sqrt();
    let normal = Normal::standard();
    DmResult {
        statistic,
        p_value: 2.0 * (1.0 - normal.cdf(statistic.abs())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub method: String,
    pub feature_case: FeatureCase,
    pub horizon: usize,
    pub window: String,
    pub mspe: f64,
    pub r2_os: f64,
    pub n_forecasts: usize,
}

/// One row per (method, case, horizon, window) in order of first appearance.
pub fn evaluate(records: &[ForecastRecord]) -> Result<Vec<EvaluationRow>> {
    let mut order: Vec<(String, FeatureCase, usize, String)> = Vec::new();
    let mut groups: BTreeMap<(String, FeatureCase, usize, String), Vec<ForecastRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.method.clone(), r.feature_case, r.horizon, r.window.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r.clone());
    }
    order
        .into_iter()
        .map(|key| {
            let recs = &groups[&key];
            Ok(EvaluationRow {
                mspe: mspe(recs)?,
                r2_os: r2_os(recs)?,
                n_forecasts: recs.len(),
                method: key.0,
                feature_case: key.1,
                horizon: key.2,
                window: key.3,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub horizon: usize,
    pub window: String,
    pub body: String,
}

/// Formatting shared by both report formats.
pub fn format_number(v: f64) -> String {
    format!("{v:.6}")
}

/// One table per (horizon, window): methods as rows, feature cases as
/// column groups of (MSPE, R²_OS).
pub fn report(rows: &[EvaluationRow], format: ReportFormat) -> Vec<ReportTable> {
    let mut tables: Vec<(usize, String)> = Vec::new();
    for r in rows {
        let key = (r.horizon, r.window.clone());
        if !tables.contains(&key) {
            tables.push(key);
        }
    }
    tables
        .into_iter()
        .map(|(horizon, window)| {
            let sub: Vec<&EvaluationRow> = rows
                .iter()
                .filter(|r| r.horizon == horizon && r.window == window)
                .collect();
            let mut cases: Vec<FeatureCase> = sub.iter().map(|r| r.feature_case).collect();
            cases.sort();
            cases.dedup();
            let mut methods: Vec<&str> = Vec::new();
            for r in &sub {
                if !methods.contains(&r.method.as_str()) {
                    methods.push(&r.method);
                }
            }
            let mut header = vec!["method".to_string()];
            for c in &cases {
                header.push(format!("{} MSPE", c.label()));
                header.push(format!("{} R2_OS", c.label()));
            }
            let body_rows: Vec<Vec<String>> = methods
                .iter()
                .map(|m| {
                    let mut rec = vec![m.to_string()];
                    for c in &cases {
                        match sub.iter().find(|r| r.method == *m && r.feature_case == *c) {
                            Some(r) => {
                                rec.push(format_number(r.mspe));
                                rec.push(format_number(r.r2_os));
                            }
                            None => rec.extend(["NA".to_string(), "NA".to_string()]),
                        }
                    }
                    rec
                })
                .collect();
            let body = match format {
                ReportFormat::Csv => {
                    let mut s = String::new();
                    for rec in std::iter::once(&header).chain(&body_rows) {
                        let _ = writeln!(s, "{}", rec.join(","));
                    }
                    s
                }
                ReportFormat::Markdown => {
                    let mut s = format!("### Horizon {horizon} month(s), window {window}\n\n");
                    let _ = writeln!(s, "| {} |", header.join(" | "));
                    let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
                    for rec in &body_rows {
                        let _ = writeln!(s, "| {} |", rec.join(" | "));
                    }
                    s
                }
            };
            ReportTable { horizon, window, body }
        })
        .collect()
}

/// Forecast records as CSV.
pub fn records_to_csv(records: &[ForecastRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}

/// Evaluation rows as long-format CSV.
pub fn evaluation_to_csv(rows: &[EvaluationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "feature_case", "horizon", "window", "mspe", "r2_os", "n_forecasts"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.feature_case.label().to_string(),
            r.horizon.to_string(),
            r.window.clone(),
            format_number(r.mspe),
            format_number(r.r2_os),
            r.n_forecasts.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(e.to_string()))
}
