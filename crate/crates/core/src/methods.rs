//! Method registry shared by the simulation benchmark and the backtest.
//!
//! A [`MethodConfig`] names a forecasting method plus its hyperparameters (or
//! the instruction to cross-validate them); [`fit_method`] turns it into a
//! [`FittedModel`] on one training sample.

use ndarray::{Array1, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear::{self, CvSpec, FitFamily, FoldScheme, LinearModel};
use crate::lstm::{LstmForecaster, LstmSpec};
use crate::network::{Activation, InitScheme, LayerSpec, NetworkSpec, OutputHead};
use crate::rng;
use crate::training::{DeepFactorModel, PenaltySpec, SgdConfig, Standardizer};
use crate::Scalar;

fn default_mixing() -> f64 {
    0.5
}

fn default_max_components() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_window() -> usize {
    12
}

fn default_relu() -> Activation {
    Activation::Relu
}

/// Default penalty grid for the deep methods, on the standardized-target scale.
pub fn default_deep_lambdas() -> Vec<f64> {
    vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0]
}

fn default_deep_penalty() -> PenaltySpec {
    PenaltySpec::l2(0.0)
}

fn default_lambda_grid() -> Option<Vec<f64>> {
    Some(default_deep_lambdas())
}

/// Penalty grid for the monthly-return deep methods.
pub fn monthly_deep_lambdas() -> Vec<f64> {
    vec![0.001, 0.003, 0.01, 0.03]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodConfig {
    Ols,
    /// Ridge on z-scored predictors; `lambda: null` selects it by cross-validation.
    Ridge {
        #[serde(default)]
        lambda: Option<f64>,
    },
    Lasso {
        #[serde(default)]
        lambda: Option<f64>,
    },
    ElasticNet {
        #[serde(default = "default_mixing")]
        mixing: f64,
        #[serde(default)]
        lambda: Option<f64>,
    },
    Pls {
        #[serde(default)]
        n_components: Option<usize>,
        #[serde(default = "default_max_components")]
        max_components: usize,
    },
    Deep {
        #[serde(default)]
        label: Option<String>,
        hidden: Vec<usize>,
        #[serde(default = "default_relu")]
        activation: Activation,
        #[serde(default = "default_true")]
        skip: bool,
        #[serde(default)]
        sgd: SgdConfig,
        #[serde(default = "default_deep_penalty")]
        penalty: PenaltySpec,
        /// When present, `penalty.lambda` is chosen from this grid by
        /// cross-validation; `null` trains with `penalty` as given.
        #[serde(default = "default_lambda_grid")]
        lambda_grid: Option<Vec<f64>>,
        #[serde(default)]
        init: InitScheme,
    },
    Lstm {
        hidden: Vec<usize>,
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default)]
        sgd: SgdConfig,
    },
    /// Simulation only: OLS on the true latent factors.
    Oracle,
}

impl MethodConfig {
    /// Deep factor network with ReLU layers, the skip connection and default training settings.
    pub fn deep(label: &str, widths: &[usize]) -> Self {
        MethodConfig::Deep {
            label: Some(label.to_string()),
            hidden: widths.to_vec(),
            activation: Activation::Relu,
            skip: true,
            sgd: SgdConfig::default(),
            penalty: default_deep_penalty(),
            lambda_grid: default_lambda_grid(),
            init: InitScheme::ScaledUniform,
        }
    }

    /// Deep method tuned for monthly return panels: lighter dropout, a
    /// larger step and a smaller penalty grid than the simulation defaults.
    pub fn deep_monthly(label: &str, widths: &[usize]) -> Self {
        let mut m = Self::deep(label, widths);
        if let MethodConfig::Deep { sgd, lambda_grid, .. } = &mut m {
            sgd.keep_prob = 0.8;
            sgd.learning_rate = 0.05;
            *lambda_grid = Some(monthly_deep_lambdas());
        }
        m
    }

    pub fn name(&self) -> String {
        match self {
            MethodConfig::Ols => "OLS".into(),
            MethodConfig::Ridge { .. } => "Ridge".into(),
            MethodConfig::Lasso { .. } => "Lasso".into(),
            MethodConfig::ElasticNet { .. } => "ElasNet".into(),
            MethodConfig::Pls { .. } => "PLS".into(),
            MethodConfig::Deep { label, hidden, .. } => match label {
                Some(l) => l.clone(),
                None => format!(
                    "DL {}",
                    hidden.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
                ),
            },
            MethodConfig::Lstm { hidden, .. } => {
                format!("LSTM-{}", hidden.last().copied().unwrap_or(0))
            }
            MethodConfig::Oracle => "Oracle".into(),
        }
    }

    pub fn network_spec(&self, input_dim: usize) -> Option<NetworkSpec> {
        match self {
            MethodConfig::Deep {
                hidden,
                activation,
                skip,
                ..
            } => Some(NetworkSpec {
                input_dim,
                hidden: hidden
                    .iter()
                    .map(|&width| LayerSpec {
                        width,
                        activation: *activation,
                    })
                    .collect(),
                skip_input_to_output: *skip,
                head: OutputHead::Regression,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::ElasticNet { mixing, .. } if !(0.0..=1.0).contains(mixing) => Err(
                Error::Config(format!("elastic_net mixing must lie in [0, 1], got {mixing}")),
            ),
            MethodConfig::Deep {
                hidden,
                sgd,
                penalty,
                lambda_grid,
                ..
            } => {
                if hidden.iter().any(|&w| w == 0) {
                    return Err(Error::Config("deep hidden widths must be positive".into()));
                }
                if lambda_grid.as_ref().is_some_and(|g| g.is_empty() || g.iter().any(|l| !(*l >= 0.0))) {
                    return Err(Error::Config("deep lambda_grid must be nonempty and nonnegative".into()));
                }
                penalty.validate().map_err(|e| Error::Config(e.to_string()))?;
                if !(sgd.keep_prob > 0.0 && sgd.keep_prob <= 1.0) {
                    return Err(Error::Config("sgd.keep_prob must lie in (0, 1]".into()));
                }
                Ok(())
            }
            MethodConfig::Lstm { hidden, window, .. } => {
                if hidden.is_empty() || hidden.iter().any(|&w| w == 0) || *window == 0 {
                    return Err(Error::Config("lstm hidden widths and window must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// The nine methods compared on the equity premium data.
pub fn equity_premium_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::Ols,
        MethodConfig::Ridge { lambda: None },
        MethodConfig::Pls {
            n_components: None,
            max_components: 10,
        },
        MethodConfig::Lasso { lambda: None },
        MethodConfig::ElasticNet {
            mixing: 0.5,
            lambda: None,
        },
        MethodConfig::deep_monthly("DL1", &[32, 16, 8]),
        MethodConfig::deep_monthly("DL2", &[16, 8, 4]),
        MethodConfig::deep_monthly("DL3", &[16, 8]),
        MethodConfig::deep_monthly("DL4", &[16]),
    ]
}

/// Oracle, the linear baselines and the three simulation architectures.
pub fn simulation_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::Oracle,
        MethodConfig::Ols,
        MethodConfig::Pls {
            n_components: None,
            max_components: 10,
        },
        MethodConfig::Lasso { lambda: None },
        MethodConfig::ElasticNet {
            mixing: 0.5,
            lambda: None,
        },
        MethodConfig::deep("DL 64-32-16", &[64, 32, 16]),
        MethodConfig::deep("DL 32-16", &[32, 16]),
        MethodConfig::deep("DL 16", &[16]),
    ]
}

/// Per-fit context: cross-validation layout and the seed for this fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitContext {
    pub folds: usize,
    pub fold_scheme: FoldScheme,
    pub seed: u64,
}

impl FitContext {
    pub fn time_series(seed: u64) -> Self {
        FitContext {
            folds: 5,
            fold_scheme: FoldScheme::ContiguousBlock,
            seed,
        }
    }

    pub fn random_folds(seed: u64) -> Self {
        FitContext {
            folds: 5,
            fold_scheme: FoldScheme::RandomFold,
            seed,
        }
    }

    fn cv(&self, grid: Vec<f64>) -> CvSpec {
        CvSpec {
            folds: self.folds,
            grid,
            scheme: self.fold_scheme,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel<T> {
    Linear(LinearModel<T>),
    Deep(DeepFactorModel<T>),
    Lstm(LstmForecaster<T>),
}

impl<T: Scalar> FittedModel<T> {
    /// One prediction per row. The LSTM reads each row together with the
    /// rows preceding it, so rows must be consecutive periods.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        match self {
            FittedModel::Linear(m) => m.predict(x),
            FittedModel::Deep(m) => m.predict(x),
            FittedModel::Lstm(m) => m.predict(x),
        }
    }

    /// Forecast for the last row of `rows`. Only the LSTM reads the rows
    /// before it.
    pub fn predict_last(&self, rows: ArrayView2<T>) -> Result<T> {
        let n = rows.nrows();
        if n == 0 {
            return Err(Error::invalid("no rows to forecast from"));
        }
        let from = match self {
            FittedModel::Lstm(m) => n.saturating_sub(m.window),
            _ => n - 1,
        };
        let pred = self.predict(rows.slice(ndarray::s![from.., ..]))?;
        Ok(pred[pred.len() - 1])
    }

    pub fn as_deep(&self) -> Option<&DeepFactorModel<T>> {
        match self {
            FittedModel::Deep(m) => Some(m),
            _ => None,
        }
    }
}

/// Fits a linear family on z-scored predictors and folds the scaling back
/// into the coefficients.
fn fit_standardized<T: Scalar>(
    x: ArrayView2<T>,
    fit: impl FnOnce(ArrayView2<T>) -> Result<LinearModel<T>>,
) -> Result<LinearModel<T>> {
    let scaler = Standardizer::fit(x);
    let xs = scaler.transform(x);
    let mut m = fit(xs.view())?;
    m.coefficients /= &scaler.scale;
    m.intercept = m.intercept - scaler.mean.dot(&m.coefficients);
    Ok(m)
}

fn select<T: Scalar>(
    family: FitFamily,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    grid: Vec<f64>,
    ctx: &FitContext,
) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let folds = ctx.folds.min(x.nrows());
    let cv = CvSpec { folds, ..ctx.cv(grid) };
    Ok(linear::cross_validate(family, x, y, &cv)?.best)
}

pub fn fit_method<T: Scalar>(
    method: &MethodConfig,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    ctx: &FitContext,
) -> Result<FittedModel<T>> {
    let model = match method {
        MethodConfig::Ols => FittedModel::Linear(linear::ols_fit(x, y)?),
        MethodConfig::Ridge { lambda } => {
            FittedModel::Linear(fit_standardized(x, |xs| {
                let lam = match lambda {
                    Some(l) => *l,
                    None => select(FitFamily::Ridge, xs, y, linear::ridge_grid(xs), ctx)?,
                };
                linear::ridge_fit(xs, y, lam)
            })?)
        }
        MethodConfig::Lasso { lambda } => {
            let lam = match lambda {
                Some(l) => *l,
                None => select(FitFamily::Lasso, x, y, linear::lambda_grid(x, y, 1.0)?, ctx)?,
            };
            FittedModel::Linear(linear::lasso_fit(x, y, lam)?)
        }
        MethodConfig::ElasticNet { mixing, lambda } => {
            let lam = match lambda {
                Some(l) => *l,
                None => select(
                    FitFamily::ElasticNet { mixing: *mixing },
                    x,
                    y,
                    linear::lambda_grid(x, y, *mixing)?,
                    ctx,
                )?,
            };
            FittedModel::Linear(linear::elastic_net_fit(x, y, lam, *mixing)?)
        }
        MethodConfig::Pls {
            n_components,
            max_components,
        } => {
            let cap = (*max_components).min(x.ncols()).max(1);
            let a = match n_components {
                Some(a) => *a,
                None => select(
                    FitFamily::Pls,
                    x,
                    y,
                    (1..=cap).map(|a| a as f64).collect(),
                    ctx,
                )?
                .round() as usize,
            };
            FittedModel::Linear(linear::pls_fit(x, y, a)?)
        }
        MethodConfig::Deep {
            sgd,
            penalty,
            lambda_grid,
            init,
            ..
        } => {
            let spec = method.network_spec(x.ncols()).expect("deep method");
            let cfg = SgdConfig {
                seed: rng::derive_seed(ctx.seed, &[sgd.seed]),
                batch_size: sgd.batch_size.min(x.nrows()),
                ..*sgd
            };
            let model = match lambda_grid {
                Some(grid) if grid.len() > 1 => {
                    let folds = linear::fold_indices(x.nrows(), &ctx.cv(grid.clone()));
                    DeepFactorModel::fit_select_lambda(&spec, x, y, penalty, grid, &folds, &cfg, *init)?.0
                }
                Some(grid) => {
                    let pen = PenaltySpec {
                        lambda: grid[0],
                        ..*penalty
                    };
                    DeepFactorModel::fit(&spec, x, y, &pen, &cfg, *init)?
                }
                None => DeepFactorModel::fit(&spec, x, y, penalty, &cfg, *init)?,
            };
            FittedModel::Deep(model)
        }
        MethodConfig::Lstm { hidden, window, sgd } => {
            let cfg = SgdConfig {
                seed: rng::derive_seed(ctx.seed, &[sgd.seed]),
                ..*sgd
            };
            let spec = LstmSpec {
                input_dim: x.ncols(),
                hidden: hidden.clone(),
            };
            FittedModel::Lstm(LstmForecaster::fit(&spec, *window, x, y, &cfg)?)
        }
        MethodConfig::Oracle => {
            return Err(Error::invalid("the oracle method needs the true latent factors"))
        }
    };
    Ok(model)
}

/// Oracle OLS on simulation-provided factors.
pub fn fit_oracle<T: Scalar>(factors: ArrayView2<T>, y: ArrayView1<T>) -> Result<FittedModel<T>> {
    linear::oracle_ols_fit(factors, y).map(FittedModel::Linear)
}

/// Mean squared error of `model` on `(x, y)`.
pub fn mspe<T: Scalar>(model: &FittedModel<T>, x: ArrayView2<T>, y: ArrayView1<T>) -> Result<f64> {
    let pred = model.predict(x)?;
    Ok(linear::mean_squared_error(y, pred.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn method_json_round_trip() {
        let methods = equity_premium_methods();
        let text = serde_json::to_string(&methods).unwrap();
        let back: Vec<MethodConfig> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, methods);
        let m: MethodConfig = serde_json::from_str(r#"{"method": "deep", "hidden": [16, 8]}"#).unwrap();
        assert_eq!(m.name(), "DL 16-8");
        let mut expected = MethodConfig::deep("", &[16, 8]);
        if let MethodConfig::Deep { label, .. } = &mut expected {
            *label = None;
        }
        assert_eq!(m, expected);
        let m: MethodConfig =
            serde_json::from_str(r#"{"method": "deep", "hidden": [4], "lambda_grid": null}"#).unwrap();
        assert!(matches!(m, MethodConfig::Deep { lambda_grid: None, .. }));
        let m: MethodConfig = serde_json::from_str(r#"{"method": "lstm", "hidden": [4]}"#).unwrap();
        assert_eq!(m.name(), "LSTM-4");
    }

    #[test]
    fn names_follow_tables() {
        let names: Vec<String> = equity_premium_methods().iter().map(|m| m.name()).collect();
        assert_eq!(names, ["OLS", "Ridge", "PLS", "Lasso", "ElasNet", "DL1", "DL2", "DL3", "DL4"]);
    }

    #[test]
    fn ridge_method_is_scale_equivariant() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Array1<f64> = x.column(0).mapv(|v| v * 0.5) + 1.0;
        let ctx = FitContext::time_series(0);
        let m = MethodConfig::Ridge { lambda: Some(1.0) };
        let a = fit_method(&m, x.view(), y.view(), &ctx).unwrap().predict(x.view()).unwrap();
        let x2 = &x * 1000.0;
        let b = fit_method(&m, x2.view(), y.view(), &ctx).unwrap().predict(x2.view()).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_needs_factors() {
        let x = Array2::<f64>::zeros((5, 1));
        let y = Array1::<f64>::zeros(5);
        assert!(fit_method(&MethodConfig::Oracle, x.view(), y.view(), &FitContext::time_series(0)).is_err());
    }
}
