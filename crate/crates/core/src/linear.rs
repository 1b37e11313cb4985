//! Linear comparison methods: OLS, ridge, lasso, elastic net, PLS and the
//! oracle OLS on true simulated factors, plus k-fold cross-validation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use crate::Scalar;

pub const CD_TOLERANCE: f64 = 1e-8;
pub const CD_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinearMethod {
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
    Pls,
    OracleOls,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Hyper {
    pub lambda: f64,
    pub mixing: f64,
    pub n_components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel<T> {
    pub intercept: T,
    pub coefficients: Array1<T>,
    pub method: LinearMethod,
    pub hyper: Hyper,
    /// False when coordinate descent hit the sweep limit.
    pub converged: bool,
    /// Set when the normal equations were singular and the pseudo-inverse was used.
    pub rank_deficient: bool,
}

impl<T: Scalar> LinearModel<T> {
    fn new(intercept: T, coefficients: Array1<T>, method: LinearMethod, hyper: Hyper) -> Self {
        LinearModel {
            intercept,
            coefficients,
            method,
            hyper,
            converged: true,
            rank_deficient: false,
        }
    }

    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                context: "linear model predictors",
                expected: self.coefficients.len(),
                actual: x.ncols(),
            });
        }
        Ok(x.dot(&self.coefficients).mapv(|v| v + self.intercept))
    }
}

fn check_xy<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "design rows vs response",
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("empty design"));
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("regression data"));
    }
    Ok(())
}

struct Centered<T> {
    xc: Array2<T>,
    yc: Array1<T>,
    x_mean: Array1<T>,
    y_mean: T,
}

fn center<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> Centered<T> {
    let x_mean = linalg::column_means(x);
    let y_mean = linalg::mean(y);
    Centered {
        xc: &x - &x_mean,
        yc: y.mapv(|v| v - y_mean),
        x_mean,
        y_mean,
    }
}

fn ridge_core<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: f64,
    method: LinearMethod,
) -> LinearModel<T> {
    let c = center(x, y);
    let mut gram = c.xc.t().dot(&c.xc);
    for i in 0..gram.nrows() {
        gram[[i, i]] += T::lit(lambda);
    }
    let rhs = c.xc.t().dot(&c.yc);
    let (beta, fallback) = linalg::solve_psd(gram.view(), rhs.view());
    let intercept = c.y_mean - c.x_mean.dot(&beta);
    let mut model = LinearModel::new(
        intercept,
        beta,
        method,
        Hyper {
            lambda,
            ..Hyper::default()
        },
    );
    model.rank_deficient = fallback;
    model
}

/// Least squares with an unpenalized intercept. Requires `T > p + 1`.
pub fn ols_fit<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<LinearModel<T>> {
    check_xy(x, y)?;
    if x.nrows() <= x.ncols() + 1 {
        return Err(Error::invalid(format!(
            "OLS needs more than p + 1 = {} observations, got {}",
            x.ncols() + 1,
            x.nrows()
        )));
    }
    Ok(ridge_core(x, y, 0.0, LinearMethod::Ols))
}

/// `β = (XᵀX + λI)⁻¹ Xᵀy` on centered data; the intercept is unpenalized.
pub fn ridge_fit<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, lambda: f64) -> Result<LinearModel<T>> {
    check_xy(x, y)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    Ok(ridge_core(x, y, lambda, LinearMethod::Ridge))
}

/// Regression on the true latent factors of a simulated panel.
pub fn oracle_ols_fit<T: Scalar>(f_true: ArrayView2<T>, y: ArrayView1<T>) -> Result<LinearModel<T>> {
    let mut m = ols_fit(f_true, y)?;
    m.method = LinearMethod::OracleOls;
    Ok(m)
}

/// Centered response and z-scored design (population standard deviation).
/// Constant columns are zeroed and keep scale 1.
#[derive(Debug, Clone)]
pub struct StandardizedDesign<T> {
    /// `p × n`, one contiguous row per predictor.
    pub xt: Array2<T>,
    pub yc: Array1<T>,
    pub x_mean: Array1<T>,
    pub x_scale: Array1<T>,
    pub y_mean: T,
    col_sq: Array1<T>,
}

impl<T: Scalar> StandardizedDesign<T> {
    pub fn new(x: ArrayView2<T>, y: ArrayView1<T>) -> Result<Self> {
        check_xy(x, y)?;
        let c = center(x, y);
        let sd = linalg::column_std(x, c.x_mean.view());
        let n = T::lit(x.nrows() as f64);
        let mut xt = c.xc.t().to_owned();
        let mut x_scale = Array1::ones(x.ncols());
        for (j, mut row) in xt.rows_mut().into_iter().enumerate() {
            if sd[j] > T::epsilon() * (T::one() + c.x_mean[j].abs()) {
                row /= sd[j];
                x_scale[j] = sd[j];
            } else {
                row.fill(T::zero());
            }
        }
        let col_sq = xt.rows().into_iter().map(|r| r.dot(&r) / n).collect();
        Ok(StandardizedDesign {
            xt,
            yc: c.yc,
            x_mean: c.x_mean,
            x_scale,
            y_mean: c.y_mean,
            col_sq,
        })
    }

    pub fn n(&self) -> usize {
        self.yc.len()
    }

    pub fn p(&self) -> usize {
        self.xt.nrows()
    }

    /// Smallest `λ` at which the lasso solution is identically zero: `max_j |x_jᵀy| / n`.
    pub fn lambda_max(&self) -> T {
        let n = T::lit(self.n() as f64);
        self.xt
            .dot(&self.yc)
            .iter()
            .fold(T::zero(), |m, &v| m.max(v.abs() / n))
    }

    /// Maps standardized coefficients back to the original predictor scale.
    pub fn unscale(&self, beta: &Array1<T>) -> (T, Array1<T>) {
        let coef = beta / &self.x_scale;
        (self.y_mean - self.x_mean.dot(&coef), coef)
    }

    /// Cyclic coordinate descent on
    /// `(1/2n)‖y − Xβ‖² + l1 ‖β‖₁ + l2 ‖β‖²`, starting from `beta`.
    /// Returns whether the largest coefficient change fell below the tolerance.
    pub fn coordinate_descent(&self, beta: &mut Array1<T>, l1: T, l2: T) -> bool {
        let n = T::lit(self.n() as f64);
        let tol = T::lit(CD_TOLERANCE);
        let two = T::lit(2.0);
        let mut resid = &self.yc - &self.xt.t().dot(beta);
        for _ in 0..CD_MAX_SWEEPS {
            let mut max_change = T::zero();
            for j in 0..self.p() {
                let cj = self.col_sq[j];
                let denom = cj + two * l2;
                if denom <= T::zero() {
                    continue;
                }
                let col = self.xt.row(j);
                let old = beta[j];
                let z = col.dot(&resid) / n + cj * old;
                let new = soft_threshold(z, l1) / denom;
                let delta = new - old;
                if delta != T::zero() {
                    resid.scaled_add(-delta, &col);
                    beta[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < tol {
                return true;
            }
        }
        false
    }
}

/// `S(z, γ) = sign(z) max(|z| − γ, 0)`.
#[inline]
pub fn soft_threshold<T: Scalar>(z: T, gamma: T) -> T {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        T::zero()
    }
}

fn elastic_net_core<T: Scalar>(
    design: &StandardizedDesign<T>,
    lambda: f64,
    mixing: f64,
    warm: Option<Array1<T>>,
) -> (Array1<T>, bool) {
    let mut beta = warm.unwrap_or_else(|| Array1::zeros(design.p()));
    let converged =
        design.coordinate_descent(&mut beta, T::lit(lambda * mixing), T::lit(lambda * (1.0 - mixing)));
    (beta, converged)
}

/// Lasso on internally standardized predictors:
/// `(1/2n)‖y − α − Xβ‖² + λ‖β‖₁`.
pub fn lasso_fit<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, lambda: f64) -> Result<LinearModel<T>> {
    let mut m = elastic_net_fit(x, y, lambda, 1.0)?;
    m.method = LinearMethod::Lasso;
    Ok(m)
}

/// Elastic net on internally standardized predictors:
/// `(1/2n)‖y − α − Xβ‖² + λ(ρ‖β‖₁ + (1−ρ)‖β‖²)`.
///
/// With `ρ = 1` this is [`lasso_fit`]; with `ρ = 0` it is [`ridge_fit`] on the
/// standardized design with ridge parameter `2nλ`.
pub fn elastic_net_fit<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    lambda: f64,
    mixing: f64,
) -> Result<LinearModel<T>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(0.0..=1.0).contains(&mixing) {
        return Err(Error::invalid(format!("mixing must lie in [0, 1], got {mixing}")));
    }
    let design = StandardizedDesign::new(x, y)?;
    let (beta, converged) = elastic_net_core(&design, lambda, mixing, None);
    let (intercept, coef) = design.unscale(&beta);
    let mut m = LinearModel::new(
        intercept,
        coef,
        LinearMethod::ElasticNet,
        Hyper {
            lambda,
            mixing,
            n_components: 0,
        },
    );
    m.converged = converged;
    Ok(m)
}

/// PLS1 via NIPALS deflation on z-scored predictors.
///
/// Stops early when a weight vector has norm below `1e-12`; the attained
/// component count is recorded in `hyper.n_components`.
pub fn pls_fit<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    n_components: usize,
) -> Result<LinearModel<T>> {
    if n_components == 0 || n_components > x.ncols() {
        return Err(Error::invalid(format!(
            "PLS n_components must lie in 1..={}, got {n_components}",
            x.ncols()
        )));
    }
    let design = StandardizedDesign::new(x, y)?;
    let mut xd = design.xt.t().to_owned();
    let mut yd = design.yc.clone();
    let p = design.p();
    let mut w_cols: Vec<Array1<T>> = Vec::new();
    let mut p_cols: Vec<Array1<T>> = Vec::new();
    let mut q = Vec::new();
    for _ in 0..n_components {
        let w = xd.t().dot(&yd);
        let norm = w.dot(&w).sqrt();
        if !(norm.as_f64() >= 1e-12) {
            break;
        }
        let w = w / norm;
        let t = xd.dot(&w);
        let tt = t.dot(&t);
        if !(tt.as_f64() > 0.0) {
            break;
        }
        let loading = xd.t().dot(&t) / tt;
        let qa = yd.dot(&t) / tt;
        let t_col = t.view().insert_axis(Axis(1));
        xd -= &t_col.dot(&loading.view().insert_axis(Axis(0)));
        yd.scaled_add(-qa, &t);
        w_cols.push(w);
        p_cols.push(loading);
        q.push(qa);
    }
    let a = w_cols.len();
    let beta = if a == 0 {
        Array1::zeros(p)
    } else {
        let mut wm = Array2::zeros((p, a));
        let mut pm = Array2::zeros((p, a));
        for k in 0..a {
            wm.column_mut(k).assign(&w_cols[k]);
            pm.column_mut(k).assign(&p_cols[k]);
        }
        let ptw = pm.t().dot(&wm);
        let q = Array1::from(q);
        let coef_scores = linalg::solve_general(ptw.view(), q.view())
            .ok_or_else(|| Error::Degenerate("singular PLS loading system".into()))?;
        wm.dot(&coef_scores)
    };
    let (intercept, coef) = design.unscale(&beta);
    Ok(LinearModel::new(
        intercept,
        coef,
        LinearMethod::Pls,
        Hyper {
            n_components: a,
            ..Hyper::default()
        },
    ))
}

/// Model family searched by [`cross_validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FitFamily {
    Ridge,
    Lasso,
    ElasticNet { mixing: f64 },
    /// Grid entries are component counts.
    Pls,
}

impl FitFamily {
    /// Grid ordering from the strongest to the weakest shrinkage.
    fn shrinkage_order(&self, grid: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..grid.len()).collect();
        match self {
            FitFamily::Pls => idx.sort_by(|&a, &b| grid[a].total_cmp(&grid[b])),
            _ => idx.sort_by(|&a, &b| grid[b].total_cmp(&grid[a])),
        }
        idx
    }

    pub fn fit<T: Scalar>(&self, x: ArrayView2<T>, y: ArrayView1<T>, hyper: f64) -> Result<LinearModel<T>> {
        match *self {
            FitFamily::Ridge => ridge_fit(x, y, hyper),
            FitFamily::Lasso => lasso_fit(x, y, hyper),
            FitFamily::ElasticNet { mixing } => elastic_net_fit(x, y, hyper, mixing),
            FitFamily::Pls => pls_fit(x, y, hyper.round() as usize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    RandomFold,
    #[default]
    ContiguousBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub folds: usize,
    pub grid: Vec<f64>,
    pub scheme: FoldScheme,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: f64,
    /// `(candidate, mean validation MSE)` in grid order.
    pub errors: Vec<(f64, f64)>,
}

/// Validation row indices of each fold.
pub fn fold_indices(n: usize, cv: &CvSpec) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if cv.scheme == FoldScheme::RandomFold {
        let mut r = rng::seeded(rng::derive_seed(cv.seed, &[rng::TAG_CV]));
        order.shuffle(&mut r);
    }
    (0..cv.folds)
        .map(|k| order[k * n / cv.folds..(k + 1) * n / cv.folds].to_vec())
        .collect()
}

pub(crate) fn split_rows<T: Scalar>(
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    val: &[usize],
) -> (Array2<T>, Array1<T>, Array2<T>, Array1<T>) {
    let mut is_val = vec![false; x.nrows()];
    val.iter().for_each(|&i| is_val[i] = true);
    let train: Vec<usize> = (0..x.nrows()).filter(|&i| !is_val[i]).collect();
    (
        x.select(Axis(0), &train),
        y.select(Axis(0), &train),
        x.select(Axis(0), val),
        y.select(Axis(0), val),
    )
}

fn mse<T: Scalar>(a: ArrayView1<T>, b: ArrayView1<T>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b.iter())
        .map(|(&u, &v)| ((u - v) * (u - v)).as_f64())
        .sum::<f64>()
        / n
}

/// K-fold cross-validation over `cv.grid`. The error of a candidate is the
/// mean over folds of the fold MSE; ties go to the stronger shrinkage.
pub fn cross_validate<T: Scalar>(
    family: FitFamily,
    x: ArrayView2<T>,
    y: ArrayView1<T>,
    cv: &CvSpec,
) -> Result<CvResult> {
    check_xy(x, y)?;
    if cv.grid.is_empty() {
        return Err(Error::invalid("cross-validation grid is empty"));
    }
    if cv.folds < 2 || cv.folds > x.nrows() {
        return Err(Error::invalid(format!("folds must lie in 2..={}, got {}", x.nrows(), cv.folds)));
    }
    let order = family.shrinkage_order(&cv.grid);
    let mut totals = vec![0.0; cv.grid.len()];
    for val in fold_indices(x.nrows(), cv) {
        let (xtr, ytr, xva, yva) = split_rows(x, y, &val);
        match family {
            FitFamily::Lasso | FitFamily::ElasticNet { .. } => {
                let mixing = match family {
                    FitFamily::ElasticNet { mixing } => mixing,
                    _ => 1.0,
                };
                let design = StandardizedDesign::new(xtr.view(), ytr.view())?;
                let mut warm: Option<Array1<T>> = None;
                // `order` runs from large to small λ, so warm starts follow the path.
                for &i in &order {
                    let (beta, _) = elastic_net_core(&design, cv.grid[i], mixing, warm.take());
                    let (a, coef) = design.unscale(&beta);
                    let pred = xva.dot(&coef).mapv(|v| v + a);
                    totals[i] += mse(yva.view(), pred.view());
                    warm = Some(beta);
                }
            }
            _ => {
                for (i, &h) in cv.grid.iter().enumerate() {
                    let m = family.fit(xtr.view(), ytr.view(), h)?;
                    let pred = m.predict(xva.view())?;
                    totals[i] += mse(yva.view(), pred.view());
                }
            }
        }
    }
    let errors: Vec<(f64, f64)> = cv
        .grid
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| (h, t / cv.folds as f64))
        .collect();
    let mut best = order[0];
    for &i in &order[1..] {
        if errors[i].1 < errors[best].1 {
            best = i;
        }
    }
    Ok(CvResult {
        best: cv.grid[best],
        errors,
    })
}

/// `count` log-spaced values from `hi` down to `hi · ratio`.
pub fn log_grid(hi: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![hi];
    }
    (0..count)
        .map(|i| hi * ratio.powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// 50 points from the deactivation threshold down to `1e-4` of it.
pub fn lambda_grid<T: Scalar>(x: ArrayView2<T>, y: ArrayView1<T>, mixing: f64) -> Result<Vec<f64>> {
    let design = StandardizedDesign::new(x, y)?;
    let mut hi = design.lambda_max().as_f64() / mixing.max(1e-3);
    if !(hi > 0.0) {
        hi = 1.0;
    }
    Ok(log_grid(hi, 1e-4, 50))
}

/// 50 points from `10²·s` down to `10⁻⁴·s`, `s` the mean diagonal of `XcᵀXc`.
pub fn ridge_grid<T: Scalar>(x: ArrayView2<T>) -> Vec<f64> {
    let means = linalg::column_means(x);
    let sd = linalg::column_std(x, means.view());
    let n = x.nrows() as f64;
    let mut s = sd.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() * n / x.ncols().max(1) as f64;
    if !(s > 0.0) {
        s = 1.0;
    }
    log_grid(1e2 * s, 1e-6, 50)
}

pub fn mean_squared_error<T: Scalar>(y: ArrayView1<T>, pred: ArrayView1<T>) -> f64 {
    mse(y, pred)
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_design(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut r = rng::seeded(seed);
        let x = Array2::from_shape_simple_fn((n, p), || rng::standard_normal(&mut r));
        let beta: Array1<f64> = (0..p).map(|j| (j as f64 - 1.0) * 0.7).collect();
        let y = x.dot(&beta) + Array1::from_shape_simple_fn(n, || 0.5 * rng::standard_normal(&mut r));
        (x, y)
    }

    #[test]
    fn ols_exact_line() {
        let x: Array2<f64> = array![[1.0], [2.0], [3.0]];
        let m = ols_fit(x.view(), array![2.0, 4.0, 6.0].view()).unwrap();
        assert!(m.intercept.abs() < 1e-12);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_response() {
        let (x, _) = random_design(20, 3, 1);
        let y = Array1::from_elem(20, 4.5);
        let m = ols_fit(x.view(), y.view()).unwrap();
        assert!(m.coefficients.iter().all(|b| b.abs() < 1e-12));
        assert!((m.intercept - 4.5).abs() < 1e-12);
    }

    #[test]
    fn ols_residuals_orthogonal() {
        let (x, y) = random_design(50, 3, 2);
        let m = ols_fit(x.view(), y.view()).unwrap();
        let r = &y - &m.predict(x.view()).unwrap();
        assert!(r.sum().abs() < 1e-8);
        for col in x.columns() {
            assert!(col.dot(&r).abs() < 1e-8);
        }
    }

    #[test]
    fn ols_requires_enough_rows() {
        let x = array![[1.0, 2.0], [2.0, 1.0], [0.0, 1.0]];
        assert!(ols_fit(x.view(), array![1.0, 2.0, 3.0].view()).is_err());
    }

    #[test]
    fn ols_flags_rank_deficiency() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0], [5.0, 10.0]];
        let y: Array1<f64> = array![1.0, 2.0, 2.5, 4.5, 5.0];
        let m = ols_fit(x.view(), y.view()).unwrap();
        assert!(m.rank_deficient);
        assert!(m.coefficients.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ridge_examples() {
        let x: Array2<f64> = array![[1.0], [-1.0]];
        let y = array![1.0, -1.0];
        let m = ridge_fit(x.view(), y.view(), 1.0).unwrap();
        assert!((m.coefficients[0] - 2.0 / 3.0).abs() < 1e-12);

        let (x, y) = random_design(40, 4, 3);
        let a = ridge_fit(x.view(), y.view(), 0.0).unwrap();
        let b = ols_fit(x.view(), y.view()).unwrap();
        for (u, v) in a.coefficients.iter().zip(b.coefficients.iter()) {
            assert!((u - v).abs() < 1e-10);
        }
        let big = ridge_fit(x.view(), y.view(), 1e12).unwrap();
        assert!(big.coefficients.dot(&big.coefficients).sqrt() < 1e-6);
    }

    #[test]
    fn lasso_zero_lambda_is_ols() {
        let (x, y) = random_design(60, 4, 4);
        let l = lasso_fit(x.view(), y.view(), 0.0).unwrap();
        let o = ols_fit(x.view(), y.view()).unwrap();
        assert!(l.converged);
        for (u, v) in l.coefficients.iter().zip(o.coefficients.iter()) {
            assert!((u - v).abs() < 1e-6);
        }
        assert!((l.intercept - o.intercept).abs() < 1e-6);
    }

    #[test]
    fn lasso_deactivation_threshold() {
        let (x, y) = random_design(60, 5, 5);
        let design = StandardizedDesign::new(x.view(), y.view()).unwrap();
        // brute-force threshold from the standardized columns
        let n = 60.0;
        let mut lam_max: f64 = 0.0;
        for j in 0..5 {
            let col = x.column(j);
            let m = col.mean().unwrap();
            let sd = (col.mapv(|v| (v - m).powi(2)).sum() / n).sqrt();
            let ym = y.mean().unwrap();
            let dot: f64 = col.iter().zip(y.iter()).map(|(a, b)| (a - m) / sd * (b - ym)).sum();
            lam_max = lam_max.max(dot.abs() / n);
        }
        assert!((design.lambda_max() - lam_max).abs() < 1e-12);
        let m = lasso_fit(x.view(), y.view(), lam_max).unwrap();
        assert!(m.coefficients.iter().all(|&b| b == 0.0));
        let m = lasso_fit(x.view(), y.view(), lam_max * 0.9).unwrap();
        assert!(m.coefficients.iter().any(|&b| b != 0.0));
    }

    #[test]
    fn pls_validation() {
        let (x, y) = random_design(30, 3, 6);
        assert!(pls_fit(x.view(), y.view(), 0).is_err());
        assert!(pls_fit(x.view(), y.view(), 4).is_err());
    }

    #[test]
    fn pls_mse_non_increasing() {
        let (x, y) = random_design(80, 6, 7);
        let mut last = f64::INFINITY;
        for a in 1..=6 {
            let m = pls_fit(x.view(), y.view(), a).unwrap();
            let e = mean_squared_error(y.view(), m.predict(x.view()).unwrap().view());
            assert!(e <= last + 1e-12, "component {a}: {e} > {last}");
            last = e;
        }
    }

    #[test]
    fn pls_stops_early_on_exhausted_response() {
        // y lies in the span of the first component; the second weight vector vanishes.
        let x = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0], [5.0, 5.0]];
        let y = array![1.0, 2.0, 3.0, 4.0, 5.0];
        let m = pls_fit(x.view(), y.view(), 2).unwrap();
        assert_eq!(m.hyper.n_components, 1);
    }

    #[test]
    fn cv_single_candidate_and_ties() {
        let (x, y) = random_design(40, 3, 8);
        let cv = CvSpec { folds: 4, grid: vec![0.3], scheme: FoldScheme::ContiguousBlock, seed: 0 };
        assert_eq!(cross_validate(FitFamily::Lasso, x.view(), y.view(), &cv).unwrap().best, 0.3);
        // λ large enough to zero every coefficient at every fold: all tie, pick the largest
        let cv = CvSpec { folds: 4, grid: vec![1e3, 1e4, 1e5], scheme: FoldScheme::RandomFold, seed: 1 };
        assert_eq!(cross_validate(FitFamily::Lasso, x.view(), y.view(), &cv).unwrap().best, 1e5);
        assert!(cross_validate(FitFamily::Lasso, x.view(), y.view(), &CvSpec { grid: vec![], ..cv }).is_err());
    }

    #[test]
    fn folds_partition_rows() {
        for scheme in [FoldScheme::RandomFold, FoldScheme::ContiguousBlock] {
            let cv = CvSpec { folds: 5, grid: vec![1.0], scheme, seed: 3 };
            let mut all: Vec<usize> = fold_indices(23, &cv).concat();
            all.sort();
            assert_eq!(all, (0..23).collect::<Vec<_>>());
        }
    }

    #[test]
    fn grids_are_descending() {
        let (x, y) = random_design(30, 3, 9);
        let g = lambda_grid(x.view(), y.view(), 1.0).unwrap();
        assert_eq!(g.len(), 50);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!((g[49] / g[0] - 1e-4).abs() < 1e-12);
    }
}
