//! Small dense solvers used by the linear baselines.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::Scalar;

/// Cholesky factor `L` with `A = L Lᵀ`, or `None` when a pivot is not
/// comfortably positive relative to the diagonal scale.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let scale = a.diag().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let floor = scale * T::epsilon() * T::lit(1e3) * T::lit(n.max(1) as f64);
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut y = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = Array1::<T>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues and eigenvectors (as columns).
pub fn symmetric_eigen<T: Scalar>(a: ArrayView2<T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        let total: T = m.iter().map(|&x| x * x).sum();
        if off <= total * T::epsilon() * T::epsilon() || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Minimum-norm solution of `A x = b` for symmetric positive semidefinite `A`.
pub fn pinv_solve<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> Array1<T> {
    let (vals, vecs) = symmetric_eigen(a);
    let top = vals.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let cut = top * T::epsilon() * T::lit(a.nrows().max(1) as f64) * T::lit(1e2);
    let proj = vecs.t().dot(&b);
    let mut scaled = Array1::<T>::zeros(vals.len());
    for i in 0..vals.len() {
        if vals[i] > cut {
            scaled[i] = proj[i] / vals[i];
        }
    }
    vecs.dot(&scaled)
}

/// Solves a symmetric positive semidefinite system, falling back to the
/// pseudo-inverse when Cholesky fails. The flag reports the fallback.
pub fn solve_psd<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> (Array1<T>, bool) {
    match cholesky(a) {
        Some(l) => (cholesky_solve(&l, b), false),
        None => (pinv_solve(a, b), true),
    }
}

/// Gaussian elimination with partial pivoting. `None` for singular systems.
pub fn solve_general<T: Scalar>(a: ArrayView2<T>, b: ArrayView1<T>) -> Option<Array1<T>> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut x = b.to_owned();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().partial_cmp(&m[[j, col]].abs()).unwrap())?;
        if m[[piv, col]].abs() <= T::epsilon() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                m.swap([piv, k], [col, k]);
            }
            x.swap(piv, col);
        }
        for r in (col + 1)..n {
            let f = m[[r, col]] / m[[col, col]];
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[[col, k]];
                m[[r, k]] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= m[[i, k]] * x[k];
        }
        x[i] = s / m[[i, i]];
    }
    Some(x)
}

pub fn column_means<T: Scalar>(x: ArrayView2<T>) -> Array1<T> {
    if x.nrows() == 0 {
        return Array1::zeros(x.ncols());
    }
    x.mean_axis(Axis(0)).expect("non-empty")
}

/// Population standard deviation of each column (divisor `n`).
pub fn column_std<T: Scalar>(x: ArrayView2<T>, means: ArrayView1<T>) -> Array1<T> {
    let n = T::lit(x.nrows().max(1) as f64);
    let mut out = Array1::zeros(x.ncols());
    for (j, col) in x.columns().into_iter().enumerate() {
        let ss: T = col.iter().map(|&v| (v - means[j]) * (v - means[j])).sum();
        out[j] = (ss / n).sqrt();
    }
    out
}

pub fn mean<T: Scalar>(v: ArrayView1<T>) -> T {
    if v.is_empty() {
        return T::zero();
    }
    v.sum() / T::lit(v.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_solves_spd_system() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let b = array![2.0, 1.0];
        let (x, fallback) = solve_psd(a.view(), b.view());
        assert!(!fallback);
        let r = a.dot(&x) - &b;
        assert!(r.iter().all(|v: &f64| v.abs() < 1e-12));
    }

    #[test]
    fn singular_system_uses_pseudo_inverse() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b: Array1<f64> = array![2.0, 2.0];
        let (x, fallback) = solve_psd(a.view(), b.view());
        assert!(fallback);
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let a: Array2<f64> = array![[2.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]];
        let (vals, vecs) = symmetric_eigen(a.view());
        let rebuilt = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (x, y) in rebuilt.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_elimination_pivots() {
        let a = array![[0.0, 1.0], [2.0, 0.0]];
        let x = solve_general(a.view(), array![3.0, 4.0].view()).unwrap();
        assert_eq!(x, array![2.0, 3.0]);
    }
}
