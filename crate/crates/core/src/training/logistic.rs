//! L2-regularized logistic regression on sparse bilinear-basis rows.
//!
//! Each observation activates at most four grid nodes plus a bias, so the
//! design is sparse; the parameter count stays small (a few dozen), which
//! makes damped Newton the natural solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Basis2D;

/// Numerically stable `ln(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(row: &Basis2D, theta: &DVector<f64>, dim: usize) -> f64 {
    let mut r = theta[dim];
    for k in 0..4 {
        r += row.coeffs[k] * theta[row.nodes[k]];
    }
    r
}

fn nll(rows: &[Basis2D], labels: &[bool], theta: &DVector<f64>, dim: usize, alpha: f64) -> f64 {
    let mut total = alpha * theta.norm_squared();
    for (row, &z) in rows.iter().zip(labels) {
        let r = logit(row, theta, dim);
        total += softplus(r) - if z { r } else { 0.0 };
    }
    total
}

/// Fits weights and bias by damped Newton iteration.
///
/// `rows[i]` gives the active grid nodes and coefficients of observation
/// `i`, `labels[i]` its binary outcome, `dim` the grid weight count. The
/// penalty `alpha * ||theta||^2` covers the bias as well. Returns the
/// parameter vector with the bias in the last slot, optimized until the
/// gradient norm falls below `tol * (1 + rows.len())`. `init` warm-starts
/// the iteration; it must hold `dim + 1` entries.
pub fn fit_logistic(
    rows: &[Basis2D],
    labels: &[bool],
    dim: usize,
    alpha: f64,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if rows.len() != labels.len() {
        return Err(Error::invalid("logistic fit", "rows and labels must have equal length"));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::invalid("logistic fit", "alpha must be strictly positive"));
    }
    if rows.iter().any(|r| r.nodes.iter().any(|&n| n >= dim)) {
        return Err(Error::invalid("logistic fit", "basis node index out of range"));
    }
    let n_params = dim + 1;
    let mut theta = match init {
        Some(start) if start.len() == n_params => DVector::from_column_slice(start),
        Some(_) => {
            return Err(Error::invalid("logistic fit", "warm start has the wrong length"));
        }
        None => DVector::zeros(n_params),
    };
    let mut obj = nll(rows, labels, &theta, dim, alpha);
    // The gradient is a sum over rows, so its achievable norm floor grows
    // with the dataset; hold it to a size-scaled threshold rather than an
    // absolute one.
    let grad_tol = tol * (1.0 + rows.len() as f64);
    for _ in 0..500 {
        let mut grad = 2.0 * alpha * &theta;
        let mut hess = DMatrix::identity(n_params, n_params) * (2.0 * alpha);
        for (row, &z) in rows.iter().zip(labels) {
            let p = sigmoid(logit(row, &theta, dim));
            let resid = p - if z { 1.0 } else { 0.0 };
            let w = (p * (1.0 - p)).max(1e-12);
            // The row's nonzero entries: four grid nodes and the bias.
            let idx = [row.nodes[0], row.nodes[1], row.nodes[2], row.nodes[3], dim];
            let val = [row.coeffs[0], row.coeffs[1], row.coeffs[2], row.coeffs[3], 1.0];
            for a in 0..5 {
                grad[idx[a]] += resid * val[a];
                for b in 0..5 {
                    hess[(idx[a], idx[b])] += w * val[a] * val[b];
                }
            }
        }
        if grad.norm() < grad_tol {
            return Ok(theta.iter().copied().collect());
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Numerical("logistic Hessian is not positive definite".into()))?
            .solve(&grad);
        let slope = grad.dot(&step);
        // Once the Newton decrement falls below the objective's rounding
        // granularity a line search cannot measure progress; the full step is
        // safe in the quadratic phase such a tiny decrement certifies.
        if 0.5 * slope <= 1e-12 * (1.0 + obj.abs()) {
            theta -= &step;
            obj = nll(rows, labels, &theta, dim, alpha);
            continue;
        }
        // Armijo backtracking keeps the damped iteration globally convergent.
        let mut scale = 1.0;
        loop {
            let candidate = &theta - scale * &step;
            let cand_obj = nll(rows, labels, &candidate, dim, alpha);
            if cand_obj <= obj - 1e-4 * scale * slope {
                theta = candidate;
                obj = cand_obj;
                break;
            }
            scale *= 0.5;
            if scale < 1e-12 {
                return Err(Error::Numerical(
                    "logistic line search failed to make progress".into(),
                ));
            }
        }
    }
    Err(Error::Numerical(
        "logistic fit did not converge within the iteration budget".into(),
    ))
}
