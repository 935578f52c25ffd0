//! Piecewise-linear grid functions.
//!
//! Two learned functions share this machinery: a symmetric 1-D influence
//! function over lateral distance, and a 2-D risk surface with a bias term
//! over log time-to-closest-approach and log minimum separation. Both are
//! linear in their parameters, which the estimation subproblems rely on;
//! [`GridFunction1D::basis`] and [`GridFunction2D::basis`] expose the
//! interpolation coefficients directly. Queries outside a grid's domain are
//! clipped to the nearest grid point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric piecewise-linear function of lateral distance.
///
/// `weights` live on `n` evenly spaced grid points over `[0, u_max]`; the
/// function is evaluated at `|lat|`, making it symmetric about zero. Weights
/// are constrained to `[-1, 1]` so the value reads as a fraction of desired
/// speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction1D {
    pub weights: Vec<f64>,
    pub u_max: f64,
}

/// Interpolation footprint of a 1-D query: at most two adjacent nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basis1D {
    pub nodes: [usize; 2],
    pub coeffs: [f64; 2],
}

impl GridFunction1D {
    pub fn new(weights: Vec<f64>, u_max: f64) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::invalid("grid function", "need at least 2 grid points"));
        }
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Error::invalid("grid function", "u_max must be positive"));
        }
        if weights.iter().any(|w| !w.is_finite() || w.abs() > 1.0) {
            return Err(Error::invalid("grid function", "weights must lie in [-1, 1]"));
        }
        Ok(Self { weights, u_max })
    }

    /// All-zero weights on `n` nodes.
    pub fn zeros(n: usize, u_max: f64) -> Result<Self> {
        Self::new(vec![0.0; n], u_max)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    /// Grid spacing in meters.
    pub fn spacing(&self) -> f64 {
        self.u_max / (self.weights.len() - 1) as f64
    }

    /// Interpolation coefficients for a query at lateral distance `lat`.
    ///
    /// Coefficients are nonnegative and sum to one; queries beyond `u_max`
    /// clip to the last node.
    pub fn basis(&self, lat: f64) -> Basis1D {
        let n = self.weights.len();
        let a = lat.abs().min(self.u_max).max(0.0);
        let h = self.spacing();
        let cell = ((a / h).floor() as usize).min(n - 2);
        let frac = ((a - cell as f64 * h) / h).clamp(0.0, 1.0);
        Basis1D {
            nodes: [cell, cell + 1],
            coeffs: [1.0 - frac, frac],
        }
    }

    /// Interpolated value at lateral distance `lat`.
    pub fn eval(&self, lat: f64) -> f64 {
        let b = self.basis(lat);
        b.coeffs[0] * self.weights[b.nodes[0]] + b.coeffs[1] * self.weights[b.nodes[1]]
    }
}

/// Bilinear function on a regular square grid over `[lo, hi]²` plus a bias.
///
/// `weights` holds `n_b²` node values in row-major order (first axis major);
/// the bias is added to every evaluation. Inputs are clipped to `[lo, hi]`
/// per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction2D {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lo: f64,
    pub hi: f64,
    pub n_b: usize,
}

/// Interpolation footprint of a 2-D query: at most four cell-corner nodes,
/// plus an implicit bias coefficient of one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basis2D {
    pub nodes: [usize; 4],
    pub coeffs: [f64; 4],
}

impl GridFunction2D {
    pub fn new(weights: Vec<f64>, bias: f64, lo: f64, hi: f64, n_b: usize) -> Result<Self> {
        if n_b < 2 {
            return Err(Error::invalid("grid function", "need at least 2 grid points per axis"));
        }
        if weights.len() != n_b * n_b {
            return Err(Error::invalid(
                "grid function",
                format!("expected {} weights, got {}", n_b * n_b, weights.len()),
            ));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid("grid function", "domain requires lo < hi"));
        }
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::invalid("grid function", "non-finite parameters"));
        }
        Ok(Self { weights, bias, lo, hi, n_b })
    }

    pub fn zeros(n_b: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![0.0; n_b * n_b], 0.0, lo, hi, n_b)
    }

    /// Total parameter count including the bias.
    pub fn n_params(&self) -> usize {
        self.weights.len() + 1
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_b - 1) as f64
    }

    fn axis_cell(&self, x: f64) -> (usize, f64) {
        let a = x.clamp(self.lo, self.hi);
        let h = self.spacing();
        let cell = (((a - self.lo) / h).floor() as usize).min(self.n_b - 2);
        let frac = ((a - self.lo - cell as f64 * h) / h).clamp(0.0, 1.0);
        (cell, frac)
    }

    /// Bilinear interpolation coefficients for a query `(a, b)`.
    pub fn basis(&self, a: f64, b: f64) -> Basis2D {
        let (ia, fa) = self.axis_cell(a);
        let (ib, fb) = self.axis_cell(b);
        let base = ia * self.n_b + ib;
        Basis2D {
            nodes: [base, base + 1, base + self.n_b, base + self.n_b + 1],
            coeffs: [
                (1.0 - fa) * (1.0 - fb),
                (1.0 - fa) * fb,
                fa * (1.0 - fb),
                fa * fb,
            ],
        }
    }

    /// Interpolated value at `(a, b)` including the bias.
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let basis = self.basis(a, b);
        let mut acc = self.bias;
        for k in 0..4 {
            acc += basis.coeffs[k] * self.weights[basis.nodes[k]];
        }
        acc
    }
}
