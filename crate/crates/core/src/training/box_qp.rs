//! Small dense box-constrained quadratic programs.
//!
//! The influence-function subproblem is a strictly convex QP over the
//! weight box `[-1, 1]^n` with `n` around seven, which a primal active-set
//! method solves exactly in a handful of equality-constrained solves.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Lower,
    Free,
    Upper,
}

/// Norm of the gradient projected onto the feasible directions; zero exactly
/// at the constrained minimum.
pub fn projected_gradient_norm(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lo: f64,
    hi: f64,
) -> f64 {
    let g = a * x - b;
    let mut norm2 = 0.0;
    for i in 0..x.len() {
        let gi = if x[i] <= lo {
            g[i].min(0.0)
        } else if x[i] >= hi {
            g[i].max(0.0)
        } else {
            g[i]
        };
        norm2 += gi * gi;
    }
    norm2.sqrt()
}

/// Minimizes `(1/2) xᵀ A x − bᵀ x` subject to `lo <= x_i <= hi`.
///
/// `A` must be symmetric positive definite. Starts from the projection of
/// the origin, alternates equality-constrained solves on the free variables
/// with bound additions along blocked steps, and releases one bound at a
/// time when its multiplier has the wrong sign. Terminates when the
/// projected gradient norm falls below `tol`.
pub fn solve_box_qp(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<DVector<f64>> {
    let n = b.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::invalid("box QP", "matrix and vector sizes disagree"));
    }
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::invalid("box QP", "need lo < hi"));
    }
    let mut x = DVector::from_element(n, 0.0f64.clamp(lo, hi));
    let mut state = vec![Bound::Free; n];

    // Each pass either adds a blocking bound or releases a mis-signed one;
    // with a strictly convex objective that cannot cycle, so the bound is
    // generous.
    for _ in 0..(20 * (n + 1) * (n + 1)) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == Bound::Free).collect();
        if !free.is_empty() {
            let nf = free.len();
            let mut af = DMatrix::zeros(nf, nf);
            let mut rhs = DVector::zeros(nf);
            for (r, &i) in free.iter().enumerate() {
                rhs[r] = b[i];
                for (c, &j) in free.iter().enumerate() {
                    af[(r, c)] = a[(i, j)];
                }
                for j in 0..n {
                    if state[j] != Bound::Free {
                        rhs[r] -= a[(i, j)] * x[j];
                    }
                }
            }
            let target = af
                .cholesky()
                .ok_or_else(|| Error::invalid("box QP", "matrix is not positive definite"))?
                .solve(&rhs);

            // Longest feasible step toward the equality solution.
            let mut alpha = 1.0;
            let mut blocker: Option<(usize, Bound)> = None;
            for (r, &i) in free.iter().enumerate() {
                let d = target[r] - x[i];
                let (limit, side) = if d < 0.0 && target[r] < lo {
                    (lo, Bound::Lower)
                } else if d > 0.0 && target[r] > hi {
                    (hi, Bound::Upper)
                } else {
                    continue;
                };
                let step = (limit - x[i]) / d;
                if step < alpha {
                    alpha = step;
                    blocker = Some((i, side));
                }
            }
            for (r, &i) in free.iter().enumerate() {
                x[i] += alpha * (target[r] - x[i]);
            }
            if let Some((i, side)) = blocker {
                x[i] = if side == Bound::Lower { lo } else { hi };
                state[i] = side;
                continue;
            }
        }

        if projected_gradient_norm(a, b, &x, lo, hi) < tol {
            return Ok(x);
        }
        // Release the most violated bound.
        let g = a * &x - b;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let violation = match state[i] {
                Bound::Lower => -g[i],
                Bound::Upper => g[i],
                Bound::Free => continue,
            };
            if violation > worst.map_or(0.0, |w| w.1) {
                worst = Some((i, violation));
            }
        }
        match worst {
            Some((i, _)) => state[i] = Bound::Free,
            None => return Ok(x),
        }
    }
    Err(Error::invalid("box QP", "active-set iteration failed to terminate"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.01
    }

    #[test]
    fn interior_solution_matches_linear_solve() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let b = DVector::from_vec(vec![0.5, -1.0]);
        let x = solve_box_qp(&a, &b, -1.0, 1.0, 1e-10).unwrap();
        assert_relative_eq!(x[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(x[1], -0.25, epsilon = 1e-12);
    }

    #[test]
    fn clips_to_active_bounds() {
        // Unconstrained optimum (5, -3) lies outside the box on both sides.
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let b = DVector::from_vec(vec![10.0, -6.0]);
        let x = solve_box_qp(&a, &b, -1.0, 1.0, 1e-10).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], -1.0, epsilon = 1e-12);
    }

    /// Exhaustive oracle: enumerate every lower/free/upper pattern, solve the
    /// free block exactly, and keep the feasible KKT point.
    fn enumeration_oracle(a: &DMatrix<f64>, b: &DVector<f64>, lo: f64, hi: f64) -> DVector<f64> {
        let n = b.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for code in 0..3usize.pow(n as u32) {
            let mut pattern = Vec::with_capacity(n);
            let mut rem = code;
            for _ in 0..n {
                pattern.push(rem % 3);
                rem /= 3;
            }
            let mut x = DVector::zeros(n);
            let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 0).collect();
            for i in 0..n {
                x[i] = match pattern[i] {
                    1 => lo,
                    2 => hi,
                    _ => 0.0,
                };
            }
            if !free.is_empty() {
                let nf = free.len();
                let mut af = DMatrix::zeros(nf, nf);
                let mut rhs = DVector::zeros(nf);
                for (r, &i) in free.iter().enumerate() {
                    rhs[r] = b[i];
                    for (c, &j) in free.iter().enumerate() {
                        af[(r, c)] = a[(i, j)];
                    }
                    for j in 0..n {
                        if pattern[j] != 0 {
                            rhs[r] -= a[(i, j)] * x[j];
                        }
                    }
                }
                let sol = match af.cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => continue,
                };
                for (r, &i) in free.iter().enumerate() {
                    x[i] = sol[r];
                }
            }
            // Feasibility and KKT multiplier signs.
            if (0..n).any(|i| x[i] < lo - 1e-9 || x[i] > hi + 1e-9) {
                continue;
            }
            let g = a * &x - b;
            let kkt = (0..n).all(|i| match pattern[i] {
                1 => g[i] >= -1e-9,
                2 => g[i] <= 1e-9,
                _ => true,
            });
            if !kkt {
                continue;
            }
            let obj = 0.5 * (&x.transpose() * a * &x)[(0, 0)] - b.dot(&x);
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x));
            }
        }
        best.expect("strictly convex QP has a KKT point").1
    }

    #[test]
    fn matches_enumeration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..25 {
            let n = 2 + case % 6;
            let a = spd(n, &mut rng);
            let scale = if case % 2 == 0 { 0.5 } else { 4.0 };
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale));
            let x = solve_box_qp(&a, &b, -1.0, 1.0, 1e-10).unwrap();
            let oracle = enumeration_oracle(&a, &b, -1.0, 1.0);
            assert!(
                (&x - &oracle).norm() < 1e-8,
                "case {case}: solver {x:?} oracle {oracle:?}"
            );
            assert!(projected_gradient_norm(&a, &b, &x, -1.0, 1.0) < 1e-8);
            assert!((0..n).all(|i| (-1.0..=1.0).contains(&x[i])));
        }
    }
}
