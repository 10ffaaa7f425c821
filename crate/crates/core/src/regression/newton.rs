//! Damped Newton maximization with box bounds and a free-coordinate mask.

use nalgebra::{DMatrix, DVector};

use super::objective::Eval;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub max_iter: usize,
    pub score_tol: f64,
    pub rel_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iter: 500, score_tol: 1e-8, rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonResult {
    pub theta: DVector<f64>,
    pub eval: Eval,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    fn clamp(&self, theta: &mut DVector<f64>) {
        for i in 0..theta.len() {
            theta[i] = theta[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// True when coordinate `i` sits on a bound and the gradient pushes outward.
    fn pinned(&self, theta: &DVector<f64>, grad: &DVector<f64>, i: usize) -> bool {
        (theta[i] <= self.lower[i] && grad[i] < 0.0) || (theta[i] >= self.upper[i] && grad[i] > 0.0)
    }
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximize `f` starting at `theta0`. `f(theta, true)` must return the value,
/// gradient and Hessian; `f(theta, false)` only needs the value.
pub(crate) fn maximize<F>(
    f: F,
    theta0: DVector<f64>,
    bounds: &Bounds,
    free: &[bool],
    opts: NewtonOptions,
) -> Result<NewtonResult>
where
    F: Fn(&DVector<f64>, bool) -> Eval,
{
    let mut theta = theta0;
    bounds.clamp(&mut theta);
    let mut eval = f(&theta, true);
    if !eval.value.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite at the starting point".into()));
    }
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let active: Vec<usize> =
            (0..theta.len()).filter(|&i| free[i] && !bounds.pinned(&theta, &eval.grad, i)).collect();
        if active.is_empty() {
            converged = true;
            break;
        }
        let score = active.iter().map(|&i| eval.grad[i].abs()).fold(0.0, f64::max);
        if score < opts.score_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let m = active.len();
        let g = DVector::from_iterator(m, active.iter().map(|&i| eval.grad[i]));
        let neg_h = DMatrix::from_fn(m, m, |r, c| -eval.hess[(active[r], active[c])]);
        let diag_scale = (0..m).map(|i| neg_h[(i, i)].abs()).fold(1.0, f64::max);

        let mut lambda = 0.0;
        let mut step: Option<(DVector<f64>, f64, bool)> = None;
        let mut predicted = f64::INFINITY;
        for _attempt in 0..12 {
            let mut a = neg_h.clone();
            for i in 0..m {
                a[(i, i)] += lambda;
            }
            let Some(chol) = a.cholesky() else {
                lambda = if lambda == 0.0 { 1e-8 * diag_scale } else { lambda * 10.0 };
                continue;
            };
            let d = chol.solve(&g);
            predicted = 0.5 * g.dot(&d);
            let mut t = 1.0;
            for _ in 0..50 {
                let mut cand = theta.clone();
                for (r, &i) in active.iter().enumerate() {
                    cand[i] += t * d[r];
                }
                bounds.clamp(&mut cand);
                let moved: f64 = active.iter().map(|&i| eval.grad[i] * (cand[i] - theta[i])).sum();
                let v = finite_or_neg_inf(f(&cand, false).value);
                if v >= eval.value + 1e-4 * moved {
                    step = Some((cand, v, t == 1.0 && lambda == 0.0));
                    break;
                }
                t *= 0.5;
            }
            if step.is_some() {
                break;
            }
            lambda = if lambda == 0.0 { 1e-8 * diag_scale } else { lambda * 10.0 };
        }

        let Some((cand, v, full_step)) = step else {
            // no ascent possible: at the optimum up to rounding
            converged = predicted <= 1e-10 * eval.value.abs().max(1.0);
            break;
        };
        let rel = (v - eval.value).abs() / eval.value.abs().max(1.0);
        let small_gain = predicted <= opts.rel_tol * eval.value.abs().max(1.0);
        theta = cand;
        eval = f(&theta, true);
        if !eval.value.is_finite() {
            return Err(Error::Numerical("log-likelihood became non-finite during optimization".into()));
        }
        if (full_step || small_gain) && rel < opts.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(NewtonResult { theta, eval, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(theta: &DVector<f64>, _: bool) -> Eval {
        // f = -(x-1)^2 - 2(y+3)^2 + (x-1)(y+3)
        let x = theta[0] - 1.0;
        let y = theta[1] + 3.0;
        Eval {
            value: -x * x - 2.0 * y * y + x * y,
            grad: DVector::from_vec(vec![-2.0 * x + y, -4.0 * y + x]),
            hess: DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -4.0]),
        }
    }

    #[test]
    fn finds_quadratic_maximum() {
        let r = maximize(quadratic, DVector::zeros(2), &Bounds::unbounded(2), &[true, true], NewtonOptions::default())
            .unwrap();
        assert!(r.converged);
        assert!((r.theta[0] - 1.0).abs() < 1e-10);
        assert!((r.theta[1] + 3.0).abs() < 1e-10);
    }

    #[test]
    fn respects_bounds_and_mask() {
        let bounds = Bounds { lower: vec![f64::NEG_INFINITY, -1.0], upper: vec![f64::INFINITY, 5.0] };
        let r = maximize(quadratic, DVector::zeros(2), &bounds, &[true, true], NewtonOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.theta[1], -1.0);
        // x maximizes -x^2 + x*2 => x = 1 + 1
        assert!((r.theta[0] - 2.0).abs() < 1e-9);

        let r = maximize(quadratic, DVector::zeros(2), &Bounds::unbounded(2), &[true, false], NewtonOptions::default())
            .unwrap();
        assert_eq!(r.theta[1], 0.0);
        assert!((r.theta[0] - 2.5).abs() < 1e-9);
    }
}
