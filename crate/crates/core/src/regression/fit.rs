use nalgebra::{DMatrix, DVector};

use super::newton::{maximize, Bounds, NewtonOptions, NewtonResult};
use super::objective::{self, assemble, count_local, logistic_local, weighted, Eval, Slots};
use super::{check_response, full_objective, Family, FittedModel, ModelSpec, StdErrors, K_MAX, K_MIN};
use crate::error::{Error, Result};
use crate::special::{logistic, logit};

const EM_MAX_ITER: usize = 500;
const EM_REL_TOL: f64 = 1e-9;
const NB_MAX_ROUNDS: usize = 50;

/// Maximum-likelihood fit of `spec` to `y`.
///
/// A fit that runs out of iterations is still returned, with
/// `converged == false`; rank problems and unidentifiable data are errors.
pub fn fit(spec: &ModelSpec, y: &[f64]) -> Result<FittedModel> {
    check_response(spec, y)?;
    let family = spec.family();
    if family.is_count() && y.iter().all(|&v| v == 0.0) {
        return Err(Error::Unidentifiable("all responses are zero".into()));
    }
    match family {
        Family::Normal => fit_normal(spec, y),
        Family::Poisson => {
            let r = fit_poisson(spec.mean_design(), y)?;
            finish(spec, y, r.theta, r.converged, r.iterations, Vec::new())
        }
        Family::NegBinomial => {
            let (theta, converged, iterations) = fit_negbin(spec.mean_design(), y)?;
            finish(spec, y, theta, converged, iterations, Vec::new())
        }
        Family::Zip | Family::Zinb => fit_zero_inflated(spec, y),
    }
}

fn alpha_bounds(dim: usize) -> Bounds {
    let mut b = Bounds::unbounded(dim);
    b.lower[dim - 1] = K_MIN.ln();
    b.upper[dim - 1] = K_MAX.ln();
    b
}

fn count_eval(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>, theta: &DVector<f64>, nb: bool, derivs: bool) -> Eval {
    let p = x.ncols();
    let eta = x * theta.rows(0, p);
    let (base, alpha) = if nb { (objective::Base::NegBinomial, theta[p]) } else { (objective::Base::Poisson, 0.0) };
    let locals: Vec<_> = (0..y.len())
        .map(|i| {
            let l = count_local(base, y[i], eta[i], alpha, derivs);
            match w {
                Some(w) => weighted(l, w[i]),
                None => l,
            }
        })
        .collect();
    let slots = Slots { mean: Some(x), zero: None, alpha: nb };
    if derivs {
        assemble(&slots, &locals)
    } else {
        Eval { value: locals.iter().map(|l| l.ll).sum(), grad: DVector::zeros(0), hess: DMatrix::zeros(0, 0) }
    }
}

/// Least-squares fit of ln(y + 0.5): a cheap, stable start for log-link fits.
fn log_linear_start(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> DVector<f64> {
    let n = y.len();
    let sw: Vec<f64> = (0..n).map(|i| w.map_or(1.0, |w| w[i]).sqrt()).collect();
    let xs = DMatrix::from_fn(n, x.ncols(), |r, c| x[(r, c)] * sw[r]);
    let ys = DVector::from_iterator(n, (0..n).map(|i| (y[i] + 0.5).ln() * sw[i]));
    xs.svd(true, true).solve(&ys, 1e-12).unwrap_or_else(|_| DVector::zeros(x.ncols()))
}

/// Poisson regression by iteratively reweighted least squares. With the
/// canonical log link the IRLS update coincides with the Newton step.
fn fit_poisson_weighted(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    start: Option<DVector<f64>>,
) -> Result<NewtonResult> {
    let theta0 = start.unwrap_or_else(|| log_linear_start(x, y, w));
    let dim = x.ncols();
    maximize(
        |t, d| count_eval(x, y, w, t, false, d),
        theta0,
        &Bounds::unbounded(dim),
        &vec![true; dim],
        NewtonOptions::default(),
    )
}

fn fit_poisson(x: &DMatrix<f64>, y: &[f64]) -> Result<NewtonResult> {
    fit_poisson_weighted(x, y, None, None)
}

/// Method-of-moments reciprocal dispersion, clamped into the allowed range.
fn moment_k(y: &[f64], mu: &DVector<f64>, w: Option<&[f64]>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        let wi = w.map_or(1.0, |w| w[i]);
        num += wi * mu[i] * mu[i];
        den += wi * ((y[i] - mu[i]).powi(2) - mu[i]);
    }
    if den <= 0.0 {
        K_MAX
    } else {
        (num / den).clamp(K_MIN, K_MAX)
    }
}

/// NB regression: alternate beta (IRLS given k) and ln k (Newton given
/// beta), then a joint Newton polish.
fn fit_negbin_weighted(
    x: &DMatrix<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    start: Option<DVector<f64>>,
) -> Result<(DVector<f64>, bool, usize)> {
    let p = x.ncols();
    let dim = p + 1;
    let mut theta = match start {
        Some(t) => t,
        None => {
            let pois = fit_poisson_weighted(x, y, w, None)?;
            let mu = (x * &pois.theta).map(f64::exp);
            let mut t = pois.theta.clone().resize_vertically(dim, 0.0);
            t[p] = moment_k(y, &mu, w).ln();
            t
        }
    };
    let bounds = alpha_bounds(dim);
    let f = |t: &DVector<f64>, d: bool| count_eval(x, y, w, t, true, d);
    let beta_mask: Vec<bool> = (0..dim).map(|i| i < p).collect();
    let alpha_mask: Vec<bool> = (0..dim).map(|i| i == p).collect();
    let mut iterations = 0;
    let mut last = f(&theta, false).value;
    for _ in 0..NB_MAX_ROUNDS {
        let r = maximize(f, theta, &bounds, &beta_mask, NewtonOptions::default())?;
        iterations += r.iterations;
        let r = maximize(f, r.theta, &bounds, &alpha_mask, NewtonOptions::default())?;
        iterations += r.iterations;
        theta = r.theta;
        let v = r.eval.value;
        let rel = (v - last).abs() / v.abs().max(1.0);
        last = v;
        if rel < 1e-10 {
            break;
        }
    }
    let r = maximize(f, theta, &bounds, &vec![true; dim], NewtonOptions::default())?;
    iterations += r.iterations;
    Ok((r.theta, r.converged, iterations))
}

fn fit_negbin(x: &DMatrix<f64>, y: &[f64]) -> Result<(DVector<f64>, bool, usize)> {
    fit_negbin_weighted(x, y, None, None)
}

fn zero_mass(nb: bool, mu: f64, alpha: f64) -> f64 {
    if nb {
        let k = alpha.exp();
        (-k * (mu / k).ln_1p()).exp()
    } else {
        (-mu).exp()
    }
}

fn fit_zero_inflated(spec: &ModelSpec, y: &[f64]) -> Result<FittedModel> {
    let x = spec.mean_design();
    let z = spec.zero_design().expect("zero-inflated spec has a zero design");
    let nb = spec.family() == Family::Zinb;
    let (p, q) = (x.ncols(), z.ncols());
    let n = y.len();

    // initialization
    let pois = fit_poisson(x, y)?;
    let mu = (x * &pois.theta).map(f64::exp);
    let alpha0 = if nb { moment_k(y, &mu, None).ln() } else { 0.0 };
    let observed_zeros = y.iter().filter(|&&v| v == 0.0).count() as f64;
    let expected_zeros: f64 = mu.iter().map(|&m| zero_mass(nb, m, alpha0)).sum();
    let p0 = ((observed_zeros - expected_zeros) / n as f64).clamp(0.01, 0.95);
    let mut count_theta = pois.theta.clone();
    if nb {
        count_theta = count_theta.resize_vertically(p + 1, alpha0);
    }
    let mut gamma = DVector::zeros(q);
    gamma[0] = logit(p0);

    let dim = spec.n_params();
    let join = |ct: &DVector<f64>, g: &DVector<f64>| {
        let mut t = DVector::zeros(dim);
        t.rows_mut(0, p).copy_from(&ct.rows(0, p));
        t.rows_mut(p, q).copy_from(g);
        if nb {
            t[dim - 1] = ct[p];
        }
        t
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let zslots = Slots { mean: None, zero: Some(z), alpha: false };
    for _ in 0..EM_MAX_ITER {
        let theta = join(&count_theta, &gamma);
        let ll = full_objective(spec, y, &theta, false).value;
        if !ll.is_finite() {
            return Err(Error::Numerical("log-likelihood is not finite during EM".into()));
        }
        if let Some(&prev) = trace.last() {
            let rel: f64 = (ll - prev) / f64::abs(prev).max(1.0);
            if rel.abs() < EM_REL_TOL {
                trace.push(ll);
                break;
            }
        }
        trace.push(ll);
        iterations += 1;

        // E-step: posterior probability that each zero is structural
        let eta = x * count_theta.rows(0, p);
        let zeta = z * &gamma;
        let alpha = if nb { count_theta[p] } else { 0.0 };
        let w: Vec<f64> = (0..n)
            .map(|i| {
                if y[i] > 0.0 {
                    0.0
                } else {
                    let f0 = zero_mass(nb, eta[i].exp(), alpha);
                    logistic(zeta[i] - f0.ln())
                }
            })
            .collect();

        // M-step, zero part: weighted logistic regression
        let fz = |g: &DVector<f64>, _: bool| {
            let zeta = z * g;
            let locals: Vec<_> = (0..n).map(|i| logistic_local(w[i], zeta[i])).collect();
            assemble(&zslots, &locals)
        };
        gamma = maximize(fz, gamma, &Bounds::unbounded(q), &vec![true; q], NewtonOptions::default())?.theta;

        // M-step, count part: fit weighted by 1 - w
        let cw: Vec<f64> = w.iter().map(|wi| 1.0 - wi).collect();
        count_theta = if nb {
            fit_negbin_weighted(x, y, Some(&cw), Some(count_theta))?.0
        } else {
            fit_poisson_weighted(x, y, Some(&cw), Some(count_theta))?.theta
        };
    }

    // polish on the full likelihood
    let bounds = if nb { alpha_bounds(dim) } else { Bounds::unbounded(dim) };
    let r = maximize(
        |t, d| full_objective(spec, y, t, d),
        join(&count_theta, &gamma),
        &bounds,
        &vec![true; dim],
        NewtonOptions::default(),
    )?;
    finish(spec, y, r.theta, r.converged, iterations + r.iterations, trace)
}

fn fit_normal(spec: &ModelSpec, y: &[f64]) -> Result<FittedModel> {
    let x = spec.mean_design();
    let yv = DVector::from_column_slice(y);
    let beta = x.clone().svd(true, true).solve(&yv, 1e-12).map_err(|e| Error::Numerical(e.to_string()))?;
    let rss = (&yv - x * &beta).norm_squared();
    let sigma = (rss / y.len() as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::Unidentifiable("response is fitted exactly; sigma is zero".into()));
    }
    let theta = beta.resize_vertically(x.ncols() + 1, sigma.ln());
    finish(spec, y, theta, true, 1, Vec::new())
}

/// Standard errors from the inverse observed information, skipping the
/// dispersion coordinate when it sits on a bound.
fn standard_errors(hess: &DMatrix<f64>, keep: &[usize]) -> Option<Vec<f64>> {
    let m = keep.len();
    let info = DMatrix::from_fn(m, m, |r, c| -hess[(keep[r], keep[c])]);
    let cov = info.cholesky()?.inverse();
    let se: Vec<f64> = (0..m).map(|i| cov[(i, i)].sqrt()).collect();
    se.iter().all(|s| s.is_finite() && *s > 0.0).then_some(se)
}

fn finish(
    spec: &ModelSpec,
    y: &[f64],
    theta: DVector<f64>,
    converged: bool,
    iterations: usize,
    em_trace: Vec<f64>,
) -> Result<FittedModel> {
    let family = spec.family();
    let eval = full_objective(spec, y, &theta, true);
    if !eval.value.is_finite() {
        return Err(Error::Numerical("log-likelihood is not finite at the estimate".into()));
    }
    let p = spec.mean_design().ncols();
    let q = spec.zero_design().map_or(0, |z| z.ncols());
    let dim = theta.len();
    let k_at_bound = matches!(family, Family::NegBinomial | Family::Zinb) && {
        let a = theta[dim - 1];
        a <= K_MIN.ln() || a >= K_MAX.ln()
    };
    let keep: Vec<usize> = (0..dim).filter(|&i| !(k_at_bound && i == dim - 1)).collect();
    let se = standard_errors(&eval.hess, &keep);
    let se_of = |i: usize| se.as_ref().map_or(f64::NAN, |s| s[keep.iter().position(|&j| j == i).unwrap()]);
    let dispersion = family.has_dispersion().then(|| theta[dim - 1].exp());
    let std_errors = StdErrors {
        beta: DVector::from_iterator(p, (0..p).map(se_of)),
        gamma: (q > 0).then(|| DVector::from_iterator(q, (p..p + q).map(se_of))),
        dispersion: (family.has_dispersion() && !k_at_bound).then(|| dispersion.unwrap() * se_of(dim - 1)),
    };
    let n_params = spec.n_params();
    Ok(FittedModel {
        family,
        beta: theta.rows(0, p).into_owned(),
        gamma: (q > 0).then(|| theta.rows(p, q).into_owned()),
        k: matches!(family, Family::NegBinomial | Family::Zinb).then(|| dispersion.unwrap()),
        sigma: (family == Family::Normal).then(|| dispersion.unwrap()),
        std_errors,
        loglik: eval.value,
        aic: -2.0 * eval.value + 2.0 * n_params as f64,
        n_params,
        converged: converged && se.is_some(),
        iterations,
        k_at_bound,
        em_trace,
    })
}
