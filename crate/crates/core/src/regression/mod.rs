//! Maximum-likelihood fitting of Poisson, negative binomial, ZIP and ZINB
//! regressions (log link for the count mean, logit link for the
//! zero-inflation probability).
//!
//! A least-squares normal regression is also available; it exists so that
//! residual code can be checked against the continuous case.

mod fit;
pub(crate) mod newton;
pub(crate) mod objective;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::distributions::{DistributionKind, PredictiveLaw};
use crate::error::{Error, Result};
use crate::special::logistic;
use objective::{count_local, zero_inflated_local, Base};

pub use fit::fit;

/// Bounds applied to the NB reciprocal dispersion `k`.
pub const K_MIN: f64 = 1e-4;
pub const K_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Poisson,
    NegBinomial,
    Zip,
    Zinb,
    /// Identity-link normal regression.
    Normal,
}

impl Family {
    pub fn is_zero_inflated(self) -> bool {
        matches!(self, Family::Zip | Family::Zinb)
    }

    /// Whether the family carries a scalar dispersion parameter (k or sigma).
    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::NegBinomial | Family::Zinb | Family::Normal)
    }

    pub fn is_count(self) -> bool {
        !matches!(self, Family::Normal)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegBinomial => "negbin",
            Family::Zip => "zip",
            Family::Zinb => "zinb",
            Family::Normal => "normal",
        }
    }

    pub(crate) fn base(self) -> Base {
        match self {
            Family::Poisson | Family::Zip => Base::Poisson,
            Family::NegBinomial | Family::Zinb => Base::NegBinomial,
            Family::Normal => Base::Normal,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" => Ok(Family::Poisson),
            "negbin" | "nb" | "negative-binomial" => Ok(Family::NegBinomial),
            "zip" => Ok(Family::Zip),
            "zinb" => Ok(Family::Zinb),
            "normal" | "gaussian" => Ok(Family::Normal),
            other => Err(Error::Input(format!("unknown family '{other}'"))),
        }
    }
}

/// Response family plus design matrices. The first column of each design is
/// the intercept by convention; this is not enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    family: Family,
    mean_design: DMatrix<f64>,
    zero_design: Option<DMatrix<f64>>,
}

/// Numerical rank from the singular values, relative tolerance 1e-8.
fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-8 * max).count()
}

impl ModelSpec {
    /// Zero-inflated families without a zero design get an intercept-only one.
    pub fn new(family: Family, mean_design: DMatrix<f64>, zero_design: Option<DMatrix<f64>>) -> Result<Self> {
        let n = mean_design.nrows();
        let p = mean_design.ncols();
        if p == 0 {
            return Err(Error::InvalidParameter("mean design has no columns".into()));
        }
        if mean_design.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("mean design contains non-finite values".into()));
        }
        let zero_design = match (family.is_zero_inflated(), zero_design) {
            (true, Some(z)) => Some(z),
            (true, None) => Some(DMatrix::from_element(n, 1, 1.0)),
            (false, Some(_)) => {
                return Err(Error::InvalidParameter(format!("family {family} takes no zero-inflation design")))
            }
            (false, None) => None,
        };
        let q = zero_design.as_ref().map_or(0, |z| z.ncols());
        if let Some(z) = &zero_design {
            if z.nrows() != n {
                return Err(Error::LengthMismatch { expected: n, actual: z.nrows() });
            }
            if q == 0 {
                return Err(Error::InvalidParameter("zero design has no columns".into()));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("zero design contains non-finite values".into()));
            }
        }
        if n <= p + q {
            return Err(Error::InvalidParameter(format!("need more observations ({n}) than coefficients ({})", p + q)));
        }
        let rank = numerical_rank(&mean_design);
        if rank < p {
            return Err(Error::RankDeficient { rank, columns: p });
        }
        if let Some(z) = &zero_design {
            let rank = numerical_rank(z);
            if rank < q {
                return Err(Error::RankDeficient { rank, columns: q });
            }
        }
        Ok(ModelSpec { family, mean_design, zero_design })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mean_design(&self) -> &DMatrix<f64> {
        &self.mean_design
    }

    pub fn zero_design(&self) -> Option<&DMatrix<f64>> {
        self.zero_design.as_ref()
    }

    pub fn n_obs(&self) -> usize {
        self.mean_design.nrows()
    }

    /// Total number of free parameters (coefficients plus dispersion).
    pub fn n_params(&self) -> usize {
        self.mean_design.ncols()
            + self.zero_design.as_ref().map_or(0, |z| z.ncols())
            + usize::from(self.family.has_dispersion())
    }

    pub(crate) fn slots(&self) -> objective::Slots<'_> {
        objective::Slots {
            mean: Some(&self.mean_design),
            zero: self.zero_design.as_ref(),
            alpha: self.family.has_dispersion(),
        }
    }
}

/// Model parameters on their natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    /// `k` for NB/ZINB, `sigma` for the normal case.
    pub dispersion: Option<f64>,
}

impl ModelParams {
    pub(crate) fn to_theta(&self, spec: &ModelSpec) -> Result<DVector<f64>> {
        check_param_shapes(self, spec)?;
        let mut v: Vec<f64> = self.beta.iter().copied().collect();
        if let Some(g) = &self.gamma {
            v.extend(g.iter());
        }
        if let Some(d) = self.dispersion {
            v.push(d.ln());
        }
        Ok(DVector::from_vec(v))
    }
}

fn check_param_shapes(params: &ModelParams, spec: &ModelSpec) -> Result<()> {
    let p = spec.mean_design.ncols();
    if params.beta.len() != p {
        return Err(Error::LengthMismatch { expected: p, actual: params.beta.len() });
    }
    match (&spec.zero_design, &params.gamma) {
        (Some(z), Some(g)) if g.len() != z.ncols() => {
            return Err(Error::LengthMismatch { expected: z.ncols(), actual: g.len() })
        }
        (Some(_), None) => return Err(Error::InvalidParameter("zero-inflated model needs gamma".into())),
        (None, Some(_)) => {
            return Err(Error::InvalidParameter("gamma given for a model without zero inflation".into()))
        }
        _ => {}
    }
    match (spec.family.has_dispersion(), params.dispersion) {
        (true, Some(d)) if !(d > 0.0 && d.is_finite()) => {
            Err(Error::InvalidParameter(format!("dispersion must be positive, got {d}")))
        }
        (true, None) => Err(Error::InvalidParameter(format!("family {} needs a dispersion parameter", spec.family))),
        (false, Some(_)) => Err(Error::InvalidParameter(format!("family {} has no dispersion parameter", spec.family))),
        _ => Ok(()),
    }
}

pub(crate) fn check_response(spec: &ModelSpec, y: &[f64]) -> Result<()> {
    if y.len() != spec.n_obs() {
        return Err(Error::LengthMismatch { expected: spec.n_obs(), actual: y.len() });
    }
    if spec.family.is_count() {
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::Domain(format!("response {i} is {v}; count families need nonnegative integers")));
        }
    } else if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("response contains non-finite values".into()));
    }
    Ok(())
}

/// Per-observation local log-likelihood terms at `theta`.
pub(crate) fn locals(spec: &ModelSpec, y: &[f64], theta: &DVector<f64>, derivs: bool) -> Vec<objective::Local> {
    let p = spec.mean_design.ncols();
    let beta = theta.rows(0, p);
    let eta = &spec.mean_design * beta;
    let base = spec.family.base();
    let alpha = if spec.family.has_dispersion() { theta[theta.len() - 1] } else { 0.0 };
    match &spec.zero_design {
        Some(z) => {
            let gamma = theta.rows(p, z.ncols());
            let zeta = z * gamma;
            (0..y.len()).map(|i| zero_inflated_local(base, y[i], eta[i], zeta[i], alpha, derivs)).collect()
        }
        None => (0..y.len()).map(|i| count_local(base, y[i], eta[i], alpha, derivs)).collect(),
    }
}

pub(crate) fn full_objective(spec: &ModelSpec, y: &[f64], theta: &DVector<f64>, derivs: bool) -> objective::Eval {
    let ls = locals(spec, y, theta, derivs);
    if derivs {
        objective::assemble(&spec.slots(), &ls)
    } else {
        objective::Eval { value: ls.iter().map(|l| l.ll).sum(), grad: DVector::zeros(0), hess: DMatrix::zeros(0, 0) }
    }
}

/// Exact log-likelihood of `params` on `y`. Returns negative infinity when
/// some observation has zero probability.
pub fn loglik(spec: &ModelSpec, params: &ModelParams, y: &[f64]) -> Result<f64> {
    check_response(spec, y)?;
    let theta = params.to_theta(spec)?;
    let v = full_objective(spec, y, &theta, false).value;
    Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
}

/// Analytic score vector of the log-likelihood in the internal
/// parameterization `[beta, gamma, ln(dispersion)]`.
pub fn score(spec: &ModelSpec, params: &ModelParams, y: &[f64]) -> Result<DVector<f64>> {
    check_response(spec, y)?;
    let theta = params.to_theta(spec)?;
    Ok(full_objective(spec, y, &theta, true).grad)
}

/// Standard errors matching the layout of [`FittedModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct StdErrors {
    pub beta: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    /// Standard error of `k` (or `sigma`); `None` when the parameter sits
    /// on its bound.
    pub dispersion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub family: Family,
    pub beta: DVector<f64>,
    pub gamma: Option<DVector<f64>>,
    /// Reciprocal dispersion for NB/ZINB.
    pub k: Option<f64>,
    /// Residual standard deviation for the normal case.
    pub sigma: Option<f64>,
    pub std_errors: StdErrors,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `k` was stopped at `K_MIN` or `K_MAX`.
    pub k_at_bound: bool,
    /// Observed-data log-likelihood after each EM iteration (zero-inflated
    /// families only).
    pub em_trace: Vec<f64>,
}

impl FittedModel {
    pub fn params(&self) -> ModelParams {
        ModelParams { beta: self.beta.clone(), gamma: self.gamma.clone(), dispersion: self.k.or(self.sigma) }
    }

    /// Fitted count-component means exp(x_i beta) (x_i beta for normal).
    pub fn linear_means(&self, spec: &ModelSpec) -> Result<DVector<f64>> {
        self.check_spec(spec)?;
        let eta = spec.mean_design() * &self.beta;
        Ok(if self.family == Family::Normal { eta } else { eta.map(f64::exp) })
    }

    /// Fitted zero-inflation probabilities, if any.
    pub fn zero_probabilities(&self, spec: &ModelSpec) -> Result<Option<DVector<f64>>> {
        self.check_spec(spec)?;
        Ok(match (spec.zero_design(), &self.gamma) {
            (Some(z), Some(g)) => Some((z * g).map(logistic)),
            _ => None,
        })
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        if spec.family() != self.family {
            return Err(Error::InvalidParameter(format!(
                "model was fitted as {}, spec is {}",
                self.family,
                spec.family()
            )));
        }
        check_param_shapes(&self.params(), spec)
    }
}

/// The fitted per-observation predictive laws.
pub fn predictive_laws(model: &FittedModel, spec: &ModelSpec) -> Result<Vec<PredictiveLaw>> {
    if !model.converged {
        return Err(Error::Numerical("predictive laws need a converged fit".into()));
    }
    let means = model.linear_means(spec)?;
    let zero = model.zero_probabilities(spec)?;
    (0..spec.n_obs())
        .map(|i| {
            let m = means[i];
            let kind = match model.family {
                Family::Poisson => DistributionKind::poisson(m),
                Family::NegBinomial => DistributionKind::neg_binomial(m, model.k.unwrap_or(K_MAX)),
                Family::Zip => DistributionKind::zip(m, zero.as_ref().map_or(0.0, |z| z[i])),
                Family::Zinb => {
                    DistributionKind::zinb(m, model.k.unwrap_or(K_MAX), zero.as_ref().map_or(0.0, |z| z[i]))
                }
                Family::Normal => DistributionKind::normal(m, model.sigma.unwrap_or(f64::NAN)),
            }
            .map_err(|e| Error::Numerical(format!("observation {i}: {e}")))?;
            PredictiveLaw::new(kind, i)
        })
        .collect()
}
