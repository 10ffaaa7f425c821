//! Per-observation predictive laws.
//!
//! Every law exposes the three quantities a randomized predictive p-value
//! needs: the probability mass `p(y)`, the CDF `F(y)` and its left limit
//! `F(y-)`. Count-law CDFs go through the incomplete gamma/beta functions
//! so each call is O(1) in `y`.
//!
//! Negative binomial convention: mean `mu`, variance `mu + mu^2 / k`, with
//! `k` the reciprocal of the dispersion. Poisson is the `k -> inf` limit.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::error::{domain, Error, Result};
use crate::special::{ln_beta_unchecked, ln_factorial, log_add_exp, reg_inc_beta, reg_upper_inc_gamma, std_normal_cdf};
use crate::stream::{self, open_unit};

/// A finite probability table over strictly increasing support points.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePmf {
    support: Vec<f64>,
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl FinitePmf {
    pub fn new(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != masses.len() {
            return Err(Error::InvalidParameter(format!(
                "finite pmf needs matching, nonempty support and masses ({} vs {})",
                support.len(),
                masses.len()
            )));
        }
        if support.iter().any(|s| !s.is_finite()) || support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("finite pmf support must be finite and strictly increasing".into()));
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::InvalidParameter("finite pmf masses must be nonnegative".into()));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("finite pmf masses sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|m| {
                acc += m;
                acc.min(1.0)
            })
            .collect();
        Ok(FinitePmf { support, masses, cumulative })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    fn pmf(&self, y: f64) -> f64 {
        match self.support.binary_search_by(|s| s.total_cmp(&y)) {
            Ok(i) => self.masses[i],
            Err(_) => 0.0,
        }
    }

    fn cdf(&self, y: f64) -> f64 {
        // number of support points <= y
        let count = self.support.partition_point(|&s| s <= y);
        if count == 0 {
            0.0
        } else if count == self.support.len() {
            1.0
        } else {
            self.cumulative[count - 1]
        }
    }

    fn cdf_left_limit(&self, y: f64) -> f64 {
        let count = self.support.partition_point(|&s| s < y);
        if count == 0 {
            0.0
        } else if count == self.support.len() {
            1.0
        } else {
            self.cumulative[count - 1]
        }
    }

    fn mean(&self) -> f64 {
        self.support.iter().zip(&self.masses).map(|(s, m)| s * m).sum()
    }

    fn variance(&self) -> f64 {
        let mean = self.mean();
        self.support.iter().zip(&self.masses).map(|(s, m)| m * (s - mean).powi(2)).sum()
    }
}

/// The family and parameters of a predictive law.
#[derive(Debug, Clone, PartialEq)]
pub enum DistributionKind {
    Poisson { lambda: f64 },
    NegBinomial { mu: f64, k: f64 },
    Zip { lambda: f64, p: f64 },
    Zinb { mu: f64, k: f64, p: f64 },
    Bernoulli { pi: f64 },
    Normal { mu: f64, sigma: f64 },
    Finite(Arc<FinitePmf>),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn zero_prob(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("zero-inflation probability must lie in [0, 1), got {p}")))
    }
}

fn count_value(y: f64) -> Result<f64> {
    if y.is_finite() && y >= 0.0 && y.fract() == 0.0 {
        Ok(y)
    } else {
        domain(format!("count laws need a nonnegative integer response, got {y}"))
    }
}

fn poisson_ln_pmf(y: f64, lambda: f64) -> f64 {
    if y == 0.0 {
        -lambda
    } else {
        y * lambda.ln() - lambda - ln_factorial(y)
    }
}

fn poisson_cdf(y: f64, lambda: f64) -> Result<f64> {
    reg_upper_inc_gamma(y + 1.0, lambda)
}

fn negbin_ln_pmf(y: f64, mu: f64, k: f64) -> f64 {
    let zero_term = -k * (mu / k).ln_1p();
    if y == 0.0 {
        zero_term
    } else {
        // ln Γ(y+k) - ln Γ(k) - ln y! = -ln B(y, k) - ln y
        -ln_beta_unchecked(y, k) - y.ln() + zero_term + y * (mu.ln() - (k + mu).ln())
    }
}

fn negbin_cdf(y: f64, mu: f64, k: f64) -> Result<f64> {
    reg_inc_beta(k / (k + mu), k, y + 1.0)
}

impl DistributionKind {
    pub fn poisson(lambda: f64) -> Result<Self> {
        let d = DistributionKind::Poisson { lambda };
        d.validate()?;
        Ok(d)
    }

    pub fn neg_binomial(mu: f64, k: f64) -> Result<Self> {
        let d = DistributionKind::NegBinomial { mu, k };
        d.validate()?;
        Ok(d)
    }

    pub fn zip(lambda: f64, p: f64) -> Result<Self> {
        let d = DistributionKind::Zip { lambda, p };
        d.validate()?;
        Ok(d)
    }

    pub fn zinb(mu: f64, k: f64, p: f64) -> Result<Self> {
        let d = DistributionKind::Zinb { mu, k, p };
        d.validate()?;
        Ok(d)
    }

    pub fn bernoulli(pi: f64) -> Result<Self> {
        let d = DistributionKind::Bernoulli { pi };
        d.validate()?;
        Ok(d)
    }

    pub fn normal(mu: f64, sigma: f64) -> Result<Self> {
        let d = DistributionKind::Normal { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn finite(support: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        Ok(DistributionKind::Finite(Arc::new(FinitePmf::new(support, masses)?)))
    }

    /// Check the parameter invariants of this kind.
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistributionKind::Poisson { lambda } => positive("lambda", lambda),
            DistributionKind::NegBinomial { mu, k } => {
                positive("mu", mu)?;
                positive("k", k)
            }
            DistributionKind::Zip { lambda, p } => {
                positive("lambda", lambda)?;
                zero_prob(p)
            }
            DistributionKind::Zinb { mu, k, p } => {
                positive("mu", mu)?;
                positive("k", k)?;
                zero_prob(p)
            }
            DistributionKind::Bernoulli { pi } => {
                if pi > 0.0 && pi < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("bernoulli pi must lie in (0, 1), got {pi}")))
                }
            }
            DistributionKind::Normal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::InvalidParameter(format!("normal mean must be finite, got {mu}")));
                }
                positive("sigma", sigma)
            }
            DistributionKind::Finite(_) => Ok(()),
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, DistributionKind::Normal { .. })
    }

    fn check_response(&self, y: f64) -> Result<f64> {
        self.validate()?;
        match self {
            DistributionKind::Normal { .. } | DistributionKind::Finite(_) => {
                if y.is_finite() {
                    Ok(y)
                } else {
                    domain(format!("response must be finite, got {y}"))
                }
            }
            _ => count_value(y),
        }
    }

    /// Probability mass at `y` (identically zero for the normal law).
    pub fn pmf(&self, y: f64) -> Result<f64> {
        let y = self.check_response(y)?;
        Ok(match self {
            DistributionKind::Normal { .. } => 0.0,
            DistributionKind::Finite(t) => t.pmf(y),
            DistributionKind::Bernoulli { pi } => match y as u64 {
                0 => 1.0 - pi,
                1 => *pi,
                _ => 0.0,
            },
            _ => self.ln_pmf_count(y).exp(),
        })
    }

    fn ln_pmf_count(&self, y: f64) -> f64 {
        match *self {
            DistributionKind::Poisson { lambda } => poisson_ln_pmf(y, lambda),
            DistributionKind::NegBinomial { mu, k } => negbin_ln_pmf(y, mu, k),
            DistributionKind::Zip { lambda, p } => zero_inflated_ln_pmf(y, p, poisson_ln_pmf(y, lambda)),
            DistributionKind::Zinb { mu, k, p } => zero_inflated_ln_pmf(y, p, negbin_ln_pmf(y, mu, k)),
            _ => unreachable!("not a count law"),
        }
    }

    /// Log-likelihood contribution of `y`: log mass for discrete laws,
    /// log density for the normal law.
    pub fn log_likelihood(&self, y: f64) -> Result<f64> {
        let y = self.check_response(y)?;
        Ok(match self {
            DistributionKind::Normal { mu, sigma } => {
                let z = (y - mu) / sigma;
                -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            }
            DistributionKind::Finite(t) => t.pmf(y).ln(),
            DistributionKind::Bernoulli { .. } => self.pmf(y)?.ln(),
            _ => self.ln_pmf_count(y),
        })
    }

    /// Cumulative distribution function F(y) = P(Y <= y).
    pub fn cdf(&self, y: f64) -> Result<f64> {
        let y = self.check_response(y)?;
        match *self {
            DistributionKind::Poisson { lambda } => poisson_cdf(y, lambda),
            DistributionKind::NegBinomial { mu, k } => negbin_cdf(y, mu, k),
            DistributionKind::Zip { lambda, p } => Ok(p + (1.0 - p) * poisson_cdf(y, lambda)?),
            DistributionKind::Zinb { mu, k, p } => Ok(p + (1.0 - p) * negbin_cdf(y, mu, k)?),
            DistributionKind::Bernoulli { pi } => Ok(if y >= 1.0 { 1.0 } else { 1.0 - pi }),
            DistributionKind::Normal { mu, sigma } => Ok(std_normal_cdf((y - mu) / sigma)),
            DistributionKind::Finite(ref t) => Ok(t.cdf(y)),
        }
    }

    /// Left limit F(y-) = P(Y < y).
    pub fn cdf_left_limit(&self, y: f64) -> Result<f64> {
        let y = self.check_response(y)?;
        match self {
            DistributionKind::Normal { .. } => self.cdf(y),
            DistributionKind::Finite(t) => Ok(t.cdf_left_limit(y)),
            _ if y == 0.0 => Ok(0.0),
            _ => self.cdf(y - 1.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistributionKind::Poisson { lambda } => *lambda,
            DistributionKind::NegBinomial { mu, .. } => *mu,
            DistributionKind::Zip { lambda, p } => (1.0 - p) * lambda,
            DistributionKind::Zinb { mu, p, .. } => (1.0 - p) * mu,
            DistributionKind::Bernoulli { pi } => *pi,
            DistributionKind::Normal { mu, .. } => *mu,
            DistributionKind::Finite(t) => t.mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            DistributionKind::Poisson { lambda } => lambda,
            DistributionKind::NegBinomial { mu, k } => mu + mu * mu / k,
            DistributionKind::Zip { lambda, p } => (1.0 - p) * lambda * (1.0 + p * lambda),
            // zero-inflated mixture: (1-p)(σ² + μ²) - (1-p)²μ² with σ² = μ + μ²/k
            DistributionKind::Zinb { mu, k, p } => (1.0 - p) * mu * (1.0 + mu / k + p * mu),
            DistributionKind::Bernoulli { pi } => pi * (1.0 - pi),
            DistributionKind::Normal { sigma, .. } => sigma * sigma,
            DistributionKind::Finite(ref t) => t.variance(),
        }
    }

    /// Log-likelihood of `y` under the saturated model used for deviance
    /// residuals. Poisson and NB use the same family with mean `y`; the
    /// zero-inflated families use Poisson(y) as the saturated model.
    pub(crate) fn saturated_log_likelihood(&self, y: f64) -> Result<f64> {
        let y = self.check_response(y)?;
        Ok(match *self {
            DistributionKind::Poisson { .. } | DistributionKind::Zip { .. } | DistributionKind::Zinb { .. } => {
                if y == 0.0 {
                    0.0
                } else {
                    poisson_ln_pmf(y, y)
                }
            }
            DistributionKind::NegBinomial { k, .. } => {
                if y == 0.0 {
                    0.0
                } else {
                    negbin_ln_pmf(y, y, k)
                }
            }
            DistributionKind::Normal { sigma, .. } => -sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln(),
            DistributionKind::Bernoulli { .. } | DistributionKind::Finite(_) => 0.0,
        })
    }

    /// Draw one response. Zero-inflated laws are sampled as a mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            DistributionKind::Poisson { lambda } => sample_poisson(lambda, rng),
            DistributionKind::NegBinomial { mu, k } => sample_negbin(mu, k, rng),
            DistributionKind::Zip { lambda, p } => {
                if open_unit(rng) < p {
                    0.0
                } else {
                    sample_poisson(lambda, rng)
                }
            }
            DistributionKind::Zinb { mu, k, p } => {
                if open_unit(rng) < p {
                    0.0
                } else {
                    sample_negbin(mu, k, rng)
                }
            }
            DistributionKind::Bernoulli { pi } => {
                if open_unit(rng) < pi {
                    1.0
                } else {
                    0.0
                }
            }
            DistributionKind::Normal { mu, sigma } => {
                Normal::new(mu, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?.sample(rng)
            }
            DistributionKind::Finite(ref t) => {
                let u: f64 = rng.random();
                let idx = t.cumulative.partition_point(|&c| c <= u).min(t.support.len() - 1);
                t.support[idx]
            }
        })
    }
}

fn zero_inflated_ln_pmf(y: f64, p: f64, count_ln_pmf: f64) -> f64 {
    if y == 0.0 {
        if p == 0.0 {
            count_ln_pmf
        } else {
            log_add_exp(p.ln(), (-p).ln_1p() + count_ln_pmf)
        }
    } else {
        (-p).ln_1p() + count_ln_pmf
    }
}

fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    match Poisson::new(lambda) {
        Ok(d) => d.sample(rng),
        Err(_) => lambda.round(),
    }
}

/// Gamma-Poisson mixture: λ ~ Gamma(shape k, scale μ/k), Y | λ ~ Poisson(λ).
fn sample_negbin<R: Rng + ?Sized>(mu: f64, k: f64, rng: &mut R) -> f64 {
    let lambda = Gamma::new(k, mu / k).map(|g| g.sample(rng)).unwrap_or(mu);
    sample_poisson(lambda, rng)
}

/// A predictive law attached to one observation of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveLaw {
    kind: DistributionKind,
    observation_index: usize,
}

impl PredictiveLaw {
    pub fn new(kind: DistributionKind, observation_index: usize) -> Result<Self> {
        kind.validate()?;
        Ok(PredictiveLaw { kind, observation_index })
    }

    pub fn kind(&self) -> &DistributionKind {
        &self.kind
    }

    pub fn observation_index(&self) -> usize {
        self.observation_index
    }

    pub fn pmf(&self, y: f64) -> Result<f64> {
        self.kind.pmf(y)
    }

    pub fn cdf(&self, y: f64) -> Result<f64> {
        self.kind.cdf(y)
    }

    pub fn cdf_left_limit(&self, y: f64) -> Result<f64> {
        self.kind.cdf_left_limit(y)
    }

    pub fn log_likelihood(&self, y: f64) -> Result<f64> {
        self.kind.log_likelihood(y)
    }

    pub fn mean(&self) -> f64 {
        self.kind.mean()
    }

    pub fn variance(&self) -> f64 {
        self.kind.variance()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.kind.sample(rng)
    }
}

/// Draw one response per law, observation `i` using its own substream of
/// `seed`, so the result does not depend on evaluation order.
pub fn sample_responses(laws: &[PredictiveLaw], seed: u64) -> Result<Vec<f64>> {
    laws.iter()
        .map(|law| {
            let mut rng = stream::stream(seed, &[stream::tag::RESPONSES, law.observation_index() as u64]);
            law.sample(&mut rng)
        })
        .collect()
}
