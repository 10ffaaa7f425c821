//! Residuals and predictive p-values for fitted per-observation laws:
//! Pearson, deviance, randomized (RPP) and mid (MPP) predictive p-values,
//! and their normal-quantile transforms (NRPP, NMPP).

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::distributions::{DistributionKind, PredictiveLaw};
use crate::error::{Error, Result};
use crate::special::std_normal_quantile;
use crate::stream::{open_unit, stream, tag};

/// Range RPP/MPP values are clamped to before any quantile transform.
pub const P_MIN: f64 = 1e-300;
pub const P_MAX: f64 = 1.0 - 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualKind {
    Pearson,
    Deviance,
    Rpp,
    Mpp,
    Nrpp,
    Nmpp,
}

impl ResidualKind {
    pub const ALL: [ResidualKind; 6] = [
        ResidualKind::Pearson,
        ResidualKind::Deviance,
        ResidualKind::Rpp,
        ResidualKind::Mpp,
        ResidualKind::Nrpp,
        ResidualKind::Nmpp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResidualKind::Pearson => "pearson",
            ResidualKind::Deviance => "deviance",
            ResidualKind::Rpp => "rpp",
            ResidualKind::Mpp => "mpp",
            ResidualKind::Nrpp => "nrpp",
            ResidualKind::Nmpp => "nmpp",
        }
    }

    /// Whether the kind depends on a randomization seed.
    pub fn is_randomized(self) -> bool {
        matches!(self, ResidualKind::Rpp | ResidualKind::Nrpp)
    }

    /// Whether values are p-values on (0, 1) rather than on the real line.
    pub fn is_probability(self) -> bool {
        matches!(self, ResidualKind::Rpp | ResidualKind::Mpp)
    }
}

impl fmt::Display for ResidualKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ResidualKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResidualKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Input(format!("unknown residual kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSet {
    pub kind: ResidualKind,
    pub values: Vec<f64>,
    /// Randomization seed (RPP/NRPP only).
    pub seed: Option<u64>,
    pub replicate_id: Option<u64>,
}

impl ResidualSet {
    fn deterministic(kind: ResidualKind, values: Vec<f64>) -> Self {
        ResidualSet { kind, values, seed: None, replicate_id: None }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_aligned(laws: &[PredictiveLaw], y: &[f64]) -> Result<()> {
    if laws.len() != y.len() {
        return Err(Error::LengthMismatch { expected: laws.len(), actual: y.len() });
    }
    Ok(())
}

fn p_value(law: &PredictiveLaw, y: f64, u: f64) -> Result<f64> {
    let left = law.cdf_left_limit(y)?;
    let mass = if law.kind().is_continuous() { 0.0 } else { law.pmf(y)? };
    Ok((left + u * mass).clamp(P_MIN, P_MAX))
}

/// Predictive p-values F(y-) + u p(y) for caller-supplied `u` in [0, 1].
pub fn rpp_with_uniforms(laws: &[PredictiveLaw], y: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    check_aligned(laws, y)?;
    if u.len() != y.len() {
        return Err(Error::LengthMismatch { expected: y.len(), actual: u.len() });
    }
    if let Some(bad) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("uniform draw {bad} outside [0, 1]")));
    }
    laws.iter().zip(y).zip(u).map(|((law, &yi), &ui)| p_value(law, yi, ui)).collect()
}

/// Randomized predictive p-values using draws from `rng`.
pub fn rpp_with_rng<R: rand::Rng + ?Sized>(laws: &[PredictiveLaw], y: &[f64], rng: &mut R) -> Result<ResidualSet> {
    check_aligned(laws, y)?;
    let u: Vec<f64> = (0..y.len()).map(|_| open_unit(rng)).collect();
    Ok(ResidualSet::deterministic(ResidualKind::Rpp, rpp_with_uniforms(laws, y, &u)?))
}

/// Randomized predictive p-values; replicate `r` of `seed` always uses the
/// same substream.
pub fn rpp(laws: &[PredictiveLaw], y: &[f64], seed: u64, replicate: u64) -> Result<ResidualSet> {
    let mut rng = stream(seed, &[tag::RANDOMIZATION, replicate]);
    let mut set = rpp_with_rng(laws, y, &mut rng)?;
    set.seed = Some(seed);
    set.replicate_id = Some(replicate);
    Ok(set)
}

/// `count` independent RPP sets, computed in parallel.
pub fn rpp_replicates(laws: &[PredictiveLaw], y: &[f64], count: usize, seed: u64) -> Result<Vec<ResidualSet>> {
    (0..count as u64).into_par_iter().map(|r| rpp(laws, y, seed, r)).collect()
}

/// Mid p-values: the RPP with u fixed at 0.5.
pub fn mpp(laws: &[PredictiveLaw], y: &[f64]) -> Result<ResidualSet> {
    let u = vec![0.5; y.len()];
    Ok(ResidualSet::deterministic(ResidualKind::Mpp, rpp_with_uniforms(laws, y, &u)?))
}

/// Standard-normal quantiles of an RPP (to NRPP) or MPP (to NMPP) set.
pub fn normal_transform(pvals: &ResidualSet) -> Result<ResidualSet> {
    let kind = match pvals.kind {
        ResidualKind::Rpp => ResidualKind::Nrpp,
        ResidualKind::Mpp => ResidualKind::Nmpp,
        other => return Err(Error::InvalidParameter(format!("cannot normal-transform {other} residuals"))),
    };
    let values = pvals.values.iter().map(|&p| std_normal_quantile(p)).collect::<Result<Vec<_>>>()?;
    Ok(ResidualSet { kind, values, seed: pvals.seed, replicate_id: pvals.replicate_id })
}

/// (y - mean) / sd under each law.
pub fn pearson(laws: &[PredictiveLaw], y: &[f64]) -> Result<ResidualSet> {
    check_aligned(laws, y)?;
    let values = laws
        .iter()
        .zip(y)
        .map(|(law, &yi)| {
            let var = law.variance();
            if !(var > 0.0 && var.is_finite()) {
                return Err(Error::Domain(format!(
                    "observation {}: degenerate law with variance {var}",
                    law.observation_index()
                )));
            }
            Ok((yi - law.mean()) / var.sqrt())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualSet::deterministic(ResidualKind::Pearson, values))
}

/// y ln(y/m) with the 0 ln 0 = 0 convention.
fn xlogy_ratio(y: f64, m: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y * (y / m).ln()
    }
}

fn poisson_unit_deviance(y: f64, lambda: f64) -> f64 {
    xlogy_ratio(y, lambda) - (y - lambda)
}

fn negbin_unit_deviance(y: f64, mu: f64, k: f64) -> f64 {
    xlogy_ratio(y, mu) - (y + k) * ((y - mu) / (mu + k)).ln_1p()
}

/// Half the deviance contribution: ln f_sat(y) - ln f_fit(y).
fn half_deviance(kind: &DistributionKind, y: f64) -> Result<f64> {
    Ok(match *kind {
        DistributionKind::Poisson { lambda } => poisson_unit_deviance(y, lambda),
        DistributionKind::NegBinomial { mu, k } => negbin_unit_deviance(y, mu, k),
        DistributionKind::Zip { lambda, p } if y > 0.0 => poisson_unit_deviance(y, lambda) - (-p).ln_1p(),
        DistributionKind::Zinb { mu, k, p } if y > 0.0 => {
            // Poisson(y) saturated model versus NB(y, k), then NB(y, k) versus NB(mu, k)
            let sat = DistributionKind::Poisson { lambda: y };
            let nb_sat = DistributionKind::NegBinomial { mu: y, k };
            sat.log_likelihood(y)? - nb_sat.log_likelihood(y)? + negbin_unit_deviance(y, mu, k) - (-p).ln_1p()
        }
        DistributionKind::Normal { mu, sigma } => 0.5 * ((y - mu) / sigma).powi(2),
        _ => kind.saturated_log_likelihood(y)? - kind.log_likelihood(y)?,
    })
}

/// Signed square roots of the per-observation deviance contributions.
/// Zero-inflated laws use Poisson(y) as the saturated model.
pub fn deviance(laws: &[PredictiveLaw], y: &[f64]) -> Result<ResidualSet> {
    check_aligned(laws, y)?;
    let values = laws
        .iter()
        .zip(y)
        .map(|(law, &yi)| {
            let half = half_deviance(law.kind(), yi)?;
            if half < -0.5e-10 || half.is_nan() {
                return Err(Error::Numerical(format!(
                    "observation {}: negative deviance contribution {}",
                    law.observation_index(),
                    2.0 * half
                )));
            }
            let mag = (2.0 * half.max(0.0)).sqrt();
            Ok(if yi < law.mean() { -mag } else { mag })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualSet::deterministic(ResidualKind::Deviance, values))
}

/// Pearson X² and deviance D. No reference distribution is attached.
pub fn aggregate_stats(pearson_set: &ResidualSet, deviance_set: &ResidualSet) -> Result<(f64, f64)> {
    if pearson_set.kind != ResidualKind::Pearson || deviance_set.kind != ResidualKind::Deviance {
        return Err(Error::InvalidParameter("aggregate_stats expects Pearson and deviance sets".into()));
    }
    if pearson_set.len() != deviance_set.len() {
        return Err(Error::LengthMismatch { expected: pearson_set.len(), actual: deviance_set.len() });
    }
    let x2 = pearson_set.values.iter().map(|r| r * r).sum();
    let d = deviance_set.values.iter().map(|r| r * r).sum();
    Ok((x2, d))
}

/// Compute one residual kind. Randomized kinds use replicate 0 of `seed`.
pub fn compute(kind: ResidualKind, laws: &[PredictiveLaw], y: &[f64], seed: u64) -> Result<ResidualSet> {
    match kind {
        ResidualKind::Pearson => pearson(laws, y),
        ResidualKind::Deviance => deviance(laws, y),
        ResidualKind::Rpp => rpp(laws, y, seed, 0),
        ResidualKind::Mpp => mpp(laws, y),
        ResidualKind::Nrpp => normal_transform(&rpp(laws, y, seed, 0)?),
        ResidualKind::Nmpp => normal_transform(&mpp(laws, y)?),
    }
}
