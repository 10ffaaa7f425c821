//! Simulation scenarios and the Monte-Carlo driver for type-I error and
//! power studies of residual-based goodness-of-fit tests.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::{DistributionKind, PredictiveLaw};
use crate::error::{Error, Result};
use crate::gof::{ks_uniform, shapiro_wilk};
use crate::regression::{fit, predictive_laws, Family, ModelSpec};
use crate::residuals::{self, ResidualKind};
use crate::stream::{derive_seed, stream, tag};

pub const DEFAULT_SIZES: [usize; 8] = [20, 50, 100, 200, 400, 600, 800, 1000];
pub const DEFAULT_REPS: usize = 500;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// A cell with a larger share of failed fits is flagged invalid.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

const P0: [f64; 3] = [0.25, 0.5, 0.25];
const P1: [f64; 3] = [0.1, 0.8, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Finite PMF on {0, 1, 2} without covariates; wrong model p1.
    FinitePmf,
    /// Poisson with log mean -1 + 2 sin(2x), x ~ U(0, 2 pi); wrong model
    /// is log-linear in x.
    SinePoisson,
    /// NB with log mean beta1 x^2, x ~ U(-1.5, 1.5), k = 2; wrong model is
    /// log-linear in x. Level: beta1.
    NbQuadratic,
    /// NB with log mean 1 + 2x, x ~ U(-1, 2); wrong model is Poisson.
    /// Level: k.
    NbVsPoissonDispersion,
    /// ZIP with log mean 1 + 2x, x ~ U(-1, 2); wrong model is Poisson.
    /// Level: zero-inflation probability p.
    ZipVsPoisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelForm {
    True,
    Wrong,
}

impl ModelForm {
    pub fn name(self) -> &'static str {
        match self {
            ModelForm::True => "true",
            ModelForm::Wrong => "wrong",
        }
    }
}

/// One simulated dataset. `x` is empty for scenarios without a covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::FinitePmf,
        Scenario::SinePoisson,
        Scenario::NbQuadratic,
        Scenario::NbVsPoissonDispersion,
        Scenario::ZipVsPoisson,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FinitePmf => "FinitePMF-NoCovariate",
            Scenario::SinePoisson => "SinePoisson",
            Scenario::NbQuadratic => "NBQuadratic",
            Scenario::NbVsPoissonDispersion => "NBvsPoissonDispersion",
            Scenario::ZipVsPoisson => "ZIPvsPoisson",
        }
    }

    fn id(self) -> u64 {
        Scenario::ALL.iter().position(|&s| s == self).unwrap() as u64
    }

    /// Documented effect levels. Scenarios without one use the single level 0.
    pub fn levels(self) -> &'static [f64] {
        match self {
            Scenario::FinitePmf | Scenario::SinePoisson => &[0.0],
            Scenario::NbQuadratic => &[0.5, 1.0, 2.0],
            Scenario::NbVsPoissonDispersion => &[1.0, 2.0, 10.0],
            Scenario::ZipVsPoisson => &[0.1, 0.3, 0.5],
        }
    }

    /// The level used in single-dataset illustrations.
    pub fn default_level(self) -> f64 {
        match self {
            Scenario::FinitePmf | Scenario::SinePoisson => 0.0,
            Scenario::NbQuadratic => 1.0,
            Scenario::NbVsPoissonDispersion => 2.0,
            Scenario::ZipVsPoisson => 0.3,
        }
    }

    pub fn covariate_range(self) -> Option<(f64, f64)> {
        match self {
            Scenario::FinitePmf => None,
            Scenario::SinePoisson => Some((0.0, 2.0 * PI)),
            Scenario::NbQuadratic => Some((-1.5, 1.5)),
            Scenario::NbVsPoissonDispersion | Scenario::ZipVsPoisson => Some((-1.0, 2.0)),
        }
    }

    fn check_level(self, level: f64) -> Result<()> {
        if self.levels().contains(&level) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("level {level} is not one of {:?} for {self}", self.levels())))
        }
    }

    /// True data-generating law at covariate value `x`.
    pub fn true_law(self, x: f64, level: f64) -> Result<DistributionKind> {
        self.check_level(level)?;
        match self {
            Scenario::FinitePmf => DistributionKind::finite(vec![0.0, 1.0, 2.0], P0.to_vec()),
            Scenario::SinePoisson => DistributionKind::poisson((-1.0 + 2.0 * (2.0 * x).sin()).exp()),
            Scenario::NbQuadratic => DistributionKind::neg_binomial((level * x * x).exp(), 2.0),
            Scenario::NbVsPoissonDispersion => DistributionKind::neg_binomial((1.0 + 2.0 * x).exp(), level),
            Scenario::ZipVsPoisson => DistributionKind::zip((1.0 + 2.0 * x).exp(), level),
        }
    }

    /// Family and designs of the model fitted under `form`.
    pub fn model_spec(self, form: ModelForm, x: &[f64]) -> Result<ModelSpec> {
        let n = x.len();
        let design = |f: &dyn Fn(f64) -> f64| DMatrix::from_fn(n, 2, |r, c| if c == 0 { 1.0 } else { f(x[r]) });
        let (family, mean) = match (self, form) {
            (Scenario::FinitePmf, _) => {
                return Err(Error::InvalidParameter("the finite-PMF scenario fits no regression".into()))
            }
            (Scenario::SinePoisson, ModelForm::True) => (Family::Poisson, design(&|v| (2.0 * v).sin())),
            (Scenario::NbQuadratic, ModelForm::True) => (Family::NegBinomial, design(&|v| v * v)),
            (Scenario::SinePoisson, ModelForm::Wrong) => (Family::Poisson, design(&|v| v)),
            (Scenario::NbQuadratic, ModelForm::Wrong) => (Family::NegBinomial, design(&|v| v)),
            (Scenario::NbVsPoissonDispersion, ModelForm::True) => (Family::NegBinomial, design(&|v| v)),
            (Scenario::ZipVsPoisson, ModelForm::True) => (Family::Zip, design(&|v| v)),
            (Scenario::NbVsPoissonDispersion | Scenario::ZipVsPoisson, ModelForm::Wrong) => {
                (Family::Poisson, design(&|v| v))
            }
        };
        ModelSpec::new(family, mean, None)
    }

    /// Predictive laws under `form`: fixed PMFs for the finite scenario,
    /// maximum-likelihood fits otherwise.
    pub fn predictive_laws(self, form: ModelForm, data: &Dataset) -> Result<Vec<PredictiveLaw>> {
        if self == Scenario::FinitePmf {
            let masses = if form == ModelForm::True { P0 } else { P1 };
            let kind = DistributionKind::finite(vec![0.0, 1.0, 2.0], masses.to_vec())?;
            return (0..data.y.len()).map(|i| PredictiveLaw::new(kind.clone(), i)).collect();
        }
        let spec = self.model_spec(form, &data.x)?;
        let model = fit(&spec, &data.y)?;
        if !model.converged {
            return Err(Error::Numerical(format!("{} fit did not converge", spec.family())));
        }
        predictive_laws(&model, &spec)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name().to_ascii_lowercase() == key || (key == "finitepmf" && *sc == Scenario::FinitePmf))
            .ok_or_else(|| Error::Input(format!("unknown scenario '{s}'")))
    }
}

/// Simulate a dataset of size `n`; covariates come from one substream of
/// `seed` and responses from another.
pub fn generate(scenario: Scenario, n: usize, level: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    scenario.check_level(level)?;
    let x: Vec<f64> = match scenario.covariate_range() {
        Some((lo, hi)) => {
            let mut rng = stream(seed, &[tag::COVARIATES]);
            (0..n).map(|_| rng.random_range(lo..hi)).collect()
        }
        None => Vec::new(),
    };
    let mut rng = stream(seed, &[tag::RESPONSES]);
    let y = (0..n)
        .map(|i| scenario.true_law(x.get(i).copied().unwrap_or(0.0), level)?.sample(&mut rng))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Dataset { x, y })
}

/// Seed of replicate `rep` of a cell.
pub fn replicate_seed(master_seed: u64, scenario: Scenario, n: usize, level: f64, rep: usize) -> u64 {
    derive_seed(master_seed, &[tag::SIMULATION, scenario.id(), n as u64, level.to_bits(), rep as u64])
}

/// Rejection outcome of one test on one residual set. P-value kinds are
/// tested with KS-uniform, the others with Shapiro-Wilk.
pub fn gof_p_value(kind: ResidualKind, values: &[f64]) -> Result<f64> {
    if kind.is_probability() {
        Ok(ks_uniform(values)?.p_value)
    } else {
        Ok(shapiro_wilk(values)?.p_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub scenario: &'static str,
    pub kind: &'static str,
    pub n: usize,
    pub level: f64,
    pub model_form: ModelForm,
    /// Fraction of successful replicates rejected; NaN if none succeeded.
    pub rejection_rate: f64,
    pub reps: usize,
    pub failures: usize,
    pub seed: u64,
    #[serde(skip)]
    pub invalid: bool,
}

/// Outcome of one replicate under one model form: per kind, Some(rejected),
/// or None if the fit or test failed.
fn replicate_outcome(
    scenario: Scenario,
    form: ModelForm,
    data: &Dataset,
    kinds: &[ResidualKind],
    seed: u64,
    alpha: f64,
) -> Vec<Option<bool>> {
    let Ok(laws) = scenario.predictive_laws(form, data) else {
        return vec![None; kinds.len()];
    };
    kinds
        .iter()
        .map(|&k| {
            let set = residuals::compute(k, &laws, &data.y, seed).ok()?;
            gof_p_value(k, &set.values).ok().map(|p| p < alpha)
        })
        .collect()
}

/// Type-I (true form) and power (wrong form) rows for every kind in `kinds`,
/// sharing datasets and fits across kinds. Rows are ordered by kind, then
/// true before wrong.
pub fn run_cell_multi(
    scenario: Scenario,
    n: usize,
    level: f64,
    kinds: &[ResidualKind],
    reps: usize,
    master_seed: u64,
    alpha: f64,
) -> Result<Vec<CellRow>> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if kinds.is_empty() {
        return Err(Error::InvalidParameter("no residual kinds requested".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    scenario.check_level(level)?;
    let forms = [ModelForm::True, ModelForm::Wrong];
    let outcomes: Vec<[Vec<Option<bool>>; 2]> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(master_seed, scenario, n, level, rep);
            match generate(scenario, n, level, seed) {
                Ok(data) => forms.map(|f| replicate_outcome(scenario, f, &data, kinds, seed, alpha)),
                Err(_) => forms.map(|_| vec![None; kinds.len()]),
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(kinds.len() * 2);
    for (ki, kind) in kinds.iter().enumerate() {
        for (fi, form) in forms.into_iter().enumerate() {
            let results: Vec<Option<bool>> = outcomes.iter().map(|o| o[fi][ki]).collect();
            let failures = results.iter().filter(|r| r.is_none()).count();
            let ok = reps - failures;
            let rejected = results.iter().filter(|r| **r == Some(true)).count();
            rows.push(CellRow {
                scenario: scenario.name(),
                kind: kind.name(),
                n,
                level,
                model_form: form,
                rejection_rate: if ok == 0 { f64::NAN } else { rejected as f64 / ok as f64 },
                reps,
                failures,
                seed: master_seed,
                invalid: failures as f64 > MAX_FAILURE_FRACTION * reps as f64,
            });
        }
    }
    Ok(rows)
}

/// Type-I error and power of the test based on `kind`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub type_i: CellRow,
    pub power: CellRow,
}

pub fn run_cell(
    scenario: Scenario,
    n: usize,
    level: f64,
    kind: ResidualKind,
    reps: usize,
    master_seed: u64,
) -> Result<CellResult> {
    let mut rows = run_cell_multi(scenario, n, level, &[kind], reps, master_seed, DEFAULT_ALPHA)?;
    let power = rows.pop().unwrap();
    let type_i = rows.pop().unwrap();
    Ok(CellResult { type_i, power })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PowerStudyResult {
    pub rows: Vec<CellRow>,
}

impl PowerStudyResult {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn find(&self, kind: ResidualKind, n: usize, level: f64, form: ModelForm) -> Option<&CellRow> {
        self.rows.iter().find(|r| r.kind == kind.name() && r.n == n && r.level == level && r.model_form == form)
    }
}

/// Full cross-product of sizes and levels, in request order (size-major).
pub fn run_grid(
    scenario: Scenario,
    sizes: &[usize],
    levels: &[f64],
    kinds: &[ResidualKind],
    reps: usize,
    master_seed: u64,
    alpha: f64,
) -> Result<PowerStudyResult> {
    if sizes.is_empty() || levels.is_empty() || kinds.is_empty() {
        return Err(Error::InvalidParameter("grids must be nonempty".into()));
    }
    for &l in levels {
        scenario.check_level(l)?;
    }
    let mut rows = Vec::new();
    for &n in sizes {
        for &level in levels {
            rows.extend(run_cell_multi(scenario, n, level, kinds, reps, master_seed, alpha)?);
        }
    }
    Ok(PowerStudyResult { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmfIllustration {
    pub rpp_true: Vec<f64>,
    pub rpp_wrong: Vec<f64>,
    /// Fractions of wrong-model RPPs in (0, 0.1), (0.1, 0.9) and (0.9, 1).
    pub wrong_bins: [f64; 3],
}

/// RPPs of one finite-PMF sample under the true PMF and the wrong PMF.
pub fn illustrative_wrong_pmf(n: usize, seed: u64) -> Result<PmfIllustration> {
    if n < 100 {
        return Err(Error::InvalidParameter(format!("illustration needs n >= 100, got {n}")));
    }
    let data = generate(Scenario::FinitePmf, n, 0.0, seed)?;
    let rpp_under = |form| -> Result<Vec<f64>> {
        let laws = Scenario::FinitePmf.predictive_laws(form, &data)?;
        Ok(residuals::rpp(&laws, &data.y, seed, 0)?.values)
    };
    let rpp_true = rpp_under(ModelForm::True)?;
    let rpp_wrong = rpp_under(ModelForm::Wrong)?;
    let frac = |lo: f64, hi: f64| rpp_wrong.iter().filter(|&&v| v > lo && v < hi).count() as f64 / n as f64;
    let wrong_bins = [frac(0.0, 0.1), frac(0.1, 0.9), frac(0.9, 1.0)];
    Ok(PmfIllustration { rpp_true, rpp_wrong, wrong_bins })
}
