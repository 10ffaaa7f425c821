//! Python bindings: model fitting, residuals, goodness-of-fit tests and the
//! simulation harness. Designs are passed as lists of covariate rows; an
//! intercept column is always added.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use residuum::residuals;
use residuum::simlab::{self, Scenario};
use residuum::{DistributionKind, Error, Family, FittedModel, ModelSpec, PredictiveLaw, ResidualKind};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn with_intercept(rows: Option<Vec<Vec<f64>>>, n: usize) -> PyResult<DMatrix<f64>> {
    let rows = rows.unwrap_or_else(|| vec![Vec::new(); n]);
    if rows.len() != n {
        return Err(PyValueError::new_err(format!("design has {} rows, response has {n}", rows.len())));
    }
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("design rows differ in length"));
    }
    Ok(DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { rows[r][c - 1] }))
}

/// A single predictive distribution.
#[pyclass(name = "Distribution", frozen, from_py_object)]
#[derive(Clone)]
struct PyDistribution(DistributionKind);

#[pymethods]
impl PyDistribution {
    #[staticmethod]
    fn poisson(lam: f64) -> PyResult<Self> {
        DistributionKind::poisson(lam).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn neg_binomial(mu: f64, k: f64) -> PyResult<Self> {
        DistributionKind::neg_binomial(mu, k).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn zip(lam: f64, p: f64) -> PyResult<Self> {
        DistributionKind::zip(lam, p).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn zinb(mu: f64, k: f64, p: f64) -> PyResult<Self> {
        DistributionKind::zinb(mu, k, p).map(Self).map_err(py_err)
    }

    #[staticmethod]
    fn normal(mu: f64, sigma: f64) -> PyResult<Self> {
        DistributionKind::normal(mu, sigma).map(Self).map_err(py_err)
    }

    fn pmf(&self, y: f64) -> PyResult<f64> {
        self.0.pmf(y).map_err(py_err)
    }

    fn cdf(&self, y: f64) -> PyResult<f64> {
        self.0.cdf(y).map_err(py_err)
    }

    fn mean(&self) -> f64 {
        self.0.mean()
    }

    fn variance(&self) -> f64 {
        self.0.variance()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// A fitted regression together with its data.
#[pyclass(name = "FittedModel", frozen)]
struct PyFittedModel {
    model: FittedModel,
    spec: ModelSpec,
    y: Vec<f64>,
}

impl PyFittedModel {
    fn laws(&self) -> PyResult<Vec<PredictiveLaw>> {
        residuum::predictive_laws(&self.model, &self.spec).map_err(py_err)
    }
}

#[pymethods]
impl PyFittedModel {
    #[getter]
    fn family(&self) -> &'static str {
        self.model.family.name()
    }

    #[getter]
    fn beta(&self) -> Vec<f64> {
        self.model.beta.iter().copied().collect()
    }

    #[getter]
    fn gamma(&self) -> Option<Vec<f64>> {
        self.model.gamma.as_ref().map(|g| g.iter().copied().collect())
    }

    #[getter]
    fn k(&self) -> Option<f64> {
        self.model.k
    }

    #[getter]
    fn beta_se(&self) -> Vec<f64> {
        self.model.std_errors.beta.iter().copied().collect()
    }

    #[getter]
    fn gamma_se(&self) -> Option<Vec<f64>> {
        self.model.std_errors.gamma.as_ref().map(|g| g.iter().copied().collect())
    }

    #[getter]
    fn k_se(&self) -> Option<f64> {
        self.model.std_errors.dispersion
    }

    #[getter]
    fn loglik(&self) -> f64 {
        self.model.loglik
    }

    #[getter]
    fn aic(&self) -> f64 {
        self.model.aic
    }

    #[getter]
    fn converged(&self) -> bool {
        self.model.converged
    }

    #[getter]
    fn k_at_bound(&self) -> bool {
        self.model.k_at_bound
    }

    /// Fitted means of the predictive laws.
    fn fitted_values(&self) -> PyResult<Vec<f64>> {
        Ok(self.laws()?.iter().map(PredictiveLaw::mean).collect())
    }

    /// One of pearson, deviance, rpp, mpp, nrpp, nmpp.
    #[pyo3(signature = (kind, seed = 1))]
    fn residuals(&self, kind: &str, seed: u64) -> PyResult<Vec<f64>> {
        let kind: ResidualKind = kind.parse().map_err(py_err)?;
        Ok(residuals::compute(kind, &self.laws()?, &self.y, seed).map_err(py_err)?.values)
    }

    /// Shapiro-Wilk p-values of independent NRPP randomizations.
    #[pyo3(signature = (replicates = 1000, seed = 1))]
    fn replicated_sw(&self, replicates: usize, seed: u64) -> PyResult<Vec<f64>> {
        Ok(residuum::replicated_sw(&self.laws()?, &self.y, replicates, seed, 0.05).map_err(py_err)?.p_values)
    }

    fn __repr__(&self) -> String {
        format!(
            "FittedModel(family={}, beta={:?}, loglik={:.4}, converged={})",
            self.model.family,
            self.beta(),
            self.model.loglik,
            self.model.converged
        )
    }
}

/// Fit `family` (poisson, negbin, zip, zinb, normal) to `y`.
#[pyfunction]
#[pyo3(signature = (family, y, x = None, z = None))]
fn fit(family: &str, y: Vec<f64>, x: Option<Vec<Vec<f64>>>, z: Option<Vec<Vec<f64>>>) -> PyResult<PyFittedModel> {
    let family: Family = family.parse().map_err(py_err)?;
    let mean = with_intercept(x, y.len())?;
    let zero = if family.is_zero_inflated() {
        Some(with_intercept(z, y.len())?)
    } else if z.is_some() {
        return Err(PyValueError::new_err(format!("zero-inflation design given for family {family}")));
    } else {
        None
    };
    let spec = ModelSpec::new(family, mean, zero).map_err(py_err)?;
    let model = residuum::fit(&spec, &y).map_err(py_err)?;
    Ok(PyFittedModel { model, spec, y })
}

/// Randomized predictive p-values of `y` under the given distributions.
#[pyfunction]
#[pyo3(signature = (laws, y, seed = 1, replicate = 0))]
fn rpp(laws: Vec<PyDistribution>, y: Vec<f64>, seed: u64, replicate: u64) -> PyResult<Vec<f64>> {
    let laws: Vec<PredictiveLaw> = laws
        .into_iter()
        .enumerate()
        .map(|(i, d)| PredictiveLaw::new(d.0, i))
        .collect::<Result<_, _>>()
        .map_err(py_err)?;
    Ok(residuals::rpp(&laws, &y, seed, replicate).map_err(py_err)?.values)
}

/// (W, p-value).
#[pyfunction]
fn shapiro_wilk(x: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = residuum::shapiro_wilk(&x).map_err(py_err)?;
    Ok((r.statistic, r.p_value))
}

/// (D, asymptotic p-value) against Uniform(0, 1).
#[pyfunction]
fn ks_uniform(u: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = residuum::ks_uniform(&u).map_err(py_err)?;
    Ok((r.statistic, r.p_value))
}

/// (type-I rate, power) of one simulation cell.
#[pyfunction]
#[pyo3(signature = (scenario, n, level, kind = "nrpp", reps = 500, seed = 1))]
fn run_cell(scenario: &str, n: usize, level: f64, kind: &str, reps: usize, seed: u64) -> PyResult<(f64, f64)> {
    let scenario: Scenario = scenario.parse().map_err(py_err)?;
    let kind: ResidualKind = kind.parse().map_err(py_err)?;
    let cell = simlab::run_cell(scenario, n, level, kind, reps, seed).map_err(py_err)?;
    Ok((cell.type_i.rejection_rate, cell.power.rejection_rate))
}

#[pymodule]
#[pyo3(name = "residuum")]
fn residuum_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyFittedModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(rpp, m)?)?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(ks_uniform, m)?)?;
    m.add_function(wrap_pyfunction!(run_cell, m)?)?;
    Ok(())
}
