//! Diagnostic reports and their CSV bundle.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::gof::{ReplicatedSw, TestResult};
use crate::regression::FittedModel;
use crate::residuals::ResidualKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    /// "mean", "zero" or "dispersion".
    pub part: &'static str,
    pub term: String,
    pub estimate: f64,
    /// Empty when unavailable (e.g. k on its bound).
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofRow {
    pub kind: &'static str,
    pub method: &'static str,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl GofRow {
    pub fn new(kind: ResidualKind, r: &TestResult) -> Self {
        GofRow { kind: kind.name(), method: r.method, statistic: r.statistic, p_value: r.p_value, n: r.n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticReport {
    pub family: String,
    pub response: String,
    pub n_obs: usize,
    pub dropped_rows: usize,
    pub coefficients: Vec<Coefficient>,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub converged: bool,
    pub iterations: usize,
    pub k_at_bound: bool,
    pub seed: Option<u64>,
    /// Pearson X² and deviance D, when both residual kinds were computed.
    pub aggregate: Option<(f64, f64)>,
    pub gof: Vec<GofRow>,
    pub replicated: Option<ReplicatedSw>,
    pub artifacts: Vec<PathBuf>,
}

impl DiagnosticReport {
    pub fn from_fit(
        model: &FittedModel,
        response: &str,
        mean_terms: &[String],
        zero_terms: &[String],
        dropped_rows: usize,
        n_obs: usize,
    ) -> Self {
        let term_names = |terms: &[String]| -> Vec<String> {
            std::iter::once("(intercept)".to_string()).chain(terms.iter().cloned()).collect()
        };
        let mut coefficients = Vec::new();
        for (j, t) in term_names(mean_terms).into_iter().enumerate() {
            coefficients.push(Coefficient {
                part: "mean",
                term: t,
                estimate: model.beta[j],
                std_error: Some(model.std_errors.beta[j]),
            });
        }
        if let (Some(g), Some(se)) = (&model.gamma, &model.std_errors.gamma) {
            for (j, t) in term_names(zero_terms).into_iter().enumerate() {
                coefficients.push(Coefficient { part: "zero", term: t, estimate: g[j], std_error: Some(se[j]) });
            }
        }
        if let Some(k) = model.k {
            coefficients.push(Coefficient {
                part: "dispersion",
                term: "k".into(),
                estimate: k,
                std_error: model.std_errors.dispersion,
            });
        }
        if let Some(s) = model.sigma {
            coefficients.push(Coefficient {
                part: "dispersion",
                term: "sigma".into(),
                estimate: s,
                std_error: model.std_errors.dispersion,
            });
        }
        DiagnosticReport {
            family: model.family.name().to_string(),
            response: response.to_string(),
            n_obs,
            dropped_rows,
            coefficients,
            loglik: model.loglik,
            aic: model.aic,
            n_params: model.n_params,
            converged: model.converged,
            iterations: model.iterations,
            k_at_bound: model.k_at_bound,
            seed: None,
            aggregate: None,
            gof: Vec::new(),
            replicated: None,
            artifacts: Vec::new(),
        }
    }

    fn meta(&self) -> Vec<(&'static str, String)> {
        let mut m = vec![
            ("family", self.family.clone()),
            ("response", self.response.clone()),
            ("n_obs", self.n_obs.to_string()),
            ("dropped_rows", self.dropped_rows.to_string()),
            ("loglik", format!("{:.10}", self.loglik)),
            ("aic", format!("{:.10}", self.aic)),
            ("n_params", self.n_params.to_string()),
            ("converged", self.converged.to_string()),
            ("iterations", self.iterations.to_string()),
            ("k_at_bound", self.k_at_bound.to_string()),
        ];
        if let Some(s) = self.seed {
            m.push(("seed", s.to_string()));
        }
        if let Some((x2, d)) = self.aggregate {
            m.push(("pearson_x2", format!("{x2:.10}")));
            m.push(("deviance_d", format!("{d:.10}")));
        }
        if let Some(r) = &self.replicated {
            m.push(("replicated_sw_replicates", r.p_values.len().to_string()));
            m.push(("replicated_sw_threshold", r.threshold.to_string()));
            m.push(("replicated_sw_fraction_above", format!("{:.6}", r.fraction_above)));
        }
        m
    }

    /// Write `report.csv` (key-value), `coefficients.csv` and, when present,
    /// `gof.csv` and `replicated_sw.csv` into `dir`.
    pub fn write_bundle(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let path = dir.join("report.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["key", "value"])?;
        for (k, v) in self.meta() {
            w.write_record([k, v.as_str()])?;
        }
        w.flush()?;
        self.artifacts.push(path);

        let path = dir.join("coefficients.csv");
        let mut w = csv::Writer::from_path(&path)?;
        for c in &self.coefficients {
            w.serialize(c)?;
        }
        w.flush()?;
        self.artifacts.push(path);

        if !self.gof.is_empty() {
            let path = dir.join("gof.csv");
            let mut w = csv::Writer::from_path(&path)?;
            for g in &self.gof {
                w.serialize(g)?;
            }
            w.flush()?;
            self.artifacts.push(path);
        }
        if let Some(r) = &self.replicated {
            let path = dir.join("replicated_sw.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["replicate", "p_value"])?;
            for (i, p) in r.p_values.iter().enumerate() {
                w.write_record([i.to_string(), p.to_string()])?;
            }
            w.flush()?;
            self.artifacts.push(path);
        }
        let path = dir.join("summary.txt");
        fs::write(&path, self.to_string())?;
        self.artifacts.push(path);
        Ok(())
    }
}

impl fmt::Display for DiagnosticReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} regression of '{}' on {} observations", self.family, self.response, self.n_obs)?;
        if self.dropped_rows > 0 {
            writeln!(f, "  ({} rows with missing values dropped)", self.dropped_rows)?;
        }
        writeln!(f, "{:<11} {:<20} {:>14} {:>12}", "part", "term", "estimate", "std.error")?;
        for c in &self.coefficients {
            let se = c.std_error.map_or("-".to_string(), |s| format!("{s:.6}"));
            writeln!(f, "{:<11} {:<20} {:>14.6} {:>12}", c.part, c.term, c.estimate, se)?;
        }
        writeln!(f, "log-likelihood {:.4}, AIC {:.4} ({} parameters)", self.loglik, self.aic, self.n_params)?;
        let status = if self.converged { "converged" } else { "DID NOT CONVERGE" };
        writeln!(f, "{status} after {} iterations", self.iterations)?;
        if self.k_at_bound {
            writeln!(f, "note: k reached its bound; its standard error is not reported")?;
        }
        if let Some((x2, d)) = self.aggregate {
            writeln!(f, "Pearson X2 {x2:.4}, deviance D {d:.4} (no reference distribution)")?;
        }
        for g in &self.gof {
            writeln!(f, "{:<9} {:<13} statistic {:.6}  p-value {:.6}", g.kind, g.method, g.statistic, g.p_value)?;
        }
        if let Some(r) = &self.replicated {
            writeln!(
                f,
                "replicated SW on NRPP: {:.1}% of {} p-values above {}",
                100.0 * r.fraction_above,
                r.p_values.len(),
                r.threshold
            )?;
        }
        Ok(())
    }
}
