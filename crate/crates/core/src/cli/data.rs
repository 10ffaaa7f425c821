//! CSV ingestion.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::regression::{Family, ModelSpec};

/// Columns used by a model, with rows containing missing values removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub response_name: String,
    pub response: Vec<f64>,
    /// Distinct covariate names in first-use order (mean list, then zero list).
    pub covariate_names: Vec<String>,
    /// `covariates[j][i]`: covariate `j` at row `i`.
    pub covariates: Vec<Vec<f64>>,
    /// 1-based source line of each retained row.
    pub lines: Vec<u64>,
    pub dropped_rows: usize,
}

/// Comma-separated covariate list; empty means intercept only.
pub fn parse_formula(s: &str) -> Result<Vec<String>> {
    let names: Vec<String> = s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect();
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Input(format!("covariate '{n}' listed twice")));
        }
    }
    Ok(names)
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

fn parse_number(field: &str, column: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Input(format!("line {line}: column '{column}' has non-numeric value '{field}'")))?;
    if !v.is_finite() {
        return Err(Error::Input(format!("line {line}: column '{column}' is not finite")));
    }
    Ok(v)
}

impl Dataset {
    /// Read `response` and the named covariates from a headed CSV file.
    pub fn load(path: &Path, response: &str, covariates: &[String]) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_reader(file, response, covariates)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, response: &str, covariates: &[String]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Input(format!("line 1: {e}")))?.clone();
        let index_of = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Input(format!("column '{name}' not found in header")))
        };
        let mut names: Vec<String> = Vec::new();
        for c in covariates {
            if c == response {
                return Err(Error::Input(format!("'{c}' is the response and cannot be a covariate")));
            }
            if !names.contains(c) {
                names.push(c.clone());
            }
        }
        let ri = index_of(response)?;
        let cis = names.iter().map(|n| index_of(n)).collect::<Result<Vec<_>>>()?;

        let mut out = Dataset {
            response_name: response.to_string(),
            response: Vec::new(),
            covariate_names: names.clone(),
            covariates: vec![Vec::new(); names.len()],
            lines: Vec::new(),
            dropped_rows: 0,
        };
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Input(format!("line {line}: malformed CSV record ({e})"))
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let fields: Vec<&str> = std::iter::once(ri).chain(cis.iter().copied()).map(|i| &record[i]).collect();
            if fields.iter().any(|f| is_missing(f)) {
                out.dropped_rows += 1;
                continue;
            }
            out.response.push(parse_number(fields[0], response, line)?);
            for (j, f) in fields[1..].iter().enumerate() {
                out.covariates[j].push(parse_number(f, &names[j], line)?);
            }
            out.lines.push(line);
        }
        if out.response.is_empty() {
            return Err(Error::Input("no complete rows in the input".into()));
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    /// Count families need nonnegative integer responses.
    pub fn check_counts(&self) -> Result<()> {
        for (v, line) in self.response.iter().zip(&self.lines) {
            if *v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Input(format!(
                    "line {line}: response '{}' must be a nonnegative integer, got {v}",
                    self.response_name
                )));
            }
        }
        Ok(())
    }

    fn column(&self, name: &str) -> &[f64] {
        let j = self.covariate_names.iter().position(|c| c == name).expect("covariate was loaded");
        &self.covariates[j]
    }

    /// Intercept plus the named columns.
    pub fn design(&self, names: &[String]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), names.len() + 1, |r, c| if c == 0 { 1.0 } else { self.column(&names[c - 1])[r] })
    }

    pub fn model_spec(&self, family: Family, mean: &[String], zero: &[String]) -> Result<ModelSpec> {
        if family.is_count() {
            self.check_counts()?;
        }
        let zero_design = family.is_zero_inflated().then(|| self.design(zero));
        if !family.is_zero_inflated() && !zero.is_empty() {
            return Err(Error::Input(format!("--zero-covariates given for family {family}")));
        }
        ModelSpec::new(family, self.design(mean), zero_design)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(s: &str) -> Vec<String> {
        parse_formula(s).unwrap()
    }

    #[test]
    fn loads_columns_and_drops_missing_rows() {
        let csv = "id,y,x,z\n1,3,0.5,a\n2,,0.1,b\n3,0,NA,c\n4,2,1.5,d\n";
        let d = Dataset::from_reader(csv.as_bytes(), "y", &names("x")).unwrap();
        assert_eq!(d.response, vec![3.0, 2.0]);
        assert_eq!(d.covariates, vec![vec![0.5, 1.5]]);
        assert_eq!(d.dropped_rows, 2);
        assert_eq!(d.lines, vec![2, 5]);
        let x = d.design(&names("x"));
        assert_eq!((x.nrows(), x.ncols()), (2, 2));
        assert_eq!(x[(1, 1)], 1.5);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "y,x\n1,2\n3,oops\n";
        let e = Dataset::from_reader(bad.as_bytes(), "y", &names("x")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let ragged = "y,x\n1,2\n3,4,5\n";
        let e = Dataset::from_reader(ragged.as_bytes(), "y", &names("x")).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let frac = "y,x\n1,2\n2.5,4\n";
        let d = Dataset::from_reader(frac.as_bytes(), "y", &names("x")).unwrap();
        assert!(d.check_counts().unwrap_err().to_string().contains("line 3"));
        assert!(Dataset::from_reader("y,x\n1,2\n".as_bytes(), "y", &names("w")).is_err());
        assert!(parse_formula("a, b ,a").is_err());
        assert_eq!(parse_formula(" ").unwrap(), Vec::<String>::new());
    }
}
