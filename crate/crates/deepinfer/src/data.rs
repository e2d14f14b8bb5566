//! Row-major matrices, observational datasets, and CSV ingestion.
//!
//! The estimation routines work on a [`CausalDataset`]: an n x d covariate
//! matrix, an outcome vector, and a binary treatment vector. Datasets can be
//! built in memory or loaded from headered CSV files with configurable
//! column roles. Loading is strict — a malformed field fails the whole load
//! with its 1-based line number rather than silently dropping rows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Deliberately minimal: the crate only ever needs row views and element
/// access, and a flat `Vec` keeps row reads contiguous and cache-friendly.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Wraps a flat row-major buffer. `data.len()` must equal `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix buffer has {} elements, expected {} ({} x {})",
                data.len(),
                rows * cols,
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {} has {} columns, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: n, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Borrowed view of row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Iterator over row slices.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Underlying flat buffer (row-major).
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Observational dataset: covariates, outcome, binary treatment.
#[derive(Debug, Clone)]
pub struct CausalDataset {
    x: Matrix,
    y: Vec<f64>,
    t: Vec<u8>,
}

impl CausalDataset {
    /// Validates lengths and that every treatment value is 0 or 1.
    pub fn new(x: Matrix, y: Vec<f64>, t: Vec<u8>) -> Result<Self> {
        let n = x.rows();
        if y.len() != n || t.len() != n {
            return Err(Error::Dimension(format!(
                "dataset rows disagree: {} covariate rows, {} outcomes, {} treatments",
                n,
                y.len(),
                t.len()
            )));
        }
        if let Some(i) = t.iter().position(|&v| v > 1) {
            return Err(Error::Data(format!(
                "treatment must be 0 or 1, found {} at row {}",
                t[i], i
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite outcome at row {}", i)));
        }
        Ok(Self { x, y, t })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn covariates(&self) -> &Matrix {
        &self.x
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.y
    }

    pub fn treatments(&self) -> &[u8] {
        &self.t
    }

    /// Number of observations with treatment value `t`.
    pub fn arm_count(&self, t: u8) -> usize {
        self.t.iter().filter(|&&v| v == t).count()
    }

    /// New dataset containing only rows where `keep` returns true.
    pub fn filter<F: Fn(usize) -> bool>(&self, keep: F) -> Result<CausalDataset> {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut t = Vec::new();
        for i in 0..self.n() {
            if keep(i) {
                rows.push(self.x.row(i).to_vec());
                y.push(self.y[i]);
                t.push(self.t[i]);
            }
        }
        CausalDataset::new(Matrix::from_rows(&rows)?, y, t)
    }

    /// Replaces the treatment vector, keeping covariates and outcomes.
    pub fn with_treatments(&self, t: Vec<u8>) -> Result<CausalDataset> {
        CausalDataset::new(self.x.clone(), self.y.clone(), t)
    }
}

/// Which columns of a CSV file play which role.
#[derive(Debug, Clone)]
pub struct ColumnRoles {
    /// Header name of the outcome column.
    pub outcome: String,
    /// Header name of the treatment column.
    pub treatment: String,
    /// Covariate columns: an explicit list, or every remaining column.
    pub covariates: CovariateSelection,
}

/// Covariate column selection.
#[derive(Debug, Clone)]
pub enum CovariateSelection {
    /// Use every column that is neither the outcome nor the treatment,
    /// in file order.
    AllOthers,
    /// Use exactly these columns, in the given order.
    Named(Vec<String>),
}

/// A loaded dataset together with the covariate column names, in order.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: CausalDataset,
    pub covariate_names: Vec<String>,
}

/// Loads a headered CSV file into a [`CausalDataset`].
///
/// The first line must be a header. Fields are comma-separated decimal
/// numbers; the treatment column must contain exactly `0` or `1`. Any
/// malformed field fails the load with its 1-based file line number.
pub fn load_csv<P: AsRef<Path>>(path: P, roles: &ColumnRoles) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Data(format!("{}: {}", path.as_ref().display(), e)))?;

    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(String::from).collect();

    let col_index = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!("column '{}' not found in header {:?}", name, headers))
        })
    };

    let y_col = col_index(&roles.outcome)?;
    let t_col = col_index(&roles.treatment)?;
    if y_col == t_col {
        return Err(Error::Data(format!(
            "outcome and treatment both map to column '{}'",
            roles.outcome
        )));
    }

    let (cov_cols, covariate_names): (Vec<usize>, Vec<String>) = match &roles.covariates {
        CovariateSelection::AllOthers => {
            let pairs: Vec<(usize, String)> = headers
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != y_col && *i != t_col)
                .map(|(i, h)| (i, h.clone()))
                .collect();
            (pairs.iter().map(|(i, _)| *i).collect(), pairs.into_iter().map(|(_, h)| h).collect())
        }
        CovariateSelection::Named(names) => {
            let mut cols = Vec::with_capacity(names.len());
            for name in names {
                let c = col_index(name)?;
                if c == y_col || c == t_col {
                    return Err(Error::Data(format!(
                        "covariate '{}' is also the outcome or treatment column",
                        name
                    )));
                }
                cols.push(c);
            }
            (cols, names.clone())
        }
    };
    if cov_cols.is_empty() {
        return Err(Error::Data("no covariate columns selected".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut t = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(e.to_string()))?;
        // csv positions are 1-based byte-record lines; +1 restores the
        // human file line (header occupies line 1).
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(Error::Data(format!(
                "line {}: expected {} fields, found {}",
                line,
                headers.len(),
                record.len()
            )));
        }
        let parse = |col: usize, what: &str| -> Result<f64> {
            let raw = &record[col];
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "line {}: {} column '{}' has non-numeric value '{}'",
                    line, what, headers[col], raw
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "line {}: {} column '{}' has non-finite value '{}'",
                    line, what, headers[col], raw
                )));
            }
            Ok(v)
        };

        let yv = parse(y_col, "outcome")?;
        let tv_raw = parse(t_col, "treatment")?;
        let tv = if tv_raw == 0.0 {
            0u8
        } else if tv_raw == 1.0 {
            1u8
        } else {
            return Err(Error::Data(format!(
                "line {}: non-binary treatment value '{}'",
                line, &record[t_col]
            )));
        };
        let mut xrow = Vec::with_capacity(cov_cols.len());
        for &c in &cov_cols {
            xrow.push(parse(c, "covariate")?);
        }
        rows.push(xrow);
        y.push(yv);
        t.push(tv);
    }
    if rows.is_empty() {
        return Err(Error::Data("file contains a header but no data rows".into()));
    }

    let dataset = CausalDataset::new(Matrix::from_rows(&rows)?, y, t)?;
    Ok(LoadedData { dataset, covariate_names })
}

/// Writes a dataset as headered CSV with 17 significant digits, so a
/// write → load round trip reproduces every value bit-exactly.
pub fn save_csv<P: AsRef<Path>>(
    path: P,
    data: &CausalDataset,
    covariate_names: &[String],
) -> Result<()> {
    if covariate_names.len() != data.covariate_dim() {
        return Err(Error::Dimension(format!(
            "{} covariate names for {} columns",
            covariate_names.len(),
            data.covariate_dim()
        )));
    }
    let mut out = String::new();
    out.push_str("y,t");
    for name in covariate_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..data.n() {
        let _ = write!(out, "{:.16e},{}", data.outcomes()[i], data.treatments()[i]);
        for v in data.covariates().row(i) {
            let _ = write!(out, ",{:.16e}", v);
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Default covariate names `x1..xd` used when saving generated data.
pub fn default_covariate_names(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("x{}", i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    fn roles_all() -> ColumnRoles {
        ColumnRoles {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: CovariateSelection::AllOthers,
        }
    }

    #[test]
    fn loads_simple_file() {
        let f = write_temp("y,t,x1,x2\n1.0,1,0.5,2.0\n3.0,0,1.5,4.0\n");
        let loaded = load_csv(f.path(), &roles_all()).unwrap();
        assert_eq!(loaded.dataset.n(), 2);
        assert_eq!(loaded.dataset.covariate_dim(), 2);
        assert_eq!(loaded.covariate_names, vec!["x1", "x2"]);
        assert_eq!(loaded.dataset.outcomes(), &[1.0, 3.0]);
        assert_eq!(loaded.dataset.treatments(), &[1, 0]);
        assert_eq!(loaded.dataset.covariates().row(1), &[1.5, 4.0]);
    }

    #[test]
    fn named_covariates_select_and_order() {
        let f = write_temp("a,y,t,b\n9.0,1.0,1,8.0\n7.0,2.0,0,6.0\n");
        let roles = ColumnRoles {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: CovariateSelection::Named(vec!["b".into(), "a".into()]),
        };
        let loaded = load_csv(f.path(), &roles).unwrap();
        assert_eq!(loaded.covariate_names, vec!["b", "a"]);
        assert_eq!(loaded.dataset.covariates().row(0), &[8.0, 9.0]);
    }

    #[test]
    fn non_binary_treatment_names_line() {
        let f = write_temp("y,t,x1\n1.0,1,0.5\n2.0,2,0.6\n");
        let err = load_csv(f.path(), &roles_all()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message was: {}", msg);
        assert!(msg.contains("non-binary treatment"), "message was: {}", msg);
    }

    #[test]
    fn non_numeric_covariate_names_line() {
        let f = write_temp("y,t,x1\n1.0,1,0.5\n2.0,0,abc\n");
        let err = load_csv(f.path(), &roles_all()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "message was: {}", msg);
        assert!(msg.contains("x1"), "message was: {}", msg);
    }

    #[test]
    fn missing_column_is_an_error() {
        let f = write_temp("y,w,x1\n1.0,1,0.5\n");
        let err = load_csv(
            f.path(),
            &ColumnRoles {
                outcome: "y".into(),
                treatment: "t".into(),
                covariates: CovariateSelection::AllOthers,
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("'t'"));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let x = Matrix::from_rows(&[
            vec![0.123456789012345678, 1.0 / 3.0],
            vec![std::f64::consts::PI, 2.0f64.sqrt()],
        ])
        .unwrap();
        let data = CausalDataset::new(x, vec![1.0 / 7.0, -2.5e-13], vec![1, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        save_csv(&path, &data, &default_covariate_names(2)).unwrap();
        let loaded = load_csv(&path, &roles_all()).unwrap();
        assert_eq!(loaded.dataset.covariates().as_slice(), data.covariates().as_slice());
        assert_eq!(loaded.dataset.outcomes(), data.outcomes());
        assert_eq!(loaded.dataset.treatments(), data.treatments());
    }

    #[test]
    fn dataset_rejects_bad_treatment_and_lengths() {
        let x = Matrix::zeros(2, 1);
        assert!(matches!(
            CausalDataset::new(x.clone(), vec![0.0, 1.0], vec![0, 2]),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            CausalDataset::new(x, vec![0.0], vec![0, 1]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn empty_data_rows_rejected() {
        let f = write_temp("y,t,x1\n");
        assert!(matches!(load_csv(f.path(), &roles_all()), Err(Error::Data(_))));
    }
}
