//! CSV ingestion of user panels.
//!
//! Inputs must be comma-separated UTF-8 with a header row; every data cell
//! must parse as a finite real (scientific notation accepted). Series
//! transformations (differencing, log-differencing) belong to the dataset's
//! own conventions and are not applied here; the tool expects
//! pre-transformed inputs. Missing values are rejected, not imputed.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::PanelData;

/// A parsed CSV file: numeric matrix plus column names and optional date
/// labels (kept as strings, never parsed).
#[derive(Clone, Debug)]
pub struct CsvPanel {
    pub column_names: Vec<String>,
    pub dates: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

impl CsvPanel {
    pub fn num_rows(&self) -> usize {
        self.data.nrows()
    }
}

/// Loading options shared by all CSV inputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    /// Treat the first column as date labels.
    pub date_column: bool,
    /// Z-score every column (mean 0, sample s.d. 1).
    pub standardize: bool,
}

/// Read one CSV file into a numeric matrix.
pub fn read_csv(path: &Path, date_column: bool) -> Result<CsvPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let skip = usize::from(date_column);
    if headers.len() <= skip {
        return Err(Error::InvalidArgument(format!(
            "{}: no numeric columns",
            path.display()
        )));
    }
    let column_names: Vec<String> = headers.iter().skip(skip).map(String::from).collect();
    let mut dates = date_column.then(Vec::new);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if let Some(d) = &mut dates {
            d.push(record.get(0).unwrap_or_default().to_string());
        }
        let mut row = Vec::with_capacity(column_names.len());
        for (j, cell) in record.iter().enumerate().skip(skip) {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row: i + 2, // 1-based, counting the header
                column: headers.get(j).unwrap_or_default().to_string(),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: i + 2,
                    column: headers.get(j).unwrap_or_default().to_string(),
                    message: "non-finite value".into(),
                });
            }
            row.push(value);
        }
        if row.len() != column_names.len() {
            return Err(Error::Parse {
                row: i + 2,
                column: String::new(),
                message: format!(
                    "expected {} numeric cells, found {}",
                    column_names.len(),
                    row.len()
                ),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let data = DMatrix::from_fn(rows.len(), column_names.len(), |i, j| rows[i][j]);
    Ok(CsvPanel {
        column_names,
        dates,
        data,
    })
}

/// Z-score every column in place; a zero-variance column is an error.
pub fn standardize(panel: &mut CsvPanel) -> Result<()> {
    let n = panel.data.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "standardization needs at least 2 rows".into(),
        ));
    }
    for j in 0..panel.data.ncols() {
        let mean = panel.data.column(j).sum() / n as f64;
        let ss: f64 = panel.data.column(j).iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if sd == 0.0 {
            return Err(Error::Data(format!(
                "column {:?} is constant; cannot standardize",
                panel.column_names[j]
            )));
        }
        for i in 0..n {
            panel.data[(i, j)] = (panel.data[(i, j)] - mean) / sd;
        }
    }
    Ok(())
}

/// Write a numeric matrix back to CSV with round-trip-exact formatting
/// (17 significant digits).
pub fn write_csv(path: &Path, column_names: &[String], data: &DMatrix<f64>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(column_names)?;
    for i in 0..data.nrows() {
        let row: Vec<String> = (0..data.ncols())
            .map(|j| format!("{:.16e}", data[(i, j)]))
            .collect();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Load outcome, regressor and optional extra-regressor files into a panel.
/// The outcome file must have exactly one numeric column.
pub fn load_panel(
    y_path: &Path,
    x_path: &Path,
    w_path: Option<&Path>,
    options: LoadOptions,
) -> Result<PanelData> {
    let mut y_panel = read_csv(y_path, options.date_column)?;
    let mut x_panel = read_csv(x_path, options.date_column)?;
    if y_panel.data.ncols() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{}: outcome file must have exactly one numeric column, found {}",
            y_path.display(),
            y_panel.data.ncols()
        )));
    }
    if y_panel.num_rows() != x_panel.num_rows() {
        return Err(Error::InvalidArgument(format!(
            "row-count mismatch: {} has {} rows, {} has {}",
            y_path.display(),
            y_panel.num_rows(),
            x_path.display(),
            x_panel.num_rows()
        )));
    }
    let mut w_panel = match w_path {
        Some(p) => {
            let w = read_csv(p, options.date_column)?;
            if w.num_rows() != x_panel.num_rows() {
                return Err(Error::InvalidArgument(format!(
                    "row-count mismatch: {} has {} rows, {} has {}",
                    p.display(),
                    w.num_rows(),
                    x_path.display(),
                    x_panel.num_rows()
                )));
            }
            Some(w)
        }
        None => None,
    };
    if options.standardize {
        standardize(&mut y_panel)?;
        standardize(&mut x_panel)?;
        if let Some(w) = &mut w_panel {
            standardize(w)?;
        }
    }
    let y = DVector::from_column_slice(y_panel.data.column(0).as_slice());
    PanelData::new(y, x_panel.data, w_panel.map(|w| w.data))
}

/// Pair `y_{t+1}` with `x_t` (and `w_t`), dropping the boundary row.
pub fn lag_align(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    w: Option<&DMatrix<f64>>,
) -> Result<PanelData> {
    let t = y.len();
    if t < 3 || x.nrows() != t {
        return Err(Error::InvalidArgument(format!(
            "lag alignment needs T >= 3 matching rows, got y: {t}, x: {}",
            x.nrows()
        )));
    }
    let y_next = DVector::from_fn(t - 1, |i, _| y[i + 1]);
    let x_lag = x.rows(0, t - 1).into_owned();
    let w_lag = w.map(|w| w.rows(0, t - 1).into_owned());
    PanelData::new(y_next, x_lag, w_lag)
}
