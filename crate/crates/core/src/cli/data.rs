//! CSV ingestion and design construction.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::assembly::Dataset;
use crate::error::{Error, Result};

/// Which columns to read and how to turn them into a design.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DataSpec {
    pub y: String,
    /// Contemporaneous regressors, in order.
    pub x: Vec<String>,
    /// `(column, k)`: lags `1..=k` of the column.
    pub lags: Vec<(String, usize)>,
    pub intercept: bool,
    pub center_x: bool,
    pub scale_x: bool,
}

/// Per-column affine map applied to a regressor: `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnTransform {
    pub name: String,
    pub shift: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    /// Rows dropped because a selected cell was missing.
    pub dropped: usize,
    pub transforms: Vec<ColumnTransform>,
}

/// Parses `"x:1,y:2"`. A bare name means lag 1.
pub fn parse_lag_spec(spec: &str) -> Result<Vec<(String, usize)>> {
    let mut out = Vec::new();
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, k) = match item.rsplit_once(':') {
            Some((name, k)) => {
                let k: usize = k
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad lag order in '{item}'")))?;
                (name.trim(), k)
            }
            None => (item, 1),
        };
        if name.is_empty() || k == 0 {
            return Err(Error::InvalidInput(format!("bad lag term '{item}'")));
        }
        out.push((name.to_string(), k));
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("empty lag specification".into()));
    }
    Ok(out)
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null")
}

/// Reads the selected columns of a headed CSV as optional numbers.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<Option<f64>>>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::Data(format!("column '{name}' not found in {}", path.display())))
        })
        .collect::<Result<_>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (c, &i) in idx.iter().enumerate() {
            let cell = record.get(i).unwrap_or("");
            let v = if is_missing(cell) {
                None
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::Data(format!("row {}, column '{}': cannot parse '{cell}' as a number", r + 1, names[c]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!("row {}, column '{}': non-finite value", r + 1, names[c])));
                }
                Some(v)
            };
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Builds the design from a CSV file.
///
/// Columns are ordered as intercept, lagged terms (response lags first, then
/// the remaining lag terms in the order given), then contemporaneous `x`.
/// Rows with a missing selected cell are dropped after lagging.
pub fn load_csv(path: &Path, spec: &DataSpec) -> Result<LoadedData> {
    let mut lags: Vec<(String, usize)> = spec.lags.iter().filter(|(c, _)| *c == spec.y).cloned().collect();
    lags.extend(spec.lags.iter().filter(|(c, _)| *c != spec.y).cloned());

    let mut wanted: Vec<&str> = vec![spec.y.as_str()];
    for name in lags.iter().map(|(c, _)| c.as_str()).chain(spec.x.iter().map(String::as_str)) {
        if !wanted.contains(&name) {
            wanted.push(name);
        }
    }
    let cols = read_columns(path, &wanted)?;
    let col = |name: &str| &cols[wanted.iter().position(|w| *w == name).expect("requested column")];
    let rows = cols[0].len();
    let max_lag = lags.iter().map(|(_, k)| *k).max().unwrap_or(0);
    if rows <= max_lag {
        return Err(Error::Data(format!("{rows} data rows cannot support lag {max_lag}")));
    }

    let mut names = Vec::new();
    let mut series: Vec<Vec<Option<f64>>> = Vec::new();
    for (c, k) in &lags {
        for l in 1..=*k {
            names.push(format!("{c}_lag{l}"));
            series.push((max_lag..rows).map(|t| col(c)[t - l]).collect());
        }
    }
    for c in &spec.x {
        names.push(c.clone());
        series.push(col(c)[max_lag..].to_vec());
    }
    let response: Vec<Option<f64>> = col(&spec.y)[max_lag..].to_vec();

    let keep: Vec<usize> =
        (0..response.len()).filter(|&t| response[t].is_some() && series.iter().all(|s| s[t].is_some())).collect();
    let dropped = response.len() - keep.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing values");
    }
    if keep.is_empty() {
        return Err(Error::Data("no complete rows in the selected columns".into()));
    }

    let mut transforms = Vec::new();
    let mut regressors: Vec<Vec<f64>> = Vec::with_capacity(series.len());
    for (name, s) in names.iter().zip(&series) {
        let mut v: Vec<f64> = keep.iter().map(|&t| s[t].expect("complete row")).collect();
        if spec.center_x || spec.scale_x {
            let m = v.len() as f64;
            let mean = v.iter().sum::<f64>() / m;
            let shift = if spec.center_x { mean } else { 0.0 };
            let scale = if spec.scale_x {
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
                let sd = var.sqrt();
                if !(sd > 0.0) {
                    return Err(Error::Data(format!("column '{name}' is constant and cannot be scaled")));
                }
                sd
            } else {
                1.0
            };
            v.iter_mut().for_each(|x| *x = (*x - shift) / scale);
            transforms.push(ColumnTransform { name: name.clone(), shift, scale });
        }
        regressors.push(v);
    }
    if spec.intercept {
        names.insert(0, "(intercept)".into());
        regressors.insert(0, vec![1.0; keep.len()]);
    }
    let (n, p) = (keep.len(), regressors.len());
    if p == 0 {
        return Err(Error::InvalidInput("no regressors: pass --x, --lag, or keep the intercept".into()));
    }
    if n < p {
        return Err(Error::Data(format!("{n} complete rows for {p} regressors")));
    }
    let x = DMatrix::from_fn(n, p, |t, j| regressors[j][t]);
    let y = DVector::from_iterator(n, keep.iter().map(|&t| response[t].expect("complete row")));
    Ok(LoadedData { dataset: Dataset::with_names(x, y, names)?, dropped, transforms })
}

/// Whitespace- or comma-separated numbers.
pub fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Data(format!("{}: cannot parse '{s}'", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn lag_spec_parsing() {
        assert_eq!(parse_lag_spec("x:1, y:2").unwrap(), vec![("x".into(), 1), ("y".into(), 2)]);
        assert_eq!(parse_lag_spec("y").unwrap(), vec![("y".into(), 1)]);
        assert!(parse_lag_spec("x:0").is_err());
        assert!(parse_lag_spec("x:a").is_err());
        assert!(parse_lag_spec("").is_err());
    }

    #[test]
    fn shape_with_intercept() {
        let f = csv_file("y,x\n1,2\n3,4\n5,7\n");
        let spec = DataSpec { y: "y".into(), x: vec!["x".into()], intercept: true, ..Default::default() };
        let d = load_csv(f.path(), &spec).unwrap().dataset;
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.names(), ["(intercept)", "x"]);
    }

    #[test]
    fn granger_design() {
        let f = csv_file("y,x\n1,10\n2,20\n3,30\n4,40\n");
        let spec = DataSpec {
            y: "y".into(),
            lags: parse_lag_spec("x:1,y:1").unwrap(),
            intercept: true,
            ..Default::default()
        };
        let d = load_csv(f.path(), &spec).unwrap().dataset;
        assert_eq!(d.names(), ["(intercept)", "y_lag1", "x_lag1"]);
        assert_eq!(d.n(), 3);
        assert_eq!(d.y().as_slice(), &[2.0, 3.0, 4.0]);
        assert_eq!(d.x().column(1).as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(d.x().column(2).as_slice(), &[10.0, 20.0, 30.0]);
    }

    #[test]
    fn missing_rows_dropped_and_bad_cells_reported() {
        let f = csv_file("y,x\n1,2\nNA,4\n5,\n6,1\n7,0\n");
        let spec = DataSpec { y: "y".into(), x: vec!["x".into()], intercept: true, ..Default::default() };
        let loaded = load_csv(f.path(), &spec).unwrap();
        assert_eq!(loaded.dropped, 2);
        assert_eq!(loaded.dataset.n(), 3);

        let f = csv_file("y,x\n1,2\n3,abc\n");
        let err = load_csv(f.path(), &spec).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("'x'"), "{err}");
    }

    #[test]
    fn header_only_and_missing_column() {
        let spec = DataSpec { y: "y".into(), x: vec!["x".into()], intercept: true, ..Default::default() };
        assert!(matches!(load_csv(csv_file("y,x\n").path(), &spec), Err(Error::Data(_))));
        assert!(matches!(load_csv(csv_file("y,z\n1,2\n").path(), &spec), Err(Error::Data(_))));
    }

    #[test]
    fn centering_and_scaling() {
        let f = csv_file("y,x\n1,1\n2,2\n3,3\n4,6\n");
        let spec =
            DataSpec { y: "y".into(), x: vec!["x".into()], intercept: true, center_x: true, scale_x: true, ..Default::default() };
        let loaded = load_csv(f.path(), &spec).unwrap();
        let col = loaded.dataset.x().column(1).into_owned();
        assert!(col.sum().abs() < 1e-12);
        let var = col.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(loaded.transforms[0].shift, 3.0);
    }
}
