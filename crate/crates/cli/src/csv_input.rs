//! Reading an analysis dataset from CSV.

use std::io::Read;

use nalgebra::{DMatrix, DVector};
use robust_iv::model::validate_dataset;
use robust_iv::{Error, IvDataset};

/// Which columns play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub outcome: String,
    pub exposure: String,
    pub instruments: Vec<String>,
    pub covariates: Vec<String>,
}

impl CsvSchema {
    fn columns(&self) -> Vec<&str> {
        let mut v = vec![self.outcome.as_str(), self.exposure.as_str()];
        v.extend(self.instruments.iter().map(String::as_str));
        v.extend(self.covariates.iter().map(String::as_str));
        v
    }
}

fn is_missing(s: &str) -> bool {
    matches!(
        s,
        "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "." | "null" | "NULL"
    )
}

/// Parses `reader` into a validated dataset. With `intercept`, a constant
/// column is added to the covariates. Row numbers in errors count data rows
/// from 1 (the header is line 1 of the file).
pub fn read_dataset<R: Read>(
    reader: R,
    schema: &CsvSchema,
    intercept: bool,
) -> Result<IvDataset, Error> {
    if schema.instruments.is_empty() {
        return Err(Error::Data(
            "at least one instrument column is required".into(),
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read CSV header: {e}")))?
        .clone();
    let wanted = schema.columns();
    let mut seen = std::collections::HashSet::new();
    for name in &wanted {
        if !seen.insert(*name) {
            return Err(Error::Data(format!(
                "column {name:?} is assigned more than one role"
            )));
        }
    }
    let missing: Vec<&str> = wanted
        .iter()
        .copied()
        .filter(|w| !headers.iter().any(|h| h == *w))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "columns not found in CSV header: {}",
            missing.join(", ")
        )));
    }
    let index: Vec<usize> = wanted
        .iter()
        .map(|w| headers.iter().position(|h| h == *w).unwrap())
        .collect();

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        for (c, &i) in index.iter().enumerate() {
            let raw = record.get(i).unwrap_or("");
            if is_missing(raw) {
                return Err(Error::Data(format!(
                    "missing value in column {:?} at row {row} (line {})",
                    wanted[c],
                    row + 1
                )));
            }
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    Error::Data(format!(
                        "non-numeric value {raw:?} in column {:?} at row {row} (line {})",
                        wanted[c],
                        row + 1
                    ))
                })?;
            cols[c].push(v);
        }
    }
    let n = cols[0].len();
    if n == 0 {
        return Err(Error::Data("the CSV has no data rows".into()));
    }
    let l = schema.instruments.len();
    let p = schema.covariates.len();
    let y = DVector::from_vec(cols[0].clone());
    let d = DVector::from_vec(cols[1].clone());
    let z = DMatrix::from_fn(n, l, |i, j| cols[2 + j][i]);
    let k = p + intercept as usize;
    let x = (k > 0).then(|| {
        DMatrix::from_fn(n, k, |i, j| {
            if intercept && j == 0 {
                1.0
            } else {
                cols[2 + l + j - intercept as usize][i]
            }
        })
    });
    let data = IvDataset::new(y, d, z, x)?.with_instrument_names(schema.instruments.clone())?;
    validate_dataset(data)
}
