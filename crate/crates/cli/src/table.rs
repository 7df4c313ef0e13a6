//! CSV input handling: a table is a header row of unique column names over
//! numeric rows, and a design is built from it by optionally peeling off a
//! 0/1 label column and prepending an intercept column of ones.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{CliError, Result};

/// Name given to the prepended column of ones.
pub const INTERCEPT_NAME: &str = "(intercept)";

#[derive(Debug)]
pub struct Table {
    pub names: Vec<String>,
    /// Rows by columns, in file order.
    pub data: DMatrix<f64>,
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| CliError::Csv { path: path.to_owned(), source })?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|source| CliError::Csv { path: path.to_owned(), source })?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() {
        return Err(CliError::Input(format!("{}: no columns", path.display())));
    }
    for (j, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(CliError::Input(format!("{}: column {} has an empty name", path.display(), j + 1)));
        }
        if names[..j].contains(name) {
            return Err(CliError::Input(format!("{}: duplicate column name {name:?}", path.display())));
        }
    }

    let m = names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CliError::Csv { path: path.to_owned(), source })?;
        if record.len() != m {
            return Err(CliError::Input(format!(
                "{}: row {} has {} fields, expected {m}",
                path.display(),
                i + 2,
                record.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: row {}, column {:?}: cannot parse {field:?} as a number",
                    path.display(),
                    i + 2,
                    names[j]
                ))
            })?;
            values.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Table { names, data: DMatrix::from_row_iterator(n, m, values) })
}

/// Design assembled from a table: feature columns in file order, preceded
/// by the intercept when requested, with the label column peeled off.
#[derive(Debug)]
pub struct DesignBuild {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub z: Option<DVector<f64>>,
}

pub fn build_design(table: &Table, label: Option<&str>, intercept: bool) -> Result<DesignBuild> {
    let n = table.data.nrows();
    let label_idx = match label {
        Some(name) => {
            let idx = table.names.iter().position(|c| c == name).ok_or_else(|| {
                CliError::Input(format!(
                    "label column {name:?} not found; the table has columns {}",
                    table.names.join(", ")
                ))
            })?;
            Some(idx)
        }
        None => None,
    };

    let z = match label_idx {
        Some(idx) => {
            let col = table.data.column(idx);
            for (i, &v) in col.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(CliError::Input(format!(
                        "label column {:?} must contain only 0 and 1; row {} holds {v}",
                        table.names[idx],
                        i + 2
                    )));
                }
            }
            Some(DVector::from_column_slice(col.as_slice()))
        }
        None => None,
    };

    let feature_idx: Vec<usize> =
        (0..table.names.len()).filter(|j| Some(*j) != label_idx).collect();
    let p = feature_idx.len() + usize::from(intercept);
    if p == 0 {
        return Err(CliError::Input("the design has no columns; add features or keep the intercept".into()));
    }

    let mut names = Vec::with_capacity(p);
    let mut x = DMatrix::zeros(n, p);
    let mut col = 0usize;
    if intercept {
        names.push(INTERCEPT_NAME.to_owned());
        x.column_mut(0).fill(1.0);
        col = 1;
    }
    for &j in &feature_idx {
        names.push(table.names[j].clone());
        x.set_column(col, &table.data.column(j));
        col += 1;
    }
    Ok(DesignBuild { names, x, z })
}

/// Reads a two-column `name,estimate` file as written by `fit`.
pub fn read_coefficients(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| CliError::Csv { path: path.to_owned(), source })?;
    let headers = reader
        .headers()
        .map_err(|source| CliError::Csv { path: path.to_owned(), source })?
        .clone();
    if headers.len() != 2 || &headers[0] != "name" || &headers[1] != "estimate" {
        return Err(CliError::Input(format!(
            "{}: expected header \"name,estimate\"",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CliError::Csv { path: path.to_owned(), source })?;
        if record.len() != 2 {
            return Err(CliError::Input(format!("{}: row {} is not name,estimate", path.display(), i + 2)));
        }
        let value: f64 = record[1].parse().map_err(|_| {
            CliError::Input(format!(
                "{}: row {}: cannot parse {:?} as a number",
                path.display(),
                i + 2,
                &record[1]
            ))
        })?;
        out.push((record[0].to_owned(), value));
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("{}: no coefficients", path.display())));
    }
    Ok(out)
}

/// Checks that a coefficient file lines up, name by name, with the design
/// columns it is meant to multiply.
pub fn align_coefficients(coeffs: &[(String, f64)], names: &[String]) -> Result<DVector<f64>> {
    if coeffs.len() != names.len() {
        return Err(CliError::Input(format!(
            "coefficient file has {} rows but the design has {} columns",
            coeffs.len(),
            names.len()
        )));
    }
    for ((have, _), want) in coeffs.iter().zip(names) {
        if have != want {
            return Err(CliError::Input(format!(
                "coefficient names do not match the design: found {have:?} where {want:?} was expected"
            )));
        }
    }
    Ok(DVector::from_iterator(coeffs.len(), coeffs.iter().map(|(_, v)| *v)))
}
