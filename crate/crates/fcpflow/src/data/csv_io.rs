//! Wide-format CSV ingestion and emission.
//!
//! Recognized header columns, in any order: optional `household`, optional
//! `date` (ISO `YYYY-MM-DD`), required `x_0..x_{T-1}` (a complete index
//! range), and any number of `c_*` condition columns. Anything else is
//! rejected. Power values must be finite and non-negative.

use std::path::Path;

use chrono::NaiveDate;

use crate::array::Array2;
use crate::data::ProfileDataset;
use crate::error::{Error, Result};

pub fn load_csv(path: &Path) -> Result<ProfileDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?
        .clone();

    let mut household_col = None;
    let mut date_col = None;
    let mut x_cols: Vec<(usize, usize)> = Vec::new(); // (time index, csv column)
    let mut c_cols: Vec<(String, usize)> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if name == "household" {
            household_col = Some(j);
        } else if name == "date" {
            date_col = Some(j);
        } else if let Some(idx) = name.strip_prefix("x_") {
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("unrecognized profile column '{name}'")))?;
            x_cols.push((idx, j));
        } else if name.starts_with("c_") {
            c_cols.push((name.to_string(), j));
        } else {
            return Err(Error::Parse(format!("unrecognized column '{name}'")));
        }
    }
    if x_cols.is_empty() {
        return Err(Error::Parse("no x_* profile columns found".to_string()));
    }
    x_cols.sort();
    let t = x_cols.last().unwrap().0 + 1;
    if x_cols.len() != t || x_cols.iter().enumerate().any(|(k, &(idx, _))| idx != k) {
        return Err(Error::Parse(format!(
            "profile columns must cover x_0..x_{} without gaps or repeats",
            t - 1
        )));
    }

    let parse_num = |field: &str, row: usize, name: &str| -> Result<f64> {
        let v: f64 = field
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("data row {row}: column '{name}': invalid number '{field}'")))?;
        if !v.is_finite() {
            return Err(Error::Parse(format!(
                "data row {row}: column '{name}': non-finite value '{field}'"
            )));
        }
        Ok(v)
    };

    let mut profiles: Vec<Vec<f64>> = Vec::new();
    let mut conditions: Vec<Vec<f64>> = Vec::new();
    let mut households: Vec<String> = Vec::new();
    let mut dates: Vec<NaiveDate> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse(format!("data row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "data row {row}: {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let mut prof = Vec::with_capacity(t);
        for &(idx, j) in &x_cols {
            let v = parse_num(&record[j], row, &format!("x_{idx}"))?;
            if v < 0.0 {
                return Err(Error::Parse(format!(
                    "data row {row}: column 'x_{idx}': negative power value {v}"
                )));
            }
            prof.push(v);
        }
        profiles.push(prof);
        let mut cond = Vec::with_capacity(c_cols.len());
        for (name, j) in &c_cols {
            cond.push(parse_num(&record[*j], row, name)?);
        }
        conditions.push(cond);
        if let Some(j) = household_col {
            households.push(record[j].to_string());
        }
        if let Some(j) = date_col {
            let d = NaiveDate::parse_from_str(record[j].trim(), "%Y-%m-%d").map_err(|_| {
                Error::Parse(format!("data row {row}: invalid date '{}'", &record[j]))
            })?;
            dates.push(d);
        }
    }
    if profiles.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    let n = profiles.len();
    let mut dataset = ProfileDataset::new(
        Array2::from_rows(&profiles)?,
        Array2::from_rows(&conditions).unwrap_or_else(|_| Array2::zeros(n, 0)),
        c_cols.into_iter().map(|(name, _)| name).collect(),
    )?;
    if household_col.is_some() {
        dataset.households = Some(households);
    }
    if date_col.is_some() {
        dataset.dates = Some(dates);
    }
    Ok(dataset)
}

/// Emit a dataset in the same schema [`load_csv`] reads. Floats are written
/// with Rust's shortest round-trip formatting, so outputs are byte-stable.
pub fn save_csv(dataset: &ProfileDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut header: Vec<String> = Vec::new();
    if dataset.households.is_some() {
        header.push("household".to_string());
    }
    if dataset.dates.is_some() {
        header.push("date".to_string());
    }
    header.extend((0..dataset.t()).map(|i| format!("x_{i}")));
    header.extend(dataset.condition_labels.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::Parse(format!("write {}: {e}", path.display())))?;
    for i in 0..dataset.n() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        if let Some(h) = &dataset.households {
            record.push(h[i].clone());
        }
        if let Some(d) = &dataset.dates {
            record.push(d[i].format("%Y-%m-%d").to_string());
        }
        record.extend(dataset.profiles.row(i).iter().map(|v| v.to_string()));
        record.extend(dataset.conditions.row(i).iter().map(|v| v.to_string()));
        writer
            .write_record(&record)
            .map_err(|e| Error::Parse(format!("write {}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Parse(format!("write {}: {e}", path.display())))?;
    Ok(())
}
