//! Dataset ingestion, condition construction, scaling, splitting, forecast
//! windowing, and synthetic data for tests.
//!
//! The on-disk format is wide CSV: one row per profile-day with columns
//! `x_0..x_{T-1}`, optional condition columns `c_*`, and optional grouping
//! columns `household` and `date` (ISO dates) for per-household operations.

pub mod csv_io;
pub mod scaler;
pub mod synth;

use chrono::{Datelike, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::error::{Error, Result};

pub use csv_io::{load_csv, save_csv};
pub use scaler::Scaler;
pub use synth::{synth_generate, SynthSpec};

/// A batch of daily profiles with optional condition vectors and grouping
/// metadata. Profiles ingested from CSV are validated non-negative; scaled
/// or synthetic data may take any finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDataset {
    /// N×T active power per step.
    pub profiles: Array2,
    /// N×B conditions (B may be 0).
    pub conditions: Array2,
    /// Labels of the condition columns (each starts with `c_`).
    pub condition_labels: Vec<String>,
    /// Per-row household id, when the source carries one.
    pub households: Option<Vec<String>>,
    /// Per-row date, when the source carries one.
    pub dates: Option<Vec<NaiveDate>>,
    /// Minutes per time step.
    pub resolution_min: u32,
    /// Non-fatal notes accumulated by ingestion/derivation/scaling.
    pub warnings: Vec<String>,
}

/// Resolution inferred from the profile length for whole-day data.
pub fn resolution_for(t: usize) -> Option<u32> {
    match t {
        24 => Some(60),
        48 => Some(30),
        96 => Some(15),
        _ => None,
    }
}

impl ProfileDataset {
    pub fn new(profiles: Array2, conditions: Array2, condition_labels: Vec<String>) -> Result<Self> {
        if conditions.rows() != profiles.rows() {
            return Err(Error::dim(
                "dataset",
                format!("{} profiles vs {} condition rows", profiles.rows(), conditions.rows()),
            ));
        }
        if condition_labels.len() != conditions.cols() {
            return Err(Error::dim(
                "dataset",
                format!(
                    "{} condition labels for {} columns",
                    condition_labels.len(),
                    conditions.cols()
                ),
            ));
        }
        let t = profiles.cols();
        let mut warnings = Vec::new();
        let resolution_min = resolution_for(t).unwrap_or_else(|| {
            warnings.push(format!(
                "profile length {t} is not a 60/30/15-minute day; assuming 60-minute steps"
            ));
            60
        });
        Ok(ProfileDataset {
            profiles,
            conditions,
            condition_labels,
            households: None,
            dates: None,
            resolution_min,
            warnings,
        })
    }

    pub fn n(&self) -> usize {
        self.profiles.rows()
    }

    pub fn t(&self) -> usize {
        self.profiles.cols()
    }

    pub fn b(&self) -> usize {
        self.conditions.cols()
    }

    /// Subset of rows, preserving metadata.
    pub fn select(&self, indices: &[usize]) -> ProfileDataset {
        ProfileDataset {
            profiles: self.profiles.select_rows(indices),
            conditions: self.conditions.select_rows(indices),
            condition_labels: self.condition_labels.clone(),
            households: self
                .households
                .as_ref()
                .map(|h| indices.iter().map(|&i| h[i].clone()).collect()),
            dates: self.dates.as_ref().map(|d| indices.iter().map(|&i| d[i]).collect()),
            resolution_min: self.resolution_min,
            warnings: Vec::new(),
        }
    }

    /// Row sum × hours-per-step: the day's total consumption in kWh.
    pub fn daily_totals(&self) -> Vec<f64> {
        let hours = self.resolution_min as f64 / 60.0;
        (0..self.n()).map(|i| self.profiles.row(i).iter().sum::<f64>() * hours).collect()
    }
}

/// How to build the condition matrix of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConditionSpec {
    /// Total consumption of the day itself (kWh).
    DailyTotal,
    /// Total consumption of the household-year the day belongs to (kWh),
    /// broadcast to every row of that household-year. Requires household
    /// and date columns.
    AnnualTotal,
    /// Pass through existing `c_*` columns by label.
    Columns(Vec<String>),
}

/// Rebuild the condition matrix from `specs`, in order. Existing conditions
/// are only retained where `ConditionSpec::Columns` selects them.
pub fn derive_conditions(dataset: &ProfileDataset, specs: &[ConditionSpec]) -> Result<ProfileDataset> {
    let n = dataset.n();
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for spec in specs {
        match spec {
            ConditionSpec::DailyTotal => {
                columns.push(("c_daily_kwh".to_string(), dataset.daily_totals()));
            }
            ConditionSpec::AnnualTotal => {
                let households = dataset.households.as_ref().ok_or_else(|| {
                    Error::Config(
                        "annual-total conditions require a household grouping column".to_string(),
                    )
                })?;
                let dates = dataset.dates.as_ref().ok_or_else(|| {
                    Error::Config("annual-total conditions require a date column".to_string())
                })?;
                let daily = dataset.daily_totals();
                use std::collections::BTreeMap;
                let mut totals: BTreeMap<(&str, i32), f64> = BTreeMap::new();
                for i in 0..n {
                    *totals.entry((households[i].as_str(), dates[i].year())).or_insert(0.0) +=
                        daily[i];
                }
                let col = (0..n)
                    .map(|i| totals[&(households[i].as_str(), dates[i].year())])
                    .collect();
                columns.push(("c_annual_kwh".to_string(), col));
            }
            ConditionSpec::Columns(labels) => {
                for label in labels {
                    let j = dataset
                        .condition_labels
                        .iter()
                        .position(|l| l == label)
                        .ok_or_else(|| {
                            Error::Config(format!("condition column '{label}' not present"))
                        })?;
                    let col = (0..n).map(|i| dataset.conditions.get(i, j)).collect();
                    columns.push((label.clone(), col));
                }
            }
        }
    }
    let b = columns.len();
    let mut conditions = Array2::zeros(n, b);
    for (j, (_, col)) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            conditions.set(i, j, v);
        }
    }
    let mut out = dataset.clone();
    out.conditions = conditions;
    out.condition_labels = columns.into_iter().map(|(l, _)| l).collect();
    Ok(out)
}

/// Seeded permutation split into (train, test); `fraction` is the train
/// share. Both sides are kept non-empty.
pub fn split(dataset: &ProfileDataset, fraction: f64, seed: u64) -> Result<(ProfileDataset, ProfileDataset)> {
    let n = dataset.n();
    if n < 2 {
        return Err(Error::Contract(format!("cannot split a dataset of {n} rows")));
    }
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let train_n = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = indices.split_at(train_n);
    Ok((dataset.select(train_idx), dataset.select(test_idx)))
}

/// Pair consecutive days per household: each output row has the next day's
/// profile and the previous day's full profile as its condition (B = T).
/// Gaps in the date sequence are skipped and counted in `warnings`.
pub fn window_day_pairs(dataset: &ProfileDataset) -> Result<ProfileDataset> {
    let households = dataset
        .households
        .as_ref()
        .ok_or_else(|| Error::Config("day pairing requires a household column".to_string()))?;
    let dates = dataset
        .dates
        .as_ref()
        .ok_or_else(|| Error::Config("day pairing requires a date column".to_string()))?;
    use std::collections::BTreeMap;
    let mut by_household: BTreeMap<&str, Vec<(NaiveDate, usize)>> = BTreeMap::new();
    for i in 0..dataset.n() {
        by_household.entry(households[i].as_str()).or_default().push((dates[i], i));
    }
    let t = dataset.t();
    let mut prev_rows = Vec::new();
    let mut next_rows = Vec::new();
    let mut gaps = 0usize;
    for (household, days) in by_household.iter_mut() {
        days.sort();
        for w in days.windows(2) {
            let ((d0, i0), (d1, i1)) = (w[0], w[1]);
            if d1 == d0 {
                return Err(Error::Contract(format!(
                    "duplicate date {d0} for household '{household}'"
                )));
            }
            if d1 == d0 + chrono::Days::new(1) {
                prev_rows.push(i0);
                next_rows.push(i1);
            } else {
                gaps += 1;
            }
        }
    }
    if next_rows.is_empty() {
        return Err(Error::Contract("no consecutive day pairs found".to_string()));
    }
    let profiles = dataset.profiles.select_rows(&next_rows);
    let conditions = dataset.profiles.select_rows(&prev_rows);
    let condition_labels = (0..t).map(|i| format!("c_prev_{i}")).collect();
    let mut warnings = Vec::new();
    if gaps > 0 {
        warnings.push(format!("{gaps} non-consecutive day transitions skipped"));
    }
    Ok(ProfileDataset {
        profiles,
        conditions,
        condition_labels,
        households: Some(next_rows.iter().map(|&i| households[i].clone()).collect()),
        dates: Some(next_rows.iter().map(|&i| dates[i]).collect()),
        resolution_min: dataset.resolution_min,
        warnings,
    })
}

/// Fit a scaler on a training split (profiles per-step standardized,
/// conditions min-max).
pub fn fit_scaler(train: &ProfileDataset) -> Result<Scaler> {
    Scaler::fit(&train.profiles, &train.conditions, &train.condition_labels)
}

/// Apply a fitted scaler; clipped condition entries are counted in
/// `warnings`.
pub fn apply_scaler(dataset: &ProfileDataset, scaler: &Scaler) -> Result<ProfileDataset> {
    let mut out = dataset.clone();
    out.profiles = scaler.apply_profiles(&dataset.profiles)?;
    let (conds, clipped) = scaler.apply_conditions(&dataset.conditions)?;
    out.conditions = conds;
    if clipped > 0 {
        out.warnings.push(format!("{clipped} condition values clipped to [-0.5, 1.5]"));
    }
    Ok(out)
}

/// Undo a scaler (exact for unclipped values).
pub fn invert_scaler(dataset: &ProfileDataset, scaler: &Scaler) -> Result<ProfileDataset> {
    let mut out = dataset.clone();
    out.profiles = scaler.invert_profiles(&dataset.profiles)?;
    out.conditions = scaler.invert_conditions(&dataset.conditions)?;
    Ok(out)
}
