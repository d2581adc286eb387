//! Feature scaling fit on the training split only.
//!
//! Profiles are standardized per time step; conditions are min-max mapped to
//! [0, 1] using training extremes, with test-time values clipped to
//! [-0.5, 1.5] (out-of-range conditions are evaluated, not rejected).

use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::error::{Error, Result};

const STD_FLOOR: f64 = 1e-8;
const CLIP_LO: f64 = -0.5;
const CLIP_HI: f64 = 1.5;

/// Per-feature affine transforms for profiles and conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    /// Method tag recorded for manifests.
    pub method: String,
    /// Per-time-step training means (length T).
    pub profile_shift: Vec<f64>,
    /// Per-time-step training stds, floored at 1e-8 (length T).
    pub profile_scale: Vec<f64>,
    /// Per-condition training minima (length B).
    pub condition_min: Vec<f64>,
    /// Per-condition training ranges max-min (length B).
    pub condition_range: Vec<f64>,
}

impl Scaler {
    /// Fit on a training split: profile mean/std per step, condition
    /// min/max per column. A constant condition column is an error.
    pub fn fit(
        profiles: &Array2,
        conditions: &Array2,
        condition_labels: &[String],
    ) -> Result<Scaler> {
        if profiles.rows() == 0 {
            return Err(Error::Contract("cannot fit a scaler on an empty dataset".to_string()));
        }
        let profile_shift = profiles.col_means();
        let profile_scale: Vec<f64> =
            profiles.col_vars().iter().map(|v| v.sqrt().max(STD_FLOOR)).collect();

        let mut condition_min = Vec::with_capacity(conditions.cols());
        let mut condition_range = Vec::with_capacity(conditions.cols());
        for j in 0..conditions.cols() {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..conditions.rows() {
                lo = lo.min(conditions.get(i, j));
                hi = hi.max(conditions.get(i, j));
            }
            if hi - lo <= 0.0 {
                let label = condition_labels.get(j).map(String::as_str).unwrap_or("?");
                return Err(Error::Config(format!(
                    "condition column '{label}' is constant; cannot min-max scale"
                )));
            }
            condition_min.push(lo);
            condition_range.push(hi - lo);
        }
        Ok(Scaler {
            method: "per-step-standardize/minmax-conditions".to_string(),
            profile_shift,
            profile_scale,
            condition_min,
            condition_range,
        })
    }

    pub fn profile_len(&self) -> usize {
        self.profile_shift.len()
    }

    pub fn condition_len(&self) -> usize {
        self.condition_min.len()
    }

    /// Standardize profiles. Shape must match the fitted T.
    pub fn apply_profiles(&self, profiles: &Array2) -> Result<Array2> {
        if profiles.cols() != self.profile_len() {
            return Err(Error::dim(
                "apply_profiles",
                format!("expected {} columns, got {}", self.profile_len(), profiles.cols()),
            ));
        }
        let mut out = profiles.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for ((v, &m), &s) in row.iter_mut().zip(&self.profile_shift).zip(&self.profile_scale) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// Undo [`Scaler::apply_profiles`].
    pub fn invert_profiles(&self, scaled: &Array2) -> Result<Array2> {
        if scaled.cols() != self.profile_len() {
            return Err(Error::dim(
                "invert_profiles",
                format!("expected {} columns, got {}", self.profile_len(), scaled.cols()),
            ));
        }
        let mut out = scaled.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            for ((v, &m), &s) in row.iter_mut().zip(&self.profile_shift).zip(&self.profile_scale) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    /// Min-max map conditions to [0, 1] by training extremes; values beyond
    /// the clip band [-0.5, 1.5] are clipped. Returns the scaled conditions
    /// and the number of clipped entries.
    pub fn apply_conditions(&self, conditions: &Array2) -> Result<(Array2, usize)> {
        if conditions.cols() != self.condition_len() {
            return Err(Error::dim(
                "apply_conditions",
                format!("expected {} columns, got {}", self.condition_len(), conditions.cols()),
            ));
        }
        let mut out = conditions.clone();
        let mut clipped = 0usize;
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let v = (out.get(i, j) - self.condition_min[j]) / self.condition_range[j];
                let c = v.clamp(CLIP_LO, CLIP_HI);
                if c != v {
                    clipped += 1;
                }
                out.set(i, j, c);
            }
        }
        Ok((out, clipped))
    }

    /// Undo [`Scaler::apply_conditions`] (exact only for unclipped values).
    pub fn invert_conditions(&self, scaled: &Array2) -> Result<Array2> {
        if scaled.cols() != self.condition_len() {
            return Err(Error::dim(
                "invert_conditions",
                format!("expected {} columns, got {}", self.condition_len(), scaled.cols()),
            ));
        }
        let mut out = scaled.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let v = out.get(i, j) * self.condition_range[j] + self.condition_min[j];
                out.set(i, j, v);
            }
        }
        Ok(out)
    }
}
