//! Evaluation metrics for generated profiles and probabilistic forecasts.
//!
//! Generation metrics compare a real and a generated sample set: energy
//! distance and Gaussian-kernel MMD act on full T-dimensional profiles
//! (V-statistics, self-pairs included, so identical sets score exactly 0);
//! the KS and 1-Wasserstein distances act on the pooled flattened values;
//! the autocorrelation score compares lag profiles. Forecast metrics score
//! an ensemble of sampled next-day profiles against the realized day:
//! pinball loss over a quantile grid, ensemble CRPS in energy form, and the
//! MSE of the ensemble mean. All metrics are non-negative and the
//! two-sample ones are symmetric.

use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::error::{Error, Result};

/// A labeled set of profiles entering a two-sample comparison.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub profiles: Array2,
    pub label: String,
}

impl SampleSet {
    pub fn new(profiles: Array2, label: impl Into<String>) -> Result<Self> {
        if !profiles.all_finite() {
            return Err(Error::NonFinite { context: "sample set".to_string() });
        }
        Ok(SampleSet { profiles, label: label.into() })
    }

    pub fn n(&self) -> usize {
        self.profiles.rows()
    }

    pub fn t(&self) -> usize {
        self.profiles.cols()
    }
}

/// Named metric values plus the metadata needed to reproduce them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub ed: Option<f64>,
    pub ks: Option<f64>,
    pub wd: Option<f64>,
    pub mmd: Option<f64>,
    pub mse_a: Option<f64>,
    pub pl: Option<f64>,
    pub crps: Option<f64>,
    pub mse: Option<f64>,
    pub n_real: Option<usize>,
    pub n_gen: Option<usize>,
    /// Gaussian-kernel bandwidth actually used by the MMD.
    pub bandwidth: Option<f64>,
    /// Zero-variance profiles skipped by the autocorrelation metric.
    pub skipped_zero_variance: Option<usize>,
}

impl MetricReport {
    /// All five generation metrics between a real and generated set.
    pub fn generation(real: &SampleSet, generated: &SampleSet) -> Result<Self> {
        if real.t() != generated.t() {
            return Err(Error::dim(
                "metrics",
                format!("profile lengths differ: {} vs {}", real.t(), generated.t()),
            ));
        }
        let (mmd, bandwidth) = mmd_gaussian(real, generated, None)?;
        let (mse_a, skipped) = mse_autocorrelation(real, generated)?;
        Ok(MetricReport {
            ed: Some(energy_distance(real, generated)?),
            ks: Some(ks_distance(real, generated)?),
            wd: Some(wasserstein_1d(real, generated)?),
            mmd: Some(mmd),
            mse_a: Some(mse_a),
            n_real: Some(real.n()),
            n_gen: Some(generated.n()),
            bandwidth: Some(bandwidth),
            skipped_zero_variance: Some(skipped),
            ..MetricReport::default()
        })
    }

    /// Forecast metrics averaged over test pairs: for each pair `i`,
    /// `truths` row `i` is the realized day and `ensembles[i]` the S×T
    /// sampled forecasts.
    pub fn forecast(truths: &Array2, ensembles: &[Array2], taus: &[f64]) -> Result<Self> {
        if truths.rows() != ensembles.len() {
            return Err(Error::dim(
                "metrics",
                format!("{} truth rows vs {} ensembles", truths.rows(), ensembles.len()),
            ));
        }
        if truths.rows() == 0 {
            return Err(Error::Contract("forecast metrics need at least one pair".to_string()));
        }
        let mut pl_sum = 0.0;
        let mut crps_sum = 0.0;
        let mut mse_sum = 0.0;
        for (i, ensemble) in ensembles.iter().enumerate() {
            let y = truths.row(i);
            let forecasts = quantile_forecasts(ensemble, taus)?;
            pl_sum += pinball(y, &forecasts, taus)?;
            crps_sum += crps_ensemble(y, ensemble)?;
            mse_sum += mse_mean_prediction(y, ensemble)?;
        }
        let n = truths.rows() as f64;
        Ok(MetricReport {
            pl: Some(pl_sum / n),
            crps: Some(crps_sum / n),
            mse: Some(mse_sum / n),
            n_real: Some(truths.rows()),
            n_gen: Some(ensembles.first().map_or(0, Array2::rows)),
            ..MetricReport::default()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("metric report serialization: {e}")))
    }

    /// Two-line CSV (header + values); absent metrics are empty fields.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let fmt_n = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "ed,ks,wd,mmd,mse_a,pl,crps,mse,n_real,n_gen,bandwidth,skipped_zero_variance\n{},{},{},{},{},{},{},{},{},{},{},{}\n",
            fmt(self.ed),
            fmt(self.ks),
            fmt(self.wd),
            fmt(self.mmd),
            fmt(self.mse_a),
            fmt(self.pl),
            fmt(self.crps),
            fmt(self.mse),
            fmt_n(self.n_real),
            fmt_n(self.n_gen),
            fmt(self.bandwidth),
            fmt_n(self.skipped_zero_variance),
        )
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn require_two(op: &'static str, x: &SampleSet, y: &SampleSet) -> Result<()> {
    if x.n() < 2 || y.n() < 2 {
        return Err(Error::Contract(format!(
            "{op} needs at least 2 samples per set, got {} and {}",
            x.n(),
            y.n()
        )));
    }
    Ok(())
}

/// Energy distance `2·E‖x−y‖ − E‖x−x'‖ − E‖y−y'‖` over full profiles,
/// V-statistic estimator (self-pairs included).
pub fn energy_distance(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    require_two("energy distance", x, y)?;
    let mean_cross = {
        let mut s = 0.0;
        for i in 0..x.n() {
            for j in 0..y.n() {
                s += euclidean(x.profiles.row(i), y.profiles.row(j));
            }
        }
        s / (x.n() * y.n()) as f64
    };
    let mean_within = |s: &SampleSet| {
        let mut acc = 0.0;
        for i in 0..s.n() {
            for j in 0..s.n() {
                if i != j {
                    acc += euclidean(s.profiles.row(i), s.profiles.row(j));
                }
            }
        }
        acc / (s.n() * s.n()) as f64
    };
    Ok(2.0 * mean_cross - mean_within(x) - mean_within(y))
}

fn pooled_sorted(s: &SampleSet) -> Vec<f64> {
    let mut v = s.profiles.data().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Kolmogorov–Smirnov statistic between the pooled flattened values of the
/// two sets.
pub fn ks_distance(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    if x.profiles.is_empty() || y.profiles.is_empty() {
        return Err(Error::Contract("ks distance needs non-empty inputs".to_string()));
    }
    let a = pooled_sorted(x);
    let b = pooled_sorted(y);
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let mut sup: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Exact 1-Wasserstein distance between the pooled flattened empirical
/// distributions (quantile-function coupling).
pub fn wasserstein_1d(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    if x.profiles.is_empty() || y.profiles.is_empty() {
        return Err(Error::Contract("wasserstein distance needs non-empty inputs".to_string()));
    }
    let a = pooled_sorted(x);
    let b = pooled_sorted(y);
    // ∫ |F_a^{-1}(q) − F_b^{-1}(q)| dq over the merged quantile breakpoints.
    let (na, nb) = (a.len(), b.len());
    let mut total = 0.0;
    let mut q = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < na && j < nb {
        let q_next_a = (i + 1) as f64 / na as f64;
        let q_next_b = (j + 1) as f64 / nb as f64;
        let q_next = q_next_a.min(q_next_b);
        total += (q_next - q) * (a[i] - b[j]).abs();
        if q_next_a <= q_next + 1e-18 && q_next_a <= q_next_b {
            i += 1;
        }
        if q_next_b <= q_next + 1e-18 && q_next_b <= q_next_a {
            j += 1;
        }
        q = q_next;
    }
    Ok(total)
}

/// Gaussian-kernel MMD over full profiles (biased V-statistic); the
/// bandwidth defaults to the median pairwise distance of the pooled sets.
/// Returns `(mmd, bandwidth)`.
pub fn mmd_gaussian(x: &SampleSet, y: &SampleSet, bandwidth: Option<f64>) -> Result<(f64, f64)> {
    require_two("mmd", x, y)?;
    let sigma = match bandwidth {
        Some(s) => {
            if s <= 0.0 {
                return Err(Error::Config(format!("mmd bandwidth must be positive, got {s}")));
            }
            s
        }
        None => median_pairwise_distance(x, y)?,
    };
    let k = |a: &[f64], b: &[f64]| {
        let d = euclidean(a, b);
        (-d * d / (2.0 * sigma * sigma)).exp()
    };
    let mean_kernel = |p: &Array2, q: &Array2| {
        let mut s = 0.0;
        for i in 0..p.rows() {
            for j in 0..q.rows() {
                s += k(p.row(i), q.row(j));
            }
        }
        s / (p.rows() * q.rows()) as f64
    };
    let mmd2 = mean_kernel(&x.profiles, &x.profiles) + mean_kernel(&y.profiles, &y.profiles)
        - 2.0 * mean_kernel(&x.profiles, &y.profiles);
    Ok((mmd2.max(0.0).sqrt(), sigma))
}

fn median_pairwise_distance(x: &SampleSet, y: &SampleSet) -> Result<f64> {
    let rows: Vec<&[f64]> = (0..x.n())
        .map(|i| x.profiles.row(i))
        .chain((0..y.n()).map(|j| y.profiles.row(j)))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            dists.push(euclidean(rows[i], rows[j]));
        }
    }
    dists.sort_by(f64::total_cmp);
    let median = if dists.len() % 2 == 1 {
        dists[dists.len() / 2]
    } else {
        0.5 * (dists[dists.len() / 2 - 1] + dists[dists.len() / 2])
    };
    if median <= 0.0 {
        return Err(Error::Config(
            "all pooled pairwise distances are zero; specify an mmd bandwidth".to_string(),
        ));
    }
    Ok(median)
}

/// Per-profile sample autocorrelation at lags `1..T-1`, averaged over
/// profiles; zero-variance profiles are skipped.
fn autocorrelation_vector(s: &SampleSet) -> Result<(Vec<f64>, usize)> {
    let t = s.t();
    if t < 3 {
        return Err(Error::Contract(format!(
            "autocorrelation needs T >= 3 time steps, got {t}"
        )));
    }
    let mut acc = vec![0.0; t - 1];
    let mut used = 0usize;
    for i in 0..s.n() {
        let row = s.profiles.row(i);
        let mean = row.iter().sum::<f64>() / t as f64;
        let denom: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
        if denom <= 0.0 {
            continue;
        }
        used += 1;
        for (lag, slot) in (1..t).zip(acc.iter_mut()) {
            let num: f64 =
                (0..t - lag).map(|k| (row[k] - mean) * (row[k + lag] - mean)).sum();
            *slot += num / denom;
        }
    }
    if used == 0 {
        return Err(Error::Contract(
            "autocorrelation undefined: every profile is constant".to_string(),
        ));
    }
    for v in &mut acc {
        *v /= used as f64;
    }
    Ok((acc, s.n() - used))
}

/// Squared gap between the two sets' lag-autocorrelation vectors, summed
/// over lags. Returns `(value, skipped_zero_variance_profiles)`.
pub fn mse_autocorrelation(x: &SampleSet, y: &SampleSet) -> Result<(f64, usize)> {
    let (rx, skipped_x) = autocorrelation_vector(x)?;
    let (ry, skipped_y) = autocorrelation_vector(y)?;
    let v = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((v, skipped_x + skipped_y))
}

/// Per-step empirical τ-quantiles of an ensemble, one vector per τ.
pub fn quantile_forecasts(ensemble: &Array2, taus: &[f64]) -> Result<Vec<Vec<f64>>> {
    if ensemble.rows() == 0 {
        return Err(Error::Contract("quantiles of an empty ensemble".to_string()));
    }
    for &tau in taus {
        if !(0.0 < tau && tau < 1.0) {
            return Err(Error::Config(format!("quantile {tau} outside (0, 1)")));
        }
    }
    let s = ensemble.rows();
    let t = ensemble.cols();
    let mut column = vec![0.0; s];
    let mut out = vec![vec![0.0; t]; taus.len()];
    for j in 0..t {
        for (i, v) in column.iter_mut().enumerate() {
            *v = ensemble.get(i, j);
        }
        column.sort_by(f64::total_cmp);
        for (k, &tau) in taus.iter().enumerate() {
            out[k][j] = empirical_quantile(&column, tau);
        }
    }
    Ok(out)
}

/// Linear-interpolation quantile of a sorted slice.
fn empirical_quantile(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = tau * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Pinball loss averaged over time steps and quantile levels. `forecasts`
/// holds one per-step vector per τ, aligned with `taus`.
pub fn pinball(y_true: &[f64], forecasts: &[Vec<f64>], taus: &[f64]) -> Result<f64> {
    if forecasts.len() != taus.len() {
        return Err(Error::Contract(format!(
            "{} quantile forecasts for {} quantile levels",
            forecasts.len(),
            taus.len()
        )));
    }
    if taus.is_empty() {
        return Err(Error::Contract("pinball loss needs at least one quantile".to_string()));
    }
    let t = y_true.len();
    let mut total = 0.0;
    for (tau, forecast) in taus.iter().zip(forecasts) {
        if forecast.len() != t {
            return Err(Error::dim(
                "pinball",
                format!("forecast has {} steps, truth has {t}", forecast.len()),
            ));
        }
        for (yt, yp) in y_true.iter().zip(forecast) {
            total += if yt > yp { tau * (yt - yp) } else { (1.0 - tau) * (yp - yt) };
        }
    }
    Ok(total / (t * taus.len()) as f64)
}

/// Ensemble CRPS in energy form, averaged over time steps:
/// `mean_i |X_i − y| − (1/2S²)·ΣΣ |X_i − X_j|` per step.
pub fn crps_ensemble(y_true: &[f64], ensemble: &Array2) -> Result<f64> {
    let s = ensemble.rows();
    if s == 0 {
        return Err(Error::Contract("crps of an empty ensemble".to_string()));
    }
    if ensemble.cols() != y_true.len() {
        return Err(Error::dim(
            "crps",
            format!("ensemble has {} steps, truth has {}", ensemble.cols(), y_true.len()),
        ));
    }
    let t = y_true.len();
    let mut total = 0.0;
    for (j, &y) in y_true.iter().enumerate() {
        let mut mean_abs = 0.0;
        for i in 0..s {
            mean_abs += (ensemble.get(i, j) - y).abs();
        }
        mean_abs /= s as f64;
        let mut spread = 0.0;
        for i in 0..s {
            for k in 0..s {
                spread += (ensemble.get(i, j) - ensemble.get(k, j)).abs();
            }
        }
        spread /= 2.0 * (s * s) as f64;
        total += mean_abs - spread;
    }
    Ok(total / t as f64)
}

/// MSE between the truth and the ensemble-mean profile.
pub fn mse_mean_prediction(y_true: &[f64], ensemble: &Array2) -> Result<f64> {
    let s = ensemble.rows();
    if s == 0 {
        return Err(Error::Contract("mse of an empty ensemble".to_string()));
    }
    if ensemble.cols() != y_true.len() {
        return Err(Error::dim(
            "mse",
            format!("ensemble has {} steps, truth has {}", ensemble.cols(), y_true.len()),
        ));
    }
    let mean = ensemble.col_means();
    Ok(y_true.iter().zip(&mean).map(|(y, m)| (y - m) * (y - m)).sum::<f64>()
        / y_true.len() as f64)
}
