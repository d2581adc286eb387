//! Synthetic datasets for tests and demos.
//!
//! Three generators: a correlated Gaussian with AR(1) covariance (density
//! oracles), a two-archetype mixture of daily shapes with per-household
//! day-to-day persistence (generation and forecasting pipelines), and a
//! condition-scaled family (conditional-response checks).

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::array::{self, Array2};
use crate::data::ProfileDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SynthSpec {
    /// `N(mu, Σ)` with `Σ_ij = sigma² · rho^|i-j|`. May produce negative
    /// values; meant for in-memory density oracles, not CSV ingestion.
    CorrelatedGaussian { mu: Vec<f64>, sigma: f64, rho: f64 },
    /// Convex blend of a morning-peak and an evening-peak shape plus noise.
    /// Rows are organized as households × consecutive days and the blend
    /// weight persists day-to-day (Gaussian-copula AR(1)), so day pairing
    /// yields an informative forecasting problem.
    ArchetypeMixture { households: usize, noise: f64, persistence: f64 },
    /// `profile = c · base_shape + noise` with `c ~ U(0.5, 2)` stored as the
    /// single condition column.
    ConditionScaled { noise: f64 },
}

pub fn synth_generate(spec: &SynthSpec, n: usize, t: usize, seed: u64) -> Result<ProfileDataset> {
    if n == 0 || t == 0 {
        return Err(Error::Config(format!("synthetic dataset needs n, t > 0; got {n}, {t}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    match spec {
        SynthSpec::CorrelatedGaussian { mu, sigma, rho } => {
            if !(-1.0 < *rho && *rho < 1.0) {
                return Err(Error::Config(format!("AR(1) rho {rho} outside (-1, 1)")));
            }
            if mu.len() != t {
                return Err(Error::Config(format!(
                    "mu has {} entries, profiles have {t}",
                    mu.len()
                )));
            }
            if *sigma <= 0.0 {
                return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
            }
            let mut cov = Array2::zeros(t, t);
            for i in 0..t {
                for j in 0..t {
                    cov.set(i, j, sigma * sigma * rho.powi((i as i32 - j as i32).abs()));
                }
            }
            let chol = array::cholesky(&cov)?;
            let mut profiles = Array2::zeros(n, t);
            let mut z = vec![0.0; t];
            for i in 0..n {
                for v in z.iter_mut() {
                    *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                let row = profiles.row_mut(i);
                for (j, r) in row.iter_mut().enumerate() {
                    let mut s = mu[j];
                    for k in 0..=j {
                        s += chol.get(j, k) * z[k];
                    }
                    *r = s;
                }
            }
            ProfileDataset::new(profiles, Array2::zeros(n, 0), vec![])
        }
        SynthSpec::ArchetypeMixture { households, noise, persistence } => {
            if *households == 0 {
                return Err(Error::Config("need at least one household".to_string()));
            }
            if !(-1.0 < *persistence && *persistence < 1.0) {
                return Err(Error::Config(format!("persistence {persistence} outside (-1, 1)")));
            }
            // Baselines sit far above the noise floor so the non-negativity
            // clamp is never active and the distribution stays continuous.
            let morning = bump_shape(t, 0.32, 0.10, 1.2, 0.35);
            let evening = bump_shape(t, 0.78, 0.09, 1.4, 0.35);
            let days_per_household = n.div_ceil(*households);
            let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
            let mut profiles = Array2::zeros(n, t);
            let mut hh = Vec::with_capacity(n);
            let mut dates = Vec::with_capacity(n);
            let mut row = 0usize;
            'outer: for h in 0..*households {
                // Latent Gaussian AR(1); the blend weight is its normal CDF,
                // so weights stay uniform marginally.
                let mut g: f64 = rng.sample(rand_distr::StandardNormal);
                for d in 0..days_per_household {
                    if row == n {
                        break 'outer;
                    }
                    let w = normal_cdf(g);
                    let out = profiles.row_mut(row);
                    for (j, o) in out.iter_mut().enumerate() {
                        let base = w * morning[j] + (1.0 - w) * evening[j];
                        let e: f64 = rng.sample(rand_distr::StandardNormal);
                        *o = (base + noise * e).max(0.0);
                    }
                    hh.push(format!("h{h:04}"));
                    dates.push(start + chrono::Days::new(d as u64));
                    let e: f64 = rng.sample(rand_distr::StandardNormal);
                    g = persistence * g + (1.0 - persistence * persistence).sqrt() * e;
                    row += 1;
                }
            }
            let mut ds = ProfileDataset::new(profiles, Array2::zeros(n, 0), vec![])?;
            ds.households = Some(hh);
            ds.dates = Some(dates);
            Ok(ds)
        }
        SynthSpec::ConditionScaled { noise } => {
            let base = bump_shape(t, 0.5, 0.18, 1.0, 0.4);
            let mut profiles = Array2::zeros(n, t);
            let mut conditions = Array2::zeros(n, 1);
            for i in 0..n {
                let c = 0.5 + 1.5 * rng.random::<f64>();
                conditions.set(i, 0, c);
                let row = profiles.row_mut(i);
                for (j, o) in row.iter_mut().enumerate() {
                    let e: f64 = rng.sample(rand_distr::StandardNormal);
                    *o = (c * base[j] + noise * e).max(0.0);
                }
            }
            ProfileDataset::new(profiles, conditions, vec!["c_scale".to_string()])
        }
    }
}

/// A smooth positive daily shape: baseline plus one Gaussian bump at a
/// fractional position of the day.
fn bump_shape(t: usize, center: f64, width: f64, height: f64, baseline: f64) -> Vec<f64> {
    (0..t)
        .map(|i| {
            let tau = (i as f64 + 0.5) / t as f64;
            let d = (tau - center) / width;
            baseline + height * (-d * d).exp()
        })
        .collect()
}

/// Abramowitz–Stegun 7.1.26 approximation, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}
