//! Soft clamping of coupling-scale outputs.
//!
//! The raw scale net output `s` is replaced by `(2α/π)·atan(s/α)`, which is
//! ~identity for `|s| ≪ α` and saturates strictly inside `±α`, so the
//! subsequent `exp` can never overflow.

use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Clamp bound `α`. The defaulted constructor keeps `α` inside the
/// empirically useful band `[0.1, 1.0]`; [`ClampConfig::unchecked`] only
/// requires positivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampConfig {
    alpha: f64,
}

impl ClampConfig {
    pub const DEFAULT_ALPHA: f64 = 0.6;

    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.1..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "clamp alpha {alpha} outside [0.1, 1.0]; use ClampConfig::unchecked to override"
            )));
        }
        Ok(ClampConfig { alpha })
    }

    /// Opt out of the range validation; `alpha` must still be positive.
    pub fn unchecked(alpha: f64) -> Result<Self> {
        if alpha <= 0.0 || !alpha.is_finite() {
            return Err(Error::Config(format!("clamp alpha must be positive, got {alpha}")));
        }
        Ok(ClampConfig { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for ClampConfig {
    fn default() -> Self {
        ClampConfig { alpha: Self::DEFAULT_ALPHA }
    }
}

/// `(2α/π)·atan(s/α)` elementwise.
pub fn soft_clamp(s_raw: &Array2, alpha: f64) -> Result<Array2> {
    if alpha <= 0.0 || !alpha.is_finite() {
        return Err(Error::Config(format!("soft_clamp alpha must be positive, got {alpha}")));
    }
    Ok(s_raw.map(|s| 2.0 * alpha / std::f64::consts::PI * (s / alpha).atan()))
}

/// Graph form of [`soft_clamp`].
pub fn soft_clamp_graph(g: &mut Graph, s_raw: NodeId, alpha: f64) -> NodeId {
    let scaled = g.scale(s_raw, 1.0 / alpha);
    let a = g.atan(scaled);
    g.scale(a, 2.0 * alpha / std::f64::consts::PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_zero() {
        let s = Array2::zeros(1, 1);
        let c = soft_clamp(&s, 0.5).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
    }

    #[test]
    fn at_alpha_gives_half_alpha() {
        let alpha = 0.73;
        let s = Array2::filled(1, 1, alpha);
        let c = soft_clamp(&s, alpha).unwrap();
        assert!((c.get(0, 0) - alpha / 2.0).abs() < 1e-15);
    }

    #[test]
    fn saturates_at_alpha() {
        let s = Array2::filled(1, 1, 1e6);
        let c = soft_clamp(&s, 0.5).unwrap();
        assert!((c.get(0, 0) - 0.5).abs() < 1e-5);
        assert!(c.get(0, 0) < 0.5, "bound is strict");
    }

    #[test]
    fn config_validation() {
        assert!(ClampConfig::new(0.05).is_err());
        assert!(ClampConfig::new(1.5).is_err());
        assert!(ClampConfig::new(0.6).is_ok());
        assert!(ClampConfig::unchecked(1.5).is_ok());
        assert!(ClampConfig::unchecked(0.0).is_err());
        assert!(ClampConfig::unchecked(-1.0).is_err());
    }

    #[test]
    fn graph_and_value_paths_agree() {
        let s = Array2::from_rows(&[vec![-3.0, 0.2, 7.0]]).unwrap();
        let v = soft_clamp(&s, 0.4).unwrap();
        let mut g = Graph::new();
        let n = g.leaf(s);
        let c = soft_clamp_graph(&mut g, n, 0.4);
        assert!(g.value(c).max_abs_diff(&v) < 1e-15);
    }
}
