//! Invertible normalization layer.
//!
//! Standardizes each feature by mean `γ` and std `β`: `z = (x − γ)/√(β²+ε)`.
//! In training mode `γ, β` are the current batch statistics (differentiated
//! through, like batch normalization) and exponential running estimates are
//! maintained on the side; in inference mode the frozen running estimates
//! are used. `γ, β` are statistics, never trainable parameters.
//!
//! The exact log-determinant of the normalizing direction is
//! `−Σ_i ½·log(β_i² + ε)`, i.e. `−Σ_i log(√(β_i²+ε))`; with the small ε
//! this coincides with `−Σ_i log(|β_i| + ε)` to O(ε).

use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::flow::Mode;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Running mean/std estimates for one normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormState {
    /// Running mean estimate (1×T).
    pub gamma: Array2,
    /// Running standard-deviation estimate (1×T), entries ≥ 0.
    pub beta: Array2,
    pub eps: f64,
    pub momentum: f64,
    /// True once at least one training update or explicit initialization
    /// has happened; inference passes require it.
    pub populated: bool,
}

impl NormState {
    pub fn new(t: usize) -> Self {
        NormState {
            gamma: Array2::zeros(1, t),
            beta: Array2::filled(1, t, 1.0),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
            populated: false,
        }
    }

    pub fn feature_len(&self) -> usize {
        self.gamma.cols()
    }

    /// Explicit initialization: set the running estimates directly.
    pub fn set_stats(&mut self, mean: &Array2, std: &Array2) -> Result<()> {
        if mean.shape() != self.gamma.shape() || std.shape() != self.beta.shape() {
            return Err(Error::dim("set_stats", "statistic shapes do not match layer".to_string()));
        }
        if std.data().iter().any(|&b| b < 0.0) {
            return Err(Error::Contract("std estimates must be non-negative".to_string()));
        }
        self.gamma = mean.clone();
        self.beta = std.clone();
        self.populated = true;
        Ok(())
    }

    /// Momentum update `run ← (1−m)·run + m·batch`.
    pub fn absorb(&mut self, batch_mean: &Array2, batch_std: &Array2) -> Result<()> {
        if batch_mean.shape() != self.gamma.shape() || batch_std.shape() != self.beta.shape() {
            return Err(Error::dim("absorb", "statistic shapes do not match layer".to_string()));
        }
        let m = self.momentum;
        self.gamma = self.gamma.zip_map(batch_mean, |r, b| (1.0 - m) * r + m * b)?;
        self.beta = self.beta.zip_map(batch_std, |r, b| (1.0 - m) * r + m * b)?;
        self.populated = true;
        Ok(())
    }

    fn denom(&self) -> Array2 {
        let eps = self.eps;
        self.beta.map(|b| (b * b + eps).sqrt())
    }

    fn logdet_value(&self) -> f64 {
        let eps = self.eps;
        -0.5 * self.beta.data().iter().map(|&b| (b * b + eps).ln()).sum::<f64>()
    }
}

/// Output of a recorded normalizing pass.
pub struct NormForward {
    pub z: NodeId,
    /// Per-row log-determinant (batch×1); constant across rows.
    pub logdet: NodeId,
    /// Batch statistics (mean, std) observed in training mode.
    pub batch_stats: Option<(Array2, Array2)>,
}

/// Record the normalizing direction `x → z` in a graph.
pub fn norm_normalize_graph(
    g: &mut Graph,
    x: NodeId,
    state: &NormState,
    mode: Mode,
) -> Result<NormForward> {
    let (rows, cols) = g.value(x).shape();
    if cols != state.feature_len() {
        return Err(Error::dim(
            "norm_normalize",
            format!("input has {cols} columns, layer expects {}", state.feature_len()),
        ));
    }
    match mode {
        Mode::Training => {
            if rows < 2 {
                return Err(Error::Contract(
                    "training-mode normalization requires batch size >= 2".to_string(),
                ));
            }
            let mean = g.col_means(x);
            let var = g.col_vars(x);
            let var_eps = g.shift(var, state.eps);
            let ln_ve = g.ln(var_eps)?;
            let half_ln = g.scale(ln_ve, 0.5);
            let denom = g.exp(half_ln);
            let mean_wide = g.broadcast_rows(mean, rows)?;
            let denom_wide = g.broadcast_rows(denom, rows)?;
            let centered = g.sub(x, mean_wide)?;
            let z = g.div(centered, denom_wide)?;
            let ld_scalar = {
                let s = g.row_sums(ln_ve);
                g.scale(s, -0.5)
            };
            let logdet = g.broadcast_rows(ld_scalar, rows)?;
            let batch_mean = g.value(mean).clone();
            let batch_std = g.value(var).map(f64::sqrt);
            Ok(NormForward { z, logdet, batch_stats: Some((batch_mean, batch_std)) })
        }
        Mode::Inference => {
            if !state.populated {
                return Err(Error::State(
                    "normalization state not populated; train or initialize stats first"
                        .to_string(),
                ));
            }
            let gamma = g.constant(state.gamma.clone());
            let denom = g.constant(state.denom());
            let gamma_wide = g.broadcast_rows(gamma, rows)?;
            let denom_wide = g.broadcast_rows(denom, rows)?;
            let centered = g.sub(x, gamma_wide)?;
            let z = g.div(centered, denom_wide)?;
            let ld = g.constant(Array2::filled(1, 1, state.logdet_value()));
            let logdet = g.broadcast_rows(ld, rows)?;
            Ok(NormForward { z, logdet, batch_stats: None })
        }
    }
}

/// Normalizing direction on plain values. In training mode the running
/// estimates are updated with the observed batch statistics.
pub fn norm_normalize(
    x: &Array2,
    state: &mut NormState,
    mode: Mode,
) -> Result<(Array2, Vec<f64>)> {
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let fwd = norm_normalize_graph(&mut g, xn, state, mode)?;
    if let Some((mean, std)) = &fwd.batch_stats {
        state.absorb(mean, std)?;
    }
    let z = g.value(fwd.z).clone();
    let logdet = (0..x.rows()).map(|i| g.value(fwd.logdet).get(i, 0)).collect();
    Ok((z, logdet))
}

/// Generating direction `x = z·√(β²+ε) + γ` using the running estimates.
pub fn norm_generate(z: &Array2, state: &NormState) -> Result<Array2> {
    if !state.populated {
        return Err(Error::State(
            "normalization state not populated; train or initialize stats first".to_string(),
        ));
    }
    if z.cols() != state.feature_len() {
        return Err(Error::dim(
            "norm_generate",
            format!("input has {} columns, layer expects {}", z.cols(), state.feature_len()),
        ));
    }
    let denom = state.denom();
    let mut out = z.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for ((v, &d), &m) in row.iter_mut().zip(denom.data()).zip(state.gamma.data()) {
            *v = *v * d + m;
        }
    }
    Ok(out)
}
