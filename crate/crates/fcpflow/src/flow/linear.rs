//! Invertible linear layer mixing the time dimension.
//!
//! The normalizing-direction matrix is parameterized directly in factored
//! form `A = L·U·P` — `L` lower triangular with diagonal `sign·exp(log_diag)`,
//! `U` unit upper triangular, `P` a permutation fixed at initialization — so
//! invertibility holds by construction, the training pass is two matmuls and
//! a column permutation, and `log|det A| = Σ log_diag` exactly in O(T).
//! The generating direction solves the two triangular systems instead of
//! forming an inverse.
//!
//! Rows are samples, so the layer acts by right-multiplication: `z = x·A`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{self, Array2};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

/// Factored invertible matrix over the time dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFactor {
    /// Column permutation applied last in the normalizing direction.
    perm: Vec<usize>,
    /// T×T trainable; only the strictly lower triangle is used.
    pub lower: Array2,
    /// T×T trainable; only the strictly upper triangle is used.
    pub upper: Array2,
    /// 1×T trainable log-magnitudes of the diagonal.
    pub log_diag: Array2,
    /// Fixed diagonal signs (±1).
    diag_sign: Vec<f64>,
}

impl LinearFactor {
    /// The identity transform.
    pub fn identity(t: usize) -> Self {
        LinearFactor {
            perm: (0..t).collect(),
            lower: Array2::zeros(t, t),
            upper: Array2::zeros(t, t),
            log_diag: Array2::zeros(1, t),
            diag_sign: vec![1.0; t],
        }
    }

    /// Initialize from the pivoted LU factorization of a random orthogonal
    /// matrix, so the layer starts as a pure rotation with log-det 0.
    pub fn random_orthogonal_init(t: usize, rng: &mut impl Rng) -> Result<Self> {
        let q = array::random_orthogonal(t, rng);
        // Q = Uᵀ·Lᵀ·P_row for the pivoted LU of Qᵀ; Uᵀ is our lower factor,
        // Lᵀ the unit upper factor, and P_row becomes the column permutation.
        let mut qt = Array2::zeros(t, t);
        for i in 0..t {
            for j in 0..t {
                qt.set(i, j, q.get(j, i));
            }
        }
        let (perm_lu, l_std, u_std) = array::lu_pivoted(&qt)?;
        let mut lower = Array2::zeros(t, t);
        let mut upper = Array2::zeros(t, t);
        let mut log_diag = Array2::zeros(1, t);
        let mut diag_sign = vec![1.0; t];
        for i in 0..t {
            for j in 0..t {
                if i > j {
                    lower.set(i, j, u_std.get(j, i));
                    upper.set(j, i, l_std.get(i, j));
                }
            }
            let d = u_std.get(i, i);
            diag_sign[i] = if d < 0.0 { -1.0 } else { 1.0 };
            log_diag.set(0, i, d.abs().ln());
        }
        // lu_pivoted gives Qᵀ[perm_lu[i], :] = (L·U)[i, :]; as a column
        // operation on the right this is gather by the inverse permutation.
        let mut perm = vec![0usize; t];
        for (i, &p) in perm_lu.iter().enumerate() {
            perm[p] = i;
        }
        Ok(LinearFactor { perm, lower, upper, log_diag, diag_sign })
    }

    pub fn t(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn diag_sign(&self) -> &[f64] {
        &self.diag_sign
    }

    /// Exact log|det| of the normalizing-direction matrix.
    pub fn logdet(&self) -> f64 {
        self.log_diag.data().iter().sum()
    }

    /// Effective lower factor: strict lower triangle of `lower` plus the
    /// parameterized diagonal.
    pub fn lower_effective(&self) -> Array2 {
        let t = self.t();
        let mut out = Array2::zeros(t, t);
        for i in 0..t {
            for j in 0..i {
                out.set(i, j, self.lower.get(i, j));
            }
            out.set(i, i, self.diag_sign[i] * self.log_diag.get(0, i).exp());
        }
        out
    }

    /// Effective unit upper factor.
    pub fn upper_effective(&self) -> Array2 {
        let t = self.t();
        let mut out = Array2::eye(t);
        for i in 0..t {
            for j in (i + 1)..t {
                out.set(i, j, self.upper.get(i, j));
            }
        }
        out
    }

    /// Materialize the full normalizing-direction matrix (tests/oracles).
    pub fn matrix(&self) -> Result<Array2> {
        let lu = array::matmul(&self.lower_effective(), &self.upper_effective())?;
        let t = self.t();
        let mut out = Array2::zeros(t, t);
        for i in 0..t {
            for j in 0..t {
                out.set(i, j, lu.get(i, self.perm[j]));
            }
        }
        Ok(out)
    }
}

/// Leaf ids of the trainable pieces inside one graph.
pub struct LinearNodes {
    pub lower: NodeId,
    pub upper: NodeId,
    pub log_diag: NodeId,
}

pub fn linear_leaves(g: &mut Graph, factor: &LinearFactor) -> LinearNodes {
    LinearNodes {
        lower: g.leaf(factor.lower.clone()),
        upper: g.leaf(factor.upper.clone()),
        log_diag: g.leaf(factor.log_diag.clone()),
    }
}

/// Record the normalizing direction `z = x·A`; returns `(z, logdet)` with
/// the per-row log-determinant as a batch×1 node.
pub fn linear_normalize_graph(
    g: &mut Graph,
    x: NodeId,
    factor: &LinearFactor,
    nodes: &LinearNodes,
) -> Result<(NodeId, NodeId)> {
    let t = factor.t();
    let (rows, cols) = g.value(x).shape();
    if cols != t {
        return Err(Error::dim(
            "linear_normalize",
            format!("input has {cols} columns, layer expects {t}"),
        ));
    }
    // Strict-triangle masks and the identity are constants.
    let mut mask_low = Array2::zeros(t, t);
    let mut mask_up = Array2::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            if i > j {
                mask_low.set(i, j, 1.0);
            } else if i < j {
                mask_up.set(i, j, 1.0);
            }
        }
    }
    let mask_low = g.constant(mask_low);
    let mask_up = g.constant(mask_up);
    let eye = g.constant(Array2::eye(t));
    let sign = g.constant(Array2::row_vector(factor.diag_sign.clone()));

    let lo_eff = {
        let strict = g.mul(nodes.lower, mask_low)?;
        let d = g.exp(nodes.log_diag);
        let d = g.mul(sign, d)?;
        let d_wide = g.broadcast_rows(d, t)?;
        let diag = g.mul(d_wide, eye)?;
        g.add(strict, diag)?
    };
    let up_eff = {
        let strict = g.mul(nodes.upper, mask_up)?;
        g.add(strict, eye)?
    };
    let y = g.matmul(x, lo_eff)?;
    let y = g.matmul(y, up_eff)?;
    let z = g.permute_cols(y, &factor.perm)?;

    let ld_scalar = g.row_sums(nodes.log_diag);
    let logdet = g.broadcast_rows(ld_scalar, rows)?;
    Ok((z, logdet))
}

/// Normalizing direction on plain values.
pub fn linear_normalize(x: &Array2, factor: &LinearFactor) -> Result<(Array2, Vec<f64>)> {
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let nodes = linear_leaves(&mut g, factor);
    let (z, _) = linear_normalize_graph(&mut g, xn, factor, &nodes)?;
    let ld = factor.logdet();
    Ok((g.value(z).clone(), vec![ld; x.rows()]))
}

/// Generating direction: solve `x·A = z` by undoing the permutation and two
/// right-triangular solves. No explicit inverse is formed.
pub fn linear_generate(z: &Array2, factor: &LinearFactor) -> Result<Array2> {
    let t = factor.t();
    if z.cols() != t {
        return Err(Error::dim(
            "linear_generate",
            format!("input has {} columns, layer expects {t}", z.cols()),
        ));
    }
    let lo = factor.lower_effective();
    let up = factor.upper_effective();
    let mut out = Array2::zeros(z.rows(), t);
    let mut w = vec![0.0; t];
    let mut y = vec![0.0; t];
    for r in 0..z.rows() {
        let zr = z.row(r);
        // Undo the column permutation: z = y·P with out[:, j] = y[:, perm[j]].
        for (j, &p) in factor.perm.iter().enumerate() {
            w[p] = zr[j];
        }
        // Solve y·U = w with U unit upper: ascending columns.
        for j in 0..t {
            let mut s = w[j];
            for k in 0..j {
                s -= y[k] * up.get(k, j);
            }
            y[j] = s;
        }
        // Solve x·L = y with L lower: descending columns.
        let xr = out.row_mut(r);
        for j in (0..t).rev() {
            let mut s = y[j];
            for k in (j + 1)..t {
                s -= xr[k] * lo.get(k, j);
            }
            xr[j] = s / lo.get(j, j);
        }
    }
    Ok(out)
}
