//! Reverse-mode automatic differentiation over [`Array2`] values.
//!
//! Operations are recorded into a [`Graph`] arena as they execute; calling
//! [`Graph::backward`] on a scalar output replays the arena in reverse and
//! accumulates exact gradients into every reachable node. One graph is built
//! per training step and discarded after the backward pass.
//!
//! The op set is deliberately small: dense matmul, pointwise arithmetic and
//! nonlinearities, and index-routing "structure" ops (split/interleave/
//! concat/broadcast/reductions). That is enough to express every flow layer
//! and the training objective. No implicit broadcasting beyond scalar
//! constants; shape mismatches are errors.

use crate::array::{self, Array2};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Ln(NodeId),
    Atan(NodeId),
    Tanh(NodeId),
    /// Multiply by a scalar constant.
    Scale(NodeId, f64),
    /// Add a scalar constant.
    Shift(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `out[:, j] = a[:, idx[j]]`.
    GatherCols(NodeId, Vec<usize>),
    /// `out[:, idx_a[j]] = a[:, j]`, `out[:, idx_b[j]] = b[:, j]`; the two
    /// index sets partition the output columns.
    PlaceCols {
        a: NodeId,
        b: NodeId,
        idx_a: Vec<usize>,
        idx_b: Vec<usize>,
    },
    /// Repeat a `1×n` row `m` times.
    BroadcastRows(NodeId),
    /// `m×n -> m×1` sums across each row.
    RowSums(NodeId),
    /// `m×n -> 1×n` per-column means.
    ColMeans(NodeId),
    /// `m×n -> 1×n` per-column population variances.
    ColVars(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
}

struct Node {
    value: Array2,
    grad: Array2,
    op: Op,
}

/// A tape of recorded operations. Nodes are append-only, so creation order
/// is a topological order of the (acyclic) computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2, op: Op) -> NodeId {
        let grad = Array2::zeros(value.rows(), value.cols());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input or parameter. Gradients accumulate here.
    pub fn leaf(&mut self, value: Array2) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Alias for [`Graph::leaf`] used for values whose gradient is ignored.
    pub fn constant(&mut self, value: Array2) -> NodeId {
        self.leaf(value)
    }

    pub fn value(&self, id: NodeId) -> &Array2 {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Array2 {
        &self.nodes[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reset every gradient to zero (backward accumulates otherwise).
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("div", a, b)?;
        if self.value(b).data().iter().any(|&x| x == 0.0) {
            return Err(Error::domain("div", "zero denominator".to_string()));
        }
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(Error::domain("log", "operand not strictly positive".to_string()));
        }
        let v = self.value(a).map(f64::ln);
        Ok(self.push(v, Op::Ln(a)))
    }

    pub fn atan(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::atan);
        self.push(v, Op::Atan(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c))
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Shift(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = array::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> NodeId {
        let src = self.value(a);
        let mut out = Array2::zeros(src.rows(), indices.len());
        for i in 0..src.rows() {
            let src_row = src.row(i);
            let out_row = out.row_mut(i);
            for (k, &j) in indices.iter().enumerate() {
                out_row[k] = src_row[j];
            }
        }
        self.push(out, Op::GatherCols(a, indices))
    }

    /// Split into even-indexed and odd-indexed columns (0-based). For an odd
    /// column count the even half is one wider.
    pub fn split_even_odd(&mut self, x: NodeId) -> Result<(NodeId, NodeId)> {
        let n = self.value(x).cols();
        if n < 2 {
            return Err(Error::dim("split_even_odd", format!("needs >= 2 columns, got {n}")));
        }
        let evens: Vec<usize> = (0..n).step_by(2).collect();
        let odds: Vec<usize> = (1..n).step_by(2).collect();
        Ok((self.gather(x, evens), self.gather(x, odds)))
    }

    /// Interleave `a` into even output positions and `b` into odd ones;
    /// exact inverse of [`Graph::split_even_odd`] when `|a| = |b|` or
    /// `|a| = |b| + 1`. When `b` is one longer, its trailing element takes
    /// the final slot (see [`interleave_maps`]).
    pub fn interleave(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).rows() != self.value(b).rows() {
            return Err(Error::dim(
                "interleave",
                format!("row counts {} vs {}", self.value(a).rows(), self.value(b).rows()),
            ));
        }
        let (idx_a, idx_b) = interleave_maps(self.value(a).cols(), self.value(b).cols())?;
        Ok(self.place(a, b, idx_a, idx_b))
    }

    /// Concatenate columns: `[a | b]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ra, ca) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        if ra != rb {
            return Err(Error::dim("concat_cols", format!("row counts {ra} vs {rb}")));
        }
        let idx_a: Vec<usize> = (0..ca).collect();
        let idx_b: Vec<usize> = (ca..ca + cb).collect();
        Ok(self.place(a, b, idx_a, idx_b))
    }

    fn place(&mut self, a: NodeId, b: NodeId, idx_a: Vec<usize>, idx_b: Vec<usize>) -> NodeId {
        let rows = self.value(a).rows();
        let cols = idx_a.len() + idx_b.len();
        let mut out = Array2::zeros(rows, cols);
        for i in 0..rows {
            for (k, &j) in idx_a.iter().enumerate() {
                let v = self.value(a).get(i, k);
                out.set(i, j, v);
            }
            for (k, &j) in idx_b.iter().enumerate() {
                let v = self.value(b).get(i, k);
                out.set(i, j, v);
            }
        }
        self.push(out, Op::PlaceCols { a, b, idx_a, idx_b })
    }

    /// A contiguous column slice `[start, start + len)`.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let n = self.value(x).cols();
        if start + len > n {
            return Err(Error::dim(
                "slice_cols",
                format!("slice {start}..{} out of {n} columns", start + len),
            ));
        }
        Ok(self.gather(x, (start..start + len).collect()))
    }

    /// Reorder columns: `out[:, j] = x[:, perm[j]]`.
    pub fn permute_cols(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let n = self.value(x).cols();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::dim("permute_cols", format!("invalid permutation of {n} columns")));
        }
        Ok(self.gather(x, perm.to_vec()))
    }

    /// Repeat a `1×n` row vector down `rows` rows.
    pub fn broadcast_rows(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let (r, n) = self.value(x).shape();
        if r != 1 {
            return Err(Error::dim("broadcast_rows", format!("expected 1 row, got {r}")));
        }
        let mut out = Array2::zeros(rows, n);
        for i in 0..rows {
            let v: Vec<f64> = self.value(x).row(0).to_vec();
            out.row_mut(i).copy_from_slice(&v);
        }
        Ok(self.push(out, Op::BroadcastRows(x)))
    }

    /// Per-row sums: `m×n -> m×1`.
    pub fn row_sums(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let mut out = Array2::zeros(src.rows(), 1);
        for i in 0..src.rows() {
            out.set(i, 0, src.row(i).iter().sum());
        }
        self.push(out, Op::RowSums(x))
    }

    /// Per-column means: `m×n -> 1×n`.
    pub fn col_means(&mut self, x: NodeId) -> NodeId {
        let v = Array2::row_vector(self.value(x).col_means());
        self.push(v, Op::ColMeans(x))
    }

    /// Per-column population variances: `m×n -> 1×n`.
    pub fn col_vars(&mut self, x: NodeId) -> NodeId {
        let v = Array2::row_vector(self.value(x).col_vars());
        self.push(v, Op::ColVars(x))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Array2::from_vec(1, 1, vec![s]).unwrap(), Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let src = self.value(x);
        let s: f64 = src.data().iter().sum();
        let v = s / src.len() as f64;
        self.push(Array2::from_vec(1, 1, vec![v]).unwrap(), Op::MeanAll(x))
    }

    /// Backpropagate from a `1×1` scalar node. Every node reachable from
    /// `out` receives `d out / d node` added into its gradient buffer;
    /// repeated calls accumulate unless [`Graph::zero_grads`] is called.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a 1x1 scalar output, got {:?}",
                self.value(out).shape()
            )));
        }
        let n = self.nodes.len();
        // Local seed buffer: d out / d node, in tape order.
        let mut seed: Vec<Array2> = self
            .nodes
            .iter()
            .map(|node| Array2::zeros(node.value.rows(), node.value.cols()))
            .collect();
        seed[out.0].set(0, 0, 1.0);

        for i in (0..n).rev() {
            if i > out.0 || seed[i].data().iter().all(|&g| g == 0.0) {
                continue;
            }
            let (head, tail) = seed.split_at_mut(i);
            let g_out = &tail[0];
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    head[a.0].add_scaled(g_out, 1.0);
                    head[b.0].add_scaled(g_out, 1.0);
                }
                Op::Sub(a, b) => {
                    head[a.0].add_scaled(g_out, 1.0);
                    head[b.0].add_scaled(g_out, -1.0);
                }
                Op::Mul(a, b) => {
                    let ga = g_out.zip_map(&self.nodes[b.0].value, |g, y| g * y)?;
                    let gb = g_out.zip_map(&self.nodes[a.0].value, |g, x| g * x)?;
                    head[a.0].add_scaled(&ga, 1.0);
                    head[b.0].add_scaled(&gb, 1.0);
                }
                Op::Div(a, b) => {
                    let vb = &self.nodes[b.0].value;
                    let ga = g_out.zip_map(vb, |g, y| g / y)?;
                    let gb = {
                        let t = g_out.zip_map(&node.value, |g, o| g * o)?;
                        t.zip_map(vb, |t, y| -t / y)?
                    };
                    head[a.0].add_scaled(&ga, 1.0);
                    head[b.0].add_scaled(&gb, 1.0);
                }
                Op::Neg(a) => head[a.0].add_scaled(g_out, -1.0),
                Op::Exp(a) => {
                    let ga = g_out.zip_map(&node.value, |g, o| g * o)?;
                    head[a.0].add_scaled(&ga, 1.0);
                }
                Op::Ln(a) => {
                    let ga = g_out.zip_map(&self.nodes[a.0].value, |g, x| g / x)?;
                    head[a.0].add_scaled(&ga, 1.0);
                }
                Op::Atan(a) => {
                    let ga = g_out.zip_map(&self.nodes[a.0].value, |g, x| g / (1.0 + x * x))?;
                    head[a.0].add_scaled(&ga, 1.0);
                }
                Op::Tanh(a) => {
                    let ga = g_out.zip_map(&node.value, |g, o| g * (1.0 - o * o))?;
                    head[a.0].add_scaled(&ga, 1.0);
                }
                Op::Scale(a, c) => head[a.0].add_scaled(g_out, *c),
                Op::Shift(a, _) => head[a.0].add_scaled(g_out, 1.0),
                Op::MatMul(a, b) => {
                    let ga = array::matmul_nt(g_out, &self.nodes[b.0].value);
                    let gb = array::matmul_tn(&self.nodes[a.0].value, g_out);
                    head[a.0].add_scaled(&ga, 1.0);
                    head[b.0].add_scaled(&gb, 1.0);
                }
                Op::GatherCols(a, indices) => {
                    let ga = &mut head[a.0];
                    for r in 0..g_out.rows() {
                        for (k, &j) in indices.iter().enumerate() {
                            let v = ga.get(r, j) + g_out.get(r, k);
                            ga.set(r, j, v);
                        }
                    }
                }
                Op::PlaceCols { a, b, idx_a, idx_b } => {
                    for r in 0..g_out.rows() {
                        for (k, &j) in idx_a.iter().enumerate() {
                            let v = head[a.0].get(r, k) + g_out.get(r, j);
                            head[a.0].set(r, k, v);
                        }
                        for (k, &j) in idx_b.iter().enumerate() {
                            let v = head[b.0].get(r, k) + g_out.get(r, j);
                            head[b.0].set(r, k, v);
                        }
                    }
                }
                Op::BroadcastRows(a) => {
                    let ga = &mut head[a.0];
                    for r in 0..g_out.rows() {
                        for j in 0..g_out.cols() {
                            let v = ga.get(0, j) + g_out.get(r, j);
                            ga.set(0, j, v);
                        }
                    }
                }
                Op::RowSums(a) => {
                    let ga = &mut head[a.0];
                    for r in 0..ga.rows() {
                        let g = g_out.get(r, 0);
                        for j in 0..ga.cols() {
                            let v = ga.get(r, j) + g;
                            ga.set(r, j, v);
                        }
                    }
                }
                Op::ColMeans(a) => {
                    let ga = &mut head[a.0];
                    let m = ga.rows() as f64;
                    for r in 0..ga.rows() {
                        for j in 0..ga.cols() {
                            let v = ga.get(r, j) + g_out.get(0, j) / m;
                            ga.set(r, j, v);
                        }
                    }
                }
                Op::ColVars(a) => {
                    // v_j = (1/m) sum_i (x_ij - mu_j)^2  =>  dv_j/dx_ij = (2/m)(x_ij - mu_j)
                    let va = &self.nodes[a.0].value;
                    let means = va.col_means();
                    let m = va.rows() as f64;
                    let ga = &mut head[a.0];
                    for r in 0..va.rows() {
                        for j in 0..va.cols() {
                            let v = ga.get(r, j)
                                + g_out.get(0, j) * 2.0 / m * (va.get(r, j) - means[j]);
                            ga.set(r, j, v);
                        }
                    }
                }
                Op::SumAll(a) => head[a.0].add_scaled(&Array2::filled(
                    head[a.0].rows(),
                    head[a.0].cols(),
                    g_out.get(0, 0),
                ), 1.0),
                Op::MeanAll(a) => {
                    let len = head[a.0].len() as f64;
                    let fill = Array2::filled(head[a.0].rows(), head[a.0].cols(), g_out.get(0, 0) / len);
                    head[a.0].add_scaled(&fill, 1.0);
                }
            }
        }
        // Fold the seed buffer into the persistent (accumulating) grads.
        for (node, s) in self.nodes.iter_mut().zip(seed) {
            node.grad.add_scaled(&s, 1.0);
        }
        Ok(())
    }
}

/// Output column positions for interleaving two blocks of `na` and `nb`
/// columns: block a alternates into even slots, block b into odd slots.
/// Requires `|na - nb| <= 1`; the longer block's trailing column takes the
/// final output slot.
pub fn interleave_maps(na: usize, nb: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if na.abs_diff(nb) > 1 {
        return Err(Error::dim(
            "interleave",
            format!("column counts {na} and {nb} differ by more than 1"),
        ));
    }
    let total = na + nb;
    let mut idx_a = Vec::with_capacity(na);
    let mut idx_b = Vec::with_capacity(nb);
    for k in 0..na.min(nb) {
        idx_a.push(2 * k);
        idx_b.push(2 * k + 1);
    }
    if na > nb {
        idx_a.push(total - 1);
    } else if nb > na {
        idx_b.push(total - 1);
    }
    Ok((idx_a, idx_b))
}

/// Compare an analytic gradient against central finite differences of `f`.
///
/// Returns the maximum over all parameter entries of
/// `|analytic - central| / max(1, |central|)`. `f` must be a pure function
/// of the parameter arrays; it is re-evaluated at `±step` per entry.
pub fn finite_diff_check<F>(
    mut f: F,
    theta: &[Array2],
    analytic: &[Array2],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&[Array2]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::Contract("finite_diff_check requires step > 0".to_string()));
    }
    if theta.len() != analytic.len() {
        return Err(Error::Contract(format!(
            "parameter set has {} arrays but analytic gradient has {}",
            theta.len(),
            analytic.len()
        )));
    }
    let mut work: Vec<Array2> = theta.to_vec();
    let mut max_err = 0.0f64;
    for (p, (base, grad)) in theta.iter().zip(analytic).enumerate() {
        if base.shape() != grad.shape() {
            return Err(Error::Contract(format!(
                "analytic gradient {p} has shape {:?}, parameter has {:?}",
                grad.shape(),
                base.shape()
            )));
        }
        for e in 0..base.len() {
            let orig = base.data()[e];
            work[p].data_mut()[e] = orig + step;
            let f_plus = f(&work)?;
            work[p].data_mut()[e] = orig - step;
            let f_minus = f(&work)?;
            work[p].data_mut()[e] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("finite_diff_check probe at parameter {p} entry {e}"),
                });
            }
            let central = (f_plus - f_minus) / (2.0 * step);
            let err = (grad.data()[e] - central).abs() / central.abs().max(1.0);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn randn(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2 {
        let mut a = Array2::zeros(rows, cols);
        for v in a.data_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        a
    }

    #[test]
    fn matmul_values() {
        let mut g = Graph::new();
        let i2 = g.leaf(Array2::eye(2));
        let a = g.leaf(Array2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let p = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(p), g.value(a));
    }

    #[test]
    fn pointwise_values() {
        let mut g = Graph::new();
        let z = g.leaf(Array2::zeros(1, 1));
        let e = g.exp(z);
        assert_eq!(g.value(e).get(0, 0), 1.0);

        let one = g.leaf(Array2::filled(1, 1, 1.0));
        let a = g.atan(one);
        assert!((g.value(a).get(0, 0) - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn log_derivative_analytic() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::filled(1, 1, 2.0));
        let y = g.ln(x).unwrap();
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert!((g.grad(x).get(0, 0) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn log_and_div_domain_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::filled(1, 2, -1.0));
        assert!(matches!(g.ln(x), Err(Error::Domain { op: "log", .. })));
        let num = g.leaf(Array2::filled(1, 2, 1.0));
        let den = g.leaf(Array2::zeros(1, 2));
        assert!(matches!(g.div(num, den), Err(Error::Domain { op: "div", .. })));
    }

    #[test]
    fn split_interleave_roundtrip_including_odd() {
        for n in 2..9 {
            let mut g = Graph::new();
            let row: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let x = g.leaf(Array2::row_vector(row));
            let (even, odd) = g.split_even_odd(x).unwrap();
            let back = g.interleave(even, odd).unwrap();
            assert_eq!(g.value(back), g.value(x), "n = {n}");
        }
    }

    #[test]
    fn split_of_five_columns_sizes() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::row_vector(vec![0.0, 1.0, 2.0, 3.0, 4.0]));
        let (even, odd) = g.split_even_odd(x).unwrap();
        assert_eq!(g.value(even).data(), &[0.0, 2.0, 4.0]);
        assert_eq!(g.value(odd).data(), &[1.0, 3.0]);
    }

    #[test]
    fn split_rejects_single_column() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::zeros(3, 1));
        assert!(g.split_even_odd(x).is_err());
    }

    #[test]
    fn split_example_from_four() {
        // [a, b, c, d] -> evens [a, c], odds [b, d]
        let mut g = Graph::new();
        let x = g.leaf(Array2::row_vector(vec![10.0, 20.0, 30.0, 40.0]));
        let (e, o) = g.split_even_odd(x).unwrap();
        assert_eq!(g.value(e).data(), &[10.0, 30.0]);
        assert_eq!(g.value(o).data(), &[20.0, 40.0]);
    }

    #[test]
    fn backward_of_linear_scaling() {
        // sum(2x) => grad = all twos.
        let mut g = Graph::new();
        let x = g.leaf(Array2::filled(2, 3, 5.0));
        let y = g.scale(x, 2.0);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &Array2::filled(2, 3, 2.0));
    }

    #[test]
    fn backward_of_constant_is_zero() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::filled(2, 2, 3.0));
        let c = g.leaf(Array2::filled(1, 1, 7.0));
        g.backward(c).unwrap();
        assert_eq!(g.grad(x), &Array2::zeros(2, 2));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_is_linear_in_objective() {
        // grad(f + g) = grad(f) + grad(g) on a shared parameter.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x0 = randn(2, 3, &mut rng);

        let grad_of = |which: u8| {
            let mut g = Graph::new();
            let x = g.leaf(x0.clone());
            let f = {
                let sq = g.mul(x, x).unwrap();
                g.sum_all(sq)
            };
            let h = {
                let e = g.tanh(x);
                g.mean_all(e)
            };
            let target = match which {
                0 => f,
                1 => h,
                _ => g.add(f, h).unwrap(),
            };
            g.backward(target).unwrap();
            g.grad(x).clone()
        };
        let gf = grad_of(0);
        let gh = grad_of(1);
        let gsum = grad_of(2);
        let mut expect = gf.clone();
        expect.add_scaled(&gh, 1.0);
        assert!(gsum.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn grad_accumulates_and_resets() {
        let mut g = Graph::new();
        let x = g.leaf(Array2::filled(1, 2, 1.0));
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), &Array2::filled(1, 2, 2.0));
        g.zero_grads();
        assert_eq!(g.grad(x), &Array2::zeros(1, 2));
    }

    /// Every differentiable op, checked against central finite differences
    /// on random shapes and seeds.
    #[test]
    fn finite_difference_sweep_over_all_ops() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let mut checked = 0usize;
        for trial in 0..24 {
            let m = 1 + (trial % 4);
            let n = 2 + (trial % 3);
            let kind = trial % 12;
            let a0 = randn(m, n, &mut rng);
            let b0 = randn(m, n, &mut rng);
            // Keep div well away from zero denominators.
            let b0 = if kind == 3 { b0.map(|x| x + 3.0f64.copysign(x)) } else { b0 };
            // Keep log operands positive.
            let a0 = if kind == 5 { a0.map(|x| x.abs() + 0.5) } else { a0 };

            let eval = |theta: &[Array2], grads: bool| -> (f64, Vec<Array2>) {
                let mut g = Graph::new();
                let a = g.leaf(theta[0].clone());
                let b = g.leaf(theta[1].clone());
                let y = match kind {
                    0 => g.add(a, b).unwrap(),
                    1 => g.sub(a, b).unwrap(),
                    2 => g.mul(a, b).unwrap(),
                    3 => g.div(a, b).unwrap(),
                    4 => g.exp(a),
                    5 => g.ln(a).unwrap(),
                    6 => g.atan(a),
                    7 => g.tanh(a),
                    8 => g.neg(a),
                    9 => g.scale(a, -1.7),
                    10 => {
                        let (e, o) = g.split_even_odd(a).unwrap();
                        let merged = g.interleave(e, o).unwrap();
                        g.mul(merged, b).unwrap()
                    }
                    _ => {
                        let sq = g.mul(b, b).unwrap();
                        g.add(a, sq).unwrap()
                    }
                };
                // Random-ish but fixed scalar reduction: mean of tanh keeps
                // magnitudes tame for every op.
                let t = g.tanh(y);
                let s = g.mean_all(t);
                let val = g.value(s).get(0, 0);
                if grads {
                    g.backward(s).unwrap();
                    (val, vec![g.grad(a).clone(), g.grad(b).clone()])
                } else {
                    (val, Vec::new())
                }
            };

            let theta = vec![a0, b0];
            let (_, analytic) = eval(&theta, true);
            let err = finite_diff_check(
                |t| Ok(eval(t, false).0),
                &theta,
                &analytic,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "op kind {kind}: finite diff mismatch {err}");
            checked += 1;
        }
        assert!(checked >= 20);
    }

    #[test]
    fn finite_difference_matmul_and_reductions() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for trial in 0..8 {
            let (m, k, n) = (2 + trial % 2, 3, 2 + trial % 3);
            let a0 = randn(m, k, &mut rng);
            let b0 = randn(k, n, &mut rng);
            let eval = |theta: &[Array2], grads: bool| {
                let mut g = Graph::new();
                let a = g.leaf(theta[0].clone());
                let b = g.leaf(theta[1].clone());
                let p = g.matmul(a, b).unwrap();
                let brd = {
                    let mu = g.col_means(p);
                    let va = g.col_vars(p);
                    let va_eps = g.shift(va, 0.9);
                    let ln_v = g.ln(va_eps).unwrap();
                    let stacked = g.concat_cols(mu, ln_v).unwrap();
                    let wide = g.broadcast_rows(stacked, m).unwrap();
                    let rs = g.row_sums(wide);
                    g.mean_all(rs)
                };
                let val = g.value(brd).get(0, 0);
                if grads {
                    g.backward(brd).unwrap();
                    (val, vec![g.grad(a).clone(), g.grad(b).clone()])
                } else {
                    (val, Vec::new())
                }
            };
            let theta = vec![a0, b0];
            let (_, analytic) = eval(&theta, true);
            let err = finite_diff_check(|t| Ok(eval(t, false).0), &theta, &analytic, 1e-5).unwrap();
            assert!(err < 1e-6, "trial {trial}: {err}");
        }
    }

    #[test]
    fn grad_of_sum_matmul_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let a0 = randn(3, 3, &mut rng);
        let b0 = randn(3, 3, &mut rng);
        let eval = |theta: &[Array2], grads: bool| {
            let mut g = Graph::new();
            let a = g.leaf(theta[0].clone());
            let b = g.leaf(theta[1].clone());
            let p = g.matmul(a, b).unwrap();
            let s = g.sum_all(p);
            let v = g.value(s).get(0, 0);
            if grads {
                g.backward(s).unwrap();
                (v, vec![g.grad(a).clone(), g.grad(b).clone()])
            } else {
                (v, Vec::new())
            }
        };
        let theta = vec![a0, b0];
        let (_, analytic) = eval(&theta, true);
        let err = finite_diff_check(|t| Ok(eval(t, false).0), &theta, &analytic, 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn finite_diff_check_self_tests() {
        // f = theta^2 at theta = 3: analytic 6.
        let theta = vec![Array2::filled(1, 1, 3.0)];
        let analytic = vec![Array2::filled(1, 1, 6.0)];
        let err = finite_diff_check(
            |t| Ok(t[0].get(0, 0) * t[0].get(0, 0)),
            &theta,
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-8, "{err}");

        // f = sum(exp(theta)) on a random 2x2.
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let t0 = randn(2, 2, &mut rng);
        let analytic = vec![t0.map(f64::exp)];
        let err = finite_diff_check(
            |t| Ok(t[0].data().iter().map(|&x| x.exp()).sum()),
            &[t0],
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err}");

        // A deliberately wrong gradient (off by a factor of 2) is detected:
        // reported 3 vs central 6 gives relative error 0.5.
        let theta = vec![Array2::filled(1, 1, 3.0)];
        let wrong = vec![Array2::filled(1, 1, 3.0)];
        let err = finite_diff_check(
            |t| Ok(t[0].get(0, 0) * t[0].get(0, 0)),
            &theta,
            &wrong,
            1e-5,
        )
        .unwrap();
        assert!((err - 0.5).abs() < 1e-6, "detector sanity: {err}");
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        // ln at the negative probe point is NaN.
        let theta = vec![Array2::filled(1, 1, 0.0)];
        let analytic = vec![Array2::zeros(1, 1)];
        let r = finite_diff_check(|t| Ok(t[0].get(0, 0).ln()), &theta, &analytic, 1e-5);
        assert!(matches!(r, Err(Error::NonFinite { .. })));
    }
}
