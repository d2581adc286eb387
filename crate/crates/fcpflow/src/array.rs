//! Dense row-major `f64` matrices plus the small amount of plain linear
//! algebra the flow layers need (fused matmuls, pivoted LU, random
//! orthogonal matrices, Cholesky).
//!
//! Batches are stored rows = samples, cols = features throughout the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows × cols` matrix of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray2")]
pub struct Array2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawArray2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawArray2> for Array2 {
    type Error = String;

    fn try_from(raw: RawArray2) -> std::result::Result<Self, String> {
        if raw.data.len() != raw.rows * raw.cols {
            return Err(format!(
                "array data length {} does not match {}x{}",
                raw.data.len(),
                raw.rows,
                raw.cols
            ));
        }
        Ok(Array2 { rows: raw.rows, cols: raw.cols, data: raw.data })
    }
}

impl Array2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Array2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Array2 { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "from_vec",
                format!("data length {} != {rows}x{cols}", data.len()),
            ));
        }
        Ok(Array2 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} entries, expected {n_cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Array2 { rows: n_rows, cols: n_cols, data })
    }

    /// A `1 × n` row vector.
    pub fn row_vector(values: Vec<f64>) -> Self {
        Array2 { rows: 1, cols: values.len(), data: values }
    }

    /// The `n × n` identity.
    pub fn eye(n: usize) -> Self {
        let mut a = Array2::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array2 {
        Array2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Array2, f: impl Fn(f64, f64) -> f64) -> Result<Array2> {
        if self.shape() != other.shape() {
            return Err(Error::dim(
                "zip_map",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Array2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// Accumulate `scale * other` into `self` (shapes must match).
    pub fn add_scaled(&mut self, other: &Array2, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Per-column means (length `cols`).
    pub fn col_means(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    /// Per-column population variances (length `cols`).
    pub fn col_vars(&self) -> Vec<f64> {
        let means = self.col_means();
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for ((o, &m), &v) in out.iter_mut().zip(&means).zip(self.row(i)) {
                let d = v - m;
                *o += d * d;
            }
        }
        let inv = 1.0 / self.rows as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    /// Largest absolute difference between two same-shaped arrays.
    pub fn max_abs_diff(&self, other: &Array2) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Select rows by index into a new array.
    pub fn select_rows(&self, indices: &[usize]) -> Array2 {
        let mut out = Array2::zeros(indices.len(), self.cols);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }
}

/// `a · b` for `m×k` and `k×n`.
pub fn matmul(a: &Array2, b: &Array2) -> Result<Array2> {
    if a.cols != b.rows {
        return Err(Error::dim(
            "matmul",
            format!("inner dimensions {}x{} . {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = Array2::zeros(m, n);
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (p, &aip) in a_row.iter().enumerate().take(k) {
            if aip != 0.0 {
                let b_row = b.row(p);
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += aip * bv;
                }
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` for `m×k` and `n×k`.
pub fn matmul_nt(a: &Array2, b: &Array2) -> Array2 {
    debug_assert_eq!(a.cols, b.cols);
    let (m, n) = (a.rows, b.rows);
    let mut out = Array2::zeros(m, n);
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = out.row_mut(i);
        for (j, o) in out_row.iter_mut().enumerate().take(n) {
            *o = a_row.iter().zip(b.row(j)).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b` for `k×m` and `k×n`.
pub fn matmul_tn(a: &Array2, b: &Array2) -> Array2 {
    debug_assert_eq!(a.rows, b.rows);
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = Array2::zeros(m, n);
    for p in 0..k {
        let a_row = a.row(p);
        let b_row = b.row(p);
        for (i, &api) in a_row.iter().enumerate().take(m) {
            if api != 0.0 {
                let out_row = out.row_mut(i);
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += api * bv;
                }
            }
        }
    }
    out
}

/// Pivoted LU decomposition: returns `(perm, l, u)` with `a[perm[i], :] =
/// (l·u)[i, :]`, `l` unit lower triangular, `u` upper triangular.
pub fn lu_pivoted(a: &Array2) -> Result<(Vec<usize>, Array2, Array2)> {
    if a.rows != a.cols {
        return Err(Error::dim("lu_pivoted", format!("matrix is {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut work = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        // Partial pivot: largest magnitude on or below the diagonal.
        let mut pivot = col;
        let mut best = work.get(col, col).abs();
        for r in (col + 1)..n {
            let v = work.get(r, col).abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best == 0.0 {
            return Err(Error::domain("lu_pivoted", format!("singular at column {col}")));
        }
        if pivot != col {
            perm.swap(col, pivot);
            for j in 0..n {
                let a = work.get(col, j);
                let b = work.get(pivot, j);
                work.set(col, j, b);
                work.set(pivot, j, a);
            }
        }
        let d = work.get(col, col);
        for r in (col + 1)..n {
            let factor = work.get(r, col) / d;
            work.set(r, col, factor);
            for j in (col + 1)..n {
                let v = work.get(r, j) - factor * work.get(col, j);
                work.set(r, j, v);
            }
        }
    }
    let mut l = Array2::eye(n);
    let mut u = Array2::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if j < i {
                l.set(i, j, work.get(i, j));
            } else {
                u.set(i, j, work.get(i, j));
            }
        }
    }
    Ok((perm, l, u))
}

/// Random orthogonal matrix via Householder QR of a Gaussian matrix, with
/// column signs fixed so the distribution is Haar-uniform.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Array2 {
    let mut g = Array2::zeros(n, n);
    for v in g.data_mut() {
        *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
    }
    let (q, r) = householder_qr(&g);
    // Multiply column j of Q by sign(R_jj).
    let mut q = q;
    for j in 0..n {
        if r.get(j, j) < 0.0 {
            for i in 0..n {
                let v = q.get(i, j);
                q.set(i, j, -v);
            }
        }
    }
    q
}

fn householder_qr(a: &Array2) -> (Array2, Array2) {
    let n = a.rows;
    let mut r = a.clone();
    let mut q = Array2::eye(n);
    for k in 0..n {
        // Householder vector for column k below the diagonal.
        let mut norm = 0.0;
        for i in k..n {
            norm += r.get(i, k) * r.get(i, k);
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if r.get(k, k) >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n];
        for i in k..n {
            v[i] = r.get(i, k);
        }
        v[k] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // r <- (I - 2vv'/v'v) r ; q <- q (I - 2vv'/v'v)
        for j in 0..n {
            let dot: f64 = (k..n).map(|i| v[i] * r.get(i, j)).sum();
            let s = 2.0 * dot / vnorm2;
            for i in k..n {
                let val = r.get(i, j) - s * v[i];
                r.set(i, j, val);
            }
        }
        for i in 0..n {
            let dot: f64 = (k..n).map(|j| q.get(i, j) * v[j]).sum();
            let s = 2.0 * dot / vnorm2;
            for j in k..n {
                let val = q.get(i, j) - s * v[j];
                q.set(i, j, val);
            }
        }
    }
    (q, r)
}

/// Cholesky factor `l` (lower triangular) of a symmetric positive-definite
/// matrix: `a = l·lᵀ`.
pub fn cholesky(a: &Array2) -> Result<Array2> {
    if a.rows != a.cols {
        return Err(Error::dim("cholesky", format!("matrix is {}x{}", a.rows, a.cols)));
    }
    let n = a.rows;
    let mut l = Array2::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::domain("cholesky", "matrix not positive definite".to_string()));
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}
