//! Combining coupling layer.
//!
//! The normalizing direction splits the input into even/odd halves and
//! transforms each half with scale/shift nets of the other (conditions are
//! concatenated onto every net input):
//!
//! ```text
//! x1, x2 = split_even_odd(x)
//! z1 = exp(s1(x1, c)) ⊙ x2 + t1(x1, c)
//! z2 = exp(s2(z1, c)) ⊙ x1 + t2(z1, c)
//! z  = interleave(z1, z2)
//! ```
//!
//! All `s` outputs pass through the soft clamp. Both stages are triangular,
//! so the per-row log-determinant is just `Σ s1ᶜ + Σ s2ᶜ` over the produced
//! elements. The generating direction is the exact algebraic inverse.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::autodiff::{interleave_maps, Graph, NodeId};
use crate::error::{Error, Result};
use crate::flow::clamp::{soft_clamp, soft_clamp_graph, ClampConfig};
use crate::flow::net::{net_forward_graph, net_leaves, CouplingNet, NetNodes};

/// The four nets of one coupling layer: `s1, t1` act on the even half,
/// `s2, t2` on the intermediate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingPair {
    pub s1: CouplingNet,
    pub t1: CouplingNet,
    pub s2: CouplingNet,
    pub t2: CouplingNet,
}

impl CouplingPair {
    /// `t_block` is the feature width seen by this layer, `b` the condition
    /// width appended to every net input.
    pub fn init(t_block: usize, b: usize, hidden: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if t_block < 2 {
            return Err(Error::dim(
                "coupling init",
                format!("block width {t_block} < 2 cannot be split"),
            ));
        }
        let n1 = t_block.div_ceil(2); // even-indexed half
        let n2 = t_block / 2; // odd-indexed half
        Ok(CouplingPair {
            s1: CouplingNet::init(n1 + b, hidden, n2, rng),
            t1: CouplingNet::init(n1 + b, hidden, n2, rng),
            s2: CouplingNet::init(n2 + b, hidden, n1, rng),
            t2: CouplingNet::init(n2 + b, hidden, n1, rng),
        })
    }

    pub fn block_width(&self) -> usize {
        self.s1.input_width() - self.condition_width_from_s2() + self.s1.output_width()
    }

    fn condition_width_from_s2(&self) -> usize {
        // s1 input = n1 + b and s1 output = n2; s2 input = n2 + b.
        self.s2.input_width() - self.s1.output_width()
    }

    pub fn condition_width(&self) -> usize {
        self.condition_width_from_s2()
    }
}

pub struct CouplingNodes {
    pub s1: NetNodes,
    pub t1: NetNodes,
    pub s2: NetNodes,
    pub t2: NetNodes,
}

pub fn coupling_leaves(g: &mut Graph, pair: &CouplingPair) -> CouplingNodes {
    CouplingNodes {
        s1: net_leaves(g, &pair.s1),
        t1: net_leaves(g, &pair.t1),
        s2: net_leaves(g, &pair.s2),
        t2: net_leaves(g, &pair.t2),
    }
}

fn with_condition(g: &mut Graph, h: NodeId, c: Option<NodeId>) -> Result<NodeId> {
    match c {
        Some(c) => g.concat_cols(h, c),
        None => Ok(h),
    }
}

/// Record the normalizing direction; returns `(z, logdet)` with the per-row
/// log-determinant as a batch×1 node.
pub fn coupling_normalize_graph(
    g: &mut Graph,
    x: NodeId,
    c: Option<NodeId>,
    nodes: &CouplingNodes,
    clamp: &ClampConfig,
) -> Result<(NodeId, NodeId)> {
    let n = g.value(x).cols();
    if n < 2 {
        return Err(Error::dim("coupling_normalize", format!("needs >= 2 columns, got {n}")));
    }
    if let Some(c) = c {
        if g.value(c).rows() != g.value(x).rows() {
            return Err(Error::dim(
                "coupling_normalize",
                format!(
                    "condition rows {} != input rows {}",
                    g.value(c).rows(),
                    g.value(x).rows()
                ),
            ));
        }
    }
    let alpha = clamp.alpha();
    let (x1, x2) = g.split_even_odd(x)?;

    let h1 = with_condition(g, x1, c)?;
    let s1_raw = net_forward_graph(g, &nodes.s1, h1)?;
    let s1 = soft_clamp_graph(g, s1_raw, alpha);
    let t1 = net_forward_graph(g, &nodes.t1, h1)?;
    let z1 = {
        let e = g.exp(s1);
        let scaled = g.mul(e, x2)?;
        g.add(scaled, t1)?
    };

    let h2 = with_condition(g, z1, c)?;
    let s2_raw = net_forward_graph(g, &nodes.s2, h2)?;
    let s2 = soft_clamp_graph(g, s2_raw, alpha);
    let t2 = net_forward_graph(g, &nodes.t2, h2)?;
    let z2 = {
        let e = g.exp(s2);
        let scaled = g.mul(e, x1)?;
        g.add(scaled, t2)?
    };

    let z = g.interleave(z1, z2)?;
    if !g.value(z).all_finite() {
        return Err(Error::NonFinite { context: "coupling layer output".to_string() });
    }
    let logdet = {
        let a = g.row_sums(s1);
        let b = g.row_sums(s2);
        g.add(a, b)?
    };
    Ok((z, logdet))
}

/// Normalizing direction on plain values.
pub fn coupling_normalize(
    x: &Array2,
    c: Option<&Array2>,
    pair: &CouplingPair,
    clamp: &ClampConfig,
) -> Result<(Array2, Vec<f64>)> {
    let mut g = Graph::new();
    let xn = g.leaf(x.clone());
    let cn = c.map(|c| g.leaf(c.clone()));
    let nodes = coupling_leaves(&mut g, pair);
    let (z, ld) = coupling_normalize_graph(&mut g, xn, cn, &nodes, clamp)?;
    let logdet = (0..x.rows()).map(|i| g.value(ld).get(i, 0)).collect();
    Ok((g.value(z).clone(), logdet))
}

/// Generating direction: the exact inverse of [`coupling_normalize`].
pub fn coupling_generate(
    z: &Array2,
    c: Option<&Array2>,
    pair: &CouplingPair,
    clamp: &ClampConfig,
) -> Result<Array2> {
    let n = z.cols();
    if n < 2 {
        return Err(Error::dim("coupling_generate", format!("needs >= 2 columns, got {n}")));
    }
    if let Some(c) = c {
        if c.rows() != z.rows() {
            return Err(Error::dim(
                "coupling_generate",
                format!("condition rows {} != input rows {}", c.rows(), z.rows()),
            ));
        }
    }
    let alpha = clamp.alpha();
    let n1 = n.div_ceil(2);
    let n2 = n / 2;
    // z was assembled as interleave(z1 [n2 wide], z2 [n1 wide]).
    let (iz1, iz2) = interleave_maps(n2, n1)?;
    let z1 = gather_cols(z, &iz1);
    let z2 = gather_cols(z, &iz2);

    let h = concat_opt(&z1, c)?;
    let s2 = soft_clamp(&pair.s2.forward(&h)?, alpha)?;
    let t2 = pair.t2.forward(&h)?;
    let x1 = z2
        .zip_map(&t2, |z, t| z - t)?
        .zip_map(&s2, |v, s| v * (-s).exp())?;

    let h2 = concat_opt(&x1, c)?;
    let s1 = soft_clamp(&pair.s1.forward(&h2)?, alpha)?;
    let t1 = pair.t1.forward(&h2)?;
    let x2 = z1
        .zip_map(&t1, |z, t| z - t)?
        .zip_map(&s1, |v, s| v * (-s).exp())?;

    // x1 returns to the even-indexed slots, x2 to the odd-indexed ones.
    let (ia, ib) = interleave_maps(n1, n2)?;
    let mut x = Array2::zeros(z.rows(), n);
    for r in 0..z.rows() {
        for (k, &j) in ia.iter().enumerate() {
            x.set(r, j, x1.get(r, k));
        }
        for (k, &j) in ib.iter().enumerate() {
            x.set(r, j, x2.get(r, k));
        }
    }
    if !x.all_finite() {
        return Err(Error::NonFinite { context: "coupling layer inverse".to_string() });
    }
    Ok(x)
}

fn gather_cols(a: &Array2, idx: &[usize]) -> Array2 {
    let mut out = Array2::zeros(a.rows(), idx.len());
    for r in 0..a.rows() {
        for (k, &j) in idx.iter().enumerate() {
            out.set(r, k, a.get(r, j));
        }
    }
    out
}

fn concat_opt(a: &Array2, c: Option<&Array2>) -> Result<Array2> {
    match c {
        None => Ok(a.clone()),
        Some(c) => {
            let mut out = Array2::zeros(a.rows(), a.cols() + c.cols());
            for r in 0..a.rows() {
                out.row_mut(r)[..a.cols()].copy_from_slice(a.row(r));
                out.row_mut(r)[a.cols()..].copy_from_slice(c.row(r));
            }
            Ok(out)
        }
    }
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

    fn zero_pair(t: usize, b: usize) -> CouplingPair {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut pair = CouplingPair::init(t, b, &[4], &mut rng).unwrap();
        for net in [&mut pair.s1, &mut pair.t1, &mut pair.s2, &mut pair.t2] {
            for l in &mut net.layers {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
        pair
    }

    /// Randomize every layer (including the zero-initialized output layers)
    /// so the transform is non-trivial.
    fn random_pair(t: usize, b: usize, rng: &mut impl Rng) -> CouplingPair {
        let mut pair = CouplingPair::init(t, b, &[8], rng).unwrap();
        for net in [&mut pair.s1, &mut pair.t1, &mut pair.s2, &mut pair.t2] {
            for l in &mut net.layers {
                for v in l.weight.data_mut() {
                    *v = 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
                for v in l.bias.data_mut() {
                    *v = 0.2 * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
        }
        pair
    }

    #[test]
    fn zero_nets_swap_halves_with_zero_logdet() {
        let pair = zero_pair(4, 0);
        let clamp = ClampConfig::default();
        let x = Array2::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (z, ld) = coupling_normalize(&x, None, &pair, &clamp).unwrap();
        // x1 = [1, 3], x2 = [2, 4]; z = interleave(x2, x1) = [2, 1, 4, 3].
        assert_eq!(z.data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(ld[0], 0.0);
        let back = coupling_generate(&z, None, &pair, &clamp).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn t1_bias_shifts_without_logdet() {
        // Only t1's output bias is set: z1 = x2 + b, z2 = x1, logdet = 0.
        let mut pair = zero_pair(2, 0);
        pair.t1.layers.last_mut().unwrap().bias.fill(0.7);
        let clamp = ClampConfig::default();
        let x = Array2::from_rows(&[vec![5.0, 11.0]]).unwrap();
        let (z, ld) = coupling_normalize(&x, None, &pair, &clamp).unwrap();
        // z1 = x2 + 0.7 = 11.7 (even slot), z2 = x1 = 5 (odd slot).
        assert!((z.get(0, 0) - 11.7).abs() < 1e-15);
        assert!((z.get(0, 1) - 5.0).abs() < 1e-15);
        assert_eq!(ld[0], 0.0);
    }

    #[test]
    fn roundtrip_random_nets() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let clamp = ClampConfig::default();
        for (t, b) in [(2usize, 0usize), (3, 0), (6, 2), (7, 1), (16, 3)] {
            let pair = random_pair(t, b, &mut rng);
            let x = randn(64, t, &mut rng);
            let c = (b > 0).then(|| randn(64, b, &mut rng));
            let (z, _) = coupling_normalize(&x, c.as_ref(), &pair, &clamp).unwrap();
            let back = coupling_generate(&z, c.as_ref(), &pair, &clamp).unwrap();
            assert!(back.max_abs_diff(&x) < 1e-6, "t={t} b={b}: {}", back.max_abs_diff(&x));
        }
    }

    #[test]
    fn logdet_matches_finite_difference_jacobian() {
        // Build the dense Jacobian of the map x -> z for a single row by
        // central differences; its log|det| must match the analytic value.
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let t = 6;
        let pair = random_pair(t, 2, &mut rng);
        let clamp = ClampConfig::default();
        let x = randn(1, t, &mut rng);
        let c = randn(1, 2, &mut rng);
        let (_, ld) = coupling_normalize(&x, Some(&c), &pair, &clamp).unwrap();

        let h = 1e-6;
        let mut jac = Array2::zeros(t, t);
        for j in 0..t {
            let mut xp = x.clone();
            xp.set(0, j, x.get(0, j) + h);
            let (zp, _) = coupling_normalize(&xp, Some(&c), &pair, &clamp).unwrap();
            let mut xm = x.clone();
            xm.set(0, j, x.get(0, j) - h);
            let (zm, _) = coupling_normalize(&xm, Some(&c), &pair, &clamp).unwrap();
            for i in 0..t {
                jac.set(i, j, (zp.get(0, i) - zm.get(0, i)) / (2.0 * h));
            }
        }
        let (_, _, u) = crate::array::lu_pivoted(&jac).unwrap();
        let logdet_fd: f64 = (0..t).map(|i| u.get(i, i).abs().ln()).sum();
        assert!((ld[0] - logdet_fd).abs() < 1e-4, "analytic {} vs fd {}", ld[0], logdet_fd);
    }

    #[test]
    fn clamp_keeps_scales_strictly_bounded() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let mut pair = random_pair(4, 0, &mut rng);
        // Exaggerate the scale nets.
        for l in &mut pair.s1.layers {
            for v in l.weight.data_mut() {
                *v *= 50.0;
            }
        }
        let clamp = ClampConfig::default();
        let alpha = clamp.alpha();
        let x = randn(32, 4, &mut rng).map(|v| 10.0 * v);
        let h = concat_opt(&gather_cols(&x, &[0, 2]), None).unwrap();
        let s = soft_clamp(&pair.s1.forward(&h).unwrap(), alpha).unwrap();
        assert!(s.data().iter().all(|&v| v.abs() < alpha));
        // And the full transform stays finite.
        let (z, _) = coupling_normalize(&x, None, &pair, &clamp).unwrap();
        assert!(z.all_finite());
    }

    #[test]
    fn single_column_is_dim_error() {
        let pair = zero_pair(2, 0);
        let clamp = ClampConfig::default();
        let x = Array2::zeros(3, 1);
        assert!(matches!(
            coupling_normalize(&x, None, &pair, &clamp),
            Err(Error::Dim { .. })
        ));
    }

    #[test]
    fn known_latent_recovers_exact_input() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let pair = random_pair(8, 0, &mut rng);
        let clamp = ClampConfig::default();
        let x = randn(4, 8, &mut rng);
        let (z, _) = coupling_normalize(&x, None, &pair, &clamp).unwrap();
        let back = coupling_generate(&z, None, &pair, &clamp).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-10);
    }
}
