//! The scale/translation MLPs inside coupling layers.
//!
//! Small fully connected nets with tanh hidden activations and a linear
//! output layer. The output layer is zero-initialized so a fresh coupling
//! layer starts as an exact identity-with-swap, which keeps early training
//! stable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{self, Array2};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `in × out` weight matrix.
    pub weight: Array2,
    /// `1 × out` bias row.
    pub bias: Array2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingNet {
    pub layers: Vec<DenseLayer>,
}

impl CouplingNet {
    /// Hidden weights ~ N(0, 1/fan_in), hidden biases zero, final layer all
    /// zeros.
    pub fn init(input: usize, hidden: &[usize], output: usize, rng: &mut impl Rng) -> Self {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = layers.len() == widths.len() - 2;
            let mut weight = Array2::zeros(fan_in, fan_out);
            if !last {
                let std = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in weight.data_mut() {
                    *v = std * rng.sample::<f64, _>(rand_distr::StandardNormal);
                }
            }
            layers.push(DenseLayer { weight, bias: Array2::zeros(1, fan_out) });
        }
        CouplingNet { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weight.rows())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weight.cols())
    }

    /// Plain (non-recorded) forward pass.
    pub fn forward(&self, x: &Array2) -> Result<Array2> {
        if x.cols() != self.input_width() {
            return Err(Error::dim(
                "coupling net",
                format!("input has {} columns, net expects {}", x.cols(), self.input_width()),
            ));
        }
        let mut cur = x.clone();
        let n_layers = self.layers.len();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut y = array::matmul(&cur, &layer.weight)?;
            for i in 0..y.rows() {
                let row = y.row_mut(i);
                for (v, &b) in row.iter_mut().zip(layer.bias.data()) {
                    *v += b;
                }
            }
            if li + 1 < n_layers {
                y = y.map(f64::tanh);
            }
            cur = y;
        }
        Ok(cur)
    }
}

/// Leaf ids of a net's parameters inside one graph.
pub struct NetNodes {
    pub layers: Vec<(NodeId, NodeId)>,
}

pub fn net_leaves(g: &mut Graph, net: &CouplingNet) -> NetNodes {
    let layers = net
        .layers
        .iter()
        .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
        .collect();
    NetNodes { layers }
}

/// Recorded forward pass through leaves created by [`net_leaves`].
pub fn net_forward_graph(g: &mut Graph, nodes: &NetNodes, x: NodeId) -> Result<NodeId> {
    let rows = g.value(x).rows();
    let mut cur = x;
    let n_layers = nodes.layers.len();
    for (li, &(w, b)) in nodes.layers.iter().enumerate() {
        let prod = g.matmul(cur, w)?;
        let bias_wide = g.broadcast_rows(b, rows)?;
        let mut y = g.add(prod, bias_wide)?;
        if li + 1 < n_layers {
            y = g.tanh(y);
        }
        cur = y;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn final_layer_starts_at_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let net = CouplingNet::init(3, &[8, 8], 2, &mut rng);
        let x = Array2::filled(4, 3, 1.3);
        let y = net.forward(&x).unwrap();
        assert_eq!(y, Array2::zeros(4, 2));
    }

    #[test]
    fn graph_and_value_forward_agree() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut net = CouplingNet::init(3, &[5], 2, &mut rng);
        // Give the output layer some signal.
        for v in net.layers.last_mut().unwrap().weight.data_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let mut x = Array2::zeros(6, 3);
        for v in x.data_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let value = net.forward(&x).unwrap();
        let mut g = Graph::new();
        let xn = g.leaf(x);
        let nodes = net_leaves(&mut g, &net);
        let yn = net_forward_graph(&mut g, &nodes, xn).unwrap();
        assert!(g.value(yn).max_abs_diff(&value) < 1e-14);
    }
}
