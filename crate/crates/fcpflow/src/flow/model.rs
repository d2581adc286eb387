//! Block composition, exact log-likelihood, and sampling.
//!
//! A model is a stack of K blocks, each `normalization → linear → coupling`
//! in the normalizing (data→latent) direction. The generating direction runs
//! the blocks and layers in reverse. The per-row log-likelihood under the
//! standard-Gaussian base is
//!
//! ```text
//! log p(x|c) = Σ_i [ -½ z0_i² - ½ log 2π ] + Σ_layers logdet
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array2;
use crate::autodiff::{Graph, NodeId};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::flow::clamp::ClampConfig;
use crate::flow::coupling::{
    coupling_generate, coupling_leaves, coupling_normalize_graph, CouplingNodes, CouplingPair,
};
use crate::flow::linear::{
    linear_generate, linear_leaves, linear_normalize_graph, LinearFactor, LinearNodes,
};
use crate::flow::norm::{norm_generate, norm_normalize_graph, NormState};
use crate::flow::Mode;

const LN_2PI: f64 = 1.8378770664093453;

/// One invertible block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowBlock {
    pub norm: NormState,
    pub linear: LinearFactor,
    pub coupling: CouplingPair,
}

/// Construction parameters for [`FlowModel::new`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of blocks K.
    pub blocks: usize,
    /// Profile length T.
    pub profile_len: usize,
    /// Condition length B (0 for unconditional).
    pub condition_len: usize,
    /// Hidden widths of every coupling net.
    pub hidden: Vec<usize>,
    /// Soft-clamp bound α.
    pub alpha: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            blocks: 3,
            profile_len: 24,
            condition_len: 0,
            hidden: vec![64, 64],
            alpha: ClampConfig::DEFAULT_ALPHA,
            seed: 0,
        }
    }
}

/// A parameterized FCPFlow model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowModel {
    blocks: Vec<FlowBlock>,
    t: usize,
    b: usize,
    clamp: ClampConfig,
    hidden: Vec<usize>,
    mode: Mode,
    /// Scaling metadata carried along so checkpoints are self-contained.
    pub scaler: Option<Scaler>,
}

impl FlowModel {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let clamp = ClampConfig::new(config.alpha)?;
        Self::with_clamp(config, clamp)
    }

    /// Construct with an explicitly built [`ClampConfig`] (allows opting out
    /// of the default α range validation).
    pub fn with_clamp(config: &ModelConfig, clamp: ClampConfig) -> Result<Self> {
        if config.blocks == 0 {
            return Err(Error::Config("model needs at least one block".to_string()));
        }
        if config.profile_len < 2 {
            return Err(Error::Config(format!(
                "profile length {} too short to split",
                config.profile_len
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut blocks = Vec::with_capacity(config.blocks);
        for _ in 0..config.blocks {
            blocks.push(FlowBlock {
                norm: NormState::new(config.profile_len),
                linear: LinearFactor::random_orthogonal_init(config.profile_len, &mut rng)?,
                coupling: CouplingPair::init(
                    config.profile_len,
                    config.condition_len,
                    &config.hidden,
                    &mut rng,
                )?,
            });
        }
        Ok(FlowModel {
            blocks,
            t: config.profile_len,
            b: config.condition_len,
            clamp,
            hidden: config.hidden.clone(),
            mode: Mode::Training,
            scaler: None,
        })
    }

    pub(crate) fn from_parts(
        blocks: Vec<FlowBlock>,
        t: usize,
        b: usize,
        clamp: ClampConfig,
        hidden: Vec<usize>,
        mode: Mode,
        scaler: Option<Scaler>,
    ) -> Self {
        FlowModel { blocks, t, b, clamp, hidden, mode, scaler }
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn clamp(&self) -> &ClampConfig {
        &self.clamp
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn blocks(&self) -> &[FlowBlock] {
        &self.blocks
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut [FlowBlock] {
        &mut self.blocks
    }

    /// Trainable parameters in canonical order: per block the linear factor
    /// (lower, upper, log_diag) then the four coupling nets' layers (weight,
    /// bias each). Normalization statistics are not parameters.
    pub fn param_arrays(&self) -> Vec<&Array2> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(&block.linear.lower);
            out.push(&block.linear.upper);
            out.push(&block.linear.log_diag);
            for net in [
                &block.coupling.s1,
                &block.coupling.t1,
                &block.coupling.s2,
                &block.coupling.t2,
            ] {
                for layer in &net.layers {
                    out.push(&layer.weight);
                    out.push(&layer.bias);
                }
            }
        }
        out
    }

    pub fn param_arrays_mut(&mut self) -> Vec<&mut Array2> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.push(&mut block.linear.lower);
            out.push(&mut block.linear.upper);
            out.push(&mut block.linear.log_diag);
            for net in [
                &mut block.coupling.s1,
                &mut block.coupling.t1,
                &mut block.coupling.s2,
                &mut block.coupling.t2,
            ] {
                for layer in &mut net.layers {
                    out.push(&mut layer.weight);
                    out.push(&mut layer.bias);
                }
            }
        }
        out
    }

    pub fn set_params(&mut self, values: &[Array2]) -> Result<()> {
        let mut slots = self.param_arrays_mut();
        if slots.len() != values.len() {
            return Err(Error::Contract(format!(
                "model has {} parameter arrays, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, value) in slots.iter_mut().zip(values) {
            if slot.shape() != value.shape() {
                return Err(Error::Contract(format!(
                    "parameter shape {:?} does not match {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            **slot = value.clone();
        }
        Ok(())
    }

    fn check_inputs(&self, x: &Array2, c: &Array2) -> Result<()> {
        if x.cols() != self.t {
            return Err(Error::dim(
                "model",
                format!("profiles have {} columns, model expects T = {}", x.cols(), self.t),
            ));
        }
        if c.cols() != self.b {
            return Err(Error::dim(
                "model",
                format!("conditions have {} columns, model expects B = {}", c.cols(), self.b),
            ));
        }
        if self.b > 0 && c.rows() != x.rows() {
            return Err(Error::dim(
                "model",
                format!("condition rows {} != profile rows {}", c.rows(), x.rows()),
            ));
        }
        Ok(())
    }

    /// Normalizing pass on plain values under the current mode. Running
    /// statistics are not modified (training steps absorb them explicitly).
    pub fn normalize(&self, x: &Array2, c: &Array2) -> Result<(Array2, Vec<f64>)> {
        self.check_inputs(x, c)?;
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let cn = (self.b > 0).then(|| g.leaf(c.clone()));
        let nodes = model_leaves(&mut g, self);
        let fwd = model_forward_graph(&mut g, self, xn, cn, &nodes, self.mode)?;
        let z0 = g.value(fwd.z0).clone();
        let logdet = (0..x.rows()).map(|i| g.value(fwd.total_logdet).get(i, 0)).collect();
        Ok((z0, logdet))
    }

    /// Mean NLL over a batch and its gradient with respect to every
    /// parameter array (canonical order). Evaluated under the given mode;
    /// no state is mutated.
    pub fn nll_gradient(&self, x: &Array2, c: &Array2, mode: Mode) -> Result<(f64, Vec<Array2>)> {
        self.check_inputs(x, c)?;
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let cn = (self.b > 0).then(|| g.leaf(c.clone()));
        let nodes = model_leaves(&mut g, self);
        let fwd = model_forward_graph(&mut g, self, xn, cn, &nodes, mode)?;
        let loss = {
            let m = g.mean_all(fwd.log_likelihood);
            g.scale(m, -1.0)
        };
        let value = g.value(loss).get(0, 0);
        g.backward(loss)?;
        Ok((value, collect_param_grads(&g, &nodes)))
    }

    /// Per-row log-likelihood in nats under the current mode.
    pub fn log_likelihood(&self, x: &Array2, c: &Array2) -> Result<Vec<f64>> {
        self.check_inputs(x, c)?;
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let cn = (self.b > 0).then(|| g.leaf(c.clone()));
        let nodes = model_leaves(&mut g, self);
        let fwd = model_forward_graph(&mut g, self, xn, cn, &nodes, self.mode)?;
        Ok((0..x.rows()).map(|i| g.value(fwd.log_likelihood).get(i, 0)).collect())
    }

    /// Generating pass latent → data. Requires inference mode (batch
    /// statistics are undefined at sampling time).
    pub fn generate(&self, z0: &Array2, c: &Array2) -> Result<Array2> {
        if self.mode != Mode::Inference {
            return Err(Error::State(
                "generate requires inference mode; freeze running stats first".to_string(),
            ));
        }
        self.check_inputs(z0, c)?;
        let c_opt = (self.b > 0).then_some(c);
        let mut cur = z0.clone();
        for (bi, block) in self.blocks.iter().enumerate().rev() {
            cur = coupling_generate(&cur, c_opt, &block.coupling, &self.clamp)
                .map_err(|e| in_block(bi, e))?;
            cur = linear_generate(&cur, &block.linear).map_err(|e| in_block(bi, e))?;
            cur = norm_generate(&cur, &block.norm).map_err(|e| in_block(bi, e))?;
        }
        Ok(cur)
    }

    /// Draw `c.rows()` profiles by sampling `z0 ~ N(0, I_T)` and generating.
    /// Deterministic for a given seed. For an unconditional model pass a
    /// `rows × 0` condition array.
    pub fn sample(&self, c: &Array2, seed: u64) -> Result<Array2> {
        let rows = c.rows();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut z0 = Array2::zeros(rows, self.t);
        for v in z0.data_mut() {
            *v = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        self.generate(&z0, c)
    }

    /// Explicitly initialize every block's running statistics from one
    /// training-mode pass over `x` (run stats are set, not blended).
    pub fn initialize_stats(&mut self, x: &Array2, c: &Array2) -> Result<()> {
        self.check_inputs(x, c)?;
        let mut g = Graph::new();
        let xn = g.leaf(x.clone());
        let cn = (self.b > 0).then(|| g.leaf(c.clone()));
        let nodes = model_leaves(&mut g, self);
        let fwd = model_forward_graph(&mut g, self, xn, cn, &nodes, Mode::Training)?;
        for (block, stats) in self.blocks.iter_mut().zip(&fwd.block_stats) {
            let (mean, std) = stats.as_ref().expect("training pass returns stats");
            block.norm.set_stats(mean, std)?;
        }
        Ok(())
    }

    /// Momentum-update every block's running statistics from a training
    /// forward's observed batch statistics.
    pub(crate) fn absorb_stats(&mut self, stats: &[Option<(Array2, Array2)>]) -> Result<()> {
        for (block, s) in self.blocks.iter_mut().zip(stats) {
            if let Some((mean, std)) = s {
                block.norm.absorb(mean, std)?;
            }
        }
        Ok(())
    }
}

/// Prefix layer errors with the failing block index.
fn in_block(block: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { context } => {
            Error::NonFinite { context: format!("block {block}: {context}") }
        }
        Error::State(m) => Error::State(format!("block {block}: {m}")),
        Error::Contract(m) => Error::Contract(format!("block {block}: {m}")),
        Error::Dim { op, detail } => Error::Dim { op, detail: format!("block {block}: {detail}") },
        Error::Domain { op, detail } => {
            Error::Domain { op, detail: format!("block {block}: {detail}") }
        }
        other => other,
    }
}

pub(crate) struct BlockNodes {
    pub linear: LinearNodes,
    pub coupling: CouplingNodes,
}

/// Parameter leaves for every block, in canonical order.
pub(crate) struct ModelNodes {
    pub blocks: Vec<BlockNodes>,
}

pub(crate) fn model_leaves(g: &mut Graph, model: &FlowModel) -> ModelNodes {
    let blocks = model
        .blocks
        .iter()
        .map(|block| BlockNodes {
            linear: linear_leaves(g, &block.linear),
            coupling: coupling_leaves(g, &block.coupling),
        })
        .collect();
    ModelNodes { blocks }
}

/// Gradients of every parameter leaf in canonical order (matches
/// [`FlowModel::param_arrays`]).
pub(crate) fn collect_param_grads(g: &Graph, nodes: &ModelNodes) -> Vec<Array2> {
    let mut out = Vec::new();
    for block in &nodes.blocks {
        out.push(g.grad(block.linear.lower).clone());
        out.push(g.grad(block.linear.upper).clone());
        out.push(g.grad(block.linear.log_diag).clone());
        for net in [
            &block.coupling.s1,
            &block.coupling.t1,
            &block.coupling.s2,
            &block.coupling.t2,
        ] {
            for &(w, b) in &net.layers {
                out.push(g.grad(w).clone());
                out.push(g.grad(b).clone());
            }
        }
    }
    out
}

pub(crate) struct ModelForward {
    pub z0: NodeId,
    /// Per-row total log-determinant (batch×1).
    pub total_logdet: NodeId,
    /// Per-row log-likelihood (batch×1).
    pub log_likelihood: NodeId,
    /// Per-block training-mode batch statistics.
    pub block_stats: Vec<Option<(Array2, Array2)>>,
}

/// Record the full normalizing pass and log-likelihood.
pub(crate) fn model_forward_graph(
    g: &mut Graph,
    model: &FlowModel,
    x: NodeId,
    c: Option<NodeId>,
    nodes: &ModelNodes,
    mode: Mode,
) -> Result<ModelForward> {
    let rows = g.value(x).rows();
    let mut cur = x;
    let mut total_logdet: Option<NodeId> = None;
    let mut block_stats = Vec::with_capacity(model.blocks.len());
    for (bi, (block, bnodes)) in model.blocks.iter().zip(&nodes.blocks).enumerate() {
        let nf = norm_normalize_graph(g, cur, &block.norm, mode).map_err(|e| in_block(bi, e))?;
        block_stats.push(nf.batch_stats);
        let (lz, lld) =
            linear_normalize_graph(g, nf.z, &block.linear, &bnodes.linear).map_err(|e| in_block(bi, e))?;
        let (cz, cld) =
            coupling_normalize_graph(g, lz, c, &bnodes.coupling, model.clamp())
                .map_err(|e| in_block(bi, e))?;
        let block_ld = {
            let a = g.add(nf.logdet, lld).map_err(|e| in_block(bi, e))?;
            g.add(a, cld).map_err(|e| in_block(bi, e))?
        };
        total_logdet = Some(match total_logdet {
            None => block_ld,
            Some(t) => g.add(t, block_ld).map_err(|e| in_block(bi, e))?,
        });
        cur = cz;
    }
    let total_logdet = total_logdet.expect("at least one block");
    let z0 = cur;
    let log_likelihood = {
        let sq = g.mul(z0, z0)?;
        let s = g.row_sums(sq);
        let neg_half = g.scale(s, -0.5);
        let base = g.shift(neg_half, -0.5 * LN_2PI * model.t() as f64);
        g.add(base, total_logdet)?
    };
    if !g.value(log_likelihood).all_finite() {
        return Err(Error::NonFinite { context: "log-likelihood".to_string() });
    }
    debug_assert_eq!(g.value(log_likelihood).shape(), (rows, 1));
    Ok(ModelForward { z0, total_logdet, log_likelihood, block_stats })
}
