//! Versioned JSON checkpoints.
//!
//! The document carries the structural fields (K, T, B, α, hidden widths),
//! the mode flag, optional scaler metadata, and every block's named
//! parameter arrays with shapes plus running statistics. Parameter values
//! round-trip bit-equal (JSON floats are printed with shortest-exact
//! encoding).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::flow::clamp::ClampConfig;
use crate::flow::model::{FlowBlock, FlowModel};
use crate::flow::Mode;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    k: usize,
    t: usize,
    b: usize,
    alpha: f64,
    hidden: Vec<usize>,
    mode: Mode,
    scaler: Option<Scaler>,
    blocks: Vec<FlowBlock>,
}

/// Serialize a model to `path` as versioned JSON.
pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<()> {
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        k: model.k(),
        t: model.t(),
        b: model.b(),
        alpha: model.clamp().alpha(),
        hidden: model.hidden().to_vec(),
        mode: model.mode(),
        scaler: model.scaler.clone(),
        blocks: model.blocks().to_vec(),
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Schema(format!("checkpoint serialization failed: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load and validate a checkpoint. Fails on version mismatch, schema
/// violations (including missing fields, which are named in the error), and
/// structurally inconsistent parameter shapes. No partial model is returned.
pub fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let text = std::fs::read_to_string(path)?;
    let doc: CheckpointDoc = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("invalid checkpoint: {e}")))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint format_version {} (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    if doc.blocks.len() != doc.k {
        return Err(Error::Schema(format!(
            "checkpoint declares k = {} but carries {} blocks",
            doc.k,
            doc.blocks.len()
        )));
    }
    for (i, block) in doc.blocks.iter().enumerate() {
        if block.norm.feature_len() != doc.t {
            return Err(Error::Schema(format!(
                "block {i} normalization is over {} features, expected t = {}",
                block.norm.feature_len(),
                doc.t
            )));
        }
        if block.linear.t() != doc.t {
            return Err(Error::Schema(format!(
                "block {i} linear factor is {}x{}, expected t = {}",
                block.linear.t(),
                block.linear.t(),
                doc.t
            )));
        }
        let n1 = doc.t.div_ceil(2);
        let n2 = doc.t / 2;
        if block.coupling.s1.input_width() != n1 + doc.b
            || block.coupling.s1.output_width() != n2
            || block.coupling.s2.input_width() != n2 + doc.b
            || block.coupling.s2.output_width() != n1
        {
            return Err(Error::Schema(format!(
                "block {i} coupling net widths are inconsistent with t = {} and b = {}",
                doc.t, doc.b
            )));
        }
        if block.norm.eps <= 0.0 {
            return Err(Error::Schema(format!("block {i} has non-positive eps")));
        }
    }
    if let Some(scaler) = &doc.scaler {
        if scaler.profile_len() != doc.t {
            return Err(Error::Schema(format!(
                "scaler covers {} profile steps, checkpoint t = {}",
                scaler.profile_len(),
                doc.t
            )));
        }
    }
    let clamp = ClampConfig::unchecked(doc.alpha)?;
    Ok(FlowModel::from_parts(
        doc.blocks, doc.t, doc.b, clamp, doc.hidden, doc.mode, doc.scaler,
    ))
}
