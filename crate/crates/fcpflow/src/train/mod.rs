//! Maximum-likelihood training: minimize the mean per-sample negative
//! log-likelihood with Adam, per-epoch seeded shuffling, and abort-on-NaN
//! with the last finite parameters retained.

pub mod adam;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::ProfileDataset;
use crate::error::{Error, Result};
use crate::flow::model::{collect_param_grads, model_forward_graph, model_leaves};
use crate::flow::{ClampConfig, FlowModel, Mode, ModelConfig};

pub use adam::{clip_global_norm, optimizer_step, OptimizerState};
pub use crate::flow::checkpoint::{load_checkpoint, save_checkpoint};

/// Hyperparameters for [`fit`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global L2 gradient clip threshold.
    pub clip_norm: f64,
    pub seed: u64,
    /// Soft-clamp bound of every coupling layer.
    pub alpha: f64,
    /// Block count K.
    pub blocks: usize,
    /// Coupling-net hidden widths.
    pub hidden: Vec<usize>,
    /// Progress-reporting period in epochs (used by callers; the log always
    /// records every epoch).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            clip_norm: 10.0,
            seed: 0,
            alpha: ClampConfig::DEFAULT_ALPHA,
            blocks: 3,
            hidden: vec![64, 64],
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    fn validate(&self, dataset: &ProfileDataset) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch size must be >= 2 (normalization layer requirement)".to_string(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if dataset.n() < self.batch_size {
            return Err(Error::Contract(format!(
                "dataset has {} rows, batch size is {}",
                dataset.n(),
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// One epoch's record. `wall_ms` is the only non-deterministic field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_nll: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// The deterministic part of the log (seed + config + data fix it).
    pub fn nll_series(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_nll).collect()
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epoch,mean_nll,wall_ms")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{}", e.epoch, e.mean_nll, e.wall_ms)?;
        }
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Where and why a run aborted; the returned model holds the last finite
/// parameters.
#[derive(Debug, Clone)]
pub struct TrainAbort {
    pub epoch: usize,
    pub batch: usize,
    pub message: String,
}

pub struct TrainOutput {
    /// Trained model, left in inference mode with frozen running stats.
    pub model: FlowModel,
    pub log: TrainingLog,
    /// Set when training stopped early on a non-finite loss or gradient.
    pub aborted: Option<TrainAbort>,
}

/// Train a model on an already scaled dataset.
pub fn fit(dataset: &ProfileDataset, config: &TrainConfig) -> Result<TrainOutput> {
    fit_with_progress(dataset, config, |_| {})
}

/// [`fit`] with a per-epoch callback (progress printing and the like).
pub fn fit_with_progress(
    dataset: &ProfileDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    config.validate(dataset)?;
    let mut model = FlowModel::with_clamp(
        &ModelConfig {
            blocks: config.blocks,
            profile_len: dataset.t(),
            condition_len: dataset.b(),
            hidden: config.hidden.clone(),
            alpha: ClampConfig::DEFAULT_ALPHA,
            seed: config.seed,
        },
        ClampConfig::unchecked(config.alpha)?,
    )?;
    model.set_mode(Mode::Training);

    let mut opt = OptimizerState::new(&model.param_arrays());
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(config.seed ^ shuffle_salt());
    let mut indices: Vec<usize> = (0..dataset.n()).collect();
    let mut log = TrainingLog::default();
    let mut last_finite = model.clone();

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        indices.shuffle(&mut shuffle_rng);
        let mut nll_sum = 0.0;
        let mut n_seen = 0usize;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = dataset.profiles.select_rows(chunk);
            let c = dataset.conditions.select_rows(chunk);

            let step = (|| -> Result<f64> {
                let mut g = Graph::new();
                let xn = g.leaf(x);
                let cn = (dataset.b() > 0).then(|| g.leaf(c));
                let leaves = model_leaves(&mut g, &model);
                let fwd = model_forward_graph(&mut g, &model, xn, cn, &leaves, Mode::Training)?;
                let loss = {
                    let mean_ll = g.mean_all(fwd.log_likelihood);
                    g.scale(mean_ll, -1.0)
                };
                let loss_value = g.value(loss).get(0, 0);
                if !loss_value.is_finite() {
                    return Err(Error::NonFinite { context: "training loss".to_string() });
                }
                g.backward(loss)?;
                let grads = collect_param_grads(&g, &leaves);
                model.absorb_stats(&fwd.block_stats)?;
                let mut params = model.param_arrays_mut();
                optimizer_step(&mut params, &grads, &mut opt, config.learning_rate, config.clip_norm)?;
                Ok(loss_value)
            })();

            match step {
                Ok(loss_value) => {
                    nll_sum += loss_value * chunk.len() as f64;
                    n_seen += chunk.len();
                    last_finite = model.clone();
                }
                Err(e @ (Error::NonFinite { .. } | Error::Domain { .. })) => {
                    let mut model = last_finite;
                    model.set_mode(Mode::Inference);
                    return Ok(TrainOutput {
                        model,
                        log,
                        aborted: Some(TrainAbort {
                            epoch,
                            batch: batch_idx + 1,
                            message: e.to_string(),
                        }),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let record = EpochRecord {
            epoch,
            mean_nll: nll_sum / n_seen as f64,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    // Replace the training-time running averages with statistics estimated
    // under the final parameters: the momentum estimates trail the last
    // parameter updates, which skews sampling-time marginals.
    let recal_n = dataset.n().min(4096);
    let mut recal_rng = ChaCha12Rng::seed_from_u64(config.seed ^ recal_salt());
    let mut recal_idx: Vec<usize> = (0..dataset.n()).collect();
    recal_idx.shuffle(&mut recal_rng);
    recal_idx.truncate(recal_n);
    let x = dataset.profiles.select_rows(&recal_idx);
    let c = dataset.conditions.select_rows(&recal_idx);
    model.initialize_stats(&x, &c)?;

    model.set_mode(Mode::Inference);
    Ok(TrainOutput { model, log, aborted: None })
}

const fn shuffle_salt() -> u64 {
    0x9e3779b97f4a7c15
}

const fn recal_salt() -> u64 {
    0x2545f4914f6cdd1d
}
