//! Contrastive pretraining, the supervised baseline and auto-encoder baselines.

mod config;
mod pretrain;
mod seq2seq;
mod supervised;

use std::fmt::Write as _;
use std::path::Path;

use ncl_autograd::{adam_step, AdamConfig, AdamState, Gradients, NodeId};
use rand::Rng;

pub use config::{lr_schedule, Method, Preset, Sampling, SupervisedConfig, TrainConfig};
pub use pretrain::{pretrain, Pretrainer, PretrainOutcome};
pub use seq2seq::{forecast_target, mse_loss, train_seq2seq, Seq2SeqOutcome};
pub use supervised::{train_supervised, SupervisedOutcome};

use crate::data::Dataset;
use crate::error::{data_err, NclError, Result};
use crate::params::ParamSet;
use crate::rng::ChaCha8Rng;

/// One row of the step-metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    /// Aggregation term (contrastive methods).
    pub na: f64,
    /// Discrimination term (contrastive methods).
    pub nd: f64,
    pub contrastive_accuracy: f64,
    pub max_logit: f64,
}

pub const STEP_METRICS_HEADER: &str = "step,lr,loss,na,nd,contrastive_accuracy,max_logit";

pub fn step_metrics_csv(rows: &[StepMetrics]) -> String {
    let mut out = String::from(STEP_METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step, r.lr, r.loss, r.na, r.nd, r.contrastive_accuracy, r.max_logit
        );
    }
    out
}

pub fn write_step_metrics(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    std::fs::write(path, step_metrics_csv(rows)).map_err(|e| NclError::io(path, e))
}

/// Uniform draws over a fixed pool of `(stay, hour)` pairs.
#[derive(Debug, Clone)]
pub struct Sampler {
    pool: Vec<(usize, usize)>,
}

impl Sampler {
    pub fn new(pool: Vec<(usize, usize)>) -> Result<Self> {
        if pool.is_empty() {
            return Err(data_err("no samples to draw from"));
        }
        Ok(Self { pool })
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        self.pool[rng.random_range(0..self.pool.len())]
    }

    pub fn draw_many(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

/// Training-split sample pool of a dataset.
pub fn train_pool(ds: &Dataset) -> Vec<(usize, usize)> {
    ds.sample_pool(&ds.split_indices(crate::data::Split::Train))
}

/// Adam on every tensor of `params` from the gradients of the bound `ids`.
pub(crate) fn apply_adam(
    params: &mut ParamSet,
    ids: &[NodeId],
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let mut tensors = params.tensors();
    let g: Vec<_> = tensors
        .iter()
        .zip(ids)
        .map(|(t, &id)| grads.get_or_zeros(id, t))
        .collect();
    adam_step(&mut tensors, &g, state, lr, cfg)?;
    params.set_tensors(tensors)
}

pub(crate) fn check_finite(step: usize, what: &str, value: f64, detail: impl FnOnce() -> String) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(NclError::Numeric(format!("step {step}: non-finite {what} {value}; {}", detail())))
    }
}
