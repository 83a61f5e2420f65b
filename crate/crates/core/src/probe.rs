//! Classification heads trained on frozen representations.

use ncl_autograd::{AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::{cross_entropy, softmax_rows, Encoder, Head, HeadKind};
use crate::error::{config_err, data_err, Result};
use crate::params::ParamSet;
use crate::rng::{stream, streams};
use crate::trainer::apply_adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(config_err("probe lr, batch_size and max_epochs must be positive"));
        }
        Ok(())
    }
}

/// Frozen representations `z` (`[n, embed_dim]`) with labels and source stays.
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    pub z: Tensor,
    pub labels: Vec<u32>,
    pub stays: Vec<usize>,
}

impl Representations {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows whose source stay satisfies `keep`.
    pub fn filter_stays(&self, keep: impl Fn(usize) -> bool) -> Representations {
        let d = self.z.last_dim();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut stays = Vec::new();
        for (i, &s) in self.stays.iter().enumerate() {
            if keep(s) {
                data.extend_from_slice(self.z.row(i));
                labels.push(self.labels[i]);
                stays.push(s);
            }
        }
        let n = labels.len();
        Representations {
            z: Tensor::new(vec![n, d], data).expect("rows have the embedding width"),
            labels,
            stays,
        }
    }

    fn rows(&self, idx: &[usize]) -> (Tensor, Vec<u32>) {
        let d = self.z.last_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(self.z.row(i));
        }
        (
            Tensor::new(vec![idx.len(), d], data).expect("rows have the embedding width"),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Encodes the given samples with frozen encoder parameters.
pub fn extract_representations(
    encoder: &Encoder,
    params: &ParamSet,
    ds: &Dataset,
    samples: &[(usize, usize)],
    task: usize,
    history: usize,
) -> Result<Representations> {
    const CHUNK: usize = 256;
    let mut z = Vec::with_capacity(samples.len() * encoder.embed_dim());
    let mut labels = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(CHUNK) {
        let ws = chunk
            .iter()
            .map(|&(s, t)| ds.window(s, t, history))
            .collect::<Result<Vec<_>>>()?;
        let windows: Vec<&Tensor> = ws.iter().map(|w| &w.window).collect();
        let statics: Vec<&[f64]> = ws.iter().map(|w| w.static_features.as_slice()).collect();
        z.extend_from_slice(encoder.encode(params, &windows, &statics, CHUNK)?.data());
        labels.extend(ws.iter().map(|w| w.labels[task]));
    }
    Ok(Representations {
        z: Tensor::new(vec![samples.len(), encoder.embed_dim()], z)?,
        labels,
        stays: samples.iter().map(|&(s, _)| s).collect(),
    })
}

/// A fitted head.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub head: Head,
    pub params: ParamSet,
    pub epochs: usize,
    pub best_val_loss: f64,
}

impl Probe {
    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g, false);
        let x = g.constant(z.clone());
        let out = self.head.forward(&mut g, &ids, x)?;
        Ok(g.value(out).clone())
    }

    /// Class probabilities `[n, n_classes]`.
    pub fn predict_proba(&self, z: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits(z)?))
    }

    pub fn loss(&self, reps: &Representations) -> Result<f64> {
        let mut g = Graph::new();
        let ids = self.params.bind(&mut g, false);
        let x = g.constant(reps.z.clone());
        let out = self.head.forward(&mut g, &ids, x)?;
        let loss = cross_entropy(&mut g, out, &reps.labels)?;
        Ok(g.value(loss).item()?)
    }

    pub fn accuracy(&self, reps: &Representations) -> Result<f64> {
        let p = self.logits(&reps.z)?;
        let pred = crate::metrics::argmax_rows(p.data(), self.head.n_classes);
        let hits = pred.iter().zip(&reps.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / reps.len().max(1) as f64)
    }
}

/// Trains a head with Adam on `train`, keeping the epoch with the lowest
/// loss on `val` and stopping after `patience` epochs without improvement.
pub fn fit_probe(
    train: &Representations,
    val: &Representations,
    kind: HeadKind,
    n_classes: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<Probe> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(data_err("probe needs non-empty training and validation sets"));
    }
    let first = train.labels[0];
    if train.labels.iter().all(|&y| y == first) {
        return Err(data_err("probe training labels contain a single class"));
    }
    let head = Head {
        kind,
        in_dim: train.z.last_dim(),
        n_classes,
    };
    let mut rng = stream(seed, streams::PROBE);
    let mut params = head.init(&mut rng);
    let mut adam = AdamState::new(&params.tensors());
    let adam_cfg = AdamConfig::default();
    let mut probe = Probe {
        head: head.clone(),
        params: params.clone(),
        epochs: 0,
        best_val_loss: f64::INFINITY,
    };
    probe.best_val_loss = probe.loss(val)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let (z, y) = train.rows(idx);
            let mut g = Graph::new();
            let ids = params.bind(&mut g, true);
            let x = g.constant(z);
            let out = head.forward(&mut g, &ids, x)?;
            let loss = cross_entropy(&mut g, out, &y)?;
            let grads = g.backward(loss)?;
            apply_adam(&mut params, &ids, &grads, &mut adam, cfg.lr, &adam_cfg)?;
        }
        let candidate = Probe {
            head: head.clone(),
            params: params.clone(),
            epochs: epoch,
            best_val_loss: 0.0,
        };
        let v = candidate.loss(val)?;
        if !v.is_finite() {
            return Err(crate::NclError::Numeric(format!("probe epoch {epoch}: non-finite validation loss")));
        }
        if v < probe.best_val_loss {
            probe = Probe {
                best_val_loss: v,
                ..candidate
            };
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(probe)
}
