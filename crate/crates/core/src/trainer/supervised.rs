//! End-to-end supervised training of the encoder and a classification head,
//! optionally starting from a pretrained encoder.

use ncl_autograd::{AdamConfig, AdamState, Graph, Tensor};
use rand::seq::SliceRandom;

use super::{apply_adam, check_finite, train_pool, Method, Sampler, TrainConfig};
use crate::data::{Dataset, Split};
use crate::encoder::{cross_entropy, stack_rows, stack_windows, Checkpoint, Encoder, Head, HeadState};
use crate::error::{config_err, data_err, Result};
use crate::params::ParamSet;
use crate::rng::{stream, streams};

pub struct SupervisedOutcome {
    /// Parameters with the lowest validation loss.
    pub checkpoint: Checkpoint,
    /// `(step, validation loss)` at every evaluation, starting at step 0.
    pub val_history: Vec<(usize, f64)>,
    pub train_losses: Vec<f64>,
    pub best_step: usize,
    pub stopped_early: bool,
}

impl SupervisedOutcome {
    pub fn initial_val_loss(&self) -> f64 {
        self.val_history[0].1
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_history.iter().map(|v| v.1).fold(f64::INFINITY, f64::min)
    }
}

struct Batch {
    windows: Tensor,
    statics: Tensor,
    labels: Vec<u32>,
}

fn load_batch(ds: &Dataset, samples: &[(usize, usize)], task: usize, history: usize) -> Result<Batch> {
    let mut windows = Vec::with_capacity(samples.len());
    let mut statics = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for &(s, t) in samples {
        let w = ds.window(s, t, history)?;
        labels.push(w.labels[task]);
        windows.push(w.window);
        statics.push(w.static_features);
    }
    let wr: Vec<&Tensor> = windows.iter().collect();
    let sr: Vec<&[f64]> = statics.iter().map(Vec::as_slice).collect();
    Ok(Batch {
        windows: stack_windows(&wr)?,
        statics: stack_rows(&sr)?,
        labels,
    })
}

fn batch_loss(
    enc: &Encoder,
    head: &Head,
    enc_params: &ParamSet,
    head_params: &ParamSet,
    batch: &Batch,
) -> Result<f64> {
    let mut g = Graph::new();
    let e = enc_params.bind(&mut g, false);
    let h = head_params.bind(&mut g, false);
    let x = g.constant(batch.windows.clone());
    let s = g.constant(batch.statics.clone());
    let z = enc.forward(&mut g, &e, x, s)?;
    let logits = head.forward(&mut g, &h, z)?;
    let loss = cross_entropy(&mut g, logits, &batch.labels)?;
    Ok(g.value(loss).item()?)
}

/// Trains encoder and head jointly with cross-entropy, early stopping on
/// the validation loss.
pub fn train_supervised(ds: &Dataset, cfg: &TrainConfig) -> Result<SupervisedOutcome> {
    cfg.validate()?;
    if cfg.method != Method::E2e {
        return Err(config_err(format!("supervised training needs method e2e, got {}", cfg.method)));
    }
    let sc = &cfg.supervised;
    let task = ds.task_index(&sc.task)?;
    let n_classes = ds.schema.tasks[task].n_classes as usize;
    let mut init_rng = stream(cfg.seed, streams::INIT);
    let (encoder, mut enc_params) = match &sc.init_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.encoder.in_channels != ds.n_channels() || ck.encoder.static_dim != ds.static_dim() {
                return Err(data_err("pretrained encoder does not match the dataset dimensions"));
            }
            (ck.encoder, ck.encoder_params)
        }
        None => {
            let enc = Encoder::new(cfg.encoder.clone(), ds.n_channels(), ds.static_dim(), true)?;
            let p = enc.init(&mut init_rng);
            (enc, p)
        }
    };
    let head = Head {
        kind: sc.head,
        in_dim: encoder.embed_dim(),
        n_classes,
    };
    let mut head_params = head.init(&mut init_rng);

    let sampler = Sampler::new(train_pool(ds))?;
    let mut rng = stream(cfg.seed, streams::SAMPLER);
    let mut val_pool = ds.sample_pool(&ds.split_indices(Split::Val));
    if val_pool.is_empty() {
        return Err(data_err("early stopping needs a validation split"));
    }
    val_pool.shuffle(&mut stream(cfg.seed, streams::SPLIT));
    val_pool.truncate(sc.max_val_samples);
    let val = load_batch(ds, &val_pool, task, cfg.history)?;

    let adam_cfg = AdamConfig {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        ..AdamConfig::default()
    };
    let mut adam_enc = AdamState::new(&enc_params.tensors());
    let mut adam_head = AdamState::new(&head_params.tensors());

    let initial = batch_loss(&encoder, &head, &enc_params, &head_params, &val)?;
    check_finite(0, "validation loss", initial, String::new)?;
    let mut val_history = vec![(0, initial)];
    let mut best = (initial, 0, enc_params.clone(), head_params.clone());
    let mut since_best = 0;
    let mut train_losses = Vec::new();
    let mut stopped_early = false;

    for step in 0..cfg.steps {
        let batch = load_batch(ds, &sampler.draw_many(cfg.batch_size, &mut rng), task, cfg.history)?;
        let mut g = Graph::new();
        let e = enc_params.bind(&mut g, true);
        let h = head_params.bind(&mut g, true);
        let x = g.constant(batch.windows);
        let s = g.constant(batch.statics);
        let z = encoder.forward(&mut g, &e, x, s)?;
        let logits = head.forward(&mut g, &h, z)?;
        let loss = cross_entropy(&mut g, logits, &batch.labels)?;
        let value = g.value(loss).item()?;
        check_finite(step, "training loss", value, String::new)?;
        train_losses.push(value);
        let grads = g.backward(loss)?;
        apply_adam(&mut enc_params, &e, &grads, &mut adam_enc, sc.lr, &adam_cfg)?;
        apply_adam(&mut head_params, &h, &grads, &mut adam_head, sc.lr, &adam_cfg)?;

        let done = step + 1;
        if done % sc.eval_every == 0 || done == cfg.steps {
            let v = batch_loss(&encoder, &head, &enc_params, &head_params, &val)?;
            check_finite(done, "validation loss", v, String::new)?;
            val_history.push((done, v));
            if v < best.0 {
                best = (v, done, enc_params.clone(), head_params.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= sc.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (_, best_step, enc_best, head_best) = best;
    let mut ck = Checkpoint::new(Method::E2e.as_str(), cfg.history, encoder, enc_best);
    ck.step = best_step;
    ck.head = Some(HeadState {
        task: sc.task.clone(),
        head,
        params: head_best,
    });
    Ok(SupervisedOutcome {
        checkpoint: ck,
        val_history,
        train_losses,
        best_step,
        stopped_early,
    })
}
