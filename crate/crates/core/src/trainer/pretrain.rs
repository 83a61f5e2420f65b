//! Contrastive pretraining with a momentum branch and a negative queue.
//!
//! Each step: sample `N` windows, build two views of each (views `0..N` are
//! the first views, `N..2N` the second), encode the views with the momentum
//! branch and push those projections to the queue front, build the
//! neighborhood masks against the queue, compute the loss on the online
//! projections, back-propagate into the online branch, take an Adam step and
//! finally move the momentum parameters towards the online ones.

use ncl_autograd::{AdamConfig, AdamState, Graph, Tensor};
use rand::Rng;

use super::{apply_adam, check_finite, lr_schedule, train_pool, Sampler, Sampling, StepMetrics, TrainConfig};
use crate::augment::{augment, make_views};
use crate::data::Dataset;
use crate::encoder::{stack_rows, stack_windows, Checkpoint, Encoder, Projector};
use crate::error::{config_err, Result};
use crate::loss::{contrastive_accuracy, ncl_graph, LossSpec};
use crate::momentum::{warmup_fill, MomentumPair, NegativeQueue};
use crate::neighborhood::{build_masks, SampleMeta};
use crate::params::ParamSet;
use crate::rng::{stream, streams, ChaCha8Rng};

/// Views of one batch ready for the encoders.
struct ViewBatch {
    windows: Tensor,
    statics: Tensor,
    metas: Vec<SampleMeta>,
}

pub struct Pretrainer<'a> {
    ds: &'a Dataset,
    cfg: TrainConfig,
    spec: LossSpec,
    label_task: Option<usize>,
    pub encoder: Encoder,
    pub projector: Projector,
    /// Online and momentum encoder parameters.
    pub enc: MomentumPair,
    /// Online and momentum projector parameters.
    pub proj: MomentumPair,
    adam_enc: AdamState,
    adam_proj: AdamState,
    adam_cfg: AdamConfig,
    pub queue: NegativeQueue,
    sampler: Sampler,
    sampler_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    step: usize,
    next_uid: u64,
    /// Set when the training pool is smaller than the queue, so warm-up
    /// necessarily repeated samples.
    pub warmup_repeated: bool,
}

impl<'a> Pretrainer<'a> {
    /// Initializes both branches from `cfg.seed` and fills the queue.
    pub fn new(ds: &'a Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if !cfg.method.is_contrastive() {
            return Err(config_err(format!("method {} is not a contrastive method", cfg.method)));
        }
        let spec = cfg.loss_spec()?;
        let label_task = match &spec.neighborhood.task {
            Some(t) => Some(ds.task_index(t)?),
            None => None,
        };
        let encoder = Encoder::new(cfg.encoder.clone(), ds.n_channels(), ds.static_dim(), true)?;
        let projector = Projector::from_config(&cfg.encoder);
        let mut init_rng = stream(cfg.seed, streams::INIT);
        let enc_params = encoder.init(&mut init_rng);
        let proj_params = projector.init(&mut init_rng);
        let rho = cfg.rho();
        let sampler = Sampler::new(train_pool(ds))?;
        let mut trainer = Self {
            ds,
            spec,
            label_task,
            adam_enc: AdamState::new(&enc_params.tensors()),
            adam_proj: AdamState::new(&proj_params.tensors()),
            adam_cfg: AdamConfig {
                beta1: cfg.adam_beta1,
                beta2: cfg.adam_beta2,
                ..AdamConfig::default()
            },
            enc: MomentumPair::new(enc_params, rho)?,
            proj: MomentumPair::new(proj_params, rho)?,
            queue: NegativeQueue::new(cfg.queue_size, projector.out)?,
            warmup_repeated: sampler.len() < cfg.queue_size,
            sampler,
            sampler_rng: stream(cfg.seed, streams::SAMPLER),
            aug_rng: stream(cfg.seed, streams::AUGMENT),
            encoder,
            projector,
            cfg: cfg.clone(),
            step: 0,
            next_uid: 0,
        };
        trainer.warmup()?;
        Ok(trainer)
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn loss_spec(&self) -> &LossSpec {
        &self.spec
    }

    fn meta(&self, stay: usize, t: usize, uid: u64) -> SampleMeta {
        SampleMeta {
            stay: stay as u32,
            t: t as u32,
            label: self.label_task.map(|k| self.ds.stays[stay].labels[k][t]),
            uid,
        }
    }

    fn warmup(&mut self) -> Result<()> {
        let mut rng = stream(self.cfg.seed, streams::WARMUP);
        let chunk = 2 * self.cfg.batch_size;
        let mut queue = self.queue.clone();
        let mut uid = self.next_uid;
        let this = &*self;
        warmup_fill(&mut queue, chunk, |n| {
            let mut windows = Vec::with_capacity(n);
            let mut statics = Vec::with_capacity(n);
            let mut metas = Vec::with_capacity(n);
            for _ in 0..n {
                let (s, t) = this.sampler.draw(&mut rng);
                let w = this.ds.window(s, t, this.cfg.history)?;
                let v = augment(&w.window, &w.static_features, &mut rng, &this.cfg.augment);
                windows.push(v.window);
                statics.push(v.static_features);
                metas.push(this.meta(s, t, uid));
                uid += 1;
            }
            let w: Vec<&Tensor> = windows.iter().collect();
            let s: Vec<&[f64]> = statics.iter().map(Vec::as_slice).collect();
            let p = this.momentum_project(&stack_windows(&w)?, &stack_rows(&s)?)?;
            Ok((p, metas))
        })?;
        self.queue = queue;
        self.next_uid = uid;
        Ok(())
    }

    /// Momentum-branch projections; no gradient is recorded.
    pub fn momentum_project(&self, windows: &Tensor, statics: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let enc_ids = self.enc.momentum.bind(&mut g, false);
        let proj_ids = self.proj.momentum.bind(&mut g, false);
        let x = g.constant(windows.clone());
        let s = g.constant(statics.clone());
        let z = self.encoder.forward(&mut g, &enc_ids, x, s)?;
        let p = self.projector.forward(&mut g, &proj_ids, z)?;
        Ok(g.value(p).clone())
    }

    fn draw_sources(&mut self) -> Vec<(usize, usize)> {
        let n = self.cfg.batch_size;
        match self.cfg.sampling {
            Sampling::Uniform => self.sampler.draw_many(n, &mut self.sampler_rng),
            Sampling::NeighborAware => {
                let first = n.div_ceil(2);
                let mut out = self.sampler.draw_many(first, &mut self.sampler_rng);
                let w = self.spec.neighborhood.w;
                for j in 0..n - first {
                    let (s, t) = out[j];
                    let len = self.ds.stays[s].len();
                    let reach = if w.is_infinite() { len } else { (w.0.ceil() as usize).saturating_sub(1) };
                    let lo = t.saturating_sub(reach);
                    let hi = (t + reach).min(len - 1);
                    out.push((s, self.sampler_rng.random_range(lo..=hi)));
                }
                out
            }
        }
    }

    fn make_batch(&mut self) -> Result<ViewBatch> {
        let sources = self.draw_sources();
        let n = sources.len();
        let mut first = Vec::with_capacity(n);
        let mut second = Vec::with_capacity(n);
        let mut metas = vec![
            SampleMeta {
                stay: 0,
                t: 0,
                label: None,
                uid: 0
            };
            2 * n
        ];
        for (j, &(s, t)) in sources.iter().enumerate() {
            let w = self.ds.window(s, t, self.cfg.history)?;
            let (a, b) = make_views(&w.window, &w.static_features, &mut self.aug_rng, &self.cfg.augment);
            first.push(a);
            second.push(b);
            let m = self.meta(s, t, self.next_uid);
            self.next_uid += 1;
            metas[j] = m;
            metas[n + j] = m;
        }
        let views: Vec<_> = first.iter().chain(&second).collect();
        let windows: Vec<&Tensor> = views.iter().map(|v| &v.window).collect();
        let statics: Vec<&[f64]> = views.iter().map(|v| v.static_features.as_slice()).collect();
        Ok(ViewBatch {
            windows: stack_windows(&windows)?,
            statics: stack_rows(&statics)?,
            metas,
        })
    }

    /// Runs one optimization step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let lr = lr_schedule(step, &self.cfg);
        let batch = self.make_batch()?;

        let pm = self.momentum_project(&batch.windows, &batch.statics)?;
        self.queue.enqueue(&pm, &batch.metas)?;
        let masks = build_masks(&batch.metas, &self.queue.metas(), &self.spec.neighborhood)?;
        let queue = self.queue.to_tensor();

        let freeze = self.cfg.freeze_projector();
        let mut g = Graph::new();
        let enc_ids = self.enc.online.bind(&mut g, true);
        let proj_ids = self.proj.online.bind(&mut g, !freeze);
        let x = g.constant(batch.windows);
        let s = g.constant(batch.statics);
        let z = self.encoder.forward(&mut g, &enc_ids, x, s)?;
        let p = self.projector.forward(&mut g, &proj_ids, z)?;
        let nodes = ncl_graph(&mut g, p, &queue, &masks, &self.spec)?;
        let na = g.value(nodes.na).item()?;
        let nd = g.value(nodes.nd).item()?;
        let loss = g.value(nodes.total).item()?;
        let max_logit = g
            .value(nodes.similarity)
            .data()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        check_finite(step, "loss", loss, || format!("na {na}, nd {nd}, max logit {max_logit}"))?;
        let accuracy = contrastive_accuracy(g.value(p), &queue, &masks);

        let grads = g.backward(nodes.total)?;
        apply_adam(&mut self.enc.online, &enc_ids, &grads, &mut self.adam_enc, lr, &self.adam_cfg)?;
        if !freeze {
            apply_adam(&mut self.proj.online, &proj_ids, &grads, &mut self.adam_proj, lr, &self.adam_cfg)?;
        }
        self.enc.update()?;
        self.proj.update()?;
        self.step += 1;
        Ok(StepMetrics {
            step,
            lr,
            loss,
            na,
            nd,
            contrastive_accuracy: accuracy,
            max_logit,
        })
    }

    /// Online encoder and projector as a checkpoint.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(
            self.cfg.method.as_str(),
            self.cfg.history,
            self.encoder.clone(),
            self.enc.online.clone(),
        );
        ck.step = self.step;
        ck.projector = Some((self.projector.clone(), self.proj.online.clone()));
        ck
    }

    pub fn online_projector(&self) -> &ParamSet {
        &self.proj.online
    }
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<StepMetrics>,
    pub warmup_repeated: bool,
}

/// Runs `cfg.steps` steps of contrastive pretraining.
pub fn pretrain(ds: &Dataset, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    let mut trainer = Pretrainer::new(ds, cfg)?;
    let mut metrics = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        metrics.push(trainer.step()?);
    }
    Ok(PretrainOutcome {
        checkpoint: trainer.checkpoint(),
        metrics,
        warmup_repeated: trainer.warmup_repeated,
    })
}
