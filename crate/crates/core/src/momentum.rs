//! Momentum copies of the online parameters and the FIFO negative queue.

use std::collections::VecDeque;

use ncl_autograd::Tensor;

use crate::error::{config_err, data_err, Result};
use crate::neighborhood::SampleMeta;
use crate::params::ParamSet;

/// `momentum <- (1 - rho) * online + rho * momentum`, elementwise.
pub fn ema_update(momentum: &mut ParamSet, online: &ParamSet, rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(config_err(format!("momentum coefficient {rho} must lie in (0, 1)")));
    }
    momentum.check_compatible(online)?;
    for (m, o) in momentum.iter_mut().zip(online.iter()) {
        for (mv, &ov) in m.data_mut().iter_mut().zip(o.data()) {
            *mv = (1.0 - rho) * ov + rho * *mv;
        }
    }
    Ok(())
}

/// Online parameters and their gradient-free moving average.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumPair {
    pub online: ParamSet,
    pub momentum: ParamSet,
    pub rho: f64,
}

impl MomentumPair {
    /// The momentum copy starts equal to `online`.
    pub fn new(online: ParamSet, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(config_err(format!("momentum coefficient {rho} must lie in (0, 1)")));
        }
        Ok(Self {
            momentum: online.clone(),
            online,
            rho,
        })
    }

    pub fn update(&mut self) -> Result<()> {
        ema_update(&mut self.momentum, &self.online, self.rho)
    }
}

/// Bounded FIFO of momentum projections with their metadata.
///
/// Position 0 is the newest entry. After [`enqueue`](Self::enqueue), rows
/// `0..n` are the enqueued batch in its original order.
#[derive(Debug, Clone)]
pub struct NegativeQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<(Vec<f64>, SampleMeta)>,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(config_err("queue capacity and dimension must be positive"));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    /// Writes `batch` (`[n, dim]`) at the front, evicting the oldest entries.
    pub fn enqueue(&mut self, batch: &Tensor, metas: &[SampleMeta]) -> Result<()> {
        let n = batch.n_rows();
        if n > self.capacity {
            return Err(config_err(format!(
                "batch of {n} views exceeds the queue capacity {}",
                self.capacity
            )));
        }
        if batch.ndim() != 2 || batch.last_dim() != self.dim || metas.len() != n {
            return Err(data_err(format!(
                "enqueue expects [{n}, {}] projections with {n} metadata entries",
                self.dim
            )));
        }
        for i in (0..n).rev() {
            self.entries.push_front((batch.row(i).to_vec(), metas[i]));
        }
        self.entries.truncate(self.capacity);
        Ok(())
    }

    pub fn metas(&self) -> Vec<SampleMeta> {
        self.entries.iter().map(|(_, m)| *m).collect()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.entries[k].0
    }

    /// Current contents as `[len, dim]`, newest first.
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * self.dim);
        for (v, _) in &self.entries {
            data.extend_from_slice(v);
        }
        Tensor::new(vec![self.len(), self.dim], data).expect("rows have the queue dimension")
    }
}

/// Fills `queue` to capacity from `next_batch(n)`, which must return `n`
/// projections with metadata.
pub fn warmup_fill<F>(queue: &mut NegativeQueue, chunk: usize, mut next_batch: F) -> Result<()>
where
    F: FnMut(usize) -> Result<(Tensor, Vec<SampleMeta>)>,
{
    while !queue.is_full() {
        let n = chunk.max(1).min(queue.capacity() - queue.len());
        let (p, metas) = next_batch(n)?;
        if p.n_rows() != n {
            return Err(data_err("warm-up batch has the wrong size"));
        }
        queue.enqueue(&p, &metas)?;
    }
    Ok(())
}
