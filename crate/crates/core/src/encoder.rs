//! Causal convolutional encoder, projector, mirrored decoder and
//! classification heads.
//!
//! Encoder: residual blocks of dilated causal convolutions, each conv
//! followed by layer norm and ReLU; the block input is added back, through a
//! 1x1 conv when the channel count changes. The last time step is
//! concatenated with the static vector, passed through a dense layer and
//! L2-normalized (skipped for auto-encoders).

use std::fs;
use std::path::Path;

use ncl_autograd::{Graph, NodeId, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err, NclError, Result};
use crate::params::ParamSet;
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kernel: usize,
    pub filters: usize,
    /// One residual block per entry.
    pub dilations: Vec<usize>,
    pub convs_per_block: usize,
    pub embed_dim: usize,
    /// Defaults to `embed_dim`.
    pub proj_hidden: Option<usize>,
    /// Defaults to `embed_dim`.
    pub proj_out: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kernel: 2,
            filters: 64,
            dilations: vec![1, 2, 4, 8, 16],
            convs_per_block: 2,
            embed_dim: 64,
            proj_hidden: None,
            proj_out: None,
        }
    }
}

impl EncoderConfig {
    pub fn blocks(&self) -> usize {
        self.dilations.len()
    }

    /// `1 + convs_per_block * (kernel - 1) * sum(dilations)`.
    pub fn receptive_field(&self) -> usize {
        1 + self.convs_per_block * (self.kernel.saturating_sub(1)) * self.dilations.iter().sum::<usize>()
    }

    pub fn proj_hidden(&self) -> usize {
        self.proj_hidden.unwrap_or(self.embed_dim)
    }

    pub fn proj_out(&self) -> usize {
        self.proj_out.unwrap_or(self.embed_dim)
    }

    pub fn validate(&self, history: usize) -> Result<()> {
        if self.kernel == 0 || self.filters == 0 || self.embed_dim == 0 || self.convs_per_block == 0 {
            return Err(config_err("encoder sizes must be positive"));
        }
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(config_err("encoder needs at least one block and positive dilations"));
        }
        if self.proj_hidden() == 0 || self.proj_out() == 0 {
            return Err(config_err("projector sizes must be positive"));
        }
        let rf = self.receptive_field();
        if rf < history {
            return Err(config_err(format!(
                "receptive field {rf} is shorter than the history {history}"
            )));
        }
        Ok(())
    }
}

/// He-style uniform initialization: `U(-b, b)` with `b = sqrt(6 / fan_in)`.
fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

/// Walks a bound parameter list in declaration order.
struct Cursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(ids: &'a [NodeId]) -> Self {
        Self { ids, pos: 0 }
    }

    fn next(&mut self) -> Result<NodeId> {
        let id = self
            .ids
            .get(self.pos)
            .copied()
            .ok_or_else(|| data_err("parameter list is shorter than the architecture"))?;
        self.pos += 1;
        Ok(id)
    }

    fn finish(self) -> Result<()> {
        if self.pos == self.ids.len() {
            Ok(())
        } else {
            Err(data_err("parameter list is longer than the architecture"))
        }
    }
}

fn push_tcn(
    params: &mut ParamSet,
    prefix: &str,
    cfg: &EncoderConfig,
    dilations: &[usize],
    in_channels: usize,
    rng: &mut ChaCha8Rng,
    zero: bool,
) {
    let f = cfg.filters;
    let init = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
        if zero {
            Tensor::zeros(shape)
        } else {
            he_uniform(shape, fan_in, rng)
        }
    };
    let mut c_in = in_channels;
    for (b, _) in dilations.iter().enumerate() {
        for j in 0..cfg.convs_per_block {
            let cin = if j == 0 { c_in } else { f };
            params.push(format!("{prefix}block{b}.conv{j}.w"), init(&[cfg.kernel, cin, f], cfg.kernel * cin, rng));
            params.push(format!("{prefix}block{b}.conv{j}.b"), Tensor::zeros(&[f]));
            params.push(format!("{prefix}block{b}.norm{j}.gain"), Tensor::full(&[f], 1.0));
            params.push(format!("{prefix}block{b}.norm{j}.bias"), Tensor::zeros(&[f]));
        }
        if c_in != f {
            params.push(format!("{prefix}block{b}.res.w"), init(&[1, c_in, f], c_in, rng));
            params.push(format!("{prefix}block{b}.res.b"), Tensor::zeros(&[f]));
        }
        c_in = f;
    }
}

fn forward_tcn(
    g: &mut Graph,
    cur: &mut Cursor<'_>,
    cfg: &EncoderConfig,
    dilations: &[usize],
    in_channels: usize,
    x: NodeId,
) -> Result<NodeId> {
    let mut h = x;
    let mut c_in = in_channels;
    for &d in dilations {
        let mut y = h;
        for _ in 0..cfg.convs_per_block {
            let (w, b, gain, bias) = (cur.next()?, cur.next()?, cur.next()?, cur.next()?);
            y = g.conv1d(y, w, b, d)?;
            y = g.layer_norm(y, gain, bias)?;
            y = g.relu(y)?;
        }
        let res = if c_in != cfg.filters {
            let (w, b) = (cur.next()?, cur.next()?);
            g.conv1d(h, w, b, 1)?
        } else {
            h
        };
        h = g.add(y, res)?;
        c_in = cfg.filters;
    }
    Ok(h)
}

/// Stacks equally shaped windows into `[batch, time, channels]`.
pub fn stack_windows(windows: &[&Tensor]) -> Result<Tensor> {
    let first = windows.first().ok_or_else(|| data_err("empty batch"))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.len() * windows.len());
    for w in windows {
        if w.shape() != shape.as_slice() {
            return Err(data_err(format!("window shape {:?} differs from {:?}", w.shape(), shape)));
        }
        data.extend_from_slice(w.data());
    }
    let mut full = vec![windows.len()];
    full.extend(shape);
    Ok(Tensor::new(full, data)?)
}

/// Stacks static vectors into `[batch, dim]`.
pub fn stack_rows(rows: &[&[f64]]) -> Result<Tensor> {
    let dim = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != dim) {
        return Err(data_err("static vectors differ in length"));
    }
    Ok(Tensor::new(vec![rows.len(), dim], rows.concat())?)
}

/// Architecture plus input dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub in_channels: usize,
    pub static_dim: usize,
    /// Whether `z` is projected onto the unit sphere.
    pub normalize: bool,
}

impl Encoder {
    pub fn new(config: EncoderConfig, in_channels: usize, static_dim: usize, normalize: bool) -> Result<Self> {
        if in_channels == 0 {
            return Err(config_err("encoder needs at least one input channel"));
        }
        Ok(Self {
            config,
            in_channels,
            static_dim,
            normalize,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut p = ParamSet::new();
        push_tcn(&mut p, "enc.", &self.config, &self.config.dilations, self.in_channels, rng, false);
        let fan_in = self.config.filters + self.static_dim;
        p.push("enc.dense.w", he_uniform(&[fan_in, self.config.embed_dim], fan_in, rng));
        p.push("enc.dense.b", Tensor::zeros(&[self.config.embed_dim]));
        p
    }

    /// `x: [B, T, C]`, `s: [B, S]` to `z: [B, embed_dim]`.
    pub fn forward(&self, g: &mut Graph, params: &[NodeId], x: NodeId, s: NodeId) -> Result<NodeId> {
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 3 || xs[2] != self.in_channels {
            return Err(data_err(format!(
                "encoder expects [batch, time, {}] input, got {xs:?}",
                self.in_channels
            )));
        }
        let ss = g.value(s).shape();
        if ss != [xs[0], self.static_dim] {
            return Err(data_err(format!(
                "encoder expects [{}, {}] static input, got {ss:?}",
                xs[0], self.static_dim
            )));
        }
        let (batch, time) = (xs[0], xs[1]);
        let mut cur = Cursor::new(params);
        let h = forward_tcn(g, &mut cur, &self.config, &self.config.dilations, self.in_channels, x)?;
        let last = g.slice(h, 1, time - 1, time)?;
        let last = g.reshape(last, &[batch, self.config.filters])?;
        let merged = if self.static_dim > 0 { g.concat(&[last, s], 1)? } else { last };
        let (w, b) = (cur.next()?, cur.next()?);
        cur.finish()?;
        let z = dense(g, merged, w, b)?;
        if self.normalize {
            Ok(g.l2_normalize(z)?)
        } else {
            Ok(z)
        }
    }

    /// Representations without gradient tracking, in chunks of `chunk` samples.
    pub fn encode(&self, params: &ParamSet, windows: &[&Tensor], statics: &[&[f64]], chunk: usize) -> Result<Tensor> {
        if windows.len() != statics.len() {
            return Err(data_err("windows and static vectors differ in count"));
        }
        let mut data = Vec::with_capacity(windows.len() * self.embed_dim());
        for (wc, sc) in windows.chunks(chunk.max(1)).zip(statics.chunks(chunk.max(1))) {
            let mut g = Graph::new();
            let ids = params.bind(&mut g, false);
            let x = g.constant(stack_windows(wc)?);
            let s = g.constant(stack_rows(sc)?);
            let z = self.forward(&mut g, &ids, x, s)?;
            data.extend_from_slice(g.value(z).data());
        }
        Ok(Tensor::new(vec![windows.len(), self.embed_dim()], data)?)
    }
}

/// Dense, ReLU, dense, L2-normalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub in_dim: usize,
    pub hidden: usize,
    pub out: usize,
}

impl Projector {
    pub fn from_config(cfg: &EncoderConfig) -> Self {
        Self {
            in_dim: cfg.embed_dim,
            hidden: cfg.proj_hidden(),
            out: cfg.proj_out(),
        }
    }

    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("proj.dense0.w", he_uniform(&[self.in_dim, self.hidden], self.in_dim, rng));
        p.push("proj.dense0.b", Tensor::zeros(&[self.hidden]));
        p.push("proj.dense1.w", he_uniform(&[self.hidden, self.out], self.hidden, rng));
        p.push("proj.dense1.b", Tensor::zeros(&[self.out]));
        p
    }

    pub fn forward(&self, g: &mut Graph, params: &[NodeId], z: NodeId) -> Result<NodeId> {
        let mut cur = Cursor::new(params);
        let (w0, b0, w1, b1) = (cur.next()?, cur.next()?, cur.next()?, cur.next()?);
        cur.finish()?;
        let h = dense(g, z, w0, b0)?;
        let h = g.relu(h)?;
        let p = dense(g, h, w1, b1)?;
        Ok(g.l2_normalize(p)?)
    }
}

/// Mirror of the encoder for auto-encoding baselines: a dense layer expands
/// `z` to `[T, filters]`, residual blocks with reversed dilations follow, and
/// a 1x1 conv maps back to the input channels. A separate dense layer
/// reconstructs the static vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub config: EncoderConfig,
    pub history: usize,
    pub out_channels: usize,
    pub static_dim: usize,
}

impl Decoder {
    pub fn mirror(enc: &Encoder, history: usize) -> Self {
        Self {
            config: enc.config.clone(),
            history,
            out_channels: enc.in_channels,
            static_dim: enc.static_dim,
        }
    }

    fn dilations(&self) -> Vec<usize> {
        self.config.dilations.iter().rev().copied().collect()
    }

    /// `zero` gives an all-zero decoder (outputs are identically zero).
    pub fn init(&self, rng: &mut ChaCha8Rng, zero: bool) -> ParamSet {
        let (e, f, t) = (self.config.embed_dim, self.config.filters, self.history);
        let init = |shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            if zero {
                Tensor::zeros(shape)
            } else {
                he_uniform(shape, fan_in, rng)
            }
        };
        let mut p = ParamSet::new();
        p.push("dec.expand.w", init(&[e, t * f], e, rng));
        p.push("dec.expand.b", Tensor::zeros(&[t * f]));
        push_tcn(&mut p, "dec.", &self.config, &self.dilations(), f, rng, zero);
        p.push("dec.out.w", init(&[1, f, self.out_channels], f, rng));
        p.push("dec.out.b", Tensor::zeros(&[self.out_channels]));
        if self.static_dim > 0 {
            p.push("dec.static.w", init(&[e, self.static_dim], e, rng));
            p.push("dec.static.b", Tensor::zeros(&[self.static_dim]));
        }
        p
    }

    /// Returns the reconstructed series `[B, T, C]` and static `[B, S]`
    /// (`None` when there are no static features).
    pub fn forward(&self, g: &mut Graph, params: &[NodeId], z: NodeId) -> Result<(NodeId, Option<NodeId>)> {
        let batch = g.value(z).shape()[0];
        let f = self.config.filters;
        let mut cur = Cursor::new(params);
        let (w, b) = (cur.next()?, cur.next()?);
        let h = dense(g, z, w, b)?;
        let h = g.reshape(h, &[batch, self.history, f])?;
        let h = forward_tcn(g, &mut cur, &self.config, &self.dilations(), f, h)?;
        let (w, b) = (cur.next()?, cur.next()?);
        let series = g.conv1d(h, w, b, 1)?;
        let stat = if self.static_dim > 0 {
            let (w, b) = (cur.next()?, cur.next()?);
            Some(dense(g, z, w, b)?)
        } else {
            None
        };
        cur.finish()?;
        Ok((series, stat))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    /// One hidden layer of the input width with ReLU.
    Mlp,
}

/// Classification head producing one logit per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub kind: HeadKind,
    pub in_dim: usize,
    pub n_classes: usize,
}

impl Head {
    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamSet {
        let mut p = ParamSet::new();
        if self.kind == HeadKind::Mlp {
            p.push("head.hidden.w", he_uniform(&[self.in_dim, self.in_dim], self.in_dim, rng));
            p.push("head.hidden.b", Tensor::zeros(&[self.in_dim]));
        }
        p.push("head.out.w", he_uniform(&[self.in_dim, self.n_classes], self.in_dim, rng));
        p.push("head.out.b", Tensor::zeros(&[self.n_classes]));
        p
    }

    pub fn forward(&self, g: &mut Graph, params: &[NodeId], z: NodeId) -> Result<NodeId> {
        let mut cur = Cursor::new(params);
        let mut h = z;
        if self.kind == HeadKind::Mlp {
            let (w, b) = (cur.next()?, cur.next()?);
            h = dense(g, h, w, b)?;
            h = g.relu(h)?;
        }
        let (w, b) = (cur.next()?, cur.next()?);
        cur.finish()?;
        dense(g, h, w, b)
    }
}

/// Mean cross-entropy of `logits: [B, K]` against integer labels.
pub fn cross_entropy(g: &mut Graph, logits: NodeId, labels: &[u32]) -> Result<NodeId> {
    let shape = g.value(logits).shape().to_vec();
    let (b, k) = (shape[0], shape[1]);
    if labels.len() != b {
        return Err(data_err("label count does not match the batch"));
    }
    let mut onehot = vec![0.0; b * k];
    for (i, &y) in labels.iter().enumerate() {
        if y as usize >= k {
            return Err(data_err(format!("label {y} out of range for {k} classes")));
        }
        onehot[i * k + y as usize] = 1.0;
    }
    let lse = g.masked_logsumexp(logits, &vec![true; b * k])?;
    let lse = g.sum(lse, None)?;
    let y = g.constant(Tensor::new(vec![b, k], onehot)?);
    let picked = g.mul(logits, y)?;
    let picked = g.sum(picked, None)?;
    let total = g.sub(lse, picked)?;
    Ok(g.scale(total, 1.0 / b as f64)?)
}

/// Row-wise softmax of raw logits.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadState {
    pub task: String,
    pub head: Head,
    pub params: ParamSet,
}

/// Everything needed to rebuild a trained model. Queue state is not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub method: String,
    pub history: usize,
    pub step: usize,
    pub encoder: Encoder,
    pub encoder_params: ParamSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projector: Option<(Projector, ParamSet)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<(Decoder, ParamSet)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadState>,
}

impl Checkpoint {
    pub fn new(method: &str, history: usize, encoder: Encoder, encoder_params: ParamSet) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            method: method.to_string(),
            history,
            step: 0,
            encoder,
            encoder_params,
            projector: None,
            decoder: None,
            head: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(data_err(format!(
                "unsupported checkpoint format_version {}",
                ck.format_version
            )));
        }
        let mut rng = crate::rng::seeded(0);
        ck.encoder.init(&mut rng).check_compatible(&ck.encoder_params)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| NclError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NclError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn default_receptive_field() {
        assert_eq!(EncoderConfig::default().receptive_field(), 63);
        assert!(EncoderConfig::default().validate(48).is_ok());
        let short = EncoderConfig {
            dilations: vec![1, 2],
            ..EncoderConfig::default()
        };
        assert!(short.validate(48).is_err());
    }

    #[test]
    fn param_count_mismatch_is_error() {
        let enc = Encoder::new(EncoderConfig::default(), 3, 1, true).unwrap();
        let params = enc.init(&mut seeded(0));
        let mut g = Graph::new();
        let ids = params.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(&[1, 48, 3]));
        let s = g.constant(Tensor::zeros(&[1, 1]));
        assert!(enc.forward(&mut g, &ids[..ids.len() - 1], x, s).is_err());
        let bad = g.constant(Tensor::zeros(&[1, 48, 4]));
        assert!(enc.forward(&mut g, &ids, bad, s).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let l = g.constant(Tensor::zeros(&[2, 4]));
        let ce = cross_entropy(&mut g, l, &[0, 3]).unwrap();
        assert!((g.value(ce).item().unwrap() - 4f64.ln()).abs() < 1e-12);
    }
}
