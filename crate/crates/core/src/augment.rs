//! View construction for contrastive pretraining.
//!
//! A view is built by applying, in this order: history crop, history cutout,
//! channel dropout and Gaussian noise to the window, then dropout to the
//! static vector. Crop and cutout never modify the last row of the window.
//!
//! Every Bernoulli decision is drawn as `rng.random::<f64>() < p`, one draw
//! per decision, so seeded runs can be replayed draw by draw.

use ncl_autograd::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub crop_prob: f64,
    /// Minimum fraction of the history kept by a crop.
    pub crop_min_frac: f64,
    pub cutout_len: usize,
    pub cutout_prob: f64,
    pub channel_dropout_p: f64,
    pub noise_std: f64,
    pub static_dropout_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_prob: 0.5,
            crop_min_frac: 0.5,
            cutout_len: 8,
            cutout_prob: 0.8,
            channel_dropout_p: 0.2,
            noise_std: 0.1,
            static_dropout_p: 0.2,
        }
    }
}

impl AugmentConfig {
    /// No augmentation at all.
    pub fn identity() -> Self {
        Self {
            crop_prob: 0.0,
            crop_min_frac: 1.0,
            cutout_len: 0,
            cutout_prob: 0.0,
            channel_dropout_p: 0.0,
            noise_std: 0.0,
            static_dropout_p: 0.0,
        }
    }

    pub fn validate(&self, history: usize) -> Result<()> {
        let probs = [
            ("crop_prob", self.crop_prob),
            ("cutout_prob", self.cutout_prob),
            ("channel_dropout_p", self.channel_dropout_p),
            ("static_dropout_p", self.static_dropout_p),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err(format!("augment.{name} = {p} is not a probability")));
            }
        }
        if !(self.crop_min_frac > 0.0 && self.crop_min_frac <= 1.0) {
            return Err(config_err("augment.crop_min_frac must lie in (0, 1]"));
        }
        if self.cutout_len >= history {
            return Err(config_err(format!(
                "augment.cutout_len {} must be shorter than the history {history}",
                self.cutout_len
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(config_err("augment.noise_std must be finite and non-negative"));
        }
        Ok(())
    }
}

/// An augmented sample: window `t_h x C` plus static vector.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub window: Tensor,
    pub static_features: Vec<f64>,
}

fn zero_rows(window: &mut Tensor, rows: std::ops::Range<usize>) {
    let c = window.last_dim();
    window.data_mut()[rows.start * c..rows.end * c].fill(0.0);
}

/// Largest number of rows a crop may remove from a history of `t_h`.
pub fn max_crop(t_h: usize, min_frac: f64) -> usize {
    t_h - ((min_frac * t_h as f64).ceil() as usize).clamp(1, t_h)
}

/// With probability `crop_prob`, replaces the oldest `k` rows by padding,
/// `k` uniform in `0..=max_crop`. Returns the number of rows removed.
pub fn history_crop(window: &mut Tensor, rng: &mut ChaCha8Rng, cfg: &AugmentConfig) -> usize {
    if rng.random::<f64>() >= cfg.crop_prob {
        return 0;
    }
    let k = rng.random_range(0..=max_crop(window.n_rows(), cfg.crop_min_frac));
    zero_rows(window, 0..k);
    k
}

/// With probability `cutout_prob`, zeroes `cutout_len` consecutive rows that
/// end before the last row. Returns the first zeroed row when applied.
pub fn history_cutout(window: &mut Tensor, rng: &mut ChaCha8Rng, cfg: &AugmentConfig) -> Option<usize> {
    if rng.random::<f64>() >= cfg.cutout_prob || cfg.cutout_len == 0 {
        return None;
    }
    let t_h = window.n_rows();
    let start = rng.random_range(0..=t_h - 1 - cfg.cutout_len);
    zero_rows(window, start..start + cfg.cutout_len);
    Some(start)
}

/// Zeroes each channel (column) independently with `channel_dropout_p`.
/// Returns the per-channel drop decisions.
pub fn channel_dropout(window: &mut Tensor, rng: &mut ChaCha8Rng, cfg: &AugmentConfig) -> Vec<bool> {
    let c = window.last_dim();
    let dropped: Vec<bool> = (0..c).map(|_| rng.random::<f64>() < cfg.channel_dropout_p).collect();
    if dropped.iter().any(|&d| d) {
        for row in window.data_mut().chunks_mut(c) {
            for (v, &d) in row.iter_mut().zip(&dropped) {
                if d {
                    *v = 0.0;
                }
            }
        }
    }
    dropped
}

/// Adds iid `N(0, noise_std^2)` to every cell.
pub fn gaussian_noise(window: &mut Tensor, rng: &mut ChaCha8Rng, cfg: &AugmentConfig) {
    if cfg.noise_std == 0.0 {
        return;
    }
    for v in window.data_mut() {
        let n: f64 = StandardNormal.sample(rng);
        *v += cfg.noise_std * n;
    }
}

/// Zeroes each static entry independently with `static_dropout_p`.
pub fn static_dropout(values: &mut [f64], rng: &mut ChaCha8Rng, cfg: &AugmentConfig) {
    for v in values {
        if rng.random::<f64>() < cfg.static_dropout_p {
            *v = 0.0;
        }
    }
}

/// One view of the source sample.
pub fn augment(window: &Tensor, static_features: &[f64], rng: &mut ChaCha8Rng, cfg: &AugmentConfig) -> View {
    let mut w = window.clone();
    history_crop(&mut w, rng, cfg);
    history_cutout(&mut w, rng, cfg);
    channel_dropout(&mut w, rng, cfg);
    gaussian_noise(&mut w, rng, cfg);
    let mut s = static_features.to_vec();
    static_dropout(&mut s, rng, cfg);
    View {
        window: w,
        static_features: s,
    }
}

/// Two independent views of the same source sample.
pub fn make_views(
    window: &Tensor,
    static_features: &[f64],
    rng: &mut ChaCha8Rng,
    cfg: &AugmentConfig,
) -> (View, View) {
    let a = augment(window, static_features, rng, cfg);
    let b = augment(window, static_features, rng, cfg);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ramp(t_h: usize, c: usize) -> Tensor {
        Tensor::new(vec![t_h, c], (0..t_h * c).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn crop_bounds() {
        assert_eq!(max_crop(48, 0.5), 24);
        assert_eq!(max_crop(48, 1.0), 0);
        assert_eq!(max_crop(5, 0.5), 2);
    }

    #[test]
    fn validate_rejects_long_cutout() {
        let cfg = AugmentConfig { cutout_len: 48, ..AugmentConfig::default() };
        assert!(cfg.validate(48).is_err());
        assert!(AugmentConfig::default().validate(48).is_ok());
    }

    #[test]
    fn identity_config_copies() {
        let w = ramp(48, 3);
        let mut rng = seeded(3);
        let (a, b) = make_views(&w, &[1.0, 2.0], &mut rng, &AugmentConfig::identity());
        assert_eq!(a.window, w);
        assert_eq!(b.window, w);
        assert_eq!(a.static_features, vec![1.0, 2.0]);
    }
}
