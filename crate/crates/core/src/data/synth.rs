//! Synthetic ICU-like cohort.
//!
//! Each patient draws a per-channel style offset (between-patient
//! heterogeneity) and a latent severity that follows a drifting random walk
//! over the stay. A fraction of stays additionally deteriorates: from a random
//! onset hour the severity climbs by `event_slope` per hour. Observed channels
//! are `style + loading * severity + noise` with random missingness.
//!
//! The binary `decompensation` label fires at hour `t` when the rise of the
//! severity above its value at admission exceeds a cohort-wide threshold
//! somewhere in `(t, t + horizon]`; the threshold is the quantile that yields
//! the requested prevalence. `length_of_stay` bins the remaining hours into
//! ten classes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schema::{Schema, Task, Variable};
use super::{RawDataset, RawStay, Split};
use crate::error::{config_err, Result};
use crate::rng::{stream, streams, ChaCha8Rng};

/// Upper edges (hours) of the first nine remaining-stay bins; the tenth is open.
pub const LOS_BIN_EDGES_HOURS: [usize; 9] = [24, 48, 72, 96, 120, 144, 168, 192, 336];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub mean_stay_len: f64,
    pub min_stay_len: usize,
    /// Continuous measurement channels.
    pub n_channels: usize,
    /// Adds one categorical channel derived from the severity level.
    pub categorical_channel: bool,
    pub seed: u64,
    /// Target fraction of positive `decompensation` hours.
    pub prevalence: f64,
    pub horizon: usize,
    pub style_scale: f64,
    pub drift_scale: f64,
    pub state_noise: f64,
    pub obs_noise: f64,
    pub missing_rate: f64,
    pub multi_stay_fraction: f64,
    /// Probability that a stay contains a deterioration episode.
    pub event_rate: f64,
    /// Severity increase per hour after the episode onset.
    pub event_slope: f64,
    /// Patient fractions for train / val / test.
    pub split_fractions: [f64; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 200,
            mean_stay_len: 48.0,
            min_stay_len: 8,
            n_channels: 10,
            categorical_channel: true,
            seed: 0,
            prevalence: 0.1,
            horizon: 24,
            style_scale: 1.0,
            drift_scale: 0.04,
            state_noise: 0.15,
            obs_noise: 4.0,
            missing_rate: 0.1,
            multi_stay_fraction: 0.1,
            event_rate: 0.3,
            event_slope: 0.15,
            split_fractions: [0.6, 0.1, 0.3],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 4 {
            return Err(config_err("synthetic cohort needs at least 4 patients"));
        }
        if self.n_channels == 0 || self.min_stay_len == 0 || self.mean_stay_len < 1.0 {
            return Err(config_err("synthetic cohort needs channels and positive stay lengths"));
        }
        if !(0.0..1.0).contains(&self.prevalence) || !(0.0..1.0).contains(&self.missing_rate) {
            return Err(config_err("prevalence and missing_rate must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.event_rate) || !(0.0..=1.0).contains(&self.multi_stay_fraction) {
            return Err(config_err("event_rate and multi_stay_fraction must lie in [0, 1]"));
        }
        let total: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(config_err("split fractions must be non-negative and sum to 1"));
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let mut channels: Vec<Variable> = (0..self.n_channels)
            .map(|c| Variable::continuous(&format!("m{c:02}")))
            .collect();
        if self.categorical_channel {
            channels.push(Variable::categorical("level", Some(vec![1.0, 2.0, 3.0, 4.0])));
        }
        Schema {
            channels,
            static_features: vec![
                Variable::continuous("age"),
                Variable::categorical("sex", None),
                Variable::continuous("height"),
            ],
            tasks: vec![
                Task {
                    name: "decompensation".into(),
                    n_classes: 2,
                },
                Task {
                    name: "length_of_stay".into(),
                    n_classes: 10,
                },
            ],
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn los_bin(remaining_hours: usize) -> u32 {
    LOS_BIN_EDGES_HOURS
        .iter()
        .position(|&edge| remaining_hours < edge)
        .unwrap_or(LOS_BIN_EDGES_HOURS.len()) as u32
}

struct LatentStay {
    stay: RawStay,
    /// Severity minus its value at admission.
    rise: Vec<f64>,
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<RawDataset> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, streams::SYNTH);
    let schema = cfg.schema();

    let loadings: Vec<f64> = (0..cfg.n_channels)
        .map(|_| {
            let mag = rng.random_range(0.4..1.2);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();

    // Patient-level split: shuffle patient order then cut by fractions.
    let mut order: Vec<usize> = (0..cfg.n_patients).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = (cfg.split_fractions[0] * cfg.n_patients as f64).round() as usize;
    let n_val = (cfg.split_fractions[1] * cfg.n_patients as f64).round() as usize;
    let mut split_of = vec![Split::Test; cfg.n_patients];
    for (rank, &p) in order.iter().enumerate() {
        split_of[p] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut latent = Vec::new();
    for p in 0..cfg.n_patients {
        let style: Vec<f64> = (0..cfg.n_channels).map(|_| cfg.style_scale * normal(&mut rng)).collect();
        let baseline = normal(&mut rng);
        let drift = cfg.drift_scale * normal(&mut rng);
        let age = 65.0 + 8.0 * baseline + 8.0 * normal(&mut rng);
        let sex = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let height = 170.0 + 10.0 * normal(&mut rng);
        let n_stays = if rng.random_bool(cfg.multi_stay_fraction) { 2 } else { 1 };
        for s in 0..n_stays {
            let factor = (0.5 * normal(&mut rng) - 0.125).exp();
            let len = ((cfg.mean_stay_len * factor).round() as usize).max(cfg.min_stay_len);
            let onset = rng.random_bool(cfg.event_rate).then(|| rng.random_range(0..len));
            let h0 = baseline + 0.5 * normal(&mut rng);
            let mut h = h0;
            let mut rise = Vec::with_capacity(len);
            let mut series = Vec::with_capacity(len);
            for t in 0..len {
                rise.push(h - h0);
                let mut row: Vec<f64> = (0..cfg.n_channels)
                    .map(|c| style[c] + loadings[c] * h + cfg.obs_noise * normal(&mut rng))
                    .collect();
                if cfg.categorical_channel {
                    row.push(1.0 + (h + 2.0).floor().clamp(0.0, 3.0));
                }
                for v in &mut row {
                    if rng.random_bool(cfg.missing_rate) {
                        *v = f64::NAN;
                    }
                }
                series.push(row);
                h += drift + cfg.state_noise * normal(&mut rng);
                if onset.is_some_and(|o| t >= o) {
                    h += cfg.event_slope;
                }
            }
            let los = (0..len).map(|t| los_bin(len - 1 - t)).collect();
            latent.push(LatentStay {
                stay: RawStay {
                    stay_id: format!("p{p:05}_s{s}"),
                    patient_id: format!("p{p:05}"),
                    split: split_of[p],
                    static_values: vec![age, sex, height],
                    series,
                    labels: vec![Vec::new(), los],
                },
                rise,
            });
        }
    }

    // Future maximum of the rise over (t, t + horizon] for every hour.
    let future_max: Vec<Vec<f64>> = latent
        .iter()
        .map(|ls| {
            let n = ls.rise.len();
            (0..n)
                .map(|t| {
                    ls.rise[(t + 1).min(n)..(t + 1 + cfg.horizon).min(n)]
                        .iter()
                        .copied()
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect()
        })
        .collect();
    let mut pooled: Vec<f64> = future_max.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| b.total_cmp(a));
    let n_pos = (cfg.prevalence * pooled.len() as f64).round() as usize;
    let threshold = if n_pos == 0 {
        f64::INFINITY
    } else {
        pooled[n_pos.min(pooled.len() - 1)]
    };

    let stays = latent
        .into_iter()
        .zip(&future_max)
        .map(|(mut ls, fm)| {
            ls.stay.labels[0] = fm.iter().map(|&m| u32::from(m > threshold)).collect();
            ls.stay
        })
        .collect();
    let raw = RawDataset { schema, stays };
    raw.validate()?;
    Ok(raw)
}
