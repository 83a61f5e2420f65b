use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::data::DEFAULT_HISTORY;
use crate::encoder::{EncoderConfig, HeadKind};
use crate::error::{config_err, NclError, Result};
use crate::loss::LossSpec;
use crate::neighborhood::{NeighborhoodKind, NeighborhoodSpec, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain contrastive learning.
    Cl,
    /// Same-stay negatives only, pure discrimination.
    Sacl,
    /// Same-stay positives, aggregation only.
    Clocs,
    /// Supervised contrastive on labels.
    Scl,
    /// Neighborhood contrastive with a time window.
    NclW,
    /// Neighborhood contrastive on labels.
    NclY,
    /// Neighborhood contrastive on the window and label intersection.
    NclWy,
    /// Encoder and head trained jointly on labels.
    E2e,
    /// Sequence auto-encoder.
    Ae,
    /// Auto-encoder predicting the next segment.
    AeForecast,
}

impl Method {
    pub const ALL: [Method; 10] = [
        Method::Cl,
        Method::Sacl,
        Method::Clocs,
        Method::Scl,
        Method::NclW,
        Method::NclY,
        Method::NclWy,
        Method::E2e,
        Method::Ae,
        Method::AeForecast,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cl => "cl",
            Method::Sacl => "sacl",
            Method::Clocs => "clocs",
            Method::Scl => "scl",
            Method::NclW => "ncl_w",
            Method::NclY => "ncl_y",
            Method::NclWy => "ncl_wy",
            Method::E2e => "e2e",
            Method::Ae => "ae",
            Method::AeForecast => "ae_forecast",
        }
    }

    pub fn is_contrastive(self) -> bool {
        !matches!(self, Method::E2e | Method::Ae | Method::AeForecast)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = NclError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config_err(format!("unknown method {s:?}")))
    }
}

/// Dataset-dependent defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Hourly benchmark defaults: `rho = 0.999`, windowed NCL at `alpha = 0.3, w = 16`.
    Mimic,
    /// Sepsis-style defaults: `rho = 0.99`, windowed NCL at `alpha = 0.4, w = 12`.
    Physionet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Uniform over every `(stay, hour)` of the training split.
    Uniform,
    /// Half the batch uniform, each paired with a second hour of the same
    /// stay inside the neighborhood window.
    NeighborAware,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub task: String,
    pub head: HeadKind,
    pub lr: f64,
    /// Steps between validation evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub max_val_samples: usize,
    /// Pretrained checkpoint to fine-tune from.
    pub init_checkpoint: Option<PathBuf>,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            task: "decompensation".into(),
            head: HeadKind::Linear,
            lr: 1e-5,
            eval_every: 50,
            patience: 10,
            max_val_samples: 2048,
            init_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub preset: Preset,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    /// Defaults to 10% of `steps`.
    pub warmup_steps: Option<usize>,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub tau: f64,
    /// Overrides the method's trade-off.
    pub alpha: Option<f64>,
    /// Overrides the method's window.
    pub w: Option<Window>,
    /// Overrides the method's neighborhood kind.
    pub neighborhood: Option<NeighborhoodKind>,
    /// Task whose labels define label neighborhoods.
    pub label_task: String,
    /// Defaults from the preset.
    pub rho: Option<f64>,
    pub queue_size: usize,
    /// Defaults to true for `scl` only.
    pub freeze_projector: Option<bool>,
    pub sampling: Sampling,
    pub history: usize,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub supervised: SupervisedConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::NclW,
            preset: Preset::Mimic,
            seed: 0,
            steps: 2000,
            batch_size: 128,
            warmup_steps: None,
            lr_start: 1e-5,
            lr_peak: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            tau: 0.1,
            alpha: None,
            w: None,
            neighborhood: None,
            label_task: "decompensation".into(),
            rho: None,
            queue_size: 4096,
            freeze_projector: None,
            sampling: Sampling::Uniform,
            history: DEFAULT_HISTORY,
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            supervised: SupervisedConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_steps.unwrap_or(self.steps / 10)
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or(match self.preset {
            Preset::Mimic => 0.999,
            Preset::Physionet => 0.99,
        })
    }

    pub fn freeze_projector(&self) -> bool {
        self.freeze_projector.unwrap_or(self.method == Method::Scl)
    }

    /// The `(alpha, w, kind)` a contrastive method expands to before overrides.
    pub fn method_defaults(&self) -> Option<(f64, Window, NeighborhoodKind)> {
        use NeighborhoodKind as K;
        let (ncl_alpha, ncl_w) = match self.preset {
            Preset::Mimic => (0.3, 16.0),
            Preset::Physionet => (0.4, 12.0),
        };
        Some(match self.method {
            Method::Cl => (1.0, Window(0.0), K::Window),
            Method::Sacl => (0.0, Window::INFINITE, K::Window),
            Method::Clocs => (1.0, Window::INFINITE, K::Window),
            Method::Scl => (1.0, Window(0.0), K::Label),
            Method::NclW => (ncl_alpha, Window(ncl_w), K::Window),
            Method::NclY => (0.9, Window(0.0), K::Label),
            Method::NclWy => (1.0, Window(16.0), K::WindowLabel),
            Method::E2e | Method::Ae | Method::AeForecast => return None,
        })
    }

    /// Loss specification after applying overrides.
    pub fn loss_spec(&self) -> Result<LossSpec> {
        let (alpha, w, kind) = self
            .method_defaults()
            .ok_or_else(|| config_err(format!("method {} has no contrastive loss", self.method)))?;
        let kind = self.neighborhood.unwrap_or(kind);
        let spec = LossSpec {
            tau: self.tau,
            alpha: self.alpha.unwrap_or(alpha),
            neighborhood: NeighborhoodSpec {
                kind,
                w: self.w.unwrap_or(w),
                task: kind.uses_label().then(|| self.label_task.clone()),
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(config_err("steps and batch_size must be positive"));
        }
        if self.warmup_steps() >= self.steps {
            return Err(config_err(format!(
                "warmup_steps {} must be smaller than steps {}",
                self.warmup_steps(),
                self.steps
            )));
        }
        if !(self.lr_start > 0.0 && self.lr_peak > 0.0) {
            return Err(config_err("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(config_err("Adam betas must lie in [0, 1)"));
        }
        let rho = self.rho();
        if !(rho > 0.0 && rho < 1.0) {
            return Err(config_err(format!("rho {rho} must lie in (0, 1)")));
        }
        if self.method.is_contrastive() {
            self.loss_spec()?;
            if 2 * self.batch_size > self.queue_size {
                return Err(config_err(format!(
                    "queue_size {} must hold the {} views of a batch",
                    self.queue_size,
                    2 * self.batch_size
                )));
            }
        }
        if self.history == 0 {
            return Err(config_err("history must be positive"));
        }
        self.encoder.validate(self.history)?;
        self.augment.validate(self.history)?;
        if self.method == Method::E2e {
            let s = &self.supervised;
            if !(s.lr > 0.0) || s.eval_every == 0 || s.max_val_samples == 0 {
                return Err(config_err("supervised lr, eval_every and max_val_samples must be positive"));
            }
        }
        Ok(())
    }
}

/// Linear warm-up from `lr_start` to `lr_peak`, then cosine decay to zero at `steps`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_steps();
    if step < warm {
        cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * step as f64 / warm as f64
    } else {
        let span = (cfg.steps - warm) as f64;
        let progress = ((step - warm) as f64 / span).min(1.0);
        cfg.lr_peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
