//! Patient stays, preprocessing, windowing and the synthetic cohort generator.

mod io;
mod preprocess;
mod schema;
mod split;
mod synth;
mod window;

use std::collections::BTreeMap;

use ncl_autograd::Tensor;
use serde::{Deserialize, Serialize};

pub use io::{
    load_processed, load_raw, save_processed, save_raw, DatasetKind, DatasetManifest, StayEntry, MANIFEST_FILE,
};
pub use preprocess::{
    fit_scaler, forward_fill, preprocess, PreprocessReport, ScalerStats, VariableStats,
};
pub use schema::{mimic_like_schema, Schema, Task, Variable, VariableKind};
pub use split::{check_patient_disjoint, label_prevalence, stratified_label_fraction_split};
pub use synth::{synth_generate, SynthConfig, LOS_BIN_EDGES_HOURS};
pub use window::{window, WindowedSample, DEFAULT_HISTORY};

use crate::error::{data_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One stay before preprocessing: hourly rows of raw values, `NaN` = missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStay {
    pub stay_id: String,
    pub patient_id: String,
    pub split: Split,
    pub static_values: Vec<f64>,
    /// `T` rows of one value per schema channel.
    pub series: Vec<Vec<f64>>,
    /// Per task, one label per hour.
    pub labels: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: Schema,
    pub stays: Vec<RawStay>,
}

impl RawDataset {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let (nc, ns, nt) = (
            self.schema.channels.len(),
            self.schema.static_features.len(),
            self.schema.tasks.len(),
        );
        for s in &self.stays {
            if s.static_values.len() != ns {
                return Err(data_err(format!("stay {}: expected {ns} static values", s.stay_id)));
            }
            if s.series.iter().any(|r| r.len() != nc) {
                return Err(data_err(format!("stay {}: expected {nc} channels per row", s.stay_id)));
            }
            if s.labels.len() != nt || s.labels.iter().any(|l| l.len() != s.series.len()) {
                return Err(data_err(format!(
                    "stay {}: need {nt} label columns of length {}",
                    s.stay_id,
                    s.series.len()
                )));
            }
            for (task, labels) in self.schema.tasks.iter().zip(&s.labels) {
                if let Some(bad) = labels.iter().find(|&&y| y >= task.n_classes) {
                    return Err(data_err(format!(
                        "stay {}: label {bad} out of range for task {}",
                        s.stay_id, task.name
                    )));
                }
            }
        }
        check_patient_disjoint(self.stays.iter().map(|s| (s.patient_id.as_str(), s.split)))
    }
}

/// A preprocessed stay: static vector `d`, hourly series `s` (`T x C`) and
/// per-task hourly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientStay {
    pub stay_id: String,
    pub patient_id: String,
    pub split: Split,
    pub static_features: Vec<f64>,
    pub series: Tensor,
    pub labels: Vec<Vec<u32>>,
}

impl PatientStay {
    pub fn len(&self) -> usize {
        self.series.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A preprocessed cohort plus the schema and statistics that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    pub stats: ScalerStats,
    pub channel_names: Vec<String>,
    pub static_names: Vec<String>,
    pub stays: Vec<PatientStay>,
}

impl Dataset {
    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn static_dim(&self) -> usize {
        self.static_names.len()
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.schema.task_index(name)
    }

    /// Indices of the stays in `split`.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.stays.len())
            .filter(|&i| self.stays[i].split == split)
            .collect()
    }

    /// Every `(stay index, hour)` of the given stays; one sample per hour.
    pub fn sample_pool(&self, stays: &[usize]) -> Vec<(usize, usize)> {
        stays
            .iter()
            .flat_map(|&s| (0..self.stays[s].len()).map(move |t| (s, t)))
            .collect()
    }

    pub fn window(&self, stay_index: usize, t: usize, history: usize) -> Result<WindowedSample> {
        let stay = self
            .stays
            .get(stay_index)
            .ok_or_else(|| data_err(format!("stay index {stay_index} out of range")))?;
        window(stay, stay_index, t, history)
    }

    /// Number of stays per split.
    pub fn split_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for s in &self.stays {
            *out.entry(s.split.as_str()).or_insert(0) += 1;
        }
        out
    }
}
