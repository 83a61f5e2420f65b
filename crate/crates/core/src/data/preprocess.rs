//! Forward fill, standard scaling, one-hot encoding and zero imputation.

use ncl_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::schema::{Schema, Variable, VariableKind};
use super::{Dataset, PatientStay, RawDataset, Split};
use crate::error::{data_err, Result};

/// Below this the standard deviation is treated as zero.
const MIN_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableStats {
    /// `constant` channels scale to all zeros.
    Continuous { mean: f64, std: f64, constant: bool },
    Categorical { vocab: Vec<f64> },
}

impl VariableStats {
    fn width(&self) -> usize {
        match self {
            VariableStats::Continuous { .. } => 1,
            VariableStats::Categorical { vocab } => vocab.len(),
        }
    }
}

/// Training-split statistics for every channel and static variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub channels: Vec<VariableStats>,
    pub static_features: Vec<VariableStats>,
}

impl ScalerStats {
    pub fn encoded_channels(&self) -> usize {
        self.channels.iter().map(VariableStats::width).sum()
    }

    pub fn encoded_static(&self) -> usize {
        self.static_features.iter().map(VariableStats::width).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    /// Categorical values absent from the training vocabulary, mapped to all zeros.
    pub unknown_categories: usize,
    pub constant_channels: Vec<String>,
}

/// Carries the last observed value forward; leading gaps stay `NaN`.
pub fn forward_fill(values: &mut [f64]) {
    let mut last = f64::NAN;
    for v in values.iter_mut() {
        if v.is_nan() {
            *v = last;
        } else {
            last = *v;
        }
    }
}

fn fit_variable(var: &Variable, values: &[f64]) -> VariableStats {
    match &var.kind {
        VariableKind::Continuous => {
            let obs: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
            if obs.is_empty() {
                return VariableStats::Continuous {
                    mean: 0.0,
                    std: 0.0,
                    constant: true,
                };
            }
            let n = obs.len() as f64;
            let mean = obs.iter().sum::<f64>() / n;
            let std = (obs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
            VariableStats::Continuous {
                mean,
                std,
                constant: std < MIN_STD,
            }
        }
        VariableKind::Categorical { categories } => {
            let vocab = match categories {
                Some(c) => c.clone(),
                None => {
                    let mut v: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
                    v.sort_by(f64::total_cmp);
                    v.dedup();
                    v
                }
            };
            VariableStats::Categorical { vocab }
        }
    }
}

/// Fits scaling statistics and vocabularies on the training split only.
///
/// Continuous statistics use forward-filled values with population variance.
pub fn fit_scaler(raw: &RawDataset) -> Result<ScalerStats> {
    raw.validate()?;
    let train: Vec<_> = raw.stays.iter().filter(|s| s.split == Split::Train).collect();
    if train.is_empty() {
        return Err(data_err("no training stays to fit scaler statistics"));
    }
    let channels = raw
        .schema
        .channels
        .iter()
        .enumerate()
        .map(|(c, var)| {
            let mut all = Vec::new();
            for s in &train {
                let mut col: Vec<f64> = s.series.iter().map(|r| r[c]).collect();
                forward_fill(&mut col);
                all.extend(col);
            }
            fit_variable(var, &all)
        })
        .collect();
    let static_features = raw
        .schema
        .static_features
        .iter()
        .enumerate()
        .map(|(j, var)| {
            let vals: Vec<f64> = train.iter().map(|s| s.static_values[j]).collect();
            fit_variable(var, &vals)
        })
        .collect();
    Ok(ScalerStats {
        channels,
        static_features,
    })
}

fn encoded_names(vars: &[Variable], stats: &[VariableStats]) -> Vec<String> {
    let mut out = Vec::new();
    for (v, st) in vars.iter().zip(stats) {
        match st {
            VariableStats::Continuous { .. } => out.push(v.name.clone()),
            VariableStats::Categorical { vocab } => {
                out.extend(vocab.iter().map(|c| format!("{}={}", v.name, c)))
            }
        }
    }
    out
}

/// Appends the encoding of one value to `out`.
fn encode_value(value: f64, stats: &VariableStats, out: &mut Vec<f64>, unknown: &mut usize) {
    match stats {
        VariableStats::Continuous { mean, std, constant } => {
            if value.is_nan() || *constant {
                out.push(0.0);
            } else {
                out.push((value - mean) / std);
            }
        }
        VariableStats::Categorical { vocab } => {
            let start = out.len();
            out.extend(std::iter::repeat_n(0.0, vocab.len()));
            if !value.is_nan() {
                match vocab.iter().position(|&c| c == value) {
                    Some(k) => out[start + k] = 1.0,
                    None => *unknown += 1,
                }
            }
        }
    }
}

/// Applies forward fill, scaling, one-hot encoding and zero imputation.
pub fn preprocess(raw: &RawDataset, stats: &ScalerStats) -> Result<(Dataset, PreprocessReport)> {
    raw.validate()?;
    let schema: &Schema = &raw.schema;
    if stats.channels.len() != schema.channels.len()
        || stats.static_features.len() != schema.static_features.len()
    {
        return Err(data_err("scaler statistics do not match the schema"));
    }
    let mut report = PreprocessReport {
        unknown_categories: 0,
        constant_channels: schema
            .channels
            .iter()
            .zip(&stats.channels)
            .filter(|(_, st)| matches!(st, VariableStats::Continuous { constant: true, .. }))
            .map(|(v, _)| v.name.clone())
            .collect(),
    };
    let width = stats.encoded_channels();
    let mut stays = Vec::with_capacity(raw.stays.len());
    for s in &raw.stays {
        let t_len = s.series.len();
        let mut cols: Vec<Vec<f64>> = (0..schema.channels.len())
            .map(|c| s.series.iter().map(|r| r[c]).collect())
            .collect();
        for col in &mut cols {
            forward_fill(col);
        }
        let mut data = Vec::with_capacity(t_len * width);
        for t in 0..t_len {
            for (col, st) in cols.iter().zip(&stats.channels) {
                encode_value(col[t], st, &mut data, &mut report.unknown_categories);
            }
        }
        let mut static_features = Vec::with_capacity(stats.encoded_static());
        for (&v, st) in s.static_values.iter().zip(&stats.static_features) {
            encode_value(v, st, &mut static_features, &mut report.unknown_categories);
        }
        stays.push(PatientStay {
            stay_id: s.stay_id.clone(),
            patient_id: s.patient_id.clone(),
            split: s.split,
            static_features,
            series: Tensor::new(vec![t_len, width], data)?,
            labels: s.labels.clone(),
        });
    }
    let dataset = Dataset {
        schema: schema.clone(),
        channel_names: encoded_names(&schema.channels, &stats.channels),
        static_names: encoded_names(&schema.static_features, &stats.static_features),
        stats: stats.clone(),
        stays,
    };
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{mimic_like_schema, Task};
    use crate::data::RawStay;

    fn one_channel(values: Vec<f64>, split: Split, id: &str) -> RawStay {
        RawStay {
            stay_id: id.into(),
            patient_id: id.into(),
            split,
            static_values: vec![],
            labels: vec![vec![0; values.len()]],
            series: values.into_iter().map(|v| vec![v]).collect(),
        }
    }

    fn schema(kind: VariableKind) -> Schema {
        Schema {
            channels: vec![Variable { name: "x".into(), kind }],
            static_features: vec![],
            tasks: vec![Task { name: "y".into(), n_classes: 2 }],
        }
    }

    #[test]
    fn forward_fill_then_zero_impute_lead() {
        let raw = RawDataset {
            schema: schema(VariableKind::Continuous),
            stays: vec![one_channel(vec![f64::NAN, 2.0, f64::NAN, 5.0], Split::Train, "a")],
        };
        let stats = fit_scaler(&raw).unwrap();
        // forward-filled train values are [2, 2, 5]: mean 3, population variance 2
        let mean = 3.0;
        let std = 2.0f64.sqrt();
        let (ds, _) = preprocess(&raw, &stats).unwrap();
        let got = ds.stays[0].series.data();
        let scaled = |v: f64| (v - mean) / std;
        let expected = [0.0, scaled(2.0), scaled(2.0), scaled(5.0)];
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn constant_channel_scales_to_zero_and_is_flagged() {
        let raw = RawDataset {
            schema: schema(VariableKind::Continuous),
            stays: vec![one_channel(vec![7.0, 7.0, 7.0], Split::Train, "a")],
        };
        let stats = fit_scaler(&raw).unwrap();
        let (ds, report) = preprocess(&raw, &stats).unwrap();
        assert!(ds.stays[0].series.data().iter().all(|&v| v == 0.0));
        assert_eq!(report.constant_channels, vec!["x".to_string()]);
    }

    #[test]
    fn unknown_category_maps_to_zeros_and_counts() {
        let raw = RawDataset {
            schema: schema(VariableKind::Categorical { categories: None }),
            stays: vec![
                one_channel(vec![1.0, 2.0], Split::Train, "a"),
                one_channel(vec![3.0, 1.0], Split::Test, "b"),
            ],
        };
        let stats = fit_scaler(&raw).unwrap();
        let (ds, report) = preprocess(&raw, &stats).unwrap();
        assert_eq!(ds.n_channels(), 2);
        assert_eq!(ds.stays[1].series.data(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(report.unknown_categories, 1);
    }

    #[test]
    fn mimic_like_layout_has_42_channels() {
        let schema = mimic_like_schema();
        let nc = schema.channels.len();
        let stay = RawStay {
            stay_id: "s".into(),
            patient_id: "p".into(),
            split: Split::Train,
            static_values: vec![170.0],
            series: (0..60).map(|t| vec![t as f64; nc]).collect(),
            labels: vec![vec![0; 60], vec![0; 60]],
        };
        let raw = RawDataset { schema, stays: vec![stay] };
        let stats = fit_scaler(&raw).unwrap();
        let (ds, _) = preprocess(&raw, &stats).unwrap();
        assert_eq!(ds.n_channels(), 42);
        let w = ds.window(0, 59, 48).unwrap();
        assert_eq!(w.window.shape(), &[48, 42]);
    }
}
