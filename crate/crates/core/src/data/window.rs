use ncl_autograd::Tensor;

use super::PatientStay;
use crate::error::{data_err, Result};

/// Hours of history per sample.
pub const DEFAULT_HISTORY: usize = 48;

/// The patient state at hour `t`: the last `history` rows of the stay,
/// pre-padded with zeros, plus the static vector and the labels at `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedSample {
    pub stay_index: usize,
    pub stay_id: String,
    pub t: usize,
    /// `history x channels`; the last row is series row `t`.
    pub window: Tensor,
    pub static_features: Vec<f64>,
    pub labels: Vec<u32>,
}

pub fn window(stay: &PatientStay, stay_index: usize, t: usize, history: usize) -> Result<WindowedSample> {
    let len = stay.len();
    if t >= len {
        return Err(data_err(format!(
            "hour {t} out of range for stay {} of length {len}",
            stay.stay_id
        )));
    }
    if history == 0 {
        return Err(data_err("history length must be positive"));
    }
    let c = stay.series.shape()[1];
    let mut data = vec![0.0; history * c];
    // source row for output row r is t + 1 + r - history
    let first = (t + 1).saturating_sub(history);
    let pad = history - (t + 1 - first);
    data[pad * c..].copy_from_slice(&stay.series.data()[first * c..(t + 1) * c]);
    Ok(WindowedSample {
        stay_index,
        stay_id: stay.stay_id.clone(),
        t,
        window: Tensor::new(vec![history, c], data)?,
        static_features: stay.static_features.clone(),
        labels: stay.labels.iter().map(|l| l[t]).collect(),
    })
}
