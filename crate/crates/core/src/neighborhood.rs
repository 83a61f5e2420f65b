//! Binary neighborhood functions and the anchor x queue masks built from them.
//!
//! Rows are the `2N` views of the current batch; columns are queue entries.
//! The queue front holds the momentum projections of the same `2N` views in
//! the same order, so column `i` is the anchor's own momentum copy and is the
//! only column excluded as "self".

use std::collections::HashMap;
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config_err, data_err, Result};

/// Metadata carried by every view and queue entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleMeta {
    /// Index of the source stay.
    pub stay: u32,
    pub t: u32,
    /// Label for the neighborhood task, when one is configured.
    pub label: Option<u32>,
    /// Shared by the two views of one source sample.
    pub uid: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodKind {
    /// Same stay and `|dt| < w`.
    Window,
    /// Same label.
    Label,
    /// Both of the above.
    WindowLabel,
}

impl NeighborhoodKind {
    pub fn uses_label(self) -> bool {
        matches!(self, Self::Label | Self::WindowLabel)
    }

    pub fn uses_window(self) -> bool {
        matches!(self, Self::Window | Self::WindowLabel)
    }
}

/// Window size in hours; `f64::INFINITY` is written as `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Window(pub f64);

impl Window {
    pub const INFINITE: Window = Window(f64::INFINITY);

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for Window {
    type Err = crate::NclError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => Ok(Window::INFINITE),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|w| *w >= 0.0)
                .map(Window)
                .ok_or_else(|| config_err(format!("invalid window size {s:?}"))),
        }
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Window;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative number of hours or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Window, E> {
                if v >= 0.0 {
                    Ok(Window(v))
                } else {
                    Err(E::custom("window size must be non-negative"))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Window, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Window, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Window, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborhoodSpec {
    pub kind: NeighborhoodKind,
    #[serde(default = "zero_window")]
    pub w: Window,
    /// Label task for the label kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

fn zero_window() -> Window {
    Window(0.0)
}

impl NeighborhoodSpec {
    pub fn window(w: Window) -> Self {
        Self {
            kind: NeighborhoodKind::Window,
            w,
            task: None,
        }
    }

    pub fn label(task: &str) -> Self {
        Self {
            kind: NeighborhoodKind::Label,
            w: Window(0.0),
            task: Some(task.to_string()),
        }
    }

    pub fn window_label(w: Window, task: &str) -> Self {
        Self {
            kind: NeighborhoodKind::WindowLabel,
            w,
            task: Some(task.to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.0.is_nan() || self.w.0 < 0.0 {
            return Err(config_err(format!("window size {} must be non-negative", self.w)));
        }
        if self.kind.uses_label() && self.task.is_none() {
            return Err(config_err("label neighborhoods need a task"));
        }
        Ok(())
    }
}

fn label_of(m: &SampleMeta) -> Result<u32> {
    m.label
        .ok_or_else(|| data_err(format!("sample (stay {}, t {}) has no label for a label neighborhood", m.stay, m.t)))
}

fn in_window(a: &SampleMeta, b: &SampleMeta, w: Window) -> bool {
    a.uid == b.uid || (a.stay == b.stay && (a.t.abs_diff(b.t) as f64) < w.0)
}

/// `n(a, b)`. Two views of the same source are always window neighbors.
pub fn is_neighbor(a: &SampleMeta, b: &SampleMeta, spec: &NeighborhoodSpec) -> Result<bool> {
    Ok(match spec.kind {
        NeighborhoodKind::Window => in_window(a, b, spec.w),
        NeighborhoodKind::Label => label_of(a)? == label_of(b)?,
        NeighborhoodKind::WindowLabel => in_window(a, b, spec.w) && label_of(a)? == label_of(b)?,
    })
}

/// Neighborhood masks for `rows` anchors against `cols` queue entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`; `N(i)` excluding the self column.
    pub neighbors: Vec<bool>,
    /// Queue column of each anchor's paired view.
    pub v_index: Vec<usize>,
}

impl Masks {
    pub fn row(&self, i: usize) -> &[bool] {
        &self.neighbors[i * self.cols..(i + 1) * self.cols]
    }

    /// Only the anchor's own column, `k == i`.
    pub fn is_self(&self, i: usize, k: usize) -> bool {
        i == k
    }

    /// Row-major mask of every column but the self column.
    pub fn non_self(&self) -> Vec<bool> {
        let mut m = vec![true; self.rows * self.cols];
        for i in 0..self.rows {
            m[i * self.cols + i] = false;
        }
        m
    }

    pub fn neighbor_counts(&self) -> Vec<usize> {
        (0..self.rows).map(|i| self.row(i).iter().filter(|&&b| b).count()).collect()
    }
}

/// Builds `N(i)` for every anchor over the queue.
///
/// The first `anchors.len()` queue entries must be the anchors themselves in
/// order; each anchor must share its uid with exactly one other anchor.
pub fn build_masks(anchors: &[SampleMeta], queue: &[SampleMeta], spec: &NeighborhoodSpec) -> Result<Masks> {
    spec.validate()?;
    let (rows, cols) = (anchors.len(), queue.len());
    if rows > cols {
        return Err(data_err(format!("queue of {cols} cannot hold the {rows} current views")));
    }
    if anchors.iter().zip(queue).any(|(a, q)| a != q) {
        return Err(data_err("queue front is not aligned with the current batch"));
    }
    let mut by_uid: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, a) in anchors.iter().enumerate() {
        by_uid.entry(a.uid).or_default().push(i);
    }
    let mut v_index = Vec::with_capacity(rows);
    for (i, a) in anchors.iter().enumerate() {
        match by_uid[&a.uid].as_slice() {
            [x, y] => v_index.push(if *x == i { *y } else { *x }),
            other => {
                return Err(data_err(format!(
                    "uid {} has {} views in the batch; expected 2",
                    a.uid,
                    other.len()
                )))
            }
        }
    }
    if spec.kind.uses_label() {
        for m in anchors.iter().chain(queue) {
            label_of(m)?;
        }
    }
    let mut neighbors = vec![false; rows * cols];
    for (i, a) in anchors.iter().enumerate() {
        let row = &mut neighbors[i * cols..(i + 1) * cols];
        for (k, q) in queue.iter().enumerate() {
            row[k] = k != i && is_neighbor(a, q, spec)?;
        }
    }
    Ok(Masks {
        rows,
        cols,
        neighbors,
        v_index,
    })
}
