//! On-disk layout: one CSV per stay (`hour`, channel columns, label columns)
//! plus `manifest.json` holding the schema, splits and scaler statistics.
//! Missing raw values are empty cells.

use std::fs;
use std::path::Path;

use ncl_autograd::Tensor;
use serde::{Deserialize, Serialize};

use super::preprocess::ScalerStats;
use super::schema::Schema;
use super::{Dataset, PatientStay, RawDataset, RawStay, Split};
use crate::error::{data_err, NclError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Raw,
    Processed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayEntry {
    pub stay_id: String,
    pub patient_id: String,
    pub split: Split,
    pub file: String,
    /// `null` marks a missing raw value.
    pub static_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub schema: Schema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<ScalerStats>,
    /// CSV value columns, between `hour` and the task columns.
    pub columns: Vec<String>,
    #[serde(default)]
    pub static_names: Vec<String>,
    pub stays: Vec<StayEntry>,
}

fn check_stay_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(data_err(format!("stay id {id:?} is not a safe file name")))
    }
}

fn write_stay_csv(path: &Path, columns: &[String], tasks: &[String], rows: &[&[f64]], labels: &[Vec<u32>]) -> Result<()> {
    let mut out = String::from("hour");
    for c in columns.iter().chain(tasks) {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (t, row) in rows.iter().enumerate() {
        out.push_str(&t.to_string());
        for v in row.iter() {
            out.push(',');
            if !v.is_nan() {
                out.push_str(&v.to_string());
            }
        }
        for l in labels {
            out.push(',');
            out.push_str(&l[t].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| NclError::io(path, e))
}

/// Rows of values and per-task label columns.
fn read_stay_csv(path: &Path, columns: &[String], n_tasks: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<u32>>)> {
    let text = fs::read_to_string(path).map_err(|e| NclError::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| data_err(format!("{}: empty file", path.display())))?;
    let names: Vec<&str> = header.split(',').collect();
    let width = 1 + columns.len() + n_tasks;
    if names.len() != width || names[0] != "hour" || names[1..=columns.len()] != columns.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(data_err(format!("{}: header does not match the manifest", path.display())));
    }
    let mut rows = Vec::new();
    let mut labels = vec![Vec::new(); n_tasks];
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| data_err(format!("{}: line {}: {what}", path.display(), i + 2));
        if cells.len() != width {
            return Err(bad("wrong number of cells"));
        }
        if cells[0].parse::<usize>().ok() != Some(i) {
            return Err(bad("hours must be consecutive from 0"));
        }
        let row = cells[1..=columns.len()]
            .iter()
            .map(|c| if c.is_empty() { Ok(f64::NAN) } else { c.parse::<f64>().map_err(|_| bad("bad number")) })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
        for (k, c) in cells[1 + columns.len()..].iter().enumerate() {
            labels[k].push(c.parse::<u32>().map_err(|_| bad("bad label"))?);
        }
    }
    Ok((rows, labels))
}

fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text).map_err(|e| NclError::io(&path, e))
}

fn read_manifest(dir: &Path, kind: DatasetKind) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| NclError::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.format_version != FORMAT_VERSION {
        return Err(data_err(format!("unsupported manifest format_version {}", m.format_version)));
    }
    if m.kind != kind {
        return Err(data_err(format!("{}: expected a {kind:?} dataset, found {:?}", path.display(), m.kind)));
    }
    m.schema.validate()?;
    for s in &m.stays {
        check_stay_id(&s.stay_id)?;
    }
    Ok(m)
}

fn task_names(schema: &Schema) -> Vec<String> {
    schema.tasks.iter().map(|t| t.name.clone()).collect()
}

fn to_option(v: &[f64]) -> Vec<Option<f64>> {
    v.iter().map(|x| (!x.is_nan()).then_some(*x)).collect()
}

pub fn save_raw(raw: &RawDataset, dir: &Path) -> Result<()> {
    raw.validate()?;
    fs::create_dir_all(dir).map_err(|e| NclError::io(dir, e))?;
    let columns: Vec<String> = raw.schema.channels.iter().map(|v| v.name.clone()).collect();
    let tasks = task_names(&raw.schema);
    let mut entries = Vec::with_capacity(raw.stays.len());
    for s in &raw.stays {
        check_stay_id(&s.stay_id)?;
        let file = format!("{}.csv", s.stay_id);
        let rows: Vec<&[f64]> = s.series.iter().map(Vec::as_slice).collect();
        write_stay_csv(&dir.join(&file), &columns, &tasks, &rows, &s.labels)?;
        entries.push(StayEntry {
            stay_id: s.stay_id.clone(),
            patient_id: s.patient_id.clone(),
            split: s.split,
            file,
            static_values: to_option(&s.static_values),
        });
    }
    write_manifest(
        dir,
        &DatasetManifest {
            format_version: FORMAT_VERSION,
            kind: DatasetKind::Raw,
            schema: raw.schema.clone(),
            stats: None,
            columns,
            static_names: raw.schema.static_features.iter().map(|v| v.name.clone()).collect(),
            stays: entries,
        },
    )
}

pub fn load_raw(dir: &Path) -> Result<RawDataset> {
    let m = read_manifest(dir, DatasetKind::Raw)?;
    let expected: Vec<String> = m.schema.channels.iter().map(|v| v.name.clone()).collect();
    if m.columns != expected {
        return Err(data_err("manifest columns do not match the schema channels"));
    }
    let mut stays = Vec::with_capacity(m.stays.len());
    for e in &m.stays {
        let (series, labels) = read_stay_csv(&dir.join(&e.file), &m.columns, m.schema.tasks.len())?;
        stays.push(RawStay {
            stay_id: e.stay_id.clone(),
            patient_id: e.patient_id.clone(),
            split: e.split,
            static_values: e.static_values.iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            series,
            labels,
        });
    }
    let raw = RawDataset { schema: m.schema, stays };
    raw.validate()?;
    Ok(raw)
}

pub fn save_processed(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NclError::io(dir, e))?;
    let tasks = task_names(&ds.schema);
    let c = ds.n_channels();
    let mut entries = Vec::with_capacity(ds.stays.len());
    for s in &ds.stays {
        check_stay_id(&s.stay_id)?;
        let file = format!("{}.csv", s.stay_id);
        let rows: Vec<&[f64]> = s.series.data().chunks(c.max(1)).collect();
        write_stay_csv(&dir.join(&file), &ds.channel_names, &tasks, &rows, &s.labels)?;
        entries.push(StayEntry {
            stay_id: s.stay_id.clone(),
            patient_id: s.patient_id.clone(),
            split: s.split,
            file,
            static_values: to_option(&s.static_features),
        });
    }
    write_manifest(
        dir,
        &DatasetManifest {
            format_version: FORMAT_VERSION,
            kind: DatasetKind::Processed,
            schema: ds.schema.clone(),
            stats: Some(ds.stats.clone()),
            columns: ds.channel_names.clone(),
            static_names: ds.static_names.clone(),
            stays: entries,
        },
    )
}

pub fn load_processed(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir, DatasetKind::Processed)?;
    let stats = m
        .stats
        .ok_or_else(|| data_err("processed manifest lacks scaler statistics"))?;
    if stats.encoded_channels() != m.columns.len() || stats.encoded_static() != m.static_names.len() {
        return Err(data_err("manifest columns do not match the scaler statistics"));
    }
    let mut stays = Vec::with_capacity(m.stays.len());
    for e in &m.stays {
        let (rows, labels) = read_stay_csv(&dir.join(&e.file), &m.columns, m.schema.tasks.len())?;
        let static_features: Vec<f64> = e
            .static_values
            .iter()
            .map(|v| v.ok_or_else(|| data_err(format!("stay {}: missing static value", e.stay_id))))
            .collect::<Result<_>>()?;
        if static_features.len() != m.static_names.len() {
            return Err(data_err(format!("stay {}: wrong static width", e.stay_id)));
        }
        let t_len = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(data_err(format!("stay {}: processed values must be finite", e.stay_id)));
        }
        stays.push(PatientStay {
            stay_id: e.stay_id.clone(),
            patient_id: e.patient_id.clone(),
            split: e.split,
            static_features,
            series: Tensor::new(vec![t_len, m.columns.len()], data)?,
            labels,
        });
    }
    super::check_patient_disjoint(stays.iter().map(|s| (s.patient_id.as_str(), s.split)))?;
    Ok(Dataset {
        schema: m.schema,
        stats,
        channel_names: m.columns,
        static_names: m.static_names,
        stays,
    })
}
