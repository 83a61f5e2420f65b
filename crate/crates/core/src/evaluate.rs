//! Frozen-representation evaluation: probes per task, head, label fraction
//! and seed, aggregated as mean and standard deviation.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{stratified_label_fraction_split, Dataset, Split};
use crate::encoder::{Checkpoint, HeadKind};
use crate::error::{config_err, NclError, Result};
use crate::neighborhood::{is_neighbor, NeighborhoodSpec, SampleMeta};
use crate::metrics::{argmax_rows, auprc, auroc, linear_weighted_kappa};
use crate::probe::{extract_representations, fit_probe, ProbeConfig, Representations};
use crate::rng::{stream, streams};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub tasks: Vec<String>,
    pub heads: Vec<HeadKind>,
    /// One probe (and one label-fraction split) per seed.
    pub seeds: Vec<u64>,
    pub label_fractions: Vec<f64>,
    /// Task whose labels the representation was trained with, if any.
    pub pretrain_task: Option<String>,
    /// Cap on samples drawn from each split; sampling is seeded by `sample_seed`.
    pub max_train_samples: usize,
    pub max_eval_samples: usize,
    pub sample_seed: u64,
    pub eval_split: Split,
    pub probe: ProbeConfig,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            tasks: vec!["decompensation".into()],
            heads: vec![HeadKind::Linear],
            seeds: vec![0, 1, 2],
            label_fractions: vec![1.0],
            pretrain_task: None,
            max_train_samples: 20_000,
            max_eval_samples: 20_000,
            sample_seed: 0,
            eval_split: Split::Test,
            probe: ProbeConfig::default(),
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.heads.is_empty() || self.seeds.is_empty() {
            return Err(config_err("protocol needs tasks, heads and seeds"));
        }
        if self.label_fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(config_err("label fractions must lie in (0, 1]"));
        }
        if self.eval_split == Split::Val {
            return Err(config_err("the validation split is reserved for early stopping"));
        }
        self.probe.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub pretrain_task: Option<String>,
    pub task: String,
    pub head: HeadKind,
    pub label_fraction: f64,
    pub metric: String,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Scaled to 100, as `mean ± std`.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub method: String,
    pub entries: Vec<ReportEntry>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.1} ± {:.1}", 100.0 * mean, 100.0 * std)
}

impl Report {
    pub fn entry(&self, task: &str, head: HeadKind, fraction: f64, metric: &str) -> Option<&ReportEntry> {
        self.entries
            .iter()
            .find(|e| e.task == task && e.head == head && e.label_fraction == fraction && e.metric == metric)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,pretrain_task,task,head,label_fraction,metric,n,mean,std,summary\n");
        for e in &self.entries {
            let head = match e.head {
                HeadKind::Linear => "linear",
                HeadKind::Mlp => "mlp",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.method,
                e.pretrain_task.as_deref().unwrap_or(""),
                e.task,
                head,
                e.label_fraction,
                e.metric,
                e.values.len(),
                e.mean,
                e.std,
                e.summary
            );
        }
        out
    }
}

fn subsample(mut pool: Vec<(usize, usize)>, max: usize, seed: u64) -> Vec<(usize, usize)> {
    if pool.len() > max {
        pool.shuffle(&mut stream(seed, streams::SPLIT));
        pool.truncate(max);
        pool.sort_unstable();
    }
    pool
}

/// Metric values of one fitted probe on `test`.
fn score(probe: &crate::probe::Probe, test: &Representations, n_classes: usize) -> Result<Vec<(&'static str, f64)>> {
    let proba = probe.predict_proba(&test.z)?;
    if n_classes == 2 {
        let scores: Vec<f64> = proba.data().chunks(2).map(|r| r[1]).collect();
        let labels: Vec<bool> = test.labels.iter().map(|&y| y == 1).collect();
        Ok(vec![("auroc", auroc(&scores, &labels)?), ("auprc", auprc(&scores, &labels)?)])
    } else {
        let pred = argmax_rows(proba.data(), n_classes);
        Ok(vec![("kappa", linear_weighted_kappa(&pred, &test.labels, n_classes)?)])
    }
}

/// Mean cosine similarity of representation pairs that are neighbors under
/// `spec`. `samples[i]` is the `(stay, hour)` of row `i`; labels come from
/// `reps.labels`.
pub fn neighborhood_cosine(reps: &Representations, samples: &[(usize, usize)], spec: &NeighborhoodSpec) -> Result<f64> {
    if samples.len() != reps.len() {
        return Err(config_err("samples and representations differ in length"));
    }
    let metas: Vec<SampleMeta> = samples
        .iter()
        .zip(&reps.labels)
        .enumerate()
        .map(|(i, (&(s, t), &y))| SampleMeta {
            stay: s as u32,
            t: t as u32,
            label: Some(y),
            uid: i as u64,
        })
        .collect();
    let d = reps.z.last_dim();
    let (mut sum, mut pairs) = (0.0, 0usize);
    for i in 0..metas.len() {
        let a = reps.z.row(i);
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in i + 1..metas.len() {
            if !is_neighbor(&metas[i], &metas[j], spec)? {
                continue;
            }
            let b = reps.z.row(j);
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            sum += (0..d).map(|k| a[k] * b[k]).sum::<f64>() / (na * nb);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(NclError::Metric("no neighbor pairs among the samples".into()));
    }
    Ok(sum / pairs as f64)
}

fn with_context(err: NclError, context: &str) -> NclError {
    match err {
        NclError::Metric(m) => NclError::Metric(format!("{context}: {m}")),
        NclError::Data(m) => NclError::Data(format!("{context}: {m}")),
        other => other,
    }
}

/// Probes the checkpoint's frozen encoder on every task, head, label
/// fraction and seed of the protocol.
pub fn evaluate_run(ck: &Checkpoint, ds: &Dataset, protocol: &EvalProtocol) -> Result<Report> {
    protocol.validate()?;
    let mut entries = Vec::new();
    let train_stays = ds.split_indices(Split::Train);
    for task_name in &protocol.tasks {
        let task = ds.task_index(task_name)?;
        let n_classes = ds.schema.tasks[task].n_classes as usize;
        let reps = |split: Split, max: usize| {
            let pool = subsample(ds.sample_pool(&ds.split_indices(split)), max, protocol.sample_seed);
            extract_representations(&ck.encoder, &ck.encoder_params, ds, &pool, task, ck.history)
        };
        let train = reps(Split::Train, protocol.max_train_samples)?;
        let val = reps(Split::Val, protocol.max_eval_samples)?;
        let test = reps(protocol.eval_split, protocol.max_eval_samples)?;
        for &fraction in &protocol.label_fractions {
            for &head in &protocol.heads {
                let mut per_metric: Vec<(&'static str, Vec<f64>)> = Vec::new();
                for &seed in &protocol.seeds {
                    let context = format!("task {task_name}, fraction {fraction}, seed {seed}");
                    let subset: HashSet<usize> =
                        stratified_label_fraction_split(ds, &train_stays, task, fraction, seed)
                            .map_err(|e| with_context(e, &context))?
                            .into_iter()
                            .collect();
                    let train_sub = train.filter_stays(|s| subset.contains(&s));
                    let probe = fit_probe(&train_sub, &val, head, n_classes, &protocol.probe, seed)
                        .map_err(|e| with_context(e, &context))?;
                    for (name, v) in score(&probe, &test, n_classes).map_err(|e| with_context(e, &context))? {
                        match per_metric.iter_mut().find(|(n, _)| *n == name) {
                            Some((_, vals)) => vals.push(v),
                            None => per_metric.push((name, vec![v])),
                        }
                    }
                }
                for (metric, values) in per_metric {
                    let (mean, std) = mean_std(&values);
                    entries.push(ReportEntry {
                        pretrain_task: protocol.pretrain_task.clone(),
                        task: task_name.clone(),
                        head,
                        label_fraction: fraction,
                        metric: metric.to_string(),
                        summary: format_mean_std(mean, std),
                        values,
                        mean,
                        std,
                    });
                }
            }
        }
    }
    Ok(Report {
        format_version: REPORT_VERSION,
        method: ck.method.clone(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn summary_format() {
        assert_eq!(format_mean_std(0.9083, 0.0021), "90.8 ± 0.2");
    }
}
