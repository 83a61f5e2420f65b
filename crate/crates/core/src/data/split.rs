use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::error::{data_err, Result};
use crate::rng::{stream, streams};

/// Errors if any patient id appears in more than one split.
pub fn check_patient_disjoint<'a>(stays: impl IntoIterator<Item = (&'a str, Split)>) -> Result<()> {
    let mut seen: HashMap<&str, Split> = HashMap::new();
    for (patient, split) in stays {
        if let Some(&prev) = seen.get(patient) {
            if prev != split {
                return Err(data_err(format!(
                    "patient {patient} appears in both {} and {}",
                    prev.as_str(),
                    split.as_str()
                )));
            }
        } else {
            seen.insert(patient, split);
        }
    }
    Ok(())
}

/// Fraction of hourly samples of `stays` whose label for `task` is non-zero.
pub fn label_prevalence(ds: &Dataset, stays: &[usize], task: usize) -> f64 {
    let (mut pos, mut total) = (0usize, 0usize);
    for &s in stays {
        let labels = &ds.stays[s].labels[task];
        pos += labels.iter().filter(|&&y| y > 0).count();
        total += labels.len();
    }
    if total == 0 {
        0.0
    } else {
        pos as f64 / total as f64
    }
}

/// Patient-level subset of `stays` holding `fraction` of the patients,
/// stratified on whether a patient has any positive hour for `task`.
///
/// Each non-empty group keeps at least one patient, so small cohorts still
/// yield both classes at low fractions. Returns stay indices in their
/// original order.
pub fn stratified_label_fraction_split(
    ds: &Dataset,
    stays: &[usize],
    task: usize,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(data_err(format!("label fraction {fraction} must lie in (0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(stays.to_vec());
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &s in stays {
        by_patient.entry(ds.stays[s].patient_id.as_str()).or_default().push(s);
    }
    let (mut positive, mut negative): (Vec<&str>, Vec<&str>) = (Vec::new(), Vec::new());
    for (patient, idx) in &by_patient {
        let any_pos = idx.iter().any(|&s| ds.stays[s].labels[task].iter().any(|&y| y > 0));
        if any_pos {
            positive.push(patient);
        } else {
            negative.push(patient);
        }
    }
    if positive.is_empty() {
        return Err(data_err(format!("no patient has a positive label for task {task}")));
    }
    let keep = |n: usize| ((fraction * n as f64).round() as usize).clamp(1, n.max(1));
    let n_pos = keep(positive.len());
    let n_neg = if negative.is_empty() { 0 } else { keep(negative.len()) };
    let mut rng = stream(seed, streams::SPLIT);
    positive.shuffle(&mut rng);
    negative.shuffle(&mut rng);
    let chosen: std::collections::HashSet<&str> = positive[..n_pos]
        .iter()
        .chain(&negative[..n_neg])
        .copied()
        .collect();
    Ok(stays
        .iter()
        .copied()
        .filter(|&s| chosen.contains(ds.stays[s].patient_id.as_str()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_patient_rejected() {
        let ok = [("a", Split::Train), ("a", Split::Train), ("b", Split::Test)];
        assert!(check_patient_disjoint(ok).is_ok());
        let bad = [("a", Split::Train), ("b", Split::Test), ("a", Split::Val)];
        assert!(check_patient_disjoint(bad).is_err());
    }
}
