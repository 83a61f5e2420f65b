//! Variable and task declarations shared by raw and processed datasets.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VariableKind {
    Continuous,
    /// Values are category codes. When `categories` is omitted the vocabulary
    /// is learned from the training split.
    Categorical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        categories: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

impl Variable {
    pub fn continuous(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Continuous,
        }
    }

    pub fn categorical(name: &str, categories: Option<Vec<f64>>) -> Self {
        Self {
            name: name.to_string(),
            kind: VariableKind::Categorical { categories },
        }
    }
}

/// An hourly prediction task. Two classes means binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub n_classes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub channels: Vec<Variable>,
    #[serde(default)]
    pub static_features: Vec<Variable>,
    pub tasks: Vec<Task>,
}

impl Schema {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let names = self
            .channels
            .iter()
            .map(|v| &v.name)
            .chain(self.static_features.iter().map(|v| &v.name))
            .chain(self.tasks.iter().map(|t| &t.name));
        for name in names {
            if name.is_empty() || name.contains([',', '\n', '"']) || name == "hour" {
                return Err(config_err(format!("invalid column name {name:?}")));
            }
            if !seen.insert(name.clone()) {
                return Err(config_err(format!("duplicate column name {name:?}")));
            }
        }
        for t in &self.tasks {
            if t.n_classes < 2 {
                return Err(config_err(format!("task {} needs at least 2 classes", t.name)));
            }
        }
        Ok(())
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| config_err(format!("unknown task {name:?}")))
    }
}

/// Layout of the hourly benchmark derived from MIMIC-III: 11 continuous
/// measurements plus time since admission, five categorical scales, and
/// height as a static feature.
///
/// Encodes to 42 time-series channels.
pub fn mimic_like_schema() -> Schema {
    let range = |lo: i32, hi: i32| Some((lo..=hi).map(f64::from).collect());
    let mut channels = vec![Variable::continuous("time_since_admission")];
    channels.push(Variable::categorical("capillary_refill_rate", range(0, 1)));
    channels.push(Variable::categorical("gcs_eye_opening", range(1, 4)));
    channels.push(Variable::categorical("gcs_motor_response", range(1, 6)));
    channels.push(Variable::categorical("gcs_verbal_response", range(1, 5)));
    channels.push(Variable::categorical("gcs_total", range(3, 15)));
    for name in [
        "diastolic_bp",
        "fio2",
        "glucose",
        "heart_rate",
        "mean_arterial_pressure",
        "spo2",
        "respiratory_rate",
        "systolic_bp",
        "temperature",
        "weight",
        "ph",
    ] {
        channels.push(Variable::continuous(name));
    }
    Schema {
        channels,
        static_features: vec![Variable::continuous("height")],
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = mimic_like_schema();
        s.channels.push(Variable::continuous("ph"));
        assert!(s.validate().is_err());
        assert!(mimic_like_schema().validate().is_ok());
    }

    #[test]
    fn json_shape() {
        let v = Variable::categorical("gcs", Some(vec![1.0, 2.0]));
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"name":"gcs","kind":"categorical","categories":[1.0,2.0]}"#);
        let back: Variable = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
