use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a column carries discrete metadata states or a continuous measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Protocol, port range, flag state and similar discrete metadata.
    Categorical { vocabulary: Vec<String> },
    /// Packet sizes, durations, rates.
    Continuous {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        unit: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureDescriptor {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Continuous { unit: None },
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        vocabulary: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical {
                vocabulary: vocabulary.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.kind, FeatureKind::Continuous { .. })
    }

    pub fn vocabulary(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { vocabulary } => Some(vocabulary),
            FeatureKind::Continuous { .. } => None,
        }
    }
}

fn default_label_column() -> String {
    "Label".to_string()
}

fn default_benign() -> String {
    "Benign".to_string()
}

/// Column layout and class vocabulary shared by every record of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDescriptor>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    pub classes: Vec<String>,
    /// Class treated as the negative (non-attack) class by the binary metrics
    /// and the benign-likeness filter.
    #[serde(default = "default_benign")]
    pub benign_class: String,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<FeatureDescriptor>,
        label_column: impl Into<String>,
        classes: Vec<String>,
        benign_class: impl Into<String>,
    ) -> Result<Self> {
        let schema = Self {
            features,
            label_column: label_column.into(),
            classes,
            benign_class: benign_class.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: Self = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("schema has no features".into()));
        }
        let mut names = HashSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {:?}", f.name)));
            }
            if let Some(vocab) = f.vocabulary() {
                if vocab.is_empty() {
                    return Err(Error::Schema(format!("feature {:?} has empty vocabulary", f.name)));
                }
                let mut seen = HashSet::new();
                for s in vocab {
                    if !seen.insert(s.as_str()) {
                        return Err(Error::Schema(format!(
                            "duplicate state {s:?} in vocabulary of {:?}",
                            f.name
                        )));
                    }
                }
            }
        }
        if names.contains(self.label_column.as_str()) {
            return Err(Error::Schema(format!(
                "label column {:?} collides with a feature name",
                self.label_column
            )));
        }
        if self.classes.len() < 2 {
            return Err(Error::Schema("class vocabulary needs at least 2 classes".into()));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!("duplicate class {c:?}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn benign_index(&self) -> Option<usize> {
        self.class_index(&self.benign_class)
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_continuous())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn categorical_indices(&self) -> Vec<usize> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.is_continuous())
            .map(|(i, _)| i)
            .collect()
    }

    /// Width of the encoded matrix: continuous columns plus one-hot blocks.
    pub fn encoded_dim(&self) -> usize {
        self.features
            .iter()
            .map(|f| f.vocabulary().map_or(1, <[String]>::len))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cic_like() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureDescriptor::categorical("Protocol", ["TCP", "UDP"]),
                FeatureDescriptor::continuous("PSH Flag Count"),
                FeatureDescriptor::continuous("Active Mean"),
                FeatureDescriptor::continuous("Fwd IAT Mean"),
            ],
            "Label",
            vec!["Benign".into(), "Infiltration".into()],
            "Benign",
        )
        .unwrap()
    }

    #[test]
    fn encoded_dim_counts_one_hot_blocks() {
        let s = cic_like();
        assert_eq!(s.encoded_dim(), 5);
        assert_eq!(s.continuous_indices(), vec![1, 2, 3]);
        assert_eq!(s.categorical_indices(), vec![0]);
        assert_eq!(s.benign_index(), Some(0));
    }

    #[test]
    fn rejects_duplicates() {
        let mut s = cic_like();
        s.features.push(FeatureDescriptor::continuous("Active Mean"));
        assert!(matches!(s.validate(), Err(Error::Schema(_))));

        let mut s = cic_like();
        s.features[0] = FeatureDescriptor::categorical("Protocol", ["TCP", "TCP"]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = cic_like();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"categorical\""));
        let back: FeatureSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
