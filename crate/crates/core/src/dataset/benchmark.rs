use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureDescriptor, FeatureSchema, FlowRecord, Provenance};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

const STANDARD_SPEC: &str = include_str!("../../benchmarks/standard_drift.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub vocabulary: Vec<String>,
}

/// Class-conditional generating distribution for both domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDriftSpec {
    pub name: String,
    /// Source-domain mean, one entry per continuous feature.
    pub mean: Vec<f64>,
    /// Standard deviation shared by every continuous feature of the class.
    pub std: f64,
    /// Target-domain mean translation.
    #[serde(default)]
    pub shift: Vec<f64>,
    /// 0 makes the class novel: present in the target only.
    pub source_count: usize,
    pub target_count: usize,
    /// Source state probabilities per categorical feature; uniform if omitted.
    #[serde(default)]
    pub categorical: Vec<Vec<f64>>,
    /// Target state probabilities; the source ones if omitted.
    #[serde(default)]
    pub target_categorical: Option<Vec<Vec<f64>>>,
}

/// Desk-scale two-domain benchmark with per-class Gaussian drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub continuous_features: Vec<String>,
    #[serde(default)]
    pub categorical_features: Vec<CategoricalSpec>,
    pub benign_class: String,
    pub classes: Vec<ClassDriftSpec>,
    pub seed: u64,
    /// Seed of the target stream; derived from `seed` when omitted.
    #[serde(default)]
    pub target_seed: Option<u64>,
}

impl DriftSpec {
    /// The benchmark shipped with the crate: six classes, two source
    /// minorities below 5% and one class that only appears in the target.
    pub fn standard() -> Self {
        serde_json::from_str(STANDARD_SPEC).expect("bundled benchmark spec parses")
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes.len() < 2 {
            return bad("drift spec needs at least 2 classes".into());
        }
        if self.continuous_features.is_empty() {
            return bad("drift spec needs at least one continuous feature".into());
        }
        if self.classes.iter().filter(|c| c.source_count > 0).count() < 2 {
            return bad("source domain needs at least 2 classes".into());
        }
        if !self.classes.iter().any(|c| c.name == self.benign_class) {
            return bad(format!("benign class {:?} not among classes", self.benign_class));
        }
        let d = self.continuous_features.len();
        for c in &self.classes {
            if c.mean.len() != d || (!c.shift.is_empty() && c.shift.len() != d) {
                return bad(format!("class {:?}: mean/shift length must be {d}", c.name));
            }
            if c.mean.iter().chain(&c.shift).any(|v| !v.is_finite()) {
                return bad(format!("class {:?}: non-finite mean or shift", c.name));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return bad(format!("class {:?}: std must be positive", c.name));
            }
            if c.source_count == 0 && c.target_count == 0 {
                return bad(format!("class {:?} is present in neither domain", c.name));
            }
            self.check_probs(&c.name, &c.categorical)?;
            if let Some(t) = &c.target_categorical {
                self.check_probs(&c.name, t)?;
            }
        }
        self.schema()?;
        Ok(())
    }

    fn check_probs(&self, class: &str, probs: &[Vec<f64>]) -> Result<()> {
        if probs.is_empty() {
            return Ok(());
        }
        if probs.len() != self.categorical_features.len() {
            return Err(Error::Config(format!(
                "class {class:?}: expected {} categorical distributions",
                self.categorical_features.len()
            )));
        }
        for (p, f) in probs.iter().zip(&self.categorical_features) {
            let sum: f64 = p.iter().sum();
            if p.len() != f.vocabulary.len() || p.iter().any(|&x| x < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "class {class:?}: invalid state distribution for {:?}",
                    f.name
                )));
            }
        }
        Ok(())
    }

    /// Continuous features first, then categorical ones.
    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut features: Vec<FeatureDescriptor> = self
            .continuous_features
            .iter()
            .map(FeatureDescriptor::continuous)
            .collect();
        features.extend(
            self.categorical_features
                .iter()
                .map(|c| FeatureDescriptor::categorical(&c.name, c.vocabulary.iter().cloned())),
        );
        FeatureSchema::new(
            features,
            "Label",
            self.classes.iter().map(|c| c.name.clone()).collect(),
            self.benign_class.clone(),
        )
    }

    pub fn effective_target_seed(&self) -> u64 {
        self.target_seed
            .unwrap_or_else(|| derive_seed(self.seed, "benchmark-target"))
    }
}

enum Domain {
    Source,
    Target,
}

fn draw_domain(spec: &DriftSpec, schema: &FeatureSchema, domain: Domain) -> Result<Vec<FlowRecord>> {
    let seed = match domain {
        Domain::Source => spec.seed,
        Domain::Target => spec.effective_target_seed(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.continuous_features.len();
    let mut records = Vec::new();
    for (label, class) in spec.classes.iter().enumerate() {
        let (count, probs) = match domain {
            Domain::Source => (class.source_count, &class.categorical),
            Domain::Target => (
                class.target_count,
                class.target_categorical.as_ref().unwrap_or(&class.categorical),
            ),
        };
        let samplers = spec
            .categorical_features
            .iter()
            .enumerate()
            .map(|(k, f)| match probs.get(k) {
                Some(p) => WeightedIndex::new(p).map_err(|e| Error::Config(e.to_string())),
                None => WeightedIndex::new(vec![1.0; f.vocabulary.len()]).map_err(|e| Error::Config(e.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..count {
            let mut values = Vec::with_capacity(schema.dim());
            for j in 0..d {
                let shift = match domain {
                    Domain::Target => class.shift.get(j).copied().unwrap_or(0.0),
                    Domain::Source => 0.0,
                };
                let z: f64 = rng.sample(StandardNormal);
                values.push(class.mean[j] + shift + class.std * z);
            }
            for s in &samplers {
                values.push(s.sample(&mut rng) as f64);
            }
            records.push(FlowRecord::new(values, Some(label)).with_origin(Provenance::Synthetic));
        }
    }
    records.shuffle(&mut rng);
    Ok(records)
}

/// Draws the labeled source set and the target set. The target carries its
/// labels as hidden truth for the simulated oracle.
pub fn generate_drift_benchmark(spec: &DriftSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let schema = Arc::new(spec.schema()?);
    let source = Dataset::labeled(Arc::clone(&schema), draw_domain(spec, &schema, Domain::Source)?)?;
    let target =
        Dataset::labeled(Arc::clone(&schema), draw_domain(spec, &schema, Domain::Target)?)?.hide_labels()?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(shift: f64) -> DriftSpec {
        DriftSpec {
            continuous_features: vec!["a".into(), "b".into()],
            categorical_features: vec![CategoricalSpec {
                name: "proto".into(),
                vocabulary: vec!["tcp".into(), "udp".into()],
            }],
            benign_class: "Benign".into(),
            classes: vec![
                ClassDriftSpec {
                    name: "Benign".into(),
                    mean: vec![0.0, 0.0],
                    std: 1.0,
                    shift: vec![shift, 0.0],
                    source_count: 300,
                    target_count: 300,
                    categorical: vec![vec![0.7, 0.3]],
                    target_categorical: None,
                },
                ClassDriftSpec {
                    name: "DoS".into(),
                    mean: vec![4.0, 4.0],
                    std: 0.5,
                    shift: vec![],
                    source_count: 100,
                    target_count: 100,
                    categorical: vec![],
                    target_categorical: None,
                },
            ],
            seed: 11,
            target_seed: None,
        }
    }

    #[test]
    fn standard_spec_is_valid() {
        let spec = DriftSpec::standard();
        spec.validate().unwrap();
        assert_eq!(spec.classes.len(), 6);
        assert_eq!(spec.classes.iter().filter(|c| c.source_count == 0).count(), 1);
        let total: usize = spec.classes.iter().map(|c| c.source_count).sum();
        let minorities = spec
            .classes
            .iter()
            .filter(|c| c.source_count > 0 && (c.source_count as f64) < 0.05 * total as f64)
            .count();
        assert_eq!(minorities, 2);
    }

    #[test]
    fn zero_shift_same_seed_is_identical() {
        let mut spec = two_class(0.0);
        spec.target_seed = Some(spec.seed);
        let (s, t) = generate_drift_benchmark(&spec).unwrap();
        assert_eq!(s.records().iter().map(|r| &r.values).collect::<Vec<_>>(),
                   t.records().iter().map(|r| &r.values).collect::<Vec<_>>());
        assert_eq!(s.labels().unwrap(), t.hidden_truth().unwrap());
    }

    #[test]
    fn deterministic_and_counts() {
        let spec = two_class(1.0);
        let (s1, t1) = generate_drift_benchmark(&spec).unwrap();
        let (s2, t2) = generate_drift_benchmark(&spec).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert_eq!(s1.class_counts().unwrap(), vec![300, 100]);
        assert!(t1.has_hidden_truth() && !t1.is_labeled());
        assert_eq!(t1.provenance(), Some(Provenance::Synthetic));
    }

    #[test]
    fn novel_class_only_in_target() {
        let mut spec = two_class(0.0);
        spec.classes.push(ClassDriftSpec {
            name: "Infiltration".into(),
            mean: vec![-5.0, 5.0],
            std: 0.3,
            shift: vec![],
            source_count: 0,
            target_count: 40,
            categorical: vec![],
            target_categorical: None,
        });
        let (s, t) = generate_drift_benchmark(&spec).unwrap();
        assert_eq!(s.class_counts().unwrap()[2], 0);
        assert_eq!(t.hidden_truth().unwrap().iter().filter(|&&l| l == 2).count(), 40);
    }

    #[test]
    fn zero_shift_means_converge() {
        let mut spec = two_class(0.0);
        spec.classes[0].source_count = 20_000;
        spec.classes[0].target_count = 20_000;
        let (s, t) = generate_drift_benchmark(&spec).unwrap();
        let mean = |ds: &Dataset, labels: &[usize]| {
            let v: Vec<f64> = ds
                .records()
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == 0)
                .map(|(r, _)| r.values[0])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let diff = mean(&s, &s.labels().unwrap()) - mean(&t, t.hidden_truth().unwrap());
        assert!(diff.abs() < 0.05, "mean difference {diff}");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = two_class(0.0);
        spec.classes[0].shift = vec![f64::INFINITY, 0.0];
        assert!(spec.validate().is_err());
        let mut spec = two_class(0.0);
        spec.classes.truncate(1);
        assert!(spec.validate().is_err());
        let mut spec = two_class(0.0);
        spec.classes[0].categorical = vec![vec![0.5, 0.6]];
        assert!(spec.validate().is_err());
    }
}
