use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationConfig;
use crate::classifier::{LogisticConfig, MlpConfig};
use crate::dataset::{DriftSpec, LabelMode};
use crate::error::{Error, Result};
use crate::gmm::GmmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Netguard,
    Uncertainty,
    Coreset,
    Clue,
    /// Keep the source model.
    None,
    /// Train on the labeled training split of the target domain.
    Full,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Netguard => "netguard",
            StrategyKind::Uncertainty => "uncertainty",
            StrategyKind::Coreset => "coreset",
            StrategyKind::Clue => "clue",
            StrategyKind::None => "none",
            StrategyKind::Full => "full",
        }
    }

    pub fn uses_budget(self) -> bool {
        !matches!(self, StrategyKind::None | StrategyKind::Full)
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Simulated,
    /// Park after selection and wait for labels from the annotation service.
    Service,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptPolicy {
    /// Adapt regardless of the probe outcome; the probe is still reported.
    #[default]
    Always,
    /// Adapt only when the probe F1 falls below the degradation threshold.
    OnDegradation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// The synthetic drift benchmark; the shipped standard spec when neither
    /// `spec` nor `path` is given.
    Benchmark {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spec: Option<DriftSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
    Csv {
        schema: PathBuf,
        source: PathBuf,
        target: PathBuf,
        #[serde(default = "default_target_mode")]
        target_mode: LabelMode,
    },
}

fn default_target_mode() -> LabelMode {
    LabelMode::UnlabeledWithHiddenTruth
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Benchmark { spec: None, path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub run_id: String,
    pub data: DataSource,
    pub strategy: StrategyKind,
    /// Fraction of the unlabeled target set sent to the oracle.
    pub budget: Option<f64>,
    pub gmm: GmmConfig,
    pub classifier: MlpConfig,
    pub augmentation: AugmentationConfig,
    pub filter: LogisticConfig,
    pub oracle: OracleMode,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    /// Oracle-labeled target samples used only to estimate degradation.
    pub probe_size: usize,
    /// Degradation threshold as a fraction of the source validation F1.
    pub degradation_ratio: f64,
    pub adapt_policy: AdaptPolicy,
    /// Training share of the source split, and of the target split used by
    /// `full`.
    pub train_fraction: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".to_string(),
            data: DataSource::default(),
            strategy: StrategyKind::Netguard,
            budget: Some(0.01),
            gmm: GmmConfig::default(),
            classifier: MlpConfig::default(),
            augmentation: AugmentationConfig::default(),
            filter: LogisticConfig::default(),
            oracle: OracleMode::Simulated,
            seed: 7,
            probe_size: 200,
            degradation_ratio: 0.9,
            adapt_policy: AdaptPolicy::Always,
            train_fraction: 0.7,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run_id.is_empty() || !self.run_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("run id {:?} must be non-empty [A-Za-z0-9_-]", self.run_id)));
        }
        match (self.strategy.uses_budget(), self.budget) {
            (true, None) => {
                return Err(Error::Config(format!("strategy {} needs a budget", self.strategy.name())));
            }
            (true, Some(b)) if !(b > 0.0 && b <= 1.0) => {
                return Err(Error::Config(format!("budget {b} outside (0, 1]")));
            }
            _ => {}
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if !(self.degradation_ratio >= 0.0 && self.degradation_ratio.is_finite()) {
            return Err(Error::Config("degradation_ratio must be finite and >= 0".into()));
        }
        if self.gmm.k == 0 {
            return Err(Error::Config("gmm.k must be at least 1".into()));
        }
        let a = &self.augmentation;
        if !(a.filter_threshold >= 0.0 && a.filter_threshold <= 1.0) {
            return Err(Error::Config(format!("filter threshold {} outside [0, 1]", a.filter_threshold)));
        }
        if !(a.minority_threshold > 0.0 && a.minority_threshold <= 1.0) {
            return Err(Error::Config(format!("minority threshold {} outside (0, 1]", a.minority_threshold)));
        }
        if !(a.ratio >= 0.0 && a.ratio.is_finite()) {
            return Err(Error::Config(format!("augmentation ratio {} invalid", a.ratio)));
        }
        Ok(())
    }
}
