//! The closed adaptation loop: train on the source, score and select target
//! samples, obtain their labels, augment minority classes, retrain from
//! scratch and evaluate on the target samples that were not selected.
//!
//! A run is split into [`prepare`] (everything up to selection) and
//! [`PreparedRun::finish`] (everything after labels arrive). Every stage is
//! deterministic in the master seed, so a run parked for human labels can be
//! rebuilt later with [`resume`] and produces the same model a simulated
//! oracle would for the same label values.

mod artifacts;
mod config;
mod oracle;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{assemble_training_set, augment, AugmentationReport};
use crate::classifier::{train_logistic, train_mlp, Classifier, LogisticConfig, MlpConfig, MlpModel};
use crate::dataset::{
    generate_drift_benchmark, load_csv, normalize, split_indices, Dataset, DriftSpec, FeatureSchema, LabelMode,
    NormStats,
};
use crate::error::{contract, Error, Result};
use crate::gmm::{fit_gmm, GmmConfig};
use crate::metrics::{class_drift, classification_report, DriftReport, MetricsReport};
use crate::seed::derive_seed;
use crate::selection::{
    budget_count, clue_select, coreset_select, informativeness_scores, select_priors, uncertainty_select,
    SelectionReport,
};

pub use artifacts::{write_artifacts, write_parked};
pub use config::{AdaptPolicy, DataSource, OracleMode, RunConfig, StrategyKind};
pub use oracle::{OracleAudit, SimulatedOracle};

/// `true` iff `metrics.macro_f1 < threshold`.
pub fn degradation_check(metrics: &MetricsReport, threshold: f64) -> bool {
    metrics.macro_f1 < threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub size: usize,
    pub probe_f1: f64,
    /// Macro F1 of the source model on the held-out source split.
    pub reference_f1: f64,
    pub threshold: f64,
    pub degraded: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SetSummary {
    pub size: usize,
    pub class_counts: BTreeMap<String, usize>,
    pub provenance: BTreeMap<String, usize>,
}

impl SetSummary {
    fn of(ds: &Dataset) -> Self {
        let class_counts = ds
            .class_counts()
            .map(|c| ds.schema().classes.iter().cloned().zip(c).collect())
            .unwrap_or_default();
        Self {
            size: ds.len(),
            class_counts,
            provenance: ds.provenance_counts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub strategy: StrategyKind,
    /// Source model on the evaluation set.
    pub pre: Option<MetricsReport>,
    /// Adapted model on the same evaluation set.
    pub post: Option<MetricsReport>,
    pub selection: Option<SelectionReport>,
    pub augmentation: Option<AugmentationReport>,
    pub drift: Option<DriftReport>,
    pub probe: Option<ProbeReport>,
    pub adapted: bool,
    pub audit: OracleAudit,
    pub labeled_before: usize,
    pub labeled_after: usize,
    pub unlabeled_before: usize,
    pub unlabeled_after: usize,
    pub training_set: SetSummary,
    /// Target rows scored in `pre` and `post`.
    pub evaluation_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Wall-clock seconds per stage.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

impl RunResult {
    /// JSON with the wall-clock fields removed.
    pub fn deterministic_json(&self) -> String {
        let mut r = self.clone();
        r.timings.clear();
        serde_json::to_string(&r).expect("plain data")
    }
}

/// Outputs of a finished run that are too large for the JSON summary.
#[derive(Debug, Clone)]
pub struct CompletedRun {
    pub result: RunResult,
    pub model: MlpModel<f64>,
    pub initial_model: MlpModel<f64>,
    pub training_set: Dataset,
    pub generated: Option<Dataset>,
    pub retained: Option<Dataset>,
    pub norm: NormStats,
}

#[derive(Debug)]
pub enum RunOutcome {
    Completed(Box<CompletedRun>),
    /// Service-mode run waiting for the selected batch to be labeled.
    AwaitingLabels(Box<PreparedRun>),
}

fn load_data(source: &DataSource) -> Result<(Dataset, Dataset)> {
    match source {
        DataSource::Benchmark { spec, path } => {
            let spec = match (spec, path) {
                (Some(s), _) => s.clone(),
                (None, Some(p)) => DriftSpec::from_json_file(p)?,
                (None, None) => DriftSpec::standard(),
            };
            generate_drift_benchmark(&spec)
        }
        DataSource::Csv {
            schema,
            source,
            target,
            target_mode,
        } => {
            let schema = Arc::new(FeatureSchema::from_json_file(schema)?);
            let (src, rs) = load_csv(source, Arc::clone(&schema), LabelMode::Labeled)?;
            let (tgt, rt) = load_csv(target, schema, *target_mode)?;
            if rs.dropped_rows + rt.dropped_rows > 0 {
                log::warn!(
                    "dropped {} source and {} target rows with non-finite values",
                    rs.dropped_rows,
                    rt.dropped_rows
                );
            }
            Ok((src, tgt))
        }
    }
}

fn labels_of(ds: &Dataset) -> Vec<usize> {
    ds.labels().expect("labeled dataset")
}

fn train(ds: &Dataset, cfg: &MlpConfig, seed: u64) -> Result<MlpModel<f64>> {
    let cfg = MlpConfig { seed, ..cfg.clone() };
    train_mlp(ds.encode::<f64>().view(), &labels_of(ds), ds.schema().classes.clone(), &cfg)
}

fn score(model: &MlpModel<f64>, x: &Array2<f64>, rows: &[usize], truth: &[usize], schema: &FeatureSchema) -> Result<Option<MetricsReport>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let pred = model.predict(x.select(ndarray::Axis(0), rows).view())?;
    classification_report(truth, &pred, &schema.classes, schema.benign_index()).map(Some)
}

struct Clock(BTreeMap<String, f64>);

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.0.insert(stage.to_string(), t.elapsed().as_secs_f64());
        out
    }
}

/// State of a run after selection and before labels.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub config: RunConfig,
    norm: NormStats,
    x_l: Dataset,
    /// Normalized target; hidden truth kept when available.
    target: Dataset,
    target_x: Array2<f64>,
    oracle: Option<SimulatedOracle>,
    initial_model: MlpModel<f64>,
    probe: Option<ProbeReport>,
    selection: Option<SelectionReport>,
    adapt: bool,
    flags: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl PreparedRun {
    pub fn run_id(&self) -> &str {
        &self.config.run_id
    }

    pub fn selection(&self) -> Option<&SelectionReport> {
        self.selection.as_ref()
    }

    /// True when labels for the selection are still outstanding.
    pub fn needs_labels(&self) -> bool {
        self.selection.is_some()
    }

    /// Target records in the normalized units seen by every model.
    pub fn target(&self) -> &Dataset {
        &self.target
    }

    pub fn initial_model(&self) -> &MlpModel<f64> {
        &self.initial_model
    }

    pub fn schema(&self) -> &FeatureSchema {
        self.target.schema()
    }

    /// Labels for the selected batch from the simulated oracle.
    fn simulated_labels(&mut self) -> Result<Vec<usize>> {
        let selected = self.selection.as_ref().map(|s| s.selected.clone()).unwrap_or_default();
        let oracle = self
            .oracle
            .as_mut()
            .ok_or_else(|| contract("simulated oracle needs a target with hidden truth"))?;
        oracle.reveal(&selected)
    }

    pub fn finish_simulated(mut self) -> Result<CompletedRun> {
        let labels = self.simulated_labels()?;
        self.finish(&labels)
    }

    /// Completes the run with `labels[i]` the class of `selection.selected[i]`.
    pub fn finish(self, labels: &[usize]) -> Result<CompletedRun> {
        let PreparedRun {
            config,
            norm,
            x_l,
            target,
            target_x,
            mut oracle,
            initial_model,
            probe,
            mut selection,
            adapt,
            mut flags,
            timings,
        } = self;
        let mut clock = Clock(timings);
        let schema = Arc::clone(target.schema_arc());
        let seed = config.seed;
        let n_t = target.len();

        let mut augmentation = None;
        let mut generated = None;
        let mut retained = None;
        let (model, training_set, evaluation_indices, x_p_len) = match (&mut selection, config.strategy) {
            (_, StrategyKind::Full) if adapt => {
                let (train_idx, test_idx, _) = split_indices(&target, config.train_fraction, derive_seed(seed, "target-split"))?;
                let oracle = oracle
                    .as_mut()
                    .ok_or_else(|| contract("full adaptation needs target ground truth"))?;
                let y = oracle.full_split(&train_idx)?;
                let train_set = target.with_labels(&train_idx, &y)?;
                let model = clock.time("retrain", || train(&train_set, &config.classifier, derive_seed(seed, "retrain")))?;
                (model, train_set, test_idx, 0)
            }
            (Some(sel), _) => {
                if labels.len() != sel.selected.len() {
                    return Err(Error::DimensionMismatch { expected: sel.selected.len(), actual: labels.len() });
                }
                sel.record_labels(labels, &schema.classes)?;
                let x_p = target.with_labels(&sel.selected, labels)?;
                let x_prime = Dataset::concat(&[&x_l, &x_p])?;
                let empty = Dataset::labeled(Arc::clone(&schema), Vec::new())?;
                let mut synthetic = empty.clone();
                if config.augmentation.enabled {
                    let benign = schema.benign_index();
                    let y = labels_of(&x_prime);
                    match benign {
                        Some(b) if y.contains(&b) && y.iter().any(|&l| l != b) => {
                            let outcome = clock.time("augmentation", || {
                                let mask: Vec<bool> = y.iter().map(|&l| l == b).collect();
                                let fcfg = LogisticConfig {
                                    seed: derive_seed(seed, "filter"),
                                    ..config.filter.clone()
                                };
                                let filter = train_logistic(x_prime.encode::<f64>().view(), &mask, &fcfg)?;
                                augment(&x_prime, &filter, &config.augmentation, derive_seed(seed, "augmentation"))
                            })?;
                            synthetic = outcome.retained.clone();
                            augmentation = Some(outcome.report);
                            generated = Some(outcome.generated);
                            retained = Some(outcome.retained);
                        }
                        _ => flags.push("augmentation skipped: filter needs benign and attack records".into()),
                    }
                }
                let training_set = assemble_training_set(&x_l, &x_p, &synthetic)?;
                let model = clock.time("retrain", || train(&training_set, &config.classifier, derive_seed(seed, "retrain")))?;
                let mut taken = vec![false; n_t];
                for &i in &sel.selected {
                    taken[i] = true;
                }
                let eval = (0..n_t).filter(|&i| !taken[i]).collect();
                (model, training_set, eval, x_p.len())
            }
            (None, _) => (initial_model.clone(), x_l.clone(), (0..n_t).collect(), 0),
        };

        let (mut pre, mut post, mut drift) = (None, None, None);
        if let Some(oracle) = oracle.as_mut() {
            let truth = oracle.evaluation_truth(&evaluation_indices)?;
            pre = score(&initial_model, &target_x, &evaluation_indices, &truth, &schema)?;
            post = score(&model, &target_x, &evaluation_indices, &truth, &schema)?;
            let all: Vec<usize> = (0..n_t).collect();
            let full_truth = oracle.evaluation_truth(&all)?;
            drift = Some(class_drift(&x_l, &target, &full_truth)?);
        } else {
            flags.push("no target ground truth: evaluation skipped".into());
        }
        if evaluation_indices.is_empty() {
            flags.push("evaluation set is empty".into());
        }

        let result = RunResult {
            run_id: config.run_id.clone(),
            strategy: config.strategy,
            pre,
            post,
            selection,
            augmentation,
            drift,
            probe,
            adapted: adapt && config.strategy != StrategyKind::None,
            audit: oracle.map(|o| o.audit()).unwrap_or_default(),
            labeled_before: x_l.len(),
            labeled_after: x_l.len() + x_p_len,
            unlabeled_before: n_t,
            unlabeled_after: n_t - x_p_len,
            training_set: SetSummary::of(&training_set),
            evaluation_indices,
            flags,
            timings: clock.0,
        };
        Ok(CompletedRun {
            result,
            model,
            initial_model,
            training_set,
            generated,
            retained,
            norm,
        })
    }
}

/// Loads and normalizes the data, trains the source model, runs the
/// degradation probe and performs selection.
pub fn prepare(config: RunConfig) -> Result<PreparedRun> {
    config.validate()?;
    let seed = config.seed;
    let mut clock = Clock(BTreeMap::new());
    let mut flags = Vec::new();

    let (source, target_raw) = clock.time("load", || load_data(&config.data))?;
    if !source.is_labeled() {
        return Err(contract("source dataset must be labeled"));
    }
    if target_raw.is_labeled() {
        return Err(contract("target dataset must be unlabeled"));
    }
    if source.schema() != target_raw.schema() {
        return Err(contract("source and target schemas differ"));
    }
    let (train_idx, val_idx, _) = split_indices(&source, config.train_fraction, derive_seed(seed, "source-split"))?;
    let (x_l, others, norm) = normalize(
        &source.subset(&train_idx)?,
        &[&source.subset(&val_idx)?, &target_raw],
    )?;
    let [source_val, target]: [Dataset; 2] = others.try_into().expect("two datasets normalized");
    let target_x = target.encode::<f64>();

    let initial_model = clock.time("initial_training", || {
        train(&x_l, &config.classifier, derive_seed(seed, "initial-model"))
    })?;

    let mut oracle = if target.has_hidden_truth() {
        Some(SimulatedOracle::new(&target)?)
    } else {
        None
    };
    let schema = target.schema();

    let mut probe = None;
    if let Some(o) = oracle.as_mut() {
        if config.probe_size > 0 && !source_val.is_empty() {
            let m = config.probe_size.min(target.len());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "probe"));
            let mut idx = sample(&mut rng, target.len(), m).into_vec();
            idx.sort_unstable();
            let truth = o.probe(&idx)?;
            let probe_m = score(&initial_model, &target_x, &idx, &truth, schema)?.expect("non-empty probe");
            let val_x = source_val.encode::<f64>();
            let val_rows: Vec<usize> = (0..source_val.len()).collect();
            let reference = score(&initial_model, &val_x, &val_rows, &labels_of(&source_val), schema)?
                .expect("non-empty validation split");
            let threshold = config.degradation_ratio * reference.macro_f1;
            probe = Some(ProbeReport {
                size: m,
                probe_f1: probe_m.macro_f1,
                reference_f1: reference.macro_f1,
                threshold,
                degraded: degradation_check(&probe_m, threshold),
            });
        }
    }
    let adapt = match (config.adapt_policy, &probe) {
        (AdaptPolicy::OnDegradation, Some(p)) if !p.degraded => {
            flags.push("probe shows no degradation; adaptation skipped".into());
            false
        }
        _ => true,
    };

    let tie_seed = derive_seed(seed, "tie-break");
    let selection = if adapt && config.strategy.uses_budget() {
        let fraction = config.budget.expect("validated");
        let budget = budget_count(fraction, target.len())?;
        let x_l_enc = x_l.encode::<f64>();
        let report = clock.time("selection", || match config.strategy {
            StrategyKind::Netguard => {
                let gs = fit_gmm(x_l_enc.view(), &GmmConfig { seed: derive_seed(seed, "gmm-source"), ..config.gmm.clone() })?;
                let gt = fit_gmm(target_x.view(), &GmmConfig { seed: derive_seed(seed, "gmm-target"), ..config.gmm.clone() })?;
                let scores = informativeness_scores(&gt, &gs, target_x.view())?;
                select_priors(&scores, fraction, tie_seed)
            }
            StrategyKind::Uncertainty => uncertainty_select(&initial_model, target_x.view(), budget, tie_seed),
            StrategyKind::Coreset => coreset_select(target_x.view(), budget, derive_seed(seed, "coreset")),
            StrategyKind::Clue => clue_select(&initial_model, target_x.view(), budget, derive_seed(seed, "clue")),
            StrategyKind::None | StrategyKind::Full => unreachable!("no budget"),
        })?;
        debug_assert!(report.is_valid());
        Some(report)
    } else {
        None
    };

    Ok(PreparedRun {
        config,
        norm,
        x_l,
        target,
        target_x,
        oracle,
        initial_model,
        probe,
        selection,
        adapt,
        flags,
        timings: clock.0,
    })
}

/// Runs the loop once. In service mode the run stops after selection and
/// is returned for labeling; otherwise the simulated oracle answers.
pub fn run(config: RunConfig) -> Result<RunOutcome> {
    let prepared = prepare(config)?;
    if prepared.config.oracle == OracleMode::Service && prepared.needs_labels() {
        if let Some(dir) = &prepared.config.output_dir {
            write_parked(&prepared, dir)?;
        }
        return Ok(RunOutcome::AwaitingLabels(Box::new(prepared)));
    }
    let out = prepared.finish_simulated()?;
    Ok(RunOutcome::Completed(Box::new(out)))
}

/// Simulated-oracle run that writes artifacts when an output directory is
/// configured.
pub fn run_simulated(config: RunConfig) -> Result<CompletedRun> {
    let config = RunConfig { oracle: OracleMode::Simulated, ..config };
    let dir = config.output_dir.clone();
    let out = prepare(config)?.finish_simulated()?;
    if let Some(dir) = dir {
        write_artifacts(&out, &dir)?;
    }
    Ok(out)
}

/// Rebuilds a parked run from its configuration and completes it with
/// externally supplied labels for the selected batch.
pub fn resume(config: RunConfig, labels: &[usize]) -> Result<CompletedRun> {
    let dir = config.output_dir.clone();
    let out = prepare(config)?.finish(labels)?;
    if let Some(dir) = dir {
        write_artifacts(&out, &dir)?;
    }
    Ok(out)
}
