//! Minority-class augmentation.
//!
//! Each minority class gets its own mixture over the continuous measurement
//! features. Every mixture component also carries a categorical distribution
//! per metadata feature, estimated from responsibility-weighted counts, so a
//! sampled record pairs measurements with metadata states typical of the
//! same mode. Synthetic records that look benign to a logistic filter are
//! discarded before retraining.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::LogisticModel;
use crate::dataset::{Dataset, FeatureSchema, FlowRecord, Provenance};
use crate::error::{contract, Error, Result};
use crate::gmm::{fit_gmm, GmmConfig, GmmParams};
use crate::metrics::w2_fidelity_for_class;
use crate::seed::derive_seed;

const JITTER_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinorityReport {
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub fractions: Vec<f64>,
    /// Indices of classes with `0 < fraction < threshold`.
    pub minorities: Vec<usize>,
    pub threshold: f64,
}

impl MinorityReport {
    pub fn minority_names(&self) -> Vec<&str> {
        self.minorities.iter().map(|&c| self.classes[c].as_str()).collect()
    }
}

/// Classes present in `ds` whose share of the records is below `threshold`.
pub fn identify_minorities(ds: &Dataset, threshold: f64) -> Result<MinorityReport> {
    let counts = ds
        .class_counts()
        .ok_or_else(|| contract("minority detection needs a labeled dataset"))?;
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ds.len() as f64;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let minorities = (0..counts.len())
        .filter(|&c| counts[c] > 0 && fractions[c] < threshold)
        .collect();
    Ok(MinorityReport {
        classes: ds.schema().classes.clone(),
        counts,
        fractions,
        minorities,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub components_per_class: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub variance_floor: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            components_per_class: 3,
            seed: 0,
            max_iters: 200,
            variance_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassSampler {
    Mixture {
        mixture: GmmParams<f64>,
        /// `categorical[component][metadata feature][state]`
        categorical: Vec<Vec<Vec<f64>>>,
    },
    /// Too few records to fit; resample them with small Gaussian noise on
    /// the continuous features.
    Jitter { pool: Vec<Vec<f64>>, std: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGenerator {
    pub class: usize,
    pub class_name: String,
    pub n_fit: usize,
    pub sampler: ClassSampler,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorModel {
    pub schema: FeatureSchema,
    pub generators: Vec<ClassGenerator>,
    pub config: GeneratorConfig,
}

impl GeneratorModel {
    pub fn get(&self, class: usize) -> Option<&ClassGenerator> {
        self.generators.iter().find(|g| g.class == class)
    }
}

fn class_rows(ds: &Dataset, labels: &[usize], class: usize) -> Vec<usize> {
    (0..ds.len()).filter(|&i| labels[i] == class).collect()
}

/// Fits one sub-model per entry of `classes` from that class's rows in `ds`.
pub fn fit_generator(ds: &Dataset, classes: &[usize], config: &GeneratorConfig) -> Result<GeneratorModel> {
    let labels = ds.labels().ok_or_else(|| contract("generator needs labeled records"))?;
    let schema = ds.schema();
    let cont = schema.continuous_indices();
    let cats = schema.categorical_indices();
    if cont.is_empty() {
        return Err(Error::Schema("generator needs at least one continuous feature".into()));
    }
    if config.components_per_class == 0 {
        return Err(Error::Config("components_per_class must be at least 1".into()));
    }
    let x = ds.continuous_matrix::<f64>();

    let mut generators = Vec::with_capacity(classes.len());
    for &class in classes {
        let class_name = schema
            .classes
            .get(class)
            .ok_or_else(|| contract(format!("class {class} outside vocabulary")))?
            .clone();
        let rows = class_rows(ds, &labels, class);
        let n = rows.len();
        let mut flags = Vec::new();
        if n < 2 {
            log::warn!("class {class_name} has {n} record(s); using jittered resampling");
            flags.push(format!("{n} record(s): jittered resampling instead of a fitted mixture"));
            generators.push(ClassGenerator {
                class,
                class_name,
                n_fit: n,
                sampler: ClassSampler::Jitter {
                    pool: rows.iter().map(|&i| ds.records()[i].values.clone()).collect(),
                    std: JITTER_STD,
                },
                flags,
            });
            continue;
        }
        let k = config.components_per_class.min(n);
        if k < config.components_per_class {
            flags.push(format!("components reduced from {} to {k}", config.components_per_class));
        }
        let data = x.select(Axis(0), &rows);
        let gmm_cfg = GmmConfig {
            k,
            max_iters: config.max_iters,
            seed: derive_seed(config.seed, &format!("generator-{class}")),
            variance_floor: config.variance_floor,
            ..GmmConfig::default()
        };
        let mixture = fit_gmm(data.view(), &gmm_cfg)?;
        let resp = mixture.responsibilities(data.view())?;
        let categorical = categorical_tables(ds, &rows, &cats, &resp)?;
        generators.push(ClassGenerator {
            class,
            class_name,
            n_fit: n,
            sampler: ClassSampler::Mixture { mixture, categorical },
            flags,
        });
    }
    Ok(GeneratorModel {
        schema: schema.clone(),
        generators,
        config: config.clone(),
    })
}

/// Responsibility-weighted state frequencies per component and metadata
/// feature. A component with no mass falls back to the class frequencies.
fn categorical_tables(ds: &Dataset, rows: &[usize], cats: &[usize], resp: &Array2<f64>) -> Result<Vec<Vec<Vec<f64>>>> {
    let schema = ds.schema();
    let k = resp.ncols();
    let mut tables = Vec::with_capacity(k);
    for j in 0..k {
        let mut per_feature = Vec::with_capacity(cats.len());
        for &f in cats {
            let vocab = schema.features[f].vocabulary().expect("categorical index").len();
            let mut weighted = vec![0.0; vocab];
            let mut plain = vec![0.0; vocab];
            for (r, &i) in rows.iter().enumerate() {
                let s = ds.records()[i].values[f] as usize;
                weighted[s] += resp[[r, j]];
                plain[s] += 1.0;
            }
            let mass: f64 = weighted.iter().sum();
            let dist = if mass > f64::MIN_POSITIVE {
                weighted.iter().map(|w| w / mass).collect()
            } else {
                plain.iter().map(|c| c / rows.len() as f64).collect()
            };
            per_feature.push(dist);
        }
        tables.push(per_feature);
    }
    Ok(tables)
}

fn draw_state(dist: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (s, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return s;
        }
    }
    // rounding left u above the final cumulative sum
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Draws `count` labeled records of `class` with provenance `Augmented`.
pub fn synthesize(generator: &GeneratorModel, class: usize, count: usize, seed: u64) -> Result<Dataset> {
    let g = generator
        .get(class)
        .ok_or_else(|| contract(format!("generator has no sub-model for class {class}")))?;
    let schema = &generator.schema;
    let cont = schema.continuous_indices();
    let cats = schema.categorical_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    match &g.sampler {
        ClassSampler::Mixture { mixture, categorical } => {
            let (z, comps) = mixture.sample(count, &mut rng);
            for (i, &j) in comps.iter().enumerate() {
                let mut values = vec![0.0; schema.dim()];
                for (c, &f) in cont.iter().enumerate() {
                    values[f] = z[[i, c]];
                }
                for (c, &f) in cats.iter().enumerate() {
                    values[f] = draw_state(&categorical[j][c], &mut rng) as f64;
                }
                records.push(FlowRecord::new(values, Some(class)).with_origin(Provenance::Augmented));
            }
        }
        ClassSampler::Jitter { pool, std } => {
            if pool.is_empty() && count > 0 {
                return Err(contract(format!("class {} has no records to resample", g.class_name)));
            }
            for _ in 0..count {
                let mut values = pool[rng.random_range(0..pool.len())].clone();
                for &f in &cont {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    values[f] += std * z;
                }
                records.push(FlowRecord::new(values, Some(class)).with_origin(Provenance::Augmented));
            }
        }
    }
    Dataset::labeled(Arc::new(schema.clone()), records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub generated: usize,
    pub retained: usize,
}

/// Keeps the records with `P(benign) < threshold` under `filter`, which
/// scores the encoded feature matrix.
pub fn filter_synthetic(
    synthetic: &Dataset,
    filter: &LogisticModel<f64>,
    threshold: f64,
) -> Result<(Dataset, BTreeMap<String, FilterCounts>)> {
    let labels = synthetic
        .labels()
        .ok_or_else(|| contract("synthetic batch must be labeled"))?;
    let schema = synthetic.schema();
    let benign = schema.benign_index();
    if let Some(b) = benign {
        if labels.contains(&b) {
            return Err(contract("synthetic batch contains benign-labeled records"));
        }
    }
    let probs = if synthetic.is_empty() {
        Vec::new()
    } else {
        filter.prob_benign(synthetic.encode::<f64>().view())?
    };
    let keep: Vec<usize> = (0..synthetic.len()).filter(|&i| probs[i] < threshold).collect();
    let mut counts: BTreeMap<String, FilterCounts> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        counts.entry(schema.classes[l].clone()).or_default().generated += 1;
        if probs[i] < threshold {
            counts.get_mut(&schema.classes[l]).expect("inserted above").retained += 1;
        }
    }
    Ok((synthetic.subset(&keep)?, counts))
}

/// `X_L ∪ X_P ∪ retained synthetics`, provenance preserved.
pub fn assemble_training_set(x_l: &Dataset, x_p: &Dataset, synthetic: &Dataset) -> Result<Dataset> {
    Dataset::concat(&[x_l, x_p, synthetic])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub enabled: bool,
    /// Synthetic samples requested per existing sample of a minority class.
    pub ratio: f64,
    pub minority_threshold: f64,
    pub filter_threshold: f64,
    pub components_per_class: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            ratio: 3.0,
            minority_threshold: 0.05,
            filter_threshold: 0.5,
            components_per_class: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAugmentation {
    pub class: String,
    pub original: usize,
    pub requested: usize,
    pub generated: usize,
    pub retained: usize,
    /// Mean per-feature W2 between the class's real records and its
    /// retained synthetics; `None` when nothing was retained.
    pub w2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub ratio: f64,
    pub filter_threshold: f64,
    pub minority: MinorityReport,
    pub classes: Vec<ClassAugmentation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub struct AugmentationOutcome {
    pub retained: Dataset,
    pub generated: Dataset,
    pub generator: GeneratorModel,
    pub report: AugmentationReport,
}

/// Minority detection, generator fitting, synthesis and filtering over the
/// updated labeled set. Class `c` receives its own seed derived from `seed`.
pub fn augment(
    x_prime_l: &Dataset,
    filter: &LogisticModel<f64>,
    config: &AugmentationConfig,
    seed: u64,
) -> Result<AugmentationOutcome> {
    if !(config.ratio >= 0.0 && config.ratio.is_finite()) {
        return Err(Error::Config(format!("augmentation ratio {} must be finite and >= 0", config.ratio)));
    }
    let mut minority = identify_minorities(x_prime_l, config.minority_threshold)?;
    if let Some(b) = x_prime_l.schema().benign_index() {
        minority.minorities.retain(|&c| c != b);
    }
    let gen_cfg = GeneratorConfig {
        components_per_class: config.components_per_class,
        seed: derive_seed(seed, "generator"),
        ..GeneratorConfig::default()
    };
    let generator = fit_generator(x_prime_l, &minority.minorities, &gen_cfg)?;
    let mut batches = Vec::new();
    for &c in &minority.minorities {
        let requested = (config.ratio * minority.counts[c] as f64).round() as usize;
        batches.push(synthesize(&generator, c, requested, derive_seed(seed, &format!("synthesize-{c}")))?);
    }
    let empty = Dataset::labeled(x_prime_l.schema_arc().clone(), Vec::new())?;
    let generated = if batches.is_empty() {
        empty
    } else {
        Dataset::concat(&batches.iter().collect::<Vec<_>>())?
    };
    let (retained, counts) = filter_synthetic(&generated, filter, config.filter_threshold)?;

    let mut classes = Vec::new();
    let mut flags: Vec<String> = generator
        .generators
        .iter()
        .flat_map(|g| g.flags.iter().map(move |f| format!("{}: {f}", g.class_name)))
        .collect();
    for &c in &minority.minorities {
        let name = &minority.classes[c];
        let fc = counts.get(name).copied().unwrap_or_default();
        let w2 = if fc.retained > 0 {
            Some(w2_fidelity_for_class(x_prime_l, &retained, c)?)
        } else {
            None
        };
        if fc.generated > 0 && fc.retained == 0 {
            flags.push(format!("{name}: every synthetic record was filtered as benign-like"));
        }
        classes.push(ClassAugmentation {
            class: name.clone(),
            original: minority.counts[c],
            requested: (config.ratio * minority.counts[c] as f64).round() as usize,
            generated: fc.generated,
            retained: fc.retained,
            w2,
        });
    }
    Ok(AugmentationOutcome {
        retained,
        generated,
        generator,
        report: AugmentationReport {
            ratio: config.ratio,
            filter_threshold: config.filter_threshold,
            minority,
            classes,
            flags,
        },
    })
}
