use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use netguard_core::annotation::AnnotationQueue;
use netguard_core::augmentation::{augment, AugmentationConfig};
use netguard_core::classifier::{train_logistic, train_mlp, Classifier, LogisticConfig, MlpCheckpoint, MlpConfig, MlpModel};
use netguard_core::dataset::{
    generate_drift_benchmark, load_csv, write_csv, write_csv_with_truth, Dataset, DriftSpec, FeatureSchema, LabelMode,
    NormStats,
};
use netguard_core::metrics::{
    classification_report, render_class_f1_table, render_metrics_table, render_selection_table, MetricsReport,
};
use netguard_core::pipeline::{prepare, run, write_artifacts, write_parked, OracleMode, RunConfig, RunOutcome, RunResult, StrategyKind};
use netguard_core::{Error, Result};
use netguard_service::{serve, ServiceOptions, ServiceState};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "netguard", version, about = "Drift adaptation for flow classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the source and target CSVs of a drift benchmark.
    GenerateBenchmark {
        /// DriftSpec JSON; the shipped standard benchmark when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the flow classifier on a labeled CSV.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// MlpConfig JSON.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trained model on a labeled CSV.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configuration up to selection and write selection.json.
    Select {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Augment the minority classes of a labeled CSV.
    Augment {
        #[command(flatten)]
        data: DataArgs,
        /// AugmentationConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute one adaptation round.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Serve the labeling queue. With --config the run is prepared in
    /// service mode and parked on the queue first.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "NETGUARD_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "NETGUARD_JOURNAL_DIR", default_value = "journal")]
        journal_dir: PathBuf,
        #[arg(long)]
        allow_relabel: bool,
    },
    /// Render tables from one or more run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// FeatureSchema JSON.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// RunConfig JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if self.budget.is_some() {
            cfg.budget = self.budget;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if self.out.is_some() {
            cfg.output_dir = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    norm: NormStats,
    model: MlpCheckpoint<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_labeled(args: &DataArgs) -> Result<Dataset> {
    let schema = Arc::new(FeatureSchema::from_json_file(&args.schema)?);
    let (ds, report) = load_csv(&args.data, schema, LabelMode::Labeled)?;
    if report.dropped_rows > 0 {
        log::warn!("dropped {} rows with non-finite values", report.dropped_rows);
    }
    Ok(ds)
}

fn print_run(result: &RunResult) {
    let mut rows: Vec<(&str, &MetricsReport)> = Vec::new();
    if let Some(m) = &result.pre {
        rows.push(("no adaptation", m));
    }
    if let Some(m) = &result.post {
        rows.push((result.strategy.name(), m));
    }
    if !rows.is_empty() {
        println!("{}", render_metrics_table(&rows));
        println!("{}", render_class_f1_table(&rows));
    }
    if let Some(d) = &result.drift {
        let counts = result.selection.as_ref().and_then(|s| s.class_counts.clone()).unwrap_or_default();
        println!("{}", render_selection_table(d, &[(result.strategy.name(), &counts)]));
    }
    for f in &result.flags {
        println!("note: {f}");
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenerateBenchmark { spec, seed, out } => {
            let mut spec = match spec {
                Some(p) => DriftSpec::from_json_file(p)?,
                None => DriftSpec::standard(),
            };
            if let Some(s) = seed {
                spec.seed = s;
                spec.target_seed = None;
            }
            let (source, target) = generate_drift_benchmark(&spec)?;
            std::fs::create_dir_all(&out)?;
            write_csv(&source, out.join("source.csv"))?;
            write_csv_with_truth(&target, out.join("target.csv"))?;
            write_json(&out.join("schema.json"), source.schema())?;
            write_json(&out.join("spec.json"), &spec)?;
            println!("wrote {} source and {} target flows to {}", source.len(), target.len(), out.display());
        }
        Command::Train {
            data,
            classifier,
            seed,
            out,
        } => {
            let ds = load_labeled(&data)?;
            let norm = NormStats::fit(&ds)?;
            let ds = norm.apply(&ds)?;
            let mut cfg: MlpConfig = match classifier {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => MlpConfig::default(),
            };
            cfg.seed = seed;
            let labels = ds.labels().expect("labeled");
            let model = train_mlp(ds.encode::<f64>().view(), &labels, ds.schema().classes.clone(), &cfg)?;
            std::fs::create_dir_all(&out)?;
            write_json(
                &out.join("model.json"),
                &SavedModel {
                    norm,
                    model: model.to_checkpoint(),
                },
            )?;
            let loss = model.training().map(|t| t.final_loss).unwrap_or(f64::NAN);
            println!("trained on {} flows, final loss {loss:.5}", ds.len());
        }
        Command::Evaluate { data, model, out } => {
            let saved: SavedModel = serde_json::from_str(&std::fs::read_to_string(model.join("model.json"))?)?;
            let mlp: MlpModel<f64> = MlpModel::from_checkpoint(saved.model)?;
            let ds = saved.norm.apply(&load_labeled(&data)?)?;
            let pred = mlp.predict(ds.encode::<f64>().view())?;
            let schema = ds.schema();
            let report = classification_report(&ds.labels().expect("labeled"), &pred, &schema.classes, schema.benign_index())?;
            println!("{}", render_metrics_table(&[("model", &report)]));
            println!("{}", render_class_f1_table(&[("model", &report)]));
            if let Some(p) = out {
                write_json(&p, &report)?;
            }
        }
        Command::Select { run } => {
            let cfg = run.resolve()?;
            if !cfg.strategy.uses_budget() {
                return Err(Error::Config(format!("strategy {} selects nothing", cfg.strategy.name())));
            }
            let dir = cfg.output_dir.clone();
            let prepared = prepare(cfg)?;
            let sel = prepared.selection().expect("budgeted strategy");
            println!("selected {} of {} target flows", sel.selected.len(), sel.n_unlabeled);
            if let Some(dir) = dir {
                write_parked(&prepared, &dir)?;
            }
        }
        Command::Augment {
            data,
            config,
            ratio,
            seed,
            out,
        } => {
            let raw = load_labeled(&data)?;
            let norm = NormStats::fit(&raw)?;
            let ds = norm.apply(&raw)?;
            let mut cfg: AugmentationConfig = match config {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => AugmentationConfig::default(),
            };
            if let Some(r) = ratio {
                cfg.ratio = r;
            }
            let b = ds
                .schema()
                .benign_index()
                .ok_or_else(|| Error::Schema("schema has no benign class".into()))?;
            let mask: Vec<bool> = ds.labels().expect("labeled").iter().map(|&l| l == b).collect();
            let filter = train_logistic(ds.encode::<f64>().view(), &mask, &LogisticConfig { seed, ..Default::default() })?;
            let outcome = augment(&ds, &filter, &cfg, seed)?;
            std::fs::create_dir_all(&out)?;
            write_csv(&norm.invert(&outcome.generated)?, out.join("synthetic_generated.csv"))?;
            write_csv(&norm.invert(&outcome.retained)?, out.join("synthetic_retained.csv"))?;
            write_json(&out.join("augmentation.json"), &outcome.report)?;
            write_json(&out.join("generator.json"), &outcome.generator)?;
            for c in &outcome.report.classes {
                println!("{}: {} real, {} generated, {} retained", c.class, c.original, c.generated, c.retained);
            }
        }
        Command::Run { run: args } => {
            let cfg = args.resolve()?;
            let dir = cfg.output_dir.clone();
            match run(cfg)? {
                RunOutcome::Completed(done) => {
                    if let Some(dir) = &dir {
                        write_artifacts(&done, dir)?;
                    }
                    print_run(&done.result);
                }
                RunOutcome::AwaitingLabels(p) => {
                    println!(
                        "run {} is waiting for {} labels; start `netguard serve --config` to label it",
                        p.run_id(),
                        p.selection().map_or(0, |s| s.selected.len())
                    );
                }
            }
        }
        Command::Serve {
            config,
            bind,
            journal_dir,
            allow_relabel,
        } => {
            let queue = if journal_dir.is_dir() {
                AnnotationQueue::replay(&journal_dir)?
            } else {
                AnnotationQueue::new(Some(journal_dir))?
            };
            let state = ServiceState::new(queue, ServiceOptions { allow_relabel });
            state.resume_pending();
            if let Some(p) = config {
                let cfg = RunConfig {
                    oracle: OracleMode::Service,
                    ..RunConfig::from_json_file(p)?
                };
                let prepared = prepare(cfg)?;
                let n = state.park(prepared)?;
                println!("{n} tasks queued");
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(bind, state))?;
        }
        Command::Report { runs } => {
            let mut results = Vec::new();
            for dir in &runs {
                let r: RunResult = serde_json::from_str(&std::fs::read_to_string(dir.join("result.json"))?)?;
                results.push(r);
            }
            let mut rows: Vec<(String, &MetricsReport)> = Vec::new();
            if let Some(pre) = results.first().and_then(|r| r.pre.as_ref()) {
                rows.push(("no adaptation".into(), pre));
            }
            for r in &results {
                if let Some(m) = &r.post {
                    rows.push((format!("{} ({})", r.strategy.name(), r.run_id), m));
                }
            }
            let view: Vec<(&str, &MetricsReport)> = rows.iter().map(|(n, m)| (n.as_str(), *m)).collect();
            println!("{}", render_metrics_table(&view));
            println!("{}", render_class_f1_table(&view));
            let counts: Vec<(String, std::collections::BTreeMap<String, usize>)> = results
                .iter()
                .filter_map(|r| {
                    r.selection
                        .as_ref()
                        .and_then(|s| s.class_counts.clone())
                        .map(|c| (r.strategy.name().to_string(), c))
                })
                .collect();
            if let Some(drift) = results.iter().find_map(|r| r.drift.as_ref()) {
                let view: Vec<(&str, &std::collections::BTreeMap<String, usize>)> =
                    counts.iter().map(|(n, c)| (n.as_str(), c)).collect();
                println!("{}", render_selection_table(drift, &view));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Contract(_) | Error::Schema(_) | Error::Validation(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
