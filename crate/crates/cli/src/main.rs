//! `mfgraph` command-line harness.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mfgraph::dgcnn::load_checkpoint;
use mfgraph::graph::write_graphs;
use mfgraph::harness::{
    self, evaluate_model, load_graphs, load_records, month_buckets, run_baseline, run_cv_search, run_drift,
    run_training, split_graphs, write_drift, write_evaluation, BaselineKind, ExperimentConfig,
};
use mfgraph::ingest::{load_filtered, partition_by_month, split_train_test, write_month_files, write_records, FilterPolicy, Label, YearMonth};
use mfgraph::pe::{extract_features, ByteEntropyConfig};
use mfgraph::synth::{synth_records, SynthConfig};
use mfgraph::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "mfgraph", version, about = "Feature-graph malware detection")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter feature records to labeled samples of one year and write one
    /// `YYYY-MM.jsonl` file per month.
    Ingest {
        /// Record files or directories of `*.jsonl` files.
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 2018)]
        year: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract feature records from a directory of PE files.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output record file.
        #[arg(long)]
        out: PathBuf,
        /// `0`, `1`, `-1` (unlabeled) or `from-manifest`.
        #[arg(long)]
        label: String,
        /// CSV with `name,label` rows; `name` is a file name or sha256.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// First-seen month, `YYYY-MM`.
        #[arg(long)]
        appeared: YearMonth,
    },
    /// Build feature graphs and write a graph cache.
    BuildGraphs {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// `default`, `variant-1` .. `variant-8`, or a skeleton file.
        #[arg(long)]
        skeleton: Option<String>,
        /// Output cache file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold search over the configured grid.
    Cv {
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, evaluating on test files or a stratified hold-out.
    Train(TrainArgs),
    /// Score labeled data with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint month by month and summarize degradation.
    Drift {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Records or graph caches; samples are grouped by first-seen month.
        #[arg(long = "in", num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Hold-out set from the training period, evaluated first.
        #[arg(long)]
        holdout: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score a flat-vector baseline.
    Baseline {
        #[arg(long, value_enum)]
        model: BaselineModel,
        #[command(flatten)]
        data: TrainArgs,
    },
    /// Generate synthetic feature records with a planted class signal.
    Synth {
        #[arg(long, default_value_t = 2000)]
        count: usize,
        /// Months to spread samples over, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        months: Vec<u8>,
        #[arg(long, default_value_t = 1.0)]
        signal: f64,
        /// Signal lost per month after the first.
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
        /// Output record file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Training records or graph caches.
    #[arg(long, num_args = 1..)]
    train: Vec<PathBuf>,
    /// Test records or graph caches.
    #[arg(long, num_args = 1..)]
    test: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineModel {
    Logreg,
    Knn,
    Mlp,
}

impl From<BaselineModel> for BaselineKind {
    fn from(m: BaselineModel) -> Self {
        match m {
            BaselineModel::Logreg => BaselineKind::Logreg,
            BaselineModel::Knn => BaselineKind::Knn,
            BaselineModel::Mlp => BaselineKind::Mlp,
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Expands directories into their `*.jsonl` files, sorted by name.
fn expand_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn or_config(given: &[PathBuf], configured: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    expand_inputs(if given.is_empty() { configured } else { given })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_label_manifest(path: &Path) -> anyhow::Result<Vec<(String, Label)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let (Some(name), Some(label)) = (row.get(0), row.get(1)) else {
            bail!("{}: rows need `name,label`", path.display());
        };
        let label = label
            .trim()
            .parse::<i64>()
            .ok()
            .and_then(Label::from_i64)
            .ok_or_else(|| Error::InvalidArgument(format!("bad label {label:?} for {name}")))?;
        out.push((name.trim().to_string(), label));
    }
    Ok(out)
}

fn extract(input: &Path, out: &Path, label: &str, manifest: Option<&Path>, appeared: YearMonth) -> anyhow::Result<()> {
    let fixed = match label {
        "from-manifest" => None,
        s => Some(
            s.parse::<i64>()
                .ok()
                .and_then(Label::from_i64)
                .ok_or_else(|| Error::InvalidArgument(format!("label must be 0, 1, -1 or from-manifest, got {s:?}")))?,
        ),
    };
    let lookup = match (fixed, manifest) {
        (None, Some(m)) => read_label_manifest(m)?,
        (None, None) => bail!(Error::InvalidArgument("--label from-manifest needs --manifest".into())),
        _ => Vec::new(),
    };
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let cfg = ByteEntropyConfig::default();
    let mut records = Vec::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let label = match fixed {
            Some(l) => l,
            None => {
                let sha = mfgraph::pe::sha256_hex(&bytes);
                lookup
                    .iter()
                    .find(|(key, _)| key == name || key.eq_ignore_ascii_case(&sha))
                    .map_or(Label::Unlabeled, |(_, l)| *l)
            }
        };
        match extract_features(&bytes, appeared, label, &cfg) {
            Ok(r) => records.push(r),
            Err(Error::NotPe(msg)) => log::warn!("skipping {}: {msg}", f.display()),
            Err(e) => return Err(e.into()),
        }
    }
    write_records(out, &records)?;
    info!("extracted {} of {} files into {}", records.len(), files.len(), out.display());
    Ok(())
}

/// Training and test graphs: explicit test files, or a stratified hold-out.
fn train_test_graphs(
    cfg: &ExperimentConfig,
    args: &TrainArgs,
) -> anyhow::Result<(Vec<mfgraph::graph::FeatureGraph>, Vec<mfgraph::graph::FeatureGraph>, Vec<harness::InputDigest>)> {
    let builder = cfg.graph_builder()?;
    let train_files = or_config(&args.train, &cfg.data.train)?;
    if train_files.is_empty() {
        bail!(Error::InvalidArgument("no training inputs; pass --train or set data.train".into()));
    }
    let test_files = or_config(&args.test, &cfg.data.test)?;
    let (train, mut digests) = load_graphs(&train_files, &builder)?;
    if test_files.is_empty() {
        let (train, test) = split_graphs(train, 1.0 - cfg.holdout, cfg.seed)?;
        return Ok((train, test, digests));
    }
    let (test, more) = load_graphs(&test_files, &builder)?;
    digests.extend(more);
    Ok((train, test, digests))
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Ingest { inputs, year, out } => {
            let files = expand_inputs(inputs)?;
            let (records, stats) = load_filtered(&files, &FilterPolicy { year: *year })?;
            let paths = write_month_files(out, &partition_by_month(records))?;
            println!("kept {} of {} records in {} month files", stats.kept, stats.read, paths.len());
        }
        Command::Extract {
            input,
            out,
            label,
            manifest,
            appeared,
        } => extract(input, out, label, manifest.as_deref(), *appeared)?,
        Command::BuildGraphs { inputs, skeleton, out } => {
            let mut cfg = cfg;
            if let Some(s) = skeleton {
                cfg.skeleton = s.clone();
            }
            let builder = cfg.graph_builder()?;
            let (graphs, _) = load_graphs(&expand_inputs(inputs)?, &builder)?;
            write_graphs(out, &graphs)?;
            println!("wrote {} graphs to {}", graphs.len(), out.display());
        }
        Command::Cv { inputs, out } => {
            let files = or_config(inputs, &cfg.data.train)?;
            let (graphs, _) = load_graphs(&files, &cfg.graph_builder()?)?;
            let report = run_cv_search(&cfg, &graphs)?;
            fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
            let csv_path = out.join("cv.csv");
            report.write_csv(fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?)?;
            write_json(&out.join("best_cell.json"), &report.best_cell())?;
            let best = &report.rows[report.best];
            println!("best cell {:?}: mean F1 {:.5}", best.cell, best.mean_f1);
        }
        Command::Train(args) => {
            let (train, test, digests) = train_test_graphs(&cfg, args)?;
            let run = run_training(&cfg, &train, Some(&test), digests, &args.out)?;
            if let Some(r) = run.report {
                println!(
                    "test: n {} accuracy {:.5} precision {:.5} recall {:.5} F1 {:.5} AUC {}",
                    r.n,
                    r.accuracy,
                    r.precision,
                    r.recall,
                    r.f1,
                    r.auc.map_or("undefined".into(), |a| format!("{a:.5}"))
                );
            }
        }
        Command::Eval { checkpoint, inputs, out } => {
            let model = load_checkpoint(checkpoint)?;
            let (graphs, _) = load_graphs(&expand_inputs(inputs)?, &cfg.graph_builder()?)?;
            let (report, scores) = evaluate_model(&model, &graphs, "eval")?;
            write_evaluation(out, &report, &scores)?;
            println!("n {} accuracy {:.5} F1 {:.5} AUC {:?}", report.n, report.accuracy, report.f1, report.auc);
        }
        Command::Drift {
            checkpoint,
            inputs,
            holdout,
            out,
        } => {
            let model = load_checkpoint(checkpoint)?;
            let builder = cfg.graph_builder()?;
            let mut subsets = Vec::new();
            if let Some(h) = holdout {
                subsets.push(("holdout".to_string(), load_graphs(std::slice::from_ref(h), &builder)?.0));
            }
            let (graphs, _) = load_graphs(&or_config(inputs, &cfg.data.months)?, &builder)?;
            subsets.extend(month_buckets(graphs).into_iter().map(|(m, g)| (m.to_string(), g)));
            let table = run_drift(&model, &subsets)?;
            write_drift(out, &table)?;
            for (metric, summary) in &table.summary {
                match summary {
                    Some(s) => println!(
                        "{}: best {:.3} worst {:.3} degradation {:.3}",
                        metric.name(),
                        s.best,
                        s.worst,
                        s.degradation
                    ),
                    None => println!("{}: undefined in some subset", metric.name()),
                }
            }
        }
        Command::Baseline { model, data } => {
            let train_files = or_config(&data.train, &cfg.data.train)?;
            if train_files.is_empty() {
                bail!(Error::InvalidArgument("no training inputs; pass --train or set data.train".into()));
            }
            let test_files = or_config(&data.test, &cfg.data.test)?;
            let (train, test) = if test_files.is_empty() {
                let split = split_train_test(load_records(&train_files)?.0, 1.0 - cfg.holdout, cfg.seed)?;
                (split.train, split.test)
            } else {
                (load_records(&train_files)?.0, load_records(&test_files)?.0)
            };
            let (report, scores) = run_baseline((*model).into(), &cfg, &train, &test)?;
            write_evaluation(&data.out, &report, &scores)?;
            println!("{}: accuracy {:.5} F1 {:.5} AUC {:?}", report.dataset, report.accuracy, report.f1, report.auc);
        }
        Command::Synth {
            count,
            months,
            signal,
            drift,
            out,
        } => {
            let synth = SynthConfig {
                count: *count,
                months: months.clone(),
                signal: *signal,
                drift_per_month: *drift,
                ..SynthConfig::default()
            };
            let records = synth_records(&synth, cfg.seed)?;
            write_records(out, &records)?;
            println!("wrote {} records to {}", records.len(), out.display());
        }
    }
    Ok(())
}

/// Exit status per error class; 1 covers anything unclassified.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::kind) {
        Some(ErrorKind::Usage) => 2,
        Some(ErrorKind::Io) => 3,
        Some(ErrorKind::Schema) => 4,
        Some(ErrorKind::Data) => 5,
        Some(ErrorKind::Compat) => 6,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
