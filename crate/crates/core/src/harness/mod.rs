//! End-to-end experiment runs: dataset loading, training with manifests,
//! evaluation, drift tables, cross-validation and baselines.

mod config;
mod cv;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{BaselineConfig, DataConfig, ExperimentConfig};
pub use cv::{run_cv_search, stratified_folds, CvCell, CvConfig, CvGrid, CvReport, CvRow, GridMode};

use crate::baselines::{concat_matrix, FlatMlp, Knn, LogReg};
use crate::dgcnn::{save_checkpoint, Dgcnn, DgcnnConfig, PreparedGraph, Trainer};
use crate::error::{Error, Result};
use crate::graph::{FeatureGraph, GraphBuilder, GraphReader};
use crate::ingest::{stratified_train_mask, FeatureRecord, RecordReader, YearMonth};
use crate::metrics::{drift_table, evaluate_scores, write_drift_csv, write_reports_csv, write_scores, DriftTable, MetricsReport, ScoredSample};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn is_graph_cache(path: &Path) -> Result<bool> {
    use std::io::BufRead;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: 1,
            message: format!("{}: {e}", path.display()),
        })?;
        return Ok(v.get("node_types").is_some());
    }
    Ok(false)
}

/// Reads feature records from line-delimited files.
pub fn load_records(paths: &[PathBuf]) -> Result<(Vec<FeatureRecord>, Vec<InputDigest>)> {
    let mut records = Vec::new();
    let mut digests = Vec::new();
    for p in paths {
        digests.push(digest_file(p)?);
        for r in RecordReader::open(p)? {
            records.push(r?);
        }
    }
    Ok((records, digests))
}

/// Reads graphs from graph caches, or builds them from record files.
pub fn load_graphs(paths: &[PathBuf], builder: &GraphBuilder) -> Result<(Vec<FeatureGraph>, Vec<InputDigest>)> {
    let mut graphs = Vec::new();
    let mut digests = Vec::new();
    for p in paths {
        digests.push(digest_file(p)?);
        if is_graph_cache(p)? {
            let file = fs::File::open(p).map_err(|e| Error::io(p, e))?;
            for g in GraphReader::new(BufReader::new(file)) {
                graphs.push(g?);
            }
        } else {
            for r in RecordReader::open(p)? {
                graphs.push(builder.build(&r?));
            }
        }
    }
    Ok((graphs, digests))
}

/// Labeled graphs and their class indices; unlabeled ones are dropped.
pub fn labeled_classes(graphs: &[FeatureGraph]) -> (Vec<&FeatureGraph>, Vec<usize>) {
    let mut out = Vec::new();
    let mut classes = Vec::new();
    for g in graphs {
        if let Some(c) = g.label.class() {
            out.push(g);
            classes.push(c);
        }
    }
    if out.len() < graphs.len() {
        log::warn!("ignoring {} unlabeled graphs", graphs.len() - out.len());
    }
    (out, classes)
}

fn prepare(graphs: &[&FeatureGraph]) -> Result<Vec<PreparedGraph>> {
    graphs.iter().map(|g| PreparedGraph::from_graph(g)).collect()
}

/// Stratified, seeded split of labeled graphs; both halves keep input order.
pub fn split_graphs(graphs: Vec<FeatureGraph>, train_ratio: f64, seed: u64) -> Result<(Vec<FeatureGraph>, Vec<FeatureGraph>)> {
    let graphs: Vec<FeatureGraph> = graphs.into_iter().filter(|g| g.label.is_labeled()).collect();
    let classes: Vec<usize> = graphs.iter().map(|g| g.label.class().expect("labeled")).collect();
    let mask = stratified_train_mask(&classes, train_ratio, seed)?;
    let (train, test): (Vec<_>, Vec<_>) = graphs.into_iter().zip(mask).partition(|(_, m)| *m);
    Ok((
        train.into_iter().map(|(g, _)| g).collect(),
        test.into_iter().map(|(g, _)| g).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_auc: Option<f64>,
}

pub struct TrainOutcome {
    pub model: Dgcnn,
    pub history: Vec<EpochRecord>,
}

/// Trains a model from scratch. `k` is fixed from the training graphs;
/// if `val` is given it is scored after every epoch.
pub fn train_model(
    cfg: &ExperimentConfig,
    model_cfg: &DgcnnConfig,
    train: &[FeatureGraph],
    val: Option<&[FeatureGraph]>,
) -> Result<TrainOutcome> {
    let (train, labels) = labeled_classes(train);
    if train.is_empty() {
        return Err(Error::EmptyDataset("no labeled training graphs".into()));
    }
    let counts: Vec<usize> = train.iter().map(|g| g.n()).collect();
    let k = model_cfg.resolve_k(&counts)?;
    let width = train[0].x.ncols();
    let model = Dgcnn::new(model_cfg.clone(), width, k, &mut seed::rng(cfg.seed, Stream::Init))?;
    let prepared = prepare(&train)?;
    let val = match val {
        Some(v) => {
            let (graphs, classes) = labeled_classes(v);
            Some((prepare(&graphs)?, classes))
        }
        None => None,
    };
    let mut trainer = Trainer::new(model, cfg.train, cfg.seed)?;
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for epoch in 1..=cfg.train.epochs {
        let train_loss = trainer.run_epoch(&prepared, &labels)?;
        let (val_f1, val_auc) = match &val {
            Some((g, y)) if !g.is_empty() => {
                let scores = positive_scores(&trainer.model, g)?;
                let r = evaluate_scores("validation", &scores, y)?;
                (Some(r.f1), r.auc)
            }
            _ => (None, None),
        };
        log::info!("epoch {epoch}: loss {train_loss:.5} val F1 {val_f1:?}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_f1,
            val_auc,
        });
    }
    Ok(TrainOutcome {
        model: trainer.into_model(),
        history,
    })
}

fn positive_scores(model: &Dgcnn, graphs: &[PreparedGraph]) -> Result<Vec<f64>> {
    Ok(model.predict_proba(graphs)?.column(1).to_vec())
}

/// Scores labeled graphs; returns the report and the raw scores.
pub fn evaluate_model(model: &Dgcnn, graphs: &[FeatureGraph], dataset: &str) -> Result<(MetricsReport, Vec<ScoredSample>)> {
    let (graphs, truths) = labeled_classes(graphs);
    if graphs.is_empty() {
        return Err(Error::EmptyDataset(format!("no labeled graphs in {dataset}")));
    }
    let scores = positive_scores(model, &prepare(&graphs)?)?;
    let report = evaluate_scores(dataset, &scores, &truths)?;
    let samples = graphs
        .iter()
        .zip(&scores)
        .zip(&truths)
        .map(|((g, &score), &truth)| ScoredSample {
            sha256: g.sha256.clone(),
            score,
            truth,
        })
        .collect();
    Ok((report, samples))
}

/// Evaluates each subset in the given (chronological) order.
pub fn run_drift(model: &Dgcnn, subsets: &[(String, Vec<FeatureGraph>)]) -> Result<DriftTable> {
    let reports = subsets
        .iter()
        .map(|(name, graphs)| evaluate_model(model, graphs, name).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    drift_table(reports)
}

/// Groups graphs by month, chronologically.
pub fn month_buckets(graphs: Vec<FeatureGraph>) -> BTreeMap<YearMonth, Vec<FeatureGraph>> {
    let mut out: BTreeMap<YearMonth, Vec<FeatureGraph>> = BTreeMap::new();
    for g in graphs {
        out.entry(g.appeared).or_default().push(g);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub skeleton_edges: Vec<String>,
    pub inputs: Vec<InputDigest>,
    /// Digest of the ordered training sample ids.
    pub train_ids_sha256: String,
    pub n_train: usize,
    pub n_test: usize,
    pub input_width: usize,
    pub k: usize,
    pub epochs: Vec<EpochRecord>,
    pub wall_clock_secs: f64,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
}

/// Files written by [`run_training`].
pub struct TrainingArtifacts {
    pub model: Dgcnn,
    pub manifest: RunManifest,
    pub report: Option<MetricsReport>,
}

fn ids_digest(graphs: &[FeatureGraph]) -> String {
    let mut h = Sha256::new();
    for g in graphs {
        h.update(g.sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Trains on `train`, optionally evaluates on `test`, and writes
/// `model.ckpt`, `manifest.json`, `history.csv` and, with a test set,
/// `report.csv` and `scores.jsonl` into `out`.
pub fn run_training(
    cfg: &ExperimentConfig,
    train: &[FeatureGraph],
    test: Option<&[FeatureGraph]>,
    inputs: Vec<InputDigest>,
    out: &Path,
) -> Result<TrainingArtifacts> {
    create_dir(out)?;
    let start = Instant::now();
    let outcome = train_model(cfg, &cfg.model, train, test)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&ckpt, &outcome.model)?;

    let mut history = csv::Writer::from_writer(create_file(&out.join("history.csv"))?);
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    history
        .write_record(["epoch", "train_loss", "val_f1", "val_auc"])
        .map_err(csv_err)?;
    for e in &outcome.history {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        history
            .write_record([e.epoch.to_string(), e.train_loss.to_string(), opt(e.val_f1), opt(e.val_auc)])
            .map_err(csv_err)?;
    }
    history.flush().map_err(|e| Error::io(out, e))?;

    let report = match test {
        Some(t) => {
            let (report, scores) = evaluate_model(&outcome.model, t, "test")?;
            write_reports_csv(create_file(&out.join("report.csv"))?, std::slice::from_ref(&report))?;
            write_scores(create_file(&out.join("scores.jsonl"))?, &scores)?;
            Some(report)
        }
        None => None,
    };

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        skeleton_edges: cfg.skeleton()?.edges().iter().map(|(a, b)| format!("{a}-{b}")).collect(),
        inputs,
        train_ids_sha256: ids_digest(train),
        n_train: train.iter().filter(|g| g.label.is_labeled()).count(),
        n_test: test.map_or(0, |t| t.iter().filter(|g| g.label.is_labeled()).count()),
        input_width: outcome.model.input_width,
        k: outcome.model.k,
        epochs: outcome.history,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        checkpoint: ckpt.clone(),
        checkpoint_sha256: digest_file(&ckpt)?.sha256,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = out.join("manifest.json");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(TrainingArtifacts {
        model: outcome.model,
        manifest,
        report,
    })
}

/// Writes `report.csv` and `scores.jsonl` for one evaluation.
pub fn write_evaluation(out: &Path, report: &MetricsReport, scores: &[ScoredSample]) -> Result<()> {
    create_dir(out)?;
    write_reports_csv(create_file(&out.join("report.csv"))?, std::slice::from_ref(report))?;
    write_scores(create_file(&out.join("scores.jsonl"))?, scores)
}

pub fn write_drift(out: &Path, table: &DriftTable) -> Result<()> {
    create_dir(out)?;
    write_drift_csv(create_file(&out.join("drift.csv"))?, table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Logreg,
    Knn,
    Mlp,
}

/// Trains a flat-vector baseline and scores the test records.
pub fn run_baseline(
    kind: BaselineKind,
    cfg: &ExperimentConfig,
    train: &[FeatureRecord],
    test: &[FeatureRecord],
) -> Result<(MetricsReport, Vec<ScoredSample>)> {
    let labeled = |rs: &[FeatureRecord]| -> (Vec<FeatureRecord>, Vec<usize>) {
        rs.iter()
            .filter_map(|r| r.label.class().map(|c| (r.clone(), c)))
            .unzip()
    };
    let (train, y) = labeled(train);
    let (test, truths) = labeled(test);
    if test.is_empty() {
        return Err(Error::EmptyDataset("no labeled test records".into()));
    }
    let x = concat_matrix(&train, &cfg.encoder);
    let xt = concat_matrix(&test, &cfg.encoder);
    let scores = match kind {
        BaselineKind::Logreg => LogReg::train(x.view(), &y, &cfg.baseline.logreg, cfg.seed)?.predict_scores(xt.view()),
        BaselineKind::Knn => Knn::fit(x, y, cfg.baseline.knn_k)?.predict_scores(xt.view()),
        BaselineKind::Mlp => FlatMlp::train(x.view(), &y, &cfg.baseline.mlp, cfg.seed)?.predict_scores(xt.view()),
    };
    let name = format!("baseline-{kind:?}").to_lowercase();
    let report = evaluate_scores(name, &scores, &truths)?;
    let samples = test
        .iter()
        .zip(&scores)
        .zip(&truths)
        .map(|((r, &score), &truth)| ScoredSample {
            sha256: r.sha256.clone(),
            score,
            truth,
        })
        .collect();
    Ok((report, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgcnn::load_checkpoint;
    use crate::graph::write_graphs;
    use crate::ingest::write_records;
    use crate::synth::{synth_records, SynthConfig};

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.model.conv_channels = vec![8, 8];
        cfg.model.mlp_hidden = vec![16];
        cfg.train.epochs = 2;
        cfg.train.batch_size = 16;
        cfg
    }

    fn graphs(n: usize, months: Vec<u8>) -> Vec<FeatureGraph> {
        let recs = synth_records(
            &SynthConfig {
                count: n,
                months,
                ..SynthConfig::default()
            },
            5,
        )
        .unwrap();
        let b = GraphBuilder::default();
        recs.iter().map(|r| b.build(r)).collect()
    }

    #[test]
    fn empty_training_set_fails_early() {
        let cfg = small_cfg();
        assert!(matches!(
            train_model(&cfg, &cfg.model, &[], None),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn training_run_writes_artifacts_and_reloads() {
        let cfg = small_cfg();
        let (train, test) = split_graphs(graphs(60, vec![1]), 0.8, cfg.seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = run_training(&cfg, &train, Some(&test), vec![], dir.path()).unwrap();
        for f in ["model.ckpt", "manifest.json", "history.csv", "report.csv", "scores.jsonl"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(out.manifest.epochs.len(), 2);
        assert_eq!(out.manifest.n_train + out.manifest.n_test, 60);
        let back = load_checkpoint(&dir.path().join("model.ckpt")).unwrap();
        assert_eq!(back, out.model);
        let (r, _) = evaluate_model(&back, &test, "test").unwrap();
        assert_eq!(Some(r), out.report);
        assert!(evaluate_model(&back, &[], "none").is_err());
    }

    #[test]
    fn drift_on_training_month_matches_evaluation() {
        let cfg = small_cfg();
        let all = graphs(40, vec![1, 2]);
        let model = train_model(&cfg, &cfg.model, &all, None).unwrap().model;
        let buckets = month_buckets(all);
        let subsets: Vec<(String, Vec<FeatureGraph>)> =
            buckets.into_iter().map(|(m, g)| (m.to_string(), g)).collect();
        let table = run_drift(&model, &subsets).unwrap();
        assert_eq!(table.rows[0].dataset, "2018-01");
        let (direct, _) = evaluate_model(&model, &subsets[0].1, "2018-01").unwrap();
        assert_eq!(table.rows[0], direct);
        let same = run_drift(&model, &[subsets[0].clone(), subsets[0].clone()]).unwrap();
        for (_, s) in same.summary {
            assert_eq!(s.map(|s| s.degradation), Some(0.0));
        }
    }

    #[test]
    fn graph_caches_and_record_files_load_alike() {
        let recs = synth_records(
            &SynthConfig {
                count: 10,
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("r.jsonl");
        let gp = dir.path().join("g.jsonl");
        write_records(&rp, &recs).unwrap();
        let b = GraphBuilder::default();
        let built: Vec<_> = recs.iter().map(|r| b.build(r)).collect();
        write_graphs(&gp, &built).unwrap();
        let (a, da) = load_graphs(&[rp], &b).unwrap();
        let (c, _) = load_graphs(&[gp], &b).unwrap();
        assert_eq!(a, built);
        assert_eq!(c, built);
        assert_eq!(da[0].sha256.len(), 64);
    }

    #[test]
    fn cv_single_cell() {
        let mut cfg = small_cfg();
        cfg.cv.folds = 2;
        cfg.cv.grid = CvGrid {
            mode: GridMode::Full,
            mlp_layers: vec![2],
            neurons: vec![8],
            channels: vec![4],
            pooling_rate: vec![0.75],
            conv_depth: vec![1],
            ..CvGrid::default()
        };
        let report = run_cv_search(&cfg, &graphs(30, vec![1])).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.best, 0);
        assert_eq!(report.rows[0].fold_f1.len(), 2);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("mlp_layers,neurons,channels,pooling_rate,conv_depth,fold1_f1,fold2_f1,mean_f1"));
    }

    #[test]
    fn baselines_run_on_records() {
        let mut cfg = small_cfg();
        cfg.baseline.mlp.hidden = vec![8];
        cfg.baseline.mlp.train.epochs = 2;
        let recs = synth_records(
            &SynthConfig {
                count: 40,
                ..SynthConfig::default()
            },
            2,
        )
        .unwrap();
        let (train, test) = recs.split_at(30);
        for kind in [BaselineKind::Logreg, BaselineKind::Knn, BaselineKind::Mlp] {
            let (r, s) = run_baseline(kind, &cfg, train, test).unwrap();
            assert_eq!(r.n, 10);
            assert_eq!(s.len(), 10);
        }
    }
}
