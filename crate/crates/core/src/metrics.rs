//! Binary classification metrics, rank-statistic AUC, and month-by-month
//! drift tables.
//!
//! Metrics are fractions in `[0, 1]`; drift summaries and CSV tables
//! report percentage points.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_binary(values: &[usize], what: &str) -> Result<()> {
    match values.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::InvalidArgument(format!("{what} contains non-binary label {v}"))),
        None => Ok(()),
    }
}

pub fn confusion(preds: &[usize], truths: &[usize]) -> Result<Confusion> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!("{} predictions, {} labels", preds.len(), truths.len())));
    }
    check_binary(preds, "predictions")?;
    check_binary(truths, "labels")?;
    let mut c = Confusion::default();
    for (&p, &t) in preds.iter().zip(truths) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1; any zero denominator yields 0.
pub fn scalar_metrics(c: &Confusion) -> Result<ScalarMetrics> {
    let n = c.total();
    if n == 0 {
        return Err(Error::EmptyDataset("no samples in confusion matrix".into()));
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(ScalarMetrics {
        accuracy: ratio(c.tp + c.tn, n),
        precision,
        recall,
        f1,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Equal to the trapezoidal area under the ROC curve.
pub fn roc_auc(scores: &[f64], truths: &[usize]) -> Result<f64> {
    if scores.len() != truths.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), truths.len())));
    }
    check_binary(truths, "labels")?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = truths.iter().filter(|&&t| t == 1).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!("{pos} positives and {neg} negatives")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk tie groups in ascending score order, counting negatives below.
    let mut wins = 0.0;
    let mut neg_below = 0usize;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let group_pos = idx[i..j].iter().filter(|&&k| truths[k] == 1).count();
        let group_neg = (j - i) - group_pos;
        wins += group_pos as f64 * (neg_below as f64 + 0.5 * group_neg as f64);
        neg_below += group_neg;
        i = j;
    }
    Ok(wins / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1, Metric::Auc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Auc => "auc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the evaluated set holds a single class.
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::Accuracy => Some(self.accuracy),
            Metric::Precision => Some(self.precision),
            Metric::Recall => Some(self.recall),
            Metric::F1 => Some(self.f1),
            Metric::Auc => self.auc,
        }
    }
}

/// Positive-class scores are thresholded at 0.5 (strictly above means
/// malicious), matching an argmax over two softmax outputs.
pub fn evaluate_scores(dataset: impl Into<String>, scores: &[f64], truths: &[usize]) -> Result<MetricsReport> {
    let preds: Vec<usize> = scores.iter().map(|&s| (s > 0.5) as usize).collect();
    let c = confusion(&preds, truths)?;
    let m = scalar_metrics(&c)?;
    let auc = match roc_auc(scores, truths) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        dataset: dataset.into(),
        n: truths.len(),
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        auc,
    })
}

/// Best, worst and their gap for one metric, in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSummary {
    pub best: f64,
    pub worst: f64,
    pub degradation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftTable {
    /// Evaluation subsets in chronological order.
    pub rows: Vec<MetricsReport>,
    pub summary: Vec<(Metric, Option<DriftSummary>)>,
}

impl DriftTable {
    pub fn summary_for(&self, m: Metric) -> Option<DriftSummary> {
        self.summary.iter().find(|(k, _)| *k == m).and_then(|(_, s)| *s)
    }
}

/// Summarizes per-subset reports given in chronological order.
pub fn drift_table(rows: Vec<MetricsReport>) -> Result<DriftTable> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset("no monthly reports".into()));
    }
    if rows.len() < 2 {
        return Err(Error::InvalidArgument("a drift table needs at least two subsets".into()));
    }
    let summary = Metric::ALL
        .iter()
        .map(|&m| {
            let values: Vec<f64> = rows.iter().filter_map(|r| r.get(m)).collect();
            let s = if values.is_empty() {
                None
            } else {
                let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let worst = values.iter().copied().fold(f64::INFINITY, f64::min);
                Some(DriftSummary {
                    best: best * 100.0,
                    worst: worst * 100.0,
                    degradation: (best - worst) * 100.0,
                })
            };
            (m, s)
        })
        .collect();
    Ok(DriftTable { rows, summary })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("csv output", io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

fn fmt_opt(v: Option<f64>, scale: f64) -> String {
    v.map(|x| format!("{}", x * scale)).unwrap_or_default()
}

/// One row per report; metrics as fractions.
pub fn write_reports_csv<W: Write>(w: W, reports: &[MetricsReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dataset", "n", "accuracy", "precision", "recall", "f1", "auc"])
        .map_err(csv_err)?;
    for r in reports {
        out.write_record([
            r.dataset.clone(),
            r.n.to_string(),
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string(),
            fmt_opt(r.auc, 1.0),
        ])
        .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))
}

/// Month rows followed by Best, Worst and DegRate rows, all in percent.
pub fn write_drift_csv<W: Write>(w: W, table: &DriftTable) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["subset".to_string(), "n".to_string()];
    header.extend(Metric::ALL.iter().map(|m| m.name().to_string()));
    out.write_record(&header).map_err(csv_err)?;
    for r in &table.rows {
        let mut row = vec![r.dataset.clone(), r.n.to_string()];
        row.extend(Metric::ALL.iter().map(|&m| fmt_opt(r.get(m), 100.0)));
        out.write_record(&row).map_err(csv_err)?;
    }
    for (label, pick) in [
        ("Best", (|s: DriftSummary| s.best) as fn(DriftSummary) -> f64),
        ("Worst", |s| s.worst),
        ("DegRate", |s| s.degradation),
    ] {
        let mut row = vec![label.to_string(), String::new()];
        row.extend(Metric::ALL.iter().map(|&m| fmt_opt(table.summary_for(m).map(pick), 1.0)));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io("csv output", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub sha256: String,
    pub score: f64,
    pub truth: usize,
}

/// Line-delimited `(sha256, score, truth)` records for external ROC plots.
pub fn write_scores<W: Write>(mut w: W, samples: &[ScoredSample]) -> Result<()> {
    for s in samples {
        let line = serde_json::to_string(s).expect("score serializes");
        writeln!(w, "{line}").map_err(|e| Error::io("score dump", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force_auc(scores: &[f64], truths: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if truths[i] == 1 && truths[j] == 0 {
                    pairs += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    fn trapezoid_auc(scores: &[f64], truths: &[usize]) -> f64 {
        // ROC points from descending thresholds, one point per distinct score.
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        let pos = truths.iter().filter(|&&t| t == 1).count() as f64;
        let neg = truths.len() as f64 - pos;
        let mut pts = vec![(0.0, 0.0)];
        for &th in &distinct {
            let tp = scores.iter().zip(truths).filter(|(s, t)| **s >= th && **t == 1).count() as f64;
            let fp = scores.iter().zip(truths).filter(|(s, t)| **s >= th && **t == 0).count() as f64;
            pts.push((fp / neg, tp / pos));
        }
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    #[test]
    fn confusion_examples() {
        let t = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        assert_eq!(
            confusion(&t, &t).unwrap(),
            Confusion { tp: 5, tn: 5, fp: 0, fn_: 0 }
        );
        assert_eq!(confusion(&[1; 4], &[0; 4]).unwrap().fp, 4);
        assert_eq!(
            confusion(&[1, 1, 1, 0, 0, 0], &[1, 0, 1, 1, 0, 0]).unwrap(),
            Confusion { tp: 2, tn: 2, fp: 1, fn_: 1 }
        );
        assert!(confusion(&[1], &[1, 0]).is_err());
        assert!(confusion(&[2], &[1]).is_err());
    }

    #[test]
    fn scalar_examples() {
        let perfect = scalar_metrics(&Confusion { tp: 5, tn: 5, fp: 0, fn_: 0 }).unwrap();
        assert_eq!((perfect.accuracy, perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0, 1.0));
        let m = scalar_metrics(&Confusion { tp: 3, tn: 4, fp: 1, fn_: 2 }).unwrap();
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 * 0.45 / 1.35).abs() < 1e-15);
        let none = scalar_metrics(&Confusion { tp: 0, tn: 0, fp: 0, fn_: 3 }).unwrap();
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
        assert!(scalar_metrics(&Confusion::default()).is_err());
    }

    #[test]
    fn auc_examples() {
        let s = [0.9, 0.8, 0.4, 0.3];
        let t = [1, 0, 1, 0];
        assert_eq!(brute_force_auc(&s, &t), 0.75);
        assert_eq!(roc_auc(&s, &t).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[1, 0, 1, 0, 0]).unwrap(), 0.5);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedAuc(_))));
    }

    fn report(dataset: &str, acc: f64, auc: Option<f64>) -> MetricsReport {
        MetricsReport {
            dataset: dataset.into(),
            n: 10,
            accuracy: acc,
            precision: acc,
            recall: acc,
            f1: acc,
            auc,
        }
    }

    #[test]
    fn drift_examples() {
        let t = drift_table(vec![
            report("2018-02", 0.95, Some(0.98756)),
            report("2018-03", 0.95, Some(0.92872)),
        ])
        .unwrap();
        let auc = t.summary_for(Metric::Auc).unwrap();
        assert!((auc.degradation - 5.884).abs() < 1e-9);
        assert_eq!(t.summary_for(Metric::Accuracy).unwrap().degradation, 0.0);
        let two = drift_table(vec![report("a", 0.9, None), report("b", 0.8, None)]).unwrap();
        assert!((two.summary_for(Metric::Accuracy).unwrap().degradation - 10.0).abs() < 1e-12);
        assert!(two.summary_for(Metric::Auc).is_none());
        assert!(drift_table(vec![]).is_err());
        assert_eq!(two.rows[0].dataset, "a");
    }

    #[test]
    fn drift_csv_layout() {
        let t = drift_table(vec![report("2018-02", 0.9, Some(0.95)), report("2018-03", 0.8, Some(0.9))]).unwrap();
        let mut buf = Vec::new();
        write_drift_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "subset,n,accuracy,precision,recall,f1,auc");
        assert_eq!(lines.len(), 6);
        assert!(lines[3].starts_with("Best,,90,"));
        assert!(lines[5].starts_with("DegRate,"));
    }

    #[test]
    fn evaluate_thresholds_at_half() {
        let r = evaluate_scores("x", &[0.9, 0.5, 0.2, 0.7], &[1, 1, 0, 0]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.auc, Some(0.75));
        let single = evaluate_scores("y", &[0.9, 0.6], &[1, 1]).unwrap();
        assert_eq!(single.auc, None);
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &[r, single]).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(2).unwrap().ends_with(','));
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
        proptest::collection::vec((0u8..20, 0usize..2), 2..60)
            .prop_filter("both classes", |v| v.iter().any(|x| x.1 == 1) && v.iter().any(|x| x.1 == 0))
            .prop_map(|v| (v.iter().map(|x| x.0 as f64 / 10.0).collect(), v.iter().map(|x| x.1).collect()))
    }

    proptest! {
        #[test]
        fn auc_matches_oracles((s, t) in scored()) {
            let a = roc_auc(&s, &t).unwrap();
            prop_assert!((a - brute_force_auc(&s, &t)).abs() < 1e-12);
            prop_assert!((a - trapezoid_auc(&s, &t)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_to_monotone_transforms((s, t) in scored()) {
            let a = roc_auc(&s, &t).unwrap();
            let e: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            let l: Vec<f64> = s.iter().map(|v| 3.0 * v - 7.0).collect();
            prop_assert_eq!(roc_auc(&e, &t).unwrap(), a);
            prop_assert_eq!(roc_auc(&l, &t).unwrap(), a);
        }

        #[test]
        fn auc_complement(vals in proptest::collection::btree_set(0u32..10_000, 2..50), flips in proptest::collection::vec(any::<bool>(), 50)) {
            let s: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            let t: Vec<usize> = (0..s.len()).map(|i| flips[i] as usize).collect();
            prop_assume!(t.contains(&0) && t.contains(&1));
            let inv: Vec<usize> = t.iter().map(|&x| 1 - x).collect();
            prop_assert!((roc_auc(&s, &t).unwrap() + roc_auc(&s, &inv).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn scalar_metrics_bounded(tp in 0usize..50, tn in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let c = Confusion { tp, tn, fp, fn_ };
            prop_assume!(c.total() > 0);
            let m = scalar_metrics(&c).unwrap();
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.accuracy, (tp + tn) as f64 / c.total() as f64);
        }

        #[test]
        fn degradation_is_range(series in proptest::collection::vec(0.0f64..=1.0, 2..15)) {
            let rows = series.iter().enumerate().map(|(i, &v)| report(&i.to_string(), v, Some(v))).collect();
            let t = drift_table(rows).unwrap();
            let max = series.iter().copied().fold(f64::MIN, f64::max);
            let min = series.iter().copied().fold(f64::MAX, f64::min);
            let s = t.summary_for(Metric::Accuracy).unwrap();
            prop_assert!((s.degradation - (max - min) * 100.0).abs() < 1e-12);
            prop_assert!(s.degradation >= 0.0);
            prop_assert!(s.best >= s.worst);
        }
    }
}
