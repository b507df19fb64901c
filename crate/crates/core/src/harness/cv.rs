//! Stratified k-fold hyperparameter search.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dgcnn::DgcnnConfig;
use crate::error::{Error, Result};
use crate::graph::FeatureGraph;
use crate::seed::{self, Stream};

use super::{labeled_classes, train_model, ExperimentConfig};

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvCell {
    /// Weight layers of the perceptron, output layer included.
    pub mlp_layers: usize,
    pub neurons: usize,
    pub channels: usize,
    pub pooling_rate: f64,
    pub conv_depth: usize,
}

impl Default for CvCell {
    fn default() -> Self {
        CvCell {
            mlp_layers: 3,
            neurons: 1024,
            channels: 48,
            pooling_rate: 0.75,
            conv_depth: 3,
        }
    }
}

impl CvCell {
    pub fn apply(&self, base: &DgcnnConfig) -> DgcnnConfig {
        DgcnnConfig {
            conv_channels: vec![self.channels; self.conv_depth],
            mlp_hidden: vec![self.neurons; self.mlp_layers.saturating_sub(1)],
            pooling_rate: self.pooling_rate,
            k: None,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// The base cell plus every single-axis deviation from it.
    OneAtATime,
    /// Full Cartesian product of the axes.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvGrid {
    pub mode: GridMode,
    pub base: CvCell,
    pub mlp_layers: Vec<usize>,
    pub neurons: Vec<usize>,
    pub channels: Vec<usize>,
    pub pooling_rate: Vec<f64>,
    pub conv_depth: Vec<usize>,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            mode: GridMode::OneAtATime,
            base: CvCell::default(),
            mlp_layers: vec![2, 3, 4],
            neurons: vec![256, 512, 1024],
            channels: vec![16, 32, 48, 64],
            pooling_rate: vec![0.5, 0.6, 0.75, 0.9],
            conv_depth: vec![3],
        }
    }
}

impl CvGrid {
    pub fn cells(&self) -> Vec<CvCell> {
        match self.mode {
            GridMode::Full => {
                let mut out = Vec::new();
                for &mlp_layers in &self.mlp_layers {
                    for &neurons in &self.neurons {
                        for &channels in &self.channels {
                            for &pooling_rate in &self.pooling_rate {
                                for &conv_depth in &self.conv_depth {
                                    out.push(CvCell {
                                        mlp_layers,
                                        neurons,
                                        channels,
                                        pooling_rate,
                                        conv_depth,
                                    });
                                }
                            }
                        }
                    }
                }
                out
            }
            GridMode::OneAtATime => {
                let b = self.base;
                let mut out = vec![b];
                let mut push = |c: CvCell| {
                    if !out.contains(&c) {
                        out.push(c);
                    }
                };
                self.mlp_layers.iter().for_each(|&v| push(CvCell { mlp_layers: v, ..b }));
                self.neurons.iter().for_each(|&v| push(CvCell { neurons: v, ..b }));
                self.channels.iter().for_each(|&v| push(CvCell { channels: v, ..b }));
                self.pooling_rate.iter().for_each(|&v| push(CvCell { pooling_rate: v, ..b }));
                self.conv_depth.iter().for_each(|&v| push(CvCell { conv_depth: v, ..b }));
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub grid: CvGrid,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            grid: CvGrid::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        let cells = self.grid.cells();
        if cells.is_empty() {
            return Err(Error::Config("search grid is empty".into()));
        }
        for c in cells {
            if c.mlp_layers == 0 || c.neurons == 0 || c.channels == 0 || c.conv_depth == 0 {
                return Err(Error::Config(format!("grid cell {c:?} has a zero size")));
            }
            if !(c.pooling_rate > 0.0 && c.pooling_rate <= 1.0) {
                return Err(Error::Config(format!("grid pooling rate {} outside (0, 1]", c.pooling_rate)));
            }
        }
        Ok(())
    }
}

/// Fold index per sample. Each class is shuffled separately and the
/// classes are dealt round-robin, so folds are stratified and their sizes
/// differ by at most one.
pub fn stratified_folds(classes: &[usize], folds: usize, master_seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    let mut rng = seed::rng(master_seed, Stream::Folds);
    let mut order = Vec::with_capacity(classes.len());
    for class in 0..2 {
        let mut members: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == class).collect();
        if members.len() < folds {
            return Err(Error::Stratification(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut fold = vec![0; classes.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub cell: CvCell,
    /// Best per-epoch validation F1 of each fold.
    pub fold_f1: Vec<f64>,
    pub mean_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub rows: Vec<CvRow>,
    /// Index into `rows` of the winning cell (first on ties).
    pub best: usize,
}

impl CvReport {
    pub fn best_cell(&self) -> CvCell {
        self.rows[self.best].cell
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let folds = self.rows.first().map_or(0, |r| r.fold_f1.len());
        let mut header: Vec<String> = ["mlp_layers", "neurons", "channels", "pooling_rate", "conv_depth"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=folds).map(|i| format!("fold{i}_f1")));
        header.push("mean_f1".into());
        let io = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        out.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let c = r.cell;
            let mut row = vec![
                c.mlp_layers.to_string(),
                c.neurons.to_string(),
                c.channels.to_string(),
                c.pooling_rate.to_string(),
                c.conv_depth.to_string(),
            ];
            row.extend(r.fold_f1.iter().map(|f| f.to_string()));
            row.push(r.mean_f1.to_string());
            out.write_record(&row).map_err(io)?;
        }
        out.flush().map_err(|e| Error::io("csv output", e))
    }
}

/// Scores every grid cell by mean validation F1 over stratified folds.
pub fn run_cv_search(cfg: &ExperimentConfig, graphs: &[FeatureGraph]) -> Result<CvReport> {
    cfg.cv.validate()?;
    let (labeled, classes) = labeled_classes(graphs);
    if labeled.is_empty() {
        return Err(Error::EmptyDataset("no labeled graphs for cross-validation".into()));
    }
    let fold = stratified_folds(&classes, cfg.cv.folds, cfg.seed)?;
    let mut rows = Vec::new();
    for cell in cfg.cv.grid.cells() {
        let model_cfg = cell.apply(&cfg.model);
        let mut fold_f1 = Vec::with_capacity(cfg.cv.folds);
        for f in 0..cfg.cv.folds {
            let train: Vec<FeatureGraph> = (0..labeled.len())
                .filter(|&i| fold[i] != f)
                .map(|i| labeled[i].clone())
                .collect();
            let val: Vec<FeatureGraph> = (0..labeled.len())
                .filter(|&i| fold[i] == f)
                .map(|i| labeled[i].clone())
                .collect();
            let outcome = train_model(cfg, &model_cfg, &train, Some(&val))?;
            let best = outcome
                .history
                .iter()
                .filter_map(|e| e.val_f1)
                .fold(0.0, f64::max);
            log::info!("cv cell {cell:?} fold {}: best F1 {best:.4}", f + 1);
            fold_f1.push(best);
        }
        let mean_f1 = fold_f1.iter().sum::<f64>() / fold_f1.len() as f64;
        rows.push(CvRow { cell, fold_f1, mean_f1 });
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_f1 > rows[best].mean_f1 {
            best = i;
        }
    }
    Ok(CvReport { rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grid_contains_reference_cell() {
        let cells = CvGrid::default().cells();
        let reference = CvCell {
            mlp_layers: 3,
            neurons: 1024,
            channels: 48,
            pooling_rate: 0.75,
            conv_depth: 3,
        };
        assert_eq!(cells[0], reference);
        assert_eq!(cells.iter().filter(|c| **c == reference).count(), 1);
        let cfg = reference.apply(&DgcnnConfig::default());
        assert_eq!(cfg, DgcnnConfig::default());
    }

    #[test]
    fn full_grid_is_product() {
        let g = CvGrid {
            mode: GridMode::Full,
            mlp_layers: vec![2, 3],
            neurons: vec![8],
            channels: vec![4, 8, 16],
            pooling_rate: vec![0.5, 0.9],
            conv_depth: vec![1],
            ..CvGrid::default()
        };
        assert_eq!(g.cells().len(), 12);
    }

    #[test]
    fn hundred_samples_five_folds() {
        let classes: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let fold = stratified_folds(&classes, 5, 3).unwrap();
        for f in 0..5 {
            assert_eq!(fold.iter().filter(|&&x| x == f).count(), 20);
            assert_eq!((0..100).filter(|&i| fold[i] == f && classes[i] == 1).count(), 10);
        }
        assert!(stratified_folds(&[0, 0, 0, 1], 2, 0).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(n0 in 5usize..60, n1 in 5usize..60, k in 2usize..6, seed in 0u64..50) {
            let classes: Vec<usize> = (0..n0).map(|_| 0).chain((0..n1).map(|_| 1)).collect();
            let fold = stratified_folds(&classes, k, seed).unwrap();
            let sizes: Vec<usize> = (0..k).map(|f| fold.iter().filter(|&&x| x == f).count()).collect();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n0 + n1);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(fold.iter().all(|&f| f < k));
        }
    }
}
