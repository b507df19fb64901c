//! Flat-vector baselines: the nine group encodings concatenated into one
//! vector, classified without any graph structure.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dgcnn::{
    batch_loss, mlp_backward, mlp_forward, mlp_predict, AdamState, MlpParams, Mode, TrainConfig,
};
use crate::error::{Error, Result};
use crate::graph::{encode_base, GraphBuilder, NodeEncoderConfig, BASE_WIDTH};
use crate::ingest::FeatureRecord;
use crate::seed::{self, Stream};

pub const FLAT_WIDTH: usize = 9 * BASE_WIDTH;

/// `G|H|I|E|Sec|BH|BEH|Str|D`, each block the node encoder's base vector.
pub fn concat_features(record: &FeatureRecord, cfg: &NodeEncoderConfig) -> Array1<f64> {
    let mut out = Array1::zeros(FLAT_WIDTH);
    for (i, group) in GraphBuilder::major_groups(record).iter().enumerate() {
        let block = encode_base(group, cfg);
        out.slice_mut(s![i * BASE_WIDTH..(i + 1) * BASE_WIDTH])
            .assign(&ArrayView1::from(&block));
    }
    out
}

pub fn concat_matrix(records: &[FeatureRecord], cfg: &NodeEncoderConfig) -> Array2<f64> {
    let mut x = Array2::zeros((records.len(), FLAT_WIDTH));
    for (i, r) in records.iter().enumerate() {
        x.row_mut(i).assign(&concat_features(r, cfg));
    }
    x
}

fn check_training_set(x: ArrayView2<'_, f64>, y: &[usize]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows, {} labels", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset("no training samples".into()));
    }
    if let Some(&v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidArgument(format!("non-binary label {v}")));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(Error::Stratification("training set holds a single class".into()));
    }
    Ok(())
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lr: 0.01,
            epochs: 50,
            batch_size: 64,
        }
    }
}

/// Logistic regression fit by minibatch gradient descent from zero weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LogReg {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl LogReg {
    pub fn train(x: ArrayView2<'_, f64>, y: &[usize], cfg: &LogRegConfig, seed: u64) -> Result<Self> {
        check_training_set(x, y)?;
        if cfg.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut model = LogReg {
            weights: Array1::zeros(x.ncols()),
            bias: 0.0,
        };
        let mut rng = seed::rng(seed, Stream::Baseline);
        let mut order: Vec<usize> = (0..y.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut gw = Array1::zeros(x.ncols());
                let mut gb = 0.0;
                for &i in chunk {
                    let row = x.row(i);
                    let err = sigmoid(row.dot(&model.weights) + model.bias) - y[i] as f64;
                    gw.scaled_add(err, &row);
                    gb += err;
                }
                let step = cfg.lr / chunk.len() as f64;
                model.weights.scaled_add(-step, &gw);
                model.bias -= step * gb;
            }
        }
        Ok(model)
    }

    pub fn predict_scores(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.dot(&self.weights).iter().map(|&v| sigmoid(v + self.bias)).collect()
    }
}

/// Euclidean k-nearest-neighbor vote.
#[derive(Debug, Clone)]
pub struct Knn {
    x: Array2<f64>,
    y: Vec<usize>,
    pub k: usize,
}

impl Knn {
    pub fn fit(x: Array2<f64>, y: Vec<usize>, k: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows, {} labels", x.nrows(), y.len())));
        }
        if y.is_empty() {
            return Err(Error::EmptyDataset("no training samples".into()));
        }
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let k = k.min(y.len());
        Ok(Knn { x, y, k })
    }

    /// Label and positive-neighbor fraction. A split vote goes to the
    /// nearest neighbor's label; equidistant neighbors rank by index.
    pub fn predict(&self, query: ArrayView1<'_, f64>) -> (usize, f64) {
        let mut dist: Vec<(f64, usize)> = self
            .x
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| (row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_by(cmp);
        let positives = dist.iter().filter(|&&(_, i)| self.y[i] == 1).count();
        let score = positives as f64 / self.k as f64;
        let label = if 2 * positives > self.k {
            1
        } else if 2 * positives < self.k {
            0
        } else {
            self.y[dist[0].1]
        };
        (label, score)
    }

    pub fn predict_scores(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        x.axis_iter(Axis(0)).map(|q| self.predict(q).1).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatMlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub train: TrainConfig,
}

impl Default for FlatMlpConfig {
    fn default() -> Self {
        FlatMlpConfig {
            hidden: vec![1024, 1024],
            dropout: 0.5,
            train: TrainConfig::default(),
        }
    }
}

/// The graph model's classifier head applied directly to flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMlp {
    pub params: MlpParams,
}

impl FlatMlp {
    pub fn train(x: ArrayView2<'_, f64>, y: &[usize], cfg: &FlatMlpConfig, seed: u64) -> Result<Self> {
        check_training_set(x, y)?;
        if cfg.train.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let mut params = MlpParams::init(x.ncols(), &cfg.hidden, 2, &mut seed::rng(seed, Stream::Init));
        let mut adam = AdamState::new(cfg.train.adam, &params);
        let mut order_rng = seed::rng(seed, Stream::BatchOrder);
        let mut dropout_rng = seed::rng(seed, Stream::Dropout);
        let mut order: Vec<usize> = (0..y.len()).collect();
        for _ in 0..cfg.train.epochs {
            order.shuffle(&mut order_rng);
            for chunk in order.chunks(cfg.train.batch_size) {
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
                let cache = mlp_forward(&params, xb.view(), Mode::Train, cfg.dropout, &mut dropout_rng);
                let (_, dlogits) = batch_loss(&cache.probs, &yb);
                let (grads, _) = mlp_backward(&params, &cache, dlogits);
                adam.update(&mut params, &grads)?;
            }
        }
        Ok(FlatMlp { params })
    }

    pub fn predict_scores(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        mlp_predict(&self.params, x).column(1).to_vec()
    }
}
