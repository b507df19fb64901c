use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::mlp::Mode;
use super::model::{Dgcnn, PreparedGraph};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig::default(),
        }
    }
}

/// Minibatch Adam over a fixed training set. Batch order and dropout draw
/// from separate seeded streams, so a run is reproducible from its seed.
pub struct Trainer {
    pub model: Dgcnn,
    pub config: TrainConfig,
    adam: AdamState,
    order_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(model: Dgcnn, config: TrainConfig, seed: u64) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let adam = AdamState::new(config.adam, &model.params);
        Ok(Trainer {
            model,
            config,
            adam,
            order_rng: seed::rng(seed, Stream::BatchOrder),
            dropout_rng: seed::rng(seed, Stream::Dropout),
            epochs_done: 0,
        })
    }

    /// One Adam step on the given batch; returns its mean loss.
    pub fn step(&mut self, batch: &[&PreparedGraph], labels: &[usize]) -> Result<f64> {
        let (loss, grads) = self
            .model
            .loss_and_grad(batch, labels, Mode::Train, &mut self.dropout_rng)?;
        self.adam.update(&mut self.model.params, &grads)?;
        Ok(loss)
    }

    /// One pass over shuffled minibatches; returns the sample-weighted mean
    /// training loss.
    pub fn run_epoch(&mut self, graphs: &[PreparedGraph], labels: &[usize]) -> Result<f64> {
        if graphs.is_empty() {
            return Err(Error::EmptyDataset("no training graphs".into()));
        }
        if graphs.len() != labels.len() {
            return Err(Error::Shape(format!("{} graphs, {} labels", graphs.len(), labels.len())));
        }
        let mut order: Vec<usize> = (0..graphs.len()).collect();
        order.shuffle(&mut self.order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&PreparedGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            total += self.step(&batch, &y)? * chunk.len() as f64;
        }
        self.epochs_done += 1;
        Ok(total / graphs.len() as f64)
    }

    pub fn into_model(self) -> Dgcnn {
        self.model
    }
}
