//! Graph classifier: stacked graph convolutions, sort pooling, a learned
//! single-channel aggregation and an MLP head, trained with Adam.
//!
//! All arithmetic is `f64`. Gradients are exact; sort pooling is treated as
//! a fixed row selection during backpropagation.

mod adam;
mod checkpoint;
mod mlp;
mod model;
pub mod ops;
mod train;

use ndarray::Array2;
use rand::Rng;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use mlp::{batch_loss, mlp_backward, mlp_forward, mlp_predict, MlpCache, MlpParams, Mode};
pub use model::{Dgcnn, DgcnnConfig, Embedding, ModelParams, PreparedGraph};
pub use ops::Activation;
pub use train::{TrainConfig, Trainer};

/// Uniform access to a parameter set as flat tensors, in a fixed order.
pub trait Tensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Glorot-uniform `rows x cols` matrix.
pub(crate) fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}
