//! Fully connected classifier head: tanh hidden layers with inverted
//! dropout, softmax output. Shared by the graph model and the flat baseline.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{cross_entropy, cross_entropy_logit_grad, softmax_rows, Activation};
use super::{glorot, Tensors};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `weights[l]` maps layer `l` inputs to its outputs; the last entry is
    /// the output layer.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Whether dropout is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Infer,
}

impl MlpParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng>(input: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let weights = sizes.windows(2).map(|p| glorot(p[0], p[1], rng)).collect();
        let biases = sizes[1..].iter().map(|&s| Array1::zeros(s)).collect();
        MlpParams { weights, biases }
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn output_width(&self) -> usize {
        self.weights.last().expect("at least one layer").ncols()
    }
}

impl Tensors for MlpParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice().expect("standard layout"))
            .chain(self.biases.iter().map(|b| b.as_slice().expect("standard layout")))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .chain(self.biases.iter_mut().map(|b| b.as_slice_mut().expect("standard layout")))
            .collect()
    }
}

/// Intermediate values of a forward pass over a batch (one row per sample).
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each layer; entry 0 is the batch itself.
    inputs: Vec<Array2<f64>>,
    /// Hidden activations before dropout.
    hidden: Vec<Array2<f64>>,
    /// Dropout multipliers (0 or `1/(1-p)`) per hidden layer, if active.
    masks: Vec<Option<Array2<f64>>>,
    pub probs: Array2<f64>,
}

pub fn mlp_forward<R: Rng>(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
    mode: Mode,
    dropout: f64,
    rng: &mut R,
) -> MlpCache {
    let layers = params.weights.len();
    let mut inputs = vec![x.to_owned()];
    let mut hidden = Vec::with_capacity(layers - 1);
    let mut masks = Vec::with_capacity(layers - 1);
    for l in 0..layers - 1 {
        let mut a = inputs[l].dot(&params.weights[l]) + &params.biases[l];
        a.mapv_inplace(f64::tanh);
        let (out, mask) = if mode == Mode::Train && dropout > 0.0 {
            let keep = 1.0 / (1.0 - dropout);
            let mask = Array2::from_shape_fn(a.raw_dim(), |_| {
                if rng.gen::<f64>() < dropout {
                    0.0
                } else {
                    keep
                }
            });
            (&a * &mask, Some(mask))
        } else {
            (a.clone(), None)
        };
        hidden.push(a);
        masks.push(mask);
        inputs.push(out);
    }
    let logits = inputs[layers - 1].dot(&params.weights[layers - 1]) + &params.biases[layers - 1];
    MlpCache {
        inputs,
        hidden,
        masks,
        probs: softmax_rows(&logits),
    }
}

/// Inference-mode probabilities.
pub fn mlp_predict(params: &MlpParams, x: ArrayView2<'_, f64>) -> Array2<f64> {
    // The RNG is never consulted with dropout off.
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    mlp_forward(params, x, Mode::Infer, 0.0, &mut rng).probs
}

/// Mean cross-entropy of a batch and its gradient with respect to the logits.
pub fn batch_loss(probs: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let b = labels.len() as f64;
    let mut grad = Array2::zeros(probs.raw_dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss += cross_entropy(probs.row(i), y);
        grad.row_mut(i).assign(&(cross_entropy_logit_grad(probs.row(i), y) / b));
    }
    (loss / b, grad)
}

/// Backpropagates logit gradients; returns parameter gradients and the
/// gradient with respect to the batch input.
pub fn mlp_backward(params: &MlpParams, cache: &MlpCache, dlogits: Array2<f64>) -> (MlpParams, Array2<f64>) {
    let layers = params.weights.len();
    let mut grads = params.zeros_like();
    let mut delta = dlogits;
    for l in (0..layers).rev() {
        grads.weights[l] = cache.inputs[l].t().dot(&delta);
        grads.biases[l] = delta.sum_axis(Axis(0));
        let mut dinput = delta.dot(&params.weights[l].t());
        if l == 0 {
            return (grads, dinput);
        }
        let h = l - 1;
        if let Some(mask) = &cache.masks[h] {
            dinput *= mask;
        }
        dinput.zip_mut_with(&cache.hidden[h], |d, &a| *d *= Activation::Tanh.grad_from_output(a));
        delta = dinput;
    }
    unreachable!("loop returns at the input layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_uniform_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = MlpParams::init(4, &[8, 8], 2, &mut rng);
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        let probs = mlp_predict(&p, array![[1.0, 2.0, 3.0, 4.0]].view());
        assert_eq!(probs, array![[0.5, 0.5]]);
    }

    #[test]
    fn inference_is_repeatable_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::init(3, &[5], 2, &mut rng);
        let x = array![[0.3, -1.0, 2.0], [5.0, 5.0, -5.0]];
        let a = mlp_predict(&p, x.view());
        let b = mlp_predict(&p, x.view());
        assert_eq!(a, b);
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn dropout_uses_inverted_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = MlpParams::init(3, &[200], 2, &mut rng);
        let cache = mlp_forward(&p, array![[1.0, 1.0, 1.0]].view(), Mode::Train, 0.5, &mut rng);
        let mask = cache.masks[0].as_ref().unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let dropped = mask.iter().filter(|&&m| m == 0.0).count();
        assert!(dropped > 60 && dropped < 140);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = MlpParams::init(3, &[4, 3], 2, &mut rng);
        for b in &mut p.biases {
            b.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        }
        let x = array![[0.5, -1.0, 0.25], [1.5, 0.2, -0.7], [0.0, 0.3, 0.9]];
        let labels = [0, 1, 1];
        let loss_of = |p: &MlpParams| batch_loss(&mlp_predict(p, x.view()), &labels).0;
        let cache = mlp_forward(&p, x.view(), Mode::Infer, 0.0, &mut rng);
        let (_, dl) = batch_loss(&cache.probs, &labels);
        let (g, _) = mlp_backward(&p, &cache, dl);
        let analytic: Vec<f64> = g.tensors().concat();
        let mut idx = 0;
        let eps = 1e-5;
        for t in 0..p.tensors().len() {
            for j in 0..p.tensors()[t].len() {
                let mut plus = p.clone();
                plus.tensors_mut()[t][j] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[t][j] -= eps;
                let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
                assert!((numeric - analytic[idx]).abs() < 1e-8, "param {idx}");
                idx += 1;
            }
        }
    }
}
