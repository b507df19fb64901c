//! Stateless building blocks: propagation, sort pooling, aggregation,
//! softmax and the loss.

use std::cmp::Ordering;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log floor used inside the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn grad_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// Row-normalized adjacency with self-loops, kept as neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    /// Neighbors of each node including the node itself, ascending.
    neighbors: Vec<Vec<usize>>,
    inv_degree: Vec<f64>,
}

impl Propagator {
    pub fn new(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut neighbors: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for &(a, b) in edges {
            let (a, b) = (a as usize, b as usize);
            if a >= n || b >= n {
                return Err(Error::Shape(format!("edge ({a}, {b}) in a graph of {n} nodes")));
            }
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let inv_degree = neighbors.iter().map(|l| 1.0 / l.len() as f64).collect();
        Ok(Propagator { neighbors, inv_degree })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    /// Dense `D^-1 (A + I)`.
    pub fn dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut p = Array2::zeros((n, n));
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                p[[i, j]] = self.inv_degree[i];
            }
        }
        p
    }

    /// `D^-1 (A + I) Y`.
    pub fn apply(&self, y: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(y.raw_dim());
        for (i, list) in self.neighbors.iter().enumerate() {
            let mut row = out.row_mut(i);
            for &j in list {
                row += &y.row(j);
            }
            row *= self.inv_degree[i];
        }
        out
    }

    /// `(D^-1 (A + I))^T G`.
    pub fn apply_transpose(&self, g: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(g.raw_dim());
        for (i, list) in self.neighbors.iter().enumerate() {
            let scaled = &g.row(i) * self.inv_degree[i];
            for &j in list {
                let mut row = out.row_mut(j);
                row += &scaled;
            }
        }
        out
    }
}

/// One graph-convolution layer: `act(D^-1 (A + I) X W)`.
pub fn propagate(
    x: ArrayView2<'_, f64>,
    prop: &Propagator,
    w: ArrayView2<'_, f64>,
    act: Activation,
) -> Result<Array2<f64>> {
    if x.nrows() != prop.n() || x.ncols() != w.nrows() {
        return Err(Error::Shape(format!(
            "propagate: X is {:?}, W is {:?}, graph has {} nodes",
            x.dim(),
            w.dim(),
            prop.n()
        )));
    }
    let mut z = prop.apply(x.dot(&w).view());
    z.mapv_inplace(|v| act.apply(v));
    Ok(z)
}

fn sort_key_cmp(z: ArrayView2<'_, f64>, a: usize, b: usize) -> Ordering {
    for c in (0..z.ncols()).rev() {
        match z[[b, c]].total_cmp(&z[[a, c]]) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.cmp(&b)
}

/// Node order used by sort pooling: descending by the last column, ties
/// broken by earlier columns from right to left, then by node index.
pub fn sort_order(z: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.nrows()).collect();
    idx.sort_by(|&a, &b| sort_key_cmp(z, a, b));
    idx
}

/// Sorted, truncated and zero-padded `k x F` matrix plus the source row of
/// each retained position.
pub fn sort_pool(z: ArrayView2<'_, f64>, k: usize) -> (Array2<f64>, Vec<usize>) {
    let mut order = sort_order(z);
    order.truncate(k);
    let mut out = Array2::zeros((k, z.ncols()));
    for (dst, &src) in order.iter().enumerate() {
        out.row_mut(dst).assign(&z.row(src));
    }
    (out, order)
}

/// `act(w . Z_sp)`: a learned weighted sum of the retained rows.
pub fn aggregate(zsp: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>, act: Activation) -> Result<Array1<f64>> {
    if zsp.nrows() != w.len() {
        return Err(Error::Shape(format!(
            "aggregate: {} pooled rows, {} weights",
            zsp.nrows(),
            w.len()
        )));
    }
    Ok(w.dot(&zsp).mapv(|v| act.apply(v)))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub fn cross_entropy(probs: ArrayView1<'_, f64>, label: usize) -> f64 {
    -probs[label].max(PROB_FLOOR).ln()
}

/// Gradient of [`cross_entropy`] after a softmax, with respect to the logits.
pub fn cross_entropy_logit_grad(probs: ArrayView1<'_, f64>, label: usize) -> Array1<f64> {
    if probs[label] < PROB_FLOOR {
        // The clamp is active, so the loss is locally constant.
        return Array1::zeros(probs.len());
    }
    let mut g = probs.to_owned();
    g[label] -= 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn edgeless_identity_is_noop() {
        let x = array![[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]];
        let p = Propagator::new(3, &[]).unwrap();
        let z = propagate(x.view(), &p, Array2::eye(2).view(), Activation::Identity).unwrap();
        assert_eq!(z, x);
    }

    #[test]
    fn two_node_path_averages() {
        let p = Propagator::new(2, &[(0, 1)]).unwrap();
        let z = propagate(array![[1.0], [3.0]].view(), &p, array![[1.0]].view(), Activation::Identity).unwrap();
        assert_eq!(z, array![[2.0], [2.0]]);
    }

    #[test]
    fn tanh_output_bounded() {
        let p = Propagator::new(3, &[(0, 1), (1, 2)]).unwrap();
        let x = array![[100.0, -50.0], [3.0, 2.0], [-7.0, 0.1]];
        let w = array![[2.0, 1.0, -1.0], [0.5, -3.0, 4.0]];
        let z = propagate(x.view(), &p, w.view(), Activation::Tanh).unwrap();
        assert!(z.iter().all(|v| v.abs() <= 1.0));
        assert!(propagate(x.view(), &p, array![[1.0]].view(), Activation::Tanh).is_err());
    }

    #[test]
    fn transpose_matches_dense() {
        let p = Propagator::new(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        let g = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5], [2.0, 0.0]];
        let dense = p.dense();
        let expect = dense.t().dot(&g);
        let got = p.apply_transpose(g.view());
        assert!((&got - &expect).iter().all(|v| v.abs() < 1e-15));
        assert!((&p.apply(g.view()) - &dense.dot(&g)).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn sort_pool_orders_by_last_column() {
        let z = array![[0.0, 0.2], [0.0, 0.9], [0.0, 0.5]];
        let (out, order) = sort_pool(z.view(), 3);
        assert_eq!(order, [1, 2, 0]);
        assert_eq!(out.column(1).to_vec(), [0.9, 0.5, 0.2]);
    }

    #[test]
    fn sort_pool_pads_and_breaks_ties() {
        let z = array![[1.0, 0.3], [2.0, 0.3]];
        let (out, order) = sort_pool(z.view(), 4);
        assert_eq!(order, [1, 0]);
        assert_eq!(out.row(2).sum(), 0.0);
        assert_eq!(out.row(3).sum(), 0.0);
        // Full ties fall back to index order.
        let same = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert_eq!(sort_pool(same.view(), 2).1, [0, 1]);
    }

    #[test]
    fn aggregate_examples() {
        let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let first = aggregate(z.view(), array![1.0, 0.0, 0.0].view(), Activation::Identity).unwrap();
        assert_eq!(first, array![1.0, 2.0]);
        let w = Array1::from_elem(3, 1.0 / 3.0);
        let mean = aggregate(z.view(), w.view(), Activation::Identity).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-15 && (mean[1] - 4.0).abs() < 1e-15);
        assert!(aggregate(z.view(), array![1.0].view(), Activation::Identity).is_err());
    }

    #[test]
    fn loss_examples() {
        assert_eq!(cross_entropy(array![1.0, 0.0].view(), 0), 0.0);
        let half = array![0.5, 0.5];
        assert!((cross_entropy(half.view(), 1) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(array![0.25, 0.75].view(), 1) - 0.287_682_072_451_780_9).abs() < 1e-12);
        assert!((cross_entropy(array![1.0, 0.0].view(), 1) - 27.631_021_115_928_547).abs() < 1e-9);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax_rows(&Array2::zeros((2, 2)));
        assert!(p.iter().all(|&v| v == 0.5));
    }

    fn brute_force_order(z: &Array2<f64>) -> Vec<usize> {
        // Repeated selection of the maximum under the lexicographic key.
        let mut left: Vec<usize> = (0..z.nrows()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let mut best = 0;
            for i in 1..left.len() {
                let (a, b) = (left[i], left[best]);
                let key_a: Vec<f64> = z.row(a).iter().rev().copied().collect();
                let key_b: Vec<f64> = z.row(b).iter().rev().copied().collect();
                if key_a > key_b {
                    best = i;
                }
            }
            out.push(left.remove(best));
        }
        out
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(n in 1usize..40, raw in proptest::collection::vec((0u32..40, 0u32..40), 0..80)) {
            let edges: Vec<_> = raw.into_iter().filter(|(a, b)| (*a as usize) < n && (*b as usize) < n).collect();
            let p = Propagator::new(n, &edges).unwrap().dense();
            for row in p.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn sort_matches_brute_force(vals in proptest::collection::vec(-3i8..3, 3..60)) {
            let n = vals.len() / 3;
            let z = Array2::from_shape_fn((n, 3), |(i, j)| vals[i * 3 + j] as f64 / 2.0);
            prop_assert_eq!(sort_order(z.view()), brute_force_order(&z));
        }

        #[test]
        fn aggregate_matches_dot_products(k in 1usize..10, f in 1usize..8, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z = Array2::from_shape_fn((k, f), |_| rng.gen_range(-1.0..1.0));
            let w = Array1::from_shape_fn(k, |_| rng.gen_range(-1.0..1.0));
            let e = aggregate(z.view(), w.view(), Activation::Identity).unwrap();
            for c in 0..f {
                let mut s = 0.0;
                for r in 0..k {
                    s += w[r] * z[[r, c]];
                }
                prop_assert!((e[c] - s).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 2..20)) {
            let n = vals.len() / 2;
            let logits = Array2::from_shape_vec((n, 2), vals[..n * 2].to_vec()).unwrap();
            for row in softmax_rows(&logits).rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            }
        }
    }
}
