use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{select_k, FeatureGraph};

use super::mlp::{batch_loss, mlp_backward, mlp_forward, mlp_predict, MlpParams, Mode};
use super::ops::{aggregate, propagate, sort_pool, Activation, Propagator};
use super::{glorot, Tensors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgcnnConfig {
    pub conv_channels: Vec<usize>,
    pub activation: Activation,
    /// Fraction of training graphs that must have at least `k` nodes.
    pub pooling_rate: f64,
    /// Fixed `k`, overriding `pooling_rate`.
    pub k: Option<usize>,
    pub aggregation_activation: Activation,
    pub mlp_hidden: Vec<usize>,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for DgcnnConfig {
    fn default() -> Self {
        DgcnnConfig {
            conv_channels: vec![48, 48, 48],
            activation: Activation::Tanh,
            pooling_rate: 0.75,
            k: None,
            aggregation_activation: Activation::Tanh,
            mlp_hidden: vec![1024, 1024],
            dropout: 0.5,
            classes: 2,
        }
    }
}

impl DgcnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad(format!("conv channels {:?} must be non-empty and positive", self.conv_channels));
        }
        if self.mlp_hidden.contains(&0) {
            return bad(format!("mlp hidden sizes {:?} must be positive", self.mlp_hidden));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.pooling_rate > 0.0 && self.pooling_rate <= 1.0) {
            return bad(format!("pooling rate {} outside (0, 1]", self.pooling_rate));
        }
        if self.k == Some(0) {
            return bad("k must be at least 1".into());
        }
        if self.classes < 2 {
            return bad("need at least two classes".into());
        }
        Ok(())
    }

    pub fn embedding_width(&self) -> usize {
        self.conv_channels.iter().sum()
    }

    /// `k` for a training set with the given node counts.
    pub fn resolve_k(&self, node_counts: &[usize]) -> Result<usize> {
        match self.k {
            Some(k) => Ok(k),
            None => select_k(node_counts, self.pooling_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `conv[t]` is `c_t x c_{t+1}`.
    pub conv: Vec<Array2<f64>>,
    /// Aggregation weights over the `k` pooled rows.
    pub agg: Array1<f64>,
    pub mlp: MlpParams,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        ModelParams {
            conv: self.conv.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            agg: Array1::zeros(self.agg.len()),
            mlp: self.mlp.zeros_like(),
        }
    }
}

impl Tensors for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.conv.iter().map(|w| w.as_slice().expect("standard layout")).collect();
        out.push(self.agg.as_slice().expect("standard layout"));
        out.extend(self.mlp.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .conv
            .iter_mut()
            .map(|w| w.as_slice_mut().expect("standard layout"))
            .collect();
        out.push(self.agg.as_slice_mut().expect("standard layout"));
        out.extend(self.mlp.tensors_mut());
        out
    }
}

/// Node attributes plus the normalized propagation operator of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGraph {
    pub x: Array2<f64>,
    pub prop: Propagator,
}

impl PreparedGraph {
    pub fn new(x: Array2<f64>, edges: &[(u32, u32)]) -> Result<Self> {
        let prop = Propagator::new(x.nrows(), edges)?;
        Ok(PreparedGraph { x, prop })
    }

    pub fn from_graph(g: &FeatureGraph) -> Result<Self> {
        PreparedGraph::new(g.x.clone(), &g.edges)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
}

/// Forward-pass values for one graph.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// Output of each convolution layer.
    pub layers: Vec<Array2<f64>>,
    pub zcat: Array2<f64>,
    /// Source node of each retained pooled row.
    pub order: Vec<usize>,
    pub zsp: Array2<f64>,
    pub e: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dgcnn {
    pub config: DgcnnConfig,
    pub input_width: usize,
    pub k: usize,
    pub params: ModelParams,
}

impl Dgcnn {
    pub fn new<R: Rng>(config: DgcnnConfig, input_width: usize, k: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if input_width == 0 || k == 0 {
            return Err(Error::Config("input width and k must be positive".into()));
        }
        let mut widths = vec![input_width];
        widths.extend_from_slice(&config.conv_channels);
        let conv = widths.windows(2).map(|p| glorot(p[0], p[1], rng)).collect();
        let agg = glorot(k, 1, rng).into_shape_with_order(k).expect("column vector");
        let mlp = MlpParams::init(config.embedding_width(), &config.mlp_hidden, config.classes, rng);
        Ok(Dgcnn {
            config,
            input_width,
            k,
            params: ModelParams { conv, agg, mlp },
        })
    }

    fn check_input(&self, g: &PreparedGraph) -> Result<()> {
        if g.x.ncols() != self.input_width {
            return Err(Error::Incompatible(format!(
                "graph attributes have width {}, model expects {}",
                g.x.ncols(),
                self.input_width
            )));
        }
        Ok(())
    }

    pub fn embed(&self, g: &PreparedGraph) -> Result<Embedding> {
        self.check_input(g)?;
        let mut layers: Vec<Array2<f64>> = Vec::with_capacity(self.params.conv.len());
        for w in &self.params.conv {
            let input = layers.last().unwrap_or(&g.x);
            let z = propagate(input.view(), &g.prop, w.view(), self.config.activation)?;
            layers.push(z);
        }
        let views: Vec<_> = layers.iter().map(|z| z.view()).collect();
        let zcat = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
        let (zsp, order) = sort_pool(zcat.view(), self.k);
        let e = aggregate(zsp.view(), self.params.agg.view(), self.config.aggregation_activation)?;
        Ok(Embedding {
            layers,
            zcat,
            order,
            zsp,
            e,
        })
    }

    pub fn embeddings(&self, graphs: &[PreparedGraph]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((graphs.len(), self.config.embedding_width()));
        for (i, g) in graphs.iter().enumerate() {
            out.row_mut(i).assign(&self.embed(g)?.e);
        }
        Ok(out)
    }

    /// Class probabilities, one row per graph, dropout off.
    pub fn predict_proba(&self, graphs: &[PreparedGraph]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((graphs.len(), self.config.classes));
        for (start, chunk) in (0..).step_by(256).zip(graphs.chunks(256)) {
            let probs = mlp_predict(&self.params.mlp, self.embeddings(chunk)?.view());
            out.slice_mut(s![start..start + chunk.len(), ..]).assign(&probs);
        }
        Ok(out)
    }

    /// Mean cross-entropy over a batch and its exact gradient.
    pub fn loss_and_grad<R: Rng>(
        &self,
        batch: &[&PreparedGraph],
        labels: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, ModelParams)> {
        if batch.len() != labels.len() || batch.is_empty() {
            return Err(Error::Shape(format!("{} graphs, {} labels", batch.len(), labels.len())));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.config.classes) {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        let embeddings = batch.iter().map(|g| self.embed(g)).collect::<Result<Vec<_>>>()?;
        let mut e = Array2::zeros((batch.len(), self.config.embedding_width()));
        for (i, emb) in embeddings.iter().enumerate() {
            e.row_mut(i).assign(&emb.e);
        }
        let cache = mlp_forward(&self.params.mlp, e.view(), mode, self.config.dropout, rng);
        let (loss, dlogits) = batch_loss(&cache.probs, labels);
        let (mlp_grads, de) = mlp_backward(&self.params.mlp, &cache, dlogits);
        let mut grads = self.params.zeros_like();
        grads.mlp = mlp_grads;
        for ((g, emb), de) in batch.iter().zip(&embeddings).zip(de.rows()) {
            self.embedding_backward(g, emb, de, &mut grads);
        }
        Ok((loss, grads))
    }

    /// Gradients of the aggregation weights and of the concatenated
    /// convolution output, given the gradient of one graph's embedding.
    /// Rows of nodes cut by sort pooling receive zero.
    pub fn pooling_backward(&self, emb: &Embedding, de: ArrayView1<'_, f64>) -> (Array1<f64>, Array2<f64>) {
        let act = self.config.aggregation_activation;
        let da = Array1::from_shape_fn(de.len(), |c| de[c] * act.grad_from_output(emb.e[c]));
        let dagg = emb.zsp.dot(&da);
        let mut dzcat = Array2::zeros(emb.zcat.raw_dim());
        for (pos, &src) in emb.order.iter().enumerate() {
            dzcat.row_mut(src).scaled_add(self.params.agg[pos], &da);
        }
        (dagg, dzcat)
    }

    /// Accumulates gradients of the convolution and aggregation weights
    /// given the gradient with respect to one graph's embedding.
    fn embedding_backward(&self, g: &PreparedGraph, emb: &Embedding, de: ArrayView1<'_, f64>, grads: &mut ModelParams) {
        let (dagg, dzcat) = self.pooling_backward(emb, de);
        grads.agg += &dagg;

        let h = self.params.conv.len();
        let mut offsets = vec![0];
        for c in &self.config.conv_channels {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut carry: Option<Array2<f64>> = None;
        for t in (0..h).rev() {
            let z = &emb.layers[t];
            let mut dz = dzcat.slice(s![.., offsets[t]..offsets[t + 1]]).to_owned();
            if let Some(c) = carry.take() {
                dz += &c;
            }
            dz.zip_mut_with(z, |d, &out| *d *= self.config.activation.grad_from_output(out));
            let dy = g.prop.apply_transpose(dz.view());
            let input = if t == 0 { &g.x } else { &emb.layers[t - 1] };
            grads.conv[t] += &input.t().dot(&dy);
            if t > 0 {
                carry = Some(dy.dot(&self.params.conv[t].t()));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_graph<R: Rng>(n: usize, width: usize, rng: &mut R) -> PreparedGraph {
        let x = Array2::from_shape_fn((n, width), |_| rng.gen_range(-1.0..1.0));
        // Random spanning tree plus a few chords.
        let mut edges: Vec<(u32, u32)> = (1..n).map(|i| (rng.gen_range(0..i) as u32, i as u32)).collect();
        for _ in 0..n / 3 {
            let (a, b) = (rng.gen_range(0..n) as u32, rng.gen_range(0..n) as u32);
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        PreparedGraph::new(x, &edges).unwrap()
    }

    fn small_config(channels: Vec<usize>, hidden: Vec<usize>) -> DgcnnConfig {
        DgcnnConfig {
            conv_channels: channels,
            mlp_hidden: hidden,
            dropout: 0.0,
            ..DgcnnConfig::default()
        }
    }

    #[test]
    fn default_embedding_width() {
        let cfg = DgcnnConfig::default();
        assert_eq!(cfg.embedding_width(), 144);
        assert!(cfg.validate().is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Dgcnn::new(small_config(vec![48, 48, 48], vec![8]), 10, 12, &mut rng).unwrap();
        for n in [9, 13, 200] {
            let g = random_graph(n, 10, &mut rng);
            let emb = model.embed(&g).unwrap();
            assert_eq!(emb.zcat.ncols(), 144);
            assert_eq!(emb.e.len(), 144);
            assert!(emb.e.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn single_layer_concat_is_first_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Dgcnn::new(small_config(vec![5], vec![4]), 6, 4, &mut rng).unwrap();
        let g = random_graph(7, 6, &mut rng);
        let emb = model.embed(&g).unwrap();
        assert_eq!(emb.zcat, emb.layers[0]);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            small_config(vec![], vec![4]),
            small_config(vec![3, 0], vec![4]),
            DgcnnConfig {
                dropout: 1.0,
                ..DgcnnConfig::default()
            },
            DgcnnConfig {
                k: Some(0),
                ..DgcnnConfig::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn wrong_input_width_is_incompatible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Dgcnn::new(small_config(vec![4], vec![4]), 6, 4, &mut rng).unwrap();
        let g = random_graph(5, 7, &mut rng);
        assert!(matches!(model.embed(&g), Err(Error::Incompatible(_))));
    }

    #[test]
    fn conv_stack_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Dgcnn::new(small_config(vec![4, 3], vec![4]), 5, 6, &mut rng).unwrap();
        let n = 8;
        let x = Array2::from_shape_fn((n, 5), |_| rng.gen_range(-1.0..1.0));
        let edges = [(0u32, 1u32), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (0, 7), (2, 6)];
        let perm: Vec<usize> = vec![3, 7, 0, 5, 1, 6, 2, 4];
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let px = Array2::from_shape_fn((n, 5), |(i, j)| x[[perm[i], j]]);
        let pedges: Vec<(u32, u32)> = edges
            .iter()
            .map(|&(a, b)| (inverse[a as usize] as u32, inverse[b as usize] as u32))
            .collect();
        let a = model.embed(&PreparedGraph::new(x, &edges).unwrap()).unwrap();
        let b = model.embed(&PreparedGraph::new(px, &pedges).unwrap()).unwrap();
        for i in 0..n {
            for c in 0..a.zcat.ncols() {
                assert!((b.zcat[[i, c]] - a.zcat[[perm[i], c]]).abs() < 1e-12);
            }
        }
    }
}
