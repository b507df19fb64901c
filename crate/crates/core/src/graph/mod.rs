//! Per-sample feature graphs.
//!
//! Node order is fixed: the nine major nodes in [`Major::ALL`] order, then
//! one child per imported library (record order, edged to the imports
//! node), then one child per section (record order, edged to the section
//! node). Major-node edges come from a [`SkeletonConfig`].

mod cache;
mod encode;
mod skeleton;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use cache::{read_graphs, write_graphs, GraphReader};
pub use encode::{
    clean_name, dll_api_block, encode_base, encode_node, hash_bucket, FeatureGroup,
    NodeEncoderConfig, NodeType, BASE_WIDTH, NODE_TYPE_COUNT, NODE_WIDTH,
};
pub use skeleton::{default_skeleton, variant_skeleton, Major, SkeletonConfig};

use crate::error::{Error, Result};
use crate::ingest::{FeatureRecord, Label, YearMonth};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    pub sha256: String,
    pub label: Label,
    pub appeared: YearMonth,
    pub node_types: Vec<NodeType>,
    /// `n x NODE_WIDTH` attribute matrix.
    pub x: Array2<f64>,
    /// Undirected edges stored once as `(lo, hi)`, no self-loops.
    pub edges: Vec<(u32, u32)>,
}

impl FeatureGraph {
    pub fn n(&self) -> usize {
        self.node_types.len()
    }

    /// Neighbor lists (without self).
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n()];
        for &(a, b) in &self.edges {
            adj[a as usize].push(b as usize);
            adj[b as usize].push(a as usize);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n == 0 {
            return true;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Dense symmetric adjacency with zero diagonal.
    pub fn adjacency(&self) -> Array2<f64> {
        let n = self.n();
        let mut a = Array2::zeros((n, n));
        for &(i, j) in &self.edges {
            a[[i as usize, j as usize]] = 1.0;
            a[[j as usize, i as usize]] = 1.0;
        }
        a
    }

    /// Relabels nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<FeatureGraph> {
        let n = self.n();
        let mut inverse = vec![usize::MAX; n];
        if perm.len() != n {
            return Err(Error::Shape(format!("permutation of {} for {n} nodes", perm.len())));
        }
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let mut x = Array2::zeros(self.x.raw_dim());
        for (new, &old) in perm.iter().enumerate() {
            x.row_mut(new).assign(&self.x.row(old));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (a, b) = (inverse[a as usize] as u32, inverse[b as usize] as u32);
                (a.min(b), a.max(b))
            })
            .collect();
        Ok(FeatureGraph {
            sha256: self.sha256.clone(),
            label: self.label,
            appeared: self.appeared,
            node_types: perm.iter().map(|&o| self.node_types[o]).collect(),
            x,
            edges,
        })
    }
}

/// How major nodes are wired.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeStrategy {
    /// Exactly the skeleton's edges.
    #[default]
    Skeleton,
    /// Skeleton edges plus an edge between any two major nodes whose base
    /// vectors have cosine similarity at least `threshold`.
    Similarity { threshold: f64 },
}

#[derive(Debug, Clone)]
pub struct GraphBuilder {
    pub skeleton: SkeletonConfig,
    pub encoder: NodeEncoderConfig,
    pub strategy: EdgeStrategy,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        GraphBuilder::new(default_skeleton())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

impl GraphBuilder {
    pub fn new(skeleton: SkeletonConfig) -> Self {
        GraphBuilder {
            skeleton,
            encoder: NodeEncoderConfig::default(),
            strategy: EdgeStrategy::Skeleton,
        }
    }

    /// The nine major groups of a record, in node order.
    pub fn major_groups(record: &FeatureRecord) -> [FeatureGroup<'_>; 9] {
        [
            FeatureGroup::General(&record.general),
            FeatureGroup::Header(&record.header),
            FeatureGroup::Imports(&record.imports),
            FeatureGroup::Exports(&record.exports),
            FeatureGroup::Section(&record.section),
            FeatureGroup::ByteHistogram(&record.histogram),
            FeatureGroup::ByteEntropy(&record.byteentropy),
            FeatureGroup::Strings(&record.strings),
            FeatureGroup::DataDirectories(&record.datadirectories),
        ]
    }

    pub fn build(&self, record: &FeatureRecord) -> FeatureGraph {
        let mut groups: Vec<FeatureGroup<'_>> = Self::major_groups(record).to_vec();
        for (name, apis) in &record.imports {
            groups.push(FeatureGroup::Dll { name, apis });
        }
        for s in &record.section.sections {
            groups.push(FeatureGroup::SectionChild {
                section: s,
                is_entry: !record.section.entry.is_empty() && s.name == record.section.entry,
            });
        }

        let n = groups.len();
        let mut x = Array2::zeros((n, NODE_WIDTH));
        for (i, g) in groups.iter().enumerate() {
            let row = encode_node(g, &self.encoder);
            x.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        }

        let mut edges: Vec<(u32, u32)> = self
            .skeleton
            .edges()
            .iter()
            .map(|&(a, b)| (a.index() as u32, b.index() as u32))
            .collect();
        if let EdgeStrategy::Similarity { threshold } = self.strategy {
            for i in 0..9 {
                for j in i + 1..9 {
                    let key = (i as u32, j as u32);
                    if edges.contains(&key) {
                        continue;
                    }
                    let sim = cosine(
                        &x.row(i).as_slice().expect("row-major")[..BASE_WIDTH],
                        &x.row(j).as_slice().expect("row-major")[..BASE_WIDTH],
                    );
                    if sim >= threshold {
                        edges.push(key);
                    }
                }
            }
        }
        let imports_node = Major::Imports.index() as u32;
        let section_node = Major::Section.index() as u32;
        let n_dlls = record.imports.len();
        for c in 0..n_dlls {
            edges.push((imports_node, (9 + c) as u32));
        }
        for c in 0..record.section.sections.len() {
            edges.push((section_node, (9 + n_dlls + c) as u32));
        }

        FeatureGraph {
            sha256: record.sha256.clone(),
            label: record.label,
            appeared: record.appeared,
            node_types: groups.iter().map(FeatureGroup::node_type).collect(),
            x,
            edges,
        }
    }
}

pub fn build_graph(record: &FeatureRecord, skeleton: &SkeletonConfig, cfg: &NodeEncoderConfig) -> FeatureGraph {
    GraphBuilder {
        skeleton: skeleton.clone(),
        encoder: *cfg,
        strategy: EdgeStrategy::Skeleton,
    }
    .build(record)
}

/// Largest `k` such that at least a `rate` fraction of the graphs have
/// `k` or more nodes. Never below 1.
pub fn select_k(node_counts: &[usize], rate: f64) -> Result<usize> {
    if node_counts.is_empty() {
        return Err(Error::EmptyDataset("no graphs to size sort pooling from".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidArgument(format!("pooling rate {rate} outside (0, 1]")));
    }
    let mut sorted = node_counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let need = rate * sorted.len() as f64;
    // Smallest m with m >= need; the m-th largest count is the answer.
    let m = (1..=sorted.len())
        .find(|&m| m as f64 >= need)
        .unwrap_or(sorted.len());
    Ok(sorted[m - 1].max(1))
}
