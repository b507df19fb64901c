//! Line-delimited graph cache. Attribute matrices are stored as base64 of
//! little-endian f64 values in row-major order, so they round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, YearMonth};

use super::encode::{NodeType, NODE_WIDTH};
use super::FeatureGraph;

#[derive(Serialize, Deserialize)]
struct CachedGraph {
    sha256: String,
    label: Label,
    appeared: YearMonth,
    node_types: Vec<u8>,
    edges: Vec<(u32, u32)>,
    x: String,
}

impl CachedGraph {
    fn from_graph(g: &FeatureGraph) -> Self {
        let mut raw = Vec::with_capacity(g.x.len() * 8);
        for v in g.x.iter() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        CachedGraph {
            sha256: g.sha256.clone(),
            label: g.label,
            appeared: g.appeared,
            node_types: g.node_types.iter().map(|t| t.index() as u8).collect(),
            edges: g.edges.clone(),
            x: STANDARD.encode(raw),
        }
    }

    fn into_graph(self, line: usize) -> Result<FeatureGraph> {
        let bad = |message: String| Error::Schema { line, message };
        let node_types = self
            .node_types
            .iter()
            .map(|&i| NodeType::from_index(i as usize).ok_or_else(|| bad(format!("node type {i}"))))
            .collect::<Result<Vec<_>>>()?;
        let n = node_types.len();
        let raw = STANDARD
            .decode(&self.x)
            .map_err(|e| bad(format!("attribute payload: {e}")))?;
        if raw.len() != n * NODE_WIDTH * 8 {
            return Err(bad(format!(
                "attribute payload of {} bytes for {n} nodes",
                raw.len()
            )));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let x = Array2::from_shape_vec((n, NODE_WIDTH), values).map_err(|e| bad(e.to_string()))?;
        if let Some(&(a, b)) = self
            .edges
            .iter()
            .find(|&&(a, b)| a >= b || b as usize >= n)
        {
            return Err(bad(format!("edge ({a}, {b}) out of range or not canonical")));
        }
        Ok(FeatureGraph {
            sha256: self.sha256,
            label: self.label,
            appeared: self.appeared,
            node_types,
            x,
            edges: self.edges,
        })
    }
}

pub fn write_graphs(path: &Path, graphs: &[FeatureGraph]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for g in graphs {
        let line = serde_json::to_string(&CachedGraph::from_graph(g)).expect("graph serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub struct GraphReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> GraphReader<R> {
    pub fn new(reader: R) -> Self {
        GraphReader {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for GraphReader<R> {
    type Item = Result<FeatureGraph>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => return Some(Err(Error::io("graph cache", e))),
            };
            self.line += 1;
            if text.trim().is_empty() {
                continue;
            }
            let line = self.line;
            return Some(
                serde_json::from_str::<CachedGraph>(&text)
                    .map_err(|e| Error::Parse {
                        line,
                        message: e.to_string(),
                    })
                    .and_then(|c| c.into_graph(line)),
            );
        }
    }
}

pub fn read_graphs(path: &Path) -> Result<Vec<FeatureGraph>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    GraphReader::new(BufReader::new(file)).collect()
}
