//! Graph containers, JSONL persistence, and block-diagonal batching.
//!
//! A [`Graph`] stores directed edges plus per-node (and optionally
//! per-edge) real features and a task label. Datasets are flat JSON-lines
//! files, one graph per line. [`batch`] merges several graphs into one
//! block-diagonal [`GraphBatch`] whose node-range table drives the
//! attention and pooling masks; [`GraphBatch::unbatch`] reproduces the
//! originals exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::{Blocks, EdgeList};
use crate::tensor::Tensor;

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("graph {index}: {msg}")]
    Validation { index: usize, msg: String },
    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

impl GraphError {
    pub fn contract(op: &'static str, msg: impl Into<String>) -> GraphError {
        GraphError::Contract { op, msg: msg.into() }
    }
}

// ── Labels ──────────────────────────────────────────────────────────────

/// Task label: per-node class vector, graph class index, or graph scalar.
/// Untagged in JSON — `[0,1,0]`, `2`, and `1.5` all parse naturally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Nodes(Vec<usize>),
    Class(usize),
    Scalar(f64),
}

impl Label {
    /// Graph-level regression target (a class index coerces losslessly).
    pub fn as_scalar(&self) -> Result<f64, GraphError> {
        match self {
            Label::Scalar(v) => Ok(*v),
            Label::Class(c) => Ok(*c as f64),
            Label::Nodes(_) => Err(GraphError::contract("label", "expected a graph-level scalar, found per-node labels")),
        }
    }

    /// Graph-level class index (an integral scalar coerces).
    pub fn as_class(&self) -> Result<usize, GraphError> {
        match self {
            Label::Class(c) => Ok(*c),
            Label::Scalar(v) if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
            Label::Scalar(v) => Err(GraphError::contract("label", format!("scalar {v} is not a class index"))),
            Label::Nodes(_) => Err(GraphError::contract("label", "expected a graph-level class, found per-node labels")),
        }
    }

    /// Per-node class indices.
    pub fn as_node_classes(&self) -> Result<&[usize], GraphError> {
        match self {
            Label::Nodes(v) => Ok(v),
            _ => Err(GraphError::contract("label", "expected per-node labels")),
        }
    }
}

// ── Graph ───────────────────────────────────────────────────────────────

/// One attributed graph with directed edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    pub num_nodes: usize,
    /// Ordered `(src, dst)` pairs; store both directions for an
    /// undirected graph.
    pub edges: Vec<(usize, usize)>,
    /// `num_nodes × d_in` node feature rows.
    pub node_feats: Vec<Vec<f64>>,
    /// `|edges| × d_e` edge feature rows; empty for featureless edges.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_feats: Vec<Vec<f64>>,
    pub label: Label,
}

impl Graph {
    pub fn feat_dim(&self) -> usize {
        self.node_feats.first().map_or(0, |r| r.len())
    }

    pub fn edge_feat_dim(&self) -> usize {
        self.edge_feats.first().map_or(0, |r| r.len())
    }

    /// Structural and size consistency checks; the message names the
    /// offending edge or row.
    pub fn validate(&self) -> Result<(), String> {
        if self.num_nodes == 0 {
            return Err("graph has zero nodes".into());
        }
        for (i, &(s, d)) in self.edges.iter().enumerate() {
            if s >= self.num_nodes || d >= self.num_nodes {
                return Err(format!("edge {i} = ({s},{d}) has an endpoint ≥ num_nodes = {}", self.num_nodes));
            }
        }
        if self.node_feats.len() != self.num_nodes {
            return Err(format!("{} node feature rows for {} nodes", self.node_feats.len(), self.num_nodes));
        }
        let d = self.feat_dim();
        if let Some(bad) = self.node_feats.iter().position(|r| r.len() != d) {
            return Err(format!("node feature row {bad} has width {} ≠ {d}", self.node_feats[bad].len()));
        }
        if !self.edge_feats.is_empty() {
            if self.edge_feats.len() != self.edges.len() {
                return Err(format!("{} edge feature rows for {} edges", self.edge_feats.len(), self.edges.len()));
            }
            let de = self.edge_feat_dim();
            if let Some(bad) = self.edge_feats.iter().position(|r| r.len() != de) {
                return Err(format!("edge feature row {bad} has width {} ≠ {de}", self.edge_feats[bad].len()));
            }
        }
        if let Label::Nodes(v) = &self.label {
            if v.len() != self.num_nodes {
                return Err(format!("{} node labels for {} nodes", v.len(), self.num_nodes));
            }
        }
        Ok(())
    }

    /// Undirected degree per node after symmetrizing and deduplicating
    /// the directed edge list (self-loops ignored).
    pub fn undirected_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes];
        for (i, j) in self.undirected_edge_set() {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Unique undirected edges as `(min, max)` pairs, self-loops dropped.
    pub fn undirected_edge_set(&self) -> Vec<(usize, usize)> {
        let mut set: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(s, d)| s != d)
            .map(|&(s, d)| (s.min(d), s.max(d)))
            .collect();
        set.sort_unstable();
        set.dedup();
        set
    }
}

// ── JSONL persistence ───────────────────────────────────────────────────

/// Load a JSON-lines dataset (one graph object per line; blank lines are
/// skipped). Parse failures report the 1-based line number; every graph
/// is validated on load.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Graph>, GraphError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|source| GraphError::Io { path: pstr.clone(), source })?;
    let mut graphs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| GraphError::Io { path: pstr.clone(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Graph = serde_json::from_str(&line).map_err(|source| GraphError::Parse {
            path: pstr.clone(),
            line: lineno + 1,
            source,
        })?;
        g.validate().map_err(|msg| GraphError::Validation { index: graphs.len(), msg })?;
        graphs.push(g);
    }
    Ok(graphs)
}

/// Write graphs as JSON-lines, one per line, in order.
pub fn save_jsonl(path: impl AsRef<Path>, graphs: &[Graph]) -> Result<(), GraphError> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let io_err = |source| GraphError::Io { path: pstr.clone(), source };
    let mut file = File::create(path).map_err(io_err)?;
    for g in graphs {
        let line = serde_json::to_string(g).map_err(|e| GraphError::contract("save_jsonl", e.to_string()))?;
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

// ── Batching ────────────────────────────────────────────────────────────

/// Several graphs merged block-diagonally: node indices offset so no edge
/// crosses a graph boundary, with per-graph node/edge range tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub num_nodes: usize,
    pub feat_dim: usize,
    pub edge_feat_dim: usize,
    /// Offset `(src, dst)` pairs, grouped per graph.
    pub edges: Vec<(usize, usize)>,
    /// Merged node feature rows.
    pub node_feats: Vec<Vec<f64>>,
    /// Merged edge feature rows (empty when the graphs carry none).
    pub edge_feats: Vec<Vec<f64>>,
    /// Half-open node index range of each graph.
    pub node_blocks: Vec<(usize, usize)>,
    /// Half-open edge index range of each graph.
    pub edge_ranges: Vec<(usize, usize)>,
    /// Owning graph of each node.
    pub graph_id: Vec<usize>,
    pub labels: Vec<Label>,
}

/// Merge graphs into one block-diagonal batch. All graphs must agree on
/// node / edge feature widths.
pub fn batch(graphs: &[Graph]) -> Result<GraphBatch, GraphError> {
    if graphs.is_empty() {
        return Err(GraphError::contract("batch", "empty graph list"));
    }
    let feat_dim = graphs[0].feat_dim();
    let edge_feat_dim = graphs[0].edge_feat_dim();
    let mut out = GraphBatch {
        num_nodes: 0,
        feat_dim,
        edge_feat_dim,
        edges: Vec::new(),
        node_feats: Vec::new(),
        edge_feats: Vec::new(),
        node_blocks: Vec::new(),
        edge_ranges: Vec::new(),
        graph_id: Vec::new(),
        labels: Vec::new(),
    };
    for (gi, g) in graphs.iter().enumerate() {
        g.validate().map_err(|msg| GraphError::Validation { index: gi, msg })?;
        if g.feat_dim() != feat_dim || g.edge_feat_dim() != edge_feat_dim {
            return Err(GraphError::contract(
                "batch",
                format!(
                    "graph {gi} feature widths ({}, {}) differ from graph 0 ({feat_dim}, {edge_feat_dim})",
                    g.feat_dim(),
                    g.edge_feat_dim()
                ),
            ));
        }
        let offset = out.num_nodes;
        out.node_blocks.push((offset, offset + g.num_nodes));
        out.edge_ranges.push((out.edges.len(), out.edges.len() + g.edges.len()));
        out.edges.extend(g.edges.iter().map(|&(s, d)| (s + offset, d + offset)));
        out.node_feats.extend(g.node_feats.iter().cloned());
        out.edge_feats.extend(g.edge_feats.iter().cloned());
        out.graph_id.extend(std::iter::repeat(gi).take(g.num_nodes));
        out.labels.push(g.label.clone());
        out.num_nodes += g.num_nodes;
    }
    Ok(out)
}

impl GraphBatch {
    /// Number of graphs in the batch.
    pub fn num_graphs(&self) -> usize {
        self.node_blocks.len()
    }

    /// Node ranges in the shared-`Rc` form the tape ops take.
    pub fn blocks_rc(&self) -> Blocks {
        Rc::new(self.node_blocks.clone())
    }

    /// Offset edge list in the shared-`Rc` form the tape ops take.
    pub fn edges_rc(&self) -> EdgeList {
        Rc::new(self.edges.clone())
    }

    /// Merged node features as an `[N, d]` tensor.
    pub fn node_feat_tensor(&self) -> Tensor {
        let flat: Vec<f64> = self.node_feats.iter().flatten().copied().collect();
        Tensor::from_vec(flat, &[self.num_nodes, self.feat_dim]).expect("consistent widths")
    }

    /// Merged edge features as an `[|E|, d_e]` tensor, if any.
    pub fn edge_feat_tensor(&self) -> Option<Tensor> {
        if self.edge_feats.is_empty() || self.edge_feat_dim == 0 {
            return None;
        }
        let flat: Vec<f64> = self.edge_feats.iter().flatten().copied().collect();
        Some(Tensor::from_vec(flat, &[self.edges.len(), self.edge_feat_dim]).expect("consistent widths"))
    }

    /// Reconstruct the original graphs exactly.
    pub fn unbatch(&self) -> Vec<Graph> {
        let mut out = Vec::with_capacity(self.num_graphs());
        for (gi, &(ns, ne)) in self.node_blocks.iter().enumerate() {
            let (es, ee) = self.edge_ranges[gi];
            out.push(Graph {
                num_nodes: ne - ns,
                edges: self.edges[es..ee].iter().map(|&(s, d)| (s - ns, d - ns)).collect(),
                node_feats: self.node_feats[ns..ne].to_vec(),
                edge_feats: if self.edge_feats.is_empty() { Vec::new() } else { self.edge_feats[es..ee].to_vec() },
                label: self.labels[gi].clone(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_graph() -> Graph {
        Graph {
            num_nodes: 2,
            edges: vec![(0, 1), (1, 0)],
            node_feats: vec![vec![0.5, -1.25], vec![2.0, 0.0]],
            edge_feats: Vec::new(),
            label: Label::Scalar(1.5),
        }
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        save_jsonl(&p1, &[two_node_graph()]).unwrap();
        let loaded = load_jsonl(&p1).unwrap();
        assert_eq!(loaded, vec![two_node_graph()]);
        save_jsonl(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_file_loads_as_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_jsonl(&p).unwrap().is_empty());
    }

    #[test]
    fn dangling_edge_is_a_validation_error() {
        let g = Graph {
            num_nodes: 3,
            edges: vec![(0, 5)],
            node_feats: vec![vec![0.0]; 3],
            edge_feats: Vec::new(),
            label: Label::Scalar(0.0),
        };
        let msg = g.validate().unwrap_err();
        assert!(msg.contains("(0,5)"), "message should name the edge: {msg}");
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(&p, serde_json::to_string(&g).unwrap()).unwrap();
        assert!(matches!(load_jsonl(&p), Err(GraphError::Validation { index: 0, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&two_node_graph()).unwrap();
        std::fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        match load_jsonl(&p) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error with line number, got {other:?}"),
        }
    }

    #[test]
    fn label_variants_round_trip_and_coerce() {
        let json = serde_json::to_string(&Label::Class(2)).unwrap();
        assert_eq!(json, "2");
        assert_eq!(serde_json::from_str::<Label>("2").unwrap(), Label::Class(2));
        assert_eq!(serde_json::from_str::<Label>("1.5").unwrap(), Label::Scalar(1.5));
        assert_eq!(serde_json::from_str::<Label>("[0,1]").unwrap(), Label::Nodes(vec![0, 1]));
        assert_eq!(Label::Class(2).as_scalar().unwrap(), 2.0);
        assert_eq!(Label::Scalar(3.0).as_class().unwrap(), 3);
        assert!(Label::Scalar(1.5).as_class().is_err());
        assert!(Label::Nodes(vec![0]).as_scalar().is_err());
    }

    #[test]
    fn batch_offsets_second_graph_by_first_graph_size() {
        let g3 = Graph {
            num_nodes: 3,
            edges: vec![(0, 1), (1, 2)],
            node_feats: vec![vec![1.0]; 3],
            edge_feats: Vec::new(),
            label: Label::Scalar(0.0),
        };
        let g4 = Graph {
            num_nodes: 4,
            edges: vec![(0, 3), (2, 1)],
            node_feats: vec![vec![2.0]; 4],
            edge_feats: Vec::new(),
            label: Label::Scalar(1.0),
        };
        let b = batch(&[g3.clone(), g4.clone()]).unwrap();
        assert_eq!(b.num_nodes, 7);
        assert_eq!(b.node_blocks, vec![(0, 3), (3, 7)]);
        assert_eq!(&b.edges[2..], &[(3, 6), (5, 4)]);
        assert_eq!(b.graph_id, vec![0, 0, 0, 1, 1, 1, 1]);
        // Block-diagonal: no edge crosses a graph boundary.
        for &(s, d) in &b.edges {
            let same = (s < 3) == (d < 3);
            assert!(same, "edge ({s},{d}) crosses graphs");
        }
        assert_eq!(b.unbatch(), vec![g3, g4]);
    }

    #[test]
    fn batch_of_one_unbatches_to_the_original() {
        let g = two_node_graph();
        let b = batch(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.unbatch(), vec![g]);
    }

    #[test]
    fn batch_rejects_empty_list_and_width_mismatch() {
        assert!(batch(&[]).is_err());
        let mut g2 = two_node_graph();
        g2.node_feats = vec![vec![1.0], vec![2.0]]; // width 1 vs width 2
        let err = batch(&[two_node_graph(), g2]).unwrap_err();
        assert!(err.to_string().contains("widths"), "{err}");
    }

    #[test]
    fn node_feat_tensor_matches_rows() {
        let b = batch(&[two_node_graph()]).unwrap();
        let t = b.node_feat_tensor();
        assert_eq!(t.shape(), vec![2, 2]);
        assert_eq!(t.to_vec(), vec![0.5, -1.25, 2.0, 0.0]);
        assert!(b.edge_feat_tensor().is_none());
    }

    #[test]
    fn undirected_helpers_symmetrize_and_dedupe() {
        let g = Graph {
            num_nodes: 4,
            // duplicate + reverse + self-loop; undirected set is {01, 12}
            edges: vec![(0, 1), (1, 0), (0, 1), (1, 2), (3, 3)],
            node_feats: vec![vec![0.0]; 4],
            edge_feats: Vec::new(),
            label: Label::Scalar(0.0),
        };
        assert_eq!(g.undirected_edge_set(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.undirected_degrees(), vec![1, 2, 1, 0]);
    }
}
