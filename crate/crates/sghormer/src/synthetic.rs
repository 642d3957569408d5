//! Synthetic graph datasets: small, seeded, label-verifiable tasks.
//!
//! Three desk-scale stand-ins for common graph benchmarks:
//!
//! - `degree_regression` — Erdős–Rényi graphs, label = mean undirected
//!   degree (graph regression).
//! - `triangle_count` — Erdős–Rényi graphs, label = number of triangles
//!   (graph regression).
//! - `two_community` — planted-partition graphs with dense halves,
//!   label = community index per node (node classification).
//!
//! Node features are 4-dimensional standard normals; edges are stored in
//! both directions. Generation is fully determined by the seed.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError, Label};

/// Node feature width of every synthetic task.
pub const SYNTHETIC_FEAT_DIM: usize = 4;
/// Edge probability of the Erdős–Rényi tasks.
pub const ER_EDGE_PROB: f64 = 0.3;
/// Within-community edge probability of `two_community`.
pub const COMMUNITY_P_IN: f64 = 0.3;
/// Across-community edge probability of `two_community`.
pub const COMMUNITY_P_OUT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    DegreeRegression,
    TriangleCount,
    TwoCommunity,
}

impl SyntheticKind {
    /// Whether the task is graph-level regression (vs node classification).
    pub fn is_regression(&self) -> bool {
        !matches!(self, SyntheticKind::TwoCommunity)
    }
}

impl FromStr for SyntheticKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "degree_regression" => Ok(SyntheticKind::DegreeRegression),
            "triangle_count" => Ok(SyntheticKind::TriangleCount),
            "two_community" => Ok(SyntheticKind::TwoCommunity),
            other => Err(GraphError::contract(
                "synthetic",
                format!("unknown kind '{other}' (expected degree_regression | triangle_count | two_community)"),
            )),
        }
    }
}

impl std::fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SyntheticKind::DegreeRegression => "degree_regression",
            SyntheticKind::TriangleCount => "triangle_count",
            SyntheticKind::TwoCommunity => "two_community",
        };
        write!(f, "{s}")
    }
}

/// Mean undirected degree `2m/n` of the deduplicated edge set.
pub fn mean_degree(g: &Graph) -> f64 {
    let m = g.undirected_edge_set().len();
    2.0 * m as f64 / g.num_nodes as f64
}

/// Number of triangles, by direct enumeration of node triples.
pub fn triangle_count(g: &Graph) -> usize {
    let n = g.num_nodes;
    let mut adj = vec![false; n * n];
    for &(i, j) in &g.undirected_edge_set() {
        adj[i * n + j] = true;
        adj[j * n + i] = true;
    }
    let mut count = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if !adj[i * n + j] {
                continue;
            }
            for k in (j + 1)..n {
                if adj[i * n + k] && adj[j * n + k] {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Generate `n_graphs` graphs with node counts uniform in `node_range`
/// (inclusive). The same `(kind, n_graphs, node_range, seed)` always
/// produces the same dataset.
pub fn gen_synthetic(
    kind: SyntheticKind,
    n_graphs: usize,
    node_range: (usize, usize),
    seed: u64,
) -> Result<Vec<Graph>, GraphError> {
    let (lo, hi) = node_range;
    if lo < 3 || hi < lo {
        return Err(GraphError::contract(
            "synthetic",
            format!("node_range ({lo}, {hi}) must satisfy 3 ≤ min ≤ max"),
        ));
    }
    if n_graphs == 0 {
        return Err(GraphError::contract("synthetic", "n_graphs must be ≥ 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs {
        let n = rng.gen_range(lo..=hi);
        let community: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let p = match kind {
                    SyntheticKind::TwoCommunity => {
                        if community[i] == community[j] {
                            COMMUNITY_P_IN
                        } else {
                            COMMUNITY_P_OUT
                        }
                    }
                    _ => ER_EDGE_PROB,
                };
                if rng.gen_bool(p) {
                    edges.push((i, j));
                    edges.push((j, i));
                }
            }
        }
        let node_feats: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..SYNTHETIC_FEAT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut g = Graph { num_nodes: n, edges, node_feats, edge_feats: Vec::new(), label: Label::Scalar(0.0) };
        g.label = match kind {
            SyntheticKind::DegreeRegression => Label::Scalar(mean_degree(&g)),
            SyntheticKind::TriangleCount => Label::Scalar(triangle_count(&g) as f64),
            SyntheticKind::TwoCommunity => Label::Nodes(community),
        };
        debug_assert!(g.validate().is_ok());
        graphs.push(g);
    }
    Ok(graphs)
}
