//! Positional and structural node encodings.
//!
//! Two classic graph-transformer encodings, both computed on the
//! symmetrized (undirected) view of the edge list with self-loops
//! ignored:
//!
//! - **Laplacian PE** — eigenvectors of the symmetric normalized
//!   Laplacian `L = I − D^{−1/2} A D^{−1/2}` for the k smallest
//!   eigenvalues, excluding the first (trivial/constant) mode. Columns
//!   are unit-norm with a deterministic sign: the largest-magnitude
//!   entry is made positive.
//! - **Random-walk SE** — return probabilities `diag(Pʲ)` of the
//!   row-normalized walk matrix `P = D^{−1} A` for j = 1..K.
//!
//! Isolated nodes get zero rows in both encodings (their `D^{−1/2}` and
//! `D^{−1}` entries are taken as 0, which also zeroes the Laplacian
//! diagonal so every isolated node contributes one more zero eigenvalue).

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError};

/// Encoding hyperparameters used by the model input pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Number of Laplacian eigenvector columns (k).
    pub lap_pe_dim: usize,
    /// Number of random-walk steps (K).
    pub rwse_steps: usize,
    /// Randomly flip Laplacian eigenvector signs during training
    /// (off by default so evaluation stays deterministic).
    pub sign_flip_augment: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { lap_pe_dim: 4, rwse_steps: 8, sign_flip_augment: false }
    }
}

impl EncodingConfig {
    /// Total appended feature width.
    pub fn width(&self) -> usize {
        self.lap_pe_dim + self.rwse_steps
    }
}

// ── Laplacian ───────────────────────────────────────────────────────────

/// Symmetric normalized Laplacian of the undirected view of `g`.
/// Rows/columns of isolated nodes are entirely zero.
pub fn normalized_laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.num_nodes;
    let deg = g.undirected_degrees();
    let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 }).collect();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        if deg[i] > 0 {
            l[(i, i)] = 1.0;
        }
    }
    for &(i, j) in &g.undirected_edge_set() {
        let w = -inv_sqrt[i] * inv_sqrt[j];
        l[(i, j)] = w;
        l[(j, i)] = w;
    }
    l
}

/// Full Laplacian spectrum, ascending.
pub fn laplacian_eigenvalues(g: &Graph) -> Vec<f64> {
    let eig = normalized_laplacian(g).symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

/// Laplacian positional encoding: `N×k` matrix whose columns are the
/// eigenvectors of the k smallest non-trivial eigenvalues, ascending.
/// Errors when `k ≥ N`; see [`lap_pe_padded`] for the pipeline variant.
pub fn lap_pe(g: &Graph, k: usize) -> Result<Vec<Vec<f64>>, GraphError> {
    let n = g.num_nodes;
    if k >= n {
        return Err(GraphError::contract("lap_pe", format!("k = {k} must be < num_nodes = {n}")));
    }
    let eig = normalized_laplacian(g).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut out = vec![vec![0.0; k]; n];
    for (c, &idx) in order[1..=k].iter().enumerate() {
        let col = eig.eigenvectors.column(idx);
        // Deterministic sign: largest-magnitude entry (first on ties)
        // made positive.
        let mut arg = 0;
        for i in 1..n {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        let sign = if col[arg] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out[i][c] = sign * col[i];
        }
    }
    Ok(out)
}

/// Like [`lap_pe`] but pads with zero columns when a tiny graph cannot
/// supply k non-trivial eigenvectors, so batched pipelines keep a fixed
/// width.
pub fn lap_pe_padded(g: &Graph, k: usize) -> Vec<Vec<f64>> {
    let avail = k.min(g.num_nodes.saturating_sub(1));
    let core = lap_pe(g, avail).expect("avail < num_nodes by construction");
    core.into_iter()
        .map(|mut row| {
            row.resize(k, 0.0);
            row
        })
        .collect()
}

// ── Random-walk SE ──────────────────────────────────────────────────────

/// Random-walk structural encoding: column j−1 holds `diag(Pʲ)` for
/// `P = D^{−1}A`, j = 1..K. Entries are return probabilities in [0, 1];
/// zero-degree nodes get zero rows.
pub fn rwse(g: &Graph, steps: usize) -> Result<Vec<Vec<f64>>, GraphError> {
    if steps == 0 {
        return Err(GraphError::contract("rwse", "K must be ≥ 1"));
    }
    let n = g.num_nodes;
    let deg = g.undirected_degrees();
    let mut p = DMatrix::zeros(n, n);
    for &(i, j) in &g.undirected_edge_set() {
        p[(i, j)] = 1.0 / deg[i] as f64;
        p[(j, i)] = 1.0 / deg[j] as f64;
    }
    let mut out = vec![vec![0.0; steps]; n];
    let mut cur = p.clone();
    for j in 0..steps {
        for i in 0..n {
            out[i][j] = cur[(i, i)];
        }
        if j + 1 < steps {
            cur = &cur * &p;
        }
    }
    Ok(out)
}

// ── Pipeline assembly ───────────────────────────────────────────────────

/// Per-node `[lap_pe | rwse]` rows of width `cfg.width()`, zero-padded
/// for tiny graphs. With `sign_flip_augment` and an RNG, each Laplacian
/// column's sign is flipped with probability 1/2 (training-time
/// augmentation only).
pub fn encoding_matrix(g: &Graph, cfg: &EncodingConfig, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<f64>> {
    let mut pe = lap_pe_padded(g, cfg.lap_pe_dim);
    if cfg.sign_flip_augment {
        if let Some(rng) = rng {
            for c in 0..cfg.lap_pe_dim {
                if rng.gen_bool(0.5) {
                    for row in pe.iter_mut() {
                        row[c] = -row[c];
                    }
                }
            }
        }
    }
    if cfg.rwse_steps == 0 {
        return pe;
    }
    let se = rwse(g, cfg.rwse_steps).expect("rwse rejects only steps == 0");
    pe.into_iter().zip(se).map(|(mut a, b)| {
        a.extend(b);
        a
    }).collect()
}
