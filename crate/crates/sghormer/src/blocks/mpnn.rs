//! Local message passing.
//!
//! A single graph-convolution step supplies the local counterpart to the
//! global attention branch: every node adds the projected states of its
//! in-neighbors to its own state,
//!
//! ```text
//! H_local[i] = S[i] + Σ_{(j→i) ∈ E} (S[j]·W + e_proj[j→i])
//! ```
//!
//! with an optional learned projection of edge features into the hidden
//! width. Batches are handled for free: the edge list never crosses
//! graph boundaries, so nodes of different graphs cannot interact here.

use rand_chacha::ChaCha8Rng;

use crate::tape::{EdgeList, Tape};
use crate::tensor::{AutodiffError, Tensor};

use super::Linear;

/// One round of neighborhood aggregation with self-connection.
#[derive(Debug)]
pub struct Mpnn {
    /// Message projection applied to the sender state.
    pub weight: Tensor,
    /// Projects raw edge features into the hidden width; present only
    /// when the dataset carries edge features.
    pub edge_proj: Option<Linear>,
}

impl Mpnn {
    pub fn new(d: usize, edge_feat_dim: usize, rng: &mut ChaCha8Rng) -> Mpnn {
        let lin = Linear::new(d, d, rng);
        let edge_proj = if edge_feat_dim > 0 { Some(Linear::new(edge_feat_dim, d, rng)) } else { None };
        Mpnn { weight: lin.weight, edge_proj }
    }

    /// Project raw edge features once per forward pass (they are shared
    /// across time steps). `None` input with a configured projection —
    /// or the reverse — is a wiring bug and rejected.
    pub fn project_edges(&self, tape: &Tape, edge_feats: Option<&Tensor>) -> Result<Option<Tensor>, AutodiffError> {
        match (&self.edge_proj, edge_feats) {
            (Some(lin), Some(feats)) => {
                // Bias-free affine keeps featureless semantics: a zero
                // edge feature contributes nothing to the message.
                Ok(Some(tape.matmul(feats, &lin.weight)?))
            }
            (None, None) => Ok(None),
            (Some(_), None) => Err(AutodiffError::invalid("mpnn", "edge projection configured but no edge features given")),
            (None, Some(_)) => Err(AutodiffError::invalid("mpnn", "edge features given but no edge projection configured")),
        }
    }

    pub fn forward(
        &self,
        tape: &Tape,
        x: &Tensor,
        edges: &EdgeList,
        projected_edges: Option<&Tensor>,
    ) -> Result<Tensor, AutodiffError> {
        let msg = tape.matmul(x, &self.weight)?;
        tape.edge_scatter_add(x, &msg, projected_edges, edges)
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.weight.clone()];
        if let Some(lin) = &self.edge_proj {
            p.push(lin.weight.clone());
        }
        p
    }
}
