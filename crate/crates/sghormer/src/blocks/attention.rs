//! Binarized popcount graph self-attention.
//!
//! Queries, keys, and values are linear projections of the incoming
//! spike state that are re-spiked through a per-projection rectify +
//! neuron pipeline `g(·)`. Because `g(Q)`, `g(K)`, and `g(V)` are
//! strictly {0,1}, the score product `g(Q)·g(K)ᵀ` reduces to popcounts
//! of AND-ed bit rows — no multiplications, no softmax — and the
//! attention-weighted values stay cheap accumulations:
//!
//! ```text
//! H^t = scale · ( g(Q)·g(K)ᵀ ⊙ blockmask ) · g(V)^t
//! ```
//!
//! Two evaluation modes exist. `first_step` computes the score matrix
//! once from the first-step projections and reuses it across the T
//! value steps; `satt` recomputes scores every step. Attention is
//! masked to the per-graph blocks of a batch, so scores never cross
//! graph boundaries. Each layer pairs this global branch with a local
//! message-passing branch and fuses both through a spiking MLP.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neurons::{Neuron, NeuronConfig, SpikeTrain};
use crate::tape::{Blocks, EdgeList, Tape};
use crate::tensor::{AutodiffError, Tensor};

use super::mpnn::Mpnn;
use super::srb::Srb;
use super::Smlp;

// ── Attention mode ──────────────────────────────────────────────────────

/// Score-matrix schedule of the spiking attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// One score matrix from the first step, shared by all value steps.
    FirstStep,
    /// A fresh score matrix at every time step.
    Satt,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionMode::FirstStep => write!(f, "first_step"),
            AttentionMode::Satt => write!(f, "satt"),
        }
    }
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first_step" => Ok(AttentionMode::FirstStep),
            "satt" => Ok(AttentionMode::Satt),
            other => Err(format!("unknown attention mode `{other}` (expected `first_step` or `satt`)")),
        }
    }
}

// ── Projection pipeline ─────────────────────────────────────────────────

/// The spiking transfer `g(·)`: an optional rectify block followed by a
/// spiking neuron. Input is a real-valued step sequence, output a spike
/// train of the same length.
#[derive(Debug)]
pub struct GPipeline {
    pub srb: Option<Srb>,
    neuron: Neuron,
}

impl GPipeline {
    pub fn new(d: usize, use_srb: bool, neuron_cfg: NeuronConfig, rng: &mut ChaCha8Rng) -> Result<GPipeline, AutodiffError> {
        let srb = if use_srb { Some(Srb::new(d, rng)) } else { None };
        Ok(GPipeline { srb, neuron: Neuron::new(neuron_cfg)? })
    }

    pub fn forward(
        &mut self,
        tape: &Tape,
        xs: &[Tensor],
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<SpikeTrain, AutodiffError> {
        match &self.srb {
            Some(srb) => {
                let rectified = srb.forward(tape, xs, training, rng)?;
                self.neuron.run(tape, &rectified)
            }
            None => self.neuron.run(tape, xs),
        }
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        if let Some(srb) = &self.srb {
            p.extend(srb.parameters());
        }
        p.extend(self.neuron.parameters());
        p
    }

    pub fn batch_norms(&self) -> Vec<&super::BatchNorm> {
        self.srb.iter().map(|s| &s.norm).collect()
    }
}

// ── Attention head ──────────────────────────────────────────────────────

/// One attention head: three d→d′ projections, each with its own
/// unshared spiking pipeline.
#[derive(Debug)]
pub struct SgsaHead {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub q_pipe: GPipeline,
    pub k_pipe: GPipeline,
    pub v_pipe: GPipeline,
}

/// Bias-free projection matrix with the same ±√(1/in) init as `Linear`.
pub fn proj_param(d: usize, d_head: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (1.0 / d as f64).sqrt();
    let w: Vec<f64> = (0..d * d_head).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(w, &[d, d_head]).expect("sized to shape")
}

impl SgsaHead {
    fn new(d: usize, d_head: usize, use_srb: bool, neuron_cfg: NeuronConfig, rng: &mut ChaCha8Rng) -> Result<SgsaHead, AutodiffError> {
        Ok(SgsaHead {
            w_q: proj_param(d, d_head, rng),
            w_k: proj_param(d, d_head, rng),
            w_v: proj_param(d, d_head, rng),
            q_pipe: GPipeline::new(d_head, use_srb, neuron_cfg, rng)?,
            k_pipe: GPipeline::new(d_head, use_srb, neuron_cfg, rng)?,
            v_pipe: GPipeline::new(d_head, use_srb, neuron_cfg, rng)?,
        })
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.w_q.clone(), self.w_k.clone(), self.w_v.clone()];
        p.extend(self.q_pipe.parameters());
        p.extend(self.k_pipe.parameters());
        p.extend(self.v_pipe.parameters());
        p
    }
}

// ── Layer configuration ─────────────────────────────────────────────────

/// Shape and behavior switches of one attention layer.
#[derive(Debug, Clone)]
pub struct SgsaConfig {
    /// Hidden width d; must be divisible by `heads`.
    pub d: usize,
    /// Number of attention heads M.
    pub heads: usize,
    /// Width of raw edge features (0 = none).
    pub edge_feat_dim: usize,
    pub mode: AttentionMode,
    /// Score scale; `None` defaults to 1/d′.
    pub attn_scale: Option<f64>,
    /// Add the layer input to the fused branch sum before the MLP.
    pub residual: bool,
    /// Rectify blocks inside the projection pipelines (ablation switch).
    pub use_srb: bool,
    /// Spiking MLP depth (1 or 2).
    pub smlp_depth: usize,
    pub neuron: NeuronConfig,
}

impl Default for SgsaConfig {
    fn default() -> SgsaConfig {
        SgsaConfig {
            d: 16,
            heads: 2,
            edge_feat_dim: 0,
            mode: AttentionMode::FirstStep,
            attn_scale: None,
            residual: false,
            use_srb: true,
            smlp_depth: 1,
            neuron: NeuronConfig::default(),
        }
    }
}

impl SgsaConfig {
    pub fn d_head(&self) -> usize {
        self.d / self.heads
    }

    pub fn scale(&self) -> f64 {
        self.attn_scale.unwrap_or(1.0 / self.d_head() as f64)
    }
}

// ── Layer ───────────────────────────────────────────────────────────────

/// Everything one layer forward produces beyond its output spikes:
/// the global-branch activations, the per-head score matrices (one per
/// step in `satt` mode, a single shared one in `first_step`), and the
/// sparsity of the binary operands that drove attention at each step
/// (used by the energy model).
#[derive(Debug)]
pub struct LayerOutput {
    pub spikes: SpikeTrain,
    pub h_global: Vec<Tensor>,
    pub h_local: Vec<Tensor>,
    /// `attn[head][step]`; inner length 1 in `first_step` mode.
    pub attn: Vec<Vec<Tensor>>,
    /// Ones across the binary drivers consumed at each step
    /// (input spikes plus whichever of gQ/gK/gV were computed then).
    pub attn_driver_ones: Vec<usize>,
    pub attn_driver_elems: Vec<usize>,
}

/// One spiking attention layer: M popcount heads + local message
/// passing, fused by a spiking MLP.
#[derive(Debug)]
pub struct SgsaLayer {
    pub heads: Vec<SgsaHead>,
    pub mpnn: Mpnn,
    pub smlp: Smlp,
    pub mode: AttentionMode,
    pub scale: f64,
    pub residual: bool,
}

impl SgsaLayer {
    pub fn new(cfg: &SgsaConfig, rng: &mut ChaCha8Rng) -> Result<SgsaLayer, AutodiffError> {
        if cfg.heads == 0 {
            return Err(AutodiffError::invalid("sgsa", "head count must be ≥ 1"));
        }
        if cfg.d % cfg.heads != 0 {
            return Err(AutodiffError::invalid(
                "sgsa",
                format!("width {} is not divisible by {} heads", cfg.d, cfg.heads),
            ));
        }
        let heads = (0..cfg.heads)
            .map(|_| SgsaHead::new(cfg.d, cfg.d_head(), cfg.use_srb, cfg.neuron, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SgsaLayer {
            heads,
            mpnn: Mpnn::new(cfg.d, cfg.edge_feat_dim, rng),
            smlp: Smlp::new(cfg.d, cfg.smlp_depth, cfg.neuron, rng)?,
            mode: cfg.mode,
            scale: cfg.scale(),
            residual: cfg.residual,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &mut self,
        tape: &Tape,
        s: &SpikeTrain,
        edges: &EdgeList,
        blocks: &Blocks,
        projected_edges: Option<&Tensor>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<LayerOutput, AutodiffError> {
        let t_steps = s.num_steps();
        // Binary-operand accounting starts from the input spikes; each
        // g-train adds its ones for the step it becomes available at.
        let mut driver_ones: Vec<usize> = (0..t_steps).map(|t| s.step(t).ones_count()).collect();
        let mut driver_elems: Vec<usize> = (0..t_steps).map(|t| s.step(t).numel()).collect();

        let mut per_step_heads: Vec<Vec<Tensor>> = vec![Vec::with_capacity(self.heads.len()); t_steps];
        let mut attn: Vec<Vec<Tensor>> = Vec::with_capacity(self.heads.len());
        for head in &mut self.heads {
            // first_step derives queries and keys from step 1 alone; the
            // value pathway always runs the full sequence.
            let qk_steps = match self.mode {
                AttentionMode::FirstStep => 1,
                AttentionMode::Satt => t_steps,
            };
            let q_proj: Vec<Tensor> =
                (0..qk_steps).map(|t| tape.matmul(s.step(t), &head.w_q)).collect::<Result<_, _>>()?;
            let k_proj: Vec<Tensor> =
                (0..qk_steps).map(|t| tape.matmul(s.step(t), &head.w_k)).collect::<Result<_, _>>()?;
            let v_proj: Vec<Tensor> =
                (0..t_steps).map(|t| tape.matmul(s.step(t), &head.w_v)).collect::<Result<_, _>>()?;
            let gq = head.q_pipe.forward(tape, &q_proj, training, rng)?;
            let gk = head.k_pipe.forward(tape, &k_proj, training, rng)?;
            let gv = head.v_pipe.forward(tape, &v_proj, training, rng)?;
            for t in 0..qk_steps {
                driver_ones[t] += gq.step(t).ones_count() + gk.step(t).ones_count();
                driver_elems[t] += gq.step(t).numel() + gk.step(t).numel();
            }
            for t in 0..t_steps {
                driver_ones[t] += gv.step(t).ones_count();
                driver_elems[t] += gv.step(t).numel();
            }

            let mut head_attn = Vec::with_capacity(qk_steps);
            for t in 0..qk_steps {
                let kt = tape.transpose(gk.step(t))?;
                head_attn.push(tape.binary_matmul(gq.step(t), &kt, Some(blocks))?);
            }
            for (t, parts) in per_step_heads.iter_mut().enumerate() {
                let scores = &head_attn[t.min(qk_steps - 1)];
                let weighted = tape.matmul(scores, gv.step(t))?;
                parts.push(tape.mul_scalar(&weighted, self.scale));
            }
            attn.push(head_attn);
        }

        let mut h_global = Vec::with_capacity(t_steps);
        let mut h_local = Vec::with_capacity(t_steps);
        let mut fused = Vec::with_capacity(t_steps);
        for (t, parts) in per_step_heads.iter().enumerate() {
            let hg = tape.concat_cols(parts)?;
            let hl = self.mpnn.forward(tape, s.step(t), edges, projected_edges)?;
            let mut sum = tape.add(&hl, &hg)?;
            if self.residual {
                sum = tape.add(&sum, s.step(t))?;
            }
            h_global.push(hg);
            h_local.push(hl);
            fused.push(sum);
        }
        let spikes = self.smlp.forward(tape, &fused, training)?;
        Ok(LayerOutput { spikes, h_global, h_local, attn, attn_driver_ones: driver_ones, attn_driver_elems: driver_elems })
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        for h in &self.heads {
            p.extend(h.parameters());
        }
        p.extend(self.mpnn.parameters());
        p.extend(self.smlp.parameters());
        p
    }

    pub fn batch_norms(&self) -> Vec<&super::BatchNorm> {
        let mut norms = Vec::new();
        for h in &self.heads {
            norms.extend(h.q_pipe.batch_norms());
            norms.extend(h.k_pipe.batch_norms());
            norms.extend(h.v_pipe.batch_norms());
        }
        norms.extend(self.smlp.batch_norms());
        norms
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use std::rc::Rc;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn binary_train(n: usize, d: usize, t: usize, seed: u64) -> SpikeTrain {
        let mut r = rng(seed);
        let steps: Vec<Tensor> = (0..t)
            .map(|_| {
                let data: Vec<f64> = (0..n * d).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
                Tensor::from_vec(data, &[n, d]).unwrap()
            })
            .collect();
        SpikeTrain::new(steps).unwrap()
    }

    fn whole_graph_blocks(n: usize) -> Blocks {
        Rc::new(vec![(0, n)])
    }

    #[test]
    fn attention_mode_round_trips_text() {
        assert_eq!(AttentionMode::from_str("first_step").unwrap(), AttentionMode::FirstStep);
        assert_eq!(AttentionMode::from_str("satt").unwrap(), AttentionMode::Satt);
        assert_eq!(AttentionMode::FirstStep.to_string(), "first_step");
        assert!(AttentionMode::from_str("dense").is_err());
        let j = serde_json::to_string(&AttentionMode::Satt).unwrap();
        assert_eq!(j, "\"satt\"");
    }

    #[test]
    fn identity_scores_scale_the_values() {
        // With identity scores the head output must be exactly scale·gV.
        let tape = Tape::no_grad();
        let eye = Tensor::eye(3);
        let scores = tape.binary_matmul(&eye, &tape.transpose(&eye).unwrap(), None).unwrap();
        assert_eq!(scores.to_vec(), Tensor::eye(3).to_vec());
        let gv = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0], &[3, 2]).unwrap();
        let h = tape.mul_scalar(&tape.matmul(&scores, &gv).unwrap(), 0.5);
        let expect: Vec<f64> = gv.to_vec().iter().map(|v| 0.5 * v).collect();
        assert_eq!(h.to_vec(), expect);
    }

    #[test]
    fn layer_rejects_indivisible_head_split() {
        let cfg = SgsaConfig { d: 6, heads: 4, ..SgsaConfig::default() };
        assert!(SgsaLayer::new(&cfg, &mut rng(1)).is_err());
        let cfg = SgsaConfig { d: 6, heads: 0, ..SgsaConfig::default() };
        assert!(SgsaLayer::new(&cfg, &mut rng(1)).is_err());
    }

    #[test]
    fn score_matrix_count_follows_the_mode() {
        for (mode, want) in [(AttentionMode::FirstStep, 1), (AttentionMode::Satt, 3)] {
            let cfg = SgsaConfig { d: 4, heads: 2, mode, ..SgsaConfig::default() };
            let mut layer = SgsaLayer::new(&cfg, &mut rng(2)).unwrap();
            let s = binary_train(5, 4, 3, 11);
            let tape = Tape::no_grad();
            let edges: EdgeList = Rc::new(vec![(0, 1), (1, 0)]);
            let out = layer
                .forward(&tape, &s, &edges, &whole_graph_blocks(5), None, false, &mut rng(3))
                .unwrap();
            assert_eq!(out.attn.len(), 2);
            for head in &out.attn {
                assert_eq!(head.len(), want, "mode {mode}");
                for a in head {
                    assert_eq!(a.shape(), vec![5, 5]);
                    for &v in a.data().iter() {
                        assert!(v.fract() == 0.0 && (0.0..=cfg.d_head() as f64).contains(&v), "popcount entries are small ints");
                    }
                }
            }
            assert_eq!(out.spikes.num_steps(), 3);
            assert_eq!(out.h_global.len(), 3);
            assert_eq!(out.attn_driver_ones.len(), 3);
        }
    }

    #[test]
    fn zeroed_value_projection_silences_the_global_branch() {
        // w_v = 0 ⇒ the value pipeline sees zeros, the rectifier passes
        // zeros through in eval (U = μ̂ = 0, fresh running stats), the
        // neuron never crosses threshold, and Ã·0 = 0 exactly.
        let cfg = SgsaConfig { d: 4, heads: 2, ..SgsaConfig::default() };
        let mut layer = SgsaLayer::new(&cfg, &mut rng(5)).unwrap();
        for h in &layer.heads {
            h.w_v.set_data(&vec![0.0; 4 * 2]);
        }
        let s = binary_train(6, 4, 4, 17);
        let tape = Tape::no_grad();
        let edges: EdgeList = Rc::new(vec![(0, 1), (1, 0), (4, 5)]);
        let out = layer
            .forward(&tape, &s, &edges, &whole_graph_blocks(6), None, false, &mut rng(6))
            .unwrap();
        for hg in &out.h_global {
            assert!(hg.data().iter().all(|&v| v == 0.0), "zero values must annihilate the attention output exactly");
        }
    }

    #[test]
    fn first_step_and_satt_agree_for_single_step_input() {
        let mk = |mode| {
            let cfg = SgsaConfig { d: 4, heads: 2, mode, ..SgsaConfig::default() };
            SgsaLayer::new(&cfg, &mut rng(77)).unwrap()
        };
        let mut a = mk(AttentionMode::FirstStep);
        let mut b = mk(AttentionMode::Satt);
        let s = binary_train(5, 4, 1, 23);
        let edges: EdgeList = Rc::new(vec![(0, 1), (1, 2), (2, 0)]);
        let tape = Tape::no_grad();
        let oa = a.forward(&tape, &s, &edges, &whole_graph_blocks(5), None, false, &mut rng(9)).unwrap();
        let ob = b.forward(&tape, &s, &edges, &whole_graph_blocks(5), None, false, &mut rng(9)).unwrap();
        assert_eq!(oa.spikes.step(0).to_vec(), ob.spikes.step(0).to_vec());
        assert_eq!(oa.h_global[0].to_vec(), ob.h_global[0].to_vec());
        assert_eq!(oa.attn[0][0].to_vec(), ob.attn[0][0].to_vec());
        assert_eq!(oa.attn_driver_ones, ob.attn_driver_ones);
    }

    #[test]
    fn batched_graphs_stay_isolated_in_eval() {
        // Two 3-node graphs in one batch: flipping every spike of the
        // second graph must leave the first graph's rows bit-identical.
        let cfg = SgsaConfig { d: 4, heads: 2, mode: AttentionMode::Satt, ..SgsaConfig::default() };
        let mut layer = SgsaLayer::new(&cfg, &mut rng(13)).unwrap();
        let blocks: Blocks = Rc::new(vec![(0, 3), (3, 6)]);
        let edges: EdgeList = Rc::new(vec![(0, 1), (1, 0), (3, 4), (4, 5)]);
        let base = binary_train(6, 4, 2, 31);
        let mut mutated_steps = Vec::new();
        for t in 0..2 {
            let mut data = base.step(t).to_vec();
            for v in data[3 * 4..].iter_mut() {
                *v = 1.0 - *v;
            }
            mutated_steps.push(Tensor::from_vec(data, &[6, 4]).unwrap());
        }
        let mutated = SpikeTrain::new(mutated_steps).unwrap();
        let tape = Tape::no_grad();
        let out1 = layer.forward(&tape, &base, &edges, &blocks, None, false, &mut rng(1)).unwrap();
        let out2 = layer.forward(&tape, &mutated, &edges, &blocks, None, false, &mut rng(2)).unwrap();
        for t in 0..2 {
            let a = out1.spikes.step(t).to_vec();
            let b = out2.spikes.step(t).to_vec();
            assert_eq!(a[..3 * 4], b[..3 * 4], "graph 1 output must not see graph 2");
            let ga = out1.h_global[t].to_vec();
            let gb = out2.h_global[t].to_vec();
            assert_eq!(ga[..3 * 4], gb[..3 * 4]);
        }
    }

    #[test]
    fn gradients_reach_projections_and_branches() {
        // A silent key train zeroes the query gradient exactly (the
        // popcount backward is d_gq = g·gK), so run the pipelines at a
        // low threshold where every train actually fires.
        let neuron = NeuronConfig { v_th: 0.3, ..NeuronConfig::default() };
        let cfg = SgsaConfig { d: 4, heads: 2, mode: AttentionMode::Satt, neuron, ..SgsaConfig::default() };
        let mut layer = SgsaLayer::new(&cfg, &mut rng(19)).unwrap();
        let s = binary_train(5, 4, 3, 37);
        let edges: EdgeList = Rc::new(vec![(0, 1), (1, 0), (2, 3), (3, 4)]);
        let tape = Tape::new();
        let out = layer.forward(&tape, &s, &edges, &whole_graph_blocks(5), None, true, &mut rng(20)).unwrap();
        // Weighted sum: an unweighted sum of batch-normalized outputs is
        // constant in the upstream parameters.
        let mut w = rng(21);
        let wts = Tensor::from_vec((0..20).map(|_| w.gen_range(-1.0..1.0)).collect(), &[5, 4]).unwrap();
        let mut loss = tape.sum(&tape.mul(out.spikes.step(0), &wts).unwrap());
        for t in 1..3 {
            let part = tape.sum(&tape.mul(out.spikes.step(t), &wts).unwrap());
            loss = tape.add(&loss, &part).unwrap();
        }
        tape.backward(&loss).unwrap();
        let nonzero = |t: &Tensor, name: &str| {
            let g = t.grad().unwrap_or_else(|| panic!("{name} has no grad"));
            assert!(g.iter().any(|&v| v != 0.0), "{name} gradient is all-zero");
        };
        let h = &layer.heads[0];
        nonzero(&h.w_q, "w_q");
        nonzero(&h.w_k, "w_k");
        nonzero(&h.w_v, "w_v");
        nonzero(&h.v_pipe.srb.as_ref().unwrap().noise_weight, "srb noise weight");
        nonzero(&layer.mpnn.weight, "mpnn weight");
    }

    #[test]
    fn srb_ablation_builds_and_runs() {
        let cfg = SgsaConfig { d: 4, heads: 1, use_srb: false, ..SgsaConfig::default() };
        let mut layer = SgsaLayer::new(&cfg, &mut rng(29)).unwrap();
        assert!(layer.heads[0].q_pipe.srb.is_none());
        let s = binary_train(3, 4, 2, 41);
        let edges: EdgeList = Rc::new(vec![(0, 1)]);
        let tape = Tape::no_grad();
        let out = layer.forward(&tape, &s, &edges, &whole_graph_blocks(3), None, false, &mut rng(30)).unwrap();
        assert_eq!(out.spikes.num_steps(), 2);
        for st in out.spikes.steps() {
            assert!(st.is_binary());
        }
    }
}
