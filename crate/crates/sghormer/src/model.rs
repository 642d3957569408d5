//! The spiking graph transformer and its full-precision twin.
//!
//! `SgHormer` wires rate encoder → L attention layers → readout head:
//! node features plus positional/structural encodings are rate-coded
//! into T-step spike trains, every layer fuses local message passing
//! with binarized global attention through a spiking MLP, and the
//! readout averages the last layer's firing rates over time before a
//! linear task head (mean-pooled per graph for graph-level tasks).
//!
//! `BaselineModel` is the comparison point: the identical skeleton with
//! the spiking machinery replaced by full-precision softmax attention
//! (block-masked per graph), no neurons anywhere, and T = 1. Both
//! models accept the same batches and emit identically-shaped
//! predictions, so energy and attention comparisons can hot-swap them.
//!
//! Checkpoints are versioned JSON containers of every learnable
//! parameter plus normalization running statistics; a save→load round
//! trip reproduces eval outputs bit-identically.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::attention::{AttentionMode, SgsaConfig, SgsaLayer};
use crate::blocks::mpnn::Mpnn;
use crate::blocks::{BatchNorm, Linear, RateEncoder};
use crate::encodings::{encoding_matrix, EncodingConfig};
use crate::graph::GraphBatch;
use crate::neurons::NeuronConfig;
use crate::tape::Tape;
use crate::tensor::{AutodiffError, Tensor};

/// On-disk checkpoint format revision.
pub const CHECKPOINT_VERSION: u32 = 1;

// ── Task kind ───────────────────────────────────────────────────────────

/// What the output head predicts and which loss/metric applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    GraphRegression,
    GraphClassification,
    NodeClassification,
}

impl TaskKind {
    pub fn is_regression(&self) -> bool {
        matches!(self, TaskKind::GraphRegression)
    }

    pub fn is_node_level(&self) -> bool {
        matches!(self, TaskKind::NodeClassification)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TaskKind::GraphRegression => "graph_regression",
            TaskKind::GraphClassification => "graph_classification",
            TaskKind::NodeClassification => "node_classification",
        };
        write!(f, "{s}")
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graph_regression" => Ok(TaskKind::GraphRegression),
            "graph_classification" => Ok(TaskKind::GraphClassification),
            "node_classification" => Ok(TaskKind::NodeClassification),
            other => Err(format!(
                "unknown task `{other}` (expected graph_regression, graph_classification, or node_classification)"
            )),
        }
    }
}

// ── Model configuration ─────────────────────────────────────────────────

/// Architecture and task switches. The single `seed` drives parameter
/// initialization and the rectify-block noise stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Layer count L.
    #[serde(rename = "L")]
    pub layers: usize,
    /// Hidden width d.
    pub d: usize,
    /// Attention head count M; must divide d.
    #[serde(rename = "M")]
    pub heads: usize,
    /// Simulation steps T.
    #[serde(rename = "T")]
    pub t_steps: usize,
    pub task: TaskKind,
    pub neuron: NeuronConfig,
    /// Rectify blocks in the attention pipelines (ablation switch).
    pub use_srb: bool,
    pub attention_mode: AttentionMode,
    /// Laplacian positional encoding dimensions k.
    #[serde(rename = "k")]
    pub lap_pe_dim: usize,
    /// Random-walk structural encoding steps K.
    #[serde(rename = "K")]
    pub rwse_steps: usize,
    /// Attention score scale; `null` defaults to 1/d′.
    pub attn_scale: Option<f64>,
    /// Add the layer input around the fused branches (off by default).
    pub residual: bool,
    /// Spiking MLP depth (1 or 2).
    pub smlp_depth: usize,
    /// Raw node feature width of the dataset.
    pub feat_dim: usize,
    /// Raw edge feature width (0 = no edge features).
    pub edge_feat_dim: usize,
    /// Output classes for classification tasks (regression emits 1).
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> ModelConfig {
        ModelConfig {
            layers: 3,
            d: 64,
            heads: 4,
            t_steps: 4,
            task: TaskKind::GraphRegression,
            neuron: NeuronConfig::default(),
            use_srb: true,
            attention_mode: AttentionMode::FirstStep,
            lap_pe_dim: 4,
            rwse_steps: 8,
            attn_scale: None,
            residual: false,
            smlp_depth: 1,
            feat_dim: 4,
            edge_feat_dim: 0,
            num_classes: 2,
            seed: 42,
        }
    }
}

impl ModelConfig {
    /// Collect every violated invariant (empty = valid). Violations are
    /// reported together so a bad config surfaces all problems at once.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.validate_relaxed();
        if self.layers == 0 {
            errs.push("L (layer count) must be ≥ 1".into());
        }
        errs
    }

    /// The subset of checks a model can be *built* under; layer count 0
    /// is tolerated here so calibration and energy hand-checks can run
    /// an encoder-only network.
    fn validate_relaxed(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.d == 0 {
            errs.push("d (hidden width) must be ≥ 1".into());
        }
        if self.heads == 0 {
            errs.push("M (head count) must be ≥ 1".into());
        } else if self.d % self.heads != 0 {
            errs.push(format!("M must divide d (got d={}, M={})", self.d, self.heads));
        }
        if self.t_steps == 0 {
            errs.push("T (time steps) must be ≥ 1".into());
        }
        if !(1..=2).contains(&self.smlp_depth) {
            errs.push(format!("smlp_depth must be 1 or 2, got {}", self.smlp_depth));
        }
        if let Err(e) = self.neuron.validate() {
            errs.push(e.to_string());
        }
        if self.in_width() == 0 {
            errs.push("model input width is zero (feat_dim + k + K must be ≥ 1)".into());
        }
        if !self.task.is_regression() && self.num_classes < 2 {
            errs.push(format!("classification needs num_classes ≥ 2, got {}", self.num_classes));
        }
        errs
    }

    pub fn d_head(&self) -> usize {
        self.d / self.heads.max(1)
    }

    /// Width of the positional/structural encoding columns.
    pub fn enc_width(&self) -> usize {
        self.lap_pe_dim + self.rwse_steps
    }

    /// Total encoder input width.
    pub fn in_width(&self) -> usize {
        self.feat_dim + self.enc_width()
    }

    /// Output width of the task head.
    pub fn out_width(&self) -> usize {
        if self.task.is_regression() {
            1
        } else {
            self.num_classes
        }
    }

    pub fn encoding_config(&self) -> EncodingConfig {
        EncodingConfig { lap_pe_dim: self.lap_pe_dim, rwse_steps: self.rwse_steps, sign_flip_augment: false }
    }

    fn sgsa_config(&self) -> SgsaConfig {
        SgsaConfig {
            d: self.d,
            heads: self.heads,
            edge_feat_dim: self.edge_feat_dim,
            mode: self.attention_mode,
            attn_scale: self.attn_scale,
            residual: self.residual,
            use_srb: self.use_srb,
            smlp_depth: self.smlp_depth,
            neuron: self.neuron,
        }
    }
}

// ── Checkpoint plumbing ─────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("incompatible checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint incompatible: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] AutodiffError),
}

/// Training provenance stored next to the parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_trained: usize,
    /// Best evaluation metric seen (lower-is-better for regression,
    /// higher-is-better for classification).
    pub best_metric: Option<f64>,
    /// Per-epoch evaluation metric trajectory.
    pub metric_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BnRecord {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    kind: String,
    config: ModelConfig,
    param_shapes: Vec<Vec<usize>>,
    params: Vec<Vec<f64>>,
    bn_running: Vec<BnRecord>,
    meta: TrainMeta,
}

fn write_checkpoint(
    path: &Path,
    kind: &str,
    config: &ModelConfig,
    params: &[Tensor],
    norms: &[&BatchNorm],
    meta: &TrainMeta,
) -> Result<(), CheckpointError> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config: config.clone(),
        param_shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        params: params.iter().map(|p| p.to_vec()).collect(),
        bn_running: norms
            .iter()
            .map(|n| {
                let (mean, var) = n.running_stats();
                BnRecord { mean, var }
            })
            .collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_string(&file)?;
    fs::write(path, json).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
}

fn read_checkpoint(path: &Path, kind: &str) -> Result<CheckpointFile, CheckpointError> {
    let raw =
        fs::read_to_string(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    let file: CheckpointFile = serde_json::from_str(&raw)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: file.version, expected: CHECKPOINT_VERSION });
    }
    if file.kind != kind {
        return Err(CheckpointError::Mismatch(format!("checkpoint holds a `{}` model, expected `{kind}`", file.kind)));
    }
    Ok(file)
}

fn apply_checkpoint(file: &CheckpointFile, params: &[Tensor], norms: &[&BatchNorm]) -> Result<(), CheckpointError> {
    if file.params.len() != params.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} parameter tensors stored, model has {}",
            file.params.len(),
            params.len()
        )));
    }
    for (i, (stored, live)) in file.params.iter().zip(params).enumerate() {
        if file.param_shapes[i] != live.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "parameter {i} shape {:?} does not match model shape {:?}",
                file.param_shapes[i],
                live.shape()
            )));
        }
        live.set_data(stored);
    }
    if file.bn_running.len() != norms.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} normalization records stored, model has {}",
            file.bn_running.len(),
            norms.len()
        )));
    }
    for (rec, norm) in file.bn_running.iter().zip(norms) {
        if rec.mean.len() != norm.dim() {
            return Err(CheckpointError::Mismatch("normalization record width mismatch".into()));
        }
        norm.set_running_stats(rec.mean.clone(), rec.var.clone());
    }
    Ok(())
}

// ── Forward trace ───────────────────────────────────────────────────────

/// Per-layer spike accounting recorded during one forward pass.
#[derive(Debug, Clone)]
pub struct LayerTraceInfo {
    /// Ones / element counts of the layer's input spikes S^{l,t}, per step.
    pub input_ones: Vec<usize>,
    pub input_elems: Vec<usize>,
    /// Ones / element counts of the binary operands driving attention
    /// at each step (input spikes + the g-trains computed then).
    pub attn_driver_ones: Vec<usize>,
    pub attn_driver_elems: Vec<usize>,
}

/// Everything a forward pass reports besides the predictions: spike
/// statistics for the energy model, first-layer/first-head attention
/// matrices for export, and the first block that produced a non-finite
/// value (for NaN diagnostics).
#[derive(Debug, Clone, Default)]
pub struct ForwardTrace {
    pub coding_ones: Vec<usize>,
    pub coding_elems: Vec<usize>,
    pub layers: Vec<LayerTraceInfo>,
    /// First-layer, first-head score matrices (length 1 in `first_step`).
    pub attn_first: Option<Vec<Tensor>>,
    pub first_non_finite: Option<String>,
}

impl ForwardTrace {
    fn note_non_finite(&mut self, name: impl FnOnce() -> String, t: &Tensor) {
        if self.first_non_finite.is_none() && t.data().iter().any(|v| !v.is_finite()) {
            self.first_non_finite = Some(name());
        }
    }
}

/// Predictions plus the trace of the pass that produced them.
#[derive(Debug)]
pub struct ModelOutput {
    /// `[G, out]` for graph tasks, `[N, out]` for node tasks.
    pub predictions: Tensor,
    pub trace: ForwardTrace,
}

fn encoding_tensor(batch: &GraphBatch, cfg: &EncodingConfig) -> Result<Tensor, AutodiffError> {
    let mut rows: Vec<f64> = Vec::new();
    let mut width = cfg.width();
    for g in batch.unbatch() {
        let enc = encoding_matrix(&g, cfg, None);
        if let Some(r) = enc.first() {
            width = r.len();
        }
        for r in &enc {
            rows.extend_from_slice(r);
        }
    }
    Tensor::from_vec(rows, &[batch.num_nodes, width])
}

fn check_batch_widths(cfg: &ModelConfig, batch: &GraphBatch) -> Result<(), AutodiffError> {
    if batch.feat_dim != cfg.feat_dim {
        return Err(AutodiffError::invalid(
            "model",
            format!("batch feature width {} does not match configured feat_dim {}", batch.feat_dim, cfg.feat_dim),
        ));
    }
    if batch.edge_feat_dim != cfg.edge_feat_dim {
        return Err(AutodiffError::invalid(
            "model",
            format!(
                "batch edge feature width {} does not match configured edge_feat_dim {}",
                batch.edge_feat_dim, cfg.edge_feat_dim
            ),
        ));
    }
    Ok(())
}

// ── SGHormer ────────────────────────────────────────────────────────────

/// Rate encoder → L spiking attention layers → firing-rate readout.
#[derive(Debug)]
pub struct SgHormer {
    pub cfg: ModelConfig,
    encoder: RateEncoder,
    layers: Vec<SgsaLayer>,
    head: Linear,
    noise_rng: ChaCha8Rng,
}

impl SgHormer {
    /// Build with freshly initialized parameters, all randomness drawn
    /// from `cfg.seed`. Tolerates `L = 0` (encoder-only degenerate
    /// network); CLI-level validation enforces `L ≥ 1` for real runs.
    pub fn new(cfg: &ModelConfig) -> Result<SgHormer, AutodiffError> {
        let errs = cfg.validate_relaxed();
        if !errs.is_empty() {
            return Err(AutodiffError::invalid("model", errs.join("; ")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = RateEncoder::new(cfg.feat_dim, cfg.enc_width(), cfg.d, cfg.neuron, &mut rng)?;
        let sgsa = cfg.sgsa_config();
        let layers =
            (0..cfg.layers).map(|_| SgsaLayer::new(&sgsa, &mut rng)).collect::<Result<Vec<_>, AutodiffError>>()?;
        let head = Linear::new(cfg.d, cfg.out_width(), &mut rng);
        // The same stream continues as the rectify-block noise source,
        // so one seed fixes the whole training trajectory.
        Ok(SgHormer { cfg: cfg.clone(), encoder, layers, head, noise_rng: rng })
    }

    /// One forward pass over a batch. Training mode samples rectifier
    /// noise and updates normalization running statistics; eval mode is
    /// deterministic and row-independent across graphs.
    pub fn forward(&mut self, tape: &Tape, batch: &GraphBatch, training: bool) -> Result<ModelOutput, AutodiffError> {
        check_batch_widths(&self.cfg, batch)?;
        let mut trace = ForwardTrace::default();
        let x_feat = batch.node_feat_tensor();
        let x_enc = encoding_tensor(batch, &self.cfg.encoding_config())?;
        let mut spikes = self.encoder.forward(tape, &x_feat, &x_enc, self.cfg.t_steps)?;
        for t in 0..spikes.num_steps() {
            trace.coding_ones.push(spikes.step(t).ones_count());
            trace.coding_elems.push(spikes.step(t).numel());
        }

        let blocks = batch.blocks_rc();
        let edges = batch.edges_rc();
        let edge_feats = batch.edge_feat_tensor();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let projected = layer.mpnn.project_edges(tape, edge_feats.as_ref())?;
            let input_ones: Vec<usize> = spikes.steps().iter().map(|s| s.ones_count()).collect();
            let input_elems: Vec<usize> = spikes.steps().iter().map(|s| s.numel()).collect();
            let out = layer.forward(tape, &spikes, &edges, &blocks, projected.as_ref(), training, &mut self.noise_rng)?;
            for (t, hg) in out.h_global.iter().enumerate() {
                trace.note_non_finite(|| format!("layer {} attention (step {})", l + 1, t + 1), hg);
            }
            for (t, hl) in out.h_local.iter().enumerate() {
                trace.note_non_finite(|| format!("layer {} local branch (step {})", l + 1, t + 1), hl);
            }
            trace.layers.push(LayerTraceInfo {
                input_ones,
                input_elems,
                attn_driver_ones: out.attn_driver_ones,
                attn_driver_elems: out.attn_driver_elems,
            });
            if l == 0 {
                trace.attn_first = Some(out.attn[0].clone());
            }
            spikes = out.spikes;
        }

        // Readout: mean firing rate over time, then the task head.
        let mut acc = spikes.step(0).clone();
        for t in 1..spikes.num_steps() {
            acc = tape.add(&acc, spikes.step(t))?;
        }
        let rates = tape.mul_scalar(&acc, 1.0 / spikes.num_steps() as f64);
        let predictions = if self.cfg.task.is_node_level() {
            self.head.forward(tape, &rates)?
        } else {
            let pooled = tape.segment_mean(&rates, &blocks)?;
            self.head.forward(tape, &pooled)?
        };
        trace.note_non_finite(|| "output head".into(), &predictions);
        Ok(ModelOutput { predictions, trace })
    }

    /// Every learnable tensor in a stable, documented order (encoder,
    /// layers in depth order, head) — the checkpoint layout.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.encoder.parameters();
        for l in &self.layers {
            p.extend(l.parameters());
        }
        p.extend(self.head.parameters());
        p
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.layers.iter().flat_map(|l| l.batch_norms()).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn save_checkpoint(&self, path: &Path, meta: &TrainMeta) -> Result<(), CheckpointError> {
        write_checkpoint(path, "sghormer", &self.cfg, &self.parameters(), &self.batch_norms(), meta)
    }

    /// Rebuild a model from a checkpoint. With `expected` present the
    /// stored config must match it exactly.
    pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<(SgHormer, TrainMeta), CheckpointError> {
        let file = read_checkpoint(path, "sghormer")?;
        if let Some(want) = expected {
            if *want != file.config {
                return Err(CheckpointError::Mismatch(
                    "stored model config differs from the requested config".into(),
                ));
            }
        }
        let model = SgHormer::new(&file.config)?;
        apply_checkpoint(&file, &model.parameters(), &model.batch_norms())?;
        Ok((model, file.meta))
    }
}

// ── Full-precision baseline ─────────────────────────────────────────────

struct BaselineLayer {
    w_q: Vec<Tensor>,
    w_k: Vec<Tensor>,
    w_v: Vec<Tensor>,
    mpnn: Mpnn,
    mlp: Vec<(Linear, BatchNorm)>,
}

/// Vanilla-attention twin of [`SgHormer`]: same layer count, width, and
/// head split; softmax scores instead of popcounts; ReLU MLP instead of
/// spiking neurons; a single implicit time step.
pub struct BaselineModel {
    pub cfg: ModelConfig,
    encoder: Linear,
    layers: Vec<BaselineLayer>,
    head: Linear,
}

/// Baseline predictions plus the first-layer/first-head softmax matrix.
#[derive(Debug)]
pub struct BaselineOutput {
    pub predictions: Tensor,
    pub attn_first: Option<Tensor>,
}

impl BaselineModel {
    pub fn new(cfg: &ModelConfig) -> Result<BaselineModel, AutodiffError> {
        let errs = cfg.validate_relaxed();
        if !errs.is_empty() {
            return Err(AutodiffError::invalid("baseline", errs.join("; ")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Linear::new(cfg.in_width(), cfg.d, &mut rng);
        let d_head = cfg.d_head();
        let layers = (0..cfg.layers)
            .map(|_| {
                let mut w_q = Vec::new();
                let mut w_k = Vec::new();
                let mut w_v = Vec::new();
                for _ in 0..cfg.heads {
                    w_q.push(crate::blocks::attention::proj_param(cfg.d, d_head, &mut rng));
                    w_k.push(crate::blocks::attention::proj_param(cfg.d, d_head, &mut rng));
                    w_v.push(crate::blocks::attention::proj_param(cfg.d, d_head, &mut rng));
                }
                let mpnn = Mpnn::new(cfg.d, cfg.edge_feat_dim, &mut rng);
                let mlp = (0..cfg.smlp_depth).map(|_| (Linear::new(cfg.d, cfg.d, &mut rng), BatchNorm::new(cfg.d))).collect();
                BaselineLayer { w_q, w_k, w_v, mpnn, mlp }
            })
            .collect();
        let head = Linear::new(cfg.d, cfg.out_width(), &mut rng);
        Ok(BaselineModel { cfg: cfg.clone(), encoder, layers, head })
    }

    pub fn forward(&self, tape: &Tape, batch: &GraphBatch, training: bool) -> Result<BaselineOutput, AutodiffError> {
        check_batch_widths(&self.cfg, batch)?;
        let x_feat = batch.node_feat_tensor();
        let x_enc = encoding_tensor(batch, &self.cfg.encoding_config())?;
        let joined = tape.concat_cols(&[x_feat, x_enc])?;
        let mut x = self.encoder.forward(tape, &joined)?;
        let blocks = batch.blocks_rc();
        let edges = batch.edges_rc();
        let edge_feats = batch.edge_feat_tensor();
        let scale = 1.0 / (self.cfg.d_head() as f64).sqrt();
        let mut attn_first = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let projected = layer.mpnn.project_edges(tape, edge_feats.as_ref())?;
            let mut parts = Vec::with_capacity(layer.w_q.len());
            for h in 0..layer.w_q.len() {
                let q = tape.matmul(&x, &layer.w_q[h])?;
                let k = tape.matmul(&x, &layer.w_k[h])?;
                let v = tape.matmul(&x, &layer.w_v[h])?;
                let scores = tape.mul_scalar(&tape.matmul(&q, &tape.transpose(&k)?)?, scale);
                let att = tape.softmax_blocks(&scores, &blocks)?;
                if l == 0 && h == 0 {
                    attn_first = Some(att.clone());
                }
                parts.push(tape.matmul(&att, &v)?);
            }
            let h_global = tape.concat_cols(&parts)?;
            let h_local = layer.mpnn.forward(tape, &x, &edges, projected.as_ref())?;
            let mut fused = tape.add(&h_local, &h_global)?;
            if self.cfg.residual {
                fused = tape.add(&fused, &x)?;
            }
            let mut y = fused;
            for (lin, norm) in &layer.mlp {
                y = tape.relu(&norm.forward(tape, &lin.forward(tape, &y)?, training)?);
            }
            x = y;
        }
        let predictions = if self.cfg.task.is_node_level() {
            self.head.forward(tape, &x)?
        } else {
            let pooled = tape.segment_mean(&x, &blocks)?;
            self.head.forward(tape, &pooled)?
        };
        Ok(BaselineOutput { predictions, attn_first })
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.encoder.parameters();
        for l in &self.layers {
            for h in 0..l.w_q.len() {
                p.push(l.w_q[h].clone());
                p.push(l.w_k[h].clone());
                p.push(l.w_v[h].clone());
            }
            p.extend(l.mpnn.parameters());
            for (lin, norm) in &l.mlp {
                p.extend(lin.parameters());
                p.extend(norm.parameters());
            }
        }
        p.extend(self.head.parameters());
        p
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        self.layers.iter().flat_map(|l| l.mlp.iter().map(|(_, n)| n)).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn save_checkpoint(&self, path: &Path, meta: &TrainMeta) -> Result<(), CheckpointError> {
        write_checkpoint(path, "baseline", &self.cfg, &self.parameters(), &self.batch_norms(), meta)
    }

    pub fn load_checkpoint(
        path: &Path,
        expected: Option<&ModelConfig>,
    ) -> Result<(BaselineModel, TrainMeta), CheckpointError> {
        let file = read_checkpoint(path, "baseline")?;
        if let Some(want) = expected {
            if *want != file.config {
                return Err(CheckpointError::Mismatch(
                    "stored model config differs from the requested config".into(),
                ));
            }
        }
        let model = BaselineModel::new(&file.config)?;
        apply_checkpoint(&file, &model.parameters(), &model.batch_norms())?;
        Ok((model, file.meta))
    }
}

// ── Attention export ────────────────────────────────────────────────────

/// Side-by-side attention matrices of both models on one graph, for
/// external plotting.
#[derive(Debug, Serialize, Deserialize)]
pub struct AttentionExport {
    /// Popcount score matrices (pre-scale integer counts in 0..=d′);
    /// one per step in `satt` mode, a single matrix in `first_step`.
    pub spiking_attn: Vec<Vec<Vec<f64>>>,
    /// 0/1 mask: which pairs attended at all (first step).
    pub spiking_attn_binarized: Vec<Vec<Vec<u8>>>,
    /// Softmax attention of the matched baseline.
    pub baseline_attn: Vec<Vec<f64>>,
    /// Pearson correlation between the first-step spiking scores and
    /// the softmax scores over off-diagonal entries (0.0 when either
    /// side is constant).
    pub pearson_r: f64,
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| (0..t.cols()).map(|j| t.at(i, j)).collect()).collect()
}

fn off_diagonal(t: &Tensor) -> Vec<f64> {
    let n = t.rows();
    let mut out = Vec::with_capacity(n * n - n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(t.at(i, j));
            }
        }
    }
    out
}

/// Pearson correlation coefficient; 0.0 for degenerate inputs (fewer
/// than two points or an effectively constant side).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson over unequal lengths");
    let n = a.len() as f64;
    if a.len() < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va.sqrt() < 1e-12 || vb.sqrt() < 1e-12 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Run both models on a single graph in eval mode and export the
/// first-layer, first-head attention matrices.
pub fn export_attention(
    model: &mut SgHormer,
    baseline: &BaselineModel,
    batch: &GraphBatch,
) -> Result<AttentionExport, AutodiffError> {
    if batch.num_graphs() != 1 {
        return Err(AutodiffError::invalid(
            "export_attention",
            format!("expected a single graph, got a batch of {}", batch.num_graphs()),
        ));
    }
    if model.cfg.layers == 0 {
        return Err(AutodiffError::invalid("export_attention", "model has no attention layers"));
    }
    let tape = Tape::no_grad();
    let out = model.forward(&tape, batch, false)?;
    let spiking = out.trace.attn_first.expect("layers ≥ 1 always records attention");
    let bout = baseline.forward(&tape, batch, false)?;
    let base = bout.attn_first.expect("layers ≥ 1 always records attention");
    let binarized = spiking
        .iter()
        .map(|m| {
            (0..m.rows()).map(|i| (0..m.cols()).map(|j| u8::from(m.at(i, j) > 0.0)).collect()).collect()
        })
        .collect();
    let r = pearson(&off_diagonal(&spiking[0]), &off_diagonal(&base));
    Ok(AttentionExport {
        spiking_attn: spiking.iter().map(tensor_rows).collect(),
        spiking_attn_binarized: binarized,
        baseline_attn: tensor_rows(&base),
        pearson_r: r,
    })
}
