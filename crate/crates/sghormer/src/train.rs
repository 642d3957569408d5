//! Training loop, evaluation metrics, and the per-epoch metrics log.
//!
//! Training is plain mini-batch gradient descent with the adaptive-moment
//! optimizer from [`crate::optim`]: L1 loss for regression tasks,
//! cross-entropy for classification. All randomness (dataset split,
//! per-epoch shuffling) flows from the settings seed, and the model's own
//! seed covers init and SRB noise, so a fixed seed pair reproduces the
//! metric trajectory exactly on a single thread — wall-clock columns are
//! the one exception and are excluded from trajectory comparisons.

use std::path::PathBuf;
use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{batch, Graph, GraphBatch, GraphError};
use crate::model::{BaselineModel, CheckpointError, ModelConfig, SgHormer, TaskKind, TrainMeta};
use crate::optim::{AdamW, AdamWConfig};
use crate::tape::Tape;
use crate::tensor::{AutodiffError, Tensor};

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum TrainError {
    /// The loss went NaN/∞; `block` names the first block whose output
    /// turned non-finite during that forward pass.
    #[error("training aborted at epoch {epoch}, batch {batch}: non-finite loss, first produced by {block}")]
    NonFinite { epoch: usize, batch: usize, block: String },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

// ── Metrics log ─────────────────────────────────────────────────────────

/// One row of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// MAE (regression, lower is better) or accuracy (classification,
    /// higher is better) on the held-out split.
    pub eval_metric: f64,
    pub wall_seconds: f64,
}

/// Append-only, strictly epoch-ordered training log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    rows: Vec<EpochRow>,
}

impl MetricsLog {
    pub fn new() -> MetricsLog {
        MetricsLog::default()
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    /// Append a row; epochs must strictly increase.
    pub fn push(&mut self, row: EpochRow) -> Result<(), TrainError> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(TrainError::Invalid(format!(
                    "metrics log is append-only: epoch {} after epoch {}",
                    row.epoch, last.epoch
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    /// CSV rendering, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,eval_metric,wall_seconds\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.eval_metric, r.wall_seconds));
        }
        out
    }

    /// Trajectory equality modulo wall-clock time.
    pub fn same_trajectory(&self, other: &MetricsLog) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.epoch == b.epoch && a.train_loss == b.train_loss && a.eval_metric == b.eval_metric
            })
    }
}

// ── Dataset handling ────────────────────────────────────────────────────

/// Deterministic shuffled split into (train, eval). A one-graph dataset
/// evaluates on its own training graph rather than producing an empty
/// split.
pub fn split_dataset(graphs: &[Graph], eval_frac: f64, seed: u64) -> (Vec<Graph>, Vec<Graph>) {
    if graphs.len() < 2 {
        return (graphs.to_vec(), graphs.to_vec());
    }
    let mut idx: Vec<usize> = (0..graphs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_eval = ((graphs.len() as f64 * eval_frac).round() as usize).clamp(1, graphs.len() - 1);
    let (eval_idx, train_idx) = idx.split_at(n_eval);
    let pick = |ids: &[usize]| ids.iter().map(|&i| graphs[i].clone()).collect::<Vec<_>>();
    (pick(train_idx), pick(eval_idx))
}

/// Verify every graph's label matches the task before any compute.
pub fn check_task_labels(cfg: &ModelConfig, graphs: &[Graph]) -> Result<(), TrainError> {
    for (i, g) in graphs.iter().enumerate() {
        let problem = match cfg.task {
            TaskKind::GraphRegression => g.label.as_scalar().err().map(|e| e.to_string()),
            TaskKind::GraphClassification => match g.label.as_class() {
                Err(e) => Some(e.to_string()),
                Ok(c) if c >= cfg.num_classes => Some(format!("class {c} out of range for {} classes", cfg.num_classes)),
                Ok(_) => None,
            },
            TaskKind::NodeClassification => match g.label.as_node_classes() {
                Err(e) => Some(e.to_string()),
                Ok(cs) if cs.len() != g.num_nodes => {
                    Some(format!("{} node labels for {} nodes", cs.len(), g.num_nodes))
                }
                Ok(cs) => cs
                    .iter()
                    .find(|&&c| c >= cfg.num_classes)
                    .map(|c| format!("class {c} out of range for {} classes", cfg.num_classes)),
            },
        };
        if let Some(why) = problem {
            return Err(TrainError::Invalid(format!("graph {i} does not fit task '{}': {why}", cfg.task)));
        }
    }
    Ok(())
}

/// MAE of always predicting the mean training label — the naive oracle
/// a trained regressor has to beat.
pub fn predict_mean_mae(train: &[Graph], eval: &[Graph]) -> Result<f64, TrainError> {
    if train.is_empty() || eval.is_empty() {
        return Err(TrainError::Invalid("predict-mean baseline needs non-empty splits".into()));
    }
    let mean = train.iter().map(|g| g.label.as_scalar()).sum::<Result<f64, _>>()? / train.len() as f64;
    let mae = eval
        .iter()
        .map(|g| g.label.as_scalar().map(|y| (y - mean).abs()))
        .sum::<Result<f64, _>>()?
        / eval.len() as f64;
    Ok(mae)
}

// ── Losses & metrics ────────────────────────────────────────────────────

fn regression_targets(b: &GraphBatch) -> Result<Tensor, TrainError> {
    let ys = b.labels.iter().map(|l| l.as_scalar()).collect::<Result<Vec<_>, _>>()?;
    let n = ys.len();
    Ok(Tensor::from_vec(ys, &[n, 1])?)
}

fn class_targets(b: &GraphBatch, task: TaskKind) -> Result<Rc<Vec<usize>>, TrainError> {
    let mut classes = Vec::new();
    for l in &b.labels {
        match task {
            TaskKind::GraphClassification => classes.push(l.as_class()?),
            TaskKind::NodeClassification => classes.extend_from_slice(l.as_node_classes()?),
            TaskKind::GraphRegression => unreachable!("regression handled by l1 path"),
        }
    }
    Ok(Rc::new(classes))
}

/// Mean loss of `preds` against the batch labels plus the row count the
/// mean was taken over (for exact cross-batch aggregation).
pub fn batch_loss(tape: &Tape, preds: &Tensor, b: &GraphBatch, task: TaskKind) -> Result<(Tensor, usize), TrainError> {
    if task.is_regression() {
        let targets = regression_targets(b)?;
        let n = targets.numel();
        Ok((tape.l1_loss(preds, &targets)?, n))
    } else {
        let targets = class_targets(b, task)?;
        let n = targets.len();
        Ok((tape.cross_entropy(preds, &targets)?, n))
    }
}

/// Evaluation-metric contribution of one batch: `(numerator, count)`
/// where the metric is `numerator / count` — absolute-error sum for
/// regression, correct-prediction count for classification.
pub fn metric_accumulate(preds: &Tensor, b: &GraphBatch, task: TaskKind) -> Result<(f64, usize), TrainError> {
    let data = preds.data();
    let shape = preds.shape();
    match task {
        TaskKind::GraphRegression => {
            let mut abs_sum = 0.0;
            for (i, l) in b.labels.iter().enumerate() {
                abs_sum += (data[i] - l.as_scalar()?).abs();
            }
            Ok((abs_sum, b.labels.len()))
        }
        TaskKind::GraphClassification | TaskKind::NodeClassification => {
            let targets = class_targets(b, task)?;
            let cols = shape[1];
            let mut correct = 0usize;
            for (row, &want) in targets.iter().enumerate() {
                let logits = &data[row * cols..(row + 1) * cols];
                let argmax = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                correct += usize::from(argmax == want);
            }
            Ok((correct as f64, targets.len()))
        }
    }
}

// ── Evaluation ──────────────────────────────────────────────────────────

/// An evaluation result: `value` is MAE for regression (lower is
/// better) or accuracy for classification (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    /// Rows the metric averaged over (graphs, or nodes for node tasks).
    pub count: usize,
}

fn metric_name(task: TaskKind) -> &'static str {
    match task {
        TaskKind::GraphRegression => "mae",
        TaskKind::GraphClassification => "accuracy",
        TaskKind::NodeClassification => "node_accuracy",
    }
}

fn evaluate_impl<F>(
    cfg: &ModelConfig,
    graphs: &[Graph],
    batch_size: usize,
    mut forward: F,
) -> Result<EvalReport, TrainError>
where
    F: FnMut(&Tape, &GraphBatch) -> Result<Tensor, AutodiffError>,
{
    if graphs.is_empty() {
        return Err(TrainError::Invalid("evaluation set is empty".into()));
    }
    check_task_labels(cfg, graphs)?;
    let (mut numer, mut count) = (0.0, 0usize);
    for chunk in graphs.chunks(batch_size.max(1)) {
        let b = batch(chunk)?;
        let tape = Tape::no_grad();
        let preds = forward(&tape, &b)?;
        let (n, c) = metric_accumulate(&preds, &b, cfg.task)?;
        numer += n;
        count += c;
    }
    Ok(EvalReport { metric: metric_name(cfg.task).to_string(), value: numer / count as f64, count })
}

/// Evaluate the spiking model in eval mode (deterministic).
pub fn evaluate_spiking(model: &mut SgHormer, graphs: &[Graph], batch_size: usize) -> Result<EvalReport, TrainError> {
    let cfg = model.cfg.clone();
    evaluate_impl(&cfg, graphs, batch_size, |tape, b| Ok(model.forward(tape, b, false)?.predictions))
}

/// Evaluate the full-precision baseline in eval mode.
pub fn evaluate_baseline(model: &BaselineModel, graphs: &[Graph], batch_size: usize) -> Result<EvalReport, TrainError> {
    let cfg = model.cfg.clone();
    evaluate_impl(&cfg, graphs, batch_size, |tape, b| Ok(model.forward(tape, b, false)?.predictions))
}

// ── Training loop ───────────────────────────────────────────────────────

/// Knobs of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub optimizer: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seed for the split and per-epoch shuffling (model init and SRB
    /// noise are governed by the model config's own seed).
    pub seed: u64,
    pub eval_frac: f64,
    /// Where to persist the best-metric checkpoint, if anywhere.
    #[serde(skip)]
    pub best_checkpoint: Option<PathBuf>,
}

impl Default for TrainSettings {
    fn default() -> TrainSettings {
        TrainSettings {
            optimizer: AdamWConfig::default(),
            epochs: 50,
            batch_size: 32,
            seed: 42,
            eval_frac: 0.2,
            best_checkpoint: None,
        }
    }
}

impl TrainSettings {
    /// Collect every invalid field (empty means valid).
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.optimizer.validate();
        if self.batch_size == 0 {
            errs.push("optimizer.batch_size must be at least 1".into());
        }
        if !(self.eval_frac > 0.0 && self.eval_frac < 1.0) {
            errs.push(format!("eval_frac must lie in (0, 1), got {}", self.eval_frac));
        }
        errs
    }
}

/// Everything a finished run hands back.
#[derive(Debug)]
pub struct TrainOutcome {
    pub model: SgHormer,
    pub log: MetricsLog,
    pub meta: TrainMeta,
    /// The held-out split the eval metric was computed on.
    pub eval_graphs: Vec<Graph>,
    pub train_graphs: Vec<Graph>,
}

fn improves(task: TaskKind, candidate: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) if task.is_regression() => candidate < b,
        Some(b) => candidate > b,
    }
}

/// Train a fresh model on `graphs`. The best-eval-metric checkpoint is
/// persisted whenever `settings.best_checkpoint` names a path (for a
/// zero-epoch run that checkpoint is the untouched initialization).
pub fn train(cfg: &ModelConfig, graphs: &[Graph], settings: &TrainSettings) -> Result<TrainOutcome, TrainError> {
    let mut errs = cfg.validate();
    errs.extend(settings.validate());
    if graphs.is_empty() {
        errs.push("dataset is empty".into());
    }
    if !errs.is_empty() {
        return Err(TrainError::Invalid(errs.join("; ")));
    }
    check_task_labels(cfg, graphs)?;

    let mut model = SgHormer::new(cfg)?;
    let params = model.parameters();
    let mut opt = AdamW::new(settings.optimizer, &params)?;
    let (train_graphs, eval_graphs) = split_dataset(graphs, settings.eval_frac, settings.seed);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_add(1));

    let mut log = MetricsLog::new();
    let mut meta = TrainMeta { epochs_trained: 0, best_metric: None, metric_history: Vec::new() };
    if settings.epochs == 0 {
        if let Some(path) = &settings.best_checkpoint {
            model.save_checkpoint(path, &meta)?;
        }
        return Ok(TrainOutcome { model, log, meta, eval_graphs, train_graphs });
    }

    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
    for epoch in 1..=settings.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut loss_rows) = (0.0, 0usize);
        for (batch_no, chunk) in order.chunks(settings.batch_size).enumerate() {
            let minibatch: Vec<Graph> = chunk.iter().map(|&i| train_graphs[i].clone()).collect();
            let b = batch(&minibatch)?;
            let tape = Tape::new();
            let out = model.forward(&tape, &b, true)?;
            let (loss, rows) = batch_loss(&tape, &out.predictions, &b, cfg.task)?;
            let loss_value = loss.item()?;
            if !loss_value.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: batch_no + 1,
                    block: out.trace.first_non_finite.unwrap_or_else(|| "loss reduction".into()),
                });
            }
            tape.backward(&loss)?;
            opt.step(&params)?;
            opt.zero_grad(&params);
            loss_sum += loss_value * rows as f64;
            loss_rows += rows;
        }

        let report = evaluate_spiking(&mut model, &eval_graphs, settings.batch_size)?;
        meta.epochs_trained = epoch;
        meta.metric_history.push(report.value);
        if improves(cfg.task, report.value, meta.best_metric) {
            meta.best_metric = Some(report.value);
            if let Some(path) = &settings.best_checkpoint {
                model.save_checkpoint(path, &meta)?;
            }
        }
        log.push(EpochRow {
            epoch,
            train_loss: loss_sum / loss_rows.max(1) as f64,
            eval_metric: report.value,
            wall_seconds: started.elapsed().as_secs_f64(),
        })?;
    }

    Ok(TrainOutcome { model, log, meta, eval_graphs, train_graphs })
}
