//! Command-line interface: dataset generation, training, evaluation,
//! energy profiling, and attention export.
//!
//! Every subcommand takes the same three config knobs — `--config
//! file.json`, repeated `--set key.path=value` overrides, and `--out
//! dir` — and writes artifacts only under the output directory. Exit
//! codes are exact: 0 on success, 1 on runtime failure (I/O, training
//! abort), 2 on usage or configuration errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::{load_run_config, ConfigError, RunConfig, SyntheticSpec};
use crate::energy::{profile_pair, EnergyConfig};
use crate::graph::{batch, save_jsonl, Graph, GraphError};
use crate::model::{
    export_attention, BaselineModel, CheckpointError, ModelConfig, SgHormer, TrainMeta,
};
use crate::tensor::AutodiffError;
use crate::train::{evaluate_baseline, evaluate_spiking, train, EvalReport, TrainError};

// ── Argument surface ────────────────────────────────────────────────────

#[derive(Debug, Parser)]
#[command(
    name = "sghormer",
    version,
    about = "Spiking graph transformer: train, evaluate, and energy-profile rate-coded graph attention models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config file / overrides / output directory shared by all runs.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run config (merged over built-in defaults).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. --set model.T=8 (repeatable; beats the file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory for artifacts (overrides the config's `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and write it as JSONL.
    GenData {
        /// Dataset spec `kind:count:seed`, e.g. degree_regression:100:7.
        spec: String,
        /// Output directory; the file lands at <out>/<kind>.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Node-count range `lo:hi` (default 10:20).
        #[arg(long)]
        nodes: Option<String>,
    },
    /// Train a spiking model; writes metrics.csv and the best checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Serialize one run per value: --sweep model.T=2,4,8.
        #[arg(long, value_name = "KEY=V1,V2,...")]
        sweep: Option<String>,
    },
    /// Evaluate a checkpoint on the configured dataset.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to evaluate (its embedded model config is used).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Estimate spiking vs full-precision energy on the configured data.
    Profile {
        #[command(flatten)]
        run: RunArgs,
        /// Optional trained checkpoint; fresh initialization otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Export spiking and baseline attention matrices for one graph.
    ExportAttention {
        #[command(flatten)]
        run: RunArgs,
        /// Optional trained checkpoint; fresh initialization otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which dataset graph to export (default: the first).
        #[arg(long, default_value_t = 0)]
        graph: usize,
    },
}

// ── Error → exit-code mapping ───────────────────────────────────────────

enum RunError {
    /// Exit 2: the invocation or configuration is wrong.
    Usage(String),
    /// Exit 1: the run itself failed.
    Runtime(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> RunError {
        match e {
            // An unreadable config file is a runtime problem; everything
            // else is the user's configuration.
            ConfigError::Io { .. } => RunError::Runtime(e.to_string()),
            _ => RunError::Usage(e.to_string()),
        }
    }
}

impl From<GraphError> for RunError {
    fn from(e: GraphError) -> RunError {
        RunError::Runtime(e.to_string())
    }
}

impl From<TrainError> for RunError {
    fn from(e: TrainError) -> RunError {
        match e {
            // Task/label mismatches and bad setups are config errors.
            TrainError::Invalid(_) => RunError::Usage(e.to_string()),
            _ => RunError::Runtime(e.to_string()),
        }
    }
}

impl From<CheckpointError> for RunError {
    fn from(e: CheckpointError) -> RunError {
        match e {
            CheckpointError::Version { .. } | CheckpointError::Mismatch(_) => RunError::Usage(e.to_string()),
            _ => RunError::Runtime(e.to_string()),
        }
    }
}

impl From<AutodiffError> for RunError {
    fn from(e: AutodiffError) -> RunError {
        RunError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> RunError {
        RunError::Runtime(e.to_string())
    }
}

// ── Entry point ─────────────────────────────────────────────────────────

/// Parse and dispatch; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and succeed; everything
            // else is a usage error.
            let usage_error = e.use_stderr();
            let _ = e.print();
            return if usage_error { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(RunError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), RunError> {
    match cmd {
        Command::GenData { spec, out, nodes } => gen_data(&spec, &out, nodes.as_deref()),
        Command::Train { run, sweep } => train_cmd(&run, sweep.as_deref()),
        Command::Eval { run, checkpoint } => eval_cmd(&run, &checkpoint),
        Command::Profile { run, checkpoint } => profile_cmd(&run, checkpoint.as_deref()),
        Command::ExportAttention { run, checkpoint, graph } => {
            export_cmd(&run, checkpoint.as_deref(), graph)
        }
    }
}

// ── Shared plumbing ─────────────────────────────────────────────────────

fn resolve_config(run: &RunArgs) -> Result<RunConfig, RunError> {
    let mut cfg = load_run_config(run.config.as_deref(), &run.sets)?;
    if run.out.is_some() {
        cfg.out = run.out.clone();
    }
    Ok(cfg)
}

fn require_out(cfg: &RunConfig) -> Result<PathBuf, RunError> {
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| RunError::Usage("an output directory is required: pass --out or set `out` in the config".into()))?;
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn load_graphs(cfg: &RunConfig) -> Result<Vec<Graph>, RunError> {
    let graphs = cfg.data.load()?;
    if graphs.is_empty() {
        return Err(RunError::Runtime("the configured dataset is empty".into()));
    }
    Ok(graphs)
}

fn emit(summary: serde_json::Value) {
    println!("{summary}");
}

// ── gen-data ────────────────────────────────────────────────────────────

fn parse_node_range(raw: &str) -> Result<(usize, usize), RunError> {
    let bad = || RunError::Usage(format!("node range '{raw}' must be lo:hi with 2 <= lo <= hi"));
    let (lo, hi) = raw.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.parse().map_err(|_| bad())?;
    let hi: usize = hi.parse().map_err(|_| bad())?;
    if lo < 2 || hi < lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn gen_data(spec: &str, out: &Path, nodes: Option<&str>) -> Result<(), RunError> {
    let spec: SyntheticSpec = spec.parse().map_err(RunError::Usage)?;
    let range = match nodes {
        Some(raw) => parse_node_range(raw)?,
        None => crate::config::DEFAULT_NODE_RANGE,
    };
    let graphs = crate::synthetic::gen_synthetic(spec.kind, spec.count, range, spec.seed)?;
    fs::create_dir_all(out)?;
    let path = out.join(format!("{}.jsonl", spec.kind));
    save_jsonl(&path, &graphs)?;
    emit(json!({ "written": path, "count": graphs.len(), "kind": spec.kind.to_string() }));
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

fn train_once(cfg: &RunConfig, out: &Path) -> Result<serde_json::Value, RunError> {
    let graphs = load_graphs(cfg)?;
    let checkpoint_path = out.join("checkpoint.json");
    let mut settings = cfg.train_settings();
    settings.best_checkpoint = Some(checkpoint_path.clone());
    let outcome = train(&cfg.model, &graphs, &settings)?;
    fs::write(out.join("metrics.csv"), outcome.log.to_csv())?;
    let last = outcome.log.rows().last();
    Ok(json!({
        "epochs": outcome.meta.epochs_trained,
        "best_metric": outcome.meta.best_metric,
        "final_metric": last.map(|r| r.eval_metric),
        "final_train_loss": last.map(|r| r.train_loss),
        "checkpoint": checkpoint_path,
        "metrics_csv": out.join("metrics.csv"),
    }))
}

fn parse_sweep(raw: &str) -> Result<(String, Vec<String>), RunError> {
    let bad = || RunError::Usage(format!("sweep '{raw}' must be key=v1,v2,..."));
    let (key, vals) = raw.split_once('=').ok_or_else(bad)?;
    let values: Vec<String> = vals.split(',').map(str::to_string).collect();
    if key.is_empty() || values.is_empty() || values.iter().any(String::is_empty) {
        return Err(bad());
    }
    Ok((key.to_string(), values))
}

fn train_cmd(run: &RunArgs, sweep: Option<&str>) -> Result<(), RunError> {
    match sweep {
        None => {
            let cfg = resolve_config(run)?;
            let out = require_out(&cfg)?;
            emit(train_once(&cfg, &out)?);
            Ok(())
        }
        Some(raw) => {
            let (key, values) = parse_sweep(raw)?;
            for value in &values {
                // Re-resolve per run so the swept key merges like any
                // other override (and is validated per value).
                let mut args = run.clone();
                args.sets.push(format!("{key}={value}"));
                let cfg = resolve_config(&args)?;
                let base = require_out(&cfg)?;
                let sub = base.join(format!("sweep_{}_{}", key.replace('.', "_"), value));
                fs::create_dir_all(&sub)?;
                let mut summary = train_once(&cfg, &sub)?;
                summary[key.as_str()] = json!(value);
                emit(summary);
            }
            Ok(())
        }
    }
}

// ── eval ────────────────────────────────────────────────────────────────

enum AnyModel {
    Spiking(SgHormer),
    Baseline(BaselineModel),
}

/// Load whichever model kind the checkpoint holds; its embedded config
/// wins over the run config's model section.
fn load_any_checkpoint(path: &Path) -> Result<(AnyModel, TrainMeta), RunError> {
    match SgHormer::load_checkpoint(path, None) {
        Ok((m, meta)) => Ok((AnyModel::Spiking(m), meta)),
        Err(CheckpointError::Mismatch(_)) => {
            let (m, meta) = BaselineModel::load_checkpoint(path, None)?;
            Ok((AnyModel::Baseline(m), meta))
        }
        Err(e) => Err(e.into()),
    }
}

fn eval_cmd(run: &RunArgs, checkpoint: &Path) -> Result<(), RunError> {
    let cfg = resolve_config(run)?;
    let graphs = load_graphs(&cfg)?;
    let (model, _meta) = load_any_checkpoint(checkpoint)?;
    let report: EvalReport = match model {
        AnyModel::Spiking(mut m) => evaluate_spiking(&mut m, &graphs, cfg.optimizer.batch_size)?,
        AnyModel::Baseline(m) => evaluate_baseline(&m, &graphs, cfg.optimizer.batch_size)?,
    };
    let summary = json!({
        "metric": report.metric,
        "value": report.value,
        "count": report.count,
        "checkpoint": checkpoint,
    });
    if let Some(out) = &cfg.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval_report.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    emit(summary);
    Ok(())
}

impl From<serde_json::Error> for RunError {
    fn from(e: serde_json::Error) -> RunError {
        RunError::Runtime(e.to_string())
    }
}

// ── profile ─────────────────────────────────────────────────────────────

fn spiking_model_for(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<SgHormer, RunError> {
    match checkpoint {
        Some(path) => Ok(SgHormer::load_checkpoint(path, None)?.0),
        None => Ok(SgHormer::new(&cfg.model)?),
    }
}

fn profile_cmd(run: &RunArgs, checkpoint: Option<&Path>) -> Result<(), RunError> {
    let cfg = resolve_config(run)?;
    let out = require_out(&cfg)?;
    let graphs = load_graphs(&cfg)?;
    let mut model = spiking_model_for(&cfg, checkpoint)?;
    // The baseline mirrors whatever config the spiking model runs with
    // (the checkpoint's, if one was loaded).
    let model_cfg: ModelConfig = model.cfg.clone();
    let baseline = BaselineModel::new(&model_cfg)?;
    let b = batch(&graphs)?;
    let report = profile_pair(&mut model, &baseline, &b, &EnergyConfig::default())?;
    fs::write(out.join("energy_report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(out.join("energy_report.csv"), report.to_csv())?;
    emit(json!({
        "spiking_total_mj": report.total_mj,
        "baseline_total_mj": report.baseline_total_mj,
        "ratio": report.ratio,
        "total_sops": report.total_sops,
        "flop_coding": report.flop_coding,
        "report": out.join("energy_report.json"),
    }));
    Ok(())
}

// ── export-attention ────────────────────────────────────────────────────

fn export_cmd(run: &RunArgs, checkpoint: Option<&Path>, graph: usize) -> Result<(), RunError> {
    let cfg = resolve_config(run)?;
    let out = require_out(&cfg)?;
    let graphs = load_graphs(&cfg)?;
    let picked = graphs
        .get(graph)
        .ok_or_else(|| RunError::Usage(format!("graph index {graph} out of range (dataset has {})", graphs.len())))?;
    let mut model = spiking_model_for(&cfg, checkpoint)?;
    let model_cfg: ModelConfig = model.cfg.clone();
    let baseline = BaselineModel::new(&model_cfg)?;
    let b = batch(std::slice::from_ref(picked))?;
    let export = export_attention(&mut model, &baseline, &b)?;
    let path = out.join("attention.json");
    fs::write(&path, serde_json::to_string_pretty(&export)?)?;
    emit(json!({
        "attention": path,
        "graph_nodes": picked.num_nodes,
        "pearson_r": export.pearson_r,
        "spiking_matrices": export.spiking_attn.len(),
    }));
    Ok(())
}
