//! Side-by-side attention: popcount scores vs softmax weights.
//!
//! Trains a small spiking model on a two-community task, then exports
//! its first-layer attention next to a dense twin's on one held-out
//! graph, rendering both as character heatmaps — the same artifact the
//! CLI's `export-attention` subcommand writes as JSON. The model runs
//! in `satt` mode (one score matrix per step), which shows the scores
//! filling in as membranes integrate: step 1 is nearly silent, the
//! last step is busy.
//!
//! ```text
//! cargo run --example attention_patterns
//! ```

use sghormer::blocks::attention::AttentionMode;
use sghormer::graph::batch;
use sghormer::model::{export_attention, BaselineModel, ModelConfig, TaskKind};
use sghormer::neurons::NeuronConfig;
use sghormer::optim::AdamWConfig;
use sghormer::synthetic::{gen_synthetic, SyntheticKind};
use sghormer::train::{train, TrainSettings};

fn shade(value: f64, max: f64) -> char {
    if max <= 0.0 {
        return '·';
    }
    match (4.0 * value / max).round() as i64 {
        0 => '·',
        1 => '░',
        2 => '▒',
        3 => '▓',
        _ => '█',
    }
}

fn render(title: &str, matrix: &[Vec<f64>]) {
    let max = matrix.iter().flatten().cloned().fold(0.0f64, f64::max);
    println!("{title} (max entry {max:.3}):");
    for row in matrix {
        let line: String = row.iter().map(|&v| shade(v, max)).collect();
        println!("  {line}");
    }
    println!();
}

fn main() {
    let graphs = gen_synthetic(SyntheticKind::TwoCommunity, 20, (12, 12), 6).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        d: 16,
        heads: 2,
        t_steps: 4,
        task: TaskKind::NodeClassification,
        attention_mode: AttentionMode::Satt,
        lap_pe_dim: 2,
        rwse_steps: 4,
        neuron: NeuronConfig { v_th: 0.3, ..NeuronConfig::default() },
        ..ModelConfig::default()
    };
    let settings = TrainSettings {
        optimizer: AdamWConfig { lr: 1e-2, ..AdamWConfig::default() },
        epochs: 10,
        batch_size: 10,
        ..TrainSettings::default()
    };
    let outcome = train(&cfg, &graphs, &settings).unwrap();
    let mut model = outcome.model;
    let baseline = BaselineModel::new(&cfg).unwrap();
    let b = batch(&outcome.eval_graphs[..1]).unwrap();

    let export = export_attention(&mut model, &baseline, &b).unwrap();
    render("spiking popcount scores, step 1 (first layer, first head)", &export.spiking_attn[0]);
    let last = export.spiking_attn.len() - 1;
    render(&format!("spiking popcount scores, step {}", last + 1), &export.spiking_attn[last]);

    let binarized: Vec<Vec<f64>> =
        export.spiking_attn_binarized[last].iter().map(|row| row.iter().map(|&b| f64::from(b)).collect()).collect();
    render("binarized (attended at all, last step?)", &binarized);
    render("dense softmax attention", &export.baseline_attn);

    println!("pearson correlation (off-diagonal, step 1 vs dense): {:.4}", export.pearson_r);
    println!();
    println!("The spiking model is trained, the dense twin is not, so any");
    println!("agreement here is incidental; train both on the same task and");
    println!("the exported pair shows whether the popcount scores recover the");
    println!("dense attention structure.");
}
