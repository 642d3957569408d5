//! End-to-end training on a small degree-regression problem.
//!
//! Generates 60 graphs, trains a compact spiking model for a handful
//! of epochs, and prints the loss trajectory plus the final evaluation
//! against the predict-the-mean baseline — the whole train/eval loop
//! in one file, no CLI involved.
//!
//! ```text
//! cargo run --example train_toy
//! ```

use sghormer::model::ModelConfig;
use sghormer::neurons::NeuronConfig;
use sghormer::optim::AdamWConfig;
use sghormer::synthetic::{gen_synthetic, SyntheticKind};
use sghormer::train::{evaluate_spiking, predict_mean_mae, train, TrainSettings};

fn main() {
    let graphs = gen_synthetic(SyntheticKind::DegreeRegression, 60, (8, 14), 4).unwrap();

    let cfg = ModelConfig {
        layers: 1,
        d: 16,
        heads: 2,
        t_steps: 4,
        lap_pe_dim: 2,
        rwse_steps: 4,
        neuron: NeuronConfig { v_th: 0.4, ..NeuronConfig::default() },
        ..ModelConfig::default()
    };
    // A hot learning rate keeps the demo quick; the default 1e-3 needs
    // a few hundred steps to move the head this far.
    let settings = TrainSettings {
        optimizer: AdamWConfig { lr: 1e-2, ..AdamWConfig::default() },
        epochs: 30,
        batch_size: 10,
        ..TrainSettings::default()
    };

    println!("training {} graphs, {} epochs, batch {}", graphs.len(), settings.epochs, settings.batch_size);
    let mut outcome = train(&cfg, &graphs, &settings).unwrap();

    println!("  epoch   train L1   eval MAE");
    for row in outcome.log.rows() {
        println!("  {:>5}   {:>8.4}   {:>8.4}", row.epoch, row.train_loss, row.eval_metric);
    }

    let naive = predict_mean_mae(&outcome.train_graphs, &outcome.eval_graphs).unwrap();
    let report = evaluate_spiking(&mut outcome.model, &outcome.eval_graphs, settings.batch_size).unwrap();
    println!();
    println!("final eval {}: {:.4} over {} graphs", report.metric, report.value, report.count);
    println!("predict-the-mean baseline: {naive:.4}");
    println!("model / predict-mean: {:.2}x (lower is better)", report.value / naive);
}
