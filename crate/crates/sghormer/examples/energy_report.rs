//! Theoretical energy accounting: spiking SOPs vs dense FLOPs.
//!
//! Trains a small spiking model for a moment (an untrained one is
//! nearly silent at eval time, which makes for a boring bill), then
//! profiles it against its full-precision twin on the same batch:
//! per-block line items, and the firing rates that discount the bill
//! relative to the dense baseline.
//!
//! ```text
//! cargo run --example energy_report
//! ```

use sghormer::energy::{profile_pair, EnergyConfig};
use sghormer::graph::batch;
use sghormer::model::{BaselineModel, ModelConfig};
use sghormer::neurons::NeuronConfig;
use sghormer::optim::AdamWConfig;
use sghormer::synthetic::{gen_synthetic, SyntheticKind};
use sghormer::train::{train, TrainSettings};

fn main() {
    let cfg = ModelConfig {
        layers: 2,
        d: 32,
        heads: 4,
        t_steps: 4,
        neuron: NeuronConfig { v_th: 0.3, ..NeuronConfig::default() },
        ..ModelConfig::default()
    };
    let graphs = gen_synthetic(SyntheticKind::DegreeRegression, 20, (10, 14), 2).unwrap();

    let settings = TrainSettings {
        optimizer: AdamWConfig { lr: 1e-2, ..AdamWConfig::default() },
        epochs: 10,
        batch_size: 10,
        ..TrainSettings::default()
    };
    let outcome = train(&cfg, &graphs, &settings).unwrap();
    let mut model = outcome.model;
    let b = batch(&outcome.eval_graphs).unwrap();

    let baseline = BaselineModel::new(&cfg).unwrap();
    let report = profile_pair(&mut model, &baseline, &b, &EnergyConfig::default()).unwrap();

    println!("per-block line items (t = time step, rate discounts FLOPs into SOPs):");
    println!("  t   layer   block   FLOPs      rate     SOPs");
    for rec in &report.records {
        println!(
            "  {}   {:>5}   {:>5}   {:>8}   {:>6.4}   {:>8}",
            rec.t, rec.layer, rec.block, rec.flops, rec.fire_rate, rec.sops
        );
    }

    println!();
    println!("coding (always full precision): {} FLOPs", report.flop_coding);
    println!("total synaptic operations:      {}", report.total_sops);
    println!("spiking energy:                 {:.4e} mJ", report.total_mj);
    println!("dense baseline energy:          {:.4e} mJ", report.baseline_total_mj.unwrap());
    println!("ratio (baseline / spiking):     {:.1}x", report.ratio.unwrap());
    println!();
    println!("{}", report.convention);
}
