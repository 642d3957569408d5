//! Rate coding: stronger inputs fire more often.
//!
//! Feeds constant currents of increasing magnitude through a LIF
//! neuron for T steps and prints the observed firing rate next to the
//! input strength — the monotone staircase that makes mean-rate
//! readouts meaningful.
//!
//! ```text
//! cargo run --example rate_coding
//! ```

use sghormer::neurons::{Neuron, NeuronConfig};
use sghormer::{Tape, Tensor};

fn main() {
    let t_steps = 32;
    let cfg = NeuronConfig::default(); // LIF, β = 0.5, v_th = 1.0
    let tape = Tape::no_grad();

    println!("LIF firing rate over T = {t_steps} steps (β = {}, v_th = {})", cfg.beta, cfg.v_th);
    println!("  current   rate    spikes");
    for level in 0..=12 {
        let i = level as f64 * 0.25;
        let currents = vec![Tensor::from_vec(vec![i], &[1, 1]).unwrap(); t_steps];
        let mut neuron = Neuron::new(cfg).unwrap();
        let train = neuron.run(&tape, &currents).unwrap();
        let rate = train.fire_rate();
        let bar: String = train.steps().iter().map(|s| if s.to_vec()[0] == 1.0 { '█' } else { '·' }).collect();
        println!("  {i:>7.2}   {rate:>5.3}   {bar}");
    }
    println!();
    println!("A LIF driven by a constant current converges to v = current, so");
    println!("inputs below threshold stay silent while larger ones saturate —");
    println!("the mean rate over T steps is the value the network computes with.");
}
