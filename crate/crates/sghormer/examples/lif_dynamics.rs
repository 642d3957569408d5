//! Membrane dynamics of the three neuron kinds on the same input.
//!
//! Drives an IF, a LIF, and a PLIF neuron with one shared current
//! trace and prints membrane potential and spikes per step, so the
//! leak/threshold/reset cycle is visible at a glance.
//!
//! ```text
//! cargo run --example lif_dynamics
//! ```

use sghormer::neurons::{Neuron, NeuronConfig, NeuronKind};
use sghormer::{Tape, Tensor};

fn main() {
    // A pulse train: strong drive for a few steps, then silence, then a
    // weak tail that only the integrator accumulates past threshold.
    let current = [0.6, 0.6, 0.6, 0.0, 0.0, 0.3, 0.3, 0.3, 0.3, 0.3];
    let tape = Tape::no_grad();

    for kind in [NeuronKind::If, NeuronKind::Lif, NeuronKind::Plif] {
        let cfg = NeuronConfig { kind, beta: 0.5, v_th: 1.0, v_reset: 0.0, surrogate_width: 2.0 };
        let mut neuron = Neuron::new(cfg).unwrap();
        neuron.reset_state(&[1, 1]);

        println!("{kind:?} (β_eff = {:.2}, v_th = {}, v_reset = {})", neuron.effective_beta(), cfg.v_th, cfg.v_reset);
        println!("  step  current   membrane  spike");
        for (t, &i) in current.iter().enumerate() {
            let input = Tensor::from_vec(vec![i], &[1, 1]).unwrap();
            let spike = neuron.step(&tape, &input).unwrap();
            let v = neuron.state().membrane().unwrap().to_vec()[0];
            let mark = if spike.to_vec()[0] == 1.0 { "█" } else { "·" };
            println!("  {t:>4}  {i:>7.2}   {v:>8.4}  {mark}");
        }
        println!();
    }
}
