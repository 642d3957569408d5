//! The arctangent surrogate gradient behind every spike.
//!
//! The Heaviside spike has no useful derivative, so the backward pass
//! differentiates a smoothed step instead. This example tabulates the
//! smoothed step and its closed-form slope across the threshold, then
//! shows that a gradient taped through a real spike matches it.
//!
//! ```text
//! cargo run --example surrogate_grad
//! ```

use sghormer::{arctan_surrogate, arctan_surrogate_deriv, Tape, Tensor};

fn main() {
    let alpha = 2.0;
    let v_th = 1.0;

    println!("arctan surrogate around v_th = {v_th} (width α = {alpha})");
    println!("  v − v_th   S̃(v−v_th)   S̃'(v−v_th)   hard spike");
    for i in -4..=4 {
        let x = i as f64 * 0.5;
        let smooth = arctan_surrogate(x, alpha);
        let slope = arctan_surrogate_deriv(x, alpha);
        let hard = if x >= 0.0 { 1 } else { 0 };
        println!("  {x:>8.2}   {smooth:>9.4}   {slope:>10.4}   {hard}");
    }

    // The same derivative drives the taped backward pass: a loss of
    // Σ cᵢ·S(vᵢ) puts cᵢ·S̃'(vᵢ − v_th) on each membrane value.
    let v = Tensor::param(vec![0.2, 0.9, 1.0, 1.4], &[4]).unwrap();
    let c = Tensor::from_vec(vec![1.0, 1.0, 1.0, 1.0], &[4]).unwrap();
    let tape = Tape::new();
    let spikes = tape.spike_threshold(&v, v_th, alpha);
    let loss = tape.sum(&tape.mul(&spikes, &c).unwrap());
    tape.backward(&loss).unwrap();

    println!();
    println!("taped gradient through a hard spike vs the closed form:");
    println!("  v       spike   ∂loss/∂v   closed form");
    let grad = v.grad().unwrap();
    for (i, &vi) in v.to_vec().iter().enumerate() {
        let expected = arctan_surrogate_deriv(vi - v_th, alpha);
        println!("  {vi:>5.2}   {:>5}   {:>8.4}   {expected:>11.4}", spikes.to_vec()[i], grad[i]);
    }
}
