//! Popcount attention scores on a toy spike batch.
//!
//! Runs one spiking attention layer over a hand-made two-graph batch
//! and prints the first head's integer score matrix: entry (i, j)
//! counts the query/key channels nodes i and j agree on, and pairs
//! from different graphs are hard-zero because blocks mask the product.
//!
//! ```text
//! cargo run --example binary_attention
//! ```

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sghormer::blocks::attention::{SgsaConfig, SgsaLayer};
use sghormer::neurons::{NeuronConfig, SpikeTrain};
use sghormer::{Blocks, EdgeList, Tape, Tensor};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // A low threshold keeps the untrained projection neurons firing so
    // the score matrix has something to show.
    let cfg = SgsaConfig {
        d: 8,
        heads: 2,
        neuron: NeuronConfig { v_th: 0.3, ..NeuronConfig::default() },
        ..SgsaConfig::default()
    };
    let mut layer = SgsaLayer::new(&cfg, &mut rng).unwrap();

    // Two graphs batched back to back: nodes 0..4 and 4..7.
    let blocks: Blocks = Rc::new(vec![(0, 4), (4, 7)]);
    let edges: EdgeList = Rc::new(vec![(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (4, 5), (5, 4), (5, 6), (6, 5)]);
    let n = 7;

    // A fixed binary input train (T = 2) with visible per-node patterns.
    let step = |pattern: &[u8]| {
        let data: Vec<f64> = pattern.iter().map(|&b| f64::from(b)).collect();
        Tensor::from_vec(data, &[n, cfg.d]).unwrap()
    };
    let s1 = step(&[
        1, 1, 0, 0, 1, 0, 0, 0, //
        1, 1, 0, 0, 0, 0, 0, 0, //
        0, 0, 1, 1, 0, 0, 1, 0, //
        0, 0, 1, 1, 0, 0, 0, 0, //
        1, 0, 1, 0, 1, 0, 1, 0, //
        0, 1, 0, 1, 0, 1, 0, 1, //
        1, 1, 1, 1, 0, 0, 0, 0, //
    ]);
    let s2 = step(&[
        1, 0, 0, 0, 1, 1, 0, 0, //
        1, 1, 1, 0, 0, 0, 0, 0, //
        0, 0, 0, 1, 0, 0, 1, 1, //
        0, 1, 1, 1, 0, 0, 0, 0, //
        1, 0, 1, 0, 0, 1, 1, 0, //
        0, 1, 0, 1, 1, 0, 0, 1, //
        1, 0, 1, 0, 1, 0, 1, 0, //
    ]);
    let spikes = SpikeTrain::new(vec![s1, s2]).unwrap();

    // Training-mode forward: batch statistics normalize the projection
    // pipelines, so even an untrained layer fires at a useful rate.
    let tape = Tape::no_grad();
    let out = layer.forward(&tape, &spikes, &edges, &blocks, None, true, &mut rng).unwrap();

    println!("first head, shared score matrix (popcounts over d' = {} channels):", cfg.d_head());
    let scores = &out.attn[0][0];
    print!("      ");
    for j in 0..n {
        print!("  n{j}");
    }
    println!();
    for i in 0..n {
        print!("  n{i} |");
        for j in 0..n {
            print!(" {:>3}", scores.at(i, j) as i64);
        }
        println!();
    }

    println!();
    println!("nodes 0..4 and 4..7 belong to different graphs, so their cross");
    println!("entries are exactly 0 — the block mask removes them from the");
    println!("popcount entirely, they are never computed and then discarded.");

    println!();
    println!("binary-operand sparsity that drove each step:");
    for t in 0..spikes.num_steps() {
        let rate = out.attn_driver_ones[t] as f64 / out.attn_driver_elems[t] as f64;
        println!("  step {}: {}/{} ones ({rate:.3})", t + 1, out.attn_driver_ones[t], out.attn_driver_elems[t]);
    }
    println!();
    println!("output spike train: T = {}, fire rate {:.3}", out.spikes.num_steps(), out.spikes.fire_rate());
}
