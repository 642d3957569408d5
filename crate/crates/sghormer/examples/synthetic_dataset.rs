//! Generating, inspecting, and round-tripping a synthetic dataset.
//!
//! Builds each of the three built-in tasks, prints size and label
//! statistics, and shows the JSONL save/load round trip that the CLI's
//! `gen-data` subcommand uses under the hood.
//!
//! ```text
//! cargo run --example synthetic_dataset
//! ```

use sghormer::graph::{load_jsonl, save_jsonl, Label};
use sghormer::synthetic::{gen_synthetic, SyntheticKind};

fn main() {
    let kinds = [SyntheticKind::DegreeRegression, SyntheticKind::TriangleCount, SyntheticKind::TwoCommunity];
    for kind in kinds {
        let graphs = gen_synthetic(kind, 50, (8, 16), 7).unwrap();
        let nodes: Vec<usize> = graphs.iter().map(|g| g.num_nodes).collect();
        let edges: Vec<usize> = graphs.iter().map(|g| g.edges.len() / 2).collect();
        println!("{kind}: {} graphs", graphs.len());
        println!("  nodes per graph: {}..{}", nodes.iter().min().unwrap(), nodes.iter().max().unwrap());
        println!("  undirected edges: {}..{}", edges.iter().min().unwrap(), edges.iter().max().unwrap());
        match &graphs[0].label {
            Label::Scalar(_) => {
                let labels: Vec<f64> = graphs.iter().map(|g| g.label.as_scalar().unwrap()).collect();
                let mean = labels.iter().sum::<f64>() / labels.len() as f64;
                let lo = labels.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                println!("  scalar labels: mean {mean:.3}, range [{lo:.3}, {hi:.3}]");
            }
            Label::Nodes(_) => {
                let ones: usize = graphs
                    .iter()
                    .map(|g| g.label.as_node_classes().unwrap().iter().filter(|&&c| c == 1).count())
                    .sum();
                let total: usize = nodes.iter().sum();
                println!("  node labels: class 1 fraction {:.3}", ones as f64 / total as f64);
            }
            Label::Class(_) => unreachable!("no built-in graph-classification generator"),
        }
        println!();
    }

    // The JSONL round trip is lossless: one graph per line, reloaded
    // graphs compare equal to the originals.
    let dir = std::env::temp_dir().join("sghormer_example_dataset");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("degree_regression.jsonl");
    let original = gen_synthetic(SyntheticKind::DegreeRegression, 10, (8, 12), 3).unwrap();
    save_jsonl(&path, &original).unwrap();
    let reloaded = load_jsonl(&path).unwrap();
    assert_eq!(original, reloaded);
    println!("JSONL round trip: wrote and reloaded {} graphs at {}", reloaded.len(), path.display());
}
