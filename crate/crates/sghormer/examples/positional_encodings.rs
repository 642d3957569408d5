//! Laplacian PE and random-walk SE on two contrasting graphs.
//!
//! Computes both node encodings for a 6-node path and a 6-node clique.
//! The path's Laplacian eigenvectors vary smoothly along the chain and
//! its random-walk return probabilities depend on where a node sits;
//! the clique is perfectly symmetric, so every node encodes alike.
//!
//! ```text
//! cargo run --example positional_encodings
//! ```

use sghormer::encodings::{lap_pe_padded, laplacian_eigenvalues, rwse};
use sghormer::graph::{Graph, Label};

fn build(name: &str, n: usize, edges: Vec<(usize, usize)>) -> (String, Graph) {
    let directed: Vec<(usize, usize)> = edges.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let g = Graph {
        num_nodes: n,
        edges: directed,
        node_feats: vec![vec![0.0]; n],
        edge_feats: Vec::new(),
        label: Label::Scalar(0.0),
    };
    (name.to_string(), g)
}

fn main() {
    let n = 6;
    let path = build("path P6", n, (0..n - 1).map(|i| (i, i + 1)).collect());
    let clique = build(
        "clique K6",
        n,
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect(),
    );

    for (name, g) in [path, clique] {
        println!("{name}");
        let eig = laplacian_eigenvalues(&g);
        let shown: Vec<String> = eig.iter().map(|v| format!("{v:.3}")).collect();
        println!("  Laplacian spectrum: [{}]", shown.join(", "));

        let pe = lap_pe_padded(&g, 2);
        let se = rwse(&g, 4).unwrap();
        println!("  node   LapPE (k=2)          RWSE diag(P^1..P^4)");
        for i in 0..g.num_nodes {
            let pe_row: Vec<String> = pe[i].iter().map(|v| format!("{v:>6.3}")).collect();
            let se_row: Vec<String> = se[i].iter().map(|v| format!("{v:>5.3}")).collect();
            println!("  {i:>4}   [{}]   [{}]", pe_row.join(" "), se_row.join(" "));
        }
        println!();
    }

    println!("On the path, endpoints and midpoints get distinct encodings; on the");
    println!("clique every row repeats — the encodings expose exactly as much");
    println!("structure as the graph has.");
}
