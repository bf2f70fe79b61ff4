//! Lowers a DSL program to its dataflow graph and lists the nodes.
//!
//!     cargo run --example compile -- examples/programs/sparse_tree.mfd

use std::env;
use std::fs;

use matforge::dfg::max_pf;
use matforge::dsl::compile_source;

fn main() {
    let path = env::args()
        .nth(1)
        .unwrap_or_else(|| "examples/programs/classifier.mfd".into());
    let text = fs::read_to_string(&path).expect("readable program");
    let c = match compile_source(&text) {
        Ok(c) => c,
        Err(e) => {
            let (l, col) = e.position();
            eprintln!("{path}:{l}:{col}: {e}");
            std::process::exit(1);
        }
    };
    println!(
        "{path}: {} nodes, {} edges",
        c.dfg.len(),
        c.dfg.edges().len()
    );
    for &id in c.dfg.topo_order() {
        let n = c.dfg.node(id);
        let ins: Vec<String> = c.dfg.predecessors(id).map(|p| p.to_string()).collect();
        println!(
            "  {id:>3} {:<12} {:<10} in [{}] max_pf {}{}",
            n.kind.name(),
            n.out_dim().to_string(),
            ins.join(", "),
            max_pf(n.kind, &n.dims),
            n.name
                .as_deref()
                .map(|s| format!("  ({s})"))
                .unwrap_or_default()
        );
    }
}
