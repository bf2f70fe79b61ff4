//! Both optimizers over the synthetic benchmark suite.

use matforge::bench::{geomean, suite};
use matforge::dsl::compile_source;
use matforge::pipeline::{bench_one, ToolConfig};
use matforge::sim::train_params;

fn main() {
    let cfg = ToolConfig::default();
    let lib = cfg.library().unwrap();
    let params = train_params(&lib).unwrap();
    println!(
        "{:<18} {:>5} {:>8} {:>8} {:>8} {:>7} {:>9}",
        "design", "nodes", "pf1", "greedy", "blackbox", "speedup", "g/bb ms"
    );
    let mut ratios = Vec::new();
    for c in suite() {
        let dfg = compile_source(&c.source).unwrap().dfg;
        let r = bench_one(&c.name, &dfg, &params, &lib, &cfg);
        let row = &r.row;
        ratios.push(row.greedy_latency as f64 / row.blackbox_latency as f64);
        println!(
            "{:<18} {:>5} {:>8} {:>8} {:>8} {:>6.1}x {:>4.1}/{:<4.1}",
            row.name,
            row.nodes,
            row.pf1_latency,
            row.greedy_latency,
            row.blackbox_latency,
            row.greedy_speedup,
            r.timing.greedy_ms,
            r.timing.blackbox_ms
        );
    }
    println!("geomean greedy/blackbox latency: {:.3}", geomean(&ratios));
}
