//! Fusion of a linear-time chain into one pipelined unit.

use matforge::dfg::{lt_clusters, PfAssignment};
use matforge::dsl::compile_source;
use matforge::schedule::{build_schedule, table_makespan};
use matforge::templates::TemplateLibrary;

fn main() {
    let src = "int[256] x; int[256] b; int[256] y; y = sigmoid(tanh(relu(x + b)) - b)";
    let dfg = compile_source(src).unwrap().dfg;
    let lib = TemplateLibrary::builtin();
    println!("linear-time clusters: {:?}", lt_clusters(&dfg));
    for pf in [1u32, 4, 16] {
        let epf = dfg
            .nodes()
            .map(|n| (n.id, if n.kind.is_boundary() { 1 } else { pf }))
            .collect();
        let a = PfAssignment::from_epf(&dfg, epf);
        let off = build_schedule(&dfg, &a, false, &lib).unwrap();
        let on = build_schedule(&dfg, &a, true, &lib).unwrap();
        println!(
            "pf {pf:>2}: {:>4} cycles as {} units, {:>4} cycles fused into {} units",
            table_makespan(&dfg, &a, &off, &lib),
            off.units().len(),
            table_makespan(&dfg, &a, &on, &lib),
            on.units().len()
        );
    }
}
