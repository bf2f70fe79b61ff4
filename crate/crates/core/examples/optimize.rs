//! Greedy and blackbox PF assignment for one program under the board budget.

use matforge::dsl::compile_source;
use matforge::optimizer::{
    blackbox_optimize, greedy_optimize, BenefitMetric, BlackboxOptions, CostContext, ResourceBudget,
};
use matforge::sim::{profile_pf1, train_params};
use matforge::templates::TemplateLibrary;

fn main() {
    let src = include_str!("programs/sparse_tree.mfd");
    let dfg = compile_source(src).unwrap().dfg;
    let lib = TemplateLibrary::builtin();
    let params = train_params(&lib).unwrap();
    let prof = profile_pf1(&dfg, &lib, 0).unwrap();
    let ctx = CostContext::new(&dfg, &params, &prof, &lib);
    let budget = ResourceBudget::ARTY;

    let g = greedy_optimize(&ctx, budget, BenefitMetric::LatencyPerLut).unwrap();
    println!(
        "greedy: {} cycles estimated, {} after {} moves",
        g.est_latency, g.usage, g.iterations
    );
    for e in &g.log {
        let n = e.node.unwrap();
        println!(
            "  {:>2}: {} {} -> pf {:<3} est {:>5}  {}",
            e.iteration,
            n,
            dfg.node(n).kind.name(),
            e.pf,
            e.est_latency,
            e.usage
        );
    }

    let b = blackbox_optimize(&ctx, budget, &BlackboxOptions::default()).unwrap();
    println!("blackbox: {} cycles estimated, {}", b.est_latency, b.usage);
    println!("\nnode         greedy blackbox");
    for n in dfg.compute_nodes() {
        println!(
            "{:>3} {:<10} {:>5} {:>8}",
            n.id,
            n.kind.name(),
            g.assignment.pf(n.id),
            b.assignment.pf(n.id)
        );
    }
}
