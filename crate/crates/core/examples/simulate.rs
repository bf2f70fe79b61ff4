//! Runs a design cycle by cycle at PF 1 and at a hand-picked assignment,
//! and checks both against the untimed reference interpreter.

use matforge::dfg::{OpKind, PfAssignment};
use matforge::dsl::compile_source;
use matforge::schedule::build_schedule;
use matforge::sim::{random_inputs, reference_eval, run};
use matforge::templates::TemplateLibrary;

fn main() {
    let dfg = compile_source(include_str!("programs/classifier.mfd"))
        .unwrap()
        .dfg;
    let lib = TemplateLibrary::builtin();
    let inputs = random_inputs(&dfg, 7);
    let reference = reference_eval(&dfg, &inputs).unwrap();

    let wide = {
        let epf = dfg
            .nodes()
            .map(|n| (n.id, if n.kind == OpKind::MatMul { 8 } else { 1 }))
            .collect();
        PfAssignment::from_epf(&dfg, epf)
    };
    for (label, a) in [("pf 1", PfAssignment::uniform(&dfg)), ("matmul pf 8", wide)] {
        let sched = build_schedule(&dfg, &a, false, &lib).unwrap();
        let r = run(&dfg, &a, &sched, &inputs, &lib).unwrap();
        println!(
            "{label}: {} cycles, matches reference: {}",
            r.total_cycles,
            r.outputs == reference
        );
        for (id, iv) in &r.nodes {
            let n = dfg.node(*id);
            if n.kind.is_boundary() {
                continue;
            }
            println!(
                "  {id:>3} {:<8} pf {:<2} [{:>4}, {:>4})",
                n.kind.name(),
                a.pf(*id),
                iv.start,
                iv.end
            );
        }
    }
    for (name, v) in &reference {
        println!("{name} = {:?}", v.data);
    }
}
